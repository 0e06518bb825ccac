//! Writes a synthetic complex as PDB, parses it back and compares.
//!
//! `cargo run --example pdb_roundtrip -- [residues] [ligand_atoms]`

use hemenet::datasets::random_complex;
use hemenet::structio::{parse_pdb_subset, write_pdb};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> hemenet::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|s| s.parse().ok()).collect();
    let residues = args.first().copied().unwrap_or(10);
    let ligand = args.get(1).copied().unwrap_or(5);
    let record = random_complex("demo", residues, ligand, &mut ChaCha8Rng::seed_from_u64(0))?;
    let text = write_pdb(&record);
    println!("{}", text.lines().take(4).collect::<Vec<_>>().join("\n"));
    println!("... {} lines", text.lines().count());

    let parsed = parse_pdb_subset(&text, "demo")?;
    for w in &parsed.warnings {
        println!("warning: {w}");
    }
    let back = parsed.record;
    println!(
        "chains {}  residues {}  heavy atoms {}  ligand atoms {}",
        back.chains.len(),
        back.residue_count(),
        back.atom_count(),
        back.ligand_atoms.len()
    );
    let drift = record
        .chains
        .iter()
        .zip(&back.chains)
        .flat_map(|(a, b)| a.residues.iter().zip(&b.residues))
        .flat_map(|(a, b)| a.atoms.iter().zip(&b.atoms))
        .flat_map(|(a, b)| (0..3).map(move |k| (a.xyz[k] - b.xyz[k]).abs()))
        .fold(0.0f64, f64::max);
    println!("max coordinate drift {drift:.1e} Å (PDB keeps three decimals)");
    Ok(())
}
