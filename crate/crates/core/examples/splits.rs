//! Assigns a synthetic corpus to train/val/test and shows why each partially
//! labelled complex landed where it did.
//!
//! `cargo run --example splits -- [samples] [cluster_fraction]`

use hemenet::datasets::{assemble_splits, generate_synthetic, is_fully_labeled, parse_cluster_table, synthetic_tables, Split, SplitFractions, SyntheticConfig};

fn main() -> hemenet::Result<()> {
    let mut args = std::env::args().skip(1);
    let n = args.next().and_then(|s| s.parse().ok()).unwrap_or(24);
    let cluster_fraction = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.7);
    let syn = SyntheticConfig {
        n_samples: n,
        cluster_fraction,
        ..Default::default()
    };
    let samples = generate_synthetic(&syn)?;
    let tables = synthetic_tables(&samples, cluster_fraction, syn.seed);
    let clusters = parse_cluster_table(&tables.clusters, "clusters")?;
    let split = assemble_splits(&samples, &clusters, SplitFractions { train: 0.4, val: 0.3 }, 0)?;
    split.check_leakage()?;
    for s in &samples {
        let id = &s.record.complex_id;
        let p = &split.provenance.samples[id];
        let full = is_fully_labeled(&s.labels, s.record.chains.iter().map(|c| c.chain_id.as_str()));
        println!(
            "{id}  {:<7} group {:<8} {:<6} {}",
            if full { "full" } else { "partial" },
            p.group,
            p.split.map_or("-", Split::name),
            p.note.as_deref().unwrap_or("")
        );
    }
    println!(
        "train {}  val {}  test {}  excluded {}",
        split.count(Split::Train),
        split.count(Split::Val),
        split.count(Split::Test),
        samples.len() - split.assignment.len()
    );
    Ok(())
}
