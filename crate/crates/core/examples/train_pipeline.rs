//! Synthetic corpus → leakage-free split → multi-task training → test report.
//!
//! `cargo run --release --example train_pipeline -- [samples] [epochs]`

use hemenet::datasets::{assemble_splits, generate_synthetic, parse_cluster_table, synthetic_tables, Split, SplitFractions, SyntheticConfig};
use hemenet::model::{HeMeNet, ModelConfig};
use hemenet::train::{evaluate, fit, prepare_samples, TrainConfig};
use hemenet::{LabelDims, TaskId};
use numcore::OptimizerConfig;

fn main() -> hemenet::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|s| s.parse().ok()).collect();
    let n = args.first().copied().unwrap_or(40);
    let epochs = args.get(1).copied().unwrap_or(10);
    let dims = LabelDims::uniform(6);
    let syn = SyntheticConfig {
        n_samples: n,
        max_residues: 10,
        dims,
        cluster_fraction: 1.0,
        ..Default::default()
    };
    let samples = generate_synthetic(&syn)?;
    let tables = synthetic_tables(&samples, syn.cluster_fraction, syn.seed);
    let clusters = parse_cluster_table(&tables.clusters, "clusters")?;
    let split = assemble_splits(&samples, &clusters, SplitFractions { train: 0.5, val: 0.25 }, 0)?;
    let part = |s: Split| -> Vec<_> {
        samples
            .iter()
            .filter(|x| split.assignment.get(&x.record.complex_id) == Some(&s))
            .cloned()
            .collect()
    };
    let mut model = HeMeNet::<f32>::new(ModelConfig::tiny(16, 2, dims), 0)?;
    let train = prepare_samples(&model, &part(Split::Train), &TaskId::ALL)?;
    let val = prepare_samples(&model, &part(Split::Val), &TaskId::ALL)?;
    let test = prepare_samples(&model, &part(Split::Test), &TaskId::ALL)?;
    println!("train {}  val {}  test {}", train.len(), val.len(), test.len());
    let cfg = TrainConfig {
        epochs,
        batch_size: 4,
        optimizer: OptimizerConfig::adam(3e-3),
        ..Default::default()
    };
    let mut best = None;
    fit(&mut model, &train, &val, &cfg, 0, |m, s| {
        println!(
            "epoch {:2}  loss {:.4}  val score {}",
            s.stats.epoch,
            s.stats.mean_loss,
            s.val_score.map_or("-".into(), |v| format!("{v:.4}"))
        );
        if s.is_best {
            best = Some(m.clone());
        }
        Ok(())
    })?;
    let best = best.unwrap_or(model);
    print!("test {}", evaluate(&best, &test)?.to_json());
    Ok(())
}
