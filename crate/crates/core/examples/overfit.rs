//! Overfits a tiny model to eight synthetic multi-task complexes.
//!
//! `cargo run --release --example overfit -- [steps] [lr] [hidden]`

use hemenet::datasets::{generate_synthetic, SyntheticConfig};
use hemenet::model::{HeMeNet, ModelConfig, NormKind};
use hemenet::train::{dataset_loss, evaluate, fit, prepare_samples, TrainConfig};
use hemenet::{LabelDims, TaskId};
use numcore::OptimizerConfig;

fn main() -> hemenet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let steps: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(2000);
    let lr: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(3e-3);
    let hidden: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(16);

    let dims = LabelDims::uniform(4);
    let samples = generate_synthetic(&SyntheticConfig {
        n_samples: 8,
        max_residues: 8,
        dims,
        ..Default::default()
    })?;
    let config = ModelConfig {
        norm: NormKind::Layer,
        ..ModelConfig::tiny(hidden, 2, dims)
    };
    let mut model = HeMeNet::<f64>::new(config, 0)?;
    let data = prepare_samples(&model, &samples, &TaskId::ALL)?;
    let cfg = TrainConfig {
        epochs: steps,
        batch_size: data.len(),
        optimizer: OptimizerConfig::adam(lr),
        max_steps: Some(steps),
        ..Default::default()
    };
    let initial = dataset_loss(&model, &data, &cfg.weights)?;
    let start = std::time::Instant::now();
    fit(&mut model, &data, &[], &cfg, 0, |_, s| {
        if s.stats.epoch % 200 == 0 {
            println!("step {:5}  loss {:.6}", s.stats.epoch, s.stats.mean_loss);
        }
        Ok(())
    })?;
    let last = dataset_loss(&model, &data, &cfg.weights)?;
    println!("initial loss {initial:.6}  final loss {last:.6}  ratio {:.4}", last / initial);
    let report = evaluate(&model, &data)?;
    for (task, m) in &report.tasks {
        match (m.rmse, m.fmax) {
            (Some(r), _) => println!("{task}: mse {:.3e} over {}", r * r, m.count),
            (_, Some(f)) => println!("{task}: fmax {f:.3} over {} chains", m.count),
            _ => {}
        }
    }
    println!("{:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
