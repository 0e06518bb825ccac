//! One-factor-at-a-time ablation of readout, relation typing and geometry on
//! a small synthetic corpus, scored on the training set after a fixed budget.
//!
//! `cargo run --release --example ablation -- [steps]`

use hemenet::cli::ablation_variants;
use hemenet::datasets::{generate_synthetic, SyntheticConfig};
use hemenet::model::{HeMeNet, ModelConfig};
use hemenet::train::{dataset_loss, evaluate, fit, prepare_samples, TrainConfig};
use hemenet::{LabelDims, TaskId};
use numcore::OptimizerConfig;

fn main() -> hemenet::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let dims = LabelDims::uniform(4);
    let samples = generate_synthetic(&SyntheticConfig {
        n_samples: 12,
        max_residues: 8,
        dims,
        ..Default::default()
    })?;
    let base = ModelConfig::tiny(16, 2, dims);
    let factors = ["readout".to_string(), "relations".into(), "geometry".into()];
    for (name, config) in ablation_variants(&base, &factors)? {
        let mut model = HeMeNet::<f64>::new(config, 0)?;
        let data = prepare_samples(&model, &samples, &TaskId::ALL)?;
        let cfg = TrainConfig {
            epochs: steps,
            batch_size: 6,
            optimizer: OptimizerConfig::adam(3e-3),
            max_steps: Some(steps),
            ..Default::default()
        };
        fit(&mut model, &data, &[], &cfg, 0, |_, _| Ok(()))?;
        let loss = dataset_loss(&model, &data, &cfg.weights)?;
        let score = evaluate(&model, &data)?.selection_score().unwrap_or(f64::NAN);
        println!("{name:<26} params {:>7}  loss {loss:>9.4}  score {score:.4}", model.store.entries().iter().map(|e| e.value.numel()).sum::<usize>());
    }
    Ok(())
}
