//! Trains briefly and prints the Pearson correlation between task prompts.
//!
//! `cargo run --release --example prompt_correlation -- [steps]`

use hemenet::cli::correlation_csv;
use hemenet::datasets::{generate_synthetic, SyntheticConfig};
use hemenet::model::{HeMeNet, ModelConfig};
use hemenet::train::{fit, prepare_samples, TrainConfig};
use hemenet::{LabelDims, TaskId};
use numcore::OptimizerConfig;

fn main() -> hemenet::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(50);
    let dims = LabelDims::uniform(4);
    let samples = generate_synthetic(&SyntheticConfig {
        n_samples: 16,
        max_residues: 8,
        dims,
        ..Default::default()
    })?;
    let mut model = HeMeNet::<f64>::new(ModelConfig::tiny(16, 2, dims), 0)?;
    println!("at initialisation");
    print!("{}", correlation_csv(&model.prompt_correlation()?));
    let data = prepare_samples(&model, &samples, &TaskId::ALL)?;
    let cfg = TrainConfig {
        epochs: steps,
        batch_size: 8,
        optimizer: OptimizerConfig::adam(3e-3),
        max_steps: Some(steps),
        ..Default::default()
    };
    fit(&mut model, &data, &[], &cfg, 0, |_, _| Ok(()))?;
    println!("after {steps} steps");
    print!("{}", correlation_csv(&model.prompt_correlation()?));
    Ok(())
}
