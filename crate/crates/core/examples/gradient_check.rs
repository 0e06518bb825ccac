//! Compares reverse-mode gradients of the full multi-task loss against
//! central finite differences for every parameter tensor.
//!
//! `cargo run --release --example gradient_check -- [hidden] [layers]`

use hemenet::datasets::{generate_synthetic, SyntheticConfig};
use hemenet::model::{HeMeNet, Mode, ModelConfig};
use hemenet::train::{multitask_loss, LossWeights};
use hemenet::{LabelDims, TaskId};
use numcore::{grad_check, GradCheckConfig, ParamStore, Tape, Var};

fn main() -> hemenet::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|s| s.parse().ok()).collect();
    let dims = LabelDims::uniform(3);
    let config = ModelConfig::tiny(args.first().copied().unwrap_or(8), args.get(1).copied().unwrap_or(2), dims);
    let model = HeMeNet::<f64>::new(config.clone(), 0)?;
    let sample = generate_synthetic(&SyntheticConfig {
        n_samples: 1,
        max_residues: 4,
        full_fraction: 1.0,
        dims,
        ..Default::default()
    })?
    .remove(0);
    let inputs = model.prepare(&sample.record)?;
    let weights = LossWeights::default();
    let loss = |tape: &mut Tape<f64>, store: &ParamStore<f64>| -> hemenet::Result<Var> {
        let m = HeMeNet::from_store(config.clone(), store.clone())?;
        let out = m.forward(tape, &inputs, &TaskId::ALL, |_, _| true, Mode::Train)?;
        Ok(multitask_loss(tape, &out, &sample.labels, &weights)?.total)
    };
    print!("{}", grad_check(loss, &model.store, &GradCheckConfig::default())?);
    Ok(())
}
