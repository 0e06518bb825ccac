//! Runs the invariance and equivariance suite on a freshly initialised model
//! and on one whose coordinate update leaks absolute positions.
//!
//! `cargo run --release --example equivariance_check -- [graphs] [motions]`

use hemenet::model::{HeMeNet, ModelConfig};
use hemenet::verify::{check_equivariance, EquivarianceConfig};
use hemenet::LabelDims;

fn main() -> hemenet::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|s| s.parse().ok()).collect();
    let cfg = EquivarianceConfig {
        graphs: args.first().copied().unwrap_or(20),
        motions: args.get(1).copied().unwrap_or(5),
        ..Default::default()
    };
    let model = HeMeNet::<f64>::new(ModelConfig::tiny(16, 3, LabelDims::uniform(8)), 0)?;
    println!("== equivariant model");
    print!("{}", check_equivariance(&model, &cfg)?);

    let mut leaky = model.clone();
    leaky.config.coord_leak = 0.1;
    println!("== coordinate leak 0.1");
    print!("{}", check_equivariance(&leaky, &cfg)?);
    Ok(())
}
