//! Shows where each task's prompts attend inside one complex, and that the
//! attention is unchanged by a rigid motion.
//!
//! `cargo run --example readout_attention`

use hemenet::datasets::random_complex;
use hemenet::model::{HeMeNet, ModelConfig};
use hemenet::verify::RigidMotion;
use hemenet::{LabelDims, TaskId};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> hemenet::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = HeMeNet::<f64>::new(ModelConfig::tiny(16, 2, LabelDims::uniform(4)), 2)?;
    let record = random_complex("demo", 8, 4, &mut rng)?;
    let graph = model.graph(&record)?;
    let inputs = model.inputs(&graph);
    let moved = model.inputs(&graph.map_coords(|p| RigidMotion::random(&mut ChaCha8Rng::seed_from_u64(9), true).apply(p)));
    let scope = inputs.all_nodes();
    for task in TaskId::ALL {
        let heads = model.attention_weights(&inputs, &scope, task)?;
        let again = model.attention_weights(&moved, &scope, task)?;
        let shift = heads
            .iter()
            .flatten()
            .zip(again.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        for (h, w) in heads.iter().enumerate() {
            let top = w.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap_or(0);
            let row: Vec<String> = w.iter().map(|v| format!("{v:.2}")).collect();
            println!("{task} head {h}: top node {top:2}  [{}]", row.join(" "));
        }
        println!("{task}: max change under a reflection {shift:.1e}");
    }
    Ok(())
}
