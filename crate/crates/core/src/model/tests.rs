use numcore::Tensor;

use super::*;
use crate::datasets::{generate_synthetic, SyntheticConfig};
use crate::structio::MAX_CHANNELS;
use crate::tasks::LabelDims;

fn tiny(readout: ReadoutKind) -> ModelConfig {
    ModelConfig {
        readout,
        ..ModelConfig::tiny(8, 2, LabelDims::uniform(3))
    }
}

fn sample_inputs(model: &HeMeNet<f64>, seed: u64) -> (GraphInputs, ComplexRecord) {
    let cfg = SyntheticConfig {
        n_samples: 2,
        max_residues: 5,
        seed,
        dims: LabelDims::uniform(3),
        ..Default::default()
    };
    let rec = generate_synthetic(&cfg).unwrap().remove(0).record;
    (model.prepare(&rec).unwrap(), rec)
}

fn pooled(model: &HeMeNet<f64>, h: &[f64], rows: usize, scope: &[usize], task: TaskId) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut tape = Tape::new();
    let width = model.config.readout_dim();
    let hv = tape.leaf(Tensor::new([rows, width], h.to_vec()).unwrap());
    let p = readout(&model.config, &model.store, &model.ids, &mut tape, hv, scope, task).unwrap();
    let alpha = p.attention.iter().map(|&a| tape.value(a).to_vec()).collect();
    (tape.value(p.feature).to_vec(), alpha)
}

fn random_rows(rows: usize, width: usize, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..rows * width).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

#[test]
fn singleton_scope_attends_fully() {
    let model = HeMeNet::<f64>::new(tiny(ReadoutKind::TaskAware), 1).unwrap();
    let h = random_rows(3, 16, 2);
    let (_, alpha) = pooled(&model, &h, 3, &[1], TaskId::Ec);
    assert_eq!(alpha.len(), 2);
    assert!(alpha.iter().all(|a| a == &vec![1.0]));
}

#[test]
fn identical_rows_attend_uniformly() {
    let model = HeMeNet::<f64>::new(tiny(ReadoutKind::TaskAware), 1).unwrap();
    let row = random_rows(1, 16, 3);
    let h: Vec<f64> = row.iter().cycle().take(4 * 16).copied().collect();
    let (_, alpha) = pooled(&model, &h, 4, &[0, 1, 2, 3], TaskId::Lba);
    for a in alpha.iter().flatten() {
        assert!((a - 0.25).abs() < 1e-15);
    }
}

#[test]
fn permuting_scope_permutes_attention() {
    let model = HeMeNet::<f64>::new(tiny(ReadoutKind::TaskAware), 4).unwrap();
    let h = random_rows(5, 16, 5);
    let (f1, a1) = pooled(&model, &h, 5, &[0, 2, 4], TaskId::Mf);
    let (f2, a2) = pooled(&model, &h, 5, &[4, 0, 2], TaskId::Mf);
    for (x, y) in f1.iter().zip(&f2) {
        assert!((x - y).abs() < 1e-12);
    }
    for (p, q) in a1.iter().zip(&a2) {
        assert!((p[0] - q[1]).abs() < 1e-15 && (p[1] - q[2]).abs() < 1e-15 && (p[2] - q[0]).abs() < 1e-15);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn baseline_readouts() {
    let model = HeMeNet::<f64>::new(tiny(ReadoutKind::Sum), 1).unwrap();
    let h = random_rows(3, 16, 6);
    let (single, _) = pooled(&model, &h, 3, &[2], TaskId::Lba);
    assert_eq!(single, h[32..48].to_vec());
    let (sum, _) = pooled(&model, &h, 3, &[0, 1, 2], TaskId::Lba);
    let doubled: Vec<f64> = h.iter().map(|v| 2.0 * v).collect();
    let (sum2, _) = pooled(&model, &doubled, 3, &[0, 1, 2], TaskId::Lba);
    for (a, b) in sum.iter().zip(&sum2) {
        assert!((2.0 * a - b).abs() < 1e-14);
    }

    let mut wp = HeMeNet::<f64>::new(tiny(ReadoutKind::WeightedPrompt), 1).unwrap();
    let q = wp.ids.readout.queries.unwrap();
    wp.store.set_value(q, Tensor::ones([6, 16]).unwrap()).unwrap();
    let (prompted, _) = pooled(&wp, &h, 3, &[0, 1, 2], TaskId::Cc);
    assert_eq!(prompted, sum);
}

#[test]
fn empty_scope_is_an_error() {
    let model = HeMeNet::<f64>::new(tiny(ReadoutKind::TaskAware), 1).unwrap();
    let mut tape = Tape::new();
    let hv = tape.leaf(Tensor::zeros([2, 16]).unwrap());
    assert!(readout(&model.config, &model.store, &model.ids, &mut tape, hv, &[], TaskId::Ec).is_err());
}

#[test]
fn prediction_scopes() {
    let model = HeMeNet::<f64>::new(tiny(ReadoutKind::TaskAware), 2).unwrap();
    let (inputs, rec) = sample_inputs(&model, 0);
    assert_eq!(rec.chains.len(), 1);
    let b = model.predict(&inputs, &TaskId::PROPERTY).unwrap();
    assert_eq!(b.lba, None);
    assert_eq!(b.chains["A"].len(), 4);
    assert!(b.chains["A"].values().flatten().all(|p| (0.0..=1.0).contains(p)));
    let b = model.predict(&inputs, &[TaskId::Lba]).unwrap();
    assert!(b.lba.is_some() && b.chains.is_empty());
}

#[test]
fn feature_width_and_single_layer() {
    let model = HeMeNet::<f64>::new(ModelConfig::tiny(8, 1, LabelDims::uniform(3)), 0).unwrap();
    let (inputs, _) = sample_inputs(&model, 1);
    let mut tape = Tape::new();
    let enc = model.encode(&mut tape, &inputs, Mode::Train).unwrap();
    assert_eq!(enc.features, enc.layer_outputs[0]);
    let model = HeMeNet::<f64>::new(ModelConfig::tiny(8, 3, LabelDims::uniform(3)), 0).unwrap();
    let mut tape = Tape::new();
    let enc = model.encode(&mut tape, &inputs, Mode::Train).unwrap();
    assert_eq!(tape.shape(enc.features), &[inputs.nodes, 24]);
}

#[test]
fn zero_coordinate_messages_leave_coordinates_fixed() {
    let mut model = HeMeNet::<f64>::new(tiny(ReadoutKind::TaskAware), 3).unwrap();
    for layer in model.ids.layers.clone() {
        for id in [layer.phi_x.w2, layer.phi_x.b2] {
            let shape = model.store.value(id).shape().to_vec();
            model.store.set_value(id, Tensor::zeros(shape).unwrap()).unwrap();
        }
    }
    let (inputs, _) = sample_inputs(&model, 2);
    let mut tape = Tape::new();
    let enc = model.encode(&mut tape, &inputs, Mode::Train).unwrap();
    assert_eq!(tape.value(enc.coords).to_vec(), inputs.coords);
}

#[test]
fn padded_channels_stay_zero_and_single_node_is_finite() {
    let model = HeMeNet::<f64>::new(tiny(ReadoutKind::TaskAware), 3).unwrap();
    let (inputs, rec) = sample_inputs(&model, 3);
    let mut tape = Tape::new();
    let enc = model.encode(&mut tape, &inputs, Mode::Train).unwrap();
    let x = tape.value(enc.coords).to_vec();
    for (k, &m) in inputs.mask.iter().enumerate() {
        if !m {
            assert_eq!(&x[k * 3..k * 3 + 3], &[0.0; 3]);
        }
    }
    let mut one = rec.clone();
    one.chains.clear();
    one.partition.clear();
    one.ligand_atoms.truncate(1);
    let inputs = model.prepare(&one).unwrap();
    assert_eq!(inputs.nodes, 1);
    let mut tape = Tape::new();
    let enc = model.encode(&mut tape, &inputs, Mode::Train).unwrap();
    assert!(tape.value(enc.features).all_finite());
    assert_eq!(tape.value(enc.coords).shape(), &[1, MAX_CHANNELS, 3]);
}

#[test]
fn prompt_correlation_cases() {
    let mut model = HeMeNet::<f64>::new(tiny(ReadoutKind::TaskAware), 7).unwrap();
    let c = model.prompt_correlation().unwrap();
    for i in 0..6 {
        assert_eq!(c[i][i], 1.0);
        for j in 0..6 {
            assert_eq!(c[i][j], c[j][i]);
        }
    }
    let id = model.ids.readout.queries.unwrap();
    let mut q = model.store.value(id).to_vec();
    let w = 16;
    let ec: Vec<f64> = q[2 * w..3 * w].to_vec();
    q[3 * w..4 * w].copy_from_slice(&ec);
    let lba: Vec<f64> = q[..w].to_vec();
    for k in 0..w {
        q[w + k] = -lba[k];
    }
    model.store.set_value(id, Tensor::new([6, w], q).unwrap()).unwrap();
    let c = model.prompt_correlation().unwrap();
    assert!((c[TaskId::Ec.index()][TaskId::Mf.index()] - 1.0).abs() < 1e-12);
    assert!((c[TaskId::Lba.index()][TaskId::Ppa.index()] + 1.0).abs() < 1e-12);
}

#[test]
fn checkpoint_round_trip_and_sidecar_check() {
    let dir = tempfile::tempdir().unwrap();
    let model = HeMeNet::<f64>::new(tiny(ReadoutKind::TaskAware), 11).unwrap();
    let (ckpt, side) = (dir.path().join("m.ckpt"), dir.path().join("m.json"));
    model.save(&ckpt, &side).unwrap();
    let back = HeMeNet::<f64>::load(&ckpt, &side, Some(&model.config)).unwrap();
    let (inputs, _) = sample_inputs(&model, 4);
    assert_eq!(
        model.predict(&inputs, &TaskId::ALL[..3]).unwrap(),
        back.predict(&inputs, &TaskId::ALL[..3]).unwrap()
    );
    let other = ModelConfig {
        layers: 3,
        ..model.config.clone()
    };
    assert!(matches!(HeMeNet::<f64>::load(&ckpt, &side, Some(&other)), Err(Error::Config(_))));
}

#[test]
fn homogeneous_relations_share_one_slot() {
    let cfg = ModelConfig {
        relations: RelationMode::Homogeneous,
        ..tiny(ReadoutKind::TaskAware)
    };
    let model = HeMeNet::<f64>::new(cfg, 0).unwrap();
    assert_eq!(model.store.value(model.ids.layers[0].relation_w).shape(), &[1, 8, 8]);
    let (inputs, _) = sample_inputs(&model, 5);
    assert!(inputs.edge_slots.iter().all(|&s| s == 0));
    model.predict(&inputs, &[TaskId::Lba]).unwrap();
}
