//! Finite-difference checks of every differentiable tape operation.

use std::sync::Arc;

use numcore::{grad_check, GradCheckConfig, NumError, ParamId, ParamStore, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn store_of(rng: &mut ChaCha8Rng, shapes: &[&[usize]]) -> (ParamStore<f64>, Vec<ParamId>) {
    let mut store = ParamStore::new();
    let ids = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| store.insert(format!("p{i}"), random(rng, s)).unwrap())
        .collect();
    (store, ids)
}

/// Contracts an arbitrary output with fixed random weights so every output
/// entry contributes a distinct amount to the scalar.
fn contract(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var, NumError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = random(&mut rng, tape.shape(y));
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

fn check<F>(seed: u64, shapes: &[&[usize]], f: F)
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, NumError>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (store, ids) = store_of(&mut rng, shapes);
    let report = grad_check(
        |tape: &mut Tape<f64>, s: &ParamStore<f64>| {
            let vars: Vec<Var> = ids.iter().map(|&id| tape.param(s, id)).collect();
            let y = f(tape, &vars)?;
            contract(tape, y, seed)
        },
        &store,
        &GradCheckConfig {
            tol: 1e-6,
            ..GradCheckConfig::default()
        },
    )
    .unwrap();
    assert!(report.passed, "{report}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn broadcast_arithmetic(seed in any::<u64>(), m in 1usize..4, n in 1usize..4) {
        check(seed, &[&[m, n], &[n]], |t, v| {
            let a = t.add(v[0], v[1])?;
            let b = t.mul(a, v[0])?;
            let c = t.sub(b, v[1])?;
            t.scale(c, 0.7)
        });
        check(seed, &[&[m, n], &[m, 1]], |t, v| {
            let d = t.mul(v[1], v[1])?;
            let d = t.add_scalar(d, 1.0)?;
            t.div(v[0], d)
        });
    }

    #[test]
    fn matmul_and_bmm(seed in any::<u64>(), b in 1usize..3, m in 1usize..4, k in 1usize..4, n in 1usize..4) {
        check(seed, &[&[m, k], &[k, n]], |t, v| t.matmul(v[0], v[1]));
        check(seed, &[&[b, m, k], &[b, k, n]], |t, v| t.bmm(v[0], v[1]));
        check(seed, &[&[b, m, k]], |t, v| t.transpose_last(v[0]));
    }

    #[test]
    fn structural(seed in any::<u64>(), m in 2usize..5, n in 1usize..4) {
        check(seed, &[&[m, n], &[m, 2]], |t, v| t.concat(&[v[0], v[1], v[0]], 1));
        check(seed, &[&[m, n], &[1, n]], |t, v| t.concat(&[v[0], v[1]], 0));
        check(seed, &[&[m, n + 1]], |t, v| t.narrow(v[0], 1, 1, n));
        check(seed, &[&[m, n]], |t, v| {
            let idx: Vec<usize> = (0..2 * m).map(|i| (i * 7) % m).collect();
            t.index_select(v[0], idx)
        });
        check(seed, &[&[m, n]], |t, v| {
            let idx: Vec<usize> = (0..m).map(|i| (i * 3) % 2).collect();
            t.index_add(v[0], idx, 3)
        });
        check(seed, &[&[m, n]], |t, v| t.reshape(v[0], [n, m]));
    }

    #[test]
    fn reductions(seed in any::<u64>(), m in 1usize..4, n in 1usize..4, k in 1usize..3) {
        check(seed, &[&[m, n, k]], |t, v| t.sum_axis(v[0], 1, false));
        check(seed, &[&[m, n, k]], |t, v| t.mean_axis(v[0], 0, true));
        check(seed, &[&[m, n]], |t, v| t.mean(v[0]));
        check(seed, &[&[m, n]], |t, v| t.softmax(v[0]));
        let mask: Vec<f64> = (0..m * n).map(|i| if i % n == 0 || i % 3 == 1 { 1.0 } else { 0.0 }).collect();
        let mask = Tensor::new(vec![m, n], mask).unwrap();
        check(seed, &[&[m, n]], move |t, v| t.masked_mean_axis(v[0], &mask, 1));
    }

    #[test]
    fn activations(seed in any::<u64>(), n in 1usize..6) {
        check(seed, &[&[n]], |t, v| t.sigmoid(v[0]));
        check(seed, &[&[n]], |t, v| t.silu(v[0]));
        // keep relu inputs away from the kink
        check(seed, &[&[n]], |t, v| {
            let s = t.mul(v[0], v[0])?;
            let s = t.add_scalar(s, 0.1)?;
            let neg = t.scale(s, -1.0)?;
            let cat = t.concat(&[s, neg], 0)?;
            t.relu(cat)
        });
    }

    #[test]
    fn normalization(seed in any::<u64>(), m in 2usize..5, n in 2usize..5) {
        check(seed, &[&[m, n], &[n], &[n]], |t, v| t.layer_norm(v[0], v[1], v[2], 1e-5));
        check(seed, &[&[m, n], &[n], &[n]], |t, v| Ok(t.batch_norm(v[0], v[1], v[2], 1e-5)?.0));
    }

    #[test]
    fn norms_and_loss(seed in any::<u64>(), m in 1usize..4, n in 1usize..4) {
        check(seed, &[&[m, n]], |t, v| t.l2_norm_last(v[0]));
        check(seed, &[&[m, n]], |t, v| t.frobenius_norm(v[0]));
        let targets = Tensor::new(vec![m, n], (0..m * n).map(|i| (i % 2) as f64).collect()).unwrap();
        check(seed, &[&[m, n]], move |t, v| t.bce_with_logits(v[0], &targets));
    }

    #[test]
    fn channel_geometry(seed in any::<u64>(), nodes in 2usize..4, c in 1usize..5) {
        let mask: Vec<bool> = (0..nodes * c).map(|i| i % c == 0 || (i * 5) % 3 != 0).collect();
        let mask = Arc::new(mask);
        let src: Vec<usize> = (0..nodes).map(|i| (i + 1) % nodes).chain([0]).collect();
        let dst: Vec<usize> = (0..nodes).chain([nodes - 1]).collect();
        check(seed, &[&[nodes, c, 3]], move |t, v| {
            t.channel_distances(v[0], Arc::clone(&mask), src.clone(), dst.clone())
        });
        let counts: Vec<usize> = (0..3).map(|e| 1 + (e * 2) % c).collect();
        check(seed, &[&[3, c]], move |t, v| t.sliding_channel_mean(v[0], counts.clone()));
    }

    #[test]
    fn softmax_rows_sum_to_one(seed in any::<u64>(), m in 1usize..5, n in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tape::<f64>::inference();
        let x = t.constant(random(&mut rng, &[m, n]).map(|v| v * 30.0));
        let s = t.softmax(x).unwrap();
        for row in t.value(s).data().chunks(n) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
        }
    }
}

#[test]
fn masked_entries_receive_no_gradient() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::from_f64([2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let mask = Tensor::from_f64([2, 3], &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
    let m = t.masked_mean_axis(x, &mask, 1).unwrap();
    assert_eq!(t.value(m).to_f64_vec(), vec![2.0, 5.0]);
    let s = t.sum(m).unwrap();
    let g = t.backward(s).unwrap().wrt(&t, x).to_f64_vec();
    assert_eq!(g, vec![0.5, 0.0, 0.5, 0.0, 1.0, 0.0]);
}

#[test]
fn masked_channels_have_zero_distance_and_gradient() {
    let mut t = Tape::<f64>::new();
    let coords: Vec<f64> = (0..12).map(|i| i as f64 * 0.37).collect();
    let x = t.leaf(Tensor::new([2, 2, 3], coords).unwrap());
    let mask = Arc::new(vec![true, false, true, true]);
    let d = t.channel_distances(x, mask, vec![0usize], vec![1usize]).unwrap();
    let vals = t.value(d).to_f64_vec();
    // [p, q] with q the src channel: src channel 1 is masked
    assert_eq!(vals[1], 0.0);
    assert_eq!(vals[3], 0.0);
    let s = t.sum(d).unwrap();
    let g = t.backward(s).unwrap().wrt(&t, x).to_f64_vec();
    assert!(g[3..6].iter().all(|&v| v == 0.0));
}

#[test]
fn coincident_points_have_zero_distance_gradient() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::from_f64([2, 1, 3], &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]).unwrap());
    let d = t
        .channel_distances(x, Arc::new(vec![true, true]), vec![0usize], vec![1usize])
        .unwrap();
    let s = t.sum(d).unwrap();
    let g = t.backward(s).unwrap().wrt(&t, x).to_f64_vec();
    assert!(g.iter().all(|v| v.is_finite() && *v == 0.0));
}

#[test]
fn sliding_mean_window_law() {
    let mut t = Tape::<f64>::inference();
    let x = t.constant(Tensor::from_f64([1, 4], &[1.0, 2.0, 3.0, 4.0]).unwrap());
    let y = t.sliding_channel_mean(x, vec![2usize]).unwrap();
    assert_eq!(t.value(y).to_f64_vec(), vec![2.0, 3.0, 0.0, 0.0]);
    let y = t.sliding_channel_mean(x, vec![4usize]).unwrap();
    assert_eq!(t.value(y).to_f64_vec(), vec![1.0, 2.0, 3.0, 4.0]);
    let y = t.sliding_channel_mean(x, vec![1usize]).unwrap();
    assert_eq!(t.value(y).to_f64_vec(), vec![2.5, 0.0, 0.0, 0.0]);
}

#[test]
fn non_finite_outputs_are_reported() {
    let mut t = Tape::<f64>::new();
    let a = t.leaf(Tensor::from_f64([1], &[1.0]).unwrap());
    let z = t.constant(Tensor::from_f64([1], &[0.0]).unwrap());
    assert!(matches!(t.div(a, z), Err(NumError::NonFinite { op: "div" })));
}

#[test]
fn batch_norm_reports_biased_statistics() {
    let mut t = Tape::<f64>::inference();
    let x = t.constant(Tensor::from_f64([4, 1], &[1.0, 2.0, 3.0, 6.0]).unwrap());
    let g = t.constant(Tensor::ones([1]).unwrap());
    let b = t.constant(Tensor::zeros([1]).unwrap());
    let (_, mean, var) = t.batch_norm(x, g, b, 1e-5).unwrap();
    assert_eq!(mean, vec![3.0]);
    assert_eq!(var, vec![3.5]);
}
