//! Numerical E(3) checks of the geometric operators, the encoder and the
//! readout.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datasets::random_complex;
use crate::error::{Error, Result};
use crate::geom::{message_scale, relation_extract, sliding_mean};
use crate::graph::{build_graph, HeteroGraph, RelationKind};
use crate::model::{GraphInputs, HeMeNet, Mode, PredictionBundle};
use crate::structio::MAX_CHANNELS;
use crate::tasks::TaskId;

/// `p ↦ Q p + t` with orthogonal `Q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidMotion {
    pub q: [[f64; 3]; 3],
    pub t: [f64; 3],
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

impl RigidMotion {
    /// Haar-random rotation (or improper rotation when `reflect`) and a
    /// translation with entries in `[-10, 10)`.
    pub fn random(rng: &mut impl Rng, reflect: bool) -> Self {
        let mut rows = [[0.0; 3]; 3];
        loop {
            for r in &mut rows {
                for v in r.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
            }
            // Gram-Schmidt
            let mut ok = true;
            for i in 0..3 {
                for j in 0..i {
                    let p = dot(rows[i], rows[j]);
                    for k in 0..3 {
                        rows[i][k] -= p * rows[j][k];
                    }
                }
                let n = dot(rows[i], rows[i]).sqrt();
                if n < 1e-6 {
                    ok = false;
                    break;
                }
                rows[i] = rows[i].map(|v| v / n);
            }
            if ok {
                break;
            }
        }
        let mut m = Self {
            q: rows,
            t: std::array::from_fn(|_| rng.gen_range(-10.0..10.0)),
        };
        if (m.det() < 0.0) != reflect {
            m.q[2] = m.q[2].map(|v| -v);
        }
        m
    }

    /// Diagonal `±1` matrix from the low three bits of `bits`, no translation.
    /// These act exactly in floating point.
    pub fn sign_flip(bits: u8) -> Self {
        let s = |k: u8| if bits >> k & 1 == 1 { -1.0 } else { 1.0 };
        Self {
            q: [[s(0), 0.0, 0.0], [0.0, s(1), 0.0], [0.0, 0.0, s(2)]],
            t: [0.0; 3],
        }
    }

    pub fn det(&self) -> f64 {
        let q = &self.q;
        q[0][0] * (q[1][1] * q[2][2] - q[1][2] * q[2][1]) - q[0][1] * (q[1][0] * q[2][2] - q[1][2] * q[2][0])
            + q[0][2] * (q[1][0] * q[2][1] - q[1][1] * q[2][0])
    }

    pub fn rotate(&self, p: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|i| dot(self.q[i], p))
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let r = self.rotate(p);
        std::array::from_fn(|i| r[i] + self.t[i])
    }
}

/// Worst deviation seen by one check against its tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub worst: f64,
    pub tolerance: f64,
    pub cases: usize,
}

impl Check {
    fn new(name: &str, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            worst: 0.0,
            tolerance,
            cases: 0,
        }
    }

    fn observe(&mut self, deviation: f64) {
        self.cases += 1;
        // NaN must fail
        if !(deviation <= self.worst) {
            self.worst = if deviation.is_nan() { f64::INFINITY } else { deviation };
        }
    }

    pub fn passed(&self) -> bool {
        self.worst <= self.tolerance
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: worst {:.3e} (tolerance {:.0e}, {} cases)",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.worst,
            self.tolerance,
            self.cases
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EquivarianceReport {
    pub checks: Vec<Check>,
}

impl EquivarianceReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for EquivarianceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EquivarianceConfig {
    pub graphs: usize,
    pub motions: usize,
    pub max_nodes: usize,
    pub seed: u64,
    pub tol_f64: f64,
    pub tol_f32: f64,
    pub check_f32: bool,
}

impl Default for EquivarianceConfig {
    fn default() -> Self {
        Self {
            graphs: 100,
            motions: 10,
            max_nodes: 12,
            seed: 0,
            tol_f64: 1e-10,
            tol_f32: 1e-4,
            check_f32: true,
        }
    }
}

pub const LEMMA_INVARIANCE: &str = "relation extractor invariance";
pub const LEMMA_EQUIVARIANCE: &str = "message scaler O(3) equivariance";
pub const POOLING_LENGTH: &str = "message scaler pooling length";
pub const FEATURES_F64: &str = "feature invariance f64";
pub const COORDS_F64: &str = "coordinate equivariance f64";
pub const FEATURES_F32: &str = "feature invariance f32";
pub const COORDS_F32: &str = "coordinate equivariance f32";
pub const READOUT: &str = "prediction invariance";
pub const READOUT_EXACT: &str = "prediction bitwise identity under exact poses";

fn random_points(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| std::array::from_fn(|_| scale * rng.sample::<f64, _>(StandardNormal)))
        .collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Invariance of the relation extractor and equivariance of the message
/// scaler for every channel count, plus the pooled-length rule.
pub fn lemma_checks(trials: usize, seed: u64, attr_dim: usize, tol: f64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inv = Check::new(LEMMA_INVARIANCE, tol);
    let mut eqv = Check::new(LEMMA_EQUIVARIANCE, tol);
    let mut len = Check::new(POOLING_LENGTH, 0.0);
    let s: Vec<f64> = (0..MAX_CHANNELS).map(|_| rng.sample(StandardNormal)).collect();
    for c in 1..=MAX_CHANNELS {
        len.observe(if sliding_mean(&s, c)?.len() == c { 0.0 } else { 1.0 });
    }
    for trial in 0..trials {
        let c_i = trial % MAX_CHANNELS + 1;
        let c_j = rng.gen_range(1..=MAX_CHANNELS);
        let x_i = random_points(&mut rng, c_i, 3.0);
        let x_j = random_points(&mut rng, c_j, 3.0);
        let attrs = |rng: &mut ChaCha8Rng, c: usize| -> Vec<Vec<f64>> {
            (0..c).map(|_| (0..attr_dim).map(|_| rng.sample(StandardNormal)).collect()).collect()
        };
        let (a_i, a_j) = (attrs(&mut rng, c_i), attrs(&mut rng, c_j));
        let m = RigidMotion::random(&mut rng, trial % 2 == 1);
        let base = relation_extract(&x_i, &x_j, &a_i, &a_j)?;
        let moved_i: Vec<_> = x_i.iter().map(|&p| m.apply(p)).collect();
        let moved_j: Vec<_> = x_j.iter().map(|&p| m.apply(p)).collect();
        inv.observe(max_abs_diff(&base, &relation_extract(&moved_i, &moved_j, &a_i, &a_j)?));

        let s: Vec<f64> = (0..MAX_CHANNELS).map(|_| rng.sample(StandardNormal)).collect();
        let rotated: Vec<_> = x_i.iter().map(|&p| m.rotate(p)).collect();
        let lhs: Vec<f64> = message_scale(&rotated, &s)?.into_iter().flatten().collect();
        let rhs: Vec<f64> = message_scale(&x_i, &s)?.into_iter().flat_map(|p| m.rotate(p)).collect();
        eqv.observe(max_abs_diff(&lhs, &rhs));
    }
    Ok(vec![inv, eqv, len])
}

/// Random complex whose graph has at most `max_nodes` nodes, mixes residue
/// and ligand nodes, and holds edges of every relation kind.
pub fn random_graph(model_graph: &crate::graph::GraphConfig, max_nodes: usize, rng: &mut ChaCha8Rng) -> Result<HeteroGraph> {
    if max_nodes < 4 {
        return Err(Error::config("random graphs need room for three residues and a ligand atom"));
    }
    for attempt in 0..1000 {
        let residues = rng.gen_range(3..max_nodes);
        let ligand = rng.gen_range(1..=(max_nodes - residues).min(4));
        let rec = random_complex(&format!("eq{attempt:04}"), residues, ligand, rng)?;
        let g = build_graph(&rec, model_graph)?;
        if g.len() <= max_nodes && RelationKind::ALL.iter().all(|&k| !g.edges_of(k).is_empty()) {
            return Ok(g);
        }
    }
    Err(Error::numerical("could not draw a graph with every relation kind"))
}

fn bundle_values(b: &PredictionBundle) -> Vec<f64> {
    let mut v: Vec<f64> = b.lba.into_iter().chain(b.ppa).collect();
    for tasks in b.chains.values() {
        for probs in tasks.values() {
            v.extend(probs);
        }
    }
    v
}

fn same_bits(a: &PredictionBundle, b: &PredictionBundle) -> bool {
    let (x, y) = (bundle_values(a), bundle_values(b));
    x.len() == y.len() && x.iter().zip(&y).all(|(p, q)| p.to_bits() == q.to_bits())
}

fn coord_deviation(base: &[f64], moved: &[f64], mask: &[bool], m: &RigidMotion) -> f64 {
    let mut worst = 0.0f64;
    for (k, &on) in mask.iter().enumerate() {
        let p = [base[3 * k], base[3 * k + 1], base[3 * k + 2]];
        let q = &moved[3 * k..3 * k + 3];
        let expect = if on { m.apply(p) } else { [0.0; 3] };
        for i in 0..3 {
            let d = (expect[i] - q[i]).abs();
            worst = if d.is_nan() { f64::INFINITY } else { worst.max(d) };
        }
    }
    worst
}

fn encode_values<T: numcore::Scalar>(model: &HeMeNet<T>, inputs: &GraphInputs) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut tape = numcore::Tape::inference();
    let enc = model.encode(&mut tape, inputs, Mode::Eval)?;
    Ok((tape.value(enc.features).to_f64_vec(), tape.value(enc.coords).to_f64_vec()))
}

/// Encoder and readout checks of `model` over random graphs and motions.
/// Every other motion is improper.
pub fn model_checks(model: &HeMeNet<f64>, cfg: &EquivarianceConfig) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut feat = Check::new(FEATURES_F64, cfg.tol_f64);
    let mut coord = Check::new(COORDS_F64, cfg.tol_f64);
    let mut feat32 = Check::new(FEATURES_F32, cfg.tol_f32);
    let mut coord32 = Check::new(COORDS_F32, cfg.tol_f32);
    let mut readout = Check::new(READOUT, cfg.tol_f64);
    let mut exact = Check::new(READOUT_EXACT, 0.0);
    let single = model.cast::<f32>();
    let tasks = TaskId::ALL;
    for _ in 0..cfg.graphs {
        let g = random_graph(&model.config.graph, cfg.max_nodes, &mut rng)?;
        let inputs = model.inputs(&g);
        let (h, x) = encode_values(model, &inputs)?;
        let bundle = model.predict(&inputs, &tasks)?;
        let base32 = cfg.check_f32.then(|| encode_values(&single, &inputs)).transpose()?;
        for k in 0..cfg.motions {
            let m = RigidMotion::random(&mut rng, k % 2 == 1);
            let moved = model.inputs(&g.map_coords(|p| m.apply(p)));
            let (h2, x2) = encode_values(model, &moved)?;
            feat.observe(max_abs_diff(&h, &h2));
            coord.observe(coord_deviation(&x, &x2, &inputs.mask, &m));
            readout.observe(max_abs_diff(&bundle_values(&bundle), &bundle_values(&model.predict(&moved, &tasks)?)));
            if let Some((h32, x32)) = &base32 {
                let (h2, x2) = encode_values(&single, &moved)?;
                feat32.observe(max_abs_diff(h32, &h2));
                coord32.observe(coord_deviation(x32, &x2, &inputs.mask, &m));
            }
        }
        for bits in 1..8 {
            let m = RigidMotion::sign_flip(bits);
            let moved = model.inputs(&g.map_coords(|p| m.apply(p)));
            exact.observe(if same_bits(&bundle, &model.predict(&moved, &tasks)?) { 0.0 } else { 1.0 });
        }
    }
    let mut checks = vec![feat, coord];
    if cfg.check_f32 {
        checks.extend([feat32, coord32]);
    }
    checks.extend([readout, exact]);
    Ok(checks)
}

/// Lemma checks followed by the model checks.
pub fn check_equivariance(model: &HeMeNet<f64>, cfg: &EquivarianceConfig) -> Result<EquivarianceReport> {
    let mut checks = lemma_checks(cfg.graphs * cfg.motions, cfg.seed, model.config.geom.attr_dim, cfg.tol_f64)?;
    checks.extend(model_checks(model, cfg)?);
    Ok(EquivarianceReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::tasks::LabelDims;

    fn small() -> EquivarianceConfig {
        EquivarianceConfig {
            graphs: 4,
            motions: 4,
            ..Default::default()
        }
    }

    #[test]
    fn motions_are_orthogonal_with_requested_handedness() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in 0..20 {
            let m = RigidMotion::random(&mut rng, k % 2 == 0);
            assert!((m.det().abs() - 1.0).abs() < 1e-12);
            assert_eq!(m.det() < 0.0, k % 2 == 0);
            for i in 0..3 {
                for j in 0..3 {
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((dot(m.q[i], m.q[j]) - e).abs() < 1e-12);
                }
            }
        }
        assert_eq!(RigidMotion::sign_flip(1).det(), -1.0);
        assert_eq!(RigidMotion::sign_flip(3).det(), 1.0);
    }

    #[test]
    fn random_graphs_hold_every_relation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            let g = random_graph(&Default::default(), 12, &mut rng).unwrap();
            assert!(g.len() <= 12);
            assert!(g.nodes.iter().any(|n| n.is_residue()) && g.nodes.iter().any(|n| !n.is_residue()));
            assert!(g.validate().is_empty());
        }
    }

    #[test]
    fn fresh_model_passes() {
        let model = HeMeNet::<f64>::new(ModelConfig::tiny(8, 2, LabelDims::uniform(3)), 1).unwrap();
        let report = check_equivariance(&model, &small()).unwrap();
        assert!(report.passed(), "{report}");
        assert_eq!(report.checks.len(), 9);
    }

    #[test]
    fn coordinate_leak_is_caught() {
        let cfg = ModelConfig {
            coord_leak: 0.1,
            ..ModelConfig::tiny(8, 2, LabelDims::uniform(3))
        };
        let model = HeMeNet::<f64>::new(cfg, 1).unwrap();
        let report = check_equivariance(&model, &small()).unwrap();
        assert!(!report.passed());
        assert!(!report.get(FEATURES_F64).unwrap().passed());
        assert!(report.get(LEMMA_INVARIANCE).unwrap().passed());
    }

    #[test]
    fn nan_deviation_fails() {
        let mut c = Check::new("x", 1.0);
        c.observe(f64::NAN);
        assert!(!c.passed());
    }
}
