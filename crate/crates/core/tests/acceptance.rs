//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::collections::BTreeMap;
use std::process::Command;
use std::time::{Duration, Instant};

use hemenet::datasets::{
    assemble_splits, generate_synthetic, is_fully_labeled, random_complex, LabelVec, PropertyLabels, Sample,
    SampleLabels, Split, SplitFractions, SyntheticConfig,
};
use hemenet::model::{HeMeNet, Mode, ModelConfig, NormKind};
use hemenet::train::{
    balanced_batches, dataset_loss, evaluate, fit, fmax, multitask_loss, prepare_samples, rmse_mae, sample_gradients,
    train_epoch, LossWeights, TrainConfig, TrainSample,
};
use hemenet::verify::{self, check_equivariance, lemma_checks, EquivarianceConfig};
use hemenet::graph::Geometry;
use hemenet::{LabelDims, TaskId};
use numcore::{grad_check, GradCheckConfig, OptimizerConfig, ParamStore, Tape, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EQUIVARIANCE_TOL_F64: f64 = 1e-10;
const EQUIVARIANCE_TOL_F32: f64 = 1e-4;
const GRAD_REL_TOL: f64 = 1e-5;
const OVERFIT_STEPS: usize = 2000;
const OVERFIT_LOSS_RATIO: f64 = 0.05;
const OVERFIT_MSE: f64 = 1e-2;
const OVERFIT_FMAX: f64 = 0.95;
const RMSE_TOL: f64 = 1e-12;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

type Criterion = fn() -> hemenet::Result<Outcome>;

fn within(limit: Duration, start: Instant, o: Outcome) -> Outcome {
    let took = start.elapsed();
    let ok = took < limit;
    outcome(
        o.passed && ok,
        format!("{} [{:.1}s of {}s allowed]", o.detail, took.as_secs_f64(), limit.as_secs()),
    )
}

fn single_worker<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}

// 1-3 -------------------------------------------------------------------------

fn equivariance_model() -> hemenet::Result<HeMeNet<f64>> {
    HeMeNet::new(ModelConfig::tiny(16, 2, LabelDims::uniform(8)), 0)
}

fn equivariance_suite() -> hemenet::Result<Outcome> {
    let start = Instant::now();
    let model = equivariance_model()?;
    let cfg = EquivarianceConfig {
        graphs: 100,
        motions: 10,
        max_nodes: 12,
        tol_f64: EQUIVARIANCE_TOL_F64,
        tol_f32: EQUIVARIANCE_TOL_F32,
        check_f32: true,
        ..Default::default()
    };
    let checks = single_worker(|| verify::model_checks(&model, &cfg))?;
    let wanted = [verify::FEATURES_F64, verify::COORDS_F64, verify::FEATURES_F32, verify::COORDS_F32];
    let picked: Vec<_> = checks.iter().filter(|c| wanted.contains(&c.name.as_str())).collect();
    let passed = picked.len() == 4 && picked.iter().all(|c| c.passed() && c.cases == 1000);
    let detail = picked
        .iter()
        .map(|c| format!("{} {:.1e}", c.name, c.worst))
        .collect::<Vec<_>>()
        .join("; ");
    Ok(within(Duration::from_secs(120), start, outcome(passed, detail)))
}

fn lemma_suite() -> hemenet::Result<Outcome> {
    let checks = lemma_checks(14 * 50, 1, 4, EQUIVARIANCE_TOL_F64)?;
    let passed = checks.iter().all(|c| c.passed()) && checks[2].cases == 14;
    let detail = checks
        .iter()
        .map(|c| format!("{} {:.1e} over {}", c.name, c.worst, c.cases))
        .collect::<Vec<_>>()
        .join("; ");
    Ok(outcome(passed, detail))
}

fn readout_invariance() -> hemenet::Result<Outcome> {
    let model = equivariance_model()?;
    let cfg = EquivarianceConfig {
        graphs: 20,
        motions: 5,
        check_f32: false,
        ..Default::default()
    };
    let report = check_equivariance(&model, &cfg)?;
    let exact = report.get(verify::READOUT_EXACT).expect("exact readout check");
    let general = report.get(verify::READOUT).expect("readout check");
    Ok(outcome(
        exact.passed() && exact.worst == 0.0 && general.passed(),
        format!(
            "{} of {} exact poses bitwise identical; general motions {:.1e}",
            exact.cases, exact.cases, general.worst
        ),
    ))
}

// 4 ---------------------------------------------------------------------------

fn full_labels(dims: &LabelDims, rng: &mut ChaCha8Rng) -> hemenet::Result<PropertyLabels> {
    let mut p = PropertyLabels::default();
    for t in TaskId::PROPERTY {
        let d = dims.dim(t);
        let on: Vec<usize> = (0..d).filter(|_| rng.gen_bool(0.4)).collect();
        *p.slot(t) = Some(LabelVec::from_indices(d, &on)?);
    }
    Ok(p)
}

fn gradient_fidelity() -> hemenet::Result<Outcome> {
    let start = Instant::now();
    let dims = LabelDims::uniform(3);
    let config = ModelConfig::tiny(8, 2, dims);
    let model = HeMeNet::<f64>::new(config.clone(), 4)?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let record = random_complex("grad", 3, 0, &mut rng)?;
    let inputs = model.prepare(&record)?;
    let labels = SampleLabels {
        lba: Some(6.0),
        ppa: Some(4.5),
        chains: [("A".to_string(), full_labels(&dims, &mut rng)?)].into(),
    };
    let weights = LossWeights::default();
    let loss = |tape: &mut Tape<f64>, store: &ParamStore<f64>| -> hemenet::Result<Var> {
        let m = HeMeNet::from_store(config.clone(), store.clone())?;
        let out = m.forward(tape, &inputs, &TaskId::ALL, |_, _| true, Mode::Train)?;
        Ok(multitask_loss(tape, &out, &labels, &weights)?.total)
    };
    let gc = GradCheckConfig {
        tol: GRAD_REL_TOL,
        ..Default::default()
    };
    let report = grad_check(loss, &model.store, &gc)?;
    let coords: usize = report.params.iter().map(|p| p.coords_checked).sum();
    let detail = format!(
        "{} nodes, {} parameter tensors, {} coordinates, max relative error {:.2e}",
        inputs.nodes,
        report.params.len(),
        coords,
        report.max_rel_error
    );
    if !report.passed {
        eprint!("{report}");
    }
    Ok(within(Duration::from_secs(300), start, outcome(report.passed, detail)))
}

// 5 ---------------------------------------------------------------------------

fn overfit() -> hemenet::Result<Outcome> {
    let start = Instant::now();
    let dims = LabelDims::uniform(4);
    let samples = generate_synthetic(&SyntheticConfig {
        n_samples: 8,
        max_residues: 8,
        dims,
        ..Default::default()
    })?;
    let config = ModelConfig {
        norm: NormKind::Layer,
        ..ModelConfig::tiny(16, 2, dims)
    };
    let mut model = HeMeNet::<f64>::new(config, 0)?;
    let data = prepare_samples(&model, &samples, &TaskId::ALL)?;
    let represented = TaskId::ALL.iter().all(|&t| data.iter().any(|s| s.labels.has(t)));
    let cfg = TrainConfig {
        epochs: OVERFIT_STEPS,
        batch_size: data.len(),
        optimizer: OptimizerConfig::adam(3e-3),
        max_steps: Some(OVERFIT_STEPS),
        ..Default::default()
    };
    let initial = dataset_loss(&model, &data, &cfg.weights)?;
    fit(&mut model, &data, &[], &cfg, 0, |_, _| Ok(()))?;
    let last = dataset_loss(&model, &data, &cfg.weights)?;
    let report = evaluate(&model, &data)?;
    let mut ok = represented && last <= OVERFIT_LOSS_RATIO * initial && model.store.step as usize == OVERFIT_STEPS;
    let mut parts = vec![format!("loss {initial:.3} -> {last:.2e}")];
    for t in TaskId::ALL {
        let Some(m) = report.tasks.get(&t) else {
            ok = false;
            parts.push(format!("{t} missing"));
            continue;
        };
        if let Some(r) = m.rmse {
            ok &= r * r <= OVERFIT_MSE;
            parts.push(format!("{t} mse {:.1e}", r * r));
        }
        if let Some(f) = m.fmax {
            ok &= f >= OVERFIT_FMAX;
            parts.push(format!("{t} fmax {f:.3}"));
        }
    }
    Ok(within(Duration::from_secs(600), start, outcome(ok, parts.join(", "))))
}

// 6 ---------------------------------------------------------------------------

fn brute_force_fmax(scores: &[Vec<f64>], labels: &[Vec<bool>]) -> f64 {
    let mut best = 0.0f64;
    for i in 0..=100 {
        let tau = i as f64 / 100.0;
        let mut precisions = Vec::new();
        let mut recalls = Vec::new();
        for (s, l) in scores.iter().zip(labels) {
            let predicted: Vec<usize> = (0..s.len()).filter(|&k| s[k] >= tau && s[k] > 0.0).collect();
            let truth: Vec<usize> = (0..l.len()).filter(|&k| l[k]).collect();
            let hits = predicted.iter().filter(|k| truth.contains(k)).count();
            if !predicted.is_empty() {
                precisions.push(hits as f64 / predicted.len() as f64);
            }
            if !truth.is_empty() {
                recalls.push(hits as f64 / truth.len() as f64);
            }
        }
        if precisions.is_empty() {
            continue;
        }
        let p = precisions.iter().sum::<f64>() / precisions.len() as f64;
        let r = recalls.iter().sum::<f64>() / recalls.len() as f64;
        if p + r > 0.0 {
            best = best.max(2.0 * p * r / (p + r));
        }
    }
    best
}

fn metric_oracles() -> hemenet::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut fmax_ok = 0;
    for _ in 0..200 {
        let chains = rng.gen_range(1..8);
        let classes = rng.gen_range(1..12);
        let mut scores: Vec<Vec<f64>> = Vec::new();
        let mut labels: Vec<Vec<bool>> = Vec::new();
        for _ in 0..chains {
            scores.push((0..classes).map(|_| (rng.gen_range(0..=100) as f64 / 100.0).min(rng.gen())).collect());
            labels.push((0..classes).map(|_| rng.gen_bool(0.3)).collect());
        }
        if labels.iter().all(|l| l.iter().all(|&b| !b)) {
            labels[0][0] = true;
        }
        if fmax(&scores, &labels)? == brute_force_fmax(&scores, &labels) {
            fmax_ok += 1;
        }
    }
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.gen_range(1..50);
        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let se: f64 = p.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum();
        let ae: f64 = p.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum();
        let (rmse, mae) = rmse_mae(&p, &y)?;
        worst = worst.max((rmse - (se / n as f64).sqrt()).abs()).max((mae - ae / n as f64).abs());
    }
    Ok(outcome(
        fmax_ok == 200 && worst <= RMSE_TOL,
        format!("fmax exact on {fmax_ok}/200; rmse/mae worst deviation {worst:.1e}"),
    ))
}

// 7 ---------------------------------------------------------------------------

fn masking_exactness() -> hemenet::Result<Outcome> {
    let dims = LabelDims::uniform(4);
    let model = HeMeNet::<f64>::new(ModelConfig::tiny(8, 2, dims), 7)?;
    let samples = generate_synthetic(&SyntheticConfig {
        n_samples: 50,
        max_residues: 6,
        seed: 7,
        dims,
        full_fraction: 0.0,
        ..Default::default()
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let data = prepare_samples(&model, &samples, &TaskId::ALL)?;
    let mut checked = 0;
    let mut violations = Vec::new();
    let mut partial = 0;
    for s in &data {
        let keep: Vec<TaskId> = TaskId::ALL.into_iter().filter(|_| rng.gen_bool(0.5)).collect();
        let labels = s.labels.restricted_to(&keep);
        let labels = if labels.tasks().is_empty() { s.labels.clone() } else { labels };
        let sample = TrainSample { labels, ..s.clone() };
        partial += usize::from(sample.labels.tasks().len() < TaskId::ALL.len());
        let g = sample_gradients(&model, &sample, &LossWeights::default())?;
        let mut store = model.store.clone();
        store.zero_grad();
        store.accumulate(&g.grads)?;
        for t in TaskId::ALL {
            let h = model.ids.heads[t.index()];
            let zero = [h.w1, h.b1, h.w2, h.b2]
                .iter()
                .all(|&id| store.grad_slice(id).iter().all(|&x| x == 0.0));
            if zero == sample.labels.has(t) {
                violations.push(format!("{} {t}", sample.id));
            }
        }
        checked += 1;
    }
    Ok(outcome(
        violations.is_empty() && checked == 50 && partial == 50,
        format!(
            "{checked} samples ({partial} partial): unlabelled heads exactly zero, labelled heads nonzero; violations {violations:?}"
        ),
    ))
}

// 8 ---------------------------------------------------------------------------

fn sampler_quotas() -> hemenet::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut batches_seen = 0;
    let mut failures = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..64);
        let affinity: Vec<Option<TaskId>> = (0..n)
            .map(|_| [None, Some(TaskId::Lba), Some(TaskId::Ppa)][rng.gen_range(0..3)])
            .collect();
        let batch_size = rng.gen_range(2..12);
        let batches = balanced_batches(&affinity, batch_size, rng.gen())?;
        let mut drawn = vec![0usize; n];
        for b in &batches {
            batches_seen += 1;
            let remaining = |t: TaskId| (0..n).any(|i| drawn[i] == 0 && affinity[i] == Some(t));
            let quota = [TaskId::Lba, TaskId::Ppa]
                .into_iter()
                .all(|t| !remaining(t) || b.iter().any(|&i| affinity[i] == Some(t)));
            if !quota || b.is_empty() || b.len() > batch_size {
                failures += 1;
            }
            for &i in b {
                drawn[i] += 1;
            }
        }
        if drawn.iter().any(|&c| c != 1) {
            failures += 1;
        }
    }
    Ok(outcome(
        failures == 0,
        format!("1000 epochs, {batches_seen} batches, {failures} quota or coverage violations"),
    ))
}

// 9 ---------------------------------------------------------------------------

fn calpha_degeneracy() -> hemenet::Result<Outcome> {
    let dims = LabelDims::uniform(4);
    let samples = generate_synthetic(&SyntheticConfig {
        n_samples: 6,
        max_residues: 8,
        seed: 9,
        dims,
        ..Default::default()
    })?;
    let stripped: Vec<Sample> = samples
        .iter()
        .map(|s| Sample {
            record: s.record.strip_to_calpha(),
            labels: s.labels.clone(),
        })
        .collect();
    let full = ModelConfig::tiny(8, 2, dims);
    let mut calpha = full.clone();
    calpha.graph.geometry = Geometry::Calpha;
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 3,
        optimizer: OptimizerConfig::adam(1e-2),
        ..Default::default()
    };
    let mut a = HeMeNet::<f64>::new(full, 9)?;
    let mut b = HeMeNet::<f64>::new(calpha, 9)?;
    let graphs_equal = stripped
        .iter()
        .zip(&samples)
        .map(|(s, o)| Ok(a.graph(&s.record)?.to_json() == b.graph(&o.record)?.to_json()))
        .collect::<hemenet::Result<Vec<bool>>>()?
        .into_iter()
        .all(|x| x);
    let da = prepare_samples(&a, &stripped, &TaskId::ALL)?;
    let db = prepare_samples(&b, &samples, &TaskId::ALL)?;
    let mut losses_equal = true;
    for e in 0..cfg.epochs {
        let sa = train_epoch(&mut a, &da, &cfg, e, None)?;
        let sb = train_epoch(&mut b, &db, &cfg, e, None)?;
        losses_equal &= sa.mean_loss.to_bits() == sb.mean_loss.to_bits();
    }
    let params_equal = a
        .store
        .entries()
        .iter()
        .zip(b.store.entries())
        .all(|(x, y)| x.value.to_vec().iter().map(|v| v.to_bits()).eq(y.value.to_vec().iter().map(|v| v.to_bits())));
    let same_ckpt = HeMeNet::from_store(b.config.clone(), a.store.clone())?;
    let preds_equal = da
        .iter()
        .zip(&db)
        .map(|(x, y)| Ok(a.predict(&x.inputs, &TaskId::ALL)? == same_ckpt.predict(&y.inputs, &TaskId::ALL)?))
        .collect::<hemenet::Result<Vec<bool>>>()?
        .into_iter()
        .all(|x| x);
    Ok(outcome(
        graphs_equal && losses_equal && params_equal && preds_equal,
        format!("graphs {graphs_equal}, losses {losses_equal}, parameters {params_equal}, predictions {preds_equal}"),
    ))
}

// 10 --------------------------------------------------------------------------

fn hemenet(args: &[&str]) -> hemenet::Result<()> {
    let out = Command::new(env!("CARGO_BIN_EXE_hemenet"))
        .args(["--workers", "1"])
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .map_err(|e| hemenet::Error::input(format!("cannot run hemenet: {e}")))?;
    if out.status.success() {
        Ok(())
    } else {
        Err(hemenet::Error::input(format!(
            "hemenet {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        )))
    }
}

fn pipeline_determinism() -> hemenet::Result<Outcome> {
    let tmp = tempfile::tempdir().map_err(|e| hemenet::Error::input(e.to_string()))?;
    let d = tmp.path();
    let p = |name: &str| d.join(name).to_string_lossy().into_owned();
    hemenet(&["--seed", "3", "gen-synthetic", "--out-dir", &p("syn"), "--samples", "16", "--max-residues", "8", "--label-dims", "4", "--cluster-fraction", "1"])?;
    hemenet(&["ingest", &p("syn/pdb"), "--out", &p("records.ndjson")])?;
    hemenet(&[
        "annotate",
        "--records", &p("records.ndjson"),
        "--annotations", &p("syn/annotations.tsv"),
        "--affinities", &p("syn/affinities.tsv"),
        "--label-dims", "4",
        "--out", &p("labels.json"),
    ])?;
    hemenet(&[
        "--seed", "3", "split",
        "--records", &p("records.ndjson"),
        "--labels", &p("labels.json"),
        "--clusters", &p("syn/clusters.tsv"),
        "--out", &p("splits.json"),
    ])?;
    hemenet(&[
        "--seed", "3", "train",
        "--records", &p("records.ndjson"),
        "--labels", &p("labels.json"),
        "--splits", &p("splits.json"),
        "--hidden", "8", "--layers", "2", "--label-dims", "4",
        "--batch-size", "4", "--epochs", "10", "--max-steps", "5",
        "--out-dir", &p("run1"),
    ])?;
    hemenet(&["train", "--config", &p("run1/run.json"), "--out-dir", &p("run2")])?;
    for run in ["run1", "run2"] {
        hemenet(&[
            "eval",
            "--checkpoint", &p(&format!("{run}/best.ckpt")),
            "--records", &p("records.ndjson"),
            "--labels", &p("labels.json"),
            "--splits", &p("splits.json"),
            "--split", "test",
            "--out", &p(&format!("{run}.metrics.json")),
        ])?;
    }
    let read = |name: &str| std::fs::read(d.join(name)).unwrap_or_default();
    let same = |name: &str| !read(name).is_empty() && read(name) == read(&name.replacen("run1", "run2", 1));
    let metrics = same("run1.metrics.json");
    let log = same("run1/metrics.jsonl");
    let ckpt = same("run1/best.ckpt");
    let tests = read("run1.metrics.json").len();
    Ok(outcome(
        metrics && log && ckpt && tests > 2,
        format!("test metrics identical {metrics}, training log identical {log}, best checkpoint identical {ckpt}"),
    ))
}

// 11 --------------------------------------------------------------------------

fn label_case(lba: bool, ppa: bool, chains: &[(&str, [bool; 4])]) -> SampleLabels {
    let mut s = SampleLabels {
        lba: lba.then_some(5.0),
        ppa: ppa.then_some(7.0),
        ..Default::default()
    };
    for (c, present) in chains {
        let mut p = PropertyLabels::default();
        for (t, &on) in TaskId::PROPERTY.into_iter().zip(present) {
            if on {
                *p.slot(t) = Some(LabelVec::zeros(4));
            }
        }
        s.chains.insert(c.to_string(), p);
    }
    s
}

fn dataset_rules() -> hemenet::Result<Outcome> {
    const ALL: [bool; 4] = [true; 4];
    const NO_CC: [bool; 4] = [true, true, true, false];
    const NO_EC: [bool; 4] = [false, true, true, true];
    const NONE: [bool; 4] = [false; 4];
    #[rustfmt::skip]
    let table: [(bool, bool, &[(&str, [bool; 4])], &[&str], bool); 20] = [
        (true,  false, &[("A", ALL)],                  &["A"],      true),
        (false, true,  &[("A", ALL)],                  &["A"],      true),
        (true,  true,  &[("A", ALL)],                  &["A"],      false),
        (false, false, &[("A", ALL)],                  &["A"],      false),
        (true,  false, &[("A", NO_CC)],                &["A"],      false),
        (true,  false, &[("A", NO_EC)],                &["A"],      false),
        (true,  false, &[("A", NONE)],                 &["A"],      false),
        (true,  false, &[],                            &["A"],      false),
        (false, true,  &[("A", ALL), ("B", ALL)],      &["A", "B"], true),
        (false, true,  &[("A", ALL), ("B", NO_CC)],    &["A", "B"], false),
        (false, true,  &[("A", ALL)],                  &["A", "B"], false),
        (true,  false, &[("A", ALL), ("B", ALL)],      &["A", "B"], true),
        (true,  true,  &[("A", ALL), ("B", ALL)],      &["A", "B"], false),
        (false, false, &[("A", ALL), ("B", ALL)],      &["A", "B"], false),
        (true,  false, &[("A", [true, false, true, true])], &["A"], false),
        (true,  false, &[("A", [true, true, false, true])], &["A"], false),
        (false, true,  &[("A", ALL), ("B", ALL), ("C", ALL)], &["A", "B", "C"], true),
        (false, true,  &[("A", ALL), ("B", ALL), ("C", NONE)], &["A", "B", "C"], false),
        (true,  false, &[("B", ALL)],                  &["A", "B"], false),
        (false, false, &[],                            &["A"],      false),
    ];
    let table_ok = table
        .iter()
        .filter(|(lba, ppa, chains, ids, expected)| is_fully_labeled(&label_case(*lba, *ppa, chains), ids.iter().copied()) == *expected)
        .count();

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut samples = Vec::new();
    let mut clusters = BTreeMap::new();
    let specs = [("full1", true, "c1"), ("full2", true, "c2"), ("part_shared", false, "c1"), ("part_alone", false, "c9")];
    for (id, full, cluster) in specs {
        let record = random_complex(id, 3, 2, &mut rng)?;
        let labels = if full { label_case(true, false, &[("A", ALL)]) } else { label_case(false, false, &[("A", NO_CC)]) };
        clusters.insert(format!("{id}_A"), cluster.to_string());
        samples.push(Sample { record, labels });
    }
    let split = assemble_splits(&samples, &clusters, SplitFractions { train: 0.0, val: 0.0 }, 0)?;
    let shared_excluded = !split.assignment.contains_key("part_shared");
    let alone_train = split.assignment.get("part_alone") == Some(&Split::Train);
    let clean = split.check_leakage().is_ok();
    let mut tampered = split.clone();
    tampered.assignment.insert("part_shared".into(), Split::Train);
    tampered.provenance.samples.get_mut("part_shared").expect("provenance").split = Some(Split::Train);
    let rejected = tampered.check_leakage().is_err();
    Ok(outcome(
        table_ok == 20 && shared_excluded && alone_train && clean && rejected,
        format!(
            "fully-labelled table {table_ok}/20; shared-cluster partial excluded {shared_excluded}, isolated partial in train {alone_train}, leaking split rejected {rejected}"
        ),
    ))
}

fn main() {
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let criteria: [(&str, Criterion); 11] = [
        ("equivariance suite", equivariance_suite),
        ("relation extractor and message scaler lemmas", lemma_suite),
        ("readout invariance", readout_invariance),
        ("gradient fidelity", gradient_fidelity),
        ("overfit convergence", overfit),
        ("metric oracles", metric_oracles),
        ("masking exactness", masking_exactness),
        ("sampler quotas", sampler_quotas),
        ("calpha degeneracy", calpha_degeneracy),
        ("pipeline determinism", pipeline_determinism),
        ("dataset rules", dataset_rules),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|k| k != n) {
            continue;
        }
        let o = run().unwrap_or_else(|e| outcome(false, format!("error: {e}")));
        println!("{} {n:2} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.passed);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
