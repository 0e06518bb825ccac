//! Epoch loop, evaluation and best-validation tracking.

use std::collections::BTreeMap;
use std::time::Instant;

use numcore::{Gradients, OptimizerConfig, Scalar, Tape};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{multitask_loss, LossWeights};
use super::metrics::{fmax, rmse_mae, MetricReport, TaskMetrics};
use super::sampler::balanced_batches;
use crate::datasets::{Sample, SampleLabels};
use crate::error::{Error, Result};
use crate::model::{GraphInputs, HeMeNet, Mode, NormStats};
use crate::tasks::TaskId;

/// Graph inputs and labels of one complex, prepared once.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub id: String,
    pub inputs: GraphInputs,
    pub labels: SampleLabels,
}

/// Builds graphs in parallel and keeps only the labels of `tasks`.
/// Samples left without any label are dropped.
pub fn prepare_samples<T: Scalar>(model: &HeMeNet<T>, samples: &[Sample], tasks: &[TaskId]) -> Result<Vec<TrainSample>> {
    let prepared: Vec<Result<Option<TrainSample>>> = samples
        .par_iter()
        .map(|s| {
            let labels = s.labels.restricted_to(tasks);
            labels.validate(&model.config.label_dims)?;
            if labels.tasks().is_empty() {
                return Ok(None);
            }
            Ok(Some(TrainSample {
                id: s.record.complex_id.clone(),
                inputs: model.prepare(&s.record)?,
                labels,
            }))
        })
        .collect();
    prepared.into_iter().filter_map(Result::transpose).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    /// Global gradient-norm bound; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub weights: LossWeights,
    pub tasks: Vec<TaskId>,
    pub seed: u64,
    /// Stops after this many optimizer steps in total.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            optimizer: OptimizerConfig::default(),
            clip_norm: Some(1.0),
            weights: LossWeights::default(),
            tasks: TaskId::ALL.to_vec(),
            seed: 0,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    /// Learning rate 0 is accepted and freezes the parameters.
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if self.tasks.is_empty() {
            return Err(Error::config("at least one task must be selected"));
        }
        if self.optimizer.lr != 0.0 {
            self.optimizer.validate()?;
        } else if !(self.optimizer.lr == 0.0) {
            return Err(Error::config("learning rate must be finite"));
        }
        if let Some(c) = self.clip_norm.filter(|c| !(*c > 0.0)) {
            return Err(Error::config(format!("clip norm must be positive, got {c}")));
        }
        self.weights.validate()
    }
}

/// Loss, per-task terms, parameter gradients and norm statistics of one sample.
#[derive(Debug, Clone)]
pub struct SampleGrad<T> {
    pub loss: f64,
    pub per_task: BTreeMap<TaskId, f64>,
    pub grads: Gradients<T>,
    pub norm_stats: Vec<NormStats<T>>,
}

/// Training-mode forward and backward of one sample on its own tape.
pub fn sample_gradients<T: Scalar>(model: &HeMeNet<T>, sample: &TrainSample, weights: &LossWeights) -> Result<SampleGrad<T>> {
    let mut tape = Tape::new();
    let labels = &sample.labels;
    let tasks = labels.tasks();
    let filter = |t: TaskId, c: &str| labels.chains.get(c).is_some_and(|p| p.get(t).is_some());
    let out = model.forward(&mut tape, &sample.inputs, &tasks, filter, Mode::Train)?;
    let terms = multitask_loss(&mut tape, &out, labels, weights)?;
    let loss = tape.value(terms.total).data()[0].as_f64();
    if !loss.is_finite() {
        return Err(Error::numerical(format!("non-finite loss {loss} on sample {}", sample.id)));
    }
    let per_task = terms
        .per_task
        .iter()
        .map(|(&t, &v)| (t, tape.value(v).data()[0].as_f64()))
        .collect();
    let grads = tape.backward(terms.total)?;
    Ok(SampleGrad {
        loss,
        per_task,
        grads,
        norm_stats: out.encoded.norm_stats,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub steps: usize,
    pub samples: usize,
    pub mean_loss: f64,
    /// Mean weighted term per task over the samples carrying it.
    pub task_loss: BTreeMap<TaskId, f64>,
    pub grad_norm_mean: f64,
    pub grad_norm_max: f64,
    pub seconds: f64,
}

/// One pass over `data` in balanced batches. `step_limit` caps the optimizer
/// steps taken in this epoch.
pub fn train_epoch<T: Scalar>(
    model: &mut HeMeNet<T>,
    data: &[TrainSample],
    cfg: &TrainConfig,
    epoch: usize,
    step_limit: Option<usize>,
) -> Result<EpochStats> {
    cfg.validate()?;
    let start = Instant::now();
    let affinity: Vec<Option<TaskId>> = data
        .iter()
        .map(|s| TaskId::AFFINITY.into_iter().find(|&t| s.labels.has(t)))
        .collect();
    let seed = cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let batches = balanced_batches(&affinity, cfg.batch_size, seed)?;
    let (mut loss_sum, mut samples, mut steps) = (0.0, 0usize, 0usize);
    let mut task_sum: BTreeMap<TaskId, (f64, usize)> = BTreeMap::new();
    let (mut norm_sum, mut norm_max) = (0.0, 0.0f64);
    for batch in batches {
        if step_limit.is_some_and(|limit| steps >= limit) {
            break;
        }
        let results: Vec<Result<SampleGrad<T>>> = {
            let model = &*model;
            batch
                .par_iter()
                .map(|&i| sample_gradients(model, &data[i], &cfg.weights))
                .collect()
        };
        model.store.zero_grad();
        for r in results {
            let r = r?;
            model.store.accumulate(&r.grads)?;
            model.update_running_stats(&r.norm_stats)?;
            loss_sum += r.loss;
            samples += 1;
            for (t, v) in r.per_task {
                let e = task_sum.entry(t).or_default();
                e.0 += v;
                e.1 += 1;
            }
        }
        model.store.scale_grads(T::from_f64_lossy(1.0 / batch.len() as f64));
        let norm = match cfg.clip_norm {
            Some(c) => model.store.clip_grad_norm(c),
            None => model.store.grad_norm(),
        };
        if !norm.is_finite() {
            return Err(Error::numerical(format!("non-finite gradient norm in epoch {epoch}")));
        }
        norm_sum += norm;
        norm_max = norm_max.max(norm);
        if cfg.optimizer.lr != 0.0 {
            numcore::optimizer_step(&mut model.store, &cfg.optimizer)?;
        }
        steps += 1;
    }
    model.store.zero_grad();
    Ok(EpochStats {
        epoch,
        steps,
        samples,
        mean_loss: if samples == 0 { 0.0 } else { loss_sum / samples as f64 },
        task_loss: task_sum.into_iter().map(|(t, (s, n))| (t, s / n as f64)).collect(),
        grad_norm_mean: if steps == 0 { 0.0 } else { norm_sum / steps as f64 },
        grad_norm_max: norm_max,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Mean per-sample loss of `data` without updating anything.
pub fn dataset_loss<T: Scalar>(model: &HeMeNet<T>, data: &[TrainSample], weights: &LossWeights) -> Result<f64> {
    let losses: Vec<Result<f64>> = data.par_iter().map(|s| Ok(sample_gradients(model, s, weights)?.loss)).collect();
    let losses = losses.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Evaluation-mode metrics for every labelled task in `data`.
pub fn evaluate<T: Scalar>(model: &HeMeNet<T>, data: &[TrainSample]) -> Result<MetricReport> {
    let bundles: Vec<Result<_>> = data
        .par_iter()
        .map(|s| model.predict(&s.inputs, &s.labels.tasks()))
        .collect();
    let mut affinity: BTreeMap<TaskId, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut property: BTreeMap<TaskId, (Vec<Vec<f64>>, Vec<Vec<bool>>)> = BTreeMap::new();
    for (s, b) in data.iter().zip(bundles) {
        let b = b?;
        for task in s.labels.tasks() {
            if task.is_affinity() {
                let e = affinity.entry(task).or_default();
                e.0.push(b.affinity(task).expect("predicted affinity"));
                e.1.push(s.labels.affinity(task).expect("labelled affinity"));
            } else {
                let e = property.entry(task).or_default();
                for (chain, target) in s.labels.chains_with(task) {
                    let scores = b.chains.get(chain).and_then(|c| c.get(&task)).ok_or_else(|| {
                        Error::input(format!("{}: chain {chain} carries {task} labels but is not in the graph", s.id))
                    })?;
                    e.0.push(scores.clone());
                    e.1.push(target.to_bools());
                }
            }
        }
    }
    let mut report = MetricReport::default();
    for (task, (p, y)) in affinity {
        let (rmse, mae) = rmse_mae(&p, &y)?;
        report.tasks.insert(task, TaskMetrics { count: p.len(), rmse: Some(rmse), mae: Some(mae), fmax: None });
    }
    for (task, (s, y)) in property {
        if y.iter().all(|l| !l.contains(&true)) {
            log::warn!("{task}: no chain has a positive label, fmax omitted");
            continue;
        }
        let f = fmax(&s, &y)?;
        report.tasks.insert(task, TaskMetrics { count: s.len(), rmse: None, mae: None, fmax: Some(f) });
    }
    Ok(report)
}

/// Outcome of one epoch of [`fit`].
#[derive(Debug, Clone)]
pub struct EpochSummary {
    pub stats: EpochStats,
    pub val: Option<MetricReport>,
    pub val_score: Option<f64>,
    pub is_best: bool,
}

/// Runs epochs `start_epoch..cfg.epochs` (or until `model.store.step`
/// reaches `cfg.max_steps`), evaluating on `val` after each. Without validation data the latest epoch counts as best.
/// `on_epoch` sees the model after every epoch.
pub fn fit<T: Scalar>(
    model: &mut HeMeNet<T>,
    train: &[TrainSample],
    val: &[TrainSample],
    cfg: &TrainConfig,
    start_epoch: usize,
    mut on_epoch: impl FnMut(&HeMeNet<T>, &EpochSummary) -> Result<()>,
) -> Result<Vec<EpochSummary>> {
    cfg.validate()?;
    let mut history = Vec::new();
    let mut best: Option<f64> = None;
    let mut total_steps = model.store.step as usize;
    for epoch in start_epoch..cfg.epochs {
        let remaining = cfg.max_steps.map(|m| m.saturating_sub(total_steps));
        if remaining == Some(0) {
            break;
        }
        let stats = train_epoch(model, train, cfg, epoch, remaining)?;
        total_steps += stats.steps;
        let report = if val.is_empty() { None } else { Some(evaluate(model, val)?) };
        let val_score = report.as_ref().and_then(MetricReport::selection_score);
        let is_best = match (val_score, best) {
            (Some(s), Some(b)) => s > b,
            (Some(_), None) => true,
            (None, _) => val.is_empty(),
        };
        if is_best {
            best = val_score.or(best);
        }
        let summary = EpochSummary {
            stats,
            val: report,
            val_score,
            is_best,
        };
        on_epoch(model, &summary)?;
        history.push(summary);
    }
    Ok(history)
}
