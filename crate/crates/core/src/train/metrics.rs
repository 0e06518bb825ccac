//! RMSE, MAE, Fmax and the per-task report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::TaskId;

pub fn rmse_mae(preds: &[f64], labels: &[f64]) -> Result<(f64, f64)> {
    if preds.len() != labels.len() {
        return Err(Error::input(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    if preds.is_empty() {
        return Err(Error::input("rmse/mae of an empty set"));
    }
    let n = preds.len() as f64;
    let (mut se, mut ae) = (0.0, 0.0);
    for (p, y) in preds.iter().zip(labels) {
        let d = p - y;
        se += d * d;
        ae += d.abs();
    }
    Ok(((se / n).sqrt(), ae / n))
}

/// Thresholds `0.00, 0.01, …, 1.00`.
pub fn fmax_thresholds() -> impl Iterator<Item = f64> {
    (0..=100).map(|i| i as f64 / 100.0)
}

/// Chain-centric maximum F-score over the threshold grid.
///
/// A class is predicted at `τ` when its score is at least `τ` and positive.
/// Precision averages over chains with a prediction, recall over chains
/// with a true label.
pub fn fmax(scores: &[Vec<f64>], labels: &[Vec<bool>]) -> Result<f64> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::input(format!("fmax over {} score rows and {} label rows", scores.len(), labels.len())));
    }
    if let Some(k) = scores.iter().zip(labels).position(|(s, l)| s.len() != l.len()) {
        return Err(Error::input(format!("chain {k}: {} scores for {} classes", scores[k].len(), labels[k].len())));
    }
    let truths: Vec<usize> = labels.iter().map(|l| l.iter().filter(|&&b| b).count()).collect();
    let labelled = truths.iter().filter(|&&t| t > 0).count();
    if labelled == 0 {
        return Err(Error::input("fmax needs at least one chain with a true label"));
    }
    let mut best = 0.0f64;
    for tau in fmax_thresholds() {
        let (mut p_sum, mut p_n, mut r_sum) = (0.0, 0usize, 0.0);
        for ((s, l), &truth) in scores.iter().zip(labels).zip(&truths) {
            let (mut tp, mut predicted) = (0usize, 0usize);
            for (&v, &b) in s.iter().zip(l) {
                if v >= tau && v > 0.0 {
                    predicted += 1;
                    tp += usize::from(b);
                }
            }
            if predicted > 0 {
                p_sum += tp as f64 / predicted as f64;
                p_n += 1;
            }
            if truth > 0 {
                r_sum += tp as f64 / truth as f64;
            }
        }
        if p_n == 0 {
            continue;
        }
        let p = p_sum / p_n as f64;
        let r = r_sum / labelled as f64;
        if p + r > 0.0 {
            best = best.max(2.0 * p * r / (p + r));
        }
    }
    Ok(best)
}

/// Metrics of one task; `count` is samples (affinity) or chains (property).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskMetrics {
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mae: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fmax: Option<f64>,
}

/// Only tasks with at least one labelled sample appear.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetricReport {
    pub tasks: BTreeMap<TaskId, TaskMetrics>,
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricRecord {
    pub epoch: usize,
    pub split: String,
    pub task: String,
    pub metric: String,
    pub value: f64,
}

/// Selection rule recorded in run metadata.
pub const SELECTION_RULE: &str = "mean over reported tasks of fmax (property) and 1/(1+rmse) (affinity); higher is better";

impl MetricReport {
    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn records(&self, epoch: usize, split: &str) -> Vec<MetricRecord> {
        let mut out = Vec::new();
        for (task, m) in &self.tasks {
            for (name, v) in [("rmse", m.rmse), ("mae", m.mae), ("fmax", m.fmax)] {
                if let Some(value) = v {
                    out.push(MetricRecord {
                        epoch,
                        split: split.into(),
                        task: task.name().into(),
                        metric: name.into(),
                        value,
                    });
                }
            }
        }
        out
    }

    /// Mean of normalized per-task metrics in `[0, 1]`; `None` when empty.
    pub fn selection_score(&self) -> Option<f64> {
        let scores: Vec<f64> = self
            .tasks
            .values()
            .filter_map(|m| m.fmax.or(m.rmse.map(|r| 1.0 / (1.0 + r))))
            .collect();
        (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}
