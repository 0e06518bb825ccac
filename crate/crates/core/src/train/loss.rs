//! Masked multi-task objective.

use std::collections::BTreeMap;

use numcore::{Scalar, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::datasets::SampleLabels;
use crate::error::{Error, Result};
use crate::model::Outputs;
use crate::tasks::TaskId;

/// `λ` weighs classification against regression; `tasks` holds `λ_task`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda: f64,
    pub tasks: BTreeMap<TaskId, f64>,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            tasks: TaskId::ALL.into_iter().map(|t| (t, 1.0)).collect(),
        }
    }
}

impl LossWeights {
    pub fn task(&self, task: TaskId) -> f64 {
        self.tasks.get(&task).copied().unwrap_or(1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |w: f64| !(w >= 0.0 && w.is_finite());
        if bad(self.lambda) {
            return Err(Error::config(format!("loss weight lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if let Some((t, w)) = self.tasks.iter().find(|(_, &w)| bad(w)) {
            return Err(Error::config(format!("loss weight for {t} must be finite and >= 0, got {w}")));
        }
        Ok(())
    }
}

/// Total loss plus the weighted contribution of each labelled task.
#[derive(Debug, Clone)]
pub struct LossTerms {
    pub total: Var,
    pub per_task: BTreeMap<TaskId, Var>,
}

/// Squared error for each labelled affinity and mean chain BCE for each
/// labelled property task. Tasks without labels add nothing to the tape.
pub fn multitask_loss<T: Scalar>(
    tape: &mut Tape<T>,
    outputs: &Outputs<T>,
    labels: &SampleLabels,
    weights: &LossWeights,
) -> Result<LossTerms> {
    let mut per_task = BTreeMap::new();
    for task in labels.tasks() {
        let term = if task.is_affinity() {
            let y = labels.affinity(task).expect("labelled affinity");
            let p = *outputs
                .affinity
                .get(&task)
                .ok_or_else(|| Error::input(format!("{task} is labelled but was not predicted")))?;
            let diff = tape.add_scalar(p, T::from_f64_lossy(-y))?;
            let sq = tape.mul(diff, diff)?;
            let sq = tape.sum(sq)?;
            tape.scale(sq, T::from_f64_lossy(weights.task(task)))?
        } else {
            let predicted = outputs.property.get(&task).map(Vec::as_slice).unwrap_or(&[]);
            let mut chain_terms = Vec::new();
            for (chain, target) in labels.chains_with(task) {
                let logits = predicted
                    .iter()
                    .find(|(c, _)| c == chain)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| Error::input(format!("{task} is labelled on chain {chain} but was not predicted")))?;
                let target = Tensor::from_f64([1, target.dim()], &target.to_f64())?;
                chain_terms.push(tape.bce_with_logits(logits, &target)?);
            }
            let mut sum = chain_terms[0];
            for &t in &chain_terms[1..] {
                sum = tape.add(sum, t)?;
            }
            let scale = weights.lambda * weights.task(task) / chain_terms.len() as f64;
            tape.scale(sum, T::from_f64_lossy(scale))?
        };
        per_task.insert(task, term);
    }
    let mut terms = per_task.values().copied();
    let total = match terms.next() {
        Some(first) => terms.try_fold(first, |acc, t| tape.add(acc, t))?,
        None => return Err(Error::input("sample carries no labels for the selected tasks")),
    };
    Ok(LossTerms { total, per_task })
}
