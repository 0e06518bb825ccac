//! Graph and chain pooling ahead of the task heads.

use std::sync::Arc;

use numcore::{ParamStore, Scalar, Tape, Var};

use super::config::{ModelConfig, ReadoutKind};
use super::params::{linear, ParamIds};
use crate::error::{Error, Result};
use crate::tasks::TaskId;

/// Pooled feature `[1, d_L]` plus, for the task-aware readout, the
/// attention weights of each head over the scope (`[1, |scope|]`).
#[derive(Debug, Clone)]
pub struct Pooled {
    pub feature: Var,
    pub attention: Vec<Var>,
}

fn query<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, ids: &ParamIds, task: TaskId) -> Result<Var> {
    let q = ids
        .readout
        .queries
        .ok_or_else(|| Error::config("this readout has no task queries"))?;
    let q = tape.param(store, q);
    Ok(tape.narrow(q, 0, task.index(), 1)?)
}

/// Pools the rows `scope` of `features` for `task`.
pub fn readout<T: Scalar>(
    config: &ModelConfig,
    store: &ParamStore<T>,
    ids: &ParamIds,
    tape: &mut Tape<T>,
    features: Var,
    scope: &[usize],
    task: TaskId,
) -> Result<Pooled> {
    if scope.is_empty() {
        return Err(Error::input(format!("{task} readout over an empty node set")));
    }
    let index: Arc<[usize]> = scope.into();
    let rows = tape.index_select(features, index)?;
    match config.readout {
        ReadoutKind::Sum => Ok(Pooled {
            feature: tape.sum_axis(rows, 0, true)?,
            attention: Vec::new(),
        }),
        ReadoutKind::WeightedPrompt => {
            let q = query(tape, store, ids, task)?;
            let weighted = tape.mul(rows, q)?;
            Ok(Pooled {
                feature: tape.sum_axis(weighted, 0, true)?,
                attention: Vec::new(),
            })
        }
        ReadoutKind::TaskAware => task_aware(config, store, ids, tape, rows, task),
    }
}

fn task_aware<T: Scalar>(
    config: &ModelConfig,
    store: &ParamStore<T>,
    ids: &ParamIds,
    tape: &mut Tape<T>,
    rows: Var,
    task: TaskId,
) -> Result<Pooled> {
    let att = ids.readout.attention.expect("task-aware readout has attention parameters");
    let d_l = config.readout_dim();
    let d_head = config.head_dim();
    let m = tape.shape(rows)[0];
    let q = query(tape, store, ids, task)?;
    let keys = linear(tape, store, rows, att.w_k, None)?;
    let values = linear(tape, store, rows, att.w_v, None)?;
    let inv_sqrt = T::from_f64_lossy(1.0 / (d_head as f64).sqrt());
    let mut heads = Vec::with_capacity(config.heads);
    let mut attention = Vec::with_capacity(config.heads);
    for k in 0..config.heads {
        let q_k = tape.narrow(q, 1, k * d_head, d_head)?;
        let key_k = tape.narrow(keys, 1, k * d_head, d_head)?;
        let val_k = tape.narrow(values, 1, k * d_head, d_head)?;
        let key_t = tape.transpose_last(key_k)?;
        let scores = tape.matmul(q_k, key_t)?;
        let scores = tape.scale(scores, inv_sqrt)?;
        let alpha = tape.softmax(scores)?;
        debug_assert_eq!(tape.shape(alpha), &[1, m]);
        heads.push(tape.matmul(alpha, val_k)?);
        attention.push(alpha);
    }
    let pooled = if heads.len() == 1 { heads[0] } else { tape.concat(&heads, 1)? };
    let shortcut = linear(tape, store, q, att.w_q, Some(att.b_q))?;
    let z = tape.add(pooled, shortcut)?;
    let g = tape.param(store, att.ln_gamma);
    let b = tape.param(store, att.ln_beta);
    let z = tape.layer_norm(z, g, b, T::from_f64_lossy(1e-5))?;
    let feature = att.ffn.apply(tape, store, z)?;
    debug_assert_eq!(tape.shape(feature), &[1, d_l]);
    Ok(Pooled { feature, attention })
}

/// Task head `Linear → SiLU → Linear`; logits for property tasks.
pub fn head<T: Scalar>(store: &ParamStore<T>, ids: &ParamIds, tape: &mut Tape<T>, pooled: Var, task: TaskId) -> Result<Var> {
    ids.heads[task.index()].apply(tape, store, pooled)
}
