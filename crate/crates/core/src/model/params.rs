//! Named parameter layout and initialization.
//!
//! | name | shape |
//! |---|---|
//! | `embed.residue`, `embed.element` | `[21, d]`, `[13, d]` |
//! | `geom.attributes` | `[13, d_A]` |
//! | `layer{l}.edge_embed` | `[R', e]` |
//! | `layer{l}.phi_m.*` | `2d + d_A² + e → d → d` |
//! | `layer{l}.phi_x.*` | `d → d → 14` |
//! | `layer{l}.phi_h.*` | `d → d → d` |
//! | `layer{l}.relation_w` | `[R', d, d]` |
//! | `layer{l}.relation_scale` | `[R']` |
//! | `layer{l}.norm.{gamma,beta}` | `[d]` (+ running buffers for batch norm) |
//! | `readout.queries` | `[6, d_L]` |
//! | `readout.{w_k,w_v,w_q}`, `readout.b_q` | `[d_L, d_L]`, `[d_L]` |
//! | `readout.ffn.*` | layer norm, `d_L → d_L → d_L` |
//! | `head.{task}.*` | `d_L → d → out` |
//!
//! `R'` is 6, or 1 under homogeneous relations.

use numcore::{ParamId, ParamStore, Scalar, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{ModelConfig, NormKind, ReadoutKind};
use crate::error::Result;
use crate::structio::{ElementClass, ResidueType, MAX_CHANNELS};
use crate::tasks::TaskId;

/// Two-layer perceptron `silu(x W1 + b1) W2 + b2`.
#[derive(Debug, Clone, Copy)]
pub struct Mlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl Mlp {
    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = linear(tape, store, x, self.w1, Some(self.b1))?;
        let h = tape.silu(h)?;
        linear(tape, store, h, self.w2, Some(self.b2))
    }
}

pub fn linear<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    x: Var,
    w: ParamId,
    b: Option<ParamId>,
) -> Result<Var> {
    let wv = tape.param(store, w);
    let y = tape.matmul(x, wv)?;
    Ok(match b {
        Some(b) => {
            let bv = tape.param(store, b);
            tape.add(y, bv)?
        }
        None => y,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct NormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running: Option<(ParamId, ParamId)>,
}

#[derive(Debug, Clone)]
pub struct LayerParams {
    pub edge_embed: ParamId,
    pub phi_m: Mlp,
    pub phi_x: Mlp,
    pub phi_h: Mlp,
    pub relation_w: ParamId,
    pub relation_scale: ParamId,
    pub norm: NormParams,
}

#[derive(Debug, Clone)]
pub struct ReadoutParams {
    pub queries: Option<ParamId>,
    pub attention: Option<AttentionParams>,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_q: ParamId,
    pub b_q: ParamId,
    pub ln_gamma: ParamId,
    pub ln_beta: ParamId,
    pub ffn: Mlp,
}

#[derive(Debug, Clone)]
pub struct ParamIds {
    pub embed_residue: ParamId,
    pub embed_element: ParamId,
    pub attributes: ParamId,
    pub layers: Vec<LayerParams>,
    pub readout: ReadoutParams,
    /// Indexed by [`TaskId::index`].
    pub heads: Vec<Mlp>,
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn glorot(&mut self, rows: usize, cols: usize) -> Vec<f64> {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        (0..rows * cols).map(|_| self.rng.gen_range(-a..a)).collect()
    }

    fn normal(&mut self, n: usize, std: f64) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                z * std
            })
            .collect()
    }
}

fn put<T: Scalar>(store: &mut ParamStore<T>, name: String, shape: &[usize], data: Vec<f64>) -> Result<ParamId> {
    Ok(store.insert(name, Tensor::from_f64(shape.to_vec(), &data)?)?)
}

fn mlp<T: Scalar>(
    store: &mut ParamStore<T>,
    init: &mut Init,
    prefix: &str,
    dims: [usize; 3],
) -> Result<Mlp> {
    let [i, h, o] = dims;
    Ok(Mlp {
        w1: put(store, format!("{prefix}.w1"), &[i, h], init.glorot(i, h))?,
        b1: put(store, format!("{prefix}.b1"), &[h], vec![0.0; h])?,
        w2: put(store, format!("{prefix}.w2"), &[h, o], init.glorot(h, o))?,
        b2: put(store, format!("{prefix}.b2"), &[o], vec![0.0; o])?,
    })
}

/// Builds a freshly initialized store for `config`; the same seed always
/// yields the same values.
pub fn init_params<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<(ParamStore<T>, ParamIds)> {
    config.validate()?;
    let mut store = ParamStore::new();
    let mut init = Init {
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let d = config.hidden;
    let d_a = config.geom.attr_dim;
    let e = config.edge_dim;
    let slots = config.relation_slots();
    let d_l = config.readout_dim();

    let embed_residue = put(&mut store, "embed.residue".into(), &[ResidueType::COUNT, d], init.normal(ResidueType::COUNT * d, 1.0))?;
    let embed_element = put(&mut store, "embed.element".into(), &[ElementClass::COUNT, d], init.normal(ElementClass::COUNT * d, 1.0))?;
    let attributes = put(
        &mut store,
        "geom.attributes".into(),
        &[ElementClass::COUNT, d_a],
        init.normal(ElementClass::COUNT * d_a, 1.0),
    )?;

    let mut layers = Vec::with_capacity(config.layers);
    for l in 0..config.layers {
        let p = format!("layer{l}");
        let edge_embed = put(&mut store, format!("{p}.edge_embed"), &[slots, e], init.normal(slots * e, 1.0))?;
        let phi_m = mlp(&mut store, &mut init, &format!("{p}.phi_m"), [2 * d + d_a * d_a + e, d, d])?;
        let phi_x = mlp(&mut store, &mut init, &format!("{p}.phi_x"), [d, d, MAX_CHANNELS])?;
        let phi_h = mlp(&mut store, &mut init, &format!("{p}.phi_h"), [d, d, d])?;
        let relation_w = {
            let data: Vec<f64> = (0..slots).flat_map(|_| init.glorot(d, d)).collect();
            put(&mut store, format!("{p}.relation_w"), &[slots, d, d], data)?
        };
        let relation_scale = put(&mut store, format!("{p}.relation_scale"), &[slots], vec![0.1; slots])?;
        let gamma = put(&mut store, format!("{p}.norm.gamma"), &[d], vec![1.0; d])?;
        let beta = put(&mut store, format!("{p}.norm.beta"), &[d], vec![0.0; d])?;
        let running = match config.norm {
            NormKind::Batch => Some((
                store.insert_buffer(format!("{p}.norm.running_mean"), Tensor::zeros([d])?)?,
                store.insert_buffer(format!("{p}.norm.running_var"), Tensor::ones([d])?)?,
            )),
            NormKind::Layer => None,
        };
        layers.push(LayerParams {
            edge_embed,
            phi_m,
            phi_x,
            phi_h,
            relation_w,
            relation_scale,
            norm: NormParams { gamma, beta, running },
        });
    }

    let queries = match config.readout {
        ReadoutKind::Sum => None,
        ReadoutKind::TaskAware | ReadoutKind::WeightedPrompt => Some(put(
            &mut store,
            "readout.queries".into(),
            &[TaskId::ALL.len(), d_l],
            init.normal(TaskId::ALL.len() * d_l, 1.0),
        )?),
    };
    let attention = match config.readout {
        ReadoutKind::TaskAware => Some(AttentionParams {
            w_k: put(&mut store, "readout.w_k".into(), &[d_l, d_l], init.glorot(d_l, d_l))?,
            w_v: put(&mut store, "readout.w_v".into(), &[d_l, d_l], init.glorot(d_l, d_l))?,
            w_q: put(&mut store, "readout.w_q".into(), &[d_l, d_l], init.glorot(d_l, d_l))?,
            b_q: put(&mut store, "readout.b_q".into(), &[d_l], vec![0.0; d_l])?,
            ln_gamma: put(&mut store, "readout.ffn.ln_gamma".into(), &[d_l], vec![1.0; d_l])?,
            ln_beta: put(&mut store, "readout.ffn.ln_beta".into(), &[d_l], vec![0.0; d_l])?,
            ffn: mlp(&mut store, &mut init, "readout.ffn", [d_l, d_l, d_l])?,
        }),
        _ => None,
    };

    let heads = TaskId::ALL
        .iter()
        .map(|&t| mlp(&mut store, &mut init, &format!("head.{t}"), [d_l, d, config.label_dims.dim(t)]))
        .collect::<Result<Vec<_>>>()?;

    let ids = ParamIds {
        embed_residue,
        embed_element,
        attributes,
        layers,
        readout: ReadoutParams { queries, attention },
        heads,
    };
    Ok((store, ids))
}

/// Resolves the ids of an existing store built for `config`.
pub fn resolve_ids<T: Scalar>(config: &ModelConfig, store: &ParamStore<T>) -> Result<ParamIds> {
    // Layout is a pure function of the config, so a scratch store built
    // with any seed has the same names in the same order.
    let (scratch, ids) = init_params::<T>(config, 0)?;
    if scratch.len() != store.len() || scratch.ids().any(|id| store.id(scratch.name(id)) != Some(id)) {
        return Err(crate::Error::config("parameter layout does not match the model configuration"));
    }
    Ok(ids)
}
