//! Heterogeneous multichannel message passing.

use std::collections::BTreeMap;
use std::sync::Arc;

use numcore::{ParamStore, Scalar, Tape, Tensor, Var};

use super::config::{ModelConfig, NormKind, RelationMode};
use super::params::{LayerParams, ParamIds};
use crate::error::Result;
use crate::geom::{centroids, relation_features, scaled_messages, EdgeIndex};
use crate::graph::{HeteroGraph, NodeKind, RelationKind};
use crate::structio::{ElementClass, ResidueType, MAX_CHANNELS};

/// Whether norm layers use per-graph statistics or their frozen buffers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Index data of one graph, prepared once and shared by every forward pass.
#[derive(Debug, Clone)]
pub struct GraphInputs {
    pub complex_id: String,
    pub nodes: usize,
    /// `[n, C, 3]`, zero in unoccupied channels.
    pub coords: Vec<f64>,
    pub mask: Arc<Vec<bool>>,
    pub counts: Vec<usize>,
    /// Row of each node in the stacked `[residue; element]` embedding table.
    pub tokens: Arc<[usize]>,
    /// All edges, grouped by relation kind in [`RelationKind::ALL`] order.
    pub edges: EdgeIndex,
    /// `(kind, start, len)` of every nonempty relation block in `edges`.
    pub blocks: Vec<(RelationKind, usize, usize)>,
    /// Per-block dst indices, aligned with `blocks`.
    pub block_dst: Vec<Arc<[usize]>>,
    /// Parameter slot of each edge (its kind, or 0 when homogeneous).
    pub edge_slots: Arc<[usize]>,
    /// `1 / Σ_r |N_r(i)|` per node.
    pub inv_degree: Vec<f64>,
    pub chains: BTreeMap<String, Vec<usize>>,
}

impl GraphInputs {
    pub fn new(g: &HeteroGraph, relations: RelationMode) -> Self {
        let n = g.len();
        let tokens = g
            .nodes
            .iter()
            .map(|node| match &node.kind {
                NodeKind::Residue { residue_type, .. } => residue_type.index(),
                NodeKind::LigandAtom { element } => ResidueType::COUNT + element.class().index(),
            })
            .collect();
        let mut classes = vec![ElementClass::Other.index(); n * MAX_CHANNELS];
        for (i, node) in g.nodes.iter().enumerate() {
            for (c, e) in node.channel_elements.iter().enumerate() {
                classes[i * MAX_CHANNELS + c] = e.class().index();
            }
        }
        let counts = g.channel_counts();
        let (mut src, mut dst, mut slots) = (Vec::new(), Vec::new(), Vec::new());
        let mut blocks = Vec::new();
        let mut block_dst = Vec::new();
        let mut degree = vec![0usize; n];
        for kind in RelationKind::ALL {
            let list = g.edges_of(kind);
            if list.is_empty() {
                continue;
            }
            blocks.push((kind, src.len(), list.len()));
            block_dst.push(list.iter().map(|&(_, d)| d).collect());
            for &(s, d) in list {
                src.push(s);
                dst.push(d);
                degree[d] += 1;
                slots.push(match relations {
                    RelationMode::Hetero => kind.index(),
                    RelationMode::Homogeneous => 0,
                });
            }
        }
        Self {
            complex_id: g.complex_id.clone(),
            nodes: n,
            coords: g.padded_coords(),
            mask: Arc::new(g.padded_mask()),
            edges: EdgeIndex::new(src, dst, &classes, &counts),
            counts,
            tokens,
            blocks,
            block_dst,
            edge_slots: slots.into(),
            inv_degree: degree.iter().map(|&k| if k == 0 { 0.0 } else { 1.0 / k as f64 }).collect(),
            chains: g.chain_masks(),
        }
    }

    pub fn all_nodes(&self) -> Vec<usize> {
        (0..self.nodes).collect()
    }
}

/// Batch statistics observed by one batch-norm layer.
#[derive(Debug, Clone)]
pub struct NormStats<T> {
    pub layer: usize,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct Encoded<T> {
    /// Concatenated layer outputs `[n, L·d]`.
    pub features: Var,
    pub layer_outputs: Vec<Var>,
    /// Final coordinates `[n, C, 3]`.
    pub coords: Var,
    pub norm_stats: Vec<NormStats<T>>,
}

fn norm<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    config: &ModelConfig,
    layer: &LayerParams,
    index: usize,
    x: Var,
    mode: Mode,
    stats: &mut Vec<NormStats<T>>,
) -> Result<Var> {
    let eps = T::from_f64_lossy(config.norm_eps);
    let gamma = tape.param(store, layer.norm.gamma);
    let beta = tape.param(store, layer.norm.beta);
    match (config.norm, mode, layer.norm.running) {
        (NormKind::Layer, _, _) => Ok(tape.layer_norm(x, gamma, beta, eps)?),
        (NormKind::Batch, Mode::Train, _) | (NormKind::Batch, Mode::Eval, None) => {
            let (y, mean, var) = tape.batch_norm(x, gamma, beta, eps)?;
            stats.push(NormStats { layer: index, mean, var });
            Ok(y)
        }
        (NormKind::Batch, Mode::Eval, Some((mean_id, var_id))) => {
            let d = config.hidden;
            let mean = tape.constant(store.value(mean_id).reshape([1, d])?);
            let inv: Vec<T> = store
                .value(var_id)
                .data()
                .iter()
                .map(|&v| T::one() / (v + eps).sqrt())
                .collect();
            let inv = tape.constant(Tensor::new([1, d], inv)?);
            let centered = tape.sub(x, mean)?;
            let xhat = tape.mul(centered, inv)?;
            let scaled = tape.mul(xhat, gamma)?;
            Ok(tape.add(scaled, beta)?)
        }
    }
}

/// Runs every layer and returns the concatenated node features.
pub fn encode<T: Scalar>(
    config: &ModelConfig,
    store: &ParamStore<T>,
    ids: &ParamIds,
    tape: &mut Tape<T>,
    inputs: &GraphInputs,
    mode: Mode,
) -> Result<Encoded<T>> {
    let n = inputs.nodes;
    let d = config.hidden;
    let e = inputs.edges.len();
    let eps = T::from_f64_lossy(config.geom.eps);

    let res = tape.param(store, ids.embed_residue);
    let elem = tape.param(store, ids.embed_element);
    let table = tape.concat(&[res, elem], 0)?;
    let mut h = tape.index_select(table, inputs.tokens.clone())?;
    let coords0 = Tensor::from_f64([n, MAX_CHANNELS, 3], &inputs.coords)?;
    let mut x = tape.constant(coords0);
    let attributes = tape.param(store, ids.attributes);
    let inv_degree = tape.constant(Tensor::from_f64([n, 1, 1], &inputs.inv_degree)?);

    let mut outputs = Vec::with_capacity(config.layers);
    let mut stats = Vec::new();
    for (l, layer) in ids.layers.iter().enumerate() {
        // invariant messages
        let relation = relation_features(tape, x, inputs.mask.clone(), attributes, &inputs.edges, eps)?;
        let h_dst = tape.index_select(h, inputs.edges.dst.clone())?;
        let h_src = tape.index_select(h, inputs.edges.src.clone())?;
        let table = tape.param(store, layer.edge_embed);
        let e_r = tape.index_select(table, inputs.edge_slots.clone())?;
        let m_in = tape.concat(&[h_dst, h_src, relation, e_r], 1)?;
        let m = layer.phi_m.apply(tape, store, m_in)?;

        let w_all = tape.param(store, layer.relation_w);
        let mut agg: Option<Var> = None;
        let homogeneous = config.relations == RelationMode::Homogeneous;
        let groups: Vec<(usize, usize, usize, Arc<[usize]>)> = if homogeneous {
            vec![(0, 0, e, inputs.edges.dst.clone())]
        } else {
            inputs
                .blocks
                .iter()
                .zip(&inputs.block_dst)
                .map(|(&(kind, start, len), dst)| (kind.index(), start, len, dst.clone()))
                .collect()
        };
        for (slot, start, len, dst) in groups {
            let block = if len == e { m } else { tape.narrow(m, 0, start, len)? };
            let summed = tape.index_add(block, dst, n)?;
            let w = tape.narrow(w_all, 0, slot, 1)?;
            let w = tape.reshape(w, [d, d])?;
            let projected = tape.matmul(summed, w)?;
            agg = Some(match agg {
                Some(a) => tape.add(a, projected)?,
                None => projected,
            });
        }
        let agg = agg.expect("every graph has self loops");
        let upd = layer.phi_h.apply(tape, store, agg)?;
        let upd = norm(tape, store, config, layer, l, upd, mode, &mut stats)?;
        let upd = tape.silu(upd)?;
        let mut h_next = tape.add(h, upd)?;
        if config.coord_leak != 0.0 {
            let first = tape.narrow(x, 2, 0, 1)?;
            let summed = tape.sum_axis(first, 1, false)?;
            let leak = tape.scale(summed, T::from_f64_lossy(config.coord_leak))?;
            h_next = tape.add(h_next, leak)?;
        }

        // equivariant messages
        let scales = layer.phi_x.apply(tape, store, m)?;
        let cent = centroids(tape, x, &inputs.mask)?;
        let msgs = scaled_messages(tape, x, cent, scales, &inputs.edges)?;
        let w_r = tape.param(store, layer.relation_scale);
        let w_r = tape.reshape(w_r, [config.relation_slots(), 1])?;
        let w_e = tape.index_select(w_r, inputs.edge_slots.clone())?;
        let w_e = tape.reshape(w_e, [e, 1, 1])?;
        let weighted = tape.mul(msgs, w_e)?;
        let pooled = tape.index_add(weighted, inputs.edges.dst.clone(), n)?;
        let delta = tape.mul(pooled, inv_degree)?;
        x = tape.add(x, delta)?;

        h = h_next;
        outputs.push(h);
    }
    let features = if outputs.len() == 1 {
        outputs[0]
    } else {
        tape.concat(&outputs, 1)?
    };
    Ok(Encoded {
        features,
        layer_outputs: outputs,
        coords: x,
        norm_stats: stats,
    })
}
