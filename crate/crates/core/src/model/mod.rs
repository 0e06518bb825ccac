//! The encoder, readouts and task heads, bundled with their parameters.

mod config;
mod encoder;
mod params;
mod readout;

use std::collections::BTreeMap;
use std::path::Path;

use numcore::{checkpoint, DType, ParamStore, Scalar, Tape, Var};
use serde::{Deserialize, Serialize};

pub use config::{ModelConfig, NormKind, ReadoutKind, RelationMode};
pub use encoder::{encode, Encoded, GraphInputs, Mode, NormStats};
pub use params::{init_params, linear, resolve_ids, LayerParams, Mlp, ParamIds};
pub use readout::{head, readout, Pooled};

use crate::error::{read_to_string, write_file, Error, Result};
use crate::graph::{build_graph, HeteroGraph};
use crate::structio::ComplexRecord;
use crate::tasks::TaskId;

/// Post-sigmoid class probabilities and affinity estimates of one complex.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionBundle {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lba: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ppa: Option<f64>,
    /// chain id → task → per-class probability.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub chains: BTreeMap<String, BTreeMap<TaskId, Vec<f64>>>,
}

impl PredictionBundle {
    pub fn affinity(&self, task: TaskId) -> Option<f64> {
        match task {
            TaskId::Lba => self.lba,
            TaskId::Ppa => self.ppa,
            _ => None,
        }
    }
}

/// Head outputs recorded on a tape: `[1, 1]` affinities and `[1, k]`
/// property logits per chain.
#[derive(Debug, Clone)]
pub struct Outputs<T> {
    pub encoded: Encoded<T>,
    pub affinity: BTreeMap<TaskId, Var>,
    pub property: BTreeMap<TaskId, Vec<(String, Var)>>,
}

#[derive(Debug, Clone)]
pub struct HeMeNet<T: Scalar> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub ids: ParamIds,
}

/// Model description stored next to every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSidecar {
    pub format: String,
    pub dtype: String,
    pub config: ModelConfig,
    /// Last completed training epoch, for resuming.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<usize>,
}

impl ModelSidecar {
    pub fn read(path: &Path) -> Result<Self> {
        let side: ModelSidecar = crate::structio::from_json_str(&read_to_string(path)?)?;
        if side.format != SIDECAR_FORMAT {
            return Err(Error::config(format!("unknown model format {:?}", side.format)));
        }
        Ok(side)
    }
}

const SIDECAR_FORMAT: &str = "hemenet-model-v1";

impl<T: Scalar> HeMeNet<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let (store, ids) = init_params(&config, seed)?;
        Ok(Self { config, store, ids })
    }

    pub fn from_store(config: ModelConfig, store: ParamStore<T>) -> Result<Self> {
        let ids = resolve_ids(&config, &store)?;
        Ok(Self { config, store, ids })
    }

    /// Same parameters in another precision.
    pub fn cast<U: Scalar>(&self) -> HeMeNet<U> {
        HeMeNet {
            config: self.config.clone(),
            store: self.store.cast(),
            ids: self.ids.clone(),
        }
    }

    pub fn graph(&self, rec: &ComplexRecord) -> Result<HeteroGraph> {
        build_graph(rec, &self.config.graph)
    }

    pub fn inputs(&self, g: &HeteroGraph) -> GraphInputs {
        GraphInputs::new(g, self.config.relations)
    }

    pub fn prepare(&self, rec: &ComplexRecord) -> Result<GraphInputs> {
        Ok(self.inputs(&self.graph(rec)?))
    }

    pub fn encode(&self, tape: &mut Tape<T>, inputs: &GraphInputs, mode: Mode) -> Result<Encoded<T>> {
        encode(&self.config, &self.store, &self.ids, tape, inputs, mode)
    }

    /// Encodes once and evaluates the heads of `tasks`. Property tasks run
    /// once per chain accepted by `chain_filter`.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        inputs: &GraphInputs,
        tasks: &[TaskId],
        chain_filter: impl Fn(TaskId, &str) -> bool,
        mode: Mode,
    ) -> Result<Outputs<T>> {
        let encoded = self.encode(tape, inputs, mode)?;
        let mut affinity = BTreeMap::new();
        let mut property: BTreeMap<TaskId, Vec<(String, Var)>> = BTreeMap::new();
        for &task in tasks {
            if task.is_affinity() {
                let pooled = readout(&self.config, &self.store, &self.ids, tape, encoded.features, &inputs.all_nodes(), task)?;
                affinity.insert(task, head(&self.store, &self.ids, tape, pooled.feature, task)?);
            } else {
                let mut per_chain = Vec::new();
                for (chain, scope) in inputs.chains.iter().filter(|(c, _)| chain_filter(task, c)) {
                    let pooled = readout(&self.config, &self.store, &self.ids, tape, encoded.features, scope, task)?;
                    per_chain.push((chain.clone(), head(&self.store, &self.ids, tape, pooled.feature, task)?));
                }
                property.insert(task, per_chain);
            }
        }
        Ok(Outputs {
            encoded,
            affinity,
            property,
        })
    }

    /// Evaluation-mode predictions for `tasks` (all chains for property tasks).
    pub fn predict(&self, inputs: &GraphInputs, tasks: &[TaskId]) -> Result<PredictionBundle> {
        if inputs.chains.is_empty() {
            if let Some(t) = tasks.iter().find(|t| !t.is_affinity()) {
                return Err(Error::input(format!("{t} requested for {} which has no chains", inputs.complex_id)));
            }
        }
        let mut tape = Tape::inference();
        let out = self.forward(&mut tape, inputs, tasks, |_, _| true, Mode::Eval)?;
        let mut bundle = PredictionBundle::default();
        for (task, var) in &out.affinity {
            let v = tape.value(*var).data()[0].as_f64();
            match task {
                TaskId::Lba => bundle.lba = Some(v),
                _ => bundle.ppa = Some(v),
            }
        }
        for (task, chains) in &out.property {
            for (chain, var) in chains {
                let probs = tape
                    .value(*var)
                    .data()
                    .iter()
                    .map(|z| {
                        let z = z.as_f64();
                        if z >= 0.0 {
                            1.0 / (1.0 + (-z).exp())
                        } else {
                            z.exp() / (1.0 + z.exp())
                        }
                    })
                    .collect();
                bundle.chains.entry(chain.clone()).or_default().insert(*task, probs);
            }
        }
        Ok(bundle)
    }

    /// Attention weights of `task` over every node (zero outside `scope`),
    /// one row per head. Empty for readouts without attention.
    pub fn attention_weights(&self, inputs: &GraphInputs, scope: &[usize], task: TaskId) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::inference();
        let enc = self.encode(&mut tape, inputs, Mode::Eval)?;
        let pooled = readout(&self.config, &self.store, &self.ids, &mut tape, enc.features, scope, task)?;
        Ok(pooled
            .attention
            .iter()
            .map(|&a| {
                let mut full = vec![0.0; inputs.nodes];
                for (&i, v) in scope.iter().zip(tape.value(a).data()) {
                    full[i] = v.as_f64();
                }
                full
            })
            .collect())
    }

    /// Folds batch statistics into the running buffers of each batch-norm layer.
    pub fn update_running_stats(&mut self, stats: &[NormStats<T>]) -> Result<()> {
        let m = T::from_f64_lossy(self.config.bn_momentum);
        for s in stats {
            let Some((mean_id, var_id)) = self.ids.layers[s.layer].norm.running else {
                continue;
            };
            for (id, batch) in [(mean_id, &s.mean), (var_id, &s.var)] {
                let cur = self.store.value(id);
                let data = cur
                    .data()
                    .iter()
                    .zip(batch)
                    .map(|(&r, &b)| (T::one() - m) * r + m * b)
                    .collect();
                let next = numcore::Tensor::new(cur.shape().to_vec(), data)?;
                self.store.set_value(id, next)?;
            }
        }
        Ok(())
    }

    pub fn sidecar(&self) -> ModelSidecar {
        ModelSidecar {
            format: SIDECAR_FORMAT.into(),
            dtype: T::DTYPE.name().into(),
            config: self.config.clone(),
            epoch: None,
        }
    }

    /// Writes the tensors (with optimizer state) to `path` and the model
    /// description to `sidecar`.
    pub fn save(&self, path: &Path, sidecar: &Path) -> Result<()> {
        self.save_epoch(path, sidecar, None)
    }

    pub fn save_epoch(&self, path: &Path, sidecar: &Path, epoch: Option<usize>) -> Result<()> {
        write_file(path, checkpoint::encode(&checkpoint::store_entries(&self.store)))?;
        let side = ModelSidecar { epoch, ..self.sidecar() };
        let text = serde_json::to_string_pretty(&side).expect("sidecar serializes");
        write_file(sidecar, text + "\n")
    }

    /// Loads a checkpoint whose sidecar must describe the same model as
    /// `expected`, when given.
    pub fn load(path: &Path, sidecar: &Path, expected: Option<&ModelConfig>) -> Result<Self> {
        let side = ModelSidecar::read(sidecar)?;
        if let Some(exp) = expected {
            if exp != &side.config {
                return Err(Error::config(format!(
                    "checkpoint {} was trained with a different model configuration",
                    path.display()
                )));
            }
        }
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let dtype = checkpoint::peek_dtype(&bytes)?;
        let mut model = Self::new(side.config, 0)?;
        match dtype {
            DType::F64 => {
                let entries = checkpoint::decode::<f64>(&bytes)?;
                let mut store = model.store.cast::<f64>();
                checkpoint::restore_entries(&mut store, entries)?;
                model.store = store.cast();
            }
            DType::F32 => {
                let entries = checkpoint::decode::<f32>(&bytes)?;
                let mut store = model.store.cast::<f32>();
                checkpoint::restore_entries(&mut store, entries)?;
                model.store = store.cast();
            }
        }
        Ok(model)
    }

    /// Pearson correlation between the task queries; zero-variance queries
    /// correlate 0 with everything but themselves.
    pub fn prompt_correlation(&self) -> Result<[[f64; 6]; 6]> {
        let id = self
            .ids
            .readout
            .queries
            .ok_or_else(|| Error::config("the sum readout has no task prompts"))?;
        let q = self.store.value(id).to_f64_vec();
        let width = self.config.readout_dim();
        let rows: Vec<&[f64]> = q.chunks(width).collect();
        Ok(pearson_matrix(&rows))
    }
}

/// Symmetric Pearson matrix with unit diagonal.
pub fn pearson_matrix(rows: &[&[f64]]) -> [[f64; 6]; 6] {
    let centered: Vec<(Vec<f64>, f64)> = rows
        .iter()
        .map(|r| {
            let mean = r.iter().sum::<f64>() / r.len() as f64;
            let c: Vec<f64> = r.iter().map(|v| v - mean).collect();
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            (c, norm)
        })
        .collect();
    let mut out = [[0.0; 6]; 6];
    for i in 0..6 {
        out[i][i] = 1.0;
        for j in 0..i {
            let (a, na) = &centered[i];
            let (b, nb) = &centered[j];
            let r = if *na == 0.0 || *nb == 0.0 {
                log::warn!("zero-variance prompt for {} or {}", TaskId::ALL[i], TaskId::ALL[j]);
                0.0
            } else {
                (a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)).clamp(-1.0, 1.0)
            };
            out[i][j] = r;
            out[j][i] = r;
        }
    }
    out
}

#[cfg(test)]
mod tests;
