//! The `hemenet` command line: ingest → annotate → split → train → eval,
//! plus ablations, the equivariance suite and prompt correlations.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use numcore::{OptimizerKind, Scalar};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{
    assemble_splits, build_uniprot_table, generate_synthetic, join_samples, label_sample, parse_affinity_table,
    parse_cluster_table, parse_labels, synthetic_tables, write_labels, Sample, Split, SplitAssignment, SplitFractions,
    SyntheticConfig,
};
use crate::error::{read_to_string, write_file, Error, Result};
use crate::graph::{Geometry, SpatialRule};
use crate::model::{HeMeNet, ModelConfig, ModelSidecar, NormKind, ReadoutKind, RelationMode};
use crate::structio::{
    filter_max_atoms, parse_canonical_json, parse_ndjson, parse_pdb_subset, write_ndjson, write_pdb, ComplexRecord,
    DEFAULT_MAX_ATOMS,
};
use crate::tasks::{LabelDims, TaskId};
use crate::train::{evaluate, fit, prepare_samples, MetricRecord, MetricReport, TrainConfig, SELECTION_RULE};
use crate::verify::{check_equivariance, EquivarianceConfig};

#[derive(Debug, Parser)]
#[command(name = "hemenet", version, about = "Equivariant multi-task learning on full-atom protein complexes")]
pub struct Cli {
    /// JSON run configuration (or the run.json of an earlier run); flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for graph building and evaluation.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Global seed; falls back to the config file, then HEMENET_SEED, then 0.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert PDB files (or canonical JSON records) to an NDJSON record file.
    Ingest(IngestArgs),
    /// Attach UniProt annotations and affinities to records.
    Annotate(AnnotateArgs),
    /// Assign train/val/test without cluster leakage.
    Split(SplitArgs),
    /// Write a synthetic corpus: PDB files plus annotation, affinity and cluster tables.
    GenSynthetic(GenArgs),
    /// Train a model and write checkpoints and metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Train one variant per alternative readout, relation mode and geometry.
    Ablate(AblateArgs),
    /// Run the numerical invariance and equivariance checks.
    CheckEquivariance(EquivArgs),
    /// Pearson correlation between the learned task prompts.
    PromptCorr(PromptArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Files or directories (`.pdb`, `.ent`, `.json`).
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Records with more heavy atoms are dropped.
    #[arg(long, default_value_t = DEFAULT_MAX_ATOMS)]
    pub max_atoms: usize,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    #[arg(long)]
    pub records: PathBuf,
    /// TSV `uniprot_id  task  index`; repeatable.
    #[arg(long = "annotations")]
    pub annotations: Vec<PathBuf>,
    /// TSV `complex_id  task  value`.
    #[arg(long)]
    pub affinities: Option<PathBuf>,
    /// `ec=538,mf=490,bp=1944,cc=321` or one number for all four.
    #[arg(long, value_parser = LabelDims::parse)]
    pub label_dims: Option<LabelDims>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// TSV `chain_key  cluster_id` with chain keys `{complex}_{chain}`.
    #[arg(long)]
    pub clusters: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Provenance document; defaults to `<out stem>.provenance.json`.
    #[arg(long)]
    pub provenance: Option<PathBuf>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub samples: usize,
    #[arg(long, default_value_t = 12)]
    pub max_residues: usize,
    #[arg(long, value_parser = LabelDims::parse, default_value = "8")]
    pub label_dims: LabelDims,
    #[arg(long, default_value_t = 0.5)]
    pub full_fraction: f64,
    #[arg(long, default_value_t = 0.5)]
    pub cluster_fraction: f64,
}

/// Model knobs shared by training, ablation and the equivariance suite.
#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub edge_dim: Option<usize>,
    #[arg(long)]
    pub attr_dim: Option<usize>,
    #[arg(long)]
    pub readout: Option<ReadoutKind>,
    #[arg(long)]
    pub relations: Option<RelationMode>,
    #[arg(long)]
    pub norm: Option<NormKind>,
    #[arg(long)]
    pub geometry: Option<Geometry>,
    /// `radius:R` (Å) or `knn:K`.
    #[arg(long, value_parser = SpatialRule::parse)]
    pub spatial: Option<SpatialRule>,
    #[arg(long, value_parser = LabelDims::parse)]
    pub label_dims: Option<LabelDims>,
    /// Test hook that breaks invariance on purpose.
    #[arg(long, hide = true)]
    pub coord_leak: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct OptimArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// `adam` or `sgd`.
    #[arg(long, value_parser = parse_optimizer)]
    pub optimizer: Option<OptimizerKind>,
    /// Gradient-norm bound; 0 disables clipping.
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Comma-separated subset of lba,ppa,ec,mf,bp,cc.
    #[arg(long, value_parser = TaskId::parse_list)]
    pub tasks: Option<Vec<TaskId>>,
    /// Weight of the classification terms.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub dtype: Option<Precision>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub records: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub splits: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Report path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Factors to vary, comma-separated subset of readout,relations,geometry.
    #[arg(long, value_delimiter = ',', default_value = "readout,relations,geometry")]
    pub factors: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EquivArgs {
    /// Random graphs per check.
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    /// Rigid motions per graph.
    #[arg(long, default_value_t = 10)]
    pub motions: usize,
    /// Check a trained model instead of a fresh one.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub skip_f32: bool,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct PromptArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// CSV matrix with task names as header and first column.
    #[arg(long)]
    pub out: PathBuf,
}

/// Training precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

fn parse_optimizer(s: &str) -> std::result::Result<OptimizerKind, String> {
    match s {
        "adam" => Ok(OptimizerKind::Adam),
        "sgd" => Ok(OptimizerKind::Sgd),
        _ => Err(format!("unknown optimizer {s:?} (expected adam or sgd)")),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub records: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub splits: Option<PathBuf>,
}

/// Every knob of a run. Written verbatim into `run.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub dtype: Precision,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

const RUN_FORMAT: &str = "hemenet-run-v1";

/// Contents of `run.json`: the resolved configuration plus the rules the
/// run applied. Accepted back by `--config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMetadata {
    pub format: String,
    pub config: RunConfig,
    pub selection_rule: String,
    pub train_samples: usize,
    pub val_samples: usize,
}

fn read_config_file(path: &Path) -> Result<(serde_json::Value, bool)> {
    let text = read_to_string(path)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    let value = match value.get("format") {
        Some(f) if f == RUN_FORMAT => value.get("config").cloned().unwrap_or_default(),
        _ => value,
    };
    let has_seed = value.get("seed").is_some();
    Ok((value, has_seed))
}

/// File (if any), then flags; seed falls back to HEMENET_SEED.
pub fn resolve_config(
    file: Option<&Path>,
    seed: Option<u64>,
    model: &ModelArgs,
    optim: &OptimArgs,
    data: &DataArgs,
) -> Result<RunConfig> {
    let (mut cfg, file_seed) = match file {
        Some(path) => {
            let (value, has_seed) = read_config_file(path)?;
            let cfg: RunConfig = crate::structio::from_json_str(&value.to_string())
                .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
            (cfg, has_seed)
        }
        None => (RunConfig::default(), false),
    };
    cfg.seed = match (seed, file_seed) {
        (Some(s), _) => s,
        (None, true) => cfg.seed,
        (None, false) => env_seed()?.unwrap_or(0),
    };
    apply_model_args(&mut cfg.model, model);
    let t = &mut cfg.train;
    set(&mut t.epochs, optim.epochs);
    set(&mut t.batch_size, optim.batch_size);
    set(&mut t.optimizer.lr, optim.lr);
    set(&mut t.optimizer.kind, optim.optimizer);
    set(&mut t.weights.lambda, optim.lambda);
    if let Some(tasks) = &optim.tasks {
        t.tasks = tasks.clone();
    }
    if let Some(c) = optim.clip_norm {
        t.clip_norm = (c > 0.0).then_some(c);
    }
    if optim.max_steps.is_some() {
        t.max_steps = optim.max_steps;
    }
    set(&mut cfg.dtype, optim.dtype);
    t.seed = cfg.seed;
    for (slot, flag) in [
        (&mut cfg.data.records, &data.records),
        (&mut cfg.data.labels, &data.labels),
        (&mut cfg.data.splits, &data.splits),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    cfg.model.validate()?;
    cfg.train.validate()?;
    Ok(cfg)
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn apply_model_args(m: &mut ModelConfig, a: &ModelArgs) {
    set(&mut m.layers, a.layers);
    set(&mut m.hidden, a.hidden);
    set(&mut m.heads, a.heads);
    set(&mut m.edge_dim, a.edge_dim);
    set(&mut m.geom.attr_dim, a.attr_dim);
    set(&mut m.readout, a.readout);
    set(&mut m.relations, a.relations);
    set(&mut m.norm, a.norm);
    set(&mut m.graph.geometry, a.geometry);
    set(&mut m.graph.spatial, a.spatial);
    set(&mut m.label_dims, a.label_dims);
    set(&mut m.coord_leak, a.coord_leak);
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var("HEMENET_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::config(format!("HEMENET_SEED must be an unsigned integer, got {s:?}"))),
        Err(_) => Ok(None),
    }
}

fn global_seed(cli: Option<u64>, file: Option<&Path>) -> Result<u64> {
    if let Some(s) = cli {
        return Ok(s);
    }
    if let Some(path) = file {
        let (value, has_seed) = read_config_file(path)?;
        if has_seed {
            return value["seed"]
                .as_u64()
                .ok_or_else(|| Error::config(format!("{}: seed must be an unsigned integer", path.display())));
        }
    }
    Ok(env_seed()?.unwrap_or(0))
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_from<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Error::config("--workers must be positive"));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| dispatch(&cli))
}

fn dispatch(cli: &Cli) -> Result<()> {
    let file = cli.config.as_deref();
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Annotate(a) => cmd_annotate(a),
        Command::Split(a) => cmd_split(a, global_seed(cli.seed, file)?),
        Command::GenSynthetic(a) => cmd_gen_synthetic(a, global_seed(cli.seed, file)?),
        Command::Train(a) => {
            let cfg = resolve_config(file, cli.seed, &a.model, &a.optim, &a.data)?;
            cmd_train(&cfg, &a.out_dir, a.resume.as_deref()).map(|_| ())
        }
        Command::Eval(a) => cmd_eval(a, file, cli.seed),
        Command::Ablate(a) => {
            let cfg = resolve_config(file, cli.seed, &a.model, &a.optim, &a.data)?;
            cmd_ablate(&cfg, &a.out_dir, &a.factors)
        }
        Command::CheckEquivariance(a) => {
            let cfg = resolve_config(file, cli.seed, &a.model, &OptimArgs::default(), &DataArgs::default())?;
            cmd_check_equivariance(a, &cfg)
        }
        Command::PromptCorr(a) => cmd_prompt_corr(a),
    }
}

// ---- ingest / annotate / split ---------------------------------------------

fn collect_inputs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let wanted = |p: &Path| {
        p.extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| ["pdb", "ent", "json"].contains(&e.to_ascii_lowercase().as_str()))
    };
    let mut files = Vec::new();
    for path in paths {
        if path.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(path)
                .map_err(|e| Error::io(path, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && wanted(p))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(path.clone());
        }
    }
    Ok(files)
}

fn ingest_file(path: &Path) -> Result<(ComplexRecord, Vec<String>)> {
    let text = read_to_string(path)?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        return Ok((parse_canonical_json(&text)?, Vec::new()));
    }
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::input("file name is not valid UTF-8"))?;
    let parsed = parse_pdb_subset(&text, id)?;
    Ok((parsed.record, parsed.warnings))
}

pub fn cmd_ingest(a: &IngestArgs) -> Result<()> {
    let files = collect_inputs(&a.paths)?;
    if files.is_empty() {
        log::warn!("no structure files found; writing an empty record file");
    }
    let parsed: Vec<Result<(ComplexRecord, Vec<String>)>> = files.par_iter().map(|p| ingest_file(p)).collect();
    let mut records: Vec<ComplexRecord> = Vec::new();
    let mut failures = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (path, r) in files.iter().zip(parsed) {
        match r {
            Ok((rec, warnings)) => {
                for w in warnings {
                    log::warn!("{}: {w}", path.display());
                }
                if !seen.insert(rec.complex_id.clone()) {
                    failures.push(format!("{}: duplicate complex id {}", path.display(), rec.complex_id));
                } else if !filter_max_atoms(&rec, a.max_atoms) {
                    log::warn!("{}: {} atoms exceed the limit of {}, dropped", path.display(), rec.atom_count(), a.max_atoms);
                } else {
                    records.push(rec);
                }
            }
            Err(e) => failures.push(format!("{}: {e}", path.display())),
        }
    }
    write_file(&a.out, write_ndjson(&records))?;
    println!("wrote {} records to {}", records.len(), a.out.display());
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Error::input(format!(
            "{} of {} files failed:\n  {}",
            failures.len(),
            files.len(),
            failures.join("\n  ")
        )))
    }
}

fn load_records(path: &Path) -> Result<Vec<ComplexRecord>> {
    parse_ndjson(&read_to_string(path)?).map_err(|e| match e {
        Error::Parse { line, message } => Error::input(format!("{}: line {line}: {message}", path.display())),
        e => e,
    })
}

pub fn cmd_annotate(a: &AnnotateArgs) -> Result<()> {
    let records = load_records(&a.records)?;
    let dims = a.label_dims.unwrap_or_default();
    let texts: Vec<(String, String)> = a
        .annotations
        .iter()
        .map(|p| Ok((p.display().to_string(), read_to_string(p)?)))
        .collect::<Result<_>>()?;
    let table = build_uniprot_table(texts.iter().map(|(n, t)| (n.as_str(), t.as_str())), dims)?;
    let affinities = match &a.affinities {
        Some(p) => parse_affinity_table(&read_to_string(p)?, &p.display().to_string())?,
        None => BTreeMap::new(),
    };
    let ids: std::collections::BTreeSet<&str> = records.iter().map(|r| r.complex_id.as_str()).collect();
    for id in affinities.keys().filter(|id| !ids.contains(id.as_str())) {
        log::warn!("affinity for unknown complex {id} ignored");
    }
    let samples = records
        .into_iter()
        .map(|record| {
            let labels = label_sample(&record, &table, &affinities)?;
            Ok(Sample { record, labels })
        })
        .collect::<Result<Vec<_>>>()?;
    let unlabeled = samples.iter().filter(|s| s.labels.tasks().is_empty()).count();
    if unlabeled > 0 {
        log::warn!("{unlabeled} complexes carry no labels");
    }
    write_file(&a.out, write_labels(&samples))?;
    println!("wrote labels for {} complexes to {}", samples.len(), a.out.display());
    Ok(())
}

fn load_samples(records: &Path, labels: &Path) -> Result<Vec<Sample>> {
    let labels = parse_labels(&read_to_string(labels)?)?;
    join_samples(load_records(records)?, &labels)
}

pub fn cmd_split(a: &SplitArgs, seed: u64) -> Result<()> {
    let samples = load_samples(&a.records, &a.labels)?;
    let clusters = parse_cluster_table(&read_to_string(&a.clusters)?, &a.clusters.display().to_string())?;
    let mut fractions = SplitFractions::default();
    set(&mut fractions.train, a.train_fraction);
    set(&mut fractions.val, a.val_fraction);
    let split = assemble_splits(&samples, &clusters, fractions, seed)?;
    split.check_leakage()?;
    write_file(&a.out, split.to_json() + "\n")?;
    let prov_path = a.provenance.clone().unwrap_or_else(|| {
        let stem = a.out.file_stem().and_then(|s| s.to_str()).unwrap_or("splits");
        a.out.with_file_name(format!("{stem}.provenance.json"))
    });
    let prov = serde_json::to_string_pretty(&split.provenance).expect("provenance serializes");
    write_file(&prov_path, prov + "\n")?;
    println!(
        "train {} / val {} / test {} ({} excluded)",
        split.count(Split::Train),
        split.count(Split::Val),
        split.count(Split::Test),
        samples.len() - split.assignment.len()
    );
    Ok(())
}

pub fn cmd_gen_synthetic(a: &GenArgs, seed: u64) -> Result<()> {
    let cfg = SyntheticConfig {
        n_samples: a.samples,
        max_residues: a.max_residues,
        seed,
        dims: a.label_dims,
        full_fraction: a.full_fraction,
        cluster_fraction: a.cluster_fraction,
        ..Default::default()
    };
    let samples = generate_synthetic(&cfg)?;
    let tables = synthetic_tables(&samples, cfg.cluster_fraction, seed);
    for s in &samples {
        write_file(a.out_dir.join("pdb").join(format!("{}.pdb", s.record.complex_id)), write_pdb(&s.record))?;
    }
    write_file(a.out_dir.join("annotations.tsv"), tables.annotations)?;
    write_file(a.out_dir.join("affinities.tsv"), tables.affinities)?;
    write_file(a.out_dir.join("clusters.tsv"), tables.clusters)?;
    write_file(a.out_dir.join("labels.json"), write_labels(&samples))?;
    let meta = serde_json::to_string_pretty(&cfg).expect("config serializes");
    write_file(a.out_dir.join("synthetic.json"), meta + "\n")?;
    println!("wrote {} synthetic complexes to {}", samples.len(), a.out_dir.display());
    Ok(())
}

// ---- train / eval / ablate ---------------------------------------------------

fn split_samples(cfg: &RunConfig) -> Result<(Vec<Sample>, BTreeMap<String, Split>)> {
    let need = |p: &Option<PathBuf>, what: &str| {
        p.clone()
            .ok_or_else(|| Error::config(format!("--{what} is required (flag or data.{what} in the config file)")))
    };
    let records = need(&cfg.data.records, "records")?;
    let labels = need(&cfg.data.labels, "labels")?;
    let splits = need(&cfg.data.splits, "splits")?;
    let samples = load_samples(&records, &labels)?;
    let assignment = SplitAssignment::from_json(&read_to_string(&splits)?)?;
    Ok((samples, assignment))
}

fn members(samples: &[Sample], assignment: &BTreeMap<String, Split>, split: Split) -> Vec<Sample> {
    samples
        .iter()
        .filter(|s| assignment.get(&s.record.complex_id) == Some(&split))
        .cloned()
        .collect()
}

/// Sidecar path of a checkpoint: same stem, `.json` extension.
pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("json")
}

fn jsonl(records: &[MetricRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

/// What `train` leaves behind.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best_checkpoint: PathBuf,
    pub epochs_run: usize,
}

pub fn cmd_train(cfg: &RunConfig, out_dir: &Path, resume: Option<&Path>) -> Result<TrainOutcome> {
    match cfg.dtype {
        Precision::F32 => train_typed::<f32>(cfg, out_dir, resume),
        Precision::F64 => train_typed::<f64>(cfg, out_dir, resume),
    }
}

fn train_typed<T: Scalar>(cfg: &RunConfig, out_dir: &Path, resume: Option<&Path>) -> Result<TrainOutcome> {
    let (samples, assignment) = split_samples(cfg)?;
    let (mut model, start_epoch) = match resume {
        Some(path) => {
            let side = ModelSidecar::read(&sidecar_path(path))?;
            let model = HeMeNet::<T>::load(path, &sidecar_path(path), Some(&cfg.model))?;
            (model, side.epoch.map_or(0, |e| e + 1))
        }
        None => (HeMeNet::<T>::new(cfg.model.clone(), cfg.seed)?, 0),
    };
    let tasks = &cfg.train.tasks;
    let train = prepare_samples(&model, &members(&samples, &assignment, Split::Train), tasks)?;
    let val = prepare_samples(&model, &members(&samples, &assignment, Split::Val), tasks)?;
    if train.is_empty() {
        return Err(Error::input("the train split holds no sample labelled for the selected tasks"));
    }
    let meta = RunMetadata {
        format: RUN_FORMAT.into(),
        config: cfg.clone(),
        selection_rule: SELECTION_RULE.into(),
        train_samples: train.len(),
        val_samples: val.len(),
    };
    write_file(out_dir.join("run.json"), serde_json::to_string_pretty(&meta).expect("metadata serializes") + "\n")?;
    let metrics_path = out_dir.join("metrics.jsonl");
    let mut log = if start_epoch > 0 {
        std::fs::read_to_string(&metrics_path).unwrap_or_default()
    } else {
        String::new()
    };
    let best = out_dir.join("best.ckpt");
    let history = fit(&mut model, &train, &val, &cfg.train, start_epoch, |m, s| {
        let e = s.stats.epoch;
        let mut records = vec![MetricRecord {
            epoch: e,
            split: "train".into(),
            task: "all".into(),
            metric: "loss".into(),
            value: s.stats.mean_loss,
        }];
        for (t, v) in &s.stats.task_loss {
            records.push(MetricRecord {
                epoch: e,
                split: "train".into(),
                task: t.name().into(),
                metric: "loss".into(),
                value: *v,
            });
        }
        if let Some(r) = &s.val {
            records.extend(r.records(e, "val"));
        }
        log.push_str(&jsonl(&records));
        write_file(&metrics_path, log.clone())?;
        let ckpt = out_dir.join("checkpoints").join(format!("epoch{e:03}.ckpt"));
        m.save_epoch(&ckpt, &sidecar_path(&ckpt), Some(e))?;
        if s.is_best {
            m.save_epoch(&best, &sidecar_path(&best), Some(e))?;
        }
        let mut line = format!(
            "epoch {e:3}  loss {:.6}  grad-norm {:.3}  {:.1}s",
            s.stats.mean_loss, s.stats.grad_norm_mean, s.stats.seconds
        );
        if let Some(score) = s.val_score {
            let _ = write!(line, "  val-score {score:.4}{}", if s.is_best { " *" } else { "" });
        }
        println!("{line}");
        Ok(())
    })?;
    Ok(TrainOutcome {
        best_checkpoint: best,
        epochs_run: history.len(),
    })
}

fn evaluate_checkpoint(checkpoint: &Path, expected: Option<&ModelConfig>, samples: &[Sample]) -> Result<MetricReport> {
    let side = ModelSidecar::read(&sidecar_path(checkpoint))?;
    match side.dtype.as_str() {
        "f32" => eval_typed::<f32>(checkpoint, expected, samples),
        _ => eval_typed::<f64>(checkpoint, expected, samples),
    }
}

fn eval_typed<T: Scalar>(checkpoint: &Path, expected: Option<&ModelConfig>, samples: &[Sample]) -> Result<MetricReport> {
    let model = HeMeNet::<T>::load(checkpoint, &sidecar_path(checkpoint), expected)?;
    let data = prepare_samples(&model, samples, &TaskId::ALL)?;
    evaluate(&model, &data)
}

pub fn cmd_eval(a: &EvalArgs, file: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let cfg = resolve_config(file, seed, &ModelArgs::default(), &OptimArgs::default(), &a.data)?;
    let (samples, assignment) = split_samples(&cfg)?;
    let chosen = members(&samples, &assignment, a.split);
    let expected = file.map(|_| &cfg.model);
    let report = if chosen.is_empty() {
        log::warn!("split {} is empty; writing an empty report", a.split.name());
        MetricReport::default()
    } else {
        evaluate_checkpoint(&a.checkpoint, expected, &chosen)?
    };
    match &a.out {
        Some(path) => write_file(path, report.to_json())?,
        None => print!("{}", report.to_json()),
    }
    Ok(())
}

/// One-factor-at-a-time variants of `base`, baseline first.
pub fn ablation_variants(base: &ModelConfig, factors: &[String]) -> Result<Vec<(String, ModelConfig)>> {
    let mut out = vec![("baseline".to_string(), base.clone())];
    for f in factors {
        match f.as_str() {
            "readout" => {
                for &r in ReadoutKind::ALL.iter().filter(|&&r| r != base.readout) {
                    out.push((format!("readout={r}"), ModelConfig { readout: r, ..base.clone() }));
                }
            }
            "relations" => {
                for &r in RelationMode::ALL.iter().filter(|&&r| r != base.relations) {
                    out.push((format!("relations={r}"), ModelConfig { relations: r, ..base.clone() }));
                }
            }
            "geometry" => {
                for g in [Geometry::FullAtom, Geometry::Calpha].into_iter().filter(|&g| g != base.graph.geometry) {
                    let mut m = base.clone();
                    m.graph.geometry = g;
                    out.push((format!("geometry={g}"), m));
                }
            }
            other => return Err(Error::config(format!("unknown ablation factor {other:?}"))),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AblationEntry {
    model: ModelConfig,
    test: MetricReport,
    test_score: Option<f64>,
}

pub fn cmd_ablate(cfg: &RunConfig, out_dir: &Path, factors: &[String]) -> Result<()> {
    let variants = ablation_variants(&cfg.model, factors)?;
    let (samples, assignment) = split_samples(cfg)?;
    let test = members(&samples, &assignment, Split::Test);
    let mut summary = BTreeMap::new();
    for (name, model) in variants {
        println!("== {name}");
        let run = RunConfig {
            model: model.clone(),
            ..cfg.clone()
        };
        let dir = out_dir.join(name.replace('=', "-"));
        let outcome = cmd_train(&run, &dir, None)?;
        let report = if test.is_empty() {
            log::warn!("test split is empty; {name} has no test metrics");
            MetricReport::default()
        } else {
            evaluate_checkpoint(&outcome.best_checkpoint, Some(&model), &test)?
        };
        write_file(dir.join("test.json"), report.to_json())?;
        summary.insert(
            name,
            AblationEntry {
                model,
                test_score: report.selection_score(),
                test: report,
            },
        );
    }
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_file(out_dir.join("ablation.json"), text + "\n")?;
    for (name, e) in &summary {
        println!("{name:28} {}", e.test_score.map_or("-".into(), |s| format!("{s:.4}")));
    }
    Ok(())
}

// ---- verification / prompts -------------------------------------------------

pub fn cmd_check_equivariance(a: &EquivArgs, cfg: &RunConfig) -> Result<()> {
    let model = match &a.checkpoint {
        Some(path) => {
            let side = ModelSidecar::read(&sidecar_path(path))?;
            let mut m = match side.dtype.as_str() {
                "f32" => HeMeNet::<f32>::load(path, &sidecar_path(path), None)?.cast::<f64>(),
                _ => HeMeNet::<f64>::load(path, &sidecar_path(path), None)?,
            };
            if let Some(leak) = a.model.coord_leak {
                m.config.coord_leak = leak;
            }
            m
        }
        None => HeMeNet::<f64>::new(cfg.model.clone(), cfg.seed)?,
    };
    let eq = EquivarianceConfig {
        graphs: a.trials,
        motions: a.motions,
        seed: cfg.seed,
        check_f32: !a.skip_f32,
        ..Default::default()
    };
    let start = std::time::Instant::now();
    let report = check_equivariance(&model, &eq)?;
    print!("{report}");
    println!("{:.1}s", start.elapsed().as_secs_f64());
    if report.passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed()).map(|c| c.name.as_str()).collect();
        Err(Error::numerical(format!("equivariance violated: {}", failed.join(", "))))
    }
}

/// The matrix as CSV with task names on both axes.
pub fn correlation_csv(m: &[[f64; 6]; 6]) -> String {
    let mut out = String::from("task");
    for t in TaskId::ALL {
        let _ = write!(out, ",{t}");
    }
    out.push('\n');
    for (t, row) in TaskId::ALL.iter().zip(m) {
        out.push_str(t.name());
        for v in row {
            let _ = write!(out, ",{v:.6}");
        }
        out.push('\n');
    }
    out
}

pub fn cmd_prompt_corr(a: &PromptArgs) -> Result<()> {
    let side = ModelSidecar::read(&sidecar_path(&a.checkpoint))?;
    let m = match side.dtype.as_str() {
        "f32" => HeMeNet::<f32>::load(&a.checkpoint, &sidecar_path(&a.checkpoint), None)?.prompt_correlation()?,
        _ => HeMeNet::<f64>::load(&a.checkpoint, &sidecar_path(&a.checkpoint), None)?.prompt_correlation()?,
    };
    let csv = correlation_csv(&m);
    write_file(&a.out, csv.clone())?;
    print!("{csv}");
    Ok(())
}
