//! The `hybridnet` command line: synthesize or load data, train each model
//! separately, write score tables, fuse them and evaluate.

mod config;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub use config::{FusionSection, LstmSection, RunConfig};

use crate::ensemble::{self, FusionWeights, Metric, ScoreTable};
use crate::features::{self, Dataset, Split, Stream, SynthMode, SynthSpec};
use crate::fusion;
use crate::lstm::{self, LabeledSequence};
use crate::metrics::{self, GroundTruth};
use crate::verify;
use crate::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(Error),
    #[error("verification failed: {0}")]
    Verify(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Argument(m) => CliError::Usage(m),
            other => CliError::Data(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Verify(_) => EXIT_VERIFY,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

type Scorer = Box<dyn Fn(&features::VideoSample) -> crate::Result<Vec<f64>>>;

#[derive(Debug, Parser)]
#[command(name = "hybridnet", version, about = "Two-stream LSTM / fusion-network video classification toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic two-stream dataset (manifest + feature files).
    Synth(SynthArgs),
    /// Train one model and write its checkpoint, log and score tables.
    Train(TrainArgs),
    /// Combine score tables by averaging or with (cross-validated) weights.
    Fuse(FuseArgs),
    /// Evaluate a score table against a manifest's labels.
    Eval(EvalArgs),
    /// Run the built-in numerical self checks.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with generator settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub train_per_class: Option<usize>,
    #[arg(long)]
    pub val_per_class: Option<usize>,
    #[arg(long)]
    pub test_per_class: Option<usize>,
    #[arg(long)]
    pub spatial_dim: Option<usize>,
    #[arg(long)]
    pub motion_dim: Option<usize>,
    #[arg(long)]
    pub order_noise: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub frame_noise: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Temporal,
    Correlation,
    Mixed,
}

impl From<ModeArg> for SynthMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Temporal => SynthMode::Temporal,
            ModeArg::Correlation => SynthMode::Correlation,
            ModeArg::Mixed => SynthMode::Mixed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    LstmSpatial,
    LstmMotion,
    Fusion,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::LstmSpatial => "lstm-spatial",
            ModelKind::LstmMotion => "lstm-motion",
            ModelKind::Fusion => "fusion",
        }
    }

    pub fn checkpoint_file(self) -> &'static str {
        match self {
            ModelKind::Fusion => "model.hsfn",
            _ => "model.hslm",
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(value_enum)]
    pub model: ModelKind,
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the manifest named in the config.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; defaults to the config's `out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Score tables to combine (all covering the same videos).
    #[arg(required = true)]
    pub tables: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Explicit weights, comma separated, one per table.
    #[arg(long, value_delimiter = ',', conflicts_with = "cv_manifest")]
    pub weights: Option<Vec<f64>>,
    /// Manifest holding labels for the validation tables; enables the
    /// weight search.
    #[arg(long, requires = "val_tables")]
    pub cv_manifest: Option<PathBuf>,
    /// Validation-split score tables, in the same model order as TABLES.
    #[arg(long, num_args = 1.., requires = "cv_manifest")]
    pub val_tables: Option<Vec<PathBuf>>,
    #[arg(long, default_value = "accuracy")]
    pub metric: Metric,
    #[arg(long, default_value_t = 0.1)]
    pub grid_step: f64,
    /// Rescale each table's classes to [0, 1] before combining.
    #[arg(long)]
    pub minmax: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Headline metric printed last.
    #[arg(long, default_value = "accuracy")]
    pub metric: Metric,
    /// Also write the report as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Suite {
    Gradcheck,
    Prox,
    Metrics,
    All,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(value_enum)]
    pub suite: Suite,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(out) => {
            print!("{out}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command; the returned text is what the binary prints.
pub fn run(cli: Cli) -> CliResult<String> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Fuse(a) => cmd_fuse(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Verify(a) => cmd_verify(&a),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e).into())
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e).into())
}

pub fn cmd_synth(a: &SynthArgs) -> CliResult<String> {
    let mut spec = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str::<SynthSpec>(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => SynthSpec::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = a.$field { spec.$field = v.into(); })* };
    }
    set!(seed, mode, classes, train_per_class, val_per_class, test_per_class, spatial_dim, motion_dim, order_noise, noise, frame_noise);
    spec.validate()?;

    let dataset = features::synthesize(&spec)?;
    create_dir(&a.out)?;
    let manifest = features::write_dataset(&a.out, &dataset)?;
    write_file(&a.out.join("synth.toml"), toml::to_string(&spec).expect("spec serializes"))?;

    let mut s = String::new();
    writeln!(s, "manifest: {}", manifest.display()).unwrap();
    writeln!(s, "mode: {:?}, classes: {}, seed: {}", spec.mode, spec.classes, spec.seed).unwrap();
    for split in [Split::Train, Split::Val, Split::Test] {
        writeln!(s, "{split}: {} videos", dataset.split(split).len()).unwrap();
    }
    writeln!(
        s,
        "spatial dim: {}, motion dim: {}, frames per video: {}-{}",
        spec.spatial_dim, spec.motion_dim, spec.t_min, spec.t_max
    )
    .unwrap();
    Ok(s)
}

fn lstm_training_set(dataset: &Dataset, stream: Stream) -> Vec<LabeledSequence> {
    dataset
        .split(Split::Train)
        .into_iter()
        .map(|s| LabeledSequence {
            seq: s.stream(stream).clone(),
            target: s.label_vector(),
        })
        .collect()
}

pub fn cmd_train(a: &TrainArgs) -> CliResult<String> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(m) = &a.manifest {
        cfg.manifest = m.clone();
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let out = a
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| CliError::Usage("no output directory: pass --out or set `out` in the config".into()))?;
    cfg.validate()?;

    // everything that can fail on bad input happens before training starts
    let dataset = features::load_dataset(&cfg.manifest)?;
    if dataset.split(Split::Train).is_empty() {
        return Err(CliError::Data(Error::Data(format!("{}: no training videos", cfg.manifest.display()))));
    }
    create_dir(&out)?;
    let resolved = cfg.resolved(&out)?;

    let classes = dataset.num_classes();
    let mut log = String::new();
    let scorer: Scorer = match a.model {
        ModelKind::LstmSpatial | ModelKind::LstmMotion => {
            let stream = if a.model == ModelKind::LstmSpatial { Stream::Spatial } else { Stream::Motion };
            let data = lstm_training_set(&dataset, stream);
            let (stack, epochs) = lstm::train_lstm(&data, classes, &cfg.lstm.train_config(cfg.seed))?;
            for e in &epochs {
                writeln!(log, "epoch={} iterations={} mean_loss={:.9e}", e.epoch, e.iterations, e.mean_loss).unwrap();
            }
            stack.save(&out.join(a.model.checkpoint_file()))?;
            Box::new(move |s| lstm::lstm_predict(&stack, s.stream(stream)))
        }
        ModelKind::Fusion => {
            let data = features::pool_all(dataset.split(Split::Train))?;
            let arch = cfg.fusion.arch(data[0].spatial.len(), data[0].motion.len(), classes);
            let trained = fusion::train_fusion(&data, arch, &cfg.fusion.hyper(cfg.seed))?;
            for e in &trained.log {
                writeln!(log, "{e}").unwrap();
            }
            trained.net.save(&out.join(a.model.checkpoint_file()))?;
            let net = trained.net;
            Box::new(move |s| {
                let p = s.pooled()?;
                fusion::fusion_forward(&net, &p.spatial, &p.motion)
            })
        }
    };
    write_file(&out.join("train.log"), &log)?;
    write_file(&out.join("resolved_config.toml"), resolved.to_toml())?;

    let mut summary = String::new();
    writeln!(summary, "model: {}", a.model.name()).unwrap();
    writeln!(summary, "checkpoint: {}", out.join(a.model.checkpoint_file()).display()).unwrap();
    for split in cfg.score_splits.iter().copied().collect::<BTreeSet<_>>() {
        let samples = dataset.split(split);
        if samples.is_empty() {
            continue;
        }
        let rows = samples
            .iter()
            .map(|s| Ok((s.id.clone(), scorer(s)?)))
            .collect::<crate::Result<Vec<_>>>()?;
        let table = ScoreTable::new(a.model.name(), dataset.class_names.clone(), rows)?;
        let path = out.join(format!("scores_{split}.tsv"));
        table.save(&path)?;
        let truth = GroundTruth::from_samples(samples.iter().copied());
        let report = metrics::evaluate(&table, &truth)?;
        match report.accuracy {
            Some(acc) => writeln!(summary, "{split}: accuracy {acc:.4}, scores {}", path.display()).unwrap(),
            None => writeln!(summary, "{split}: mAP {:.4}, scores {}", report.map.unwrap_or(f64::NAN), path.display()).unwrap(),
        }
    }
    Ok(summary)
}

/// Ground truth for exactly the videos of `table`; ids missing from the
/// manifest surface as an alignment error.
fn truth_for(dataset: &Dataset, table: &ScoreTable) -> CliResult<GroundTruth> {
    let wanted: BTreeSet<&str> = table.ids().iter().map(String::as_str).collect();
    let truth = GroundTruth::from_samples(dataset.samples.iter().filter(|s| wanted.contains(s.id.as_str())));
    truth.check_aligned(table)?;
    Ok(truth)
}

#[derive(Debug, Serialize)]
struct WeightRecord {
    tables: Vec<String>,
    weights: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cv: Option<CvRecord>,
}

#[derive(Debug, Serialize)]
struct CvRecord {
    metric: Metric,
    grid_step: f64,
    value: f64,
    single: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    uniform: Option<f64>,
}

fn load_tables(paths: &[PathBuf], minmax: bool) -> CliResult<Vec<ScoreTable>> {
    paths
        .iter()
        .map(|p| {
            let t = ScoreTable::load(p)?;
            Ok(if minmax { ensemble::min_max_normalize(&t) } else { t })
        })
        .collect()
}

pub fn cmd_fuse(a: &FuseArgs) -> CliResult<String> {
    if !(a.grid_step > 0.0 && a.grid_step <= 1.0) {
        return Err(CliError::Usage(format!("--grid-step {} outside (0, 1]", a.grid_step)));
    }
    let tables = load_tables(&a.tables, a.minmax)?;
    let refs: Vec<&ScoreTable> = tables.iter().collect();
    let mut cv = None;
    let fused = match (&a.weights, &a.cv_manifest, &a.val_tables) {
        (Some(w), _, _) => ensemble::weighted_fuse(&refs, &FusionWeights::new(w.clone())?)?,
        (None, Some(manifest), Some(val_paths)) => {
            if val_paths.len() != tables.len() {
                return Err(CliError::Usage(format!(
                    "{} validation tables for {} score tables",
                    val_paths.len(),
                    tables.len()
                )));
            }
            let val = load_tables(val_paths, a.minmax)?;
            let val_refs: Vec<&ScoreTable> = val.iter().collect();
            let dataset = features::load_dataset(manifest)?;
            let truth = truth_for(&dataset, &val[0])?;
            let outcome = ensemble::cross_validate_weights(&val_refs, &truth, a.metric, a.grid_step)?;
            let fused = ensemble::weighted_fuse(&refs, &outcome.weights)?;
            cv = Some(outcome);
            fused
        }
        _ => ensemble::average_fuse(&refs)?,
    };
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fused.save(&a.out)?;

    let weights = match &cv {
        Some(o) => o.weights.as_slice().to_vec(),
        None => match &a.weights {
            Some(w) => FusionWeights::new(w.clone())?.as_slice().to_vec(),
            None => FusionWeights::uniform(tables.len())?.as_slice().to_vec(),
        },
    };
    let record = WeightRecord {
        tables: a.tables.iter().map(|p| p.display().to_string()).collect(),
        weights: weights.clone(),
        cv: cv.as_ref().map(|o| CvRecord {
            metric: a.metric,
            grid_step: a.grid_step,
            value: o.metric,
            single: o.single.clone(),
            uniform: o.uniform,
        }),
    };
    let mut weights_path = a.out.clone().into_os_string();
    weights_path.push(".weights.json");
    write_file(Path::new(&weights_path), serde_json::to_string_pretty(&record).expect("record serializes") + "\n")?;

    let mut s = String::new();
    writeln!(s, "fused {} tables ({} videos) -> {}", tables.len(), fused.len(), a.out.display()).unwrap();
    writeln!(s, "weights: {}", weights.iter().map(|w| format!("{w:.4}")).collect::<Vec<_>>().join(", ")).unwrap();
    if let Some(o) = &cv {
        writeln!(s, "validation {}: {:.4} (single models: {:?})", a.metric, o.metric, o.single).unwrap();
    }
    Ok(s)
}

pub fn cmd_eval(a: &EvalArgs) -> CliResult<String> {
    let table = ScoreTable::load(&a.scores)?;
    let dataset = features::load_dataset(&a.manifest)?;
    let truth = truth_for(&dataset, &table)?;
    let report = metrics::evaluate(&table, &truth)?;
    if let Some(out) = &a.out {
        write_file(out, serde_json::to_string_pretty(&report).expect("report serializes") + "\n")?;
    }
    let headline = ensemble::score_metric(&table, &truth, a.metric)?;
    Ok(format!("{report}{}: {headline:.6}\n", a.metric))
}

pub const GRADCHECK_INSTANCES: usize = 20;
pub const PROX_ROWS: usize = 1000;
pub const AP_INSTANCES: usize = 50;

pub fn cmd_verify(a: &VerifyArgs) -> CliResult<String> {
    let mut reports = Vec::new();
    if matches!(a.suite, Suite::Gradcheck | Suite::All) {
        reports.push(verify::gradcheck_suite(a.seed, GRADCHECK_INSTANCES));
    }
    if matches!(a.suite, Suite::Prox | Suite::All) {
        reports.push(verify::prox_suite(a.seed, PROX_ROWS));
    }
    if matches!(a.suite, Suite::Metrics | Suite::All) {
        reports.push(verify::metrics_suite(a.seed, AP_INSTANCES));
    }
    let text: String = reports.iter().map(|r| r.to_string()).collect();
    if reports.iter().all(|r| r.passed()) {
        Ok(text)
    } else {
        print!("{text}");
        let failed: Vec<String> = reports
            .iter()
            .flat_map(|r| r.checks.iter().filter(|c| !c.passed).map(move |c| format!("{}/{}", r.suite, c.name)))
            .collect();
        Err(CliError::Verify(failed.join(", ")))
    }
}
