//! Command-line front end: `synth`, `ingest`, `train` and `report`.
//!
//! Exit codes: 0 success, 1 I/O or runtime failure, 2 configuration or
//! usage error, 3 training aborted on a non-finite loss.

pub mod config;

use std::ffi::OsString;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::Utc;
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use stressseq::backbone::BackboneName;
use stressseq::ingest::{scan_dataset, write_manifest, write_skip_list};
use stressseq::models::Pipeline;
use stressseq::report::{read_baselines, render, RunReport};
use stressseq::sequencer::Grouping;
use stressseq::synthgen::{generate, SynthConfig};
use stressseq::trainer::{prepare, run_cv, LrSchedule};

pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NON_FINITE: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Core(stressseq::Error),
}

impl From<stressseq::Error> for CliError {
    fn from(e: stressseq::Error) -> Self {
        match e {
            stressseq::Error::Config(m) => CliError::Usage(m),
            other => CliError::Core(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use stressseq::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io(_) => EXIT_IO,
            CliError::Core(e) => match e {
                E::NonFiniteLoss { .. } => EXIT_NON_FINITE,
                E::Io { .. } | E::Image { .. } | E::Checkpoint(_) | E::Numeric(_) | E::Shape(_) | E::MissingCache => EXIT_IO,
                _ => EXIT_USAGE,
            },
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "stressseq", version, args_override_self = true, about = "Nitrogen-stress classification from dated image sequences")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic growth-rate dataset.
    Synth(SynthArgs),
    /// Scan a dataset directory and write its manifest.
    Ingest(IngestArgs),
    /// Cross-validated training and evaluation.
    Train(TrainArgs),
    /// Re-render plots and tables from a stored report.json.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub boxes: Option<usize>,
    #[arg(long)]
    pub dates: Option<usize>,
    #[arg(long)]
    pub image_side: Option<usize>,
    /// Comma-separated growth rates, one per class.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub rates: Option<Vec<f64>>,
    /// Warn when `dates` cannot fill one window of this length.
    #[arg(long)]
    pub sequence_length: Option<usize>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Manifest CSV to write; the skip list goes next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated class directories.
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `spatiotemporal` or `spatial`.
    #[arg(long)]
    pub pipeline: Option<Pipeline>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub sequence_length: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// `class_only` or `class_box_modality`.
    #[arg(long)]
    pub grouping: Option<Grouping>,
    /// `constant` or `exponential_staircase`.
    #[arg(long)]
    pub lr_schedule: Option<LrSchedule>,
    #[arg(long)]
    pub lstm_units: Option<usize>,
    /// `mobilenetv2_pretrained` or `tiny_cnn`.
    #[arg(long)]
    pub backbone: Option<BackboneName>,
    /// Pretrained weights (safetensors); defaults to `$STRESSSEQ_WEIGHTS`.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub image_side: Option<usize>,
    #[arg(long)]
    pub freeze_layers: Option<usize>,
    #[arg(long, overrides_with = "no_augment")]
    pub augment: bool,
    #[arg(long)]
    pub no_augment: bool,
    #[arg(long)]
    pub standardize_features: bool,
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
    /// Run directory name under `out`; defaults to a timestamp plus seed hash.
    #[arg(long)]
    pub run_id: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directory holding report.json.
    #[arg(long)]
    pub run: PathBuf,
    /// Baseline rows (`method,train_accuracy,test_accuracy`) for the
    /// comparison table.
    #[arg(long)]
    pub baselines: Option<PathBuf>,
    /// Output directory; defaults to the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl TrainArgs {
    /// Flags that were given, as a config layer.
    pub fn layer(&self) -> Value {
        let mut m = Map::new();
        let mut put = |k: &str, v: Value| {
            if !v.is_null() {
                m.insert(k.to_string(), v);
            }
        };
        put("data_dir", json!(self.data));
        put("out_dir", json!(self.out));
        put("pipeline", json!(self.pipeline));
        put("epochs", json!(self.epochs));
        put("batch_size", json!(self.batch_size));
        put("lr", json!(self.lr));
        put("seed", json!(self.seed));
        put("folds", json!(self.folds));
        put("sequence_length", json!(self.sequence_length));
        put("stride", json!(self.stride));
        put("grouping", json!(self.grouping));
        put("lr_schedule", json!(self.lr_schedule));
        put("lstm_units", json!(self.lstm_units));
        put("image_side", json!(self.image_side));
        put("freeze_layers", json!(self.freeze_layers));
        put("classes", json!(self.classes));
        if self.augment {
            put("augment", json!(true));
        } else if self.no_augment {
            put("augment", json!(false));
        }
        if self.standardize_features {
            put("standardize_features", json!(true));
        }
        let mut backbone = Map::new();
        if let Some(b) = self.backbone {
            backbone.insert("name".into(), json!(b));
        }
        if let Some(w) = &self.weights {
            backbone.insert("weights_path".into(), json!(w));
        }
        if !backbone.is_empty() {
            put("backbone", Value::Object(backbone));
        }
        Value::Object(m)
    }
}

/// Parse `args` (program name first), run the command and return the exit
/// code. Errors are reported on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Ingest(a) => cmd_ingest(&a),
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Report(a) => cmd_report(&a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn print_json(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json value"));
}

pub fn cmd_synth(a: &SynthArgs) -> Result<(), CliError> {
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        seed: a.seed.unwrap_or(d.seed),
        classes: a.classes.unwrap_or(d.classes),
        boxes_per_class: a.boxes.unwrap_or(d.boxes_per_class),
        dates: a.dates.unwrap_or(d.dates),
        image_side: a.image_side.unwrap_or(d.image_side),
        rates: a.rates.clone().unwrap_or_default(),
        ..d
    };
    cfg.validate()?;
    if let Some(l) = a.sequence_length {
        if cfg.dates < l {
            log::warn!("{} dates cannot fill a window of {l} frames; sequencing this dataset will fail", cfg.dates);
        }
    }
    let summary = generate(&cfg, &a.out)?;
    let mut v = serde_json::to_value(&summary).map_err(stressseq::Error::from)?;
    if let Value::Object(m) = &mut v {
        m.remove("files");
        m.insert("out".into(), json!(a.out));
    }
    print_json(&v);
    Ok(())
}

pub fn cmd_ingest(a: &IngestArgs) -> Result<(), CliError> {
    let classes: Option<Vec<&str>> = a.classes.as_ref().map(|c| c.iter().map(String::as_str).collect());
    let scan = scan_dataset(&a.data, classes.as_deref())?;
    for w in &scan.warnings {
        log::warn!("{w}");
    }
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    write_manifest(&scan.records, &a.out)?;
    let skip = write_skip_list(&scan.skipped, &a.out)?;
    let mut per_class = std::collections::BTreeMap::new();
    for r in &scan.records {
        *per_class.entry(r.label.clone()).or_insert(0usize) += 1;
    }
    print_json(&json!({
        "manifest": a.out,
        "skip_list": skip,
        "records": scan.records.len(),
        "skipped": scan.skipped.len(),
        "per_class": per_class,
        "warnings": scan.warnings,
    }));
    Ok(())
}

/// Exclusive per-directory lock, released on drop.
pub struct RunLock {
    path: PathBuf,
}

pub const LOCK_FILE: &str = ".stressseq.lock";

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Io(format!(
                "{} exists: another run is using this output directory (remove the file if that run is gone)",
                path.display()
            ))),
            Err(e) => Err(io_err(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// UTC timestamp plus the first 8 hex digits of SHA-256 of the seed.
pub fn make_run_id(seed: u64) -> String {
    let digest = Sha256::digest(seed.to_le_bytes());
    let hash: String = digest[..4].iter().map(|b| format!("{b:02x}")).collect();
    format!("{}-{hash}", Utc::now().format("%Y%m%dT%H%M%SZ"))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let mut f = File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| io_err(path, e))
}

/// Train and report one run; returns its directory.
pub fn cmd_train(a: &TrainArgs) -> Result<PathBuf, CliError> {
    let file = a.config.as_deref().map(config::read_file).transpose()?;
    let cfg = config::resolve(file.as_ref(), &a.layer())?;
    cfg.check_paths()?;

    fs::create_dir_all(&cfg.out_dir).map_err(|e| io_err(&cfg.out_dir, e))?;
    let _lock = RunLock::acquire(&cfg.out_dir)?;
    let base_id = a.run_id.clone().unwrap_or_else(|| make_run_id(cfg.train.seed));
    let mut run_id = base_id.clone();
    let mut n = 1;
    while cfg.out_dir.join(&run_id).exists() {
        run_id = format!("{base_id}-{n}");
        n += 1;
    }
    let run_dir = cfg.out_dir.join(&run_id);
    fs::create_dir_all(&run_dir).map_err(|e| io_err(&run_dir, e))?;
    let frozen = serde_json::to_string_pretty(&cfg).map_err(stressseq::Error::from)?;
    write_text(&run_dir.join("config.json"), &frozen)?;

    let classes: Option<Vec<&str>> = cfg.classes.as_ref().map(|c| c.iter().map(String::as_str).collect());
    let scan = scan_dataset(&cfg.data_dir, classes.as_deref())?;
    for w in &scan.warnings {
        log::warn!("{w}");
    }
    let manifest = run_dir.join("manifest.csv");
    write_manifest(&scan.records, &manifest)?;
    write_skip_list(&scan.skipped, &manifest)?;

    let prepared = prepare(&scan.records, &cfg.train)?;
    write_text(&run_dir.join("folds.json"), &stressseq::sequencer::folds_to_json(&prepared.folds)?)?;

    log::info!("run {run_id}: {} pipeline, {} images", cfg.train.pipeline, scan.records.len());
    let mut report: RunReport = run_cv(&scan.records, &cfg.train, &run_dir, &run_id)?;
    let mut warnings = scan.warnings.clone();
    warnings.append(&mut report.warnings);
    report.warnings = warnings;
    render(&report, &run_dir)?;

    let acc = &report.aggregate.test_accuracy;
    print_json(&json!({
        "run_id": run_id,
        "run_dir": run_dir,
        "test_accuracy_mean": acc.mean,
        "test_accuracy_std": acc.std,
    }));
    Ok(run_dir)
}

pub fn cmd_report(a: &ReportArgs) -> Result<(), CliError> {
    if !a.run.is_dir() {
        return Err(CliError::Usage(format!("run directory {} does not exist", a.run.display())));
    }
    let path = a.run.join("report.json");
    if !path.is_file() {
        return Err(CliError::Usage(format!("{} not found", path.display())));
    }
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let mut report = RunReport::from_json(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    if let Some(b) = &a.baselines {
        report.comparison = read_baselines(b)?;
    }
    let out = a.out.clone().unwrap_or_else(|| a.run.clone());
    let files = render(&report, &out)?;
    print_json(&json!({
        "folds_csv": files.folds_csv,
        "report_json": files.report_json,
        "comparison_csv": files.comparison_csv,
        "curves": files.curves.len(),
        "matrices": files.matrices.len(),
    }));
    Ok(())
}
