//! Config files, flag merging and the exit-code contract.

use std::path::{Path, PathBuf};

use glai_core::dataset::{CsvSchema, TaskKind};
use glai_core::loss::Loss;
use glai_core::train::{EarlyStop, Monitor, TrainConfig};
use serde::de::DeserializeOwned;
use serde::Deserialize;

pub const SEED_ENV: &str = "GLAI_SEED";

/// Failure classes with stable exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or inputs. Exit code 2.
    Usage(String),
    /// Anything that went wrong while running. Exit code 1.
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<glai_core::Error> for CliError {
    fn from(e: glai_core::Error) -> Self {
        use glai_core::Error as E;
        match e {
            E::BottleneckViolation { reduced, outputs } => CliError::Usage(format!(
                "reduction leaves a final hidden layer of {reduced} units, which does not exceed the {outputs} outputs; use a larger rho"
            )),
            E::ReducedNotSmaller { original, reduced } => CliError::Usage(format!(
                "the reduced network ({reduced} parameters) is not smaller than the original ({original}); use a smaller rho"
            )),
            E::DegenerateFinalLayer(n) => CliError::Usage(format!(
                "the last hidden layer has as many units as outputs ({n}); there is no budget for paths"
            )),
            e @ (E::Config(_)
            | E::InvalidArgument(_)
            | E::InvalidArch(_)
            | E::FractionOutOfRange(_)
            | E::SigmaOutOfRange(_)
            | E::PathBudgetExceeded { .. }) => CliError::Usage(e.to_string()),
            e => CliError::Runtime(e.into()),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Parses a strict JSON config; unknown keys are rejected.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))
}

/// Directory that relative paths in a config file are resolved against.
pub fn config_base(config: Option<&Path>) -> PathBuf {
    config
        .and_then(|p| p.parent())
        .map(Path::to_path_buf)
        .unwrap_or_default()
}

/// Flag, then `GLAI_SEED`, then config file, then `default`.
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>, default: u64) -> CliResult<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| usage(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(file.unwrap_or(default)),
    }
}

pub fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} not found: {}", path.display())))
    }
}

/// Creates `dir`, refusing a non-empty existing directory unless `force`.
pub fn prepare_out_dir(dir: &Path, force: bool) -> CliResult<()> {
    if dir.exists() {
        let non_empty = std::fs::read_dir(dir)
            .map_err(|e| usage(format!("cannot read {}: {e}", dir.display())))?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(usage(format!(
                "output directory {} is not empty; pass --force to overwrite",
                dir.display()
            )));
        }
    }
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(anyhow::anyhow!("cannot create {}: {e}", dir.display())))
}

/// Optional training overrides layered on a base [`TrainConfig`].
#[derive(Debug, Clone, Default, Deserialize, clap::Args)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long, value_parser = parse_loss)]
    pub loss: Option<Loss>,
    #[arg(long, value_parser = parse_monitor)]
    pub monitor: Option<Monitor>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub min_delta: Option<f64>,
}

impl TrainOverrides {
    pub fn or(self, other: TrainOverrides) -> TrainOverrides {
        TrainOverrides {
            learning_rate: self.learning_rate.or(other.learning_rate),
            batch_size: self.batch_size.or(other.batch_size),
            weight_decay: self.weight_decay.or(other.weight_decay),
            max_epochs: self.max_epochs.or(other.max_epochs),
            loss: self.loss.or(other.loss),
            monitor: self.monitor.or(other.monitor),
            patience: self.patience.or(other.patience),
            min_delta: self.min_delta.or(other.min_delta),
        }
    }

    pub fn apply(&self, base: TrainConfig, seed: u64) -> CliResult<TrainConfig> {
        let cfg = TrainConfig {
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            weight_decay: self.weight_decay.unwrap_or(base.weight_decay),
            max_epochs: self.max_epochs.unwrap_or(base.max_epochs),
            seed,
            loss: self.loss.unwrap_or(base.loss),
            early_stop: EarlyStop {
                monitor: self.monitor.unwrap_or(base.early_stop.monitor),
                patience: self.patience.unwrap_or(base.early_stop.patience),
                min_delta: self.min_delta.unwrap_or(base.early_stop.min_delta),
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_loss(s: &str) -> Result<Loss, String> {
    match s {
        "cross_entropy" => Ok(Loss::CrossEntropy),
        "squared_error" => Ok(Loss::SquaredError),
        _ => Err(format!("unknown loss {s:?} (cross_entropy | squared_error)")),
    }
}

fn parse_monitor(s: &str) -> Result<Monitor, String> {
    match s {
        "val_accuracy" => Ok(Monitor::ValAccuracy),
        "val_loss" => Ok(Monitor::ValLoss),
        _ => Err(format!("unknown monitor {s:?} (val_accuracy | val_loss)")),
    }
}

pub fn parse_task(s: &str) -> Result<TaskKind, String> {
    match s {
        "classification" => Ok(TaskKind::Classification),
        "regression" => Ok(TaskKind::Regression),
        _ => Err(format!("unknown task {s:?} (classification | regression)")),
    }
}

/// Schema for a CSV with a header row: columns named `label` or `y*` are
/// targets, everything else is a feature. Without such names the last
/// column is the target.
pub fn infer_csv_schema(path: &Path, task: TaskKind) -> CliResult<CsvSchema> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read dataset {}: {e}", path.display())))?;
    let header = text.lines().next().ok_or_else(|| usage(format!("dataset {} is empty", path.display())))?;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    let has_header = names.iter().any(|n| n.parse::<f64>().is_err());
    let targets: Vec<usize> = names
        .iter()
        .enumerate()
        .filter(|(_, n)| has_header && (**n == "label" || (n.starts_with('y') && n[1..].parse::<usize>().is_ok())))
        .map(|(i, _)| i)
        .collect();
    if targets.is_empty() {
        return Ok(CsvSchema::trailing_label(names.len(), has_header, task));
    }
    Ok(CsvSchema {
        has_header,
        label_columns: targets,
        feature_columns: None,
        task,
        classes: None,
    })
}
