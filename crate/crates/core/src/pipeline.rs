//! Two-phase GLAI runs, the MLP baseline and their comparison.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{gen_teacher, load_csv, load_idx, split, CsvSchema, Dataset, Split, TaskKind};
use crate::error::{Error, Result};
use crate::glai::{compute_sigma, expand, GlaiModel, ParityLedger, PruneReport, PruneScope};
use crate::linalg::Rng;
use crate::mlp::{Architecture, MlpModel};
use crate::paths::{convergence_monitor, structural_metric, ConvergenceRule, OmegaSet};
use crate::train::{
    elapsed_seconds, fit, improves, EpochRecord, Monitor, Phase, TrainConfig,
    GLAI_WEIGHT_DECAY,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Inputs labelled by a randomly initialized teacher network.
    Teacher {
        arch: Architecture,
        n_samples: usize,
        #[serde(default)]
        noise_std: f64,
        task: TaskKind,
        seed: u64,
    },
    Csv {
        path: PathBuf,
        schema: CsvSchema,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
}

impl DatasetSpec {
    /// Relative file paths are resolved against `base`.
    pub fn load(&self, base: &Path) -> Result<Dataset> {
        match self {
            DatasetSpec::Teacher {
                arch,
                n_samples,
                noise_std,
                task,
                seed,
            } => Ok(gen_teacher(*seed, arch, *n_samples, *noise_std, *task)?.0),
            DatasetSpec::Csv { path, schema } => load_csv(&base.join(path), schema),
            DatasetSpec::Idx { images, labels } => load_idx(&base.join(images), &base.join(labels)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub val_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Phase1Epochs {
    Fixed { epochs: usize },
    /// Stop at the first epoch where the convergence rule fires on `m_t`.
    Auto { max_epochs: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlaiPhase1 {
    pub rho: f64,
    pub epochs: Phase1Epochs,
    #[serde(default = "default_scope")]
    pub prune_scope: PruneScope,
}

fn default_scope() -> PruneScope {
    PruneScope::Global
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaSource {
    Train,
    Validation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OmegaSpec {
    pub source: OmegaSource,
    pub max_samples: usize,
}

impl Default for OmegaSpec {
    fn default() -> Self {
        OmegaSpec {
            source: OmegaSource::Train,
            max_samples: 512,
        }
    }
}

impl OmegaSpec {
    pub fn build(&self, split: &Split, seed: u64) -> Result<OmegaSet> {
        let ds = match self.source {
            OmegaSource::Train => &split.train,
            OmegaSource::Validation => &split.validation,
        };
        OmegaSet::from_dataset(ds, self.max_samples, seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub arch: Architecture,
    pub dataset: DatasetSpec,
    pub split: SplitSpec,
    /// Model initialization seed shared by both arms.
    pub seed: u64,
    pub mlp_train: TrainConfig,
    pub glai_phase1: GlaiPhase1,
    pub glai_phase2: TrainConfig,
    #[serde(default)]
    pub convergence_rule: ConvergenceRule,
    #[serde(default)]
    pub omega: OmegaSpec,
}

impl ExperimentConfig {
    /// Teacher-data classification defaults for `arch`.
    pub fn teacher_default(arch: Architecture, n_samples: usize, rho: f64, seed: u64) -> Self {
        let mlp_train = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        ExperimentConfig {
            dataset: DatasetSpec::Teacher {
                arch: arch.clone(),
                n_samples,
                noise_std: 0.0,
                task: TaskKind::Classification,
                seed,
            },
            arch,
            split: SplitSpec {
                val_fraction: 0.2,
                seed,
            },
            seed,
            mlp_train,
            glai_phase1: GlaiPhase1 {
                rho,
                epochs: Phase1Epochs::Auto { max_epochs: 50 },
                prune_scope: PruneScope::Global,
            },
            glai_phase2: TrainConfig {
                weight_decay: GLAI_WEIGHT_DECAY,
                ..mlp_train
            },
            convergence_rule: ConvergenceRule::default(),
            omega: OmegaSpec::default(),
        }
    }

    /// Same experiment under another model/shuffle seed. Data and split are kept.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seed = seed;
        c.mlp_train.seed = seed;
        c.glai_phase2.seed = seed;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.mlp_train.validate()?;
        self.glai_phase2.validate()?;
        let rho = self.glai_phase1.rho;
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::Config(format!("rho must lie in (0, 1), got {rho}")));
        }
        match self.glai_phase1.epochs {
            Phase1Epochs::Fixed { epochs: 0 } | Phase1Epochs::Auto { max_epochs: 0 } => {
                return Err(Error::Config(
                    "phase 1 needs at least one epoch to produce a structure".into(),
                ))
            }
            _ => {}
        }
        if self.omega.max_samples == 0 {
            return Err(Error::Config("omega max_samples must be >= 1".into()));
        }
        if !(self.split.val_fraction > 0.0 && self.split.val_fraction < 1.0) {
            return Err(Error::FractionOutOfRange(self.split.val_fraction));
        }
        if self.convergence_rule.window == 0 || !(self.convergence_rule.rel_threshold > 0.0) {
            return Err(Error::Config(format!(
                "invalid convergence rule {:?}",
                self.convergence_rule
            )));
        }
        check_fairness(&self.mlp_train, &self.glai_phase2)
    }

    pub fn load_split(&self, base: &Path) -> Result<Split> {
        let ds = self.dataset.load(base)?;
        if ds.input_dim() != self.arch.input_dim() || ds.task().output_dim() != self.arch.output_dim() {
            return Err(Error::Config(format!(
                "dataset shape ({} inputs, {} outputs) does not fit architecture {}",
                ds.input_dim(),
                ds.task().output_dim(),
                self.arch
            )));
        }
        split(&ds, self.split.val_fraction, self.split.seed)
    }
}

/// Both arms must share seed, batch size, learning rate, loss and early-stop rule.
pub fn check_fairness(a: &TrainConfig, b: &TrainConfig) -> Result<()> {
    let mut diffs = Vec::new();
    if a.seed != b.seed {
        diffs.push("seed");
    }
    if a.batch_size != b.batch_size {
        diffs.push("batch_size");
    }
    if a.learning_rate != b.learning_rate {
        diffs.push("learning_rate");
    }
    if a.loss != b.loss {
        diffs.push("loss");
    }
    if a.early_stop != b.early_stop {
        diffs.push("early_stop");
    }
    if diffs.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "arms differ in {}",
            diffs.join(", ")
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub records: Vec<EpochRecord>,
    pub monitor: Monitor,
    /// Best monitored validation value of the final model's training phase.
    pub best_validation_score: f64,
    /// Total epochs across all phases.
    pub epochs_to_stop: usize,
    pub total_wall_clock: f64,
    #[serde(default)]
    pub phase1_epochs: Option<usize>,
    /// Epoch at which the `m_t` rule fired, if it did.
    #[serde(default)]
    pub convergence_epoch: Option<usize>,
    #[serde(default)]
    pub parity: Option<ParityLedger>,
    #[serde(default)]
    pub prune: Option<PruneReport>,
}

impl RunReport {
    /// Best monitored value among records of `phase`.
    pub fn best_in_phase(&self, phase: Phase) -> Option<f64> {
        self.records
            .iter()
            .filter(|r| r.phase == phase)
            .filter_map(|r| match self.monitor {
                Monitor::ValLoss => Some(r.val_loss),
                Monitor::ValAccuracy => r.val_accuracy,
            })
            .reduce(|best, v| if improves(self.monitor, v, best, 0.0) { v } else { best })
    }

    pub fn m_t_series(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.m_t).collect()
    }

    pub fn write_records_csv(&self, path: &Path) -> Result<()> {
        write_records_csv(&self.records, path)
    }
}

/// `phase,epoch,train_loss,val_loss,val_acc,m_t,seconds`; absent values are empty.
pub fn write_records_csv(records: &[EpochRecord], path: &Path) -> Result<()> {
    let mut out = String::from("phase,epoch,train_loss,val_loss,val_acc,m_t,seconds\n");
    let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    for r in records {
        out.push_str(&format!(
            "{},{},{:?},{:?},{},{},{:?}\n",
            r.phase.as_str(),
            r.epoch,
            r.train_loss,
            r.val_loss,
            opt(r.val_accuracy),
            opt(r.m_t),
            r.seconds
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct MlpRun {
    pub report: RunReport,
    /// Snapshot at the best validation epoch.
    pub model: MlpModel,
}

#[derive(Debug, Clone)]
pub struct GlaiRun {
    pub report: RunReport,
    /// Best estimator snapshot over the frozen structure.
    pub model: GlaiModel,
}

/// Full-size MLP trained with early stopping.
pub fn run_mlp_baseline(cfg: &ExperimentConfig, split: &Split) -> Result<MlpRun> {
    cfg.validate()?;
    let started = Instant::now();
    let mut model = MlpModel::new(cfg.arch.clone(), cfg.seed)?;
    let out = fit(&mut model, split, &cfg.mlp_train, Phase::Mlp, 0)?;
    let total = elapsed_seconds(started);
    let mut best = out.best;
    best.seed = Some(cfg.seed);
    Ok(MlpRun {
        report: RunReport {
            epochs_to_stop: out.report.epochs_run,
            best_validation_score: out.report.best_score,
            monitor: out.report.monitor,
            records: out.report.records,
            total_wall_clock: total,
            phase1_epochs: None,
            convergence_epoch: None,
            parity: None,
            prune: None,
        },
        model: best,
    })
}

#[derive(Debug, Clone)]
pub struct Phase1Outcome {
    pub structure: MlpModel,
    pub records: Vec<EpochRecord>,
    pub convergence_epoch: Option<usize>,
}

/// Trains `model` under the MLP arm's optimizer settings, recording `m_t`
/// each epoch, until the fixed budget is spent or the convergence rule fires.
/// Validation scores are recorded but never stop this phase.
pub fn train_structure(
    mut model: MlpModel,
    split: &Split,
    train_cfg: &TrainConfig,
    epochs: Phase1Epochs,
    rule: ConvergenceRule,
    omega: &OmegaSet,
) -> Result<Phase1Outcome> {
    train_cfg.validate()?;
    let (budget, auto) = match epochs {
        Phase1Epochs::Fixed { epochs } => (epochs.max(1), false),
        Phase1Epochs::Auto { max_epochs } => (max_epochs.max(1), true),
    };
    let mut rng = Rng::new(train_cfg.seed);
    let mut records = Vec::with_capacity(budget);
    let mut history = Vec::with_capacity(budget);
    let mut convergence_epoch = None;
    for epoch in 1..=budget {
        let t0 = Instant::now();
        let prev = model.clone();
        let train_loss = model.train_epoch(&split.train, train_cfg, &mut rng)?;
        let m_t = structural_metric(&prev, &model, omega)?;
        let eval = model.evaluate(&split.validation, train_cfg.loss)?;
        history.push(m_t);
        records.push(EpochRecord {
            phase: Phase::Structure,
            epoch,
            train_loss,
            val_loss: eval.loss,
            val_accuracy: eval.accuracy,
            m_t: Some(m_t),
            seconds: elapsed_seconds(t0),
        });
        if convergence_epoch.is_none() {
            let c = convergence_monitor(&history, rule)?;
            if c.converged {
                convergence_epoch = c.epoch;
                if auto {
                    break;
                }
            }
        }
    }
    Ok(Phase1Outcome {
        structure: model,
        records,
        convergence_epoch,
    })
}

/// Phase 1 trains the reduced MLP; phase 2 expands it, prunes to parameter
/// parity and trains the estimator with early stopping. The wall clock
/// covers both phases including expansion and pruning.
pub fn run_glai(cfg: &ExperimentConfig, split: &Split) -> Result<GlaiRun> {
    cfg.validate()?;
    let sigma = compute_sigma(&cfg.arch, cfg.glai_phase1.rho)?;
    let started = Instant::now();

    let omega = cfg.omega.build(split, cfg.seed)?;
    let reduced = MlpModel::new(sigma.reduced_arch.clone(), cfg.seed)?;
    let p1 = train_structure(
        reduced,
        split,
        &cfg.mlp_train,
        cfg.glai_phase1.epochs,
        cfg.convergence_rule,
        &omega,
    )?;
    let phase1_epochs = p1.records.len();

    let mut structure = p1.structure;
    structure.seed = Some(cfg.seed);
    let full = expand(&structure)?;
    let (mut pruned, prune) = full.prune_scoped(sigma.sigma, &omega, cfg.glai_phase1.prune_scope)?;
    pruned.parity = Some(ParityLedger::new(&sigma, pruned.path_total() as u64));

    let out = fit(&mut pruned, split, &cfg.glai_phase2, Phase::Estimator, phase1_epochs)?;
    let total = elapsed_seconds(started);

    let mut records = p1.records;
    records.extend(out.report.records);
    Ok(GlaiRun {
        report: RunReport {
            records,
            monitor: out.report.monitor,
            best_validation_score: out.report.best_score,
            epochs_to_stop: phase1_epochs + out.report.epochs_run,
            total_wall_clock: total,
            phase1_epochs: Some(phase1_epochs),
            convergence_epoch: p1.convergence_epoch,
            parity: out.best.parity.clone(),
            prune: Some(prune),
        },
        model: out.best,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub seed: u64,
    pub mlp: RunReport,
    pub glai: RunReport,
    /// MLP wall clock over GLAI wall clock.
    pub speedup: f64,
    /// GLAI best validation score minus the MLP's.
    pub bvs_delta: f64,
}

impl ComparisonReport {
    pub fn from_runs(seed: u64, mlp: RunReport, glai: RunReport) -> Result<Self> {
        if mlp.monitor != glai.monitor {
            return Err(Error::Config("arms monitor different metrics".into()));
        }
        Ok(ComparisonReport {
            seed,
            speedup: mlp.total_wall_clock / glai.total_wall_clock,
            bvs_delta: glai.best_validation_score - mlp.best_validation_score,
            mlp,
            glai,
        })
    }
}

/// Runs both arms on one split.
pub fn compare(cfg: &ExperimentConfig, split: &Split) -> Result<ComparisonReport> {
    cfg.validate()?;
    let mlp = run_mlp_baseline(cfg, split)?;
    let glai = run_glai(cfg, split)?;
    ComparisonReport::from_runs(cfg.seed, mlp.report, glai.report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanRow {
    pub speedup: f64,
    pub bvs_delta: f64,
    pub mlp_bvs: f64,
    pub glai_bvs: f64,
    pub mlp_epochs: f64,
    pub glai_epochs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiSeedReport {
    pub per_seed: Vec<ComparisonReport>,
    pub mean: MeanRow,
}

impl MultiSeedReport {
    pub fn aggregate(per_seed: Vec<ComparisonReport>) -> Result<Self> {
        if per_seed.is_empty() {
            return Err(Error::InvalidArgument("no runs to aggregate".into()));
        }
        let n = per_seed.len() as f64;
        let mean = |f: &dyn Fn(&ComparisonReport) -> f64| per_seed.iter().map(f).sum::<f64>() / n;
        let row = MeanRow {
            speedup: mean(&|r| r.speedup),
            bvs_delta: mean(&|r| r.bvs_delta),
            mlp_bvs: mean(&|r| r.mlp.best_validation_score),
            glai_bvs: mean(&|r| r.glai.best_validation_score),
            mlp_epochs: mean(&|r| r.mlp.epochs_to_stop as f64),
            glai_epochs: mean(&|r| r.glai.epochs_to_stop as f64),
        };
        Ok(MultiSeedReport { per_seed, mean: row })
    }
}

/// Repeats [`compare`] sequentially for seeds `cfg.seed, cfg.seed + 1, ...`.
pub fn compare_seeds(cfg: &ExperimentConfig, split: &Split, seeds: usize) -> Result<MultiSeedReport> {
    if seeds == 0 {
        return Err(Error::InvalidArgument("seeds must be >= 1".into()));
    }
    let runs = (0..seeds as u64)
        .map(|i| compare(&cfg.with_seed(cfg.seed.wrapping_add(i)), split))
        .collect::<Result<Vec<_>>>()?;
    MultiSeedReport::aggregate(runs)
}
