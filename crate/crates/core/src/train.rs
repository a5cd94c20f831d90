//! Training configuration and the early-stopping loop shared by the MLP and
//! the GLAI estimator.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::linalg::Rng;
use crate::loss::Loss;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    ValAccuracy,
    ValLoss,
}

/// `min_delta` is in the units of the monitored metric; accuracy is a
/// fraction in `[0, 1]`, so 0.1 percentage points is `0.001`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStop {
    pub monitor: Monitor,
    pub patience: usize,
    pub min_delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub loss: Loss,
    pub early_stop: EarlyStop,
}

impl Default for TrainConfig {
    /// Frozen-backbone classification head settings: SGD, LR 1e-3, batch
    /// 16, weight decay 1e-3, patience 5, min delta 0.1 accuracy points.
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 16,
            weight_decay: 1e-3,
            max_epochs: 200,
            seed: 0,
            loss: Loss::CrossEntropy,
            early_stop: EarlyStop {
                monitor: Monitor::ValAccuracy,
                patience: 5,
                min_delta: 1e-3,
            },
        }
    }
}

/// Default estimator weight decay.
pub const GLAI_WEIGHT_DECAY: f64 = 0.1;

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if !(self.early_stop.min_delta >= 0.0 && self.early_stop.min_delta.is_finite()) {
            return Err(Error::Config("min_delta must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub loss: f64,
    pub accuracy: Option<f64>,
}

impl EvalResult {
    pub fn monitored(&self, monitor: Monitor) -> Result<f64> {
        match monitor {
            Monitor::ValLoss => Ok(self.loss),
            Monitor::ValAccuracy => self
                .accuracy
                .ok_or_else(|| Error::Config("val_accuracy monitored on a regression task".into())),
        }
    }
}

/// Anything trainable one epoch at a time and scoreable on a dataset.
pub trait Trainable: Clone {
    fn train_epoch(&mut self, train: &Dataset, cfg: &TrainConfig, rng: &mut Rng) -> Result<f64>;
    fn evaluate(&self, ds: &Dataset, loss: Loss) -> Result<EvalResult>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Full-size baseline MLP.
    Mlp,
    /// Reduced MLP trained to provide structure.
    Structure,
    /// Estimator over frozen structure.
    Estimator,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Mlp => "mlp",
            Phase::Structure => "structure",
            Phase::Estimator => "estimator",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: Phase,
    /// 1-based, counted across phases of a run.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: Option<f64>,
    pub m_t: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub records: Vec<EpochRecord>,
    pub monitor: Monitor,
    /// Epoch (1-based, local to this fit) of the best monitored value.
    pub best_epoch: usize,
    pub best_score: f64,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub total_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome<T> {
    pub report: FitReport,
    /// Snapshot taken at the best monitored validation value.
    pub best: T,
}

/// Is `value` better than `reference` by more than `min_delta`?
pub fn improves(monitor: Monitor, value: f64, reference: f64, min_delta: f64) -> bool {
    match monitor {
        Monitor::ValAccuracy => value > reference + min_delta,
        Monitor::ValLoss => value < reference - min_delta,
    }
}

/// Tracks patience against the best-so-far value.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    rule: EarlyStop,
    reference: Option<f64>,
    stale: usize,
}

impl EarlyStopper {
    pub fn new(rule: EarlyStop) -> Self {
        EarlyStopper {
            rule,
            reference: None,
            stale: 0,
        }
    }

    /// Feeds one epoch's monitored value; returns `true` when training should stop.
    pub fn update(&mut self, value: f64) -> bool {
        match self.reference {
            Some(r) if !improves(self.rule.monitor, value, r, self.rule.min_delta) => {
                self.stale += 1;
                self.stale >= self.rule.patience.max(1)
            }
            _ => {
                self.reference = Some(value);
                self.stale = 0;
                false
            }
        }
    }
}

pub(crate) fn elapsed_seconds(start: Instant) -> f64 {
    start.elapsed().as_secs_f64().max(1e-9)
}

/// Trains until `max_epochs` or until the monitored metric has not improved
/// by `min_delta` over its best value for `patience` consecutive epochs.
///
/// `epoch_offset` shifts the recorded epoch numbers so multi-phase runs can
/// share one numbering.
pub fn fit<T: Trainable>(
    model: &mut T,
    split: &Split,
    cfg: &TrainConfig,
    phase: Phase,
    epoch_offset: usize,
) -> Result<FitOutcome<T>> {
    cfg.validate()?;
    let monitor = cfg.early_stop.monitor;
    let mut rng = Rng::new(cfg.seed);
    let mut stopper = EarlyStopper::new(cfg.early_stop);
    let mut records = Vec::new();
    let mut best: Option<(usize, f64, T)> = None;
    let mut stopped_early = false;
    let started = Instant::now();

    for epoch in 1..=cfg.max_epochs {
        let t0 = Instant::now();
        let train_loss = model.train_epoch(&split.train, cfg, &mut rng)?;
        let eval = model.evaluate(&split.validation, cfg.loss)?;
        let seconds = elapsed_seconds(t0);
        let score = eval.monitored(monitor)?;
        records.push(EpochRecord {
            phase,
            epoch: epoch_offset + epoch,
            train_loss,
            val_loss: eval.loss,
            val_accuracy: eval.accuracy,
            m_t: None,
            seconds,
        });
        let is_best = match &best {
            None => true,
            Some((_, b, _)) => improves(monitor, score, *b, 0.0),
        };
        if is_best {
            best = Some((epoch, score, model.clone()));
        }
        if stopper.update(score) {
            stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }

    let (best_epoch, best_score, best_model) = match best {
        Some(b) => b,
        None => {
            let eval = model.evaluate(&split.validation, cfg.loss)?;
            (0, eval.monitored(monitor)?, model.clone())
        }
    };
    Ok(FitOutcome {
        report: FitReport {
            epochs_run: records.len(),
            records,
            monitor,
            best_epoch,
            best_score,
            stopped_early,
            total_seconds: elapsed_seconds(started),
        },
        best: best_model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Target, Task};
    use crate::linalg::Vector;

    /// Replays a scripted validation-loss curve.
    #[derive(Clone)]
    struct Scripted {
        curve: Vec<f64>,
        epoch: usize,
    }

    impl Trainable for Scripted {
        fn train_epoch(&mut self, _: &Dataset, _: &TrainConfig, _: &mut Rng) -> Result<f64> {
            self.epoch += 1;
            Ok(0.0)
        }
        fn evaluate(&self, _: &Dataset, _: Loss) -> Result<EvalResult> {
            Ok(EvalResult {
                loss: self.curve[self.epoch - 1],
                accuracy: Some(1.0 - self.curve[self.epoch - 1]),
            })
        }
    }

    fn dummy_split() -> Split {
        let ds = Dataset::new(
            vec![Vector::new(vec![0.0]); 2],
            vec![Target::Class(0); 2],
            Task::Classification { classes: 1 },
        )
        .unwrap();
        Split {
            train: ds.clone(),
            validation: ds,
            seed: 0,
            train_indices: vec![0],
            validation_indices: vec![1],
        }
    }

    fn cfg(monitor: Monitor, patience: usize, max_epochs: usize) -> TrainConfig {
        TrainConfig {
            max_epochs,
            early_stop: EarlyStop {
                monitor,
                patience,
                min_delta: 0.0,
            },
            ..TrainConfig::default()
        }
    }

    fn run(curve: &[f64], c: TrainConfig) -> FitOutcome<Scripted> {
        let mut m = Scripted {
            curve: curve.to_vec(),
            epoch: 0,
        };
        fit(&mut m, &dummy_split(), &c, Phase::Mlp, 0).unwrap()
    }

    #[test]
    fn patience_zero_stops_at_first_non_improving_epoch() {
        let out = run(&[0.5, 0.4, 0.45, 0.3, 0.2], cfg(Monitor::ValLoss, 0, 5));
        assert_eq!(out.report.epochs_run, 3);
        assert!(out.report.stopped_early);
        assert_eq!(out.report.best_epoch, 2);
    }

    #[test]
    fn max_epochs_one_records_one_epoch() {
        let out = run(&[0.5, 0.4], cfg(Monitor::ValLoss, 5, 1));
        assert_eq!(out.report.records.len(), 1);
        assert!(!out.report.stopped_early);
    }

    #[test]
    fn strictly_decreasing_loss_runs_to_the_cap() {
        let curve: Vec<f64> = (0..20).map(|i| 1.0 / (i as f64 + 1.0)).collect();
        let out = run(&curve, cfg(Monitor::ValLoss, 2, 20));
        assert_eq!(out.report.epochs_run, 20);
        assert_eq!(out.report.best_epoch, 20);
    }

    #[test]
    fn min_delta_is_measured_against_best_so_far() {
        // Small steady gains below min_delta never reset patience.
        let curve = [1.0, 0.99, 0.98, 0.97, 0.96];
        let mut c = cfg(Monitor::ValLoss, 2, 5);
        c.early_stop.min_delta = 0.05;
        let out = run(&curve, c);
        assert_eq!(out.report.epochs_run, 3);
        // The snapshot still tracks the true best epoch.
        assert_eq!(out.report.best_epoch, 3);
        assert_eq!(out.report.best_score, 0.98);
    }

    #[test]
    fn accuracy_monitor_maximizes() {
        let out = run(&[0.5, 0.2, 0.3, 0.4, 0.6], cfg(Monitor::ValAccuracy, 2, 5));
        assert_eq!(out.report.best_epoch, 2);
        assert!((out.report.best_score - 0.8).abs() < 1e-12);
        assert_eq!(out.report.epochs_run, 4);
    }

    #[test]
    fn best_is_never_worse_than_any_record() {
        let curve = [0.9, 0.3, 0.7, 0.2, 0.25, 0.5, 0.6, 0.1];
        let out = run(&curve, cfg(Monitor::ValLoss, 3, 8));
        for r in &out.report.records {
            assert!(out.report.best_score <= r.val_loss);
        }
        assert!(out.report.records.iter().all(|r| r.seconds > 0.0));
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.weight_decay = -1.0;
        assert!(c.validate().is_err());
    }
}
