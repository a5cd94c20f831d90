//! The path-selector/estimator model.
//!
//! A [`GlaiModel`] keeps a frozen MLP whose only job is to produce activation
//! patterns. For each retained path the selector emits its contribution
//! (origin value gated by the path's indicator) and the estimator is a linear
//! map with one independent weight per path, block-structured by output.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Target};
use crate::error::{Error, Result};
use crate::linalg::{Rng, Vector};
use crate::loss::Loss;
use crate::mlp::{evaluate_with, reduce_arch, ActivationPattern, Architecture, MlpModel};
use crate::paths::{path_count, Origin, OmegaSet, PathTable, DEFAULT_PATH_BUDGET};
use crate::train::{EvalResult, TrainConfig, Trainable};

/// Flattened gate lists for fast indicator evaluation.
#[derive(Debug, Clone, PartialEq, Default)]
struct CompiledPaths {
    /// Offset of hidden layer `l` (1-based) in a flat pattern, at index `l - 1`.
    layer_offsets: Vec<usize>,
    /// Input coordinate per path; `None` for bias origins.
    origin: Vec<Option<usize>>,
    /// `gates[gate_start[p]..gate_start[p + 1]]` are flat neuron indices path `p` must find active.
    gate_start: Vec<usize>,
    gates: Vec<usize>,
    /// Paths of output `i` occupy `output_start[i]..output_start[i + 1]`.
    output_start: Vec<usize>,
}

impl CompiledPaths {
    fn build(table: &PathTable) -> Self {
        let mut layer_offsets = Vec::new();
        let mut acc = 0;
        for &n in table.arch().hidden_dims() {
            layer_offsets.push(acc);
            acc += n;
        }
        let mut c = CompiledPaths {
            layer_offsets,
            gate_start: vec![0],
            output_start: vec![0],
            ..Default::default()
        };
        for group in table.outputs() {
            for wp in group {
                c.origin.push(match wp.path.origin {
                    Origin::Input(j) => Some(j),
                    Origin::Bias(_) => None,
                });
                for (layer, h) in wp.path.hidden_nodes() {
                    c.gates.push(c.layer_offsets[layer - 1] + h);
                }
                c.gate_start.push(c.gates.len());
            }
            c.output_start.push(c.origin.len());
        }
        c
    }

    fn flatten(pattern: &ActivationPattern) -> Vec<bool> {
        pattern.layers.iter().flatten().copied().collect()
    }

    #[inline]
    fn contribution(&self, p: usize, x: &[f64], flat: &[bool]) -> f64 {
        let gates = &self.gates[self.gate_start[p]..self.gate_start[p + 1]];
        if gates.iter().all(|&g| flat[g]) {
            self.origin[p].map_or(1.0, |j| x[j])
        } else {
            0.0
        }
    }
}

/// Parameter-parity bookkeeping between an original MLP and its GLAI counterpart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParityLedger {
    /// Parameters of the original network.
    pub o: u64,
    /// Parameters of the reduced (structure) network.
    pub r: u64,
    /// Paths of the reduced network before pruning.
    pub e_total: u64,
    pub sigma: f64,
    pub clamped: bool,
    pub retained_paths: u64,
    pub glai_param_total: u64,
    /// Real-valued closed forms, kept for diagnostics only.
    #[serde(default)]
    pub r_closed_form: Option<f64>,
    #[serde(default)]
    pub e_closed_form: Option<f64>,
    /// Max |GLAI − MLP| seen by the unpruned equivalence self-test, when run.
    #[serde(default)]
    pub equivalence_max_error: Option<f64>,
}

impl ParityLedger {
    pub fn new(sigma: &SigmaResult, retained_paths: u64) -> Self {
        ParityLedger {
            o: sigma.o,
            r: sigma.r,
            e_total: sigma.e,
            sigma: sigma.sigma,
            clamped: sigma.clamped,
            retained_paths,
            glai_param_total: sigma.r + retained_paths,
            r_closed_form: Some(sigma.r_closed_form),
            e_closed_form: Some(sigma.e_closed_form),
            equivalence_max_error: None,
        }
    }

    /// Ledger for an explicitly chosen `sigma`: `o` is the budget being
    /// matched, `r` the structure size and `e_total` its path count.
    pub fn manual(o: u64, r: u64, e_total: u64, sigma: f64, retained_paths: u64) -> Self {
        ParityLedger {
            o,
            r,
            e_total,
            sigma,
            clamped: false,
            retained_paths,
            glai_param_total: r + retained_paths,
            r_closed_form: None,
            e_closed_form: None,
            equivalence_max_error: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneScope {
    /// One quantile over all paths of all outputs.
    Global,
    /// The same fraction kept independently for each output.
    PerOutput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub removed_count: u64,
    pub kept_count: u64,
    /// Lowest kept score (`+∞` when nothing is kept, `0` when nothing has a score).
    pub score_threshold: f64,
    /// Σ of removed `|w|·‖c‖₁`.
    pub error_bound: f64,
    /// Σ over outputs of the mean over Ω of `|φ_i − φ̃_i|`.
    pub realized_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GlaiFile", into = "GlaiFile")]
pub struct GlaiModel {
    structure: MlpModel,
    retained: PathTable,
    estimator: Vec<Vec<f64>>,
    pub parity: Option<ParityLedger>,
    pub prune: Option<PruneReport>,
    compiled: CompiledPaths,
}

/// Unpruned rewrite of `model`: every path, estimator initialized to the path weights.
pub fn expand(model: &MlpModel) -> Result<GlaiModel> {
    expand_with_budget(model, DEFAULT_PATH_BUDGET)
}

pub fn expand_with_budget(model: &MlpModel, budget: u64) -> Result<GlaiModel> {
    let table = PathTable::from_model(model, budget)?;
    let estimator = table
        .outputs()
        .iter()
        .map(|g| g.iter().map(|wp| wp.weight).collect())
        .collect();
    GlaiModel::new(model.clone(), table, estimator)
}

impl GlaiModel {
    pub fn new(structure: MlpModel, retained: PathTable, estimator: Vec<Vec<f64>>) -> Result<Self> {
        if retained.arch() != structure.arch() {
            return Err(Error::ArchMismatch);
        }
        if estimator.len() != retained.outputs().len()
            || estimator
                .iter()
                .zip(retained.outputs())
                .any(|(e, g)| e.len() != g.len())
        {
            return Err(Error::InvalidArgument(
                "estimator weights not aligned with retained paths".into(),
            ));
        }
        if estimator.iter().flatten().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("estimator weight".into()));
        }
        let compiled = CompiledPaths::build(&retained);
        Ok(GlaiModel {
            structure,
            retained,
            estimator,
            parity: None,
            prune: None,
            compiled,
        })
    }

    pub fn structure(&self) -> &MlpModel {
        &self.structure
    }

    pub fn retained(&self) -> &PathTable {
        &self.retained
    }

    pub fn estimator(&self) -> &[Vec<f64>] {
        &self.estimator
    }

    pub fn estimator_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.estimator
    }

    pub fn arch(&self) -> &Architecture {
        self.structure.arch()
    }

    pub fn path_total(&self) -> usize {
        self.retained.len()
    }

    /// Frozen structure parameters plus one weight per retained path.
    pub fn param_count(&self) -> usize {
        self.structure.param_count() + self.path_total()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch().input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.arch().input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn flat_pattern(&self, x: &[f64]) -> Result<Vec<bool>> {
        self.check_input(x)?;
        Ok(CompiledPaths::flatten(&self.structure.pattern(x)?))
    }

    /// `S_i(x)` for every output, in retained-path order.
    pub fn selector_features(&self, x: &[f64]) -> Result<Vec<Vector>> {
        let flat = self.flat_pattern(x)?;
        let c = &self.compiled;
        Ok(c.output_start
            .windows(2)
            .map(|r| Vector::new((r[0]..r[1]).map(|p| c.contribution(p, x, &flat)).collect()))
            .collect())
    }

    /// `f(x)_i = Σ_p ω̃_p · c_p(x)` over the retained paths of output `i`.
    pub fn forward(&self, x: &[f64]) -> Result<Vector> {
        let flat = self.flat_pattern(x)?;
        Ok(self.forward_flat(x, &flat))
    }

    fn forward_flat(&self, x: &[f64], flat: &[bool]) -> Vector {
        let c = &self.compiled;
        Vector::new(
            c.output_start
                .windows(2)
                .zip(&self.estimator)
                .map(|(r, w)| {
                    (r[0]..r[1])
                        .zip(w)
                        .map(|(p, wp)| wp * c.contribution(p, x, flat))
                        .sum()
                })
                .collect(),
        )
    }

    /// `‖c_p‖₁` over Ω for every retained path, grouped by output.
    pub fn path_norms(&self, omega: &OmegaSet) -> Result<Vec<Vec<f64>>> {
        let c = &self.compiled;
        let mut norms: Vec<Vec<f64>> = self.estimator.iter().map(|w| vec![0.0; w.len()]).collect();
        for x in omega.samples() {
            let flat = self.flat_pattern(x)?;
            for (i, r) in c.output_start.windows(2).enumerate() {
                for (slot, p) in norms[i].iter_mut().zip(r[0]..r[1]) {
                    *slot += c.contribution(p, x, &flat).abs();
                }
            }
        }
        let n = omega.len() as f64;
        norms.iter_mut().flatten().for_each(|v| *v /= n);
        Ok(norms)
    }

    /// Pruning score `|ω̃_p| · ‖c_p‖₁` per retained path, grouped by output.
    pub fn score_paths(&self, omega: &OmegaSet) -> Result<Vec<Vec<f64>>> {
        let mut scores = self.path_norms(omega)?;
        for (s, w) in scores.iter_mut().zip(&self.estimator) {
            for (sv, wv) in s.iter_mut().zip(w) {
                *sv *= wv.abs();
            }
        }
        Ok(scores)
    }

    /// Keeps the `ceil(sigma · P)` highest-scoring paths (ties: canonical order).
    pub fn prune(&self, sigma: f64, omega: &OmegaSet) -> Result<(GlaiModel, PruneReport)> {
        self.prune_scoped(sigma, omega, PruneScope::Global)
    }

    pub fn prune_scoped(
        &self,
        sigma: f64,
        omega: &OmegaSet,
        scope: PruneScope,
    ) -> Result<(GlaiModel, PruneReport)> {
        if !(sigma > 0.0 && sigma <= 1.0) {
            return Err(Error::SigmaOutOfRange(sigma));
        }
        let scores = self.score_paths(omega)?;
        let flat_scores: Vec<f64> = scores.iter().flatten().copied().collect();
        let mut keep = vec![false; flat_scores.len()];

        let mut select = |indices: Vec<usize>| {
            let quota = ((sigma * indices.len() as f64).ceil() as usize).min(indices.len());
            let mut ranked = indices;
            // Stable sort keeps canonical order among equal scores.
            ranked.sort_by(|&a, &b| flat_scores[b].total_cmp(&flat_scores[a]));
            for &p in &ranked[..quota] {
                keep[p] = true;
            }
        };
        match scope {
            PruneScope::Global => select((0..flat_scores.len()).collect()),
            PruneScope::PerOutput => {
                for r in self.compiled.output_start.windows(2) {
                    select((r[0]..r[1]).collect());
                }
            }
        }

        let retained = self.retained.retain_by_index(|p| keep[p]);
        let mut flat = 0;
        let estimator = self
            .estimator
            .iter()
            .map(|w| {
                w.iter()
                    .filter(|_| {
                        let k = keep[flat];
                        flat += 1;
                        k
                    })
                    .copied()
                    .collect()
            })
            .collect();
        let mut pruned = GlaiModel::new(self.structure.clone(), retained, estimator)?;
        pruned.parity = self.parity.clone();

        let error_bound: f64 = flat_scores
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| !k)
            .map(|(s, _)| s)
            .sum();
        let score_threshold = flat_scores
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(s, _)| *s)
            .fold(f64::INFINITY, f64::min);
        let mut realized = 0.0;
        for x in omega.samples() {
            let a = self.forward(x)?;
            let b = pruned.forward(x)?;
            realized += a.iter().zip(b.iter()).map(|(u, v)| (u - v).abs()).sum::<f64>();
        }
        let kept_count = keep.iter().filter(|&&k| k).count() as u64;
        let report = PruneReport {
            removed_count: keep.len() as u64 - kept_count,
            kept_count,
            score_threshold,
            error_bound,
            realized_error: realized / omega.len() as f64,
        };
        pruned.prune = Some(report.clone());
        Ok((pruned, report))
    }

    /// Loss and estimator gradient (`c_p(x) · ∂loss/∂ŷ_i`) for one sample.
    pub fn sample_gradient(&self, x: &[f64], target: &Target, loss: Loss) -> Result<(f64, Vec<Vec<f64>>)> {
        let mut grad: Vec<Vec<f64>> = self.estimator.iter().map(|w| vec![0.0; w.len()]).collect();
        let l = self.accumulate_gradient(x, target, loss, &mut grad)?;
        Ok((l, grad))
    }

    /// Summed (not averaged) gradient over several samples.
    pub fn batch_gradient(&self, batch: &[(&[f64], &Target)], loss: Loss) -> Result<(f64, Vec<Vec<f64>>)> {
        let mut grad: Vec<Vec<f64>> = self.estimator.iter().map(|w| vec![0.0; w.len()]).collect();
        let mut total = 0.0;
        for (x, t) in batch {
            total += self.accumulate_gradient(x, t, loss, &mut grad)?;
        }
        Ok((total, grad))
    }

    fn accumulate_gradient(
        &self,
        x: &[f64],
        target: &Target,
        loss: Loss,
        grad: &mut [Vec<f64>],
    ) -> Result<f64> {
        let flat = self.flat_pattern(x)?;
        let y = self.forward_flat(x, &flat);
        let (value, dy) = loss.value_and_grad(&y, target)?;
        let c = &self.compiled;
        for (i, r) in c.output_start.windows(2).enumerate() {
            if dy[i] == 0.0 {
                continue;
            }
            for (g, p) in grad[i].iter_mut().zip(r[0]..r[1]) {
                let contrib = c.contribution(p, x, &flat);
                if contrib != 0.0 {
                    *g += contrib * dy[i];
                }
            }
        }
        Ok(value)
    }

    fn check_dataset(&self, ds: &Dataset) -> Result<()> {
        if ds.input_dim() != self.arch().input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.arch().input_dim(),
                got: ds.input_dim(),
            });
        }
        if ds.task().output_dim() != self.arch().output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.arch().output_dim(),
                got: ds.task().output_dim(),
            });
        }
        Ok(())
    }

    /// One epoch of mini-batch SGD on the estimator weights only. The
    /// structure MLP is never touched.
    pub fn train_estimator_epoch(&mut self, train: &Dataset, cfg: &TrainConfig, rng: &mut Rng) -> Result<f64> {
        cfg.validate_allowing_zero_lr()?;
        self.check_dataset(train)?;
        let mut order: Vec<usize> = (0..train.len()).collect();
        rng.shuffle(&mut order);
        let mut grad: Vec<Vec<f64>> = self.estimator.iter().map(|w| vec![0.0; w.len()]).collect();
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().flatten().for_each(|g| *g = 0.0);
            for &i in batch {
                let (x, t) = train.sample(i);
                total += self.accumulate_gradient(x, t, cfg.loss, &mut grad)?;
            }
            let scale = 1.0 / batch.len() as f64;
            for (w, g) in self.estimator.iter_mut().zip(&grad) {
                for (wv, gv) in w.iter_mut().zip(g) {
                    *wv -= cfg.learning_rate * (gv * scale + cfg.weight_decay * *wv);
                }
            }
        }
        let mean = total / train.len() as f64;
        if !mean.is_finite() {
            return Err(Error::NonFinite("estimator training loss".into()));
        }
        Ok(mean)
    }

    pub fn evaluate(&self, ds: &Dataset, loss: Loss) -> Result<EvalResult> {
        self.check_dataset(ds)?;
        evaluate_with(ds, loss, |x| self.forward(x))
    }

    /// Max over `inputs` of `|GLAI(x) − MLP(x)|_∞ / (1 + |MLP(x)|_∞)` against `reference`.
    pub fn equivalence_error(&self, reference: &MlpModel, inputs: &[Vector]) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for x in inputs {
            let g = self.forward(x)?;
            let f = reference.forward(x)?;
            let diff = g.iter().zip(f.iter()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            worst = worst.max(diff / (1.0 + f.max_abs()));
        }
        Ok(worst)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

impl Trainable for GlaiModel {
    fn train_epoch(&mut self, train: &Dataset, cfg: &TrainConfig, rng: &mut Rng) -> Result<f64> {
        self.train_estimator_epoch(train, cfg, rng)
    }

    fn evaluate(&self, ds: &Dataset, loss: Loss) -> Result<EvalResult> {
        GlaiModel::evaluate(self, ds, loss)
    }
}

impl TrainConfig {
    /// Like [`TrainConfig::validate`] but admits a zero learning rate.
    fn validate_allowing_zero_lr(&self) -> Result<()> {
        if self.learning_rate == 0.0 {
            TrainConfig {
                learning_rate: 1.0,
                ..*self
            }
            .validate()
        } else {
            self.validate()
        }
    }
}

const GLAI_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GlaiFile {
    format_version: u32,
    structure: MlpModel,
    retained_paths: PathTable,
    estimator: Vec<Vec<f64>>,
    parity: Option<ParityLedger>,
    #[serde(default)]
    prune: Option<PruneReport>,
}

impl From<GlaiModel> for GlaiFile {
    fn from(g: GlaiModel) -> Self {
        GlaiFile {
            format_version: GLAI_FORMAT_VERSION,
            structure: g.structure,
            retained_paths: g.retained,
            estimator: g.estimator,
            parity: g.parity,
            prune: g.prune,
        }
    }
}

impl TryFrom<GlaiFile> for GlaiModel {
    type Error = Error;
    fn try_from(f: GlaiFile) -> Result<Self> {
        if f.format_version != GLAI_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported GLAI format_version {}",
                f.format_version
            )));
        }
        let mut g = GlaiModel::new(f.structure, f.retained_paths, f.estimator)?;
        g.parity = f.parity;
        g.prune = f.prune;
        Ok(g)
    }
}

/// `O = Σ_{l=0}^{L} (n_l + 1)·n_{l+1}`.
pub fn param_count_original(arch: &Architecture) -> u64 {
    arch.dims()
        .windows(2)
        .map(|p| (p[0] as u64 + 1) * p[1] as u64)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedCount {
    pub reduced_arch: Architecture,
    /// Exact parameter count of the rounded reduced architecture.
    pub r: u64,
    /// `ρ(n_0 n_1 + n_L n_{L+1} + Σ n_{l+1}) + ρ² Σ_{l=1}^{L-1} n_l n_{l+1} + n_{L+1}`.
    pub r_closed_form: f64,
}

pub fn param_count_reduced(arch: &Architecture, rho: f64) -> Result<ReducedCount> {
    let reduced_arch = reduce_arch(arch, rho)?;
    let r = param_count_original(&reduced_arch);
    let n: Vec<f64> = arch.dims().iter().map(|&d| d as f64).collect();
    let depth = arch.hidden_layers();
    let linear = n[0] * n[1] + n[depth] * n[depth + 1] + n[1..].iter().sum::<f64>();
    let quadratic: f64 = (1..depth).map(|l| n[l] * n[l + 1]).sum();
    Ok(ReducedCount {
        reduced_arch,
        r,
        r_closed_form: rho * linear + rho * rho * quadratic + n[depth + 1],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSize {
    /// Path count of the rounded reduced architecture.
    pub e: u64,
    /// `ρ^L Π_{l=0}^{L+1} n_l + Σ_{k=1}^{L+1} ρ^{L+1-k} Π_{l=k}^{L+1} n_l` on the original dims.
    pub e_closed_form: f64,
}

/// Paths of the reduced network. Architectures without hidden layers are
/// not reduced.
pub fn estimator_size(arch: &Architecture, rho: f64) -> Result<EstimatorSize> {
    let reduced = if arch.hidden_layers() == 0 {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "reduction factor must lie in (0, 1), got {rho}"
            )));
        }
        arch.clone()
    } else {
        reduce_arch(arch, rho)?
    };
    let e = path_count(&reduced)?.total;
    let n: Vec<f64> = arch.dims().iter().map(|&d| d as f64).collect();
    let depth = arch.hidden_layers();
    let mut closed = rho.powi(depth as i32) * n.iter().product::<f64>();
    for k in 1..=depth + 1 {
        closed += rho.powi((depth + 1 - k) as i32) * n[k..].iter().product::<f64>();
    }
    Ok(EstimatorSize {
        e,
        e_closed_form: closed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaResult {
    pub sigma: f64,
    /// `(O − R) / E` exceeded 1 and was clamped.
    pub clamped: bool,
    pub o: u64,
    pub r: u64,
    pub e: u64,
    pub reduced_arch: Architecture,
    pub r_closed_form: f64,
    pub e_closed_form: f64,
}

impl SigmaResult {
    /// `ceil(sigma · E)`, the number of paths a global prune keeps.
    pub fn retained_paths(&self) -> u64 {
        ((self.sigma * self.e as f64).ceil() as u64).min(self.e)
    }
}

/// `σ = (O − R) / E`, clamped to 1.
pub fn compute_sigma(arch: &Architecture, rho: f64) -> Result<SigmaResult> {
    let depth = arch.hidden_layers();
    if depth >= 1 && arch.dims()[depth] == arch.output_dim() {
        return Err(Error::DegenerateFinalLayer(arch.output_dim()));
    }
    let o = param_count_original(arch);
    let (reduced_arch, r, r_closed_form) = if depth == 0 {
        (arch.clone(), o, o as f64)
    } else {
        let rc = param_count_reduced(arch, rho)?;
        (rc.reduced_arch, rc.r, rc.r_closed_form)
    };
    if r >= o {
        return Err(Error::ReducedNotSmaller {
            original: o,
            reduced: r,
        });
    }
    let es = estimator_size(arch, rho)?;
    let raw = (o - r) as f64 / es.e as f64;
    Ok(SigmaResult {
        sigma: raw.min(1.0),
        clamped: raw > 1.0,
        o,
        r,
        e: es.e,
        reduced_arch,
        r_closed_form,
        e_closed_form: es.e_closed_form,
    })
}
