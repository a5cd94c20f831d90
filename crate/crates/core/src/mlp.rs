//! ReLU MLP with explicit biases.
//!
//! Layer `l` maps `h ↦ W_l · h + b_l`; ReLU is applied between layers but not
//! after the last one. An architecture `(n_0, …, n_L, n_{L+1})` has `L` hidden
//! layers.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Target, Task};
use crate::error::{Error, Result};
use crate::linalg::{mat_vec_unchecked, rand_matrix, Matrix, Rng, Vector};
use crate::loss::Loss;
use crate::train::{EvalResult, TrainConfig, Trainable};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Architecture(Vec<usize>);

impl Architecture {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArch(format!(
                "need at least input and output dims, got {dims:?}"
            )));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidArch(format!("zero-width layer in {dims:?}")));
        }
        Ok(Architecture(dims))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn input_dim(&self) -> usize {
        self.0[0]
    }

    pub fn output_dim(&self) -> usize {
        self.0[self.0.len() - 1]
    }

    /// `L`, the number of hidden layers.
    pub fn hidden_layers(&self) -> usize {
        self.0.len() - 2
    }

    /// `(n_1, …, n_L)`.
    pub fn hidden_dims(&self) -> &[usize] {
        &self.0[1..self.0.len() - 1]
    }
}

impl TryFrom<Vec<usize>> for Architecture {
    type Error = Error;
    fn try_from(dims: Vec<usize>) -> Result<Self> {
        Architecture::new(dims)
    }
}

impl From<Architecture> for Vec<usize> {
    fn from(a: Architecture) -> Self {
        a.0
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let dims = s
            .trim_matches(|c| c == '(' || c == ')')
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidArch(format!("bad dimension {p:?} in {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Architecture::new(dims)
    }
}

/// Per-hidden-layer activity bits `act_l(x)` for `l = 1..=L`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationPattern {
    pub layers: Vec<Vec<bool>>,
}

impl ActivationPattern {
    pub fn all(arch: &Architecture, active: bool) -> Self {
        ActivationPattern {
            layers: arch.hidden_dims().iter().map(|&n| vec![active; n]).collect(),
        }
    }

    pub fn matches(&self, arch: &Architecture) -> bool {
        self.layers.len() == arch.hidden_layers()
            && self
                .layers
                .iter()
                .zip(arch.hidden_dims())
                .all(|(l, &n)| l.len() == n)
    }

    /// Number of active units per hidden layer.
    pub fn active_counts(&self) -> Vec<usize> {
        self.layers
            .iter()
            .map(|l| l.iter().filter(|&&b| b).count())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub output: Vector,
    pub pattern: ActivationPattern,
    /// Hidden pre-activations `f_{l-1}(x)` for `l = 1..=L`.
    pub pre_activations: Vec<Vector>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct MlpModel {
    arch: Architecture,
    weights: Vec<Matrix>,
    biases: Vec<Vector>,
    pub seed: Option<u64>,
    pub training_meta: serde_json::Map<String, serde_json::Value>,
}

/// Parameter gradients with the same layout as the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vector>,
}

impl Gradients {
    fn zeros_like(model: &MlpModel) -> Self {
        Gradients {
            weights: model
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: model.biases.iter().map(|b| Vector::zeros(b.len())).collect(),
        }
    }

    fn scale(&mut self, s: f64) {
        for w in &mut self.weights {
            w.as_mut_slice().iter_mut().for_each(|v| *v *= s);
        }
        for b in &mut self.biases {
            b.iter_mut().for_each(|v| *v *= s);
        }
    }
}

impl MlpModel {
    /// He-style initialization (std `sqrt(2 / fan_in)`), zero biases.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        let mut rng = Rng::new(seed);
        let dims = arch.dims();
        let mut weights = Vec::with_capacity(dims.len() - 1);
        let mut biases = Vec::with_capacity(dims.len() - 1);
        for pair in dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let scale = (2.0 / fan_in as f64).sqrt();
            weights.push(rand_matrix(&mut rng, fan_out, fan_in, scale)?);
            biases.push(Vector::zeros(fan_out));
        }
        Ok(MlpModel {
            arch,
            weights,
            biases,
            seed: Some(seed),
            training_meta: Default::default(),
        })
    }

    pub fn from_parts(arch: Architecture, weights: Vec<Matrix>, biases: Vec<Vector>) -> Result<Self> {
        let dims = arch.dims();
        if weights.len() != dims.len() - 1 || biases.len() != dims.len() - 1 {
            return Err(Error::InvalidArch(format!(
                "{} weight matrices and {} bias vectors for {arch}",
                weights.len(),
                biases.len()
            )));
        }
        for (l, pair) in dims.windows(2).enumerate() {
            let (w, b) = (&weights[l], &biases[l]);
            if w.rows() != pair[1] || w.cols() != pair[0] || b.len() != pair[1] {
                return Err(Error::InvalidArch(format!(
                    "layer {l}: W is {}x{}, b has {}, expected {}x{} and {}",
                    w.rows(),
                    w.cols(),
                    b.len(),
                    pair[1],
                    pair[0],
                    pair[1]
                )));
            }
            if !b.is_finite() || w.as_slice().iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("layer {l} parameters")));
            }
        }
        Ok(MlpModel {
            arch,
            weights,
            biases,
            seed: None,
            training_meta: Default::default(),
        })
    }

    pub fn zeros(arch: Architecture) -> Self {
        let weights = arch
            .dims()
            .windows(2)
            .map(|p| Matrix::zeros(p[1], p[0]))
            .collect();
        let biases = arch.dims()[1..].iter().map(|&n| Vector::zeros(n)).collect();
        MlpModel {
            arch,
            weights,
            biases,
            seed: None,
            training_meta: Default::default(),
        }
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vector] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Vector] {
        &mut self.biases
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.as_slice().len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.arch.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn affine(&self, l: usize, h: &[f64]) -> Vec<f64> {
        let mut z = mat_vec_unchecked(&self.weights[l], h);
        for (zi, bi) in z.iter_mut().zip(self.biases[l].iter()) {
            *zi += bi;
        }
        z
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vector> {
        self.check_input(x)?;
        let last = self.weights.len() - 1;
        let mut h = x.to_vec();
        for l in 0..last {
            h = self.affine(l, &h);
            h.iter_mut().for_each(|v| {
                if !(*v > 0.0) {
                    *v = 0.0
                }
            });
        }
        Ok(Vector::new(self.affine(last, &h)))
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let last = self.weights.len() - 1;
        let mut h = x.to_vec();
        let mut pre_activations = Vec::with_capacity(last);
        let mut layers = Vec::with_capacity(last);
        for l in 0..last {
            let z = self.affine(l, &h);
            layers.push(z.iter().map(|&v| v > 0.0).collect());
            h = z.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
            pre_activations.push(Vector::new(z));
        }
        Ok(ForwardTrace {
            output: Vector::new(self.affine(last, &h)),
            pattern: ActivationPattern { layers },
            pre_activations,
        })
    }

    /// Activation pattern only.
    pub fn pattern(&self, x: &[f64]) -> Result<ActivationPattern> {
        self.forward_trace(x).map(|t| t.pattern)
    }

    /// Evaluates `W̃_L · D̃_L · … · D̃_1 · W̃_0 · (x, 1)` where `W̃_l` is the
    /// bias-augmented layer matrix and `D̃_l = diag(act_l, 1)` comes from the
    /// supplied pattern rather than from the input.
    pub fn pattern_forward(&self, pattern: &ActivationPattern, x: &[f64]) -> Result<Vector> {
        self.check_input(x)?;
        if !pattern.matches(&self.arch) {
            return Err(Error::InvalidArgument(format!(
                "pattern shape does not match {}",
                self.arch
            )));
        }
        let last = self.weights.len() - 1;
        // Augmented state: (h, 1).
        let mut aug: Vec<f64> = x.iter().copied().chain(std::iter::once(1.0)).collect();
        for l in 0..=last {
            let (w, b) = (&self.weights[l], &self.biases[l]);
            let mut next = Vec::with_capacity(w.rows() + 1);
            for r in 0..w.rows() {
                let mut s = 0.0;
                for (c, a) in aug.iter().enumerate() {
                    let entry = if c < w.cols() { w.get(r, c) } else { b[r] };
                    s += entry * a;
                }
                next.push(s);
            }
            if l == last {
                return Ok(Vector::new(next));
            }
            // Bottom row (0, …, 0, 1) keeps the constant coordinate.
            next.push(aug[aug.len() - 1]);
            for (v, &on) in next.iter_mut().zip(&pattern.layers[l]) {
                if !on {
                    *v = 0.0;
                }
            }
            aug = next;
        }
        unreachable!("loop returns at the last layer")
    }

    /// Loss and parameter gradient for one sample.
    pub fn sample_gradients(&self, x: &[f64], target: &Target, loss: Loss) -> Result<(f64, Gradients)> {
        let mut grads = Gradients::zeros_like(self);
        let l = self.accumulate_gradients(x, target, loss, &mut grads)?;
        Ok((l, grads))
    }

    fn accumulate_gradients(
        &self,
        x: &[f64],
        target: &Target,
        loss: Loss,
        grads: &mut Gradients,
    ) -> Result<f64> {
        self.check_input(x)?;
        let last = self.weights.len() - 1;
        // activations[l] is the input to layer l.
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(last + 1);
        let mut masks: Vec<Vec<bool>> = Vec::with_capacity(last);
        activations.push(x.to_vec());
        for l in 0..last {
            let z = self.affine(l, &activations[l]);
            masks.push(z.iter().map(|&v| v > 0.0).collect());
            activations.push(z.into_iter().map(|v| if v > 0.0 { v } else { 0.0 }).collect());
        }
        let output = self.affine(last, &activations[last]);
        let (value, mut delta) = loss.value_and_grad(&output, target)?;

        for l in (0..=last).rev() {
            let input = &activations[l];
            let gw = grads.weights[l].as_mut_slice();
            let cols = input.len();
            for (r, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &mut gw[r * cols..(r + 1) * cols];
                for (g, a) in row.iter_mut().zip(input) {
                    *g += d * a;
                }
            }
            for (g, d) in grads.biases[l].iter_mut().zip(&delta) {
                *g += d;
            }
            if l == 0 {
                break;
            }
            let w = &self.weights[l];
            let mut prev = vec![0.0; w.cols()];
            for (r, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                for (p, wv) in prev.iter_mut().zip(w.row(r)) {
                    *p += d * wv;
                }
            }
            for (p, &on) in prev.iter_mut().zip(&masks[l - 1]) {
                if !on {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
        Ok(value)
    }

    fn apply_update(&mut self, grads: &Gradients, lr: f64, weight_decay: f64) {
        for (w, g) in self.weights.iter_mut().zip(&grads.weights) {
            for (wv, gv) in w.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *wv -= lr * (gv + weight_decay * *wv);
            }
        }
        for (b, g) in self.biases.iter_mut().zip(&grads.biases) {
            for (bv, gv) in b.iter_mut().zip(g.iter()) {
                *bv -= lr * (gv + weight_decay * *bv);
            }
        }
    }

    fn check_dataset(&self, ds: &Dataset) -> Result<()> {
        if ds.input_dim() != self.arch.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.arch.input_dim(),
                got: ds.input_dim(),
            });
        }
        if ds.task().output_dim() != self.arch.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.arch.output_dim(),
                got: ds.task().output_dim(),
            });
        }
        Ok(())
    }

    /// One epoch of shuffled mini-batch SGD. Returns the mean training loss,
    /// measured on each batch before its update.
    pub fn train_epoch(&mut self, train: &Dataset, cfg: &TrainConfig, rng: &mut Rng) -> Result<f64> {
        cfg.validate()?;
        self.check_dataset(train)?;
        let mut order: Vec<usize> = (0..train.len()).collect();
        rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut grads = Gradients::zeros_like(self);
        for batch in order.chunks(cfg.batch_size) {
            grads.scale(0.0);
            for &i in batch {
                let (x, t) = train.sample(i);
                total += self.accumulate_gradients(x, t, cfg.loss, &mut grads)?;
            }
            grads.scale(1.0 / batch.len() as f64);
            self.apply_update(&grads, cfg.learning_rate, cfg.weight_decay);
        }
        let mean = total / train.len() as f64;
        if !mean.is_finite() {
            return Err(Error::NonFinite("training loss".into()));
        }
        Ok(mean)
    }

    pub fn evaluate(&self, ds: &Dataset, loss: Loss) -> Result<EvalResult> {
        self.check_dataset(ds)?;
        evaluate_with(ds, loss, |x| self.forward(x))
    }
}

/// Mean loss plus argmax accuracy (classification only) of an arbitrary predictor.
pub(crate) fn evaluate_with(
    ds: &Dataset,
    loss: Loss,
    mut predict: impl FnMut(&[f64]) -> Result<Vector>,
) -> Result<EvalResult> {
    let mut total = 0.0;
    let mut correct = 0usize;
    for (x, t) in ds.inputs().iter().zip(ds.targets()) {
        let y = predict(x)?;
        total += loss.value(&y, t)?;
        if let Target::Class(c) = t {
            if y.argmax() == *c {
                correct += 1;
            }
        }
    }
    let n = ds.len() as f64;
    let accuracy = match ds.task() {
        Task::Classification { .. } => Some(correct as f64 / n),
        Task::Regression { .. } => None,
    };
    Ok(EvalResult {
        loss: total / n,
        accuracy,
    })
}

impl Trainable for MlpModel {
    fn train_epoch(&mut self, train: &Dataset, cfg: &TrainConfig, rng: &mut Rng) -> Result<f64> {
        MlpModel::train_epoch(self, train, cfg, rng)
    }

    fn evaluate(&self, ds: &Dataset, loss: Loss) -> Result<EvalResult> {
        MlpModel::evaluate(self, ds, loss)
    }
}

/// Shrinks every hidden layer by `rho` (round half up, at least 1).
pub fn reduce_arch(arch: &Architecture, rho: f64) -> Result<Architecture> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "reduction factor must lie in (0, 1), got {rho}"
        )));
    }
    let dims = arch.dims();
    let last = dims.len() - 1;
    let reduced: Vec<usize> = dims
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            if i == 0 || i == last {
                n
            } else {
                ((rho * n as f64 + 0.5).floor() as usize).max(1)
            }
        })
        .collect();
    if arch.hidden_layers() >= 1 && reduced[last - 1] < reduced[last] {
        return Err(Error::BottleneckViolation {
            reduced: reduced[last - 1],
            outputs: reduced[last],
        });
    }
    Architecture::new(reduced)
}

const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u32,
    arch: Vec<usize>,
    /// Row-major `n_{l+1} x n_l` per layer.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    seed: Option<u64>,
    #[serde(default)]
    training_meta: serde_json::Map<String, serde_json::Value>,
}

impl From<MlpModel> for ModelFile {
    fn from(m: MlpModel) -> Self {
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            arch: m.arch.into(),
            weights: m.weights.into_iter().map(|w| w.as_slice().to_vec()).collect(),
            biases: m.biases.into_iter().map(Vector::into_inner).collect(),
            seed: m.seed,
            training_meta: m.training_meta,
        }
    }
}

impl TryFrom<ModelFile> for MlpModel {
    type Error = Error;
    fn try_from(f: ModelFile) -> Result<Self> {
        if f.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported model format_version {}",
                f.format_version
            )));
        }
        let arch = Architecture::new(f.arch)?;
        if f.weights.len() != arch.dims().len() - 1 {
            return Err(Error::InvalidArch(format!(
                "{} weight layers for {arch}",
                f.weights.len()
            )));
        }
        let weights = arch
            .dims()
            .windows(2)
            .zip(f.weights)
            .map(|(p, data)| Matrix::from_row_major(p[1], p[0], data))
            .collect::<Result<Vec<_>>>()?;
        let biases = f.biases.into_iter().map(Vector::new).collect();
        let mut model = MlpModel::from_parts(arch, weights, biases)?;
        model.seed = f.seed;
        model.training_meta = f.training_meta;
        Ok(model)
    }
}

impl MlpModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::relu_mask;
    use crate::train::{EarlyStop, Monitor};

    fn arch(d: &[usize]) -> Architecture {
        Architecture::new(d.to_vec()).unwrap()
    }

    /// Straight-line evaluation written independently of `forward`.
    fn reference_forward(m: &MlpModel, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let n = m.weights().len();
        for l in 0..n {
            let w = &m.weights()[l];
            let b = &m.biases()[l];
            let mut z = vec![0.0; w.rows()];
            for r in 0..w.rows() {
                let mut s = b[r];
                for c in 0..w.cols() {
                    s += w.get(r, c) * h[c];
                }
                z[r] = s;
            }
            h = if l + 1 < n {
                z.iter().map(|v| v.max(0.0)).collect()
            } else {
                z
            };
        }
        h
    }

    #[test]
    fn new_mlp_is_deterministic_and_shaped() {
        let a = MlpModel::new(arch(&[2, 3, 2]), 7).unwrap();
        let b = MlpModel::new(arch(&[2, 3, 2]), 7).unwrap();
        assert_eq!(a, b);
        let m = MlpModel::new(arch(&[4, 6, 3]), 0).unwrap();
        assert_eq!((m.weights()[0].rows(), m.weights()[0].cols()), (6, 4));
        assert_eq!((m.weights()[1].rows(), m.weights()[1].cols()), (3, 6));
        assert!(m.biases().iter().all(|b| b.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn invalid_arch_rejected() {
        assert!(matches!(Architecture::new(vec![2]), Err(Error::InvalidArch(_))));
        assert!(matches!(Architecture::new(vec![2, 0, 1]), Err(Error::InvalidArch(_))));
        assert!("(2,3,x)".parse::<Architecture>().is_err());
        assert_eq!("(4,6,3)".parse::<Architecture>().unwrap(), arch(&[4, 6, 3]));
        assert_eq!("8,16,3".parse::<Architecture>().unwrap(), arch(&[8, 16, 3]));
    }

    #[test]
    fn zero_model_outputs_zero() {
        let m = MlpModel::zeros(arch(&[3, 4, 2]));
        assert_eq!(m.forward(&[1.0, -2.0, 3.0]).unwrap().as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn affine_model_has_no_relu() {
        let w = Matrix::from_row_major(2, 2, vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let b = Vector::new(vec![-10.0, 1.0]);
        let m = MlpModel::from_parts(arch(&[2, 2]), vec![w], vec![b]).unwrap();
        assert_eq!(m.forward(&[1.0, 1.0]).unwrap().as_slice(), &[-11.0, 4.5]);
    }

    #[test]
    fn forward_matches_reference() {
        let m = MlpModel::new(arch(&[3, 4, 2]), 11).unwrap();
        let x = [0.3, -1.2, 2.0];
        let got = m.forward(&x).unwrap();
        let want = reference_forward(&m, &x);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-14);
        }
        assert!(m.forward(&[1.0]).is_err());
    }

    #[test]
    fn trace_matches_forward_and_masks() {
        let m = MlpModel::new(arch(&[2, 3, 2]), 5).unwrap();
        for seed in 0..20 {
            let x = Rng::new(seed).normal_vector(2);
            let t = m.forward_trace(&x).unwrap();
            assert_eq!(t.output, m.forward(&x).unwrap());
            // Recompute the hidden pre-activation directly.
            let w = &m.weights()[0];
            let pre: Vec<f64> = (0..3)
                .map(|r| w.get(r, 0) * x[0] + w.get(r, 1) * x[1] + m.biases()[0][r])
                .collect();
            let mask: Vec<bool> = relu_mask(&pre).iter().map(|&v| v == 1.0).collect();
            assert_eq!(t.pattern.layers[0], mask);
        }
    }

    #[test]
    fn dead_layer_gives_affine_image_of_zero() {
        let mut m = MlpModel::new(arch(&[2, 3, 2]), 1).unwrap();
        m.biases_mut()[0] = Vector::new(vec![-100.0; 3]);
        m.biases_mut()[1] = Vector::new(vec![0.25, -0.5]);
        let t = m.forward_trace(&[0.1, 0.2]).unwrap();
        assert_eq!(t.pattern.layers[0], vec![false; 3]);
        assert_eq!(t.output.as_slice(), &[0.25, -0.5]);
    }

    #[test]
    fn pattern_forward_fully_active_region() {
        let w0 = Matrix::from_row_major(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let w1 = Matrix::from_row_major(1, 2, vec![2.0, 3.0]).unwrap();
        let m = MlpModel::from_parts(
            arch(&[2, 2, 1]),
            vec![w0, w1],
            vec![Vector::new(vec![1.0, 1.0]), Vector::new(vec![0.5])],
        )
        .unwrap();
        let x = [0.5, 2.0];
        let p = ActivationPattern::all(m.arch(), true);
        assert_eq!(m.pattern_forward(&p, &x).unwrap(), m.forward(&x).unwrap());
    }

    #[test]
    fn pattern_forward_all_zero_keeps_only_output_bias() {
        // (2,2,1): with both hidden units forced off, every input and
        // first-layer bias term is annihilated, leaving b_1.
        let w0 = Matrix::from_row_major(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w1 = Matrix::from_row_major(1, 2, vec![5.0, 6.0]).unwrap();
        let m = MlpModel::from_parts(
            arch(&[2, 2, 1]),
            vec![w0, w1],
            vec![Vector::new(vec![7.0, 8.0]), Vector::new(vec![9.0])],
        )
        .unwrap();
        let p = ActivationPattern::all(m.arch(), false);
        assert_eq!(m.pattern_forward(&p, &[1.0, 1.0]).unwrap().as_slice(), &[9.0]);
        // One unit on: 5 * (1*x0 + 2*x1 + 7) + 9.
        let p = ActivationPattern {
            layers: vec![vec![true, false]],
        };
        assert_eq!(m.pattern_forward(&p, &[1.0, 1.0]).unwrap().as_slice(), &[59.0]);
    }

    #[test]
    fn pattern_forward_shape_mismatch() {
        let m = MlpModel::new(arch(&[2, 3, 2]), 0).unwrap();
        let p = ActivationPattern {
            layers: vec![vec![true; 2]],
        };
        assert!(m.pattern_forward(&p, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn pattern_forward_equals_forward_over_seeds() {
        let a = arch(&[3, 4, 4, 2]);
        for seed in 0..100 {
            let m = MlpModel::new(a.clone(), seed).unwrap();
            let x = Rng::new(seed + 1000).normal_vector(3);
            let t = m.forward_trace(&x).unwrap();
            let y = m.pattern_forward(&t.pattern, &x).unwrap();
            let scale = 1.0 + t.output.max_abs();
            for (u, v) in y.iter().zip(t.output.iter()) {
                assert!((u - v).abs() <= 1e-9 * scale);
            }
        }
    }

    #[test]
    fn relu_identity_on_traced_preactivations() {
        let m = MlpModel::new(arch(&[3, 5, 4, 2]), 3).unwrap();
        let x = Rng::new(3).normal_vector(3);
        let t = m.forward_trace(&x).unwrap();
        for (pre, bits) in t.pre_activations.iter().zip(&t.pattern.layers) {
            let r = crate::linalg::relu(pre);
            for ((z, &on), rv) in pre.iter().zip(bits).zip(r.iter()) {
                assert_eq!(if on { *z } else { 0.0 }, *rv);
            }
        }
    }

    #[test]
    fn region_linearity() {
        let m = MlpModel::new(arch(&[3, 6, 5, 2]), 21).unwrap();
        let mut rng = Rng::new(99);
        let mut checked = 0;
        for _ in 0..50 {
            let x = rng.normal_vector(3);
            let delta: Vec<f64> = rng.normal_vector(3).iter().map(|v| v * 1e-4).collect();
            let xd: Vec<f64> = x.iter().zip(&delta).map(|(a, b)| a + b).collect();
            let p = m.pattern(&x).unwrap();
            if m.pattern(&xd).unwrap() != p {
                continue;
            }
            // Region map J from the pattern: columns are images of basis vectors minus the offset.
            let offset = m.pattern_forward(&p, &[0.0; 3]).unwrap();
            let mut jd = vec![0.0; 2];
            for (j, d) in delta.iter().enumerate() {
                let mut e = [0.0; 3];
                e[j] = 1.0;
                let col = m.pattern_forward(&p, &e).unwrap();
                for i in 0..2 {
                    jd[i] += (col[i] - offset[i]) * d;
                }
            }
            let fx = m.forward(&x).unwrap();
            let fxd = m.forward(&xd).unwrap();
            for i in 0..2 {
                let diff = fxd[i] - fx[i];
                assert!((diff - jd[i]).abs() <= 1e-8 * (1.0 + diff.abs()) + 1e-12);
            }
            checked += 1;
        }
        assert!(checked > 10);
    }

    fn regression_set(inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> Dataset {
        let outputs = targets[0].len();
        Dataset::new(
            inputs.into_iter().map(Vector::new).collect(),
            targets
                .into_iter()
                .map(|t| Target::Value(Vector::new(t)))
                .collect(),
            Task::Regression { outputs },
        )
        .unwrap()
    }

    fn cfg(lr: f64, wd: f64, bs: usize, loss: Loss) -> TrainConfig {
        TrainConfig {
            learning_rate: lr,
            batch_size: bs,
            weight_decay: wd,
            max_epochs: 10,
            seed: 0,
            loss,
            early_stop: EarlyStop {
                monitor: Monitor::ValLoss,
                patience: 5,
                min_delta: 0.0,
            },
        }
    }

    #[test]
    fn tiny_step_leaves_parameters_and_reports_eval_loss() {
        let ds = regression_set(vec![vec![1.0, 2.0], vec![-1.0, 0.5]], vec![vec![1.0], vec![0.0]]);
        let mut m = MlpModel::new(arch(&[2, 3, 1]), 2).unwrap();
        let before = m.clone();
        let eval = m.evaluate(&ds, Loss::SquaredError).unwrap().loss;
        let l = m
            .train_epoch(&ds, &cfg(1e-300, 0.0, 2, Loss::SquaredError), &mut Rng::new(0))
            .unwrap();
        let drift = |a: &[f64], b: &[f64]| a.iter().zip(b).fold(0.0f64, |d, (x, y)| d.max((x - y).abs()));
        for l in 0..2 {
            assert!(drift(m.weights()[l].as_slice(), before.weights()[l].as_slice()) < 1e-290);
            assert!(drift(&m.biases()[l], &before.biases()[l]) < 1e-290);
        }
        assert!((l - eval).abs() < 1e-15);
    }

    #[test]
    fn affine_squared_error_step_is_closed_form() {
        // L = 0, one output: loss = (w·x + b - y)^2, grad_w = 2 r x, grad_b = 2 r.
        let w = Matrix::from_row_major(1, 2, vec![0.5, -1.0]).unwrap();
        let mut m = MlpModel::from_parts(arch(&[2, 1]), vec![w], vec![Vector::new(vec![0.25])]).unwrap();
        let ds = regression_set(vec![vec![2.0, 3.0]], vec![vec![1.0]]);
        let lr = 0.1;
        let r = 0.5 * 2.0 - 3.0 + 0.25 - 1.0; // -2.75
        m.train_epoch(&ds, &cfg(lr, 0.0, 1, Loss::SquaredError), &mut Rng::new(0))
            .unwrap();
        let want_w = [0.5 - lr * 2.0 * r * 2.0, -1.0 - lr * 2.0 * r * 3.0];
        let want_b = 0.25 - lr * 2.0 * r;
        assert!((m.weights()[0].get(0, 0) - want_w[0]).abs() < 1e-14);
        assert!((m.weights()[0].get(0, 1) - want_w[1]).abs() < 1e-14);
        assert!((m.biases()[0][0] - want_b).abs() < 1e-14);
    }

    #[test]
    fn weight_decay_is_applied_per_step() {
        let w = Matrix::from_row_major(1, 1, vec![2.0]).unwrap();
        let mut m = MlpModel::from_parts(arch(&[1, 1]), vec![w], vec![Vector::new(vec![0.0])]).unwrap();
        // Zero input and a target equal to the output make the loss gradient on w vanish.
        let ds = regression_set(vec![vec![0.0]], vec![vec![0.0]]);
        m.train_epoch(&ds, &cfg(0.5, 0.1, 1, Loss::SquaredError), &mut Rng::new(0))
            .unwrap();
        assert!((m.weights()[0].get(0, 0) - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }

    fn finite_difference_check(loss: Loss, target: Target, seed: u64) {
        let mut m = MlpModel::new(arch(&[2, 3, 2]), seed).unwrap();
        // Nonzero biases so every parameter participates.
        m.biases_mut()[0] = Vector::new(vec![0.1, -0.05, 0.2]);
        m.biases_mut()[1] = Vector::new(vec![0.03, -0.07]);
        let x = [0.7, -0.4];
        let (_, g) = m.sample_gradients(&x, &target, loss).unwrap();
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        let value = |m: &MlpModel| loss.value(&m.forward(&x).unwrap(), &target).unwrap();
        for l in 0..2 {
            for i in 0..m.weights()[l].as_slice().len() {
                let orig = m.weights()[l].as_slice()[i];
                m.weights_mut()[l].as_mut_slice()[i] = orig + eps;
                let up = value(&m);
                m.weights_mut()[l].as_mut_slice()[i] = orig - eps;
                let down = value(&m);
                m.weights_mut()[l].as_mut_slice()[i] = orig;
                let fd = (up - down) / (2.0 * eps);
                let an = g.weights[l].as_slice()[i];
                worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-6));
            }
            for i in 0..m.biases()[l].len() {
                let orig = m.biases()[l][i];
                m.biases_mut()[l][i] = orig + eps;
                let up = value(&m);
                m.biases_mut()[l][i] = orig - eps;
                let down = value(&m);
                m.biases_mut()[l][i] = orig;
                let fd = (up - down) / (2.0 * eps);
                let an = g.biases[l][i];
                worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-6));
            }
        }
        assert!(worst <= 1e-4, "max relative error {worst}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5 {
            finite_difference_check(Loss::CrossEntropy, Target::Class(1), seed);
            finite_difference_check(
                Loss::SquaredError,
                Target::Value(Vector::new(vec![0.5, -1.0])),
                seed,
            );
        }
    }

    #[test]
    fn evaluate_uniform_predictor() {
        // Zero model: uniform logits, argmax tie goes to class 0.
        let m = MlpModel::zeros(arch(&[1, 2]));
        let ds = Dataset::new(
            (0..4).map(|i| Vector::new(vec![i as f64])).collect(),
            (0..4).map(|i| Target::Class(i % 2)).collect(),
            Task::Classification { classes: 2 },
        )
        .unwrap();
        let r = m.evaluate(&ds, Loss::CrossEntropy).unwrap();
        assert_eq!(r.accuracy, Some(0.5));
        assert!((r.loss - 2f64.ln()).abs() < 1e-9);

        let m3 = MlpModel::zeros(arch(&[1, 3]));
        let ds3 = Dataset::new(
            vec![Vector::new(vec![0.0])],
            vec![Target::Class(2)],
            Task::Classification { classes: 3 },
        )
        .unwrap();
        let r = m3.evaluate(&ds3, Loss::CrossEntropy).unwrap();
        assert!((r.loss - 3f64.ln()).abs() < 1e-9);
        assert_eq!(r.accuracy, Some(0.0));
    }

    #[test]
    fn reduce_arch_examples() {
        assert_eq!(reduce_arch(&arch(&[384, 256, 37]), 0.7).unwrap(), arch(&[384, 179, 37]));
        assert_eq!(reduce_arch(&arch(&[4, 6, 3]), 0.5).unwrap(), arch(&[4, 3, 3]));
        assert!(matches!(
            reduce_arch(&arch(&[10, 4, 8]), 0.5),
            Err(Error::BottleneckViolation {
                reduced: 2,
                outputs: 8
            })
        ));
        // Round half up: 0.5 * 5 = 2.5 -> 3.
        assert_eq!(reduce_arch(&arch(&[2, 5, 1]), 0.5).unwrap(), arch(&[2, 3, 1]));
        // Clamp to 1.
        assert_eq!(reduce_arch(&arch(&[2, 1, 1]), 0.1).unwrap(), arch(&[2, 1, 1]));
        assert!(reduce_arch(&arch(&[4, 6, 3]), 1.5).is_err());
        assert!(reduce_arch(&arch(&[4, 6, 3]), 0.0).is_err());
    }

    #[test]
    fn model_json_round_trip() {
        let mut m = MlpModel::new(arch(&[3, 4, 2]), 8).unwrap();
        m.training_meta
            .insert("epochs".into(), serde_json::Value::from(3));
        let json = m.to_json().unwrap();
        let back = MlpModel::from_json(&json).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json().unwrap(), json);
    }

    #[test]
    fn model_json_rejects_bad_shapes() {
        let json = r#"{"format_version":1,"arch":[2,1],"weights":[[1.0]],"biases":[[0.0]],"seed":null}"#;
        assert!(MlpModel::from_json(json).is_err());
    }
}
