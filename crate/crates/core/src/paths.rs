//! Paths through a ReLU MLP and their algebra.
//!
//! A path starts either at an input coordinate or at a bias unit and visits
//! one neuron per subsequent layer up to an output neuron. With the bias
//! folded in as a constant coordinate, the network output is exactly the sum
//! over paths of `weight × contribution`, where the contribution is the origin
//! value gated by whether every hidden neuron on the path is active.
//!
//! Bias-origin paths that would route through the zero entries of an
//! augmented weight matrix are never generated; only the nonzero-capable ones
//! are counted and enumerated.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{Rng, Vector};
use crate::mlp::{ActivationPattern, Architecture, MlpModel};

/// Where a path starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    /// Input coordinate `j` in `[0, n_0)`.
    Input(usize),
    /// Bias vector `b_{k-1}` entering layer `k`, `k` in `[1, L+1]`.
    Bias(usize),
}

impl Origin {
    /// First layer whose neuron index the path records (`L + 1` is the output layer).
    pub fn first_layer(&self) -> usize {
        match *self {
            Origin::Input(_) => 1,
            Origin::Bias(k) => k,
        }
    }

    /// Origin value for input `x`: the coordinate, or the constant 1.
    #[inline]
    pub fn value(&self, x: &[f64]) -> f64 {
        match *self {
            Origin::Input(j) => x[j],
            Origin::Bias(_) => 1.0,
        }
    }
}

impl std::fmt::Display for Origin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Origin::Input(j) => write!(f, "x{j}"),
            Origin::Bias(k) => write!(f, "b{k}"),
        }
    }
}

/// Field order gives the derived `Ord` the canonical path order:
/// output, then input-before-bias origin, origin index, hidden indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Path {
    pub output: usize,
    pub origin: Origin,
    /// Neuron indices for hidden layers `origin.first_layer()..=L`.
    pub hidden: Vec<usize>,
}

impl Path {
    pub fn validate(&self, arch: &Architecture) -> Result<()> {
        let dims = arch.dims();
        let depth = arch.hidden_layers();
        let first = self.origin.first_layer();
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        match self.origin {
            Origin::Input(j) if j >= arch.input_dim() => {
                return bad(format!("input origin {j} out of range"))
            }
            Origin::Bias(k) if k == 0 || k > depth + 1 => {
                return bad(format!("bias origin layer {k} out of range"))
            }
            _ => {}
        }
        if self.hidden.len() != depth + 1 - first {
            return bad(format!(
                "path from {} needs {} hidden indices, has {}",
                self.origin,
                depth + 1 - first,
                self.hidden.len()
            ));
        }
        for (i, &h) in self.hidden.iter().enumerate() {
            if h >= dims[first + i] {
                return bad(format!("hidden index {h} out of range at layer {}", first + i));
            }
        }
        if self.output >= arch.output_dim() {
            return bad(format!("output {} out of range", self.output));
        }
        Ok(())
    }

    /// `(layer, neuron)` pairs of the hidden neurons traversed.
    pub fn hidden_nodes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let first = self.origin.first_layer();
        self.hidden.iter().enumerate().map(move |(i, &h)| (first + i, h))
    }
}

impl std::fmt::Display for Path {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.origin)?;
        for h in &self.hidden {
            write!(f, "->{h}")?;
        }
        write!(f, "->y{}", self.output)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathCount {
    pub per_output: u64,
    pub total: u64,
    /// Input-origin paths across all outputs.
    pub input_paths: u64,
    /// Bias-origin paths across all outputs, indexed by `k - 1`.
    pub bias_paths: Vec<u64>,
}

fn checked_product(it: impl IntoIterator<Item = usize>) -> Result<u64> {
    it.into_iter()
        .try_fold(1u64, |acc, n| acc.checked_mul(n as u64))
        .ok_or(Error::PathCountOverflow)
}

/// Closed-form path counts:
/// `total = n_{L+1}·Π_{l=0}^{L} n_l + Σ_{k=1}^{L+1} Π_{l=k}^{L+1} n_l`.
pub fn path_count(arch: &Architecture) -> Result<PathCount> {
    let dims = arch.dims();
    let out = arch.output_dim() as u64;
    let depth = arch.hidden_layers();
    let input_per_output = checked_product(dims[..=depth].iter().copied())?;
    let mut bias_paths = Vec::with_capacity(depth + 1);
    let mut bias_per_output = 0u64;
    for k in 1..=depth + 1 {
        let per = checked_product(dims[k..=depth].iter().copied())?;
        bias_per_output = bias_per_output
            .checked_add(per)
            .ok_or(Error::PathCountOverflow)?;
        bias_paths.push(per.checked_mul(out).ok_or(Error::PathCountOverflow)?);
    }
    let per_output = input_per_output
        .checked_add(bias_per_output)
        .ok_or(Error::PathCountOverflow)?;
    Ok(PathCount {
        per_output,
        total: per_output.checked_mul(out).ok_or(Error::PathCountOverflow)?,
        input_paths: input_per_output
            .checked_mul(out)
            .ok_or(Error::PathCountOverflow)?,
        bias_paths,
    })
}

/// Canonical-order stream of every path ending at one output: input origins
/// by coordinate, then bias origins by layer, hidden indices lexicographic.
#[derive(Debug, Clone)]
pub struct PathIter {
    dims: Vec<usize>,
    depth: usize,
    output: usize,
    origins: std::vec::IntoIter<Origin>,
    current: Option<(Origin, Vec<usize>)>,
}

pub fn enumerate_paths(arch: &Architecture, output: usize) -> PathIter {
    let depth = arch.hidden_layers();
    let origins: Vec<Origin> = (0..arch.input_dim())
        .map(Origin::Input)
        .chain((1..=depth + 1).map(Origin::Bias))
        .collect();
    let mut origins = origins.into_iter();
    let current = if output < arch.output_dim() {
        origins.next().map(|o| (o, vec![0; depth + 1 - o.first_layer()]))
    } else {
        None
    };
    PathIter {
        dims: arch.dims().to_vec(),
        depth,
        output,
        origins,
        current,
    }
}

impl Iterator for PathIter {
    type Item = Path;

    fn next(&mut self) -> Option<Path> {
        let (origin, hidden) = self.current.as_mut()?;
        let path = Path {
            origin: *origin,
            hidden: hidden.clone(),
            output: self.output,
        };
        // Odometer step, last layer fastest.
        let first = origin.first_layer();
        let mut carry = true;
        for i in (0..hidden.len()).rev() {
            hidden[i] += 1;
            if hidden[i] < self.dims[first + i] {
                carry = false;
                break;
            }
            hidden[i] = 0;
        }
        if carry {
            let depth = self.depth;
            self.current = self
                .origins
                .next()
                .map(|o| (o, vec![0; depth + 1 - o.first_layer()]));
        }
        Some(path)
    }
}

/// Product of the weights traversed; bias-origin paths start with the bias entry.
///
/// Panics if the path is not valid for the model's architecture.
pub fn path_weight(model: &MlpModel, path: &Path) -> f64 {
    let (weights, biases) = (model.weights(), model.biases());
    let first = path.origin.first_layer();
    let node = |i: usize| -> usize {
        if i < path.hidden.len() {
            path.hidden[i]
        } else {
            path.output
        }
    };
    let mut w = match path.origin {
        Origin::Input(j) => weights[0].get(node(0), j),
        Origin::Bias(k) => biases[k - 1][node(0)],
    };
    for i in 1..=path.hidden.len() {
        w *= weights[first + i - 1].get(node(i), node(i - 1));
    }
    w
}

/// 1 iff every hidden neuron on the path is active. Output-bias paths traverse
/// no hidden neuron and are always active.
pub fn path_indicator(pattern: &ActivationPattern, path: &Path) -> bool {
    path.hidden_nodes()
        .all(|(layer, h)| pattern.layers[layer - 1][h])
}

/// `ind_π(x) · x_{π_0}`, or `ind_π(x)` for bias origins.
pub fn path_contribution(x: &[f64], pattern: &ActivationPattern, path: &Path) -> f64 {
    if path_indicator(pattern, path) {
        path.origin.value(x)
    } else {
        0.0
    }
}

/// Reference set of inputs over which norms and distances are averaged.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaSet {
    samples: Vec<Vector>,
}

impl OmegaSet {
    pub fn new(samples: Vec<Vector>) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::InvalidArgument("reference set is empty".into()));
        };
        let dim = first.len();
        if let Some(bad) = samples.iter().find(|s| s.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        Ok(OmegaSet { samples })
    }

    /// Seeded subsample of at most `max_samples` dataset inputs.
    pub fn from_dataset(ds: &Dataset, max_samples: usize, seed: u64) -> Result<Self> {
        if max_samples == 0 {
            return Err(Error::InvalidArgument("max_samples must be >= 1".into()));
        }
        let mut idx: Vec<usize> = (0..ds.len()).collect();
        if ds.len() > max_samples {
            Rng::new(seed).shuffle(&mut idx);
            idx.truncate(max_samples);
            idx.sort_unstable();
        }
        OmegaSet::new(idx.iter().map(|&i| ds.inputs()[i].clone()).collect())
    }

    pub fn samples(&self) -> &[Vector] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].len()
    }

    /// Activation patterns of every sample under `model`.
    pub fn patterns(&self, model: &MlpModel) -> Result<Vec<ActivationPattern>> {
        self.samples.iter().map(|x| model.pattern(x)).collect()
    }
}

/// `(1/|Ω|) Σ_{x ∈ Ω, ind_π(x) = 1} |x_{π_0}|`.
pub fn path_norm(model: &MlpModel, path: &Path, omega: &OmegaSet) -> Result<f64> {
    let patterns = omega.patterns(model)?;
    let total: f64 = omega
        .samples()
        .iter()
        .zip(&patterns)
        .map(|(x, p)| path_contribution(x, p, path).abs())
        .sum();
    Ok(total / omega.len() as f64)
}

/// Distance between the contribution functions of two same-origin paths,
/// each evaluated under its own model: `(1/|Ω|) Σ_x |c_a(x) − c_b(x)|`.
///
/// Paths with different origins have no defined distance.
pub fn path_pair_distance(
    model_a: &MlpModel,
    path_a: &Path,
    model_b: &MlpModel,
    path_b: &Path,
    omega: &OmegaSet,
) -> Result<f64> {
    if path_a.origin != path_b.origin {
        return Err(Error::OriginMismatch);
    }
    let pa = omega.patterns(model_a)?;
    let pb = omega.patterns(model_b)?;
    let total: f64 = omega
        .samples()
        .iter()
        .zip(pa.iter().zip(&pb))
        .filter(|(_, (a, b))| path_indicator(a, path_a) != path_indicator(b, path_b))
        .map(|(x, _)| path_a.origin.value(x).abs())
        .sum();
    Ok(total / omega.len() as f64)
}

/// Distance between one path's contribution functions under two weight snapshots.
pub fn path_distance(
    model_a: &MlpModel,
    model_b: &MlpModel,
    path: &Path,
    omega: &OmegaSet,
) -> Result<f64> {
    if model_a.arch() != model_b.arch() {
        return Err(Error::ArchMismatch);
    }
    path_pair_distance(model_a, path, model_b, path, omega)
}

/// Mean path distance between two snapshots over every path of the
/// architecture, computed without enumerating paths.
///
/// For one input and one origin, the hidden tuples whose activity differs
/// between the two patterns number `N_a + N_b − 2·N_ab`, where `N_a` is the
/// product over traversed layers of active counts under `a` and `N_ab` the
/// product of jointly-active counts.
pub fn structural_metric(prev: &MlpModel, curr: &MlpModel, omega: &OmegaSet) -> Result<f64> {
    if prev.arch() != curr.arch() {
        return Err(Error::ArchMismatch);
    }
    let arch = prev.arch();
    let depth = arch.hidden_layers();
    let outputs = arch.output_dim() as f64;
    let total_paths = path_count(arch)?.total as f64;

    let mut sum = 0.0;
    for x in omega.samples() {
        let pa = prev.pattern(x)?;
        let pb = curr.pattern(x)?;
        // Suffix products over layers k..=L, for k = L+1 down to 1.
        let (mut na, mut nb, mut nab) = (1.0f64, 1.0f64, 1.0f64);
        let mut bias_diff = 0.0;
        for layer in (1..=depth).rev() {
            let (a, b) = (&pa.layers[layer - 1], &pb.layers[layer - 1]);
            let ca = a.iter().filter(|&&v| v).count() as f64;
            let cb = b.iter().filter(|&&v| v).count() as f64;
            let cab = a.iter().zip(b).filter(|(&u, &v)| u && v).count() as f64;
            na *= ca;
            nb *= cb;
            nab *= cab;
            bias_diff += na + nb - 2.0 * nab;
        }
        let input_diff = na + nb - 2.0 * nab;
        let l1: f64 = x.iter().map(|v| v.abs()).sum();
        sum += outputs * (input_diff * l1 + bias_diff);
    }
    Ok(sum / (total_paths * omega.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceRule {
    pub window: usize,
    pub rel_threshold: f64,
}

impl Default for ConvergenceRule {
    fn default() -> Self {
        ConvergenceRule {
            window: 3,
            rel_threshold: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Convergence {
    pub converged: bool,
    /// 1-based index into the history.
    pub epoch: Option<usize>,
}

/// First epoch `t ≥ window` at which every one of the last `window` values is
/// at most `rel_threshold · m_1`. A zero first value counts as converged at once.
pub fn convergence_monitor(history: &[f64], rule: ConvergenceRule) -> Result<Convergence> {
    if !(rule.rel_threshold > 0.0) || rule.window == 0 {
        return Err(Error::InvalidArgument(format!(
            "invalid convergence rule {rule:?}"
        )));
    }
    let Some(&first) = history.first() else {
        return Err(Error::EmptyHistory);
    };
    if first == 0.0 {
        return Ok(Convergence {
            converged: true,
            epoch: Some(1),
        });
    }
    let limit = rule.rel_threshold * first;
    for t in rule.window..=history.len() {
        let window_max = history[t - rule.window..t]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if window_max <= limit {
            return Ok(Convergence {
                converged: true,
                epoch: Some(t),
            });
        }
    }
    Ok(Convergence {
        converged: false,
        epoch: None,
    })
}

/// A path with its weight.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedPath {
    pub path: Path,
    pub weight: f64,
}

/// Paths grouped by output neuron, each group in canonical order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PathTableFile", into = "PathTableFile")]
pub struct PathTable {
    arch: Architecture,
    outputs: Vec<Vec<WeightedPath>>,
}

/// Default cap on the number of paths materialized at once.
pub const DEFAULT_PATH_BUDGET: u64 = 10_000_000;

impl PathTable {
    /// Every path of the model with its weight. Fails if the total exceeds `budget`.
    pub fn from_model(model: &MlpModel, budget: u64) -> Result<Self> {
        let arch = model.arch().clone();
        let count = path_count(&arch)?;
        if count.total > budget {
            return Err(Error::PathBudgetExceeded {
                required: count.total,
                cap: budget,
            });
        }
        let outputs = (0..arch.output_dim())
            .map(|i| {
                enumerate_paths(&arch, i)
                    .map(|path| WeightedPath {
                        weight: path_weight(model, &path),
                        path,
                    })
                    .collect()
            })
            .collect();
        Ok(PathTable { arch, outputs })
    }

    pub fn new(arch: Architecture, outputs: Vec<Vec<WeightedPath>>) -> Result<Self> {
        if outputs.len() != arch.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: arch.output_dim(),
                got: outputs.len(),
            });
        }
        for (i, group) in outputs.iter().enumerate() {
            for wp in group {
                wp.path.validate(&arch)?;
                if wp.path.output != i {
                    return Err(Error::InvalidArgument(format!(
                        "path {} listed under output {i}",
                        wp.path
                    )));
                }
                if !wp.weight.is_finite() {
                    return Err(Error::NonFinite(format!("weight of path {}", wp.path)));
                }
            }
            if group.windows(2).any(|w| w[0].path >= w[1].path) {
                return Err(Error::InvalidArgument(format!(
                    "paths of output {i} are not in canonical order"
                )));
            }
        }
        Ok(PathTable { arch, outputs })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn outputs(&self) -> &[Vec<WeightedPath>] {
        &self.outputs
    }

    pub fn len(&self) -> usize {
        self.outputs.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All paths in canonical order (output-major).
    pub fn iter(&self) -> impl Iterator<Item = &WeightedPath> {
        self.outputs.iter().flatten()
    }

    /// Keeps the paths whose flat canonical index satisfies `keep`.
    pub fn retain_by_index(&self, mut keep: impl FnMut(usize) -> bool) -> PathTable {
        let mut flat = 0;
        let outputs = self
            .outputs
            .iter()
            .map(|group| {
                group
                    .iter()
                    .filter(|_| {
                        let k = keep(flat);
                        flat += 1;
                        k
                    })
                    .cloned()
                    .collect()
            })
            .collect();
        PathTable {
            arch: self.arch.clone(),
            outputs,
        }
    }
}

const PATH_TABLE_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PathTableFile {
    format_version: u32,
    arch: Architecture,
    outputs: Vec<Vec<(Origin, Vec<usize>, f64)>>,
}

impl From<PathTable> for PathTableFile {
    fn from(t: PathTable) -> Self {
        PathTableFile {
            format_version: PATH_TABLE_FORMAT_VERSION,
            arch: t.arch,
            outputs: t
                .outputs
                .into_iter()
                .map(|g| {
                    g.into_iter()
                        .map(|wp| (wp.path.origin, wp.path.hidden, wp.weight))
                        .collect()
                })
                .collect(),
        }
    }
}

impl TryFrom<PathTableFile> for PathTable {
    type Error = Error;
    fn try_from(f: PathTableFile) -> Result<Self> {
        if f.format_version != PATH_TABLE_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported path table format_version {}",
                f.format_version
            )));
        }
        let outputs = f
            .outputs
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.into_iter()
                    .map(|(origin, hidden, weight)| WeightedPath {
                        path: Path {
                            origin,
                            hidden,
                            output: i,
                        },
                        weight,
                    })
                    .collect()
            })
            .collect();
        PathTable::new(f.arch, outputs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    fn arch(d: &[usize]) -> Architecture {
        Architecture::new(d.to_vec()).unwrap()
    }

    #[test]
    fn counts_match_examples() {
        let c = path_count(&arch(&[2, 3, 2])).unwrap();
        assert_eq!(c.total, 20);
        assert_eq!(c.per_output, 10);
        assert_eq!(c.input_paths, 12);
        assert_eq!(c.bias_paths, vec![6, 2]);

        let c = path_count(&arch(&[1, 1])).unwrap();
        assert_eq!((c.per_output, c.total), (2, 2));

        let c = path_count(&arch(&[4, 3, 3])).unwrap();
        assert_eq!(c.input_paths, 36);
        assert_eq!(c.bias_paths.iter().sum::<u64>(), 12);
        assert_eq!(c.total, 48);

        assert_eq!(path_count(&arch(&[3, 4, 4, 2])).unwrap().per_output, 69);
    }

    #[test]
    fn count_overflow_is_reported() {
        let huge = arch(&[1 << 20, 1 << 20, 1 << 20, 1 << 20]);
        assert!(matches!(path_count(&huge), Err(Error::PathCountOverflow)));
    }

    #[test]
    fn enumeration_examples() {
        let paths: Vec<Path> = enumerate_paths(&arch(&[2, 3, 2]), 0).collect();
        assert_eq!(paths.len(), 10);
        assert_eq!(
            paths[0],
            Path {
                origin: Origin::Input(0),
                hidden: vec![0],
                output: 0
            }
        );
        let paths: Vec<Path> = enumerate_paths(&arch(&[1, 1]), 0).collect();
        assert_eq!(
            paths,
            vec![
                Path {
                    origin: Origin::Input(0),
                    hidden: vec![],
                    output: 0
                },
                Path {
                    origin: Origin::Bias(1),
                    hidden: vec![],
                    output: 0
                },
            ]
        );
        assert_eq!(enumerate_paths(&arch(&[3, 4, 4, 2]), 1).count(), 69);
        assert_eq!(enumerate_paths(&arch(&[3, 4, 2]), 2).count(), 0);
    }

    #[test]
    fn enumeration_is_strictly_increasing_and_valid() {
        for dims in [&[2, 3, 2][..], &[3, 4, 4, 2], &[2, 1, 3, 2, 2], &[5, 2]] {
            let a = arch(dims);
            let count = path_count(&a).unwrap();
            for out in 0..a.output_dim() {
                let paths: Vec<Path> = enumerate_paths(&a, out).collect();
                assert_eq!(paths.len() as u64, count.per_output);
                assert!(paths.windows(2).all(|w| w[0] < w[1]));
                for p in &paths {
                    p.validate(&a).unwrap();
                }
            }
        }
    }

    #[test]
    fn weights() {
        let a = arch(&[2, 2, 1]);
        let ones = MlpModel::from_parts(
            a.clone(),
            vec![
                Matrix::from_row_major(2, 2, vec![1.0; 4]).unwrap(),
                Matrix::from_row_major(1, 2, vec![1.0; 2]).unwrap(),
            ],
            vec![Vector::new(vec![1.0; 2]), Vector::new(vec![1.0])],
        )
        .unwrap();
        for p in enumerate_paths(&a, 0) {
            assert_eq!(path_weight(&ones, &p), 1.0);
        }
        let mut m = ones.clone();
        m.weights_mut()[1].set(0, 1, 0.0);
        let through = Path {
            origin: Origin::Input(0),
            hidden: vec![1],
            output: 0,
        };
        assert_eq!(path_weight(&m, &through), 0.0);

        let m = MlpModel::new(arch(&[2, 3, 2]), 13).unwrap();
        let p = Path {
            origin: Origin::Input(0),
            hidden: vec![1],
            output: 0,
        };
        assert_eq!(
            path_weight(&m, &p),
            m.weights()[0].get(1, 0) * m.weights()[1].get(0, 1)
        );
    }

    #[test]
    fn bias_path_weights() {
        let mut m = MlpModel::new(arch(&[2, 3, 2]), 4).unwrap();
        m.biases_mut()[0] = Vector::new(vec![0.5, -1.0, 2.0]);
        m.biases_mut()[1] = Vector::new(vec![0.25, -0.75]);
        let p = Path {
            origin: Origin::Bias(1),
            hidden: vec![2],
            output: 1,
        };
        assert_eq!(path_weight(&m, &p), 2.0 * m.weights()[1].get(1, 2));
        let p = Path {
            origin: Origin::Bias(2),
            hidden: vec![],
            output: 1,
        };
        assert_eq!(path_weight(&m, &p), -0.75);
    }

    #[test]
    fn indicators() {
        let a = arch(&[2, 3, 2, 2]);
        let on = ActivationPattern::all(&a, true);
        let off = ActivationPattern::all(&a, false);
        for out in 0..2 {
            for p in enumerate_paths(&a, out) {
                assert!(path_indicator(&on, &p));
                assert_eq!(path_indicator(&off, &p), p.origin == Origin::Bias(3));
            }
        }
        // Product of bits, computed independently.
        let mixed = ActivationPattern {
            layers: vec![vec![true, false, true], vec![false, true]],
        };
        for p in enumerate_paths(&a, 1) {
            let mut prod = 1u8;
            let first = p.origin.first_layer();
            for (i, h) in p.hidden.iter().enumerate() {
                prod *= u8::from(mixed.layers[first + i - 1][*h]);
            }
            assert_eq!(path_indicator(&mixed, &p), prod == 1);
        }
    }

    #[test]
    fn contributions() {
        let a = arch(&[3, 2, 1]);
        let pat = ActivationPattern {
            layers: vec![vec![true, false]],
        };
        let x = [5.0, 6.0, 7.0];
        let inactive = Path {
            origin: Origin::Input(2),
            hidden: vec![1],
            output: 0,
        };
        let active = Path {
            origin: Origin::Input(2),
            hidden: vec![0],
            output: 0,
        };
        let bias = Path {
            origin: Origin::Bias(1),
            hidden: vec![0],
            output: 0,
        };
        assert_eq!(path_contribution(&x, &pat, &inactive), 0.0);
        assert_eq!(path_contribution(&x, &pat, &active), 7.0);
        assert_eq!(path_contribution(&x, &pat, &bias), 1.0);
        let _ = a;
    }

    /// (1,1,1) model whose single hidden unit is active iff `x > 0`.
    fn gate_model() -> MlpModel {
        MlpModel::from_parts(
            arch(&[1, 1, 1]),
            vec![
                Matrix::from_row_major(1, 1, vec![1.0]).unwrap(),
                Matrix::from_row_major(1, 1, vec![1.0]).unwrap(),
            ],
            vec![Vector::new(vec![0.0]), Vector::new(vec![0.0])],
        )
        .unwrap()
    }

    fn omega(vals: &[f64]) -> OmegaSet {
        OmegaSet::new(vals.iter().map(|&v| Vector::new(vec![v])).collect()).unwrap()
    }

    #[test]
    fn norms() {
        let m = gate_model();
        let input = Path {
            origin: Origin::Input(0),
            hidden: vec![0],
            output: 0,
        };
        assert_eq!(path_norm(&m, &input, &omega(&[-1.0, -2.0])).unwrap(), 0.0);

        // Always active, magnitudes {1, 3}.
        let mut always = m.clone();
        always.biases_mut()[0] = Vector::new(vec![10.0]);
        assert_eq!(path_norm(&always, &input, &omega(&[1.0, -3.0])).unwrap(), 2.0);

        // Bias path active on 3 of 4 samples.
        let bias = Path {
            origin: Origin::Bias(1),
            hidden: vec![0],
            output: 0,
        };
        assert_eq!(
            path_norm(&m, &bias, &omega(&[1.0, 2.0, 3.0, -1.0])).unwrap(),
            0.75
        );
    }

    #[test]
    fn distances() {
        let a = gate_model();
        let mut flipped = a.clone();
        flipped.weights_mut()[0].set(0, 0, -1.0);
        let p = Path {
            origin: Origin::Input(0),
            hidden: vec![0],
            output: 0,
        };
        let om = omega(&[1.0, -1.0, 1.0, -1.0]);
        assert_eq!(path_distance(&a, &a, &p, &om).unwrap(), 0.0);
        assert_eq!(path_distance(&a, &flipped, &p, &om).unwrap(), 1.0);
        assert_eq!(path_distance(&flipped, &a, &p, &om).unwrap(), 1.0);

        let other = MlpModel::new(arch(&[1, 2, 1]), 0).unwrap();
        assert!(matches!(
            path_distance(&a, &other, &p, &om),
            Err(Error::ArchMismatch)
        ));
        let bias = Path {
            origin: Origin::Bias(1),
            hidden: vec![0],
            output: 0,
        };
        assert!(matches!(
            path_pair_distance(&a, &p, &a, &bias, &om),
            Err(Error::OriginMismatch)
        ));
    }

    #[test]
    fn distance_equals_mean_contribution_difference() {
        let a = MlpModel::new(arch(&[3, 4, 3, 2]), 1).unwrap();
        let b = MlpModel::new(arch(&[3, 4, 3, 2]), 2).unwrap();
        let mut rng = Rng::new(5);
        let om = OmegaSet::new((0..32).map(|_| rng.normal_vector(3)).collect()).unwrap();
        for out in 0..2 {
            for p in enumerate_paths(a.arch(), out) {
                let d = path_distance(&a, &b, &p, &om).unwrap();
                let oracle: f64 = om
                    .samples()
                    .iter()
                    .map(|x| {
                        let ca = path_contribution(x, &a.pattern(x).unwrap(), &p);
                        let cb = path_contribution(x, &b.pattern(x).unwrap(), &p);
                        (ca - cb).abs()
                    })
                    .sum::<f64>()
                    / om.len() as f64;
                assert!((d - oracle).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn triangle_inequality() {
        let a3 = arch(&[2, 3, 3, 2]);
        let mut rng = Rng::new(8);
        let om = OmegaSet::new((0..20).map(|_| rng.normal_vector(2)).collect()).unwrap();
        for s in 0..5 {
            let (a, b, c) = (
                MlpModel::new(a3.clone(), 3 * s).unwrap(),
                MlpModel::new(a3.clone(), 3 * s + 1).unwrap(),
                MlpModel::new(a3.clone(), 3 * s + 2).unwrap(),
            );
            for p in enumerate_paths(&a3, 0) {
                let ac = path_distance(&a, &c, &p, &om).unwrap();
                let ab = path_distance(&a, &b, &p, &om).unwrap();
                let bc = path_distance(&b, &c, &p, &om).unwrap();
                assert!(ac <= ab + bc + 1e-12);
            }
        }
    }

    #[test]
    fn structural_metric_identity_and_bound() {
        let m = MlpModel::new(arch(&[3, 4, 2]), 0).unwrap();
        let mut rng = Rng::new(1);
        let om = OmegaSet::new((0..16).map(|_| rng.normal_vector(3)).collect()).unwrap();
        assert_eq!(structural_metric(&m, &m, &om).unwrap(), 0.0);
        let other = MlpModel::new(arch(&[3, 4, 2]), 1).unwrap();
        let mt = structural_metric(&m, &other, &om).unwrap();
        let bound = om
            .samples()
            .iter()
            .map(|x| x.iter().map(|v| v.abs()).sum::<f64>() + 2.0)
            .fold(0.0, f64::max);
        assert!(mt > 0.0 && mt <= bound);
        assert!(matches!(
            structural_metric(&m, &MlpModel::new(arch(&[3, 5, 2]), 0).unwrap(), &om),
            Err(Error::ArchMismatch)
        ));
    }

    #[test]
    fn convergence_rule_examples() {
        let rule = ConvergenceRule {
            window: 2,
            rel_threshold: 0.1,
        };
        let c = convergence_monitor(&[1.0, 0.5, 0.05, 0.04], rule).unwrap();
        assert_eq!(c.epoch, Some(4));
        let c = convergence_monitor(&[0.7; 10], rule).unwrap();
        assert!(!c.converged);
        let c = convergence_monitor(&[0.0, 0.0, 0.0], rule).unwrap();
        assert_eq!(c.epoch, Some(1));
        assert!(matches!(
            convergence_monitor(&[], rule),
            Err(Error::EmptyHistory)
        ));
        assert!(convergence_monitor(
            &[1.0],
            ConvergenceRule {
                window: 0,
                rel_threshold: 0.1
            }
        )
        .is_err());
    }

    #[test]
    fn table_json_round_trip() {
        let m = MlpModel::new(arch(&[2, 3, 2]), 6).unwrap();
        let t = PathTable::from_model(&m, DEFAULT_PATH_BUDGET).unwrap();
        assert_eq!(t.len(), 20);
        let json = serde_json::to_string(&t).unwrap();
        assert!(json.contains(r#""outputs":[[[{"input":0},[0],"#));
        let back: PathTable = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn table_budget() {
        let m = MlpModel::new(arch(&[2, 3, 2]), 6).unwrap();
        assert!(matches!(
            PathTable::from_model(&m, 19),
            Err(Error::PathBudgetExceeded {
                required: 20,
                cap: 19
            })
        ));
    }

    #[test]
    fn table_rejects_out_of_order_paths() {
        let m = MlpModel::new(arch(&[2, 3, 2]), 6).unwrap();
        let t = PathTable::from_model(&m, DEFAULT_PATH_BUDGET).unwrap();
        let mut outputs = t.outputs().to_vec();
        outputs[0].swap(0, 1);
        assert!(PathTable::new(t.arch().clone(), outputs).is_err());
    }

    #[test]
    fn omega_subsampling() {
        let ds = Dataset::new(
            (0..50).map(|i| Vector::new(vec![i as f64])).collect(),
            (0..50)
                .map(|_| crate::dataset::Target::Class(0))
                .collect(),
            crate::dataset::Task::Classification { classes: 1 },
        )
        .unwrap();
        let om = OmegaSet::from_dataset(&ds, 10, 3).unwrap();
        assert_eq!(om.len(), 10);
        assert_eq!(om, OmegaSet::from_dataset(&ds, 10, 3).unwrap());
        assert_eq!(OmegaSet::from_dataset(&ds, 100, 3).unwrap().len(), 50);
        assert!(OmegaSet::new(vec![]).is_err());
    }
}
