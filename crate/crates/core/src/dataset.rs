//! Dataset loading (CSV, IDX), teacher-generated synthetic data, and splits.
//!
//! Loaders never standardize features. Path norms depend on `|x_i|`, so a
//! silent rescale would change pruning scores. IDX pixels are the one
//! exception: bytes are mapped to `[0, 1]`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Rng, Vector};
use crate::mlp::{Architecture, MlpModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification { classes: usize },
    Regression { outputs: usize },
}

impl Task {
    pub fn output_dim(&self) -> usize {
        match *self {
            Task::Classification { classes } => classes,
            Task::Regression { outputs } => outputs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Class(usize),
    Value(Vector),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<Vector>,
    targets: Vec<Target>,
    input_dim: usize,
    task: Task,
}

impl Dataset {
    pub fn new(inputs: Vec<Vector>, targets: Vec<Target>, task: Task) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if inputs.len() != targets.len() {
            return Err(Error::DimensionMismatch {
                expected: inputs.len(),
                got: targets.len(),
            });
        }
        let input_dim = inputs[0].len();
        for x in &inputs {
            if x.len() != input_dim {
                return Err(Error::DimensionMismatch {
                    expected: input_dim,
                    got: x.len(),
                });
            }
            if !x.is_finite() {
                return Err(Error::NonFinite("dataset input".into()));
            }
        }
        for t in &targets {
            match (t, task) {
                (Target::Class(c), Task::Classification { classes }) if *c < classes => {}
                (Target::Value(v), Task::Regression { outputs }) if v.len() == outputs => {}
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "target {t:?} inconsistent with task {task:?}"
                    )))
                }
            }
        }
        Ok(Dataset {
            inputs,
            targets,
            input_dim,
            task,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn inputs(&self) -> &[Vector] {
        &self.inputs
    }

    pub fn targets(&self) -> &[Target] {
        &self.targets
    }

    pub fn sample(&self, i: usize) -> (&Vector, &Target) {
        (&self.inputs[i], &self.targets[i])
    }

    /// Widen the class count, e.g. when a small IDX file misses the top labels.
    pub fn with_classes(mut self, classes: usize) -> Result<Self> {
        match self.task {
            Task::Classification { classes: current } if classes >= current => {
                self.task = Task::Classification { classes };
                Ok(self)
            }
            _ => Err(Error::InvalidArgument(format!(
                "cannot set {classes} classes on task {:?}",
                self.task
            ))),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Dataset::new(
            indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            indices.iter().map(|&i| self.targets[i].clone()).collect(),
            self.task,
        )
    }

    /// Class histogram for classification tasks.
    pub fn class_counts(&self) -> Option<Vec<usize>> {
        let Task::Classification { classes } = self.task else {
            return None;
        };
        let mut counts = vec![0; classes];
        for t in &self.targets {
            if let Target::Class(c) = t {
                counts[*c] += 1;
            }
        }
        Some(counts)
    }

    /// Writes features followed by the target column(s), with a header row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        let mut header: Vec<String> = (0..self.input_dim).map(|i| format!("x{i}")).collect();
        match self.task {
            Task::Classification { .. } => header.push("label".into()),
            Task::Regression { outputs } => header.extend((0..outputs).map(|j| format!("y{j}"))),
        }
        writeln!(w, "{}", header.join(",")).map_err(io)?;
        for (x, t) in self.inputs.iter().zip(&self.targets) {
            let mut fields: Vec<String> = x.iter().map(|v| format!("{v:?}")).collect();
            match t {
                Target::Class(c) => fields.push(c.to_string()),
                Target::Value(v) => fields.extend(v.iter().map(|y| format!("{y:?}"))),
            }
            writeln!(w, "{}", fields.join(",")).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Column layout of a CSV dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub has_header: bool,
    /// Target column(s). Classification uses exactly one integer column.
    pub label_columns: Vec<usize>,
    /// Feature columns; `None` takes every non-target column in order.
    #[serde(default)]
    pub feature_columns: Option<Vec<usize>>,
    pub task: TaskKind,
    /// Class count for classification; inferred as `max label + 1` if absent.
    #[serde(default)]
    pub classes: Option<usize>,
}

impl CsvSchema {
    /// Features first, one trailing target column.
    pub fn trailing_label(width: usize, has_header: bool, task: TaskKind) -> Self {
        CsvSchema {
            has_header,
            label_columns: vec![width - 1],
            feature_columns: None,
            task,
            classes: None,
        }
    }
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(schema.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    if schema.label_columns.is_empty() {
        return Err(Error::InvalidArgument("no label column".into()));
    }
    if schema.task == TaskKind::Classification && schema.label_columns.len() != 1 {
        return Err(Error::InvalidArgument(
            "classification needs exactly one label column".into(),
        ));
    }

    let mut width: Option<usize> = None;
    let mut feature_cols: Vec<usize> = Vec::new();
    let mut inputs = Vec::new();
    let mut raw_labels: Vec<Vec<f64>> = Vec::new();

    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        match width {
            None => {
                let w = record.len();
                if let Some(&bad) = schema.label_columns.iter().find(|&&c| c >= w) {
                    return Err(Error::InvalidArgument(format!(
                        "label column {bad} beyond width {w}"
                    )));
                }
                feature_cols = match &schema.feature_columns {
                    Some(cols) => {
                        if let Some(&bad) = cols.iter().find(|&&c| c >= w) {
                            return Err(Error::InvalidArgument(format!(
                                "feature column {bad} beyond width {w}"
                            )));
                        }
                        cols.clone()
                    }
                    None => (0..w)
                        .filter(|c| !schema.label_columns.contains(c))
                        .collect(),
                };
                width = Some(w);
            }
            Some(w) if w != record.len() => {
                return Err(Error::InconsistentWidth {
                    row,
                    expected: w,
                    got: record.len(),
                })
            }
            Some(_) => {}
        }
        let parse = |c: usize| -> Result<f64> {
            let field = &record[c];
            field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    row,
                    message: format!("column {c}: {field:?} is not a finite number"),
                })
        };
        let x = feature_cols.iter().map(|&c| parse(c)).collect::<Result<Vec<_>>>()?;
        let y = schema
            .label_columns
            .iter()
            .map(|&c| parse(c))
            .collect::<Result<Vec<_>>>()?;
        inputs.push(Vector::new(x));
        raw_labels.push(y);
    }

    if inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }

    match schema.task {
        TaskKind::Regression => {
            let outputs = schema.label_columns.len();
            let targets = raw_labels
                .into_iter()
                .map(|y| Target::Value(Vector::new(y)))
                .collect();
            Dataset::new(inputs, targets, Task::Regression { outputs })
        }
        TaskKind::Classification => {
            let mut targets = Vec::with_capacity(raw_labels.len());
            for (i, y) in raw_labels.iter().enumerate() {
                let v = y[0];
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(Error::Parse {
                        row: i + 1,
                        message: format!("label {v} is not a non-negative integer"),
                    });
                }
                targets.push(Target::Class(v as usize));
            }
            let inferred = targets
                .iter()
                .map(|t| match t {
                    Target::Class(c) => c + 1,
                    Target::Value(_) => 0,
                })
                .max()
                .unwrap_or(1);
            let classes = schema.classes.unwrap_or(inferred);
            Dataset::new(inputs, targets, Task::Classification { classes })
        }
    }
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::TruncatedFile(format!("{what}: header ends early")))
}

/// Parses an IDX image file (magic 0x803) into flattened pixel rows in `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<Vector>> {
    let magic = read_be_u32(bytes, 0, "images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            found: magic,
            expected: IDX_IMAGES_MAGIC,
        });
    }
    let count = read_be_u32(bytes, 4, "images")? as usize;
    let rows = read_be_u32(bytes, 8, "images")? as usize;
    let cols = read_be_u32(bytes, 12, "images")? as usize;
    let pixels = rows * cols;
    let body = &bytes[16..];
    if body.len() < count * pixels {
        return Err(Error::TruncatedFile(format!(
            "images: expected {} pixel bytes, found {}",
            count * pixels,
            body.len()
        )));
    }
    Ok(body
        .chunks_exact(pixels.max(1))
        .take(count)
        .map(|img| Vector::new(img.iter().map(|&p| f64::from(p) / 255.0).collect()))
        .collect())
}

/// Parses an IDX label file (magic 0x801).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = read_be_u32(bytes, 0, "labels")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            found: magic,
            expected: IDX_LABELS_MAGIC,
        });
    }
    let count = read_be_u32(bytes, 4, "labels")? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(Error::TruncatedFile(format!(
            "labels: expected {count} bytes, found {}",
            body.len()
        )));
    }
    Ok(body[..count].iter().map(|&b| usize::from(b)).collect())
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = std::fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = std::fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    idx_dataset(&images, &labels)
}

pub fn idx_dataset(image_bytes: &[u8], label_bytes: &[u8]) -> Result<Dataset> {
    let images = parse_idx_images(image_bytes)?;
    let labels = parse_idx_labels(label_bytes)?;
    if images.len() != labels.len() {
        return Err(Error::CountMismatch {
            images: images.len(),
            labels: labels.len(),
        });
    }
    let classes = labels.iter().copied().max().map_or(1, |m| m + 1);
    let targets = labels.into_iter().map(Target::Class).collect();
    Dataset::new(images, targets, Task::Classification { classes })
}

/// Samples standard-normal inputs and labels them with a freshly initialized
/// teacher MLP. Returns the dataset together with the teacher.
pub fn gen_teacher(
    seed: u64,
    arch: &Architecture,
    n_samples: usize,
    noise_std: f64,
    kind: TaskKind,
) -> Result<(Dataset, MlpModel)> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be > 0".into()));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise_std must be >= 0, got {noise_std}"
        )));
    }
    let teacher = MlpModel::new(arch.clone(), seed)?;
    // Independent stream for the samples so the teacher is identical to new_mlp(arch, seed).
    let mut rng = Rng::new(seed ^ 0x9E37_79B9_7F4A_7C15);
    let n0 = arch.input_dim();
    let m = arch.output_dim();
    let mut inputs = Vec::with_capacity(n_samples);
    let mut targets = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let x = rng.normal_vector(n0);
        let y = teacher.forward(&x)?;
        let t = match kind {
            TaskKind::Classification => Target::Class(y.argmax()),
            TaskKind::Regression => {
                let mut y = y;
                if noise_std > 0.0 {
                    for v in y.iter_mut() {
                        *v += noise_std * rng.normal();
                    }
                }
                Target::Value(y)
            }
        };
        inputs.push(x);
        targets.push(t);
    }
    let task = match kind {
        TaskKind::Classification => Task::Classification { classes: m },
        TaskKind::Regression => Task::Regression { outputs: m },
    };
    Ok((Dataset::new(inputs, targets, task)?, teacher))
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub validation: Dataset,
    pub seed: u64,
    pub train_indices: Vec<usize>,
    pub validation_indices: Vec<usize>,
}

/// Seeded shuffle split; validation gets `round(val_fraction * n)` samples, at least one.
pub fn split(ds: &Dataset, val_fraction: f64, seed: u64) -> Result<Split> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::FractionOutOfRange(val_fraction));
    }
    let n = ds.len();
    let n_val = ((val_fraction * n as f64).round() as usize).max(1);
    if n_val >= n {
        return Err(Error::InvalidArgument(format!(
            "{n} samples leave no training data at val_fraction {val_fraction}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut order);
    let validation_indices = order[..n_val].to_vec();
    let train_indices = order[n_val..].to_vec();
    Ok(Split {
        train: ds.subset(&train_indices)?,
        validation: ds.subset(&validation_indices)?,
        seed,
        train_indices,
        validation_indices,
    })
}
