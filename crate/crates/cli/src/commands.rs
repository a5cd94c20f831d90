use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use glai_core::dataset::{gen_teacher, load_csv, split, Dataset, TaskKind};
use glai_core::glai::{compute_sigma, expand, param_count_original, GlaiModel, ParityLedger, PruneScope};
use glai_core::linalg::Rng;
use glai_core::mlp::{Architecture, MlpModel};
use glai_core::paths::{path_count, OmegaSet};
use glai_core::pipeline::{
    compare_seeds, write_records_csv, DatasetSpec, ExperimentConfig, MultiSeedReport, Phase1Epochs,
    RunReport,
};
use glai_core::train::{fit, FitReport, Phase, TrainConfig, GLAI_WEIGHT_DECAY};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{
    config_base, infer_csv_schema, load_config, parse_task, prepare_out_dir, require_file,
    resolve_seed, usage, CliError, CliResult, TrainOverrides,
};
use crate::svg::{Chart, Series};

/// Largest tolerated `|GLAI − MLP|` (relative to `1 + |MLP|∞`) in the conversion self-test.
const EQUIVALENCE_TOL: f64 = 1e-9;
const DEFAULT_OMEGA: usize = 512;
const DATA_SEED_OFFSET: u64 = 1000;

/// Fills `None` fields of `$flags` from `$file`.
macro_rules! fill {
    ($flags:ident, $file:ident; $($f:ident),* $(,)?) => {
        $( if $flags.$f.is_none() { $flags.$f = $file.$f; } )*
    };
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

fn write(path: &Path, contents: &str) -> CliResult<()> {
    std::fs::write(path, contents)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(CliError::Runtime)
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.into()))?;
    s.push('\n');
    Ok(s)
}

fn read_text(path: &Path, what: &str) -> CliResult<String> {
    require_file(path, what)?;
    std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(CliError::Runtime)
}

fn load_mlp(path: &Path) -> CliResult<MlpModel> {
    let text = read_text(path, "model file")?;
    MlpModel::from_json(&text)
        .with_context(|| format!("invalid model file {}", path.display()))
        .map_err(CliError::Runtime)
}

fn load_glai(path: &Path) -> CliResult<GlaiModel> {
    let text = read_text(path, "GLAI file")?;
    GlaiModel::from_json(&text)
        .with_context(|| format!("invalid GLAI file {}", path.display()))
        .map_err(CliError::Runtime)
}

/// A CSV given on the command line, or a dataset spec from the config file.
fn load_dataset(
    data: Option<&Path>,
    spec: Option<&DatasetSpec>,
    task: Option<TaskKind>,
    base: &Path,
) -> CliResult<Dataset> {
    match (data, spec) {
        (Some(path), _) => {
            require_file(path, "dataset")?;
            let schema = infer_csv_schema(path, task.unwrap_or(TaskKind::Classification))?;
            Ok(load_csv(path, &schema)?)
        }
        (None, Some(spec)) => {
            for p in spec_files(spec) {
                require_file(&base.join(p), "dataset")?;
            }
            Ok(spec.load(base)?)
        }
        (None, None) => Err(usage("no dataset given; pass --data FILE or set it in --config")),
    }
}

fn spec_files(spec: &DatasetSpec) -> Vec<&Path> {
    match spec {
        DatasetSpec::Teacher { .. } => vec![],
        DatasetSpec::Csv { path, .. } => vec![path.as_path()],
        DatasetSpec::Idx { images, labels } => vec![images.as_path(), labels.as_path()],
    }
}

/// Checks `ds` against `arch`. A CSV may not contain every class, so the
/// class count is widened to the output width when needed.
fn fit_shape(arch: &Architecture, mut ds: Dataset) -> CliResult<Dataset> {
    if let glai_core::dataset::Task::Classification { classes } = ds.task() {
        if classes < arch.output_dim() {
            ds = ds.with_classes(arch.output_dim())?;
        }
    }
    if ds.input_dim() != arch.input_dim() || ds.task().output_dim() != arch.output_dim() {
        return Err(usage(format!(
            "dataset has {} inputs and {} outputs but the architecture is {arch}",
            ds.input_dim(),
            ds.task().output_dim()
        )));
    }
    Ok(ds)
}

fn report_from_fit(fit: FitReport) -> RunReport {
    RunReport {
        epochs_to_stop: fit.epochs_run,
        best_validation_score: fit.best_score,
        monitor: fit.monitor,
        records: fit.records,
        total_wall_clock: fit.total_seconds,
        phase1_epochs: None,
        convergence_epoch: None,
        parity: None,
        prune: None,
    }
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataArgs {
    /// JSON config; flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Teacher architecture, e.g. 8,16,3.
    #[arg(long)]
    pub teacher: Option<Architecture>,
    /// Number of samples.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Gaussian label noise (regression only).
    #[arg(long)]
    pub noise_std: Option<f64>,
    #[arg(long, value_parser = parse_task)]
    pub task: Option<TaskKind>,
    /// Output directory for data.csv and teacher.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub force: bool,
}

pub fn gen_data(mut a: GenDataArgs) -> CliResult<()> {
    let mut file_seed = None;
    if let Some(cfg) = a.config.clone() {
        let mut f: GenDataArgs = load_config(&cfg)?;
        rebase(&config_base(Some(&cfg)), &mut f.out);
        file_seed = f.seed;
        fill!(a, f; teacher, n, noise_std, task, out);
    }
    let teacher = a.teacher.ok_or_else(|| usage("--teacher is required"))?;
    let n = a.n.ok_or_else(|| usage("--n is required"))?;
    if n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    let out = a.out.ok_or_else(|| usage("--out is required"))?;
    let seed = resolve_seed(a.seed, file_seed, 0)?;
    let task = a.task.unwrap_or(TaskKind::Classification);

    let (ds, mut model) = gen_teacher(seed, &teacher, n, a.noise_std.unwrap_or(0.0), task)?;
    model.seed = Some(seed);
    prepare_out_dir(&out, a.force)?;
    ds.write_csv(&out.join("data.csv"))?;
    write(&out.join("teacher.json"), &format!("{}\n", model.to_json()?))?;
    println!("wrote {n} samples to {}", out.join("data.csv").display());
    Ok(())
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainMlpArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub arch: Option<Architecture>,
    /// CSV dataset with a header row.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(skip)]
    pub dataset: Option<DatasetSpec>,
    #[arg(long, value_parser = parse_task)]
    pub task: Option<TaskKind>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    #[serde(default)]
    pub train: TrainOverrides,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub force: bool,
}

pub fn train_mlp(mut a: TrainMlpArgs) -> CliResult<()> {
    let mut file_seed = None;
    let mut base = PathBuf::new();
    if let Some(cfg) = a.config.clone() {
        let mut f: TrainMlpArgs = load_config(&cfg)?;
        base = config_base(Some(&cfg));
        rebase(&base, &mut f.data);
        rebase(&base, &mut f.out);
        file_seed = f.seed;
        a.train = std::mem::take(&mut a.train).or(f.train);
        fill!(a, f; arch, data, dataset, task, val_fraction, split_seed, out);
    }
    let arch = a.arch.ok_or_else(|| usage("--arch is required"))?;
    let out = a.out.ok_or_else(|| usage("--out is required"))?;
    let seed = resolve_seed(a.seed, file_seed, 0)?;
    let cfg = a.train.apply(TrainConfig::default(), seed)?;
    let ds = load_dataset(a.data.as_deref(), a.dataset.as_ref(), a.task, &base)?;
    let ds = fit_shape(&arch, ds)?;
    let sp = split(&ds, a.val_fraction.unwrap_or(0.2), a.split_seed.unwrap_or(seed))?;
    prepare_out_dir(&out, a.force)?;

    let mut model = MlpModel::new(arch, seed)?;
    let outcome = fit(&mut model, &sp, &cfg, Phase::Mlp, 0)?;
    let mut best = outcome.best;
    best.seed = Some(seed);
    best.training_meta = match json!({
        "epochs_run": outcome.report.epochs_run,
        "best_epoch": outcome.report.best_epoch,
        "best_score": outcome.report.best_score,
        "monitor": outcome.report.monitor,
        "train_config": cfg,
    }) {
        serde_json::Value::Object(m) => m,
        _ => unreachable!(),
    };
    let report = report_from_fit(outcome.report);
    write(&out.join("model.json"), &format!("{}\n", best.to_json()?))?;
    write(&out.join("report.json"), &to_json(&report)?)?;
    write_records_csv(&report.records, &out.join("metrics.csv"))?;
    println!(
        "trained {} epochs, best validation score {:.6}; artifacts in {}",
        report.epochs_to_stop,
        report.best_validation_score,
        out.display()
    );
    Ok(())
}

/// Reference inputs: a capped sample of `data`, or standard-normal draws.
fn omega_from(data: Option<Dataset>, dim: usize, max: usize, seed: u64) -> CliResult<OmegaSet> {
    if max == 0 {
        return Err(usage("--omega-max must be at least 1"));
    }
    Ok(match data {
        Some(ds) => OmegaSet::from_dataset(&ds, max, seed)?,
        None => {
            let mut rng = Rng::new(seed);
            OmegaSet::new((0..max).map(|_| rng.normal_vector(dim)).collect())?
        }
    })
}

fn parse_scope(s: &str) -> Result<PruneScope, String> {
    match s {
        "global" => Ok(PruneScope::Global),
        "per_output" => Ok(PruneScope::PerOutput),
        _ => Err(format!("unknown scope {s:?} (global | per_output)")),
    }
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToGlaiArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Trained structure MLP (JSON).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Reduction factor the structure MLP was built with.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Architecture whose parameter count the result must match.
    #[arg(long)]
    pub original_arch: Option<Architecture>,
    /// Explicit retained fraction; skips the parity computation.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// CSV whose inputs form the reference set for path norms.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_parser = parse_task)]
    pub task: Option<TaskKind>,
    #[arg(long)]
    pub omega_max: Option<usize>,
    #[arg(long, value_parser = parse_scope)]
    pub scope: Option<PruneScope>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub force: bool,
}

pub fn to_glai(mut a: ToGlaiArgs) -> CliResult<()> {
    let mut file_seed = None;
    if let Some(cfg) = a.config.clone() {
        let mut f: ToGlaiArgs = load_config(&cfg)?;
        let base = config_base(Some(&cfg));
        rebase(&base, &mut f.model);
        rebase(&base, &mut f.data);
        rebase(&base, &mut f.out);
        file_seed = f.seed;
        fill!(a, f; model, rho, original_arch, sigma, data, task, omega_max, scope, out);
    }
    if let Some(rho) = a.rho {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(usage(format!("--rho must lie in (0, 1), got {rho}")));
        }
    }
    if let Some(sigma) = a.sigma {
        if !(sigma > 0.0 && sigma <= 1.0) {
            return Err(usage(format!("--sigma must lie in (0, 1], got {sigma}")));
        }
    }
    let model_path = a.model.ok_or_else(|| usage("--model is required"))?;
    let out = a.out.ok_or_else(|| usage("--out is required"))?;
    let seed = resolve_seed(a.seed, file_seed, 0)?;
    let model = load_mlp(&model_path)?;
    let e_total = path_count(model.arch())?.total;

    let mut parity = match (a.sigma, a.rho, &a.original_arch) {
        (Some(sigma), _, original) => {
            let o = param_count_original(original.as_ref().unwrap_or(model.arch()));
            let retained = ((sigma * e_total as f64).ceil() as u64).min(e_total);
            ParityLedger::manual(o, model.param_count() as u64, e_total, sigma, retained)
        }
        (None, Some(rho), Some(original)) => {
            let s = compute_sigma(original, rho)?;
            if &s.reduced_arch != model.arch() {
                return Err(usage(format!(
                    "model architecture {} is not the rho = {rho} reduction of {original} ({})",
                    model.arch(),
                    s.reduced_arch
                )));
            }
            if s.clamped {
                eprintln!(
                    "warning: (O - R) / E exceeds 1 for rho = {rho}; sigma clamped to 1, the result has {} fewer parameters than the original",
                    s.o - s.r - s.e
                );
            }
            ParityLedger::new(&s, s.retained_paths())
        }
        (None, Some(_), None) => return Err(usage("--original-arch is required with --rho")),
        (None, None, _) => return Err(usage("pass --rho with --original-arch, or --sigma")),
    };

    let data = match &a.data {
        Some(p) => Some(load_dataset(Some(p), None, a.task, Path::new(""))?),
        None => None,
    };
    let omega = omega_from(data, model.arch().input_dim(), a.omega_max.unwrap_or(DEFAULT_OMEGA), seed)?;
    prepare_out_dir(&out, a.force)?;

    let full = expand(&model)?;
    let err = full.equivalence_error(&model, omega.samples())?;
    if err > EQUIVALENCE_TOL {
        return Err(CliError::Runtime(anyhow::anyhow!(
            "equivalence self-test failed: max scaled error {err:e} > {EQUIVALENCE_TOL:e}"
        )));
    }
    parity.equivalence_max_error = Some(err);
    let (mut glai, prune) = full.prune_scoped(parity.sigma, &omega, a.scope.unwrap_or(PruneScope::Global))?;
    parity.retained_paths = glai.path_total() as u64;
    parity.glai_param_total = parity.r + parity.retained_paths;
    glai.parity = Some(parity.clone());
    write(&out.join("glai.json"), &format!("{}\n", glai.to_json()?))?;
    println!(
        "kept {} of {} paths (sigma {:.6}); {} parameters vs original {}; self-test error {err:.2e}; removed-score bound {:.6e}",
        prune.kept_count,
        e_total,
        parity.sigma,
        parity.glai_param_total,
        parity.o,
        prune.error_bound + 0.0
    );
    Ok(())
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainEstimatorArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// GLAI model to train (JSON).
    #[arg(long)]
    pub glai: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(skip)]
    pub dataset: Option<DatasetSpec>,
    #[arg(long, value_parser = parse_task)]
    pub task: Option<TaskKind>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    #[serde(default)]
    pub train: TrainOverrides,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub force: bool,
}

pub fn train_estimator(mut a: TrainEstimatorArgs) -> CliResult<()> {
    let mut file_seed = None;
    let mut base = PathBuf::new();
    if let Some(cfg) = a.config.clone() {
        let mut f: TrainEstimatorArgs = load_config(&cfg)?;
        base = config_base(Some(&cfg));
        rebase(&base, &mut f.glai);
        rebase(&base, &mut f.data);
        rebase(&base, &mut f.out);
        file_seed = f.seed;
        a.train = std::mem::take(&mut a.train).or(f.train);
        fill!(a, f; glai, data, dataset, task, val_fraction, split_seed, out);
    }
    let glai_path = a.glai.ok_or_else(|| usage("--glai is required"))?;
    let out = a.out.ok_or_else(|| usage("--out is required"))?;
    let seed = resolve_seed(a.seed, file_seed, 0)?;
    let base_cfg = TrainConfig {
        weight_decay: GLAI_WEIGHT_DECAY,
        ..TrainConfig::default()
    };
    let cfg = a.train.apply(base_cfg, seed)?;
    let mut glai = load_glai(&glai_path)?;
    let ds = load_dataset(a.data.as_deref(), a.dataset.as_ref(), a.task, &base)?;
    let ds = fit_shape(glai.arch(), ds)?;
    let sp = split(&ds, a.val_fraction.unwrap_or(0.2), a.split_seed.unwrap_or(seed))?;
    prepare_out_dir(&out, a.force)?;

    let frozen = glai.structure().to_json()?;
    let outcome = fit(&mut glai, &sp, &cfg, Phase::Estimator, 0)?;
    if outcome.best.structure().to_json()? != frozen {
        return Err(CliError::Runtime(anyhow::anyhow!("structure changed during estimator training")));
    }
    let report = report_from_fit(outcome.report);
    write(&out.join("glai.json"), &format!("{}\n", outcome.best.to_json()?))?;
    write(&out.join("report.json"), &to_json(&report)?)?;
    write_records_csv(&report.records, &out.join("metrics.csv"))?;
    println!(
        "trained estimator for {} epochs, best validation score {:.6}; artifacts in {}",
        report.epochs_to_stop,
        report.best_validation_score,
        out.display()
    );
    Ok(())
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Full experiment description; flags below override parts of it.
    #[arg(skip)]
    pub experiment: Option<ExperimentConfig>,
    /// Architecture for a teacher-data experiment when no config is given.
    #[arg(long)]
    pub arch: Option<Architecture>,
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub rho: Option<f64>,
    /// Reduced-MLP epochs: a count, or `auto` for the convergence rule.
    #[arg(long)]
    pub phase1_epochs: Option<String>,
    /// Epoch cap for both arms.
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Teacher seed for generated data; defaults to the model seed plus 1000.
    #[arg(long)]
    pub data_seed: Option<u64>,
    /// Repetitions with consecutive seeds.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub force: bool,
}

fn parse_phase1(s: &str, cap: usize) -> CliResult<Phase1Epochs> {
    if s == "auto" {
        return Ok(Phase1Epochs::Auto { max_epochs: cap });
    }
    match s.parse::<usize>() {
        Ok(0) | Err(_) => Err(usage(format!(
            "--phase1-epochs must be a positive count or `auto`, got {s:?}"
        ))),
        Ok(n) => Ok(Phase1Epochs::Fixed { epochs: n }),
    }
}

pub fn pipeline(mut a: PipelineArgs) -> CliResult<()> {
    let mut file_seed = None;
    let mut base = PathBuf::new();
    if let Some(cfg) = a.config.clone() {
        let mut f: PipelineArgs = load_config(&cfg)?;
        base = config_base(Some(&cfg));
        rebase(&base, &mut f.out);
        file_seed = f.seed.or(f.experiment.as_ref().map(|e| e.seed));
        fill!(a, f; experiment, arch, n_samples, data_seed, rho, phase1_epochs, max_epochs, seeds, out);
    }
    let out = a.out.clone().ok_or_else(|| usage("--out is required"))?;
    let seed = resolve_seed(a.seed, file_seed, 0)?;
    let mut exp = match a.experiment.take() {
        Some(e) => e,
        None => {
            let arch = a.arch.clone().ok_or_else(|| usage("--arch is required without an experiment config"))?;
            let mut e = ExperimentConfig::teacher_default(arch, a.n_samples.unwrap_or(2000), a.rho.unwrap_or(0.5), seed);
            let data_seed = a.data_seed.unwrap_or(seed.wrapping_add(DATA_SEED_OFFSET));
            if let DatasetSpec::Teacher { seed, .. } = &mut e.dataset {
                *seed = data_seed;
            }
            e.split.seed = data_seed;
            e
        }
    };
    if let Some(rho) = a.rho {
        exp.glai_phase1.rho = rho;
    }
    if let Some(m) = a.max_epochs {
        exp.mlp_train.max_epochs = m;
        exp.glai_phase2.max_epochs = m;
    }
    if let Some(p) = &a.phase1_epochs {
        exp.glai_phase1.epochs = parse_phase1(p, exp.mlp_train.max_epochs)?;
    }
    let exp = exp.with_seed(seed);
    exp.validate()?;
    let seeds = a.seeds.unwrap_or(3);
    if seeds == 0 {
        return Err(usage("--seeds must be at least 1"));
    }
    if let DatasetSpec::Teacher { arch, seed: t, .. } = &exp.dataset {
        if *arch == exp.arch && (exp.seed..exp.seed.saturating_add(seeds as u64)).contains(t) {
            eprintln!("warning: teacher seed {t} equals a model seed; that MLP starts at the teacher's weights");
        }
    }
    for p in spec_files(&exp.dataset) {
        require_file(&base.join(p), "dataset")?;
    }
    let sp = exp.load_split(&base)?;
    compute_sigma(&exp.arch, exp.glai_phase1.rho)?;
    prepare_out_dir(&out, a.force)?;

    let multi = compare_seeds(&exp, &sp, seeds)?;
    write(&out.join("experiment.json"), &to_json(&exp)?)?;
    write(&out.join("comparison.json"), &to_json(&multi)?)?;
    write(&out.join("summary.csv"), &summary_csv(&multi))?;
    for r in &multi.per_seed {
        write_records_csv(&r.mlp.records, &out.join(format!("records_seed{}_mlp.csv", r.seed)))?;
        write_records_csv(&r.glai.records, &out.join(format!("records_seed{}_glai.csv", r.seed)))?;
    }
    let first = &multi.per_seed[0];
    write(&out.join("loss.svg"), &loss_chart(&first.mlp, &first.glai, first.seed).render())?;
    write(&out.join("structure.svg"), &structure_chart(&first.glai, first.seed).render())?;

    let m = &multi.mean;
    println!("seeds {seeds}: epochs MLP {:.1} / GLAI {:.1}", m.mlp_epochs, m.glai_epochs);
    println!("best validation MLP {:.6} / GLAI {:.6} (delta {:+.6})", m.mlp_bvs, m.glai_bvs, m.bvs_delta);
    println!("speedup {:.3}; artifacts in {}", m.speedup, out.display());
    Ok(())
}

fn summary_csv(multi: &MultiSeedReport) -> String {
    let mut s = String::from("seed,mlp_epochs,glai_epochs,mlp_bvs,glai_bvs,bvs_delta,mlp_seconds,glai_seconds,speedup\n");
    for r in &multi.per_seed {
        s.push_str(&format!(
            "{},{},{},{:?},{:?},{:?},{:?},{:?},{:?}\n",
            r.seed,
            r.mlp.epochs_to_stop,
            r.glai.epochs_to_stop,
            r.mlp.best_validation_score,
            r.glai.best_validation_score,
            r.bvs_delta,
            r.mlp.total_wall_clock,
            r.glai.total_wall_clock,
            r.speedup
        ));
    }
    let m = &multi.mean;
    let secs = |f: fn(&glai_core::pipeline::ComparisonReport) -> f64| {
        multi.per_seed.iter().map(f).sum::<f64>() / multi.per_seed.len() as f64
    };
    s.push_str(&format!(
        "mean,{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}\n",
        m.mlp_epochs,
        m.glai_epochs,
        m.mlp_bvs,
        m.glai_bvs,
        m.bvs_delta,
        secs(|r| r.mlp.total_wall_clock),
        secs(|r| r.glai.total_wall_clock),
        m.speedup
    ));
    s
}

fn points(report: &RunReport, phase: Option<Phase>, value: fn(&glai_core::train::EpochRecord) -> Option<f64>) -> Vec<(f64, f64)> {
    report
        .records
        .iter()
        .filter(|r| phase.is_none_or(|p| r.phase == p))
        .filter_map(|r| value(r).map(|v| (r.epoch as f64, v)))
        .collect()
}

fn loss_chart(mlp: &RunReport, glai: &RunReport, seed: u64) -> Chart {
    Chart {
        title: format!("Loss per epoch (seed {seed})"),
        x_label: "epoch".into(),
        y_label: "loss".into(),
        y2_label: None,
        series: vec![
            Series::new("MLP validation", points(mlp, None, |r| Some(r.val_loss))),
            Series::new("GLAI validation", points(glai, None, |r| Some(r.val_loss))),
            Series::new("MLP train", points(mlp, None, |r| Some(r.train_loss))),
            Series::new("GLAI train", points(glai, None, |r| Some(r.train_loss))),
        ],
    }
}

fn structure_chart(glai: &RunReport, seed: u64) -> Chart {
    Chart {
        title: format!("Path distance during the reduced-MLP stage (seed {seed})"),
        x_label: "epoch".into(),
        y_label: "validation loss".into(),
        y2_label: Some("path distance m_t".into()),
        series: vec![
            Series::new("validation loss", points(glai, Some(Phase::Structure), |r| Some(r.val_loss))),
            Series::new("m_t", points(glai, Some(Phase::Structure), |r| r.m_t)).secondary(),
        ],
    }
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InspectArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub glai: Option<PathBuf>,
    /// CSV whose inputs form the reference set; standard-normal draws otherwise.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_parser = parse_task)]
    pub task: Option<TaskKind>,
    /// Number of paths to list.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub omega_max: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the listing here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn inspect_paths(mut a: InspectArgs) -> CliResult<()> {
    let mut file_seed = None;
    if let Some(cfg) = a.config.clone() {
        let mut f: InspectArgs = load_config(&cfg)?;
        let base = config_base(Some(&cfg));
        rebase(&base, &mut f.glai);
        rebase(&base, &mut f.data);
        rebase(&base, &mut f.out);
        file_seed = f.seed;
        fill!(a, f; glai, data, task, k, omega_max, out);
    }
    let path = a.glai.ok_or_else(|| usage("--glai is required"))?;
    let seed = resolve_seed(a.seed, file_seed, 0)?;
    let glai = load_glai(&path)?;
    let data = match &a.data {
        Some(p) => Some(load_dataset(Some(p), None, a.task, Path::new(""))?),
        None => None,
    };
    let omega = omega_from(data, glai.arch().input_dim(), a.omega_max.unwrap_or(DEFAULT_OMEGA), seed)?;
    let listing = path_listing(&glai, &omega, a.k.unwrap_or(20))?;
    match a.out {
        Some(p) => write(&p, &listing),
        None => {
            print!("{listing}");
            Ok(())
        }
    }
}

/// Top-`k` retained paths by `|w|·‖c‖₁`, ties in canonical order.
pub fn path_listing(glai: &GlaiModel, omega: &OmegaSet, k: usize) -> CliResult<String> {
    let norms = glai.path_norms(omega)?;
    let mut rows = Vec::with_capacity(glai.path_total());
    for ((group, w), n) in glai.retained().outputs().iter().zip(glai.estimator()).zip(&norms) {
        for ((wp, &weight), &norm) in group.iter().zip(w).zip(n) {
            rows.push((&wp.path, weight, norm, weight.abs() * norm));
        }
    }
    rows.sort_by(|a, b| b.3.total_cmp(&a.3));
    let mut s = String::from("rank,output,origin,hidden,weight,norm,score\n");
    for (rank, (p, weight, norm, score)) in rows.iter().take(k).enumerate() {
        let hidden: Vec<String> = p.hidden.iter().map(usize::to_string).collect();
        s.push_str(&format!(
            "{},{},{},{},{:?},{:?},{:?}\n",
            rank + 1,
            p.output,
            p.origin,
            hidden.join("-"),
            weight,
            norm,
            score
        ));
    }
    Ok(s)
}
