use std::path::Path;

use glai_core::dataset::{gen_teacher, idx_dataset, load_csv, split, CsvSchema, TaskKind};
use glai_core::glai::{compute_sigma, expand, GlaiModel};
use glai_core::linalg::Rng;
use glai_core::mlp::{Architecture, MlpModel};
use glai_core::paths::{OmegaSet, PathTable, DEFAULT_PATH_BUDGET};
use glai_core::pipeline::{
    compare, run_glai, DatasetSpec, ExperimentConfig, Phase1Epochs, RunReport,
};
use glai_core::train::{fit, Phase, TrainConfig};
use glai_core::Error;

fn arch(s: &str) -> Architecture {
    s.parse().unwrap()
}

fn quick_cfg(a: &str, n: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::teacher_default(arch(a), n, 0.5, 3);
    for t in [&mut cfg.mlp_train, &mut cfg.glai_phase2] {
        t.learning_rate = 0.02;
        t.max_epochs = 8;
    }
    cfg.glai_phase1.epochs = Phase1Epochs::Fixed { epochs: 3 };
    cfg
}

#[test]
fn csv_round_trip_feeds_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let (ds, _) = gen_teacher(4, &arch("(5,8,3)"), 150, 0.0, TaskKind::Classification).unwrap();
    let ds = ds.with_classes(3).unwrap();
    ds.write_csv(&dir.path().join("data.csv")).unwrap();

    let schema = CsvSchema::trailing_label(6, true, TaskKind::Classification);
    let loaded = load_csv(&dir.path().join("data.csv"), &schema).unwrap();
    assert_eq!(loaded.inputs(), ds.inputs());
    assert_eq!(loaded.targets(), ds.targets());

    let mut cfg = quick_cfg("(5,8,3)", 150);
    cfg.dataset = DatasetSpec::Csv {
        path: "data.csv".into(),
        schema: CsvSchema {
            classes: Some(3),
            ..schema
        },
    };
    let sp = cfg.load_split(dir.path()).unwrap();
    let report = compare(&cfg, &sp).unwrap();
    assert!(report.speedup > 0.0);
    assert_eq!(report.glai.parity.as_ref().unwrap().sigma, compute_sigma(&cfg.arch, 0.5).unwrap().sigma);
}

fn idx_bytes(n: usize, side: usize, seed: u64) -> (Vec<u8>, Vec<u8>) {
    let mut rng = Rng::new(seed);
    let mut images = vec![0, 0, 8, 3];
    for d in [n, side, side] {
        images.extend_from_slice(&(d as u32).to_be_bytes());
    }
    let mut labels = vec![0, 0, 8, 1];
    labels.extend_from_slice(&(n as u32).to_be_bytes());
    for i in 0..n {
        let class = i % 2;
        for p in 0..side * side {
            // Class 1 lights the left half brighter.
            let bright = class == 1 && p % side < side / 2;
            let base = if bright { 180 } else { 40 };
            images.push((base + rng.index(60)) as u8);
        }
        labels.push(class as u8);
    }
    (images, labels)
}

#[test]
fn idx_images_train_to_high_accuracy() {
    let (img, lab) = idx_bytes(200, 4, 0);
    let ds = idx_dataset(&img, &lab).unwrap();
    assert_eq!(ds.input_dim(), 16);
    let sp = split(&ds, 0.25, 0).unwrap();
    let mut model = MlpModel::new(arch("(16,8,2)"), 0).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.05,
        max_epochs: 30,
        ..TrainConfig::default()
    };
    let out = fit(&mut model, &sp, &cfg, Phase::Mlp, 0).unwrap();
    assert!(out.report.best_score >= 0.95, "{}", out.report.best_score);
}

#[test]
fn glai_run_artifacts_round_trip() {
    let cfg = quick_cfg("(6,10,10,3)", 300);
    let sp = cfg.load_split(Path::new(".")).unwrap();
    let run = run_glai(&cfg, &sp).unwrap();

    let json = run.model.to_json().unwrap();
    let back = GlaiModel::from_json(&json).unwrap();
    assert_eq!(back, run.model);
    for x in sp.validation.inputs() {
        assert_eq!(back.forward(x).unwrap(), run.model.forward(x).unwrap());
    }

    let report_json = serde_json::to_string(&run.report).unwrap();
    let report: RunReport = serde_json::from_str(&report_json).unwrap();
    assert_eq!(report, run.report);
}

#[test]
fn estimator_training_improves_on_pruned_start() {
    let cfg = quick_cfg("(8,16,16,3)", 600);
    let sp = cfg.load_split(Path::new(".")).unwrap();
    let structure = MlpModel::new(arch("(8,8,8,3)"), 1).unwrap();
    let omega = OmegaSet::from_dataset(&sp.train, 256, 0).unwrap();
    let sigma = compute_sigma(&cfg.arch, 0.5).unwrap();
    let (mut g, _) = expand(&structure).unwrap().prune(sigma.sigma, &omega).unwrap();
    let start = g.evaluate(&sp.validation, cfg.glai_phase2.loss).unwrap();
    let out = fit(&mut g, &sp, &cfg.glai_phase2, Phase::Estimator, 0).unwrap();
    let best = out.best.evaluate(&sp.validation, cfg.glai_phase2.loss).unwrap();
    assert!(best.accuracy.unwrap() > start.accuracy.unwrap());
}

#[test]
fn path_table_json_survives_a_file() {
    let m = MlpModel::new(arch("(3,4,4,2)"), 8).unwrap();
    let table = PathTable::from_model(&m, DEFAULT_PATH_BUDGET).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("paths.json");
    std::fs::write(&path, serde_json::to_string(&table).unwrap()).unwrap();
    let back: PathTable = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(back, table);
}

#[test]
fn config_errors_surface_before_training() {
    let mut cfg = quick_cfg("(4,6,3)", 50);
    cfg.glai_phase2.learning_rate = 0.5;
    let sp = cfg.load_split(Path::new(".")).unwrap();
    assert!(matches!(run_glai(&cfg, &sp), Err(Error::Config(_))));

    let cfg = quick_cfg("(4,6,3)", 50);
    let mut wrong = cfg.clone();
    wrong.arch = arch("(5,6,3)");
    assert!(matches!(wrong.load_split(Path::new(".")), Err(Error::Config(_))));
}
