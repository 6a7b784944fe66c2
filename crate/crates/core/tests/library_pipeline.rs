//! Library-level end-to-end runs on a tiny synthetic dataset.

use std::fs;
use std::path::Path;

use desco::evaluation::evaluate_run;
use desco::schedules::ScheduleConfig;
use desco::segmodel::load_checkpoint;
use desco::synthetic::{write_dataset, DatasetSpec};
use desco::trainer::{read_history_csv, train_desco, InferenceConfig, TrainConfig, TrainOutcome, TrainingData, Variant};
use desco::volume::Manifest;

fn tiny_config(variant: Variant) -> TrainConfig {
    TrainConfig {
        variant,
        schedule: ScheduleConfig {
            total_iters: 8,
            alpha_update_every: 4,
            ..Default::default()
        },
        patch: [8, 8, 8],
        channels: vec![2, 4],
        mc_passes: 2,
        eval_every: 4,
        inference: InferenceConfig {
            patch: [8, 8, 8],
            strides: [8, 8, 8],
            ensemble: true,
        },
        ..Default::default()
    }
}

fn run(root: &Path, variant: Variant) -> (TrainOutcome, Manifest) {
    let spec = DatasetSpec {
        dims: [16, 16, 16],
        n_train: 3,
        n_annotated: 1,
        n_test: 1,
        ..Default::default()
    };
    let paths = write_dataset(&spec, &root.join("data")).unwrap();
    let train = Manifest::load(&paths.train_manifest).unwrap();
    let test = Manifest::load(&paths.test_manifest).unwrap();
    let cfg = tiny_config(variant);
    let data = TrainingData::from_manifests(&train, Some(&test), &cfg.registration, None).unwrap();
    let outcome = train_desco(&data, &cfg, Some(&root.join("train")), |_| {}).unwrap();
    (outcome, test)
}

#[test]
fn trained_checkpoints_reload_and_score() {
    let dir = tempfile::tempdir().unwrap();
    let (outcome, test) = run(dir.path(), Variant::Desco);

    let rows = read_history_csv(dir.path().join("train/history.csv")).unwrap();
    assert_eq!(rows.len(), 8);
    assert_eq!(rows[7].iter, outcome.history[7].iter);
    assert!(rows[7].val_dice_ens.is_finite());
    assert!(rows[0].val_dice_ens.is_nan());

    let a = load_checkpoint(dir.path().join("train/model_a")).unwrap();
    let b = load_checkpoint(dir.path().join("train/model_b")).unwrap();
    assert_eq!(a, outcome.models[0]);
    assert_eq!(b, outcome.models[1]);

    let cfg = tiny_config(Variant::Desco).inference;
    let report = evaluate_run([&a, &b], &test, &cfg).unwrap();
    assert_eq!(report.volumes.len(), 1);
    assert!((0.0..=1.0).contains(&report.dice.mean));
    // The last validation in the history scored the same models on the same volume.
    assert!((report.dice.mean - rows[7].val_dice_ens).abs() < 1e-9);

    report.write(&dir.path().join("eval")).unwrap();
    let csv = fs::read_to_string(dir.path().join("eval/report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4, "{csv}");
}

#[test]
fn variants_follow_their_schedules() {
    let dir = tempfile::tempdir().unwrap();
    let (sparse, _) = run(&dir.path().join("sparse"), Variant::SparseOnly);
    let (dense, _) = run(&dir.path().join("dense"), Variant::StaticDense);
    let (full, _) = run(&dir.path().join("full"), Variant::Desco);

    assert!(sparse.history.iter().all(|r| r.alpha == 0.0));
    assert!(dense.history.iter().all(|r| r.alpha == 0.95 && r.lambda == 0.0));
    assert!(dense.history.iter().all(|r| r.loss_cross_a.is_nan()));
    assert_eq!(full.history[0].alpha, 0.95);
    assert_eq!(full.history[7].alpha, 0.0);
    assert!(full.history[7].lambda > full.history[0].lambda);
}
