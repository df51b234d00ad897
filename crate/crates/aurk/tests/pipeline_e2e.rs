//! End-to-end pipeline behavior at small scale: determinism, caching,
//! checkpoint contracts and error paths.

use std::path::{Path, PathBuf};

use aurk::config::{DynamicMode, RunConfig};
use aurk::error::Error;
use aurk::model::{BackboneProfile, Checkpoint, CheckpointMeta, StaticModel};
use aurk::pipeline::{cmd_eval, cmd_infer, cmd_partition, cmd_synth, cmd_train};
use aurk::rng::Rng;

fn tiny_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.resolution = 64;
    cfg.backbone = "toy".into();
    cfg.synth_frames = 40;
    cfg.synth_test_frames = 15;
    cfg.synth_video_len = 40;
    cfg.synth_segment_len = 8;
    cfg.epochs = 2;
    cfg.seed = 7;
    cfg
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("aurk-e2e-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn synth_is_bit_deterministic_per_seed() {
    let cfg = tiny_config();
    let dir = scratch("synthdet");
    cmd_synth(&cfg, &dir.join("a")).unwrap();
    cmd_synth(&cfg, &dir.join("b")).unwrap();
    for file in ["images.bin", "labels.csv", "landmarks.csv", "manifest.v1"] {
        assert_eq!(
            read(&dir.join("a/train").join(file)),
            read(&dir.join("b/train").join(file)),
            "{file} differs between identical seeds"
        );
    }
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn full_pipeline_is_deterministic_and_self_consistent() {
    let cfg = tiny_config();
    let dir = scratch("fullpipe");
    cmd_synth(&cfg, &dir).unwrap();
    let train_dir = dir.join("train");
    let outcome = cmd_partition(&cfg, &train_dir, false).unwrap();
    assert!(!outcome.hit);
    // rerun with unchanged inputs: pure cache hit
    let outcome2 = cmd_partition(&cfg, &train_dir, false).unwrap();
    assert!(outcome2.hit);
    assert_eq!(outcome2.frames, 40);

    // two identical training runs produce byte-identical checkpoints
    let a = cmd_train(&cfg, &train_dir, &dir.join("a.ckpt"), None).unwrap();
    let b = cmd_train(&cfg, &train_dir, &dir.join("b.ckpt"), None).unwrap();
    assert_eq!(read(&dir.join("a.ckpt")), read(&dir.join("b.ckpt")));
    assert_eq!(a.losses.len(), b.losses.len());

    // inference twice: identical bytes
    cmd_infer(&cfg, &dir.join("a.ckpt"), &train_dir, &dir.join("p1.csv")).unwrap();
    cmd_infer(&cfg, &dir.join("a.ckpt"), &train_dir, &dir.join("p2.csv")).unwrap();
    assert_eq!(read(&dir.join("p1.csv")), read(&dir.join("p2.csv")));

    // evaluation emits identical reports across reruns
    let table = cfg.table().unwrap();
    cmd_eval(
        table,
        &dir.join("p1.csv"),
        &train_dir.join("labels.csv"),
        &dir.join("r1"),
        "aurk",
        &[],
    )
    .unwrap();
    cmd_eval(
        table,
        &dir.join("p2.csv"),
        &train_dir.join("labels.csv"),
        &dir.join("r2"),
        "aurk",
        &[],
    )
    .unwrap();
    assert_eq!(read(&dir.join("r1.csv")), read(&dir.join("r2.csv")));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn zero_epochs_checkpoint_equals_initialization() {
    let mut cfg = tiny_config();
    cfg.epochs = 0;
    let dir = scratch("zeroep");
    cmd_synth(&cfg, &dir).unwrap();
    cmd_partition(&cfg, &dir.join("train"), false).unwrap();
    cmd_train(&cfg, &dir.join("train"), &dir.join("init.ckpt"), None).unwrap();
    let ckpt = Checkpoint::load(&dir.join("init.ckpt")).unwrap();
    // reconstruct the seeded initialization
    let profile = cfg.profile().unwrap();
    let mut rng = Rng::new(cfg.seed);
    let fresh = StaticModel::init(&profile, cfg.channels, 6, &mut rng);
    let (_, _, values) = fresh.named_tensors();
    assert_eq!(ckpt.values, values);
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn zero_weight_checkpoint_predicts_all_zeros() {
    let cfg = tiny_config();
    let dir = scratch("zerow");
    cmd_synth(&cfg, &dir).unwrap();
    cmd_partition(&cfg, &dir.join("train"), false).unwrap();
    // a zeroed model: logits are exactly 0, threshold(>0) gives all zeros
    let profile = cfg.profile().unwrap();
    let mut rng = Rng::new(1);
    let mut model = StaticModel::init(&profile, cfg.channels, 6, &mut rng);
    for s in model.param_slices_mut() {
        for v in s {
            *v = 0.0;
        }
    }
    let (names, shapes, values) = model.named_tensors();
    let ckpt = Checkpoint {
        meta: CheckpointMeta {
            profile: profile.name.clone(),
            dataset: cfg.dataset.clone(),
            dynamic: "none".into(),
            resolution: cfg.resolution,
            channels: cfg.channels as u32,
            epoch: 0,
            mean_pixel: vec![0.0; cfg.channels],
            mean_boxes: Vec::new(),
        },
        names,
        shapes,
        values,
        velocities: None,
    };
    ckpt.save(&dir.join("zero.ckpt")).unwrap();
    cmd_infer(
        &cfg,
        &dir.join("zero.ckpt"),
        &dir.join("train"),
        &dir.join("pred.csv"),
    )
    .unwrap();
    let (_, rows) =
        aurk::labels::read_label_file(&std::fs::read_to_string(dir.join("pred.csv")).unwrap())
            .unwrap();
    for (id, label) in rows {
        assert!(label.bits().iter().all(|&b| b == 0), "frame {id}");
    }
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn checkpoint_profile_mismatch_is_a_version_error() {
    let cfg = tiny_config();
    let dir = scratch("mismatch");
    cmd_synth(&cfg, &dir).unwrap();
    cmd_partition(&cfg, &dir.join("train"), false).unwrap();
    cmd_train(&cfg, &dir.join("train"), &dir.join("m.ckpt"), None).unwrap();
    let mut wrong = cfg.clone();
    wrong.backbone = "standard".into();
    let err = cmd_infer(
        &wrong,
        &dir.join("m.ckpt"),
        &dir.join("train"),
        &dir.join("p.csv"),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Version(_)), "{err}");
    let mut wrong_dyn = cfg.clone();
    wrong_dyn.dynamic = DynamicMode::TwoStream;
    let err = cmd_infer(
        &wrong_dyn,
        &dir.join("m.ckpt"),
        &dir.join("train"),
        &dir.join("p.csv"),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Version(_)), "{err}");
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn training_without_partition_names_the_missing_step() {
    let cfg = tiny_config();
    let dir = scratch("nocache");
    cmd_synth(&cfg, &dir).unwrap();
    let err = cmd_train(&cfg, &dir.join("train"), &dir.join("x.ckpt"), None).unwrap_err();
    let msg = err.to_string();
    assert!(
        msg.contains("partition"),
        "error should point at the partition step: {msg}"
    );
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn subject_filter_restricts_evaluation() {
    let mut cfg = tiny_config();
    cfg.synth_frames = 40;
    cfg.synth_video_len = 20; // two subjects: v000, v001
    let dir = scratch("subjects");
    cmd_synth(&cfg, &dir).unwrap();
    let table = cfg.table().unwrap();
    let labels = dir.join("train/labels.csv");
    // evaluating labels against themselves: F1 = 1 on active AUs either way,
    // but the filtered run must only count v001 frames
    let report_all = cmd_eval(table, &labels, &labels, &dir.join("all"), "m", &[]).unwrap();
    let report_v1 = cmd_eval(
        table,
        &labels,
        &labels,
        &dir.join("v1"),
        "m",
        &["v001".to_string()],
    )
    .unwrap();
    let frames_all: u64 = report_all
        .counts
        .iter()
        .map(|(_, c)| c.tp + c.fp + c.fn_ + c.tn)
        .sum();
    let frames_v1: u64 = report_v1
        .counts
        .iter()
        .map(|(_, c)| c.tp + c.fp + c.fn_ + c.tn)
        .sum();
    assert_eq!(frames_all, 40 * 6);
    assert_eq!(frames_v1, 20 * 6);
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn mean_box_mode_shares_the_training_path() {
    let mut cfg = tiny_config();
    cfg.mean_box = true;
    let dir = scratch("meanbox");
    cmd_synth(&cfg, &dir).unwrap();
    cmd_partition(&cfg, &dir.join("train"), false).unwrap();
    cmd_train(&cfg, &dir.join("train"), &dir.join("mb.ckpt"), None).unwrap();
    let ckpt = Checkpoint::load(&dir.join("mb.ckpt")).unwrap();
    // the checkpoint carries one mean box per row slot
    assert_eq!(
        ckpt.meta.mean_boxes.len(),
        cfg.table().unwrap().row_count() * 4
    );
    // inference in mean-box mode needs no partition cache on the target data
    cmd_infer(
        &cfg,
        &dir.join("mb.ckpt"),
        &dir.join("test"),
        &dir.join("pred.csv"),
    )
    .unwrap();
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn profile_stride_matches_names() {
    assert_eq!(BackboneProfile::by_name("standard").unwrap().stride(), 16);
    assert_eq!(BackboneProfile::by_name("toy").unwrap().stride(), 4);
}
