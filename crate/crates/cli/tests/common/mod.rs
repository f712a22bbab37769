#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use spcgs::commands::{gen, train, GenConfig, TrainArgs, TEACHER_FILE};
use spcgs_core::scenegen::{DatasetConfig, RigConfig, SeedConfig, TeacherConfig};
use spcgs_core::trainer::TrainConfig;

pub struct Fixture {
    _dir: tempfile::TempDir,
    pub dataset: PathBuf,
    pub teacher: PathBuf,
    pub trained: PathBuf,
}

pub fn gen_config() -> GenConfig {
    GenConfig {
        teacher: TeacherConfig {
            gaussians: 1500,
            ..TeacherConfig::default()
        },
        dataset: DatasetConfig {
            train_views: 3,
            augment_per_view: 1,
            test_views: 2,
            rig: RigConfig {
                width: 32,
                height: 32,
                orbit_frames: 8,
                ..RigConfig::default()
            },
            ..DatasetConfig::default()
        },
        seeds: SeedConfig::dense(500),
    }
    .with_seed(3)
}

pub fn train_config() -> TrainConfig {
    TrainConfig {
        phase1_iters: 20,
        phase2_iters: 20,
        lambda_warmup: 10,
        sh_degree: 1,
        ..TrainConfig::desk()
    }
}

/// A generated dataset with its teacher and a briefly trained checkpoint,
/// shared by every test in the binary.
pub fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let dataset = dir.path().join("data");
        gen(&gen_config(), &dataset).unwrap();
        let trained = dir.path().join("trained.spcg");
        train(&TrainArgs {
            dataset: &dataset,
            out: &trained,
            config: train_config(),
            log: None,
            masks: None,
        })
        .unwrap();
        Fixture {
            teacher: dataset.join(TEACHER_FILE),
            dataset,
            trained,
            _dir: dir,
        }
    })
}

/// Decodes PNG bytes to 8-bit RGB.
pub fn decode_png(bytes: &[u8]) -> (usize, usize, Vec<u8>) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.png");
    std::fs::write(&path, bytes).unwrap();
    let img = spcgs_core::io::read_png(&path).unwrap();
    (img.width, img.height, img.to_rgb8())
}

pub fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}
