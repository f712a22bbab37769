//! Preset grids of paired training runs that toggle one component each.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::correspondence::Segmenter;
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::scenegen::{seed_points, Dataset, SeedConfig, SeedMode, TeacherScene};
use crate::trainer::{evaluate, run_pipeline, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Dense (layout-grade) seed points vs sparse ones.
    Seed,
    /// Semantic-prompt consistency on vs off.
    Spc,
    /// Outlier removal on vs off, with uniform-random outlier seeds injected.
    Ogr,
    /// Color loss on augmented views off vs on.
    AugColor,
    /// Mask erosion kernel sizes.
    Erosion,
}

impl Preset {
    pub const ALL: [Preset; 5] = [Preset::Seed, Preset::Spc, Preset::Ogr, Preset::AugColor, Preset::Erosion];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Seed => "seed",
            Preset::Spc => "spc",
            Preset::Ogr => "ogr",
            Preset::AugColor => "aug_color",
            Preset::Erosion => "erosion",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s || p.name().replace('_', "-") == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown ablation preset `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationSettings {
    pub train: TrainConfig,
    pub dense_count: usize,
    pub sparse_count: usize,
    /// Uniform-random outliers added in the OGR preset, as a fraction of the seed count.
    pub outlier_fraction: f64,
    /// OGR radius used by the OGR preset.
    pub ogr_radius: f64,
    pub erosion_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for AblationSettings {
    fn default() -> Self {
        Self {
            train: TrainConfig::desk(),
            dense_count: 4000,
            sparse_count: 300,
            outlier_fraction: 0.1,
            ogr_radius: 0.25,
            erosion_sizes: vec![1, 3, 5, 7, 9],
            seeds: vec![0, 1, 2],
        }
    }
}

/// One configuration of a preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub name: String,
    pub seed_mode: SeedMode,
    pub seed_count: usize,
    pub outlier_fraction: f64,
    pub train: TrainConfig,
}

/// The arms of `preset`, reference arm first.
pub fn arms(preset: Preset, s: &AblationSettings) -> Vec<Arm> {
    let base = Arm {
        name: String::new(),
        seed_mode: SeedMode::Dense,
        seed_count: s.dense_count,
        outlier_fraction: 0.0,
        train: s.train,
    };
    let arm = |name: &str, f: &dyn Fn(&mut Arm)| {
        let mut a = base.clone();
        a.name = name.to_string();
        f(&mut a);
        a
    };
    match preset {
        Preset::Seed => vec![
            arm("dense", &|_| {}),
            arm("sparse", &|a| {
                a.seed_mode = SeedMode::Sparse;
                a.seed_count = s.sparse_count;
            }),
        ],
        Preset::Spc => vec![
            arm("spc_on", &|a| a.train.spc.enabled = true),
            arm("spc_off", &|a| a.train.spc.enabled = false),
        ],
        Preset::Ogr => {
            let outliers = |a: &mut Arm, on: bool| {
                a.outlier_fraction = s.outlier_fraction;
                a.train.ogr_enabled = on;
                a.train.ogr.radius = s.ogr_radius;
            };
            vec![arm("ogr_on", &|a| outliers(a, true)), arm("ogr_off", &|a| outliers(a, false))]
        }
        Preset::AugColor => vec![
            arm("aug_color_off", &|a| a.train.augmented_color = false),
            arm("aug_color_on", &|a| a.train.augmented_color = true),
        ],
        Preset::Erosion => s
            .erosion_sizes
            .iter()
            .map(|&k| arm(&format!("erosion_{k}"), &|a| a.train.spc.erosion = k))
            .collect(),
    }
}

/// Seed points of `arm` for run `seed`, including any injected outliers.
pub fn arm_seeds(teacher: &TeacherScene, arm: &Arm, seed: u64) -> Result<crate::sgi::LayoutPoints> {
    let cfg = match arm.seed_mode {
        SeedMode::Sparse => SeedConfig::sparse(arm.seed_count),
        SeedMode::Dense => SeedConfig::dense(arm.seed_count),
        SeedMode::Random => SeedConfig::random(arm.seed_count),
    };
    let mut points = seed_points(teacher, &SeedConfig { seed, ..cfg })?;
    let extra = (arm.seed_count as f64 * arm.outlier_fraction).round() as usize;
    if extra > 0 {
        let outliers = seed_points(
            teacher,
            &SeedConfig {
                seed: seed ^ 0x0071_1e45,
                ..SeedConfig::random(extra)
            },
        )?;
        points.extend(&outliers)?;
    }
    Ok(points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub preset: Preset,
    pub arm: String,
    pub seed: u64,
    pub seed_points: usize,
    pub layout_points: usize,
    pub gaussians: usize,
    pub report: EvalReport,
}

/// Trains and evaluates one arm on the held-out views of `dataset`.
pub fn run_arm(
    teacher: &TeacherScene,
    dataset: &Dataset,
    preset: Preset,
    arm: &Arm,
    seed: u64,
    segmenter: Option<&dyn Segmenter>,
) -> Result<RunResult> {
    let seeds = arm_seeds(teacher, arm, seed)?;
    let seed_count = seeds.len();
    let data = Dataset {
        seeds: Some(seeds),
        ..dataset.clone()
    };
    let cfg = TrainConfig { seed, ..arm.train };
    let result = run_pipeline(&data, &cfg, segmenter)?;
    let report = evaluate(&result.checkpoint, &data.test, &data.bank, cfg.background)?;
    Ok(RunResult {
        preset,
        arm: arm.name.clone(),
        seed,
        seed_points: seed_count,
        layout_points: result.layout_points,
        gaussians: result.checkpoint.scene.len(),
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: String,
    pub mean_psnr: f64,
    pub mean_miou: f64,
    pub runs: Vec<RunResult>,
}

impl ArmSummary {
    pub fn new(arm: String, runs: Vec<RunResult>) -> Self {
        let n = runs.len().max(1) as f64;
        Self {
            arm,
            mean_psnr: runs.iter().map(|r| r.report.psnr).sum::<f64>() / n,
            mean_miou: runs.iter().map(|r| r.report.miou).sum::<f64>() / n,
            runs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetSummary {
    pub preset: Preset,
    pub arms: Vec<ArmSummary>,
}

/// Runs every arm of `preset` over every seed. `on_run` sees each result as
/// it completes.
pub fn run_preset(
    teacher: &TeacherScene,
    dataset: &Dataset,
    preset: Preset,
    settings: &AblationSettings,
    segmenter: Option<&dyn Segmenter>,
    mut on_run: impl FnMut(&RunResult),
) -> Result<PresetSummary> {
    let mut out = Vec::new();
    for arm in arms(preset, settings) {
        let mut runs = Vec::with_capacity(settings.seeds.len());
        for &seed in &settings.seeds {
            let r = run_arm(teacher, dataset, preset, &arm, seed, segmenter)?;
            on_run(&r);
            runs.push(r);
        }
        out.push(ArmSummary::new(arm.name, runs));
    }
    Ok(PresetSummary { preset, arms: out })
}
