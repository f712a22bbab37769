//! The `gen`, `train`, `render`, `eval` and `ablate` commands.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use spcgs_core::ablation::{run_preset, AblationSettings, Preset};
use spcgs_core::correspondence::{FileSegmenter, OracleSegmenter, Segmenter};
use spcgs_core::io::{
    load_checkpoint, load_dataset, save_checkpoint, save_dataset, write_labels, CameraRecord, Checkpoint,
};
use spcgs_core::metrics::EvalReport;
use spcgs_core::query::{render_query, QueryRender, DEFAULT_OVERLAY_ALPHA};
use spcgs_core::scenegen::{
    label_scene_from, make_dataset, make_teacher_scene, seed_points, Dataset, DatasetConfig, SeedConfig,
    TeacherConfig, TeacherScene,
};
use spcgs_core::trainer::{evaluate, run_pipeline, write_log, TrainConfig};
use spcgs_core::{Camera, Error, Result};

pub const GEN_FILE: &str = "gen.json";
pub const TEACHER_FILE: &str = "teacher.spcg";

/// Everything `gen` needs to rebuild a dataset directory.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub teacher: TeacherConfig,
    pub dataset: DatasetConfig,
    pub seeds: SeedConfig,
}

impl GenConfig {
    /// Uses `seed` for the teacher, the views and the seed points.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.teacher.seed = seed;
        self.dataset.seed = seed;
        self.seeds.seed = seed;
        self
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| io_error(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Json {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.display().to_string(),
        source: e,
    })?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Loads an optional JSON config, falling back to `T::default()`.
pub fn load_config<T: Default + for<'de> Deserialize<'de>>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), read_json)
}

fn image_size(data: &Dataset) -> [usize; 2] {
    data.train
        .first()
        .map_or([0, 0], |v| [v.color.width, v.color.height])
}

/// Background color a checkpoint was trained with (black if unrecorded).
pub fn checkpoint_background(ckpt: &Checkpoint) -> [f64; 3] {
    ckpt.config
        .as_ref()
        .and_then(|c| c.get("train").or(Some(c)))
        .and_then(|t| t.get("background"))
        .and_then(|b| serde_json::from_value(b.clone()).ok())
        .unwrap_or([0.0; 3])
}

/// Image size recorded in a checkpoint's config, if any.
pub fn checkpoint_image_size(ckpt: &Checkpoint) -> Option<[usize; 2]> {
    ckpt.config
        .as_ref()
        .and_then(|c| c.get("image_size"))
        .and_then(|s| serde_json::from_value(s.clone()).ok())
}

/// Generates a teacher scene, renders the dataset and writes it to `out`
/// together with the teacher checkpoint and the generating config.
pub fn gen(cfg: &GenConfig, out: &Path) -> Result<Value> {
    let teacher = make_teacher_scene(&cfg.teacher)?;
    let mut data = make_dataset(&teacher, &cfg.dataset)?;
    data.seeds = Some(seed_points(&teacher, &cfg.seeds)?);
    save_dataset(out, &data)?;
    let size = image_size(&data);
    let mut ckpt = teacher.checkpoint();
    ckpt.config = Some(json!({ "image_size": size }));
    save_checkpoint(&out.join(TEACHER_FILE), &ckpt)?;
    write_json(&out.join(GEN_FILE), cfg)?;
    Ok(json!({
        "dataset": out,
        "teacher_gaussians": teacher.scene.len(),
        "classes": teacher.class_names(),
        "train_views": data.train.len(),
        "augmented_views": data.augmented.len(),
        "test_views": data.test.len(),
        "seed_points": data.seeds.as_ref().map_or(0, |s| s.len()),
        "image_size": size,
    }))
}

/// Rebuilds the teacher scene of a generated dataset directory.
pub fn load_teacher(dataset: &Path) -> Result<TeacherScene> {
    let cfg: GenConfig = read_json(&dataset.join(GEN_FILE))?;
    make_teacher_scene(&cfg.teacher)
}

/// Mask source for training: exported masks if given, else the teacher's
/// labels rendered per view.
pub fn segmenter_for(dataset: &Path, masks: Option<&Path>) -> Result<Box<dyn Segmenter>> {
    if let Some(dir) = masks {
        return Ok(Box::new(FileSegmenter::new(dir)));
    }
    let teacher = load_checkpoint(&dataset.join(TEACHER_FILE))?;
    let (labels, bank) = match (&teacher.labels, &teacher.bank) {
        (Some(l), Some(b)) => (l, b),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "{} has no labels; pass a mask directory",
                dataset.join(TEACHER_FILE).display()
            )))
        }
    };
    Ok(Box::new(OracleSegmenter::new(label_scene_from(
        &teacher.scene,
        labels,
        bank.len(),
    ))))
}

pub struct TrainArgs<'a> {
    pub dataset: &'a Path,
    pub out: &'a Path,
    pub config: TrainConfig,
    pub log: Option<&'a Path>,
    pub masks: Option<&'a Path>,
}

pub fn train(args: &TrainArgs) -> Result<Value> {
    let data = load_dataset(args.dataset, false)?;
    let segmenter = if args.config.spc.enabled {
        Some(segmenter_for(args.dataset, args.masks)?)
    } else {
        None
    };
    let result = run_pipeline(&data, &args.config, segmenter.as_deref())?;
    let mut ckpt = result.checkpoint;
    ckpt.config = Some(json!({ "train": args.config, "image_size": image_size(&data) }));
    save_checkpoint(args.out, &ckpt)?;
    if let Some(path) = args.log {
        let file = File::create(path).map_err(|e| io_error(path, e))?;
        let mut w = BufWriter::new(file);
        write_log(&result.events, &mut w).map_err(|e| io_error(path, e))?;
        w.flush().map_err(|e| io_error(path, e))?;
    }
    Ok(json!({
        "checkpoint": args.out,
        "gaussians": ckpt.scene.len(),
        "layout_points": result.layout_points,
        "iterations": ckpt.iteration,
        "final_loss": result.losses.last(),
    }))
}

/// Camera of view `id` in a dataset directory.
pub fn dataset_camera(dataset: &Path, id: &str) -> Result<Camera> {
    let records: Vec<CameraRecord> = read_json(&dataset.join("cameras.json"))?;
    records
        .iter()
        .find(|r| r.id == id)
        .ok_or_else(|| Error::InvalidArgument(format!("no view `{id}` in {}", dataset.display())))?
        .camera()
}

/// PNG files written by `render`.
pub const COLOR_PNG: &str = "color.png";
pub const LABEL_PNG: &str = "labels.png";
pub const OVERLAY_PNG: &str = "overlay.png";
pub const LABEL_MAP: &str = "labels.u16";

pub fn render_to_dir(
    ckpt: &Checkpoint,
    cam: &Camera,
    query: Option<&str>,
    overlay_alpha: Option<f64>,
    out: &Path,
) -> Result<Value> {
    let r: QueryRender = render_query(
        ckpt,
        cam,
        query,
        overlay_alpha.unwrap_or(DEFAULT_OVERLAY_ALPHA),
        checkpoint_background(ckpt),
    )?;
    write_bytes(&out.join(COLOR_PNG), &r.color_png()?)?;
    write_bytes(&out.join(LABEL_PNG), &r.label_png()?)?;
    write_labels(&out.join(LABEL_MAP), r.width, r.height, &r.labels)?;
    let overlay = match r.overlay_png()? {
        Some(png) => {
            let path = out.join(OVERLAY_PNG);
            write_bytes(&path, &png)?;
            Some(path)
        }
        None => None,
    };
    Ok(json!({
        "color": out.join(COLOR_PNG),
        "labels": out.join(LABEL_PNG),
        "label_map": out.join(LABEL_MAP),
        "overlay": overlay,
        "query_class_index": r.query_class,
        "highlighted_pixels": r.query_mask().iter().filter(|&&m| m).count(),
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidArgument(format!("unknown split `{s}`; expected train or test"))),
        }
    }
}

pub fn eval(checkpoint: &Path, dataset: &Path, split: Split) -> Result<EvalReport> {
    let ckpt = load_checkpoint(checkpoint)?;
    let data = load_dataset(dataset, split == Split::Test)?;
    let views = match split {
        Split::Train => &data.train,
        Split::Test => &data.test,
    };
    if views.is_empty() {
        return Err(Error::InvalidArgument("no views to evaluate".into()));
    }
    evaluate(&ckpt, views, &data.bank, checkpoint_background(&ckpt))
}

/// Runs an ablation preset on a generated dataset. Each finished run is
/// reported to `on_run` as JSON.
pub fn ablate(
    dataset: &Path,
    preset: Preset,
    settings: &AblationSettings,
    mut on_run: impl FnMut(Value),
) -> Result<Value> {
    let teacher = load_teacher(dataset)?;
    let data = load_dataset(dataset, true)?;
    let segmenter = teacher.segmenter();
    let summary = run_preset(&teacher, &data, preset, settings, Some(&segmenter), |r| {
        on_run(serde_json::to_value(r).expect("run result serializes"))
    })?;
    serde_json::to_value(&summary).map_err(|e| Error::Json {
        path: "<ablation summary>".into(),
        source: e,
    })
}

/// Output path with `name` appended, used for default artifact names.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}
