//! Dataset directory: `cameras.json`, `images/{id}.png`, `labels/{id}.u16`,
//! `embeddings.json`, `manifest.json` and optional `seeds.spcg`.

use std::path::Path;

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use super::checkpoint::{decode_layout, encode_layout};
use super::raster::{decode_labels, encode_labels};
use super::{read_file, write_file};
use crate::buffer::ImageBuf;
use crate::error::{Error, Result};
use crate::geom::Camera;
use crate::losses::TextBank;
use crate::scenegen::{AugmentedView, Dataset, DatasetConfig, Motion, View};

pub const MANIFEST_VERSION: u32 = 1;
const SEEDS_FILE: &str = "seeds.spcg";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub id: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// World-to-camera transform, row-major.
    pub w2c: [f64; 16],
}

impl CameraRecord {
    pub fn new(id: impl Into<String>, cam: &Camera) -> Self {
        let mut w2c = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                w2c[r * 4 + c] = cam.world_to_camera[(r, c)];
            }
        }
        Self {
            id: id.into(),
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            width: cam.width,
            height: cam.height,
            w2c,
        }
    }

    pub fn camera(&self) -> Result<Camera> {
        Camera::new(
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            self.width,
            self.height,
            Matrix4::from_row_slice(&self.w2c),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedRecord {
    pub id: String,
    pub parent: usize,
    pub motion: Motion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub corruption: f64,
    pub train: Vec<String>,
    pub augmented: Vec<AugmentedRecord>,
    pub test: Vec<String>,
    pub has_seeds: bool,
    pub config: DatasetConfig,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingsFile {
    names: Vec<String>,
    embeddings: Vec<Vec<f32>>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_slice(&read_file(path)?).map_err(|e| Error::json(path, e))
}

pub fn write_cameras(path: &Path, records: &[CameraRecord]) -> Result<()> {
    write_json(path, &records)
}

pub fn read_cameras(path: &Path) -> Result<Vec<CameraRecord>> {
    read_json(path)
}

/// Encodes an image in `[0, 1]` as 8-bit RGB PNG bytes.
pub fn encode_png(img: &ImageBuf) -> Result<Vec<u8>> {
    if img.channels != 3 {
        return Err(Error::InvalidArgument(format!(
            "PNG export needs 3 channels, got {}",
            img.channels
        )));
    }
    encode_rgb8_png(img.width, img.height, &img.to_rgb8())
}

pub fn encode_rgb8_png(width: usize, height: usize, rgb: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let encoder = image::codecs::png::PngEncoder::new(&mut out);
    image::ImageEncoder::write_image(
        encoder,
        rgb,
        width as u32,
        height as u32,
        image::ExtendedColorType::Rgb8,
    )
    .map_err(|e| Error::Image {
        path: "<memory>".into(),
        message: e.to_string(),
    })?;
    Ok(out)
}

pub fn write_png(path: &Path, img: &ImageBuf) -> Result<()> {
    write_file(path, &encode_png(img)?)
}

pub fn read_png(path: &Path) -> Result<ImageBuf> {
    let bytes = read_file(path)?;
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png).map_err(|e| {
        Error::Image {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    })?;
    let rgb = img.to_rgb8();
    Ok(ImageBuf::from_rgb8(rgb.width() as usize, rgb.height() as usize, rgb.as_raw()))
}

fn write_view(dir: &Path, view: &View) -> Result<()> {
    write_png(&dir.join("images").join(format!("{}.png", view.id)), &view.color)?;
    let bytes = encode_labels(view.color.width, view.color.height, &view.labels)?;
    write_file(&dir.join("labels").join(format!("{}.u16", view.id)), &bytes)
}

fn read_view(dir: &Path, id: &str, cameras: &[CameraRecord]) -> Result<View> {
    let record = cameras
        .iter()
        .find(|r| r.id == id)
        .ok_or_else(|| Error::InvalidArgument(format!("view `{id}` missing from cameras.json")))?;
    let camera = record.camera()?;
    let color = read_png(&dir.join("images").join(format!("{id}.png")))?;
    let label_path = dir.join("labels").join(format!("{id}.u16"));
    let (w, h, labels) = decode_labels(&read_file(&label_path)?)?;
    if (w, h) != (color.width, color.height) || (w, h) != (camera.width as usize, camera.height as usize) {
        return Err(Error::InvalidArgument(format!(
            "view `{id}`: image, label map and camera sizes disagree"
        )));
    }
    Ok(View {
        id: id.to_string(),
        camera,
        color,
        labels,
    })
}

pub fn save_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    let all = data
        .train
        .iter()
        .chain(data.augmented.iter().map(|a| &a.view))
        .chain(&data.test);
    let records: Vec<CameraRecord> = all.clone().map(|v| CameraRecord::new(&v.id, &v.camera)).collect();
    write_cameras(&dir.join("cameras.json"), &records)?;
    for v in all {
        write_view(dir, v)?;
    }
    let embeddings = EmbeddingsFile {
        names: data.bank.names.clone(),
        embeddings: (0..data.bank.len()).map(|m| data.bank.row(m).to_vec()).collect(),
    };
    write_json(&dir.join("embeddings.json"), &embeddings)?;
    if let Some(seeds) = &data.seeds {
        write_file(&dir.join(SEEDS_FILE), &encode_layout(seeds)?)?;
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        seed: data.config.seed,
        corruption: data.config.corruption,
        train: data.train.iter().map(|v| v.id.clone()).collect(),
        augmented: data
            .augmented
            .iter()
            .map(|a| AugmentedRecord {
                id: a.view.id.clone(),
                parent: a.parent,
                motion: a.motion,
            })
            .collect(),
        test: data.test.iter().map(|v| v.id.clone()).collect(),
        has_seeds: data.seeds.is_some(),
        config: data.config,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

/// Loads a dataset directory. With `include_test = false` held-out views
/// are left unread and the returned `test` list is empty.
pub fn load_dataset(dir: &Path, include_test: bool) -> Result<Dataset> {
    let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::InvalidArgument(format!(
            "unsupported manifest version {}",
            manifest.version
        )));
    }
    let cameras = read_cameras(&dir.join("cameras.json"))?;
    let emb: EmbeddingsFile = read_json(&dir.join("embeddings.json"))?;
    let dim = emb.embeddings.first().map_or(0, Vec::len);
    if emb.embeddings.iter().any(|r| r.len() != dim) || emb.embeddings.len() != emb.names.len() {
        return Err(Error::InvalidArgument("embeddings.json rows are ragged".into()));
    }
    let bank = TextBank::new(emb.names, dim, emb.embeddings.concat())?;
    let train = manifest
        .train
        .iter()
        .map(|id| read_view(dir, id, &cameras))
        .collect::<Result<Vec<_>>>()?;
    let mut augmented = Vec::with_capacity(manifest.augmented.len());
    for rec in &manifest.augmented {
        if rec.parent >= train.len() {
            return Err(Error::InvalidArgument(format!(
                "augmented view `{}` names missing parent {}",
                rec.id, rec.parent
            )));
        }
        augmented.push(AugmentedView {
            view: read_view(dir, &rec.id, &cameras)?,
            parent: rec.parent,
            motion: rec.motion,
        });
    }
    let test = if include_test {
        manifest
            .test
            .iter()
            .map(|id| read_view(dir, id, &cameras))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let seeds = if manifest.has_seeds {
        Some(decode_layout(&read_file(&dir.join(SEEDS_FILE))?)?)
    } else {
        None
    };
    Ok(Dataset {
        train,
        augmented,
        test,
        bank,
        seeds,
        config: manifest.config,
    })
}
