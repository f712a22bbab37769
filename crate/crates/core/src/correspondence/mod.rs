//! Pseudo-view sampling, region correspondence by stochastic point prompts,
//! and collection of max-weight Gaussians under a mask.

mod archive;
mod mask;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix4, Rotation3, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub use archive::{decode_masks, encode_masks, MASK_ARCHIVE_MAGIC};
pub use mask::{component_at, connected_components, erode_mask, Mask};

use crate::error::{Error, Result};
use crate::geom::{Camera, GaussianSet};
use crate::losses::IGNORE_LABEL;
use crate::raster::{render, RenderOutput, NONE_INDEX};

/// Pseudo views per training view.
pub const DEFAULT_PSEUDO_VIEWS: usize = 2;
/// Center noise as a fraction of the camera-pair baseline.
pub const DEFAULT_NOISE_SCALE: f64 = 0.1;
/// Accumulated alpha below which the oracle treats a pixel as unlabeled.
pub const ORACLE_ALPHA_CUTOFF: f64 = 0.5;

/// A sampled camera plus where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoCamera {
    pub camera: Camera,
    /// Anchor view and its nearest training view.
    pub pair: [usize; 2],
    /// Center offset added to the interpolated center.
    pub noise: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoViewConfig {
    pub count: usize,
    pub noise_scale: f64,
    /// Interpolation parameter between the pair (0.5 = midpoint).
    pub t: f64,
}

impl Default for PseudoViewConfig {
    fn default() -> Self {
        Self {
            count: DEFAULT_PSEUDO_VIEWS,
            noise_scale: DEFAULT_NOISE_SCALE,
            t: 0.5,
        }
    }
}

fn with_pose(intrinsics: &Camera, c2w: &Rotation3<f64>, center: &Vector3<f64>) -> Result<Camera> {
    let r = c2w.matrix().transpose();
    let t = -(r * center);
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
    Camera::new(
        intrinsics.fx,
        intrinsics.fy,
        intrinsics.cx,
        intrinsics.cy,
        intrinsics.width,
        intrinsics.height,
        m,
    )
}

/// Index of the training camera closest to `anchor` by center distance
/// (lowest index on ties).
pub fn nearest_camera(cams: &[Camera], anchor: usize) -> Option<usize> {
    let c = cams[anchor].center();
    let mut best: Option<(usize, f64)> = None;
    for (i, cam) in cams.iter().enumerate() {
        if i == anchor {
            continue;
        }
        let d = (cam.center() - c).norm();
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

/// Cameras between `anchor` and its nearest training view, jittered by
/// isotropic Gaussian noise proportional to the pair baseline.
pub fn sample_pseudo_views(
    train_cams: &[Camera],
    anchor: usize,
    cfg: &PseudoViewConfig,
    rng: &mut impl Rng,
) -> Result<Vec<PseudoCamera>> {
    if train_cams.len() < 2 {
        return Err(Error::NotEnoughCameras(train_cams.len()));
    }
    if anchor >= train_cams.len() {
        return Err(Error::InvalidArgument(format!(
            "anchor view {anchor} out of range for {} cameras",
            train_cams.len()
        )));
    }
    let other = nearest_camera(train_cams, anchor).unwrap();
    let (a, b) = (&train_cams[anchor], &train_cams[other]);
    let (ca, cb) = (a.center(), b.center());
    let baseline = (cb - ca).norm();
    let center = ca + (cb - ca) * cfg.t;
    let qa = UnitQuaternion::from_matrix(&a.camera_to_world_rotation());
    let qb = UnitQuaternion::from_matrix(&b.camera_to_world_rotation());
    let rot = qa
        .try_slerp(&qb, cfg.t, 1e-9)
        .unwrap_or(if cfg.t < 0.5 { qa } else { qb })
        .to_rotation_matrix();
    let sigma = cfg.noise_scale * baseline;
    (0..cfg.count)
        .map(|_| {
            let noise: [f64; 3] = std::array::from_fn(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * sigma
            });
            let c = center + Vector3::from(noise);
            Ok(PseudoCamera {
                camera: with_pose(a, &rot, &c)?,
                pair: [anchor, other],
                noise,
            })
        })
        .collect()
}

/// A view handed to a [`Segmenter`]: a stable key plus its camera.
#[derive(Debug, Clone, Copy)]
pub struct SegmentView<'a> {
    pub key: &'a str,
    pub camera: &'a Camera,
}

/// Source of corresponding region masks, typically a video segmenter.
pub trait Segmenter: Send + Sync {
    /// One mask per view for the region under `prompt` (pixel in `views[0]`).
    fn point_prompt(&self, views: &[SegmentView], prompt: [usize; 2]) -> Result<Vec<Mask>>;
    /// Masks of distinct regions of a single view.
    fn auto_masks(&self, view: &SegmentView) -> Result<Vec<Mask>>;
}

/// Per-pixel teacher label render: argmax class where alpha ≥ the cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRender {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u16>,
    pub alpha: Vec<f64>,
}

impl LabelRender {
    #[inline]
    pub fn label(&self, p: usize) -> Option<u16> {
        (self.labels[p] != IGNORE_LABEL).then_some(self.labels[p])
    }
}

/// Renders a scene whose features are one-hot class indicators and reduces
/// the feature channel to an argmax label map.
pub fn render_labels(cam: &Camera, label_scene: &GaussianSet) -> LabelRender {
    let out = render(cam, label_scene, [0.0; 3]);
    labels_from_output(&out)
}

pub fn labels_from_output(out: &RenderOutput) -> LabelRender {
    let n = out.num_pixels();
    let labels = (0..n)
        .map(|p| {
            if out.alpha.data[p] < ORACLE_ALPHA_CUTOFF {
                return IGNORE_LABEL;
            }
            let f = out.feature.at(p);
            let mut best = 0;
            for (i, &v) in f.iter().enumerate() {
                if v > f[best] {
                    best = i;
                }
            }
            best as u16
        })
        .collect();
    LabelRender {
        width: out.width,
        height: out.height,
        labels,
        alpha: out.alpha.data.clone(),
    }
}

/// Segmenter backed by a labeled teacher scene.
///
/// The prompted view receives the connected component under the prompt; every
/// other view receives all visible pixels of the same teacher class.
#[derive(Debug, Clone)]
pub struct OracleSegmenter {
    label_scene: GaussianSet,
}

impl OracleSegmenter {
    /// `label_scene` carries one-hot class features.
    pub fn new(label_scene: GaussianSet) -> Self {
        Self { label_scene }
    }

    pub fn label_render(&self, cam: &Camera) -> LabelRender {
        render_labels(cam, &self.label_scene)
    }
}

impl Segmenter for OracleSegmenter {
    fn point_prompt(&self, views: &[SegmentView], prompt: [usize; 2]) -> Result<Vec<Mask>> {
        let Some(first) = views.first() else {
            return Ok(Vec::new());
        };
        let lr0 = self.label_render(first.camera);
        let (w, h) = (lr0.width, lr0.height);
        if prompt[0] >= w || prompt[1] >= h {
            return Err(Error::InvalidArgument(format!(
                "prompt {prompt:?} outside {w}x{h} view"
            )));
        }
        let seed = prompt[1] * w + prompt[0];
        let mut out = Vec::with_capacity(views.len());
        let target = lr0.label(seed);
        out.push(component_at(w, h, seed, |p| lr0.label(p)));
        for v in &views[1..] {
            let (vw, vh) = (v.camera.width as usize, v.camera.height as usize);
            match target {
                None => out.push(Mask::empty(vw, vh)),
                Some(l) => {
                    let lr = self.label_render(v.camera);
                    out.push(Mask {
                        width: vw,
                        height: vh,
                        data: lr.labels.iter().map(|&x| x == l).collect(),
                    });
                }
            }
        }
        Ok(out)
    }

    fn auto_masks(&self, view: &SegmentView) -> Result<Vec<Mask>> {
        let lr = self.label_render(view.camera);
        Ok(connected_components(lr.width, lr.height, |p| lr.label(p)))
    }
}

/// Segmenter reading precomputed run-length-encoded masks.
///
/// Layout: `prompts/{source_key}/{x}_{y}/{view_key}.spcm` holds the mask of
/// each view for one prompt, `auto/{view_key}.spcm` the automatic masks.
/// Missing files mean empty results.
#[derive(Debug, Clone)]
pub struct FileSegmenter {
    root: PathBuf,
}

impl FileSegmenter {
    pub fn new(root: impl AsRef<Path>) -> Self {
        Self {
            root: root.as_ref().to_path_buf(),
        }
    }

    pub fn prompt_path(&self, source_key: &str, prompt: [usize; 2], view_key: &str) -> PathBuf {
        self.root
            .join("prompts")
            .join(source_key)
            .join(format!("{}_{}", prompt[0], prompt[1]))
            .join(format!("{view_key}.spcm"))
    }

    pub fn auto_path(&self, view_key: &str) -> PathBuf {
        self.root.join("auto").join(format!("{view_key}.spcm"))
    }

    fn read(path: &Path, cam: &Camera) -> Result<Option<Vec<Mask>>> {
        let bytes = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(path, e)),
        };
        let masks = decode_masks(&bytes)?;
        for m in &masks {
            m.check_shape(cam.width as usize, cam.height as usize)?;
        }
        Ok(Some(masks))
    }
}

impl Segmenter for FileSegmenter {
    fn point_prompt(&self, views: &[SegmentView], prompt: [usize; 2]) -> Result<Vec<Mask>> {
        let Some(first) = views.first() else {
            return Ok(Vec::new());
        };
        views
            .iter()
            .map(|v| {
                let path = self.prompt_path(first.key, prompt, v.key);
                let masks = Self::read(&path, v.camera)?;
                Ok(masks
                    .and_then(|m| m.into_iter().next())
                    .unwrap_or_else(|| {
                        Mask::empty(v.camera.width as usize, v.camera.height as usize)
                    }))
            })
            .collect()
    }

    fn auto_masks(&self, view: &SegmentView) -> Result<Vec<Mask>> {
        Ok(Self::read(&self.auto_path(view.key), view.camera)?.unwrap_or_default())
    }
}

/// Corresponding masks in a training view and its pseudo views.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMaskSet {
    pub train_mask: Mask,
    pub pseudo_masks: Vec<Mask>,
    pub prompt: [usize; 2],
    pub source_view: usize,
}

impl RegionMaskSet {
    /// True when any mask is empty, which skips the consistency terms.
    pub fn any_empty(&self) -> bool {
        self.train_mask.is_empty() || self.pseudo_masks.iter().any(Mask::is_empty)
    }

    pub fn eroded(&self, k: usize) -> Result<RegionMaskSet> {
        Ok(RegionMaskSet {
            train_mask: self.train_mask.erode(k)?,
            pseudo_masks: self
                .pseudo_masks
                .iter()
                .map(|m| m.erode(k))
                .collect::<Result<_>>()?,
            prompt: self.prompt,
            source_view: self.source_view,
        })
    }
}

/// Pixel drawn uniformly over a `width × height` image.
pub fn draw_prompt(width: usize, height: usize, rng: &mut impl Rng) -> [usize; 2] {
    [rng.random_range(0..width), rng.random_range(0..height)]
}

/// One stochastic prompt: draw a pixel in the training view and ask the
/// segmenter for the corresponding region in every pseudo view.
pub fn isp_step(
    train_view: usize,
    train_cam: &Camera,
    pseudo_cams: &[PseudoCamera],
    segmenter: &dyn Segmenter,
    rng: &mut impl Rng,
) -> Result<RegionMaskSet> {
    let prompt = draw_prompt(train_cam.width as usize, train_cam.height as usize, rng);
    let train_key = format!("train_{train_view}");
    let pseudo_keys: Vec<String> = (0..pseudo_cams.len())
        .map(|i| format!("pseudo_{train_view}_{i}"))
        .collect();
    let mut views = vec![SegmentView {
        key: &train_key,
        camera: train_cam,
    }];
    for (k, p) in pseudo_keys.iter().zip(pseudo_cams) {
        views.push(SegmentView {
            key: k,
            camera: &p.camera,
        });
    }
    let mut masks = segmenter.point_prompt(&views, prompt)?;
    if masks.len() != views.len() {
        return Err(Error::ShapeMismatch {
            context: "segmenter mask count",
            expected: views.len(),
            actual: masks.len(),
        });
    }
    let train_mask = masks.remove(0);
    Ok(RegionMaskSet {
        train_mask,
        pseudo_masks: masks,
        prompt,
        source_view: train_view,
    })
}

/// Distinct max-weight Gaussian indices over the set pixels of `mask`, ascending.
pub fn collect_max_weight(out: &RenderOutput, mask: &Mask) -> Result<Vec<u32>> {
    mask.check_shape(out.width, out.height)?;
    let set: BTreeSet<u32> = mask
        .iter_set()
        .map(|p| out.max_weight_index[p])
        .filter(|&i| i != NONE_INDEX)
        .collect();
    Ok(set.into_iter().collect())
}
