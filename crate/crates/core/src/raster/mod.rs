//! Tile-based front-to-back α-blending of color, semantic features, depth and
//! the per-pixel max-weight Gaussian.
//!
//! Per pixel, Gaussians are visited in ascending camera depth (ties by index):
//! `α_i = min(0.99, o_i·exp(−½ dᵀ Σ₂⁻¹ d))`, contributions with `α_i < 1/255`
//! are skipped, and blending stops before a contribution would push the
//! transmittance below `1e-4`. The feature channel reuses the color weights.

mod backward;

pub use backward::{render_backward, RenderGrads};

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::buffer::ImageBuf;
use crate::geom::{project_gaussian, Camera, GaussianSet};
use crate::sh;

pub const TILE_SIZE: usize = 16;
/// `max_weight_index` value of pixels without any contribution.
pub const NONE_INDEX: u32 = u32::MAX;
pub const ALPHA_MAX: f64 = 0.99;
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
pub const T_MIN: f64 = 1e-4;

/// Everything the renderer produces for one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    /// Blended color including the background term; unclamped.
    pub color: ImageBuf,
    pub feature: ImageBuf,
    /// Accumulated opacity `Σ T_i α_i`.
    pub alpha: ImageBuf,
    /// Expected depth `Σ T_i α_i z_i / max(alpha, 1e-8)`.
    pub depth: ImageBuf,
    pub max_weight_index: Vec<u32>,
    pub max_weight_value: Vec<f64>,
    /// Residual transmittance after the last contribution.
    pub final_transmittance: Vec<f64>,
    pub background: [f64; 3],
}

impl RenderOutput {
    fn empty(width: usize, height: usize, feature_dim: usize, background: [f64; 3]) -> Self {
        let mut color = ImageBuf::zeros(width, height, 3);
        for px in color.data.chunks_exact_mut(3) {
            px.copy_from_slice(&background);
        }
        Self {
            width,
            height,
            color,
            feature: ImageBuf::zeros(width, height, feature_dim),
            alpha: ImageBuf::zeros(width, height, 1),
            depth: ImageBuf::zeros(width, height, 1),
            max_weight_index: vec![NONE_INDEX; width * height],
            max_weight_value: vec![0.0; width * height],
            final_transmittance: vec![1.0; width * height],
            background,
        }
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }
}

/// A Gaussian after projection, ready for compositing.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Splat {
    pub mean: [f64; 2],
    /// Inverse 2D covariance as `(a, b, c)` for `[[a, b], [b, c]]`.
    pub conic: [f64; 3],
    pub opacity: f64,
    pub color: [f64; 3],
    pub depth: f64,
    /// Inclusive pixel bounds `[x0, y0, x1, y1]` outside which `α < 1/255`.
    pub bbox: [i64; 4],
    pub view_dir: [f64; 3],
}

/// Projects Gaussian `i`. `None` when it is outside the frustum or degenerate.
/// The returned bbox may be empty when the Gaussian can never reach the α cutoff.
pub(crate) fn project_splat(
    cam: &Camera,
    scene: &GaussianSet,
    i: usize,
    center: &Vector3<f64>,
) -> Option<Splat> {
    let cov3 = scene.covariance(i).ok()?;
    let pos = scene.position(i);
    let proj = project_gaussian(cam, &pos, &cov3);
    if !proj.in_frustum {
        return None;
    }
    let c = proj.cov2d;
    let det = c[(0, 0)] * c[(1, 1)] - c[(0, 1)] * c[(0, 1)];
    if !(det > 0.0) {
        return None;
    }
    let conic = [c[(1, 1)] / det, -c[(0, 1)] / det, c[(0, 0)] / det];
    let opacity = scene.opacity(i);
    // outside |d|² ≤ 2 λ_max ln(255 o) every α is below the 1/255 cutoff
    let reach = (255.0 * opacity).ln();
    let bbox = if reach > 0.0 {
        let mid = 0.5 * (c[(0, 0)] + c[(1, 1)]);
        let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
        let radius = (2.0 * lambda_max * reach).sqrt() * (1.0 + 1e-6) + 1e-6;
        let m = proj.mean2d;
        [
            ((m.x - radius).ceil() as i64).max(0),
            ((m.y - radius).ceil() as i64).max(0),
            ((m.x + radius).floor() as i64).min(cam.width as i64 - 1),
            ((m.y + radius).floor() as i64).min(cam.height as i64 - 1),
        ]
    } else {
        [0, 0, -1, -1]
    };
    let dir = view_direction(&pos, center);
    Some(Splat {
        mean: [proj.mean2d.x, proj.mean2d.y],
        conic,
        opacity,
        color: sh::eval_sh(scene.sh_degree, scene.sh(i), &dir),
        depth: proj.depth,
        bbox,
        view_dir: dir,
    })
}

/// Projects every Gaussian; `None` for Gaussians that cannot contribute.
pub(crate) fn preprocess(cam: &Camera, scene: &GaussianSet) -> Vec<Option<Splat>> {
    let center = cam.center();
    (0..scene.len())
        .into_par_iter()
        .map(|i| {
            project_splat(cam, scene, i, &center)
                .filter(|s| s.bbox[0] <= s.bbox[2] && s.bbox[1] <= s.bbox[3])
        })
        .collect()
}

#[inline]
pub(crate) fn view_direction(pos: &Vector3<f64>, center: &Vector3<f64>) -> [f64; 3] {
    let v = pos - center;
    let n = v.norm();
    if n > 0.0 {
        [v.x / n, v.y / n, v.z / n]
    } else {
        [0.0, 0.0, 1.0]
    }
}

/// One accepted contribution along a pixel ray.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Contribution {
    pub gaussian: u32,
    /// Position of the Gaussian in the depth-sorted list.
    pub slot: u32,
    pub alpha: f64,
    /// Transmittance in front of this Gaussian.
    pub transmittance: f64,
    pub gauss: f64,
    pub clamped: bool,
    pub dx: f64,
    pub dy: f64,
}

/// Walks the depth-sorted `list` for pixel `(px, py)`, recording contributions.
/// Returns the final transmittance.
#[inline]
pub(crate) fn walk_pixel(
    px: f64,
    py: f64,
    list: &[u32],
    splats: &[Option<Splat>],
    out: &mut Vec<Contribution>,
) -> f64 {
    out.clear();
    let mut t = 1.0;
    for (slot, &g) in list.iter().enumerate() {
        let s = match &splats[g as usize] {
            Some(s) => s,
            None => continue,
        };
        let dx = px - s.mean[0];
        let dy = py - s.mean[1];
        let power = -0.5 * (s.conic[0] * dx * dx + s.conic[2] * dy * dy) - s.conic[1] * dx * dy;
        if power > 0.0 {
            continue;
        }
        let gauss = power.exp();
        let raw = s.opacity * gauss;
        let alpha = raw.min(ALPHA_MAX);
        if alpha < ALPHA_MIN {
            continue;
        }
        let next_t = t * (1.0 - alpha);
        if next_t < T_MIN {
            break;
        }
        out.push(Contribution {
            gaussian: g,
            slot: slot as u32,
            alpha,
            transmittance: t,
            gauss,
            clamped: raw > ALPHA_MAX,
            dx,
            dy,
        });
        t = next_t;
    }
    t
}

struct PixelValue {
    color: [f64; 3],
    alpha: f64,
    depth: f64,
    max_index: u32,
    max_value: f64,
    final_t: f64,
}

#[inline]
fn blend_pixel(
    contribs: &[Contribution],
    final_t: f64,
    splats: &[Option<Splat>],
    scene: &GaussianSet,
    background: &[f64; 3],
    feature_out: &mut [f64],
) -> PixelValue {
    let mut color = [0.0; 3];
    let mut depth = 0.0;
    let mut max_index = NONE_INDEX;
    let mut max_value = 0.0;
    feature_out.iter_mut().for_each(|v| *v = 0.0);
    for c in contribs {
        let s = splats[c.gaussian as usize].as_ref().unwrap();
        let w = c.transmittance * c.alpha;
        for k in 0..3 {
            color[k] += w * s.color[k];
        }
        for (fo, &f) in feature_out.iter_mut().zip(scene.feature(c.gaussian as usize)) {
            *fo += w * f as f64;
        }
        depth += w * s.depth;
        if w > max_value {
            max_value = w;
            max_index = c.gaussian;
        }
    }
    let alpha = 1.0 - final_t;
    for k in 0..3 {
        color[k] += final_t * background[k];
    }
    PixelValue {
        color,
        alpha,
        depth: depth / alpha.max(1e-8),
        max_index,
        max_value,
        final_t,
    }
}

fn write_pixel(out: &mut RenderOutput, p: usize, v: &PixelValue, feature: &[f64]) {
    out.color.at_mut(p).copy_from_slice(&v.color);
    out.alpha.data[p] = v.alpha;
    out.depth.data[p] = v.depth;
    out.max_weight_index[p] = v.max_index;
    out.max_weight_value[p] = v.max_value;
    out.final_transmittance[p] = v.final_t;
    out.feature.at_mut(p).copy_from_slice(feature);
}

/// Depth-sorted splat lists, one per 16×16 tile.
pub(crate) struct TileBins {
    pub tiles_x: usize,
    pub lists: Vec<Vec<u32>>,
}

impl TileBins {
    pub fn build(width: usize, height: usize, splats: &[Option<Splat>]) -> Self {
        let tiles_x = width.div_ceil(TILE_SIZE);
        let tiles_y = height.div_ceil(TILE_SIZE);
        let mut lists = vec![Vec::new(); tiles_x * tiles_y];
        for (i, s) in splats.iter().enumerate() {
            if let Some(s) = s {
                let tx0 = s.bbox[0] as usize / TILE_SIZE;
                let ty0 = s.bbox[1] as usize / TILE_SIZE;
                let tx1 = s.bbox[2] as usize / TILE_SIZE;
                let ty1 = s.bbox[3] as usize / TILE_SIZE;
                for ty in ty0..=ty1 {
                    for tx in tx0..=tx1 {
                        lists[ty * tiles_x + tx].push(i as u32);
                    }
                }
            }
        }
        lists.par_iter_mut().for_each(|list| sort_by_depth(list, splats));
        Self { tiles_x, lists }
    }

    /// Pixel rectangle `(x0, y0, x1, y1)` (exclusive upper bounds) of a tile.
    pub fn tile_rect(&self, tile: usize, width: usize, height: usize) -> (usize, usize, usize, usize) {
        let tx = tile % self.tiles_x;
        let ty = tile / self.tiles_x;
        let x0 = tx * TILE_SIZE;
        let y0 = ty * TILE_SIZE;
        (x0, y0, (x0 + TILE_SIZE).min(width), (y0 + TILE_SIZE).min(height))
    }
}

fn sort_by_depth(list: &mut [u32], splats: &[Option<Splat>]) {
    list.sort_unstable_by(|&a, &b| {
        let da = splats[a as usize].as_ref().unwrap().depth;
        let db = splats[b as usize].as_ref().unwrap().depth;
        da.total_cmp(&db).then(a.cmp(&b))
    });
}

/// Renders `scene` from `cam` over a constant `background`.
pub fn render(cam: &Camera, scene: &GaussianSet, background: [f64; 3]) -> RenderOutput {
    let (w, h) = (cam.width as usize, cam.height as usize);
    let d = scene.feature_dim;
    let splats = preprocess(cam, scene);
    let bins = TileBins::build(w, h, &splats);
    let tiles: Vec<Vec<(usize, PixelValue, Vec<f64>)>> = (0..bins.lists.len())
        .into_par_iter()
        .map(|tile| {
            let (x0, y0, x1, y1) = bins.tile_rect(tile, w, h);
            let list = &bins.lists[tile];
            let mut contribs = Vec::new();
            let mut pixels = Vec::with_capacity((x1 - x0) * (y1 - y0));
            for y in y0..y1 {
                for x in x0..x1 {
                    let t = walk_pixel(x as f64, y as f64, list, &splats, &mut contribs);
                    let mut feat = vec![0.0; d];
                    let v = blend_pixel(&contribs, t, &splats, scene, &background, &mut feat);
                    pixels.push((y * w + x, v, feat));
                }
            }
            pixels
        })
        .collect();
    let mut out = RenderOutput::empty(w, h, d, background);
    for tile in tiles {
        for (p, v, feat) in tile {
            write_pixel(&mut out, p, &v, &feat);
        }
    }
    out
}

/// Exhaustive reference renderer: every pixel visits every projected Gaussian
/// in one global depth order, with no tiling or culling by extent.
pub fn render_reference(cam: &Camera, scene: &GaussianSet, background: [f64; 3]) -> RenderOutput {
    let (w, h) = (cam.width as usize, cam.height as usize);
    let d = scene.feature_dim;
    let center = cam.center();
    let splats: Vec<Option<Splat>> = (0..scene.len())
        .map(|i| project_splat(cam, scene, i, &center))
        .collect();
    let mut order: Vec<u32> = (0..scene.len() as u32)
        .filter(|&i| splats[i as usize].is_some())
        .collect();
    sort_by_depth(&mut order, &splats);
    let mut out = RenderOutput::empty(w, h, d, background);
    let mut contribs = Vec::new();
    let mut feat = vec![0.0; d];
    for y in 0..h {
        for x in 0..w {
            let t = walk_pixel(x as f64, y as f64, &order, &splats, &mut contribs);
            let v = blend_pixel(&contribs, t, &splats, scene, &background, &mut feat);
            write_pixel(&mut out, y * w + x, &v, &feat);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{logit, Gaussian};
    use nalgebra::Matrix4;

    fn camera(size: u32) -> Camera {
        let c = (size as f64 - 1.0) / 2.0;
        Camera::new(40.0, 40.0, c, c, size, size, Matrix4::identity()).unwrap()
    }

    fn gaussian(pos: [f32; 3], rgb: [f64; 3], opacity: f64, scale: f32, feature: Vec<f32>) -> Gaussian {
        Gaussian {
            position: pos,
            sh: rgb.iter().map(|&c| sh::rgb_to_dc(c) as f32).collect(),
            opacity_logit: logit(opacity) as f32,
            log_scale: [scale.ln(); 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            feature,
        }
    }

    #[test]
    fn empty_scene_shows_background() {
        let scene = GaussianSet::new(0, 4);
        let out = render(&camera(8), &scene, [1.0, 1.0, 1.0]);
        assert!(out.color.data.iter().all(|&v| v == 1.0));
        assert!(out.alpha.data.iter().all(|&v| v == 0.0));
        assert!(out.feature.data.iter().all(|&v| v == 0.0));
        assert!(out.max_weight_index.iter().all(|&i| i == NONE_INDEX));
        assert_eq!(out, render_reference(&camera(8), &scene, [1.0, 1.0, 1.0]));
    }

    #[test]
    fn single_gaussian_at_pixel_center() {
        let mut scene = GaussianSet::new(0, 2);
        let o = 0.6;
        let rgb = [0.9, 0.2, 0.4];
        scene.push(&gaussian([0.0, 0.0, 2.0], rgb, o, 0.05, vec![1.0, -2.0]));
        let bg = [0.1, 0.3, 0.5];
        let cam = camera(9); // principal point (4, 4) is a pixel center
        let out = render(&cam, &scene, bg);
        let p = 4 * 9 + 4;
        assert!((out.alpha.data[p] - o).abs() < 1e-6);
        for k in 0..3 {
            let want = o * rgb[k] + (1.0 - o) * bg[k];
            assert!((out.color.at(p)[k] - want).abs() < 1e-6);
        }
        assert!((out.feature.at(p)[1] + 2.0 * o).abs() < 1e-6);
        assert_eq!(out.max_weight_index[p], 0);
    }

    #[test]
    fn two_gaussians_composite_front_to_back() {
        let mut scene = GaussianSet::new(0, 1);
        // stored far-first to exercise sorting
        scene.push(&gaussian([0.0, 0.0, 3.0], [0.1, 0.8, 0.2], 0.7, 0.2, vec![0.0]));
        scene.push(&gaussian([0.0, 0.0, 2.0], [0.9, 0.1, 0.3], 0.5, 0.2, vec![1.0]));
        let cam = camera(9);
        let bg = [0.2, 0.2, 0.9];
        let out = render(&cam, &scene, bg);
        let p = 4 * 9 + 4;
        // brute-force oracle at the center pixel, where both Gaussians peak
        let (a1, c1) = (0.5, [0.9, 0.1, 0.3]);
        let (a2, c2) = (0.7, [0.1, 0.8, 0.2]);
        for k in 0..3 {
            let want = a1 * c1[k] + (1.0 - a1) * a2 * c2[k] + (1.0 - a1) * (1.0 - a2) * bg[k];
            assert!((out.color.at(p)[k] - want).abs() < 1e-6);
        }
        assert_eq!(out.max_weight_index[p], 1);
    }

    #[test]
    fn weights_and_residual_sum_to_one() {
        let mut scene = GaussianSet::new(0, 1);
        for i in 0..20 {
            let z = 2.0 + i as f32 * 0.1;
            let x = ((i * 7) % 5) as f32 * 0.05 - 0.1;
            scene.push(&gaussian([x, 0.02 * i as f32 - 0.2, z], [0.5; 3], 0.4, 0.1, vec![1.0]));
        }
        let out = render(&camera(16), &scene, [0.0; 3]);
        // feature channel of constant 1 equals Σ T_i α_i
        for p in 0..out.num_pixels() {
            let s = out.feature.at(p)[0] + out.final_transmittance[p];
            assert!((s - 1.0).abs() < 1e-9);
        }
    }
}
