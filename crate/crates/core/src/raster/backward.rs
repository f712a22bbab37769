//! Analytic adjoint of the compositing pass.
//!
//! Each pixel replays its forward walk (same tile lists, same cutoffs) and
//! then sweeps the contributions back to front. Per-tile partial gradients are
//! merged per Gaussian in fixed tile order, so the result is bitwise
//! reproducible regardless of thread count.

use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;

use super::{preprocess, walk_pixel, Contribution, RenderOutput, TileBins};
use crate::buffer::ImageBuf;
use crate::error::{Error, Result};
use crate::geom::{project_backward, Camera, GaussianSet};
use crate::sh;

/// Gradients of a scalar loss with respect to every raw scene parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderGrads {
    pub positions: Vec<[f64; 3]>,
    pub sh_coeffs: Vec<f64>,
    pub opacity_logits: Vec<f64>,
    pub log_scales: Vec<[f64; 3]>,
    pub rotations: Vec<[f64; 4]>,
    pub features: Vec<f64>,
    /// dL/d(projected mean) in pixels; feeds the densification statistic.
    pub mean2d: Vec<[f64; 2]>,
    /// Whether each Gaussian produced a splat in this view.
    pub visible: Vec<bool>,
}

impl RenderGrads {
    pub fn zeros(scene: &GaussianSet) -> Self {
        let n = scene.len();
        Self {
            positions: vec![[0.0; 3]; n],
            sh_coeffs: vec![0.0; n * scene.sh_stride()],
            opacity_logits: vec![0.0; n],
            log_scales: vec![[0.0; 3]; n],
            rotations: vec![[0.0; 4]; n],
            features: vec![0.0; n * scene.feature_dim],
            mean2d: vec![[0.0; 2]; n],
            visible: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn add_assign(&mut self, other: &RenderGrads) {
        fn add<const K: usize>(a: &mut [[f64; K]], b: &[[f64; K]]) {
            for (x, y) in a.iter_mut().zip(b) {
                for k in 0..K {
                    x[k] += y[k];
                }
            }
        }
        fn add_flat(a: &mut [f64], b: &[f64]) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        assert_eq!(self.len(), other.len());
        add(&mut self.positions, &other.positions);
        add_flat(&mut self.sh_coeffs, &other.sh_coeffs);
        add_flat(&mut self.opacity_logits, &other.opacity_logits);
        add(&mut self.log_scales, &other.log_scales);
        add(&mut self.rotations, &other.rotations);
        add_flat(&mut self.features, &other.features);
        add(&mut self.mean2d, &other.mean2d);
        for (a, b) in self.visible.iter_mut().zip(&other.visible) {
            *a |= b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.positions.iter_mut().flatten().for_each(|v| *v *= s);
        self.sh_coeffs.iter_mut().for_each(|v| *v *= s);
        self.opacity_logits.iter_mut().for_each(|v| *v *= s);
        self.log_scales.iter_mut().flatten().for_each(|v| *v *= s);
        self.rotations.iter_mut().flatten().for_each(|v| *v *= s);
        self.features.iter_mut().for_each(|v| *v *= s);
        self.mean2d.iter_mut().flatten().for_each(|v| *v *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.positions.iter().flatten().all(|v| v.is_finite())
            && self.sh_coeffs.iter().all(|v| v.is_finite())
            && self.opacity_logits.iter().all(|v| v.is_finite())
            && self.log_scales.iter().flatten().all(|v| v.is_finite())
            && self.rotations.iter().flatten().all(|v| v.is_finite())
            && self.features.iter().all(|v| v.is_finite())
    }
}

// per-slot layout of the 2D partials: mean (2), conic (a, b, c), opacity, rgb
const D2: usize = 9;

/// Gradients of `Σ d_color·color + Σ d_feature·feature + Σ d_alpha·alpha`
/// with respect to the raw parameters of `scene`.
///
/// `output` must come from [`super::render`] with the same camera and scene.
pub fn render_backward(
    cam: &Camera,
    scene: &GaussianSet,
    output: &RenderOutput,
    d_color: &ImageBuf,
    d_feature: &ImageBuf,
    d_alpha: &ImageBuf,
) -> Result<RenderGrads> {
    let (w, h) = (cam.width as usize, cam.height as usize);
    let d = scene.feature_dim;
    let check = |context: &'static str, got: usize, want: usize| {
        if got != want {
            Err(Error::ShapeMismatch {
                context,
                expected: want,
                actual: got,
            })
        } else {
            Ok(())
        }
    };
    check("render output width", output.width, w)?;
    check("render output height", output.height, h)?;
    check("render output feature channels", output.feature.channels, d)?;
    check("d_color length", d_color.data.len(), w * h * 3)?;
    check("d_feature length", d_feature.data.len(), w * h * d)?;
    check("d_alpha length", d_alpha.data.len(), w * h)?;
    scene.validate()?;

    let splats = preprocess(cam, scene);
    let bins = TileBins::build(w, h, &splats);
    let bg = output.background;
    let stride = D2 + d;

    let tile_grads: Vec<Vec<f64>> = (0..bins.lists.len())
        .into_par_iter()
        .map(|tile| {
            let list = &bins.lists[tile];
            let mut local = vec![0.0; list.len() * stride];
            if list.is_empty() {
                return local;
            }
            let (x0, y0, x1, y1) = bins.tile_rect(tile, w, h);
            let mut contribs: Vec<Contribution> = Vec::new();
            let mut acc_f = vec![0.0; d];
            for y in y0..y1 {
                for x in x0..x1 {
                    let p = y * w + x;
                    let t_final = walk_pixel(x as f64, y as f64, list, &splats, &mut contribs);
                    if contribs.is_empty() {
                        continue;
                    }
                    let dc = d_color.at(p);
                    let df = d_feature.at(p);
                    let da = d_alpha.data[p];
                    let bg_term = da - (bg[0] * dc[0] + bg[1] * dc[1] + bg[2] * dc[2]);
                    let mut acc_c = [0.0; 3];
                    acc_f.iter_mut().for_each(|v| *v = 0.0);
                    for c in contribs.iter().rev() {
                        let s = splats[c.gaussian as usize].as_ref().unwrap();
                        let feat = scene.feature(c.gaussian as usize);
                        let weight = c.transmittance * c.alpha;
                        let g = &mut local[c.slot as usize * stride..(c.slot as usize + 1) * stride];
                        let mut d_alpha_i = 0.0;
                        for k in 0..3 {
                            g[6 + k] += weight * dc[k];
                            d_alpha_i += (s.color[k] - acc_c[k]) * dc[k];
                            acc_c[k] = c.alpha * s.color[k] + (1.0 - c.alpha) * acc_c[k];
                        }
                        for k in 0..d {
                            let f = feat[k] as f64;
                            g[D2 + k] += weight * df[k];
                            d_alpha_i += (f - acc_f[k]) * df[k];
                            acc_f[k] = c.alpha * f + (1.0 - c.alpha) * acc_f[k];
                        }
                        d_alpha_i *= c.transmittance;
                        d_alpha_i += bg_term * t_final / (1.0 - c.alpha);
                        if c.clamped {
                            continue;
                        }
                        g[5] += d_alpha_i * c.gauss;
                        let d_power = d_alpha_i * s.opacity * c.gauss;
                        let (dx, dy) = (c.dx, c.dy);
                        g[2] += -0.5 * dx * dx * d_power;
                        g[3] += -dx * dy * d_power;
                        g[4] += -0.5 * dy * dy * d_power;
                        g[0] += (s.conic[0] * dx + s.conic[1] * dy) * d_power;
                        g[1] += (s.conic[1] * dx + s.conic[2] * dy) * d_power;
                    }
                }
            }
            local
        })
        .collect();

    let n = scene.len();
    let mut per_g = vec![0.0; n * stride];
    for (tile, local) in tile_grads.iter().enumerate() {
        for (slot, &gi) in bins.lists[tile].iter().enumerate() {
            let src = &local[slot * stride..(slot + 1) * stride];
            let dst = &mut per_g[gi as usize * stride..(gi as usize + 1) * stride];
            for (a, b) in dst.iter_mut().zip(src) {
                *a += b;
            }
        }
    }

    let center = cam.center();
    let sh_stride = scene.sh_stride();
    struct Out {
        pos: [f64; 3],
        sh: Vec<f64>,
        logit: f64,
        log_scale: [f64; 3],
        rot: [f64; 4],
        mean2d: [f64; 2],
        visible: bool,
    }
    let outs: Vec<Out> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut o = Out {
                pos: [0.0; 3],
                sh: vec![0.0; sh_stride],
                logit: 0.0,
                log_scale: [0.0; 3],
                rot: [0.0; 4],
                mean2d: [0.0; 2],
                visible: false,
            };
            let s = match &splats[i] {
                Some(s) => s,
                None => return o,
            };
            let g = &per_g[i * stride..i * stride + D2];
            let pos = scene.position(i);
            let ls = scene.log_scales[i].map(|v| v as f64);
            let q = scene.rotations[i].map(|v| v as f64);
            let d_conic = Matrix2::new(g[2], 0.5 * g[3], 0.5 * g[3], g[4]);
            let pg = project_backward(cam, &pos, &ls, &q, &Vector2::new(g[0], g[1]), &d_conic);
            let d_dir = sh::eval_sh_backward(
                scene.sh_degree,
                scene.sh(i),
                &s.view_dir,
                &[g[6], g[7], g[8]],
                &mut o.sh,
            );
            // direction = (p − c)/|p − c|
            let dist = (pos - center).norm();
            let dir = s.view_dir;
            let dot = dir[0] * d_dir[0] + dir[1] * d_dir[1] + dir[2] * d_dir[2];
            for k in 0..3 {
                o.pos[k] = pg.position[k] + (d_dir[k] - dir[k] * dot) / dist;
            }
            let op = s.opacity;
            o.logit = g[5] * op * (1.0 - op);
            o.log_scale = pg.log_scale;
            o.rot = pg.rotation;
            o.mean2d = [g[0], g[1]];
            o.visible = true;
            o
        })
        .collect();

    let mut grads = RenderGrads::zeros(scene);
    for (i, o) in outs.into_iter().enumerate() {
        grads.positions[i] = o.pos;
        grads.sh_coeffs[i * sh_stride..(i + 1) * sh_stride].copy_from_slice(&o.sh);
        grads.opacity_logits[i] = o.logit;
        grads.log_scales[i] = o.log_scale;
        grads.rotations[i] = o.rot;
        grads.mean2d[i] = o.mean2d;
        grads.visible[i] = o.visible;
        let src = &per_g[i * stride + D2..(i + 1) * stride];
        grads.features[i * d..(i + 1) * d].copy_from_slice(src);
    }
    Ok(grads)
}
