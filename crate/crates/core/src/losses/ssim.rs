//! Structural similarity with an 11×11 Gaussian window (σ = 1.5) and its
//! gradient with respect to the first image.
//!
//! Near the border the window is truncated to the image and renormalized, so
//! every pixel carries a full-weight local estimate.

use crate::buffer::ImageBuf;

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;
const C1: f64 = K1 * K1;
const C2: f64 = K2 * K2;

pub fn window_1d() -> [f64; WINDOW] {
    let r = (WINDOW / 2) as f64;
    let mut w = [0.0; WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// One axis of the separable blur over a single-channel plane.
/// `normalize_input`: divide by the in-bounds weight sum at the output
/// (forward) or at the input (adjoint).
fn blur_axis(src: &[f64], w: usize, h: usize, horizontal: bool, adjoint: bool, k: &[f64; WINDOW]) -> Vec<f64> {
    let r = WINDOW / 2;
    let len = if horizontal { w } else { h };
    let norm: Vec<f64> = (0..len)
        .map(|i| {
            let lo = i.saturating_sub(r);
            let hi = (i + r).min(len - 1);
            (lo..=hi).map(|j| k[j + r - i]).sum()
        })
        .collect();
    let mut out = vec![0.0; src.len()];
    let idx = |a: usize, b: usize| if horizontal { b * w + a } else { a * w + b };
    let other = if horizontal { h } else { w };
    let mut line = vec![0.0; len];
    for b in 0..other {
        for (a, v) in line.iter_mut().enumerate() {
            *v = src[idx(a, b)];
            if adjoint {
                *v /= norm[a];
            }
        }
        for i in 0..len {
            let lo = i.saturating_sub(r);
            let hi = (i + r).min(len - 1);
            let mut s = 0.0;
            for j in lo..=hi {
                s += k[j + r - i] * line[j];
            }
            out[idx(i, b)] = if adjoint { s } else { s / norm[i] };
        }
    }
    out
}

/// Renormalized Gaussian blur of one plane.
pub fn blur(src: &[f64], w: usize, h: usize) -> Vec<f64> {
    let k = window_1d();
    let t = blur_axis(src, w, h, true, false, &k);
    blur_axis(&t, w, h, false, false, &k)
}

fn blur_adjoint(src: &[f64], w: usize, h: usize) -> Vec<f64> {
    let k = window_1d();
    let t = blur_axis(src, w, h, false, true, &k);
    blur_axis(&t, w, h, true, true, &k)
}

fn plane(img: &ImageBuf, c: usize) -> Vec<f64> {
    img.data.iter().skip(c).step_by(img.channels).copied().collect()
}

/// Mean SSIM over pixels and channels, plus `d mean_ssim / d a` when requested.
pub fn ssim_with_grad(a: &ImageBuf, b: &ImageBuf, want_grad: bool) -> (f64, Option<ImageBuf>) {
    assert!(a.same_shape(b), "ssim inputs differ in shape");
    let (w, h, ch) = (a.width, a.height, a.channels);
    let n = w * h;
    let total = (n * ch) as f64;
    let mut sum = 0.0;
    let mut grad = want_grad.then(|| ImageBuf::zeros(w, h, ch));
    for c in 0..ch {
        let x = plane(a, c);
        let y = plane(b, c);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mx = blur(&x, w, h);
        let my = blur(&y, w, h);
        let exx = blur(&xx, w, h);
        let eyy = blur(&yy, w, h);
        let exy = blur(&xy, w, h);
        let mut g_mx = vec![0.0; n];
        let mut g_exx = vec![0.0; n];
        let mut g_exy = vec![0.0; n];
        for p in 0..n {
            let (ux, uy) = (mx[p], my[p]);
            let sxx = exx[p] - ux * ux;
            let syy = eyy[p] - uy * uy;
            let sxy = exy[p] - ux * uy;
            let a1 = 2.0 * ux * uy + C1;
            let a2 = 2.0 * sxy + C2;
            let b1 = ux * ux + uy * uy + C1;
            let b2 = sxx + syy + C2;
            let s = a1 * a2 / (b1 * b2);
            sum += s;
            if grad.is_some() {
                let inv = 1.0 / total;
                g_mx[p] = inv * (2.0 * uy * (a2 - a1) / (b1 * b2) - 2.0 * ux * s * (1.0 / b1 - 1.0 / b2));
                g_exx[p] = inv * (-s / b2);
                g_exy[p] = inv * (2.0 * a1 / (b1 * b2));
            }
        }
        if let Some(g) = grad.as_mut() {
            let d_mx = blur_adjoint(&g_mx, w, h);
            let d_exx = blur_adjoint(&g_exx, w, h);
            let d_exy = blur_adjoint(&g_exy, w, h);
            for p in 0..n {
                g.data[p * ch + c] = d_mx[p] + 2.0 * x[p] * d_exx[p] + y[p] * d_exy[p];
            }
        }
    }
    (sum / total, grad)
}

/// Mean SSIM of two images of equal shape.
pub fn ssim(a: &ImageBuf, b: &ImageBuf) -> f64 {
    ssim_with_grad(a, b, false).0
}
