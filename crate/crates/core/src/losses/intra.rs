//! Supervised contrastive loss on a random patch of the training render.
//!
//! Samples are labeled by the dominant class of the automatic mask they fall
//! in; `z = normalize(W_ψ F̂)`; for each anchor with at least one positive,
//! `L_i = −(1/|P(i)|) Σ_{p∈P(i)} log(exp(z_i·z_p/τ) / Σ_{a≠i} exp(z_i·z_a/τ))`,
//! averaged over those anchors.

use rand::seq::index::sample;
use rand::Rng;

use super::heads::{HeadGrads, LinearMap, SemanticHeads};
use super::semantic::{phi_uniform, SegmentationLogits};
use crate::buffer::ImageBuf;
use crate::correspondence::Mask;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct IntraConfig {
    pub patch: usize,
    pub max_samples: usize,
    pub temperature: f64,
}

impl Default for IntraConfig {
    fn default() -> Self {
        Self {
            patch: 32,
            max_samples: 1024,
            temperature: 0.2,
        }
    }
}

impl IntraConfig {
    /// Full-size patches.
    pub fn full() -> Self {
        Self {
            patch: 128,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct IntraLoss {
    pub value: f64,
    pub samples: usize,
    pub anchors: usize,
    pub d_feature: ImageBuf,
    pub heads: HeadGrads,
}

/// Loss and gradient of the contrastive objective on raw (unnormalized)
/// embeddings `u` (`N × dim`).
#[derive(Debug, Clone)]
pub struct SupConOutput {
    pub value: f64,
    pub anchors: usize,
    pub d_u: Vec<f64>,
}

pub fn supcon(u: &[f64], dim: usize, labels: &[usize], tau: f64) -> SupConOutput {
    let n = labels.len();
    let mut z = vec![0.0; n * dim];
    let mut norms = vec![0.0; n];
    for i in 0..n {
        let ui = &u[i * dim..(i + 1) * dim];
        let nn = ui.iter().map(|v| v * v).sum::<f64>().sqrt();
        norms[i] = nn;
        if nn > 0.0 {
            for k in 0..dim {
                z[i * dim + k] = ui[k] / nn;
            }
        }
    }
    let mut d_z = vec![0.0; n * dim];
    let mut value = 0.0;
    let mut anchors = 0;
    let mut s = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut coef = Vec::with_capacity(n);
    for i in 0..n {
        let positives = (0..n).filter(|&p| p != i && labels[p] == labels[i]).count();
        if positives == 0 {
            coef.push(None);
            continue;
        }
        anchors += 1;
        coef.push(Some(positives));
    }
    if anchors == 0 {
        return SupConOutput {
            value: 0.0,
            anchors: 0,
            d_u: vec![0.0; n * dim],
        };
    }
    let inv_anchors = 1.0 / anchors as f64;
    for i in 0..n {
        let Some(positives) = coef[i] else { continue };
        let zi = &z[i * dim..(i + 1) * dim];
        let mut mx = f64::NEG_INFINITY;
        for a in 0..n {
            if a == i {
                continue;
            }
            let za = &z[a * dim..(a + 1) * dim];
            s[a] = zi.iter().zip(za).map(|(x, y)| x * y).sum::<f64>() / tau;
            mx = mx.max(s[a]);
        }
        let mut denom = 0.0;
        for a in 0..n {
            if a != i {
                denom += (s[a] - mx).exp();
            }
        }
        let lse = mx + denom.ln();
        let inv_p = 1.0 / positives as f64;
        let mut li = 0.0;
        for a in 0..n {
            if a == i {
                g[a] = 0.0;
                continue;
            }
            let pos = labels[a] == labels[i];
            if pos {
                li -= (s[a] - lse) * inv_p;
            }
            g[a] = ((s[a] - lse).exp() - if pos { inv_p } else { 0.0 }) * inv_anchors / tau;
        }
        value += li;
        for a in 0..n {
            if g[a] == 0.0 {
                continue;
            }
            for k in 0..dim {
                d_z[i * dim + k] += g[a] * z[a * dim + k];
                d_z[a * dim + k] += g[a] * z[i * dim + k];
            }
        }
    }
    let mut d_u = vec![0.0; n * dim];
    for i in 0..n {
        if norms[i] == 0.0 {
            continue;
        }
        let zi = &z[i * dim..(i + 1) * dim];
        let dz = &d_z[i * dim..(i + 1) * dim];
        let dot: f64 = zi.iter().zip(dz).map(|(a, b)| a * b).sum();
        for k in 0..dim {
            d_u[i * dim + k] = (dz[k] - zi[k] * dot) / norms[i];
        }
    }
    SupConOutput {
        value: value * inv_anchors,
        anchors,
        d_u,
    }
}

/// Per-pixel sample labels: the dominant class of the automatic mask each
/// pixel belongs to, `None` outside every mask.
pub(crate) fn auto_mask_labels(
    logits: &SegmentationLogits,
    auto_masks: &[Mask],
    heads: &SemanticHeads,
) -> Vec<Option<usize>> {
    let mut labels = vec![None; logits.width * logits.height];
    for m in auto_masks {
        if let Some(c) = phi_uniform(logits, m, heads) {
            for p in m.iter_set() {
                labels[p] = Some(c);
            }
        }
    }
    labels
}

pub fn loss_intra(
    feature_img: &ImageBuf,
    logits: &SegmentationLogits,
    auto_masks: &[Mask],
    heads: &SemanticHeads,
    cfg: &IntraConfig,
    rng: &mut impl Rng,
) -> Result<IntraLoss> {
    let (w, h) = (feature_img.width, feature_img.height);
    for m in auto_masks {
        m.check_shape(w, h)?;
    }
    let mut out = IntraLoss {
        value: 0.0,
        samples: 0,
        anchors: 0,
        d_feature: ImageBuf::zeros(w, h, feature_img.channels),
        heads: HeadGrads::zeros(heads),
    };
    let labels = auto_mask_labels(logits, auto_masks, heads);
    let (pw, ph) = (cfg.patch.min(w), cfg.patch.min(h));
    let x0 = rng.random_range(0..=w - pw);
    let y0 = rng.random_range(0..=h - ph);
    let mut pixels: Vec<usize> = (y0..y0 + ph)
        .flat_map(|y| (x0..x0 + pw).map(move |x| y * w + x))
        .filter(|&p| labels[p].is_some())
        .collect();
    if pixels.len() > cfg.max_samples {
        let mut keep = sample(rng, pixels.len(), cfg.max_samples).into_vec();
        keep.sort_unstable();
        pixels = keep.into_iter().map(|i| pixels[i]).collect();
    }
    out.samples = pixels.len();
    if pixels.len() < 2 {
        return Ok(out);
    }
    let map: &LinearMap = &heads.w_psi;
    let dim = map.out_dim;
    let mut u = vec![0.0; pixels.len() * dim];
    for (i, &p) in pixels.iter().enumerate() {
        map.apply(feature_img.at(p), &mut u[i * dim..(i + 1) * dim]);
    }
    let sample_labels: Vec<usize> = pixels.iter().map(|&p| labels[p].unwrap()).collect();
    let sc = supcon(&u, dim, &sample_labels, cfg.temperature);
    out.value = sc.value;
    out.anchors = sc.anchors;
    let mut df = vec![0.0; feature_img.channels];
    for (i, &p) in pixels.iter().enumerate() {
        let du = &sc.d_u[i * dim..(i + 1) * dim];
        out.heads.w_psi.add_outer(du, feature_img.at(p), 1.0);
        map.apply_transpose(du, &mut df);
        out.d_feature.at_mut(p).copy_from_slice(&df);
    }
    Ok(out)
}
