//! Training-to-pseudo consistency on corresponding regions:
//! `Σ_p ‖mean(F̂*_p | M*_p) − mean(F̂ | M)‖ + Σ_p CE(softmax(Ŝ*_p | M*_p), Φ(Ŝ ⊙ M))`.
//!
//! The training branch is a constant target; gradients flow only into the
//! pseudo renders.

use super::semantic::{phi_uniform, softmax, SegmentationLogits};
use super::SemanticHeads;
use crate::buffer::ImageBuf;
use crate::correspondence::RegionMaskSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct InterLoss {
    pub value: f64,
    pub feature_term: f64,
    pub ce_term: f64,
    /// True when the training mask is empty or no pseudo mask is usable.
    pub skipped: bool,
    pub dominant: Option<usize>,
    pub d_pseudo_features: Vec<ImageBuf>,
    /// Cotangents on the pseudo-view segmentation logits (`H × W × M` each).
    pub d_pseudo_logits: Vec<Vec<f64>>,
}

fn masked_mean(img: &ImageBuf, mask: &crate::correspondence::Mask) -> (Vec<f64>, usize) {
    let mut mean = vec![0.0; img.channels];
    let mut count = 0;
    for p in mask.iter_set() {
        for (m, v) in mean.iter_mut().zip(img.at(p)) {
            *m += v;
        }
        count += 1;
    }
    if count > 0 {
        mean.iter_mut().for_each(|v| *v /= count as f64);
    }
    (mean, count)
}

pub fn loss_inter(
    train_feature: &ImageBuf,
    train_logits: &SegmentationLogits,
    pseudo_features: &[ImageBuf],
    pseudo_logits: &[SegmentationLogits],
    masks: &RegionMaskSet,
    heads: &SemanticHeads,
) -> Result<InterLoss> {
    let p_count = masks.pseudo_masks.len();
    if pseudo_features.len() != p_count || pseudo_logits.len() != p_count {
        return Err(Error::ShapeMismatch {
            context: "pseudo view count",
            expected: p_count,
            actual: pseudo_features.len().min(pseudo_logits.len()),
        });
    }
    masks
        .train_mask
        .check_shape(train_feature.width, train_feature.height)?;
    let mut out = InterLoss {
        value: 0.0,
        feature_term: 0.0,
        ce_term: 0.0,
        skipped: true,
        dominant: None,
        d_pseudo_features: pseudo_features
            .iter()
            .map(|f| ImageBuf::zeros(f.width, f.height, f.channels))
            .collect(),
        d_pseudo_logits: pseudo_logits
            .iter()
            .map(|l| vec![0.0; l.values.len()])
            .collect(),
    };
    let (target, train_count) = masked_mean(train_feature, &masks.train_mask);
    if train_count == 0 {
        return Ok(out);
    }
    let dominant = phi_uniform(train_logits, &masks.train_mask, heads);
    out.dominant = dominant;
    for p in 0..p_count {
        let mask = &masks.pseudo_masks[p];
        let feat = &pseudo_features[p];
        mask.check_shape(feat.width, feat.height)?;
        let (mean, count) = masked_mean(feat, mask);
        if count == 0 {
            continue;
        }
        out.skipped = false;
        let diff: Vec<f64> = mean.iter().zip(&target).map(|(a, b)| a - b).collect();
        let norm = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
        out.feature_term += norm;
        if norm > 0.0 {
            let scale = 1.0 / (norm * count as f64);
            for q in mask.iter_set() {
                for (g, dv) in out.d_pseudo_features[p].at_mut(q).iter_mut().zip(&diff) {
                    *g = dv * scale;
                }
            }
        }
        if let Some(c) = dominant {
            let logits = &pseudo_logits[p];
            let m = logits.classes;
            let mut probs = vec![0.0; m];
            let inv = 1.0 / count as f64;
            for q in mask.iter_set() {
                softmax(logits.at(q), &mut probs);
                out.ce_term -= probs[c].max(1e-300).ln() * inv;
                let g = &mut out.d_pseudo_logits[p][q * m..(q + 1) * m];
                for k in 0..m {
                    g[k] = (probs[k] - if k == c { 1.0 } else { 0.0 }) * inv;
                }
            }
        }
    }
    out.value = out.feature_term + out.ce_term;
    Ok(out)
}
