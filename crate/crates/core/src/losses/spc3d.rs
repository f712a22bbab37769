//! 3D consistency between max-weight Gaussians of corresponding regions:
//! `Σ_j KL(softmax(f̄) ‖ softmax(f*_j))`, with `f̄` the mean feature of the
//! training-view Gaussians (a constant target) and `f*_j` each distinct
//! Gaussian collected from the pseudo views.

use std::collections::BTreeSet;

use super::semantic::softmax;
use crate::geom::GaussianSet;

#[derive(Debug, Clone)]
pub struct Spc3dLoss {
    pub value: f64,
    pub skipped: bool,
    /// Pseudo-side Gaussians that received gradient.
    pub targets: Vec<u32>,
    /// `N × D`
    pub d_features: Vec<f64>,
}

/// `KL(softmax(p) ‖ softmax(q))` and its gradient with respect to `q`.
pub fn kl_softmax(p_logits: &[f64], q_logits: &[f64]) -> (f64, Vec<f64>) {
    let mut p = vec![0.0; p_logits.len()];
    let mut q = vec![0.0; q_logits.len()];
    softmax(p_logits, &mut p);
    softmax(q_logits, &mut q);
    let mut kl = 0.0;
    for (a, b) in p.iter().zip(&q) {
        if *a > 0.0 {
            kl += a * (a / b).ln();
        }
    }
    let grad = q.iter().zip(&p).map(|(b, a)| b - a).collect();
    (kl.max(0.0), grad)
}

/// `train` holds the Gaussians under the eroded training mask; `pseudo` one
/// list per pseudo view. Any empty list skips the term.
pub fn loss_spc3d(scene: &GaussianSet, train: &[u32], pseudo: &[Vec<u32>]) -> Spc3dLoss {
    let d = scene.feature_dim;
    let mut out = Spc3dLoss {
        value: 0.0,
        skipped: true,
        targets: Vec::new(),
        d_features: vec![0.0; scene.len() * d],
    };
    if train.is_empty() || pseudo.is_empty() || pseudo.iter().any(Vec::is_empty) {
        return out;
    }
    let mut mean = vec![0.0; d];
    let unique: BTreeSet<u32> = train.iter().copied().collect();
    for &i in &unique {
        for (m, v) in mean.iter_mut().zip(scene.feature(i as usize)) {
            *m += *v as f64;
        }
    }
    mean.iter_mut().for_each(|v| *v /= unique.len() as f64);
    let targets: BTreeSet<u32> = pseudo.iter().flatten().copied().collect();
    out.skipped = false;
    for &j in &targets {
        let f: Vec<f64> = scene.feature(j as usize).iter().map(|&v| v as f64).collect();
        let (kl, g) = kl_softmax(&mean, &f);
        out.value += kl;
        for (dst, v) in out.d_features[j as usize * d..(j as usize + 1) * d]
            .iter_mut()
            .zip(g)
        {
            *dst += v;
        }
    }
    out.targets = targets.into_iter().collect();
    out
}
