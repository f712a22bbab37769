//! Local semantic smoothness between a Gaussian and its nearest neighbors:
//! `(1/(θk)) Σ_i Σ_{j∈kNN(i)} exp(−‖μ_i − μ_j‖) ‖f_i − f_j‖`.
//!
//! The distance weights are treated as constants, so only features receive
//! gradient.

use rand::seq::index::sample;
use rand::Rng;

use crate::geom::GaussianSet;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct LocalConfig {
    /// Number of sampled anchor Gaussians θ.
    pub samples: usize,
    /// Neighbors per anchor k.
    pub neighbors: usize,
}

impl Default for LocalConfig {
    fn default() -> Self {
        Self {
            samples: 800,
            neighbors: 5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LocalLoss {
    pub value: f64,
    /// `N × D`
    pub d_features: Vec<f64>,
    pub anchors: Vec<usize>,
}

/// The `k` nearest other points of `i`, ordered by (distance, index).
pub(crate) fn nearest_neighbors(positions: &[[f32; 3]], i: usize, k: usize) -> Vec<(usize, f64)> {
    let p = positions[i].map(|v| v as f64);
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for (j, q) in positions.iter().enumerate() {
        if j == i {
            continue;
        }
        let d2: f64 = (0..3).map(|a| (q[a] as f64 - p[a]).powi(2)).sum();
        if best.len() == k && (d2, j) >= best[k - 1] {
            continue;
        }
        let at = best.partition_point(|e| *e < (d2, j));
        best.insert(at, (d2, j));
        best.truncate(k);
    }
    best.into_iter().map(|(d2, j)| (j, d2.sqrt())).collect()
}

pub fn loss_local_adaptive(scene: &GaussianSet, cfg: &LocalConfig, rng: &mut impl Rng) -> LocalLoss {
    let n = scene.len();
    let d = scene.feature_dim;
    let mut d_features = vec![0.0; n * d];
    if n <= 1 || cfg.samples == 0 || cfg.neighbors == 0 {
        return LocalLoss {
            value: 0.0,
            d_features,
            anchors: Vec::new(),
        };
    }
    let theta = cfg.samples.min(n);
    let k = cfg.neighbors.min(n - 1);
    let mut anchors = sample(rng, n, theta).into_vec();
    anchors.sort_unstable();
    let scale = 1.0 / (theta * k) as f64;
    let mut value = 0.0;
    let mut diff = vec![0.0; d];
    for &i in &anchors {
        let fi = scene.feature(i);
        for (j, dist) in nearest_neighbors(&scene.positions, i, k) {
            let fj = scene.feature(j);
            let mut nn = 0.0;
            for c in 0..d {
                diff[c] = fi[c] as f64 - fj[c] as f64;
                nn += diff[c] * diff[c];
            }
            let norm = nn.sqrt();
            let w = (-dist).exp();
            value += w * norm;
            if norm > 0.0 {
                let g = scale * w / norm;
                for c in 0..d {
                    d_features[i * d + c] += g * diff[c];
                    d_features[j * d + c] -= g * diff[c];
                }
            }
        }
    }
    LocalLoss {
        value: value * scale,
        d_features,
        anchors,
    }
}
