//! Scene-layout initialization: gradient-driven densification, removal of
//! isolated Gaussians, and export/re-initialization of layout points.

use std::collections::HashMap;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{logit, Gaussian, GaussianSet};
use crate::raster::RenderGrads;
use crate::sh;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensifyConfig {
    /// Threshold on the mean NDC-space positional gradient norm.
    pub grad_threshold: f64,
    /// Largest scale that is cloned rather than split, as a fraction of the scene extent.
    pub split_scale_threshold: f64,
    pub densify_interval: usize,
    pub densify_from: usize,
    pub densify_until: usize,
    pub opacity_prune_threshold: f64,
    pub split_factor: f64,
    /// Upper bound on the Gaussian count; densification stops growing past it.
    pub max_gaussians: usize,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            grad_threshold: 2e-4,
            split_scale_threshold: 0.01,
            densify_interval: 100,
            densify_from: 500,
            densify_until: 7000,
            opacity_prune_threshold: 0.005,
            split_factor: 1.6,
            max_gaussians: usize::MAX,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OgrConfig {
    /// Minimum number of other Gaussians within `radius` for a Gaussian to survive.
    pub neighbor_min: usize,
    pub radius: f64,
    pub interval: usize,
}

impl Default for OgrConfig {
    fn default() -> Self {
        Self {
            neighbor_min: 5,
            radius: 1.0,
            interval: 3000,
        }
    }
}

/// Running positional-gradient statistic per Gaussian.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DensifyStats {
    pub accum: Vec<f64>,
    pub count: Vec<u32>,
}

impl DensifyStats {
    pub fn new(n: usize) -> Self {
        Self {
            accum: vec![0.0; n],
            count: vec![0; n],
        }
    }

    /// Adds the NDC-scaled norm of each visible Gaussian's 2D mean gradient.
    pub fn add(&mut self, grads: &RenderGrads, width: u32, height: u32) {
        let (sx, sy) = (0.5 * width as f64, 0.5 * height as f64);
        for i in 0..self.accum.len() {
            if grads.visible[i] {
                let [gx, gy] = grads.mean2d[i];
                self.accum[i] += (gx * sx).hypot(gy * sy);
                self.count[i] += 1;
            }
        }
    }

    pub fn remap(&mut self, sources: &[Option<usize>]) {
        self.accum = sources.iter().map(|s| s.map_or(0.0, |i| self.accum[i])).collect();
        self.count = sources.iter().map(|s| s.map_or(0, |i| self.count[i])).collect();
    }

    pub fn mean(&self, i: usize) -> f64 {
        if self.count[i] == 0 {
            0.0
        } else {
            self.accum[i] / self.count[i] as f64
        }
    }
}

/// A scene rebuilt by densification or removal. `sources[i]` names the
/// input Gaussian that output `i` continues, `None` for a new one.
#[derive(Debug, Clone, PartialEq)]
pub struct Rebuilt {
    pub scene: GaussianSet,
    pub sources: Vec<Option<usize>>,
    pub cloned: usize,
    pub split: usize,
    pub removed: usize,
}

pub fn densify_and_prune(
    scene: &GaussianSet,
    stats: &DensifyStats,
    cfg: &DensifyConfig,
    scene_extent: f64,
    rng: &mut impl Rng,
) -> Result<Rebuilt> {
    let n = scene.len();
    let pruned: Vec<bool> = (0..n)
        .map(|i| scene.opacity(i) < cfg.opacity_prune_threshold)
        .collect();
    let removed = pruned.iter().filter(|&&p| p).count();
    // Each clone or split adds one Gaussian net; growth stops at the cap.
    let mut budget = cfg.max_gaussians.saturating_sub(n - removed);
    let mut keep = Vec::with_capacity(n);
    let mut clones = Vec::new();
    let mut splits = Vec::new();
    for i in 0..n {
        if pruned[i] {
            continue;
        }
        if budget > 0 && stats.mean(i) >= cfg.grad_threshold {
            budget -= 1;
            let max_scale = scene.scale(i).into_iter().fold(0.0, f64::max);
            if max_scale <= cfg.split_scale_threshold * scene_extent {
                keep.push(i);
                clones.push(i);
            } else {
                splits.push(i);
            }
        } else {
            keep.push(i);
        }
    }
    let mut out = scene.select(&keep);
    let mut sources: Vec<Option<usize>> = keep.iter().map(|&i| Some(i)).collect();
    for &i in &clones {
        out.push(&scene.get(i));
        sources.push(None);
    }
    let shrink = cfg.split_factor.ln() as f32;
    for &i in &splits {
        let parent = scene.get(i);
        let cov = scene.covariance(i)?;
        let chol = cov
            .cholesky()
            .map(|c| c.l())
            .unwrap_or_else(|| nalgebra::Matrix3::from_diagonal(&Vector3::from(scene.scale(i))));
        let mean = scene.position(i);
        for _ in 0..2 {
            let z = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
            let p = mean + chol * z;
            let mut child = parent.clone();
            child.position = [p.x as f32, p.y as f32, p.z as f32];
            child.log_scale = parent.log_scale.map(|v| v - shrink);
            out.push(&child);
            sources.push(None);
        }
    }
    Ok(Rebuilt {
        scene: out,
        sources,
        cloned: clones.len(),
        split: splits.len(),
        removed: removed + splits.len(),
    })
}

type Cell = (i64, i64, i64);

fn cell_of(p: &[f64; 3], r: f64) -> Cell {
    let f = |v: f64| (v / r).floor() as i64;
    (f(p[0]), f(p[1]), f(p[2]))
}

/// For every point, the number of *other* points within distance `r`,
/// saturating at `cap`. Uses a uniform grid of cell size `r`.
pub fn neighbor_counts(positions: &[[f32; 3]], r: f64, cap: usize) -> Vec<usize> {
    let pts: Vec<[f64; 3]> = positions.iter().map(|p| p.map(|v| v as f64)).collect();
    let mut grid: HashMap<Cell, Vec<usize>> = HashMap::new();
    for (i, p) in pts.iter().enumerate() {
        grid.entry(cell_of(p, r)).or_default().push(i);
    }
    let r2 = r * r;
    (0..pts.len())
        .into_par_iter()
        .map(|i| {
            let p = &pts[i];
            let (cx, cy, cz) = cell_of(p, r);
            let mut count = 0;
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        let Some(list) = grid.get(&(cx + dx, cy + dy, cz + dz)) else {
                            continue;
                        };
                        for &j in list {
                            if j == i {
                                continue;
                            }
                            let q = &pts[j];
                            let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                            if d2 <= r2 {
                                count += 1;
                                if count >= cap {
                                    return count;
                                }
                            }
                        }
                    }
                }
            }
            count
        })
        .collect()
}

/// Removes every Gaussian with fewer than `neighbor_min` other Gaussians
/// within `radius`, counted against the input set.
pub fn ogr(scene: &GaussianSet, cfg: &OgrConfig) -> Result<Rebuilt> {
    if cfg.neighbor_min == 0 || cfg.radius.is_nan() || cfg.radius <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "outlier removal needs neighbor_min >= 1 and radius > 0, got {} / {}",
            cfg.neighbor_min, cfg.radius
        )));
    }
    let counts = neighbor_counts(&scene.positions, cfg.radius, cfg.neighbor_min);
    let keep: Vec<usize> = (0..scene.len())
        .filter(|&i| counts[i] >= cfg.neighbor_min)
        .collect();
    Ok(Rebuilt {
        scene: scene.select(&keep),
        sources: keep.iter().map(|&i| Some(i)).collect(),
        cloned: 0,
        split: 0,
        removed: scene.len() - keep.len(),
    })
}

/// Positions, degree-0 color coefficients and semantic features of a trained scene.
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutPoints {
    pub feature_dim: usize,
    pub positions: Vec<[f32; 3]>,
    pub sh_dc: Vec<[f32; 3]>,
    pub features: Vec<f32>,
}

impl LayoutPoints {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn extend(&mut self, other: &LayoutPoints) -> Result<()> {
        if other.feature_dim != self.feature_dim {
            return Err(Error::ShapeMismatch {
                context: "layout feature dimension",
                expected: self.feature_dim,
                actual: other.feature_dim,
            });
        }
        self.positions.extend_from_slice(&other.positions);
        self.sh_dc.extend_from_slice(&other.sh_dc);
        self.features.extend_from_slice(&other.features);
        Ok(())
    }
}

pub fn export_layout(scene: &GaussianSet) -> LayoutPoints {
    LayoutPoints {
        feature_dim: scene.feature_dim,
        positions: scene.positions.clone(),
        sh_dc: (0..scene.len())
            .map(|i| {
                let s = scene.sh(i);
                [s[0], s[1], s[2]]
            })
            .collect(),
        features: scene.features.clone(),
    }
}

/// Opacity assigned to re-initialized Gaussians.
pub const REINIT_OPACITY: f64 = 0.1;
/// Scale used for a point with no neighbors.
pub const ISOLATED_SCALE: f64 = 0.01;

/// Mean distance from each point to its (up to) `k` nearest neighbors.
pub fn mean_knn_distance(positions: &[[f32; 3]], k: usize) -> Vec<f64> {
    (0..positions.len())
        .into_par_iter()
        .map(|i| {
            let nn = crate::losses::nearest_neighbors(positions, i, k);
            if nn.is_empty() {
                ISOLATED_SCALE
            } else {
                nn.iter().map(|(_, d)| d).sum::<f64>() / nn.len() as f64
            }
        })
        .collect()
}

/// Fresh Gaussians at the layout points: degree-0 color and features
/// carried over, opacity 0.1, isotropic scale equal to the mean distance to
/// the 3 nearest neighbors, identity rotation, higher SH orders zero.
pub fn reinit_from_layout(layout: &LayoutPoints, sh_degree: usize) -> Result<GaussianSet> {
    if layout.is_empty() {
        return Err(Error::EmptyLayout);
    }
    let dists = mean_knn_distance(&layout.positions, 3);
    let k = sh::num_coeffs(sh_degree);
    let d = layout.feature_dim;
    let mut scene = GaussianSet::new(sh_degree, d);
    let op = logit(REINIT_OPACITY) as f32;
    for i in 0..layout.len() {
        let mut coeffs = vec![0.0f32; k * 3];
        coeffs[..3].copy_from_slice(&layout.sh_dc[i]);
        let ls = dists[i].max(1e-7).ln() as f32;
        scene.push(&Gaussian {
            position: layout.positions[i],
            sh: coeffs,
            opacity_logit: op,
            log_scale: [ls; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            feature: layout.features[i * d..(i + 1) * d].to_vec(),
        });
    }
    Ok(scene)
}
