//! Adam with first/second moments kept index-aligned with the Gaussians.

use serde::{Deserialize, Serialize};

use crate::geom::GaussianSet;
use crate::losses::{HeadGrads, LinearGrad, LinearMap, SemanticHeads};
use crate::raster::RenderGrads;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
        }
    }
}

/// Moment buffers for one parameter array.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// One Adam update of `params` in place.
    pub fn update(&mut self, params: &mut [f32], grads: &[f64], lr: f64, cfg: &AdamConfig, step: u64) {
        debug_assert_eq!(params.len(), grads.len());
        let bc1 = 1.0 - cfg.beta1.powi(step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] = (params[i] as f64 - lr * mh / (vh.sqrt() + cfg.eps)) as f32;
        }
    }

    /// Rebuilds per-element moments for a new element order: entry `i` of
    /// the result copies element `sources[i]` (rows of width `stride`) or is
    /// zero for a newly created element.
    pub fn remap(&mut self, stride: usize, sources: &[Option<usize>]) {
        let mut m = Vec::with_capacity(sources.len() * stride);
        let mut v = Vec::with_capacity(sources.len() * stride);
        for s in sources {
            match s {
                Some(i) => {
                    m.extend_from_slice(&self.m[i * stride..(i + 1) * stride]);
                    v.extend_from_slice(&self.v[i * stride..(i + 1) * stride]);
                }
                None => {
                    m.extend(std::iter::repeat_n(0.0, stride));
                    v.extend(std::iter::repeat_n(0.0, stride));
                }
            }
        }
        self.m = m;
        self.v = v;
    }
}

/// Per-group learning rates for one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub position: f64,
    pub sh_dc: f64,
    pub sh_rest: f64,
    pub opacity: f64,
    pub scale: f64,
    pub rotation: f64,
    pub feature: f64,
}

fn flat3(v: &mut [[f32; 3]]) -> &mut [f32] {
    v.as_flattened_mut()
}

fn flat3g(v: &[[f64; 3]]) -> &[f64] {
    v.as_flattened()
}

/// Optimizer state for every per-Gaussian parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianAdam {
    pub cfg: AdamConfig,
    pub step: u64,
    pub positions: Moments,
    pub sh: Moments,
    pub opacity: Moments,
    pub scales: Moments,
    pub rotations: Moments,
    pub features: Moments,
}

impl GaussianAdam {
    pub fn new(scene: &GaussianSet, cfg: AdamConfig) -> Self {
        let n = scene.len();
        Self {
            cfg,
            step: 0,
            positions: Moments::zeros(n * 3),
            sh: Moments::zeros(n * scene.sh_stride()),
            opacity: Moments::zeros(n),
            scales: Moments::zeros(n * 3),
            rotations: Moments::zeros(n * 4),
            features: Moments::zeros(n * scene.feature_dim),
        }
    }

    pub fn len(&self) -> usize {
        self.opacity.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Applies one step and renormalizes quaternions.
    pub fn step(&mut self, scene: &mut GaussianSet, grads: &RenderGrads, lr: &LearningRates) {
        assert_eq!(scene.len(), self.len(), "optimizer state out of sync with scene");
        self.step += 1;
        let (cfg, t) = (self.cfg, self.step);
        self.positions
            .update(flat3(&mut scene.positions), flat3g(&grads.positions), lr.position, &cfg, t);
        // The degree-0 coefficients are the first 3 of every per-Gaussian block.
        let stride = scene.sh_stride();
        if stride == 3 {
            self.sh.update(&mut scene.sh_coeffs, &grads.sh_coeffs, lr.sh_dc, &cfg, t);
        } else {
            let bc1 = 1.0 - cfg.beta1.powi(t as i32);
            let bc2 = 1.0 - cfg.beta2.powi(t as i32);
            for (i, (p, g)) in scene.sh_coeffs.iter_mut().zip(&grads.sh_coeffs).enumerate() {
                let lr = if i % stride < 3 { lr.sh_dc } else { lr.sh_rest };
                let m = &mut self.sh.m[i];
                let v = &mut self.sh.v[i];
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                *p = (*p as f64 - lr * (*m / bc1) / ((*v / bc2).sqrt() + cfg.eps)) as f32;
            }
        }
        self.opacity
            .update(&mut scene.opacity_logits, &grads.opacity_logits, lr.opacity, &cfg, t);
        self.scales
            .update(flat3(&mut scene.log_scales), flat3g(&grads.log_scales), lr.scale, &cfg, t);
        self.rotations.update(
            scene.rotations.as_flattened_mut(),
            grads.rotations.as_flattened(),
            lr.rotation,
            &cfg,
            t,
        );
        self.features
            .update(&mut scene.features, &grads.features, lr.feature, &cfg, t);
        scene.normalize_rotations();
    }

    /// Re-aligns moments after the scene was rebuilt from `sources`
    /// (see [`Moments::remap`]).
    pub fn remap(&mut self, scene: &GaussianSet, sources: &[Option<usize>]) {
        self.positions.remap(3, sources);
        self.sh.remap(scene.sh_stride(), sources);
        self.opacity.remap(1, sources);
        self.scales.remap(3, sources);
        self.rotations.remap(4, sources);
        self.features.remap(scene.feature_dim, sources);
    }
}

fn linear_moments(map: &LinearMap) -> (Moments, Moments) {
    (Moments::zeros(map.weight.len()), Moments::zeros(map.bias.len()))
}

/// Optimizer state for the semantic heads.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadAdam {
    pub cfg: AdamConfig,
    pub step: u64,
    moments: [(Moments, Moments); 3],
}

impl HeadAdam {
    pub fn new(heads: &SemanticHeads, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            step: 0,
            moments: [
                linear_moments(&heads.omega_f),
                linear_moments(&heads.omega_s),
                linear_moments(&heads.w_psi),
            ],
        }
    }

    pub fn step(&mut self, heads: &mut SemanticHeads, grads: &HeadGrads, lr: f64) {
        self.step += 1;
        let (cfg, t) = (self.cfg, self.step);
        let pairs: [(&mut LinearMap, &LinearGrad); 3] = [
            (&mut heads.omega_f, &grads.omega_f),
            (&mut heads.omega_s, &grads.omega_s),
            (&mut heads.w_psi, &grads.w_psi),
        ];
        for ((map, g), (mw, mb)) in pairs.into_iter().zip(self.moments.iter_mut()) {
            mw.update(&mut map.weight, &g.weight, lr, &cfg, t);
            mb.update(&mut map.bias, &g.bias, lr, &cfg, t);
        }
    }
}

/// `lr_init → lr_final` log-linear decay over `max_steps`.
pub fn exponential_decay(lr_init: f64, lr_final: f64, step: usize, max_steps: usize) -> f64 {
    if max_steps == 0 {
        return lr_init;
    }
    let t = (step as f64 / max_steps as f64).clamp(0.0, 1.0);
    (lr_init.ln() * (1.0 - t) + lr_final.ln() * t).exp()
}
