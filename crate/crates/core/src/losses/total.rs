//! Weighting of the individual terms into the training objective.

use serde::{Deserialize, Serialize};

pub const DEFAULT_LAMBDA_WARMUP: usize = 4000;

/// Consistency weight: 0 before `warmup` iterations, 1 afterwards.
pub fn lambda(iteration: usize, warmup: usize) -> f64 {
    if iteration < warmup {
        0.0
    } else {
        1.0
    }
}

/// Values of every loss term at one iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub color: f64,
    pub semantic: f64,
    pub generated_semantic: f64,
    pub generated_color: f64,
    pub local: f64,
    pub inter: f64,
    pub intra: f64,
    pub spc3d: f64,
    pub lambda: f64,
}

impl LossBreakdown {
    /// `L_C + L_S + L_GS + L_S3d + λ (L_SPC2d + L_SPC3d)`, where the 2D
    /// consistency term is `L_inter + L_intra`.
    pub fn total(&self) -> f64 {
        self.color
            + self.semantic
            + self.generated_semantic
            + self.generated_color
            + self.local
            + self.lambda * (self.inter + self.intra + self.spc3d)
    }

    pub fn is_finite(&self) -> bool {
        self.total().is_finite()
    }
}
