//! Learnable per-pixel linear heads and the class text bank.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Width of the class-embedding space.
pub const EMBED_DIM: usize = 512;
/// Output width of the contrastive projection head.
pub const CONTRASTIVE_DIM: usize = 16;
/// Initial diagonal of the relevancy head; scales cosines into usable logits.
pub const RELEVANCY_INIT_GAIN: f32 = 10.0;

/// `y = W x + b`, `W` stored row-major as `out_dim × in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl LinearMap {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn random(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, 1.0 / (in_dim as f64).sqrt()).unwrap();
        Self {
            in_dim,
            out_dim,
            weight: (0..in_dim * out_dim)
                .map(|_| normal.sample(rng) as f32)
                .collect(),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn scaled_identity(dim: usize, gain: f32) -> Self {
        let mut m = Self::zeros(dim, dim);
        for i in 0..dim {
            m.weight[i * dim + i] = gain;
        }
        m
    }

    #[inline]
    pub fn row(&self, o: usize) -> &[f32] {
        &self.weight[o * self.in_dim..(o + 1) * self.in_dim]
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.in_dim);
        for (o, y) in out.iter_mut().enumerate().take(self.out_dim) {
            *y = self.bias[o] as f64
                + self
                    .row(o)
                    .iter()
                    .zip(x)
                    .map(|(w, v)| *w as f64 * v)
                    .sum::<f64>();
        }
    }

    /// `Wᵀ g`
    pub fn apply_transpose(&self, g: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (o, &go) in g.iter().enumerate().take(self.out_dim) {
            if go == 0.0 {
                continue;
            }
            for (v, w) in out.iter_mut().zip(self.row(o)) {
                *v += go * *w as f64;
            }
        }
    }
}

/// Gradient buffers shaped like a [`LinearMap`].
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearGrad {
    pub fn zeros(map: &LinearMap) -> Self {
        Self {
            weight: vec![0.0; map.weight.len()],
            bias: vec![0.0; map.bias.len()],
        }
    }

    /// Accumulates the outer product `g xᵀ` and `g` into the bias.
    pub fn add_outer(&mut self, g: &[f64], x: &[f64], scale: f64) {
        let in_dim = x.len();
        for (o, &go) in g.iter().enumerate() {
            if go == 0.0 {
                continue;
            }
            let s = go * scale;
            self.bias[o] += s;
            for (w, v) in self.weight[o * in_dim..(o + 1) * in_dim].iter_mut().zip(x) {
                *w += s * v;
            }
        }
    }

    fn add(&mut self, other: &LinearGrad, s: f64) {
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            *a += s * b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += s * b;
        }
    }

    fn is_finite(&self) -> bool {
        self.weight.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

/// ω_f (D → 512), ω_s (M → M) and W_ψ (D → 16).
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticHeads {
    pub omega_f: LinearMap,
    pub omega_s: LinearMap,
    pub w_psi: LinearMap,
}

impl SemanticHeads {
    /// Random feature heads and a scaled-identity relevancy head.
    pub fn new(feature_dim: usize, num_classes: usize, rng: &mut impl Rng) -> Self {
        Self {
            omega_f: LinearMap::random(feature_dim, EMBED_DIM, rng),
            omega_s: LinearMap::scaled_identity(num_classes, RELEVANCY_INIT_GAIN),
            w_psi: LinearMap::random(feature_dim, CONTRASTIVE_DIM, rng),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.omega_f.in_dim
    }

    pub fn num_classes(&self) -> usize {
        self.omega_s.in_dim
    }

    pub fn validate(&self, feature_dim: usize, num_classes: usize) -> Result<()> {
        let ok = self.omega_f.in_dim == feature_dim
            && self.omega_f.out_dim == EMBED_DIM
            && self.omega_s.in_dim == num_classes
            && self.omega_s.out_dim == num_classes
            && self.w_psi.in_dim == feature_dim;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "head shapes do not match D={feature_dim}, M={num_classes}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub omega_f: LinearGrad,
    pub omega_s: LinearGrad,
    pub w_psi: LinearGrad,
}

impl HeadGrads {
    pub fn zeros(heads: &SemanticHeads) -> Self {
        Self {
            omega_f: LinearGrad::zeros(&heads.omega_f),
            omega_s: LinearGrad::zeros(&heads.omega_s),
            w_psi: LinearGrad::zeros(&heads.w_psi),
        }
    }

    pub fn add_scaled(&mut self, other: &HeadGrads, s: f64) {
        self.omega_f.add(&other.omega_f, s);
        self.omega_s.add(&other.omega_s, s);
        self.w_psi.add(&other.w_psi, s);
    }

    pub fn is_finite(&self) -> bool {
        self.omega_f.is_finite() && self.omega_s.is_finite() && self.w_psi.is_finite()
    }
}

/// Class names and their unit-norm embeddings (`M × dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct TextBank {
    pub names: Vec<String>,
    pub dim: usize,
    pub embeddings: Vec<f32>,
}

impl TextBank {
    pub fn new(names: Vec<String>, dim: usize, embeddings: Vec<f32>) -> Result<Self> {
        let bank = Self {
            names,
            dim,
            embeddings,
        };
        bank.validate()?;
        Ok(bank)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn row(&self, m: usize) -> &[f32] {
        &self.embeddings[m * self.dim..(m + 1) * self.dim]
    }

    pub fn validate(&self) -> Result<()> {
        if self.embeddings.len() != self.names.len() * self.dim {
            return Err(Error::ShapeMismatch {
                context: "text bank embeddings",
                expected: self.names.len() * self.dim,
                actual: self.embeddings.len(),
            });
        }
        for m in 0..self.len() {
            let n = self.row(m).iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
            if (n - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!(
                    "text bank row {m} ({}) has norm {n}",
                    self.names[m]
                )));
            }
        }
        Ok(())
    }

    /// Case-insensitive exact match, then a unique case-insensitive prefix match.
    pub fn resolve(&self, query: &str) -> Option<usize> {
        let q = query.trim().to_lowercase();
        if q.is_empty() {
            return None;
        }
        if let Some(i) = self.names.iter().position(|n| n.to_lowercase() == q) {
            return Some(i);
        }
        let mut hits = self
            .names
            .iter()
            .enumerate()
            .filter(|(_, n)| n.to_lowercase().starts_with(&q));
        match (hits.next(), hits.next()) {
            (Some((i, _)), None) => Some(i),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bank() -> TextBank {
        let names = ["floor", "wall", "window", "Table"].map(String::from).to_vec();
        let mut emb = vec![0.0f32; 4 * 8];
        for m in 0..4 {
            emb[m * 8 + m] = 1.0;
        }
        TextBank::new(names, 8, emb).unwrap()
    }

    #[test]
    fn query_resolution() {
        let b = bank();
        assert_eq!(b.resolve("FLOOR"), Some(0));
        assert_eq!(b.resolve("table"), Some(3));
        assert_eq!(b.resolve("fl"), Some(0));
        assert_eq!(b.resolve("w"), None, "ambiguous prefix");
        assert_eq!(b.resolve("win"), Some(2));
        assert_eq!(b.resolve("sofa"), None);
        assert_eq!(b.resolve(""), None);
    }

    #[test]
    fn bank_rejects_non_unit_rows() {
        assert!(TextBank::new(vec!["a".into()], 2, vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn transpose_is_adjoint() {
        let mut rng = rand::rng();
        let m = LinearMap::random(5, 7, &mut rng);
        let x: Vec<f64> = (0..5).map(|i| i as f64 * 0.3 - 0.5).collect();
        let g: Vec<f64> = (0..7).map(|i| 1.0 - i as f64 * 0.2).collect();
        let mut y = vec![0.0; 7];
        m.apply(&x, &mut y);
        let mut wt = vec![0.0; 5];
        m.apply_transpose(&g, &mut wt);
        let lhs: f64 = g.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>()
            - g.iter().zip(&m.bias).map(|(a, b)| a * *b as f64).sum::<f64>();
        let rhs: f64 = wt.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }
}
