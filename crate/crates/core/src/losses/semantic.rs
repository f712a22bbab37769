//! Segmentation logits `Ŝ = cos⟨ω_f(F̂), T⟩` and the supervised semantic loss.
//!
//! ω_f maps D → 512, but every quantity the losses need is an inner product
//! of `y = W F̂ + b` with a fixed vector or with itself. Those are evaluated
//! through `WᵀW`, `Wᵀb` and `Wᵀv`, so the 512-wide projection is never
//! materialized per pixel.

use crate::buffer::ImageBuf;
use crate::correspondence::Mask;
use crate::error::{Error, Result};

use super::heads::{HeadGrads, LinearGrad, SemanticHeads, TextBank, EMBED_DIM};

/// Label value of pixels that carry no supervision.
pub const IGNORE_LABEL: u16 = u16::MAX;
/// `‖ω_f(F̂)‖` below which cosines are defined as 0.
pub const ZERO_NORM_EPS: f64 = 1e-12;

/// Ground-truth semantic supervision for one view.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisionMaps {
    pub width: usize,
    pub height: usize,
    /// Per-pixel class label or [`IGNORE_LABEL`].
    pub labels: Vec<u16>,
    /// Optional dense target features (`H × W × 512`). Without them the
    /// target of a labeled pixel is the text-bank row of its label.
    pub features: Option<Vec<f32>>,
    /// Optional per-pixel class distribution (`H × W × M`); one-hot labels otherwise.
    pub relevancy: Option<Vec<f32>>,
}

impl SupervisionMaps {
    pub fn from_labels(width: usize, height: usize, labels: Vec<u16>) -> Self {
        Self {
            width,
            height,
            labels,
            features: None,
            relevancy: None,
        }
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let n = self.width * self.height;
        if self.labels.len() != n {
            return Err(Error::ShapeMismatch {
                context: "supervision labels",
                expected: n,
                actual: self.labels.len(),
            });
        }
        if let Some(bad) = self
            .labels
            .iter()
            .find(|&&l| l != IGNORE_LABEL && l as usize >= num_classes)
        {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        if let Some(f) = &self.features {
            if f.len() != n * EMBED_DIM {
                return Err(Error::ShapeMismatch {
                    context: "supervision features",
                    expected: n * EMBED_DIM,
                    actual: f.len(),
                });
            }
        }
        if let Some(r) = &self.relevancy {
            if r.len() != n * num_classes {
                return Err(Error::ShapeMismatch {
                    context: "supervision relevancy",
                    expected: n * num_classes,
                    actual: r.len(),
                });
            }
            for (p, dist) in r.chunks_exact(num_classes).enumerate() {
                let s: f64 = dist.iter().map(|&v| v as f64).sum();
                if (s - 1.0).abs() > 1e-5 {
                    return Err(Error::InvalidArgument(format!(
                        "relevancy at pixel {p} sums to {s}"
                    )));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn is_labeled(&self, p: usize) -> bool {
        self.labels[p] != IGNORE_LABEL
    }
}

/// Precomputed quadratic forms of ω_f.
pub(crate) struct FeatureProjector<'a> {
    pub heads: &'a SemanticHeads,
    pub dim: usize,
    /// `WᵀW`, D × D
    gram: Vec<f64>,
    /// `Wᵀb`
    wtb: Vec<f64>,
    bb: f64,
}

/// A set of 512-vectors pushed through `Wᵀ`.
pub(crate) struct ProjectedTable {
    pub rows: usize,
    /// `Wᵀ v` per row, rows × D
    pub wtv: Vec<f64>,
    /// `b · v`
    pub bv: Vec<f64>,
    pub norms: Vec<f64>,
}

impl<'a> FeatureProjector<'a> {
    pub fn new(heads: &'a SemanticHeads) -> Self {
        let map = &heads.omega_f;
        let d = map.in_dim;
        let mut gram = vec![0.0; d * d];
        let mut wtb = vec![0.0; d];
        let mut bb = 0.0;
        for o in 0..map.out_dim {
            let row = map.row(o);
            let b = map.bias[o] as f64;
            bb += b * b;
            for i in 0..d {
                let wi = row[i] as f64;
                wtb[i] += wi * b;
                for j in i..d {
                    gram[i * d + j] += wi * row[j] as f64;
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                gram[i * d + j] = gram[j * d + i];
            }
        }
        Self {
            heads,
            dim: d,
            gram,
            wtb,
            bb,
        }
    }

    /// `‖W f + b‖`
    pub fn norm(&self, f: &[f64]) -> f64 {
        let d = self.dim;
        let mut q = self.bb;
        for i in 0..d {
            let gi = &self.gram[i * d..(i + 1) * d];
            let mut s = 0.0;
            for j in 0..d {
                s += gi[j] * f[j];
            }
            q += f[i] * (s + 2.0 * self.wtb[i]);
        }
        q.max(0.0).sqrt()
    }

    /// `Wᵀ (W f + b)`
    pub fn gram_apply(&self, f: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            let gi = &self.gram[i * d..(i + 1) * d];
            out[i] = self.wtb[i] + gi.iter().zip(f).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    pub fn table(&self, vectors: &[f32], dim: usize) -> ProjectedTable {
        let rows = vectors.len() / dim;
        let mut t = ProjectedTable {
            rows,
            wtv: vec![0.0; rows * self.dim],
            bv: vec![0.0; rows],
            norms: vec![0.0; rows],
        };
        for r in 0..rows {
            let v = &vectors[r * dim..(r + 1) * dim];
            let (wtv, bv, n) = self.project(v);
            t.wtv[r * self.dim..(r + 1) * self.dim].copy_from_slice(&wtv);
            t.bv[r] = bv;
            t.norms[r] = n;
        }
        t
    }

    pub fn project(&self, v: &[f32]) -> (Vec<f64>, f64, f64) {
        let map = &self.heads.omega_f;
        let mut wtv = vec![0.0; self.dim];
        let mut bv = 0.0;
        let mut nn = 0.0;
        for (o, &vo) in v.iter().enumerate() {
            let vo = vo as f64;
            nn += vo * vo;
            bv += map.bias[o] as f64 * vo;
            for (acc, w) in wtv.iter_mut().zip(map.row(o)) {
                *acc += vo * *w as f64;
            }
        }
        (wtv, bv, nn.sqrt())
    }
}

impl ProjectedTable {
    #[inline]
    pub fn dot(&self, r: usize, f: &[f64]) -> f64 {
        let d = f.len();
        self.bv[r]
            + self.wtv[r * d..(r + 1) * d]
                .iter()
                .zip(f)
                .map(|(a, b)| a * b)
                .sum::<f64>()
    }
}

#[inline]
fn guarded_cos(dot: f64, y_norm: f64, v_norm: f64) -> f64 {
    if y_norm < ZERO_NORM_EPS || v_norm < ZERO_NORM_EPS {
        0.0
    } else {
        dot / (y_norm * v_norm)
    }
}

/// Per-pixel cosine similarity of ω_f(F̂) with every text-bank row.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationLogits {
    pub width: usize,
    pub height: usize,
    pub classes: usize,
    /// `H × W × M`
    pub values: Vec<f64>,
    /// `‖ω_f(F̂)‖` per pixel.
    pub norms: Vec<f64>,
}

impl SegmentationLogits {
    #[inline]
    pub fn at(&self, p: usize) -> &[f64] {
        &self.values[p * self.classes..(p + 1) * self.classes]
    }

    /// Per-pixel argmax of the raw cosines (lowest index on ties).
    pub fn argmax_labels(&self) -> Vec<u16> {
        (0..self.width * self.height)
            .map(|p| argmax(self.at(p)) as u16)
            .collect()
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn segmentation_logits(
    feature_img: &ImageBuf,
    heads: &SemanticHeads,
    bank: &TextBank,
) -> SegmentationLogits {
    let proj = FeatureProjector::new(heads);
    let table = proj.table(&bank.embeddings, bank.dim);
    logits_with(&proj, &table, feature_img)
}

pub(crate) fn logits_with(
    proj: &FeatureProjector,
    table: &ProjectedTable,
    feature_img: &ImageBuf,
) -> SegmentationLogits {
    let n = feature_img.num_pixels();
    let m = table.rows;
    let mut values = vec![0.0; n * m];
    let mut norms = vec![0.0; n];
    for p in 0..n {
        let f = feature_img.at(p);
        let y = proj.norm(f);
        norms[p] = y;
        for c in 0..m {
            values[p * m + c] = guarded_cos(table.dot(c, f), y, table.norms[c]);
        }
    }
    SegmentationLogits {
        width: feature_img.width,
        height: feature_img.height,
        classes: m,
        values,
        norms,
    }
}

/// Accumulates the adjoint of per-pixel cosines into dL/dF̂ and dL/dω_f.
///
/// For `cos = (y·v)/(‖y‖‖v‖)` the gradient with respect to `y` is
/// `v/(‖y‖‖v‖) − cos·y/‖y‖²`, i.e. a combination of table rows plus a
/// multiple β of `y` itself; both parts are folded back through `Wᵀ`.
pub(crate) struct CosineBackprop<'a> {
    proj: &'a FeatureProjector<'a>,
    table: &'a ProjectedTable,
    row_acc: Vec<f64>,
    row_sum: Vec<f64>,
    beta_outer: Vec<f64>,
    beta_vec: Vec<f64>,
    beta_sum: f64,
    raw: LinearGrad,
    scratch: Vec<f64>,
}

impl<'a> CosineBackprop<'a> {
    pub fn new(proj: &'a FeatureProjector<'a>, table: &'a ProjectedTable) -> Self {
        let d = proj.dim;
        Self {
            proj,
            table,
            row_acc: vec![0.0; table.rows * d],
            row_sum: vec![0.0; table.rows],
            beta_outer: vec![0.0; d * d],
            beta_vec: vec![0.0; d],
            beta_sum: 0.0,
            raw: LinearGrad::zeros(&proj.heads.omega_f),
            scratch: vec![0.0; d],
        }
    }

    /// Backprop of one pixel. `d_cos[m]` is dL/dŜ_m; `raw` is an optional extra
    /// target vector with its `(dL/dcos, Wᵀv, b·v, ‖v‖)`.
    pub fn pixel(
        &mut self,
        f: &[f64],
        y_norm: f64,
        cosines: &[f64],
        d_cos: &[f64],
        raw: Option<(&[f32], f64, &[f64], f64, f64)>,
        d_feature: &mut [f64],
    ) {
        let d = self.proj.dim;
        d_feature.iter_mut().for_each(|v| *v = 0.0);
        if y_norm < ZERO_NORM_EPS {
            return;
        }
        let mut beta = 0.0;
        for (m, (&g, &c)) in d_cos.iter().zip(cosines).enumerate() {
            if g == 0.0 || self.table.norms[m] < ZERO_NORM_EPS {
                continue;
            }
            let coef = g / (y_norm * self.table.norms[m]);
            beta -= g * c / (y_norm * y_norm);
            let wtv = &self.table.wtv[m * d..(m + 1) * d];
            let acc = &mut self.row_acc[m * d..(m + 1) * d];
            for k in 0..d {
                d_feature[k] += coef * wtv[k];
                acc[k] += coef * f[k];
            }
            self.row_sum[m] += coef;
        }
        if let Some((v, g, wtv, bv, v_norm)) = raw {
            if g != 0.0 && v_norm >= ZERO_NORM_EPS {
                let dot = bv + wtv.iter().zip(f).map(|(a, b)| a * b).sum::<f64>();
                let c = dot / (y_norm * v_norm);
                let coef = g / (y_norm * v_norm);
                beta -= g * c / (y_norm * y_norm);
                for k in 0..d {
                    d_feature[k] += coef * wtv[k];
                }
                let vf: Vec<f64> = v.iter().map(|&x| x as f64).collect();
                self.raw.add_outer(&vf, f, coef);
            }
        }
        if beta != 0.0 {
            self.proj.gram_apply(f, &mut self.scratch);
            for k in 0..d {
                d_feature[k] += beta * self.scratch[k];
                self.beta_vec[k] += beta * f[k];
                let row = &mut self.beta_outer[k * d..(k + 1) * d];
                for j in 0..d {
                    row[j] += beta * f[k] * f[j];
                }
            }
            self.beta_sum += beta;
        }
    }

    /// Writes the accumulated ω_f gradient.
    pub fn finish(self, table_vectors: &[f32], vec_dim: usize, grads: &mut HeadGrads) {
        let map = &self.proj.heads.omega_f;
        let d = self.proj.dim;
        let g = &mut grads.omega_f;
        for (a, b) in g.weight.iter_mut().zip(&self.raw.weight) {
            *a += b;
        }
        for (a, b) in g.bias.iter_mut().zip(&self.raw.bias) {
            *a += b;
        }
        for o in 0..map.out_dim {
            let gw = &mut g.weight[o * d..(o + 1) * d];
            // Σ_m v_m[o] · acc_m
            for m in 0..self.table.rows {
                let v = table_vectors[m * vec_dim + o] as f64;
                if v == 0.0 {
                    continue;
                }
                let acc = &self.row_acc[m * d..(m + 1) * d];
                for k in 0..d {
                    gw[k] += v * acc[k];
                }
                g.bias[o] += v * self.row_sum[m];
            }
            // (W B + b βᵀ)[o]
            let row = map.row(o);
            let b = map.bias[o] as f64;
            for k in 0..d {
                let mut s = 0.0;
                for j in 0..d {
                    s += row[j] as f64 * self.beta_outer[j * d + k];
                }
                gw[k] += s + b * self.beta_vec[k];
            }
            let wb: f64 = row
                .iter()
                .zip(&self.beta_vec)
                .map(|(w, v)| *w as f64 * v)
                .sum();
            g.bias[o] += wb + b * self.beta_sum;
        }
    }
}

/// Softmax of `ω_s(Ŝ)` for one pixel, written into `probs`; returns the
/// pre-softmax logits in `z`.
pub(crate) fn relevancy_probs(heads: &SemanticHeads, s: &[f64], z: &mut [f64], probs: &mut [f64]) {
    heads.omega_s.apply(s, z);
    softmax(z, probs);
}

pub(crate) fn softmax(z: &[f64], out: &mut [f64]) {
    let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - mx).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|v| *v /= sum);
}

/// Output of [`loss_semantic`].
#[derive(Debug, Clone)]
pub struct SemanticLoss {
    pub value: f64,
    pub cosine: f64,
    pub cross_entropy: f64,
    pub labeled_pixels: usize,
    pub d_feature: ImageBuf,
    pub heads: HeadGrads,
}

/// `mean(1 − cos(ω_f(F̂), F)) + mean CE(softmax(ω_s(Ŝ)), S)` over labeled pixels.
pub fn loss_semantic(
    feature_img: &ImageBuf,
    logits: &SegmentationLogits,
    sup: &SupervisionMaps,
    heads: &SemanticHeads,
    bank: &TextBank,
) -> Result<SemanticLoss> {
    let m = bank.len();
    sup.validate(m)?;
    heads.validate(feature_img.channels, m)?;
    if sup.width != feature_img.width || sup.height != feature_img.height {
        return Err(Error::ShapeMismatch {
            context: "supervision size",
            expected: feature_img.num_pixels(),
            actual: sup.width * sup.height,
        });
    }
    let proj = FeatureProjector::new(heads);
    let table = proj.table(&bank.embeddings, bank.dim);
    let n = feature_img.num_pixels();
    let labeled: Vec<usize> = (0..n).filter(|&p| sup.is_labeled(p)).collect();
    let mut grads = HeadGrads::zeros(heads);
    let mut d_feature = ImageBuf::zeros(feature_img.width, feature_img.height, feature_img.channels);
    if labeled.is_empty() {
        return Ok(SemanticLoss {
            value: 0.0,
            cosine: 0.0,
            cross_entropy: 0.0,
            labeled_pixels: 0,
            d_feature,
            heads: grads,
        });
    }
    let inv = 1.0 / labeled.len() as f64;
    let mut cos_total = 0.0;
    let mut ce_total = 0.0;
    let mut bp = CosineBackprop::new(&proj, &table);
    let mut z = vec![0.0; m];
    let mut probs = vec![0.0; m];
    let mut dz = vec![0.0; m];
    let mut d_s = vec![0.0; m];
    let mut d_f = vec![0.0; feature_img.channels];
    for &p in &labeled {
        let s = logits.at(p);
        let f = feature_img.at(p);
        let label = sup.labels[p] as usize;
        relevancy_probs(heads, s, &mut z, &mut probs);
        match &sup.relevancy {
            Some(r) => {
                let q = &r[p * m..(p + 1) * m];
                for c in 0..m {
                    let qc = q[c] as f64;
                    if qc > 0.0 {
                        ce_total -= qc * probs[c].max(1e-300).ln();
                    }
                    dz[c] = (probs[c] - qc) * inv;
                }
            }
            None => {
                ce_total -= probs[label].max(1e-300).ln();
                for c in 0..m {
                    dz[c] = (probs[c] - if c == label { 1.0 } else { 0.0 }) * inv;
                }
            }
        }
        grads.omega_s.add_outer(&dz, s, 1.0);
        heads.omega_s.apply_transpose(&dz, &mut d_s);
        let raw = match &sup.features {
            Some(feat) => {
                let v = &feat[p * EMBED_DIM..(p + 1) * EMBED_DIM];
                let (wtv, bv, v_norm) = proj.project(v);
                let dot = bv + wtv.iter().zip(f).map(|(a, b)| a * b).sum::<f64>();
                cos_total += 1.0 - guarded_cos(dot, logits.norms[p], v_norm);
                Some((v, wtv, bv, v_norm))
            }
            None => {
                cos_total += 1.0 - s[label];
                d_s[label] -= inv;
                None
            }
        };
        bp.pixel(
            f,
            logits.norms[p],
            s,
            &d_s,
            raw.as_ref()
                .map(|(v, wtv, bv, vn)| (*v, -inv, wtv.as_slice(), *bv, *vn)),
            &mut d_f,
        );
        d_feature.at_mut(p).copy_from_slice(&d_f);
    }
    bp.finish(&bank.embeddings, bank.dim, &mut grads);
    let cosine = cos_total * inv;
    let cross_entropy = ce_total * inv;
    Ok(SemanticLoss {
        value: cosine + cross_entropy,
        cosine,
        cross_entropy,
        labeled_pixels: labeled.len(),
        d_feature,
        heads: grads,
    })
}

/// Semantic loss on an augmented (generated) view. Identical functional form
/// to [`loss_semantic`]; there is deliberately no color term.
pub fn loss_generated_semantic(
    feature_img: &ImageBuf,
    logits: &SegmentationLogits,
    sup: &SupervisionMaps,
    heads: &SemanticHeads,
    bank: &TextBank,
) -> Result<SemanticLoss> {
    loss_semantic(feature_img, logits, sup, heads, bank)
}

/// Dominant class inside `mask` by majority vote of per-pixel argmax of ω_s(Ŝ).
/// Ties go to the lowest class index; an empty mask yields `None`.
pub fn phi_uniform(logits: &SegmentationLogits, mask: &Mask, heads: &SemanticHeads) -> Option<usize> {
    let m = logits.classes;
    let mut counts = vec![0usize; m];
    let mut z = vec![0.0; m];
    let mut any = false;
    for p in mask.iter_set() {
        heads.omega_s.apply(logits.at(p), &mut z);
        counts[argmax(&z)] += 1;
        any = true;
    }
    if !any {
        return None;
    }
    let mut best = 0;
    for c in 1..m {
        if counts[c] > counts[best] {
            best = c;
        }
    }
    Some(best)
}

/// Backprop of an arbitrary cotangent `d_logits` (`H × W × M`) on the
/// segmentation logits into the feature image and ω_f.
pub fn logits_backward(
    feature_img: &ImageBuf,
    logits: &SegmentationLogits,
    heads: &SemanticHeads,
    bank: &TextBank,
    d_logits: &[f64],
) -> Result<(ImageBuf, HeadGrads)> {
    let m = bank.len();
    let n = feature_img.num_pixels();
    if d_logits.len() != n * m {
        return Err(Error::ShapeMismatch {
            context: "d_logits length",
            expected: n * m,
            actual: d_logits.len(),
        });
    }
    let proj = FeatureProjector::new(heads);
    let table = proj.table(&bank.embeddings, bank.dim);
    let mut grads = HeadGrads::zeros(heads);
    let mut d_feature = ImageBuf::zeros(feature_img.width, feature_img.height, feature_img.channels);
    let mut bp = CosineBackprop::new(&proj, &table);
    let mut d_f = vec![0.0; feature_img.channels];
    for p in 0..n {
        let g = &d_logits[p * m..(p + 1) * m];
        if g.iter().all(|&v| v == 0.0) {
            continue;
        }
        bp.pixel(feature_img.at(p), logits.norms[p], logits.at(p), g, None, &mut d_f);
        d_feature.at_mut(p).copy_from_slice(&d_f);
    }
    bp.finish(&bank.embeddings, bank.dim, &mut grads);
    Ok((d_feature, grads))
}
