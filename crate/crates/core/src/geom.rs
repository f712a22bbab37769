//! Scene representation, pinhole camera and the 3D → 2D projection math.
//!
//! Camera space is +x right, +y down, +z forward. Pixel centers sit at
//! integer coordinates, so pixel `(x, y)` is sampled at exactly `(x, y)`.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Matrix4, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::sh;

/// Gaussians closer than this (camera-space z) are culled.
pub const NEAR_PLANE: f64 = 0.2;
/// Projected means must fall inside the image rectangle scaled by this factor.
pub const GUARD_BAND: f64 = 1.3;
/// Added to the diagonal of every projected covariance (pixels²).
pub const COV2D_BLUR: f64 = 0.3;
/// Default semantic feature dimension.
pub const FEATURE_DIM: usize = 32;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Pinhole camera with a rigid world-to-camera transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub world_to_camera: Matrix4<f64>,
}

impl Camera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        world_to_camera: Matrix4<f64>,
    ) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            world_to_camera,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `center` with camera-to-world rotation `rotation` (columns are
    /// the camera axes expressed in world coordinates).
    pub fn from_pose(
        rotation: &Matrix3<f64>,
        center: &Vector3<f64>,
        fx: f64,
        fy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let r_w2c = rotation.transpose();
        let t = -(r_w2c * center);
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r_w2c);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        Self::new(
            fx,
            fy,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
            m,
        )
    }

    /// Camera at `eye` looking at `target`; `down` is the approximate world
    /// direction that should map to +y in the image.
    pub fn look_at(
        eye: &Vector3<f64>,
        target: &Vector3<f64>,
        down: &Vector3<f64>,
        fov_y_deg: f64,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera("eye coincides with target".into()))?;
        let right = down
            .cross(&forward)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera("down vector parallel to view direction".into()))?;
        let y = forward.cross(&right);
        let rot = Matrix3::from_columns(&[right, y, forward]);
        let f = focal_from_fov(fov_y_deg, height);
        Self::from_pose(&rot, eye, f, f, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidCamera(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera("image dimensions must be >= 1".into()));
        }
        if !self.world_to_camera.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidCamera("pose has non-finite entries".into()));
        }
        let r = self.rotation();
        let err = (r.transpose() * r - Matrix3::identity()).amax();
        if err >= 1e-5 {
            return Err(Error::InvalidCamera(format!(
                "rotation block is not orthonormal (deviation {err:.3e})"
            )));
        }
        Ok(())
    }

    /// World-to-camera rotation block.
    #[inline]
    pub fn rotation(&self) -> Matrix3<f64> {
        self.world_to_camera.fixed_view::<3, 3>(0, 0).into_owned()
    }

    #[inline]
    pub fn translation(&self) -> Vector3<f64> {
        self.world_to_camera.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation().transpose() * self.translation())
    }

    /// Camera-to-world rotation.
    pub fn camera_to_world_rotation(&self) -> Matrix3<f64> {
        self.rotation().transpose()
    }

    #[inline]
    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p + self.translation()
    }

    pub fn num_pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Same pose, new image size; intrinsics rescaled so the field of view is preserved.
    pub fn resized(&self, width: u32, height: u32) -> Camera {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Camera {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: (self.cx + 0.5) * sx - 0.5,
            cy: (self.cy + 0.5) * sy - 0.5,
            width,
            height,
            world_to_camera: self.world_to_camera,
        }
    }
}

pub fn focal_from_fov(fov_y_deg: f64, height: u32) -> f64 {
    0.5 * height as f64 / (0.5 * fov_y_deg.to_radians()).tan()
}

/// Rotation matrix of a quaternion `(w, x, y, z)` after normalization.
pub fn quat_to_rotation(q: &[f64; 4]) -> Result<Matrix3<f64>> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if !(n > 1e-12) {
        return Err(Error::DegenerateRotation);
    }
    Ok(unit_quat_to_rotation(&[q[0] / n, q[1] / n, q[2] / n, q[3] / n]))
}

fn unit_quat_to_rotation(q: &[f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = *q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Σ = R·diag(exp(2·log_scale))·Rᵀ.
pub fn build_covariance3d(log_scale: &[f64; 3], quat: &[f64; 4]) -> Result<Matrix3<f64>> {
    let r = quat_to_rotation(quat)?;
    let s = Matrix3::from_diagonal(&Vector3::new(
        log_scale[0].exp(),
        log_scale[1].exp(),
        log_scale[2].exp(),
    ));
    let m = r * s;
    let cov = m * m.transpose();
    // symmetrize away rounding
    Ok((cov + cov.transpose()) * 0.5)
}

/// A Gaussian projected into the image plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projected2D {
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    pub depth: f64,
    pub in_frustum: bool,
}

/// Jacobian of the perspective projection at camera-space point `t`.
#[inline]
pub fn projection_jacobian(cam: &Camera, t: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / t.z;
    Matrix2x3::new(
        cam.fx * iz,
        0.0,
        -cam.fx * t.x * iz * iz,
        0.0,
        cam.fy * iz,
        -cam.fy * t.y * iz * iz,
    )
}

pub fn project_gaussian(cam: &Camera, position: &Vector3<f64>, cov3d: &Matrix3<f64>) -> Projected2D {
    let w = cam.rotation();
    let t = w * position + cam.translation();
    let depth = t.z;
    if depth <= NEAR_PLANE {
        return Projected2D {
            mean2d: Vector2::new(f64::NAN, f64::NAN),
            cov2d: Matrix2::identity() * COV2D_BLUR,
            depth,
            in_frustum: false,
        };
    }
    let mean2d = Vector2::new(
        cam.fx * t.x / t.z + cam.cx,
        cam.fy * t.y / t.z + cam.cy,
    );
    let j = projection_jacobian(cam, &t);
    let jw = j * w;
    let mut cov2d = jw * cov3d * jw.transpose();
    cov2d[(0, 0)] += COV2D_BLUR;
    cov2d[(1, 1)] += COV2D_BLUR;
    let sym = 0.5 * (cov2d[(0, 1)] + cov2d[(1, 0)]);
    cov2d[(0, 1)] = sym;
    cov2d[(1, 0)] = sym;

    let (w_img, h_img) = (cam.width as f64, cam.height as f64);
    let (ccx, ccy) = ((w_img - 1.0) / 2.0, (h_img - 1.0) / 2.0);
    let in_band = (mean2d.x - ccx).abs() <= GUARD_BAND * w_img / 2.0
        && (mean2d.y - ccy).abs() <= GUARD_BAND * h_img / 2.0;
    Projected2D {
        mean2d,
        cov2d,
        depth,
        in_frustum: in_band && mean2d.iter().all(|v| v.is_finite()),
    }
}

/// Gradients of the projection stage with respect to a Gaussian's raw parameters.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct ProjectionGrads {
    pub position: [f64; 3],
    pub log_scale: [f64; 3],
    pub rotation: [f64; 4],
}

/// Backward of `mean2d` and `conic = cov2d⁻¹` through projection and
/// covariance construction. `d_conic` is the full (symmetric) matrix gradient.
pub(crate) fn project_backward(
    cam: &Camera,
    position: &Vector3<f64>,
    log_scale: &[f64; 3],
    quat: &[f64; 4],
    d_mean2d: &Vector2<f64>,
    d_conic: &Matrix2<f64>,
) -> ProjectionGrads {
    let w = cam.rotation();
    let t = w * position + cam.translation();
    let qn = (quat[0] * quat[0] + quat[1] * quat[1] + quat[2] * quat[2] + quat[3] * quat[3]).sqrt();
    let q = [quat[0] / qn, quat[1] / qn, quat[2] / qn, quat[3] / qn];
    let r = unit_quat_to_rotation(&q);
    let s = Vector3::new(log_scale[0].exp(), log_scale[1].exp(), log_scale[2].exp());
    let m = r * Matrix3::from_diagonal(&s);
    let cov3 = m * m.transpose();
    let cov_cam = w * cov3 * w.transpose();
    let j = projection_jacobian(cam, &t);
    let mut cov2 = j * cov_cam * j.transpose();
    cov2[(0, 0)] += COV2D_BLUR;
    cov2[(1, 1)] += COV2D_BLUR;
    let conic = cov2.try_inverse().unwrap_or_else(Matrix2::zeros);

    // conic = cov2⁻¹  ⇒  dL/dcov2 = −conic · G · conic
    let d_cov2 = -(conic * d_conic * conic);
    let d_cov_cam = j.transpose() * d_cov2 * j;
    let d_j: Matrix2x3<f64> = 2.0 * d_cov2 * j * cov_cam;
    let d_cov3 = w.transpose() * d_cov_cam * w;
    let d_m = 2.0 * d_cov3 * m;
    let rt_dm = r.transpose() * d_m;
    let d_log_scale = [
        rt_dm[(0, 0)] * s.x,
        rt_dm[(1, 1)] * s.y,
        rt_dm[(2, 2)] * s.z,
    ];
    let d_r = d_m * Matrix3::from_diagonal(&s);
    let d_q_unit = rotation_grad_to_quat(&q, &d_r);
    let dot = q.iter().zip(&d_q_unit).map(|(a, b)| a * b).sum::<f64>();
    let d_quat = [
        (d_q_unit[0] - q[0] * dot) / qn,
        (d_q_unit[1] - q[1] * dot) / qn,
        (d_q_unit[2] - q[2] * dot) / qn,
        (d_q_unit[3] - q[3] * dot) / qn,
    ];

    let iz = 1.0 / t.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let (fx, fy) = (cam.fx, cam.fy);
    let mut d_t = Vector3::new(
        d_mean2d.x * fx * iz,
        d_mean2d.y * fy * iz,
        -(d_mean2d.x * fx * t.x + d_mean2d.y * fy * t.y) * iz2,
    );
    d_t.x += d_j[(0, 2)] * (-fx * iz2);
    d_t.y += d_j[(1, 2)] * (-fy * iz2);
    d_t.z += d_j[(0, 0)] * (-fx * iz2)
        + d_j[(0, 2)] * (2.0 * fx * t.x * iz3)
        + d_j[(1, 1)] * (-fy * iz2)
        + d_j[(1, 2)] * (2.0 * fy * t.y * iz3);
    let d_p = w.transpose() * d_t;
    ProjectionGrads {
        position: [d_p.x, d_p.y, d_p.z],
        log_scale: d_log_scale,
        rotation: d_quat,
    }
}

/// dL/dq for a unit quaternion given dL/dR.
fn rotation_grad_to_quat(q: &[f64; 4], d: &Matrix3<f64>) -> [f64; 4] {
    let [w, x, y, z] = *q;
    let g = |i: usize, j: usize| d[(i, j)];
    [
        2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1)),
        2.0 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2)
            + z * g(2, 0)
            + w * g(2, 1)
            - 2.0 * x * g(2, 2)),
        2.0 * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2)
            - w * g(2, 0)
            + z * g(2, 1)
            - 2.0 * y * g(2, 2)),
        2.0 * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1)
            + y * g(1, 2)
            + x * g(2, 0)
            + y * g(2, 1)),
    ]
}

/// The scene model: N anisotropic Gaussians with color and semantic attributes.
///
/// Every per-Gaussian array is parallel. Parameters are stored raw (before
/// activation); opacity is `sigmoid(opacity_logit)` and scale `exp(log_scale)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSet {
    pub sh_degree: usize,
    pub feature_dim: usize,
    pub positions: Vec<[f32; 3]>,
    /// `N × (sh_degree+1)² × 3`, coefficient-major.
    pub sh_coeffs: Vec<f32>,
    pub opacity_logits: Vec<f32>,
    pub log_scales: Vec<[f32; 3]>,
    /// `(w, x, y, z)`.
    pub rotations: Vec<[f32; 4]>,
    /// `N × feature_dim`.
    pub features: Vec<f32>,
}

/// One Gaussian's parameters, used for construction and transfer between sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub position: [f32; 3],
    pub sh: Vec<f32>,
    pub opacity_logit: f32,
    pub log_scale: [f32; 3],
    pub rotation: [f32; 4],
    pub feature: Vec<f32>,
}

impl GaussianSet {
    pub fn new(sh_degree: usize, feature_dim: usize) -> Self {
        assert!(sh_degree <= sh::MAX_DEGREE, "SH degree must be in 0..=3");
        Self {
            sh_degree,
            feature_dim,
            positions: Vec::new(),
            sh_coeffs: Vec::new(),
            opacity_logits: Vec::new(),
            log_scales: Vec::new(),
            rotations: Vec::new(),
            features: Vec::new(),
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Number of SH coefficients per channel.
    #[inline]
    pub fn sh_per_channel(&self) -> usize {
        sh::num_coeffs(self.sh_degree)
    }

    #[inline]
    pub fn sh_stride(&self) -> usize {
        self.sh_per_channel() * 3
    }

    #[inline]
    pub fn sh(&self, i: usize) -> &[f32] {
        let s = self.sh_stride();
        &self.sh_coeffs[i * s..(i + 1) * s]
    }

    #[inline]
    pub fn sh_mut(&mut self, i: usize) -> &mut [f32] {
        let s = self.sh_stride();
        &mut self.sh_coeffs[i * s..(i + 1) * s]
    }

    #[inline]
    pub fn feature(&self, i: usize) -> &[f32] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    #[inline]
    pub fn feature_mut(&mut self, i: usize) -> &mut [f32] {
        let d = self.feature_dim;
        &mut self.features[i * d..(i + 1) * d]
    }

    #[inline]
    pub fn opacity(&self, i: usize) -> f64 {
        sigmoid(self.opacity_logits[i] as f64)
    }

    pub fn scale(&self, i: usize) -> [f64; 3] {
        let s = self.log_scales[i];
        [(s[0] as f64).exp(), (s[1] as f64).exp(), (s[2] as f64).exp()]
    }

    pub fn position(&self, i: usize) -> Vector3<f64> {
        let p = self.positions[i];
        Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64)
    }

    pub fn covariance(&self, i: usize) -> Result<Matrix3<f64>> {
        let s = self.log_scales[i];
        let q = self.rotations[i];
        build_covariance3d(
            &[s[0] as f64, s[1] as f64, s[2] as f64],
            &[q[0] as f64, q[1] as f64, q[2] as f64, q[3] as f64],
        )
    }

    pub fn push(&mut self, g: &Gaussian) {
        assert_eq!(g.sh.len(), self.sh_stride(), "SH coefficient count");
        assert_eq!(g.feature.len(), self.feature_dim, "feature dimension");
        self.positions.push(g.position);
        self.sh_coeffs.extend_from_slice(&g.sh);
        self.opacity_logits.push(g.opacity_logit);
        self.log_scales.push(g.log_scale);
        self.rotations.push(g.rotation);
        self.features.extend_from_slice(&g.feature);
    }

    pub fn get(&self, i: usize) -> Gaussian {
        Gaussian {
            position: self.positions[i],
            sh: self.sh(i).to_vec(),
            opacity_logit: self.opacity_logits[i],
            log_scale: self.log_scales[i],
            rotation: self.rotations[i],
            feature: self.feature(i).to_vec(),
        }
    }

    /// New set containing the Gaussians at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> GaussianSet {
        let mut out = GaussianSet::new(self.sh_degree, self.feature_dim);
        let (s, d) = (self.sh_stride(), self.feature_dim);
        out.positions = indices.iter().map(|&i| self.positions[i]).collect();
        out.opacity_logits = indices.iter().map(|&i| self.opacity_logits[i]).collect();
        out.log_scales = indices.iter().map(|&i| self.log_scales[i]).collect();
        out.rotations = indices.iter().map(|&i| self.rotations[i]).collect();
        out.sh_coeffs = Vec::with_capacity(indices.len() * s);
        out.features = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            out.sh_coeffs.extend_from_slice(self.sh(i));
            out.features.extend_from_slice(self.feature(i));
        }
        out
    }

    /// Appends all Gaussians of `other` (same degree and feature dimension).
    pub fn extend(&mut self, other: &GaussianSet) {
        assert_eq!(self.sh_degree, other.sh_degree);
        assert_eq!(self.feature_dim, other.feature_dim);
        self.positions.extend_from_slice(&other.positions);
        self.sh_coeffs.extend_from_slice(&other.sh_coeffs);
        self.opacity_logits.extend_from_slice(&other.opacity_logits);
        self.log_scales.extend_from_slice(&other.log_scales);
        self.rotations.extend_from_slice(&other.rotations);
        self.features.extend_from_slice(&other.features);
    }

    pub fn normalize_rotations(&mut self) {
        for q in &mut self.rotations {
            let n = q.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>().sqrt();
            if n > 1e-12 {
                for v in q.iter_mut() {
                    *v = (*v as f64 / n) as f32;
                }
            } else {
                *q = [1.0, 0.0, 0.0, 0.0];
            }
        }
    }

    /// Same Gaussians, SH truncated or zero-extended to `degree`.
    pub fn with_sh_degree(&self, degree: usize) -> GaussianSet {
        let k_old = self.sh_per_channel();
        let k_new = sh::num_coeffs(degree);
        let mut out = self.clone();
        out.sh_degree = degree;
        out.sh_coeffs = Vec::with_capacity(self.len() * k_new * 3);
        for i in 0..self.len() {
            let src = self.sh(i);
            for k in 0..k_new {
                for c in 0..3 {
                    out.sh_coeffs.push(if k < k_old { src[k * 3 + c] } else { 0.0 });
                }
            }
        }
        out
    }

    /// Checks the array-parallelism invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let check = |name: &str, got: usize, want: usize| {
            if got != want {
                Err(Error::InvalidScene(format!("{name} has length {got}, expected {want}")))
            } else {
                Ok(())
            }
        };
        check("sh_coeffs", self.sh_coeffs.len(), n * self.sh_stride())?;
        check("opacity_logits", self.opacity_logits.len(), n)?;
        check("log_scales", self.log_scales.len(), n)?;
        check("rotations", self.rotations.len(), n)?;
        check("features", self.features.len(), n * self.feature_dim)?;
        if self.sh_degree > sh::MAX_DEGREE {
            return Err(Error::InvalidScene(format!("SH degree {} > 3", self.sh_degree)));
        }
        Ok(())
    }

    /// Axis-aligned bounding box of the positions.
    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        if self.is_empty() {
            return None;
        }
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for i in 0..self.len() {
            let p = self.position(i);
            lo = lo.inf(&p);
            hi = hi.sup(&p);
        }
        Some((lo, hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_quat(rng: &mut impl Rng) -> [f64; 4] {
        let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        q
    }

    #[test]
    fn covariance_identity_case() {
        let c = build_covariance3d(&[0.0; 3], &[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((c - Matrix3::identity()).amax() < 1e-15);
    }

    #[test]
    fn isotropic_covariance_is_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: f64 = 0.37;
        for _ in 0..20 {
            let q = random_quat(&mut rng);
            let c = build_covariance3d(&[a.ln(); 3], &q).unwrap();
            assert!((c - Matrix3::identity() * a * a).amax() < 1e-12);
        }
    }

    #[test]
    fn covariance_matches_eigendecomposition() {
        // Σ's eigenvalues are exp(2 s) and its eigenvectors the rotated axes.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let s: [f64; 3] = std::array::from_fn(|_| rng.random_range(-2.0..1.0));
            let q = random_quat(&mut rng);
            let c = build_covariance3d(&s, &q).unwrap();
            assert!((c - c.transpose()).amax() < 1e-6);
            let eig = c.symmetric_eigen();
            let recon = eig.eigenvectors
                * Matrix3::from_diagonal(&eig.eigenvalues)
                * eig.eigenvectors.transpose();
            assert!((recon - c).amax() < 1e-9);
            let mut got: Vec<f64> = eig.eigenvalues.iter().copied().collect();
            let mut want: Vec<f64> = s.iter().map(|v| (2.0 * v).exp()).collect();
            got.sort_by(|a, b| a.partial_cmp(b).unwrap());
            want.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-9 * w.max(1.0), "{g} vs {w}");
            }
        }
    }

    #[test]
    fn covariance_double_cover() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let s: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let q = random_quat(&mut rng);
            let nq = q.map(|v| -v);
            let a = build_covariance3d(&s, &q).unwrap();
            let b = build_covariance3d(&s, &nq).unwrap();
            assert!((a - b).amax() < 1e-12);
        }
    }

    #[test]
    fn zero_quaternion_is_rejected() {
        assert!(matches!(
            build_covariance3d(&[0.0; 3], &[0.0; 4]),
            Err(Error::DegenerateRotation)
        ));
    }

    fn test_camera() -> Camera {
        Camera::new(50.0, 50.0, 15.5, 15.5, 32, 32, Matrix4::identity()).unwrap()
    }

    #[test]
    fn on_axis_projects_to_principal_point() {
        let cam = test_camera();
        let p = project_gaussian(&cam, &Vector3::new(0.0, 0.0, 3.0), &Matrix3::identity());
        assert!(p.in_frustum);
        assert_eq!(p.mean2d, Vector2::new(15.5, 15.5));
        assert_eq!(p.depth, 3.0);
    }

    #[test]
    fn near_plane_culls() {
        let cam = test_camera();
        let p = project_gaussian(&cam, &Vector3::new(0.0, 0.0, 0.01), &Matrix3::identity());
        assert!(!p.in_frustum);
    }

    #[test]
    fn guard_band_culls_far_off_screen() {
        let cam = test_camera();
        let p = project_gaussian(&cam, &Vector3::new(5.0, 0.0, 1.0), &Matrix3::identity());
        assert!(!p.in_frustum);
        let p = project_gaussian(&cam, &Vector3::new(0.35, 0.0, 1.0), &Matrix3::identity());
        assert!(p.in_frustum, "inside the 1.3x band");
    }

    #[test]
    fn cov2d_matches_finite_difference_jacobian() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cam = Camera::look_at(
            &Vector3::new(0.3, -0.2, -2.0),
            &Vector3::zeros(),
            &Vector3::new(0.0, 1.0, 0.0),
            60.0,
            64,
            48,
        )
        .unwrap();
        for _ in 0..20 {
            let pos = Vector3::new(
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            );
            let s: [f64; 3] = std::array::from_fn(|_| rng.random_range(-3.0..-1.0));
            let cov = build_covariance3d(&s, &random_quat(&mut rng)).unwrap();
            let proj = project_gaussian(&cam, &pos, &cov);
            // numerical Jacobian of the world → pixel map
            let f = |p: &Vector3<f64>| {
                let t = cam.to_camera(p);
                Vector2::new(cam.fx * t.x / t.z + cam.cx, cam.fy * t.y / t.z + cam.cy)
            };
            let h = 1e-5;
            let mut jac = Matrix2x3::zeros();
            for k in 0..3 {
                let mut e = Vector3::zeros();
                e[k] = h;
                let d = (f(&(pos + e)) - f(&(pos - e))) / (2.0 * h);
                jac.set_column(k, &d);
            }
            let mut want = jac * cov * jac.transpose();
            want[(0, 0)] += COV2D_BLUR;
            want[(1, 1)] += COV2D_BLUR;
            let rel = (proj.cov2d - want).amax() / want.amax();
            assert!(rel < 1e-3, "relative error {rel}");
        }
    }

    #[test]
    fn projection_is_translation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cam = Camera::look_at(
            &Vector3::new(0.1, 0.2, -2.5),
            &Vector3::new(0.0, 0.1, 0.0),
            &Vector3::new(0.0, 1.0, 0.0),
            55.0,
            40,
            40,
        )
        .unwrap();
        for _ in 0..20 {
            let shift = Vector3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            );
            let pos = Vector3::new(rng.random_range(-0.4..0.4), 0.1, 0.2);
            let cov = build_covariance3d(&[-2.0, -2.5, -1.5], &random_quat(&mut rng)).unwrap();
            let a = project_gaussian(&cam, &pos, &cov);
            let moved = Camera::from_pose(
                &cam.camera_to_world_rotation(),
                &(cam.center() + shift),
                cam.fx,
                cam.fy,
                cam.width,
                cam.height,
            )
            .unwrap();
            let b = project_gaussian(&moved, &(pos + shift), &cov);
            assert!((a.mean2d - b.mean2d).amax() < 1e-6);
            assert!((a.cov2d - b.cov2d).amax() < 1e-6);
            assert!((a.depth - b.depth).abs() < 1e-6);
        }
    }

    #[test]
    fn camera_rejects_bad_intrinsics_and_rotation() {
        assert!(Camera::new(0.0, 1.0, 0.0, 0.0, 4, 4, Matrix4::identity()).is_err());
        assert!(Camera::new(1.0, 1.0, 0.0, 0.0, 0, 4, Matrix4::identity()).is_err());
        let mut m = Matrix4::identity();
        m[(0, 0)] = 1.1;
        assert!(Camera::new(1.0, 1.0, 0.0, 0.0, 4, 4, m).is_err());
    }

    #[test]
    fn camera_center_round_trip() {
        let eye = Vector3::new(1.0, -0.5, 2.0);
        let cam = Camera::look_at(&eye, &Vector3::zeros(), &Vector3::new(0.0, 1.0, 0.0), 60.0, 8, 8)
            .unwrap();
        assert!((cam.center() - eye).amax() < 1e-12);
        let t = cam.to_camera(&Vector3::zeros());
        assert!(t.x.abs() < 1e-12 && t.y.abs() < 1e-12 && t.z > 0.0);
    }
}
