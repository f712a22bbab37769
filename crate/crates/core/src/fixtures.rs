//! Small random scenes and cameras for tests, benchmarks and examples.

use nalgebra::{Matrix4, Vector3};
use rand::Rng;

use crate::geom::{logit, Camera, Gaussian, GaussianSet};
use crate::sh;

/// Camera at the origin looking down +z with a square image.
pub fn axis_camera(size: u32, focal: f64) -> Camera {
    let c = (size as f64 - 1.0) / 2.0;
    Camera::new(focal, focal, c, c, size, size, Matrix4::identity()).expect("valid camera")
}

/// Uniform random unit quaternion `(w, x, y, z)`.
pub fn random_quat(rng: &mut impl Rng) -> [f32; 4] {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.1 && n <= 1.0 {
            return q.map(|v| (v / n) as f32);
        }
    }
}

/// Options for [`random_scene`].
#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub count: usize,
    pub sh_degree: usize,
    pub feature_dim: usize,
    /// Range of camera-space depth for an [`axis_camera`].
    pub depth: (f64, f64),
    /// Half-width of the lateral position range, as a fraction of depth.
    pub spread: f64,
    pub log_scale: (f64, f64),
    pub opacity: (f64, f64),
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            count: 50,
            sh_degree: 3,
            feature_dim: 8,
            depth: (1.5, 4.0),
            spread: 0.45,
            log_scale: (-3.5, -1.5),
            opacity: (0.05, 0.95),
        }
    }
}

/// Random scene in front of an [`axis_camera`].
pub fn random_scene(spec: &SceneSpec, rng: &mut impl Rng) -> GaussianSet {
    let mut scene = GaussianSet::new(spec.sh_degree, spec.feature_dim);
    let k = sh::num_coeffs(spec.sh_degree);
    for _ in 0..spec.count {
        let z = rng.random_range(spec.depth.0..spec.depth.1);
        let x = rng.random_range(-spec.spread..spec.spread) * z;
        let y = rng.random_range(-spec.spread..spec.spread) * z;
        let mut coeffs = Vec::with_capacity(k * 3);
        for i in 0..k {
            for _ in 0..3 {
                coeffs.push(if i == 0 {
                    sh::rgb_to_dc(rng.random_range(0.2..0.8)) as f32
                } else {
                    rng.random_range(-0.05..0.05)
                });
            }
        }
        let ls: [f32; 3] =
            std::array::from_fn(|_| rng.random_range(spec.log_scale.0..spec.log_scale.1) as f32);
        scene.push(&Gaussian {
            position: [x as f32, y as f32, z as f32],
            sh: coeffs,
            opacity_logit: logit(rng.random_range(spec.opacity.0..spec.opacity.1)) as f32,
            log_scale: ls,
            rotation: random_quat(rng),
            feature: (0..spec.feature_dim)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        });
    }
    scene
}

/// Camera at `eye` looking at `target` with world −y as image up.
pub fn look_at(eye: [f64; 3], target: [f64; 3], fov_y: f64, w: u32, h: u32) -> Camera {
    Camera::look_at(
        &Vector3::from(eye),
        &Vector3::from(target),
        &Vector3::new(0.0, 1.0, 0.0),
        fov_y,
        w,
        h,
    )
    .expect("valid camera")
}
