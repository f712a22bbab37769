//! Synthetic labeled teacher rooms, the class-embedding oracle, camera rigs,
//! augmented views and seed points.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::buffer::ImageBuf;
use crate::correspondence::{render_labels, OracleSegmenter};
use crate::error::{Error, Result};
use crate::geom::{focal_from_fov, logit, Camera, Gaussian, GaussianSet, FEATURE_DIM};
use crate::io::Checkpoint;
use crate::losses::{LinearMap, SemanticHeads, TextBank, EMBED_DIM, IGNORE_LABEL};
use crate::raster::render;
use crate::sgi::LayoutPoints;
use crate::sh;

pub const CLASS_NAMES: [&str; 8] = [
    "floor", "wall", "ceiling", "table", "sofa", "cabinet", "lamp", "bed",
];
/// Maximum pairwise |cos| between oracle class embeddings.
pub const EMBEDDING_MAX_COS: f64 = 0.3;

fn class_name(c: usize) -> String {
    CLASS_NAMES
        .get(c)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("object{c}"))
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Seeded class embeddings plus a fixed orthonormal map between the
/// D-dimensional feature space and the embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingOracle {
    pub bank: TextBank,
    pub feature_dim: usize,
    /// `D × 512`, orthonormal rows whose span contains every class embedding.
    pub projection: Vec<f64>,
}

impl EmbeddingOracle {
    pub fn new(num_classes: usize, feature_dim: usize, seed: u64) -> Result<Self> {
        if feature_dim < num_classes {
            return Err(Error::InvalidArgument(format!(
                "feature dimension {feature_dim} cannot embed {num_classes} classes"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_e3b0);
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(num_classes);
        let mut attempts = 0;
        while rows.len() < num_classes {
            attempts += 1;
            if attempts > 10_000 {
                return Err(Error::Generation("embedding rejection sampling did not converge".into()));
            }
            let mut v: Vec<f64> = (0..EMBED_DIM).map(|_| StandardNormal.sample(&mut rng)).collect();
            normalize(&mut v);
            let ok = rows.iter().all(|r| {
                let c: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
                c.abs() < EMBEDDING_MAX_COS
            });
            if ok {
                rows.push(v);
            }
        }
        let mut embeddings: Vec<f32> = Vec::with_capacity(num_classes * EMBED_DIM);
        for r in &rows {
            let mut v: Vec<f64> = r.iter().map(|&x| x as f32 as f64).collect();
            normalize(&mut v);
            embeddings.extend(v.iter().map(|&x| x as f32));
        }
        let bank = TextBank::new((0..num_classes).map(class_name).collect(), EMBED_DIM, embeddings)?;
        // Gram-Schmidt over the stored embeddings, then random fill-in directions.
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(feature_dim);
        let mut candidates: Vec<Vec<f64>> = (0..num_classes)
            .map(|m| bank.row(m).iter().map(|&x| x as f64).collect())
            .collect();
        while basis.len() < feature_dim {
            let mut v = if candidates.is_empty() {
                (0..EMBED_DIM).map(|_| StandardNormal.sample(&mut rng)).collect()
            } else {
                candidates.remove(0)
            };
            for _ in 0..2 {
                for b in &basis {
                    let d: f64 = b.iter().zip(&v).map(|(x, y)| x * y).sum();
                    v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
                }
            }
            if normalize(&mut v) > 1e-6 {
                basis.push(v);
            }
        }
        Ok(Self {
            bank,
            feature_dim,
            projection: basis.concat(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.bank.len()
    }

    /// Coordinates of a class embedding in the feature space.
    pub fn class_feature(&self, c: usize) -> Vec<f32> {
        let e = self.bank.row(c);
        (0..self.feature_dim)
            .map(|k| {
                let row = &self.projection[k * EMBED_DIM..(k + 1) * EMBED_DIM];
                row.iter().zip(e).map(|(a, b)| a * *b as f64).sum::<f64>() as f32
            })
            .collect()
    }

    /// ω_f that maps class features back onto their embeddings exactly.
    pub fn aligned_omega_f(&self) -> LinearMap {
        let d = self.feature_dim;
        let mut map = LinearMap::zeros(d, EMBED_DIM);
        for o in 0..EMBED_DIM {
            for k in 0..d {
                map.weight[o * d + k] = self.projection[k * EMBED_DIM + o] as f32;
            }
        }
        map
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeacherConfig {
    pub seed: u64,
    pub classes: usize,
    pub gaussians: usize,
    /// Room width along x and z in world units.
    pub extent: f64,
    pub height: f64,
    pub feature_dim: usize,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            classes: 8,
            gaussians: 8000,
            extent: 4.0,
            height: 2.0,
            feature_dim: FEATURE_DIM,
        }
    }
}

/// A labeled ground-truth scene.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherScene {
    pub scene: GaussianSet,
    pub labels: Vec<u16>,
    pub oracle: EmbeddingOracle,
    pub config: TeacherConfig,
}

impl TeacherScene {
    pub fn class_names(&self) -> &[String] {
        &self.oracle.bank.names
    }

    pub fn num_classes(&self) -> usize {
        self.oracle.num_classes()
    }

    /// The teacher with one-hot class indicators as features.
    pub fn label_scene(&self) -> GaussianSet {
        label_scene_from(&self.scene, &self.labels, self.num_classes())
    }

    /// The teacher as a checkpoint with oracle-aligned heads, the text bank
    /// and per-Gaussian labels.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut heads = SemanticHeads::new(self.oracle.feature_dim, self.num_classes(), &mut rng);
        heads.omega_f = self.oracle.aligned_omega_f();
        Checkpoint {
            heads: Some(heads),
            bank: Some(self.oracle.bank.clone()),
            labels: Some(self.labels.clone()),
            ..Checkpoint::from_scene(self.scene.clone())
        }
    }

    pub fn segmenter(&self) -> OracleSegmenter {
        OracleSegmenter::new(self.label_scene())
    }

    /// Interior-room bounds `(min, max)`.
    pub fn room_bounds(&self) -> ([f64; 3], [f64; 3]) {
        let (hx, hy) = (self.config.extent / 2.0, self.config.height / 2.0);
        ([-hx, -hy, -hx], [hx, hy, hx])
    }
}

/// `scene` with one-hot indicators of `labels` (`num_classes` wide) as features.
pub fn label_scene_from(scene: &GaussianSet, labels: &[u16], num_classes: usize) -> GaussianSet {
    let mut s = scene.clone();
    s.feature_dim = num_classes;
    s.features = labels
        .iter()
        .flat_map(|&l| (0..num_classes).map(move |c| if c == l as usize { 1.0 } else { 0.0 }))
        .collect();
    s
}

/// A flat rectangle `origin + u·a + v·b`, `u, v ∈ [0, 1]`.
struct Patch {
    origin: Vector3<f64>,
    a: Vector3<f64>,
    b: Vector3<f64>,
    class: u16,
}

/// Axis-aligned ellipsoid.
struct Ellipsoid {
    center: Vector3<f64>,
    radii: Vector3<f64>,
    class: u16,
}

enum Surface {
    Patch(Patch),
    Ellipsoid(Ellipsoid),
}

impl Surface {
    fn area(&self) -> f64 {
        match self {
            Surface::Patch(p) => p.a.cross(&p.b).norm(),
            Surface::Ellipsoid(e) => {
                // Knud Thomsen's approximation
                let pw = 1.6075;
                let (a, b, c) = (e.radii.x.powf(pw), e.radii.y.powf(pw), e.radii.z.powf(pw));
                4.0 * std::f64::consts::PI * ((a * b + a * c + b * c) / 3.0).powf(1.0 / pw)
            }
        }
    }

    fn class(&self) -> u16 {
        match self {
            Surface::Patch(p) => p.class,
            Surface::Ellipsoid(e) => e.class,
        }
    }
}

fn frame_quat(t1: &Vector3<f64>, t2: &Vector3<f64>, n: &Vector3<f64>) -> [f32; 4] {
    let r = Rotation3::from_matrix(&Matrix3::from_columns(&[*t1, *t2, *n]));
    let q = UnitQuaternion::from_rotation_matrix(&r);
    [q.w as f32, q.i as f32, q.j as f32, q.k as f32]
}

fn orthonormal_frame(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let t1 = n.cross(&helper).normalize();
    let t2 = n.cross(&t1);
    (t1, t2)
}

/// Per-class base color.
fn class_color(c: usize) -> [f64; 3] {
    const PALETTE: [[f64; 3]; 8] = [
        [0.55, 0.42, 0.30],
        [0.78, 0.76, 0.70],
        [0.90, 0.90, 0.86],
        [0.45, 0.28, 0.16],
        [0.25, 0.35, 0.60],
        [0.60, 0.55, 0.35],
        [0.85, 0.75, 0.30],
        [0.65, 0.30, 0.35],
    ];
    if c < PALETTE.len() {
        PALETTE[c]
    } else {
        let h = c as f64 * 0.618_033_988_75;
        [0.4 + 0.3 * (h * std::f64::consts::TAU).sin(), 0.4 + 0.3 * (h * 4.1).cos(), 0.5]
    }
}

/// Smooth per-class texture so images carry spatial detail.
fn surface_color(c: usize, p: &Vector3<f64>) -> [f64; 3] {
    let base = class_color(c);
    let f = 1.3 + 0.4 * (c % 3) as f64;
    let t = (f * p.x + 0.7).sin() * (f * p.z - 0.3).cos() + 0.5 * (2.0 * f * p.y + c as f64).sin();
    base.map(|v| (v + 0.07 * t).clamp(0.02, 0.98))
}

struct Sample {
    position: Vector3<f64>,
    t1: Vector3<f64>,
    t2: Vector3<f64>,
    normal: Vector3<f64>,
    spacing: f64,
}

fn sample_patch(p: &Patch, n: usize, rng: &mut impl Rng) -> Vec<Sample> {
    let (la, lb) = (p.a.norm(), p.b.norm());
    let ratio = la / lb;
    let nu = ((n as f64 * ratio).sqrt().round() as usize).max(1);
    let nv = (n as f64 / nu as f64).round().max(1.0) as usize;
    let spacing = (la / nu as f64 + lb / nv as f64) / 2.0;
    let (t1, t2) = (p.a / la, p.b / lb);
    let normal = t1.cross(&t2);
    let mut out = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            let u = (i as f64 + rng.random_range(0.2..0.8)) / nu as f64;
            let v = (j as f64 + rng.random_range(0.2..0.8)) / nv as f64;
            out.push(Sample {
                position: p.origin + p.a * u + p.b * v,
                t1,
                t2,
                normal,
                spacing,
            });
        }
    }
    out
}

fn sample_ellipsoid(e: &Ellipsoid, n: usize, area: f64, rng: &mut impl Rng) -> Vec<Sample> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let spacing = (area / n as f64).sqrt();
    let offset: f64 = rng.random_range(0.0..1.0);
    (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).sqrt();
            let th = golden * i as f64 + offset * std::f64::consts::TAU;
            let unit = Vector3::new(r * th.cos(), y, r * th.sin());
            let position = e.center + unit.component_mul(&e.radii);
            let normal = unit.component_div(&e.radii).normalize();
            let (t1, t2) = orthonormal_frame(&normal);
            Sample {
                position,
                t1,
                t2,
                normal,
                spacing,
            }
        })
        .collect()
}

fn box_patches(center: Vector3<f64>, half: Vector3<f64>, class: u16) -> Vec<Patch> {
    // +y points down: the floor contact face (max y) is omitted.
    let c = center;
    let (hx, hy, hz) = (half.x, half.y, half.z);
    let p = |o: Vector3<f64>, a: Vector3<f64>, b: Vector3<f64>| Patch {
        origin: o,
        a,
        b,
        class,
    };
    vec![
        // top (min y), normal −y
        p(c + Vector3::new(-hx, -hy, -hz), Vector3::new(0.0, 0.0, 2.0 * hz), Vector3::new(2.0 * hx, 0.0, 0.0)),
        // +x face
        p(c + Vector3::new(hx, -hy, -hz), Vector3::new(0.0, 0.0, 2.0 * hz), Vector3::new(0.0, 2.0 * hy, 0.0)),
        // −x face
        p(c + Vector3::new(-hx, -hy, -hz), Vector3::new(0.0, 2.0 * hy, 0.0), Vector3::new(0.0, 0.0, 2.0 * hz)),
        // +z face
        p(c + Vector3::new(-hx, -hy, hz), Vector3::new(0.0, 2.0 * hy, 0.0), Vector3::new(2.0 * hx, 0.0, 0.0)),
        // −z face
        p(c + Vector3::new(-hx, -hy, -hz), Vector3::new(2.0 * hx, 0.0, 0.0), Vector3::new(0.0, 2.0 * hy, 0.0)),
    ]
}

/// Axis-aligned room shell (floor, four walls, ceiling) plus `M − 3`
/// furniture objects on the floor, sampled as surface-aligned Gaussians.
pub fn make_teacher_scene(cfg: &TeacherConfig) -> Result<TeacherScene> {
    let m = cfg.classes;
    if m < 2 {
        return Err(Error::InvalidArgument("teacher needs at least 2 classes".into()));
    }
    if cfg.gaussians < m {
        return Err(Error::InvalidArgument(format!(
            "teacher needs at least one Gaussian per class ({} < {m})",
            cfg.gaussians
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let oracle = EmbeddingOracle::new(m, cfg.feature_dim, cfg.seed)?;
    let (hx, hy) = (cfg.extent / 2.0, cfg.height / 2.0);
    let (floor, wall) = (0u16, 1u16);
    let ceiling = if m >= 3 { 2u16 } else { wall };
    let mut surfaces: Vec<Surface> = Vec::new();
    let patch = |o: [f64; 3], a: [f64; 3], b: [f64; 3], class| {
        Surface::Patch(Patch {
            origin: Vector3::from(o),
            a: Vector3::from(a),
            b: Vector3::from(b),
            class,
        })
    };
    let w = 2.0 * hx;
    let h = 2.0 * hy;
    // floor at y = +hy, ceiling at y = −hy (+y is down)
    surfaces.push(patch([-hx, hy, -hx], [w, 0.0, 0.0], [0.0, 0.0, w], floor));
    surfaces.push(patch([-hx, -hy, -hx], [0.0, 0.0, w], [w, 0.0, 0.0], ceiling));
    surfaces.push(patch([-hx, -hy, hx], [w, 0.0, 0.0], [0.0, h, 0.0], wall));
    surfaces.push(patch([-hx, -hy, -hx], [0.0, h, 0.0], [w, 0.0, 0.0], wall));
    surfaces.push(patch([hx, -hy, -hx], [0.0, h, 0.0], [0.0, 0.0, w], wall));
    surfaces.push(patch([-hx, -hy, -hx], [0.0, 0.0, w], [0.0, h, 0.0], wall));

    let objects = m.saturating_sub(3);
    let mut placed: Vec<(Vector3<f64>, f64)> = Vec::new();
    for k in 0..objects {
        let class = (3 + k) as u16;
        let mut ok = false;
        for _ in 0..200 {
            let slot = (k as f64 + rng.random_range(-0.25..0.25)) / objects as f64;
            let ang = slot * std::f64::consts::TAU + 0.3;
            let ring = rng.random_range(0.45..0.8) * hx;
            let half = Vector3::new(
                rng.random_range(0.18..0.35) * hx / 2.0,
                rng.random_range(0.15..0.35) * hy,
                rng.random_range(0.18..0.35) * hx / 2.0,
            );
            let radius = half.x.hypot(half.z);
            let center = Vector3::new(ring * ang.cos(), hy - half.y, ring * ang.sin());
            let inside = center.x.abs() + radius < hx * 0.95 && center.z.abs() + radius < hx * 0.95;
            let clear = placed
                .iter()
                .all(|(c, r)| ((c.x - center.x).hypot(c.z - center.z)) > r + radius + 0.05);
            if !(inside && clear) {
                continue;
            }
            placed.push((center, radius));
            if k % 3 == 2 {
                surfaces.push(Surface::Ellipsoid(Ellipsoid {
                    center,
                    radii: half,
                    class,
                }));
            } else {
                for p in box_patches(center, half, class) {
                    surfaces.push(Surface::Patch(p));
                }
            }
            ok = true;
            break;
        }
        if !ok {
            return Err(Error::Generation(format!(
                "could not place object {k} without overlap"
            )));
        }
    }

    let areas: Vec<f64> = surfaces.iter().map(Surface::area).collect();
    let total_area: f64 = areas.iter().sum();
    let mut scene = GaussianSet::new(0, cfg.feature_dim);
    let mut labels = Vec::new();
    let class_features: Vec<Vec<f32>> = (0..m).map(|c| oracle.class_feature(c)).collect();
    let opacity = logit(0.95) as f32;
    for (s, area) in surfaces.iter().zip(&areas) {
        let n = ((cfg.gaussians as f64 * area / total_area).round() as usize).max(4);
        let samples = match s {
            Surface::Patch(p) => sample_patch(p, n, &mut rng),
            Surface::Ellipsoid(e) => sample_ellipsoid(e, n, *area, &mut rng),
        };
        let class = s.class();
        for smp in samples {
            let color = surface_color(class as usize, &smp.position);
            let tangent = (0.7 * smp.spacing).ln() as f32;
            let normal = (0.08 * smp.spacing).ln() as f32;
            scene.push(&Gaussian {
                position: [smp.position.x as f32, smp.position.y as f32, smp.position.z as f32],
                sh: color.map(|v| sh::rgb_to_dc(v) as f32).to_vec(),
                opacity_logit: opacity,
                log_scale: [tangent, tangent, normal],
                rotation: frame_quat(&smp.t1, &smp.t2, &smp.normal),
                feature: class_features[class as usize].clone(),
            });
            labels.push(class);
        }
    }
    Ok(TeacherScene {
        scene,
        labels,
        oracle,
        config: *cfg,
    })
}

/// Camera rig shared by all views of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RigConfig {
    pub width: u32,
    pub height: u32,
    pub fov_y_deg: f64,
    /// Frames on the full orbit; training views are evenly spaced among them.
    pub orbit_frames: usize,
    pub orbit_radius: f64,
    /// Camera height (negative is up).
    pub orbit_y: f64,
    /// Downward tilt of the viewing direction.
    pub tilt: f64,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            width: 96,
            height: 96,
            fov_y_deg: 70.0,
            orbit_frames: 36,
            orbit_radius: 0.5,
            orbit_y: 0.0,
            tilt: 0.05,
        }
    }
}

/// Inside-out orbit frame `i`: the camera sits on a circle and looks outward.
pub fn orbit_camera(rig: &RigConfig, i: usize) -> Result<Camera> {
    let th = std::f64::consts::TAU * i as f64 / rig.orbit_frames as f64;
    let (c, s) = (th.cos(), th.sin());
    let eye = Vector3::new(rig.orbit_radius * c, rig.orbit_y, rig.orbit_radius * s);
    let target = eye + Vector3::new(c, rig.tilt, s);
    Camera::look_at(&eye, &target, &Vector3::y(), rig.fov_y_deg, rig.width, rig.height)
}

/// The eight canonical camera motions of an augmented view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Motion {
    PanLeft,
    PanRight,
    PanUp,
    PanDown,
    ZoomIn,
    ZoomOut,
    RollLeft,
    RollRight,
}

impl Motion {
    pub const ALL: [Motion; 8] = [
        Motion::PanLeft,
        Motion::PanRight,
        Motion::PanUp,
        Motion::PanDown,
        Motion::ZoomIn,
        Motion::ZoomOut,
        Motion::RollLeft,
        Motion::RollRight,
    ];

    /// Applies the motion in the camera frame.
    pub fn apply(&self, cam: &Camera, angle: f64, step: f64) -> Result<Camera> {
        let r = cam.camera_to_world_rotation();
        let center = cam.center();
        let local = match self {
            Motion::PanLeft => Rotation3::from_axis_angle(&Vector3::y_axis(), -angle),
            Motion::PanRight => Rotation3::from_axis_angle(&Vector3::y_axis(), angle),
            Motion::PanUp => Rotation3::from_axis_angle(&Vector3::x_axis(), angle),
            Motion::PanDown => Rotation3::from_axis_angle(&Vector3::x_axis(), -angle),
            Motion::RollLeft => Rotation3::from_axis_angle(&Vector3::z_axis(), -angle),
            Motion::RollRight => Rotation3::from_axis_angle(&Vector3::z_axis(), angle),
            Motion::ZoomIn | Motion::ZoomOut => Rotation3::identity(),
        };
        let forward = r.column(2).into_owned();
        let shift = match self {
            Motion::ZoomIn => forward * step,
            Motion::ZoomOut => -forward * step,
            _ => Vector3::zeros(),
        };
        let rot = r * local.matrix();
        let mut out = Camera::from_pose(&rot, &(center + shift), cam.fx, cam.fy, cam.width, cam.height)?;
        out.cx = cam.cx;
        out.cy = cam.cy;
        Ok(out)
    }
}

/// A posed image with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub id: String,
    pub camera: Camera,
    pub color: ImageBuf,
    pub labels: Vec<u16>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedView {
    pub view: View,
    pub parent: usize,
    pub motion: Motion,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub seed: u64,
    pub train_views: usize,
    pub augment_per_view: usize,
    pub test_views: usize,
    /// Amplitude of the smooth color shift applied to augmented views.
    pub corruption: f64,
    pub motion_angle_deg: f64,
    pub motion_step: f64,
    pub rig: RigConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            train_views: 12,
            augment_per_view: 8,
            test_views: 24,
            corruption: 0.0,
            motion_angle_deg: 6.0,
            motion_step: 0.12,
            rig: RigConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<View>,
    pub augmented: Vec<AugmentedView>,
    pub test: Vec<View>,
    pub bank: TextBank,
    /// Initial points for the first training phase.
    pub seeds: Option<LayoutPoints>,
    pub config: DatasetConfig,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.bank.len()
    }

    pub fn train_cameras(&self) -> Vec<Camera> {
        self.train.iter().map(|v| v.camera.clone()).collect()
    }
}

/// Teacher color render quantized to 8 bits, as stored on disk.
pub fn render_teacher_color(teacher: &TeacherScene, cam: &Camera) -> ImageBuf {
    let out = render(cam, &teacher.scene, [0.0; 3]);
    let c = out.color.clamped01();
    ImageBuf::from_rgb8(c.width, c.height, &c.to_rgb8())
}

/// Smooth low-frequency color shift: per channel `A·(π/4)·sin(k·x + φ)`
/// with a random direction, wavelength of about one image and phase.
pub fn corruption_field(width: usize, height: usize, amplitude: f64, rng: &mut impl Rng) -> ImageBuf {
    let mut field = ImageBuf::zeros(width, height, 3);
    let scale = amplitude * std::f64::consts::FRAC_PI_4;
    for c in 0..3 {
        let dir: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let cycles: f64 = rng.random_range(0.5..1.5);
        let k = std::f64::consts::TAU * cycles / width.max(height) as f64;
        let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let (kx, ky) = (k * dir.cos(), k * dir.sin());
        for y in 0..height {
            for x in 0..width {
                field.pixel_mut(x, y)[c] = scale * (kx * x as f64 + ky * y as f64 + phase).sin();
            }
        }
    }
    field
}

fn labeled_view(teacher: &TeacherScene, label_scene: &GaussianSet, id: String, camera: Camera) -> View {
    let color = render_teacher_color(teacher, &camera);
    let labels = render_labels(&camera, label_scene).labels;
    View {
        id,
        camera,
        color,
        labels,
    }
}

/// Training, augmented and held-out views rendered from the teacher.
pub fn make_dataset(teacher: &TeacherScene, cfg: &DatasetConfig) -> Result<Dataset> {
    let rig = cfg.rig;
    if cfg.train_views == 0 || cfg.train_views + cfg.test_views > rig.orbit_frames {
        return Err(Error::InvalidArgument(format!(
            "{} training + {} test views do not fit on a {}-frame orbit",
            cfg.train_views, cfg.test_views, rig.orbit_frames
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x0da7_a5e7);
    let label_scene = teacher.label_scene();
    let train_frames: Vec<usize> = (0..cfg.train_views)
        .map(|i| i * rig.orbit_frames / cfg.train_views)
        .collect();
    let rest: Vec<usize> = (0..rig.orbit_frames)
        .filter(|f| !train_frames.contains(f))
        .collect();
    let test_frames: Vec<usize> = (0..cfg.test_views)
        .map(|i| rest[i * rest.len() / cfg.test_views])
        .collect();
    let mut train = Vec::new();
    for (i, &f) in train_frames.iter().enumerate() {
        train.push(labeled_view(teacher, &label_scene, format!("train_{i:03}"), orbit_camera(&rig, f)?));
    }
    let mut test = Vec::new();
    for (i, &f) in test_frames.iter().enumerate() {
        test.push(labeled_view(teacher, &label_scene, format!("test_{i:03}"), orbit_camera(&rig, f)?));
    }
    let mut augmented = Vec::new();
    let angle = cfg.motion_angle_deg.to_radians();
    for (i, parent) in train.iter().enumerate() {
        for (k, motion) in Motion::ALL.iter().cycle().take(cfg.augment_per_view).enumerate() {
            let cam = motion.apply(&parent.camera, angle, cfg.motion_step)?;
            let mut view = labeled_view(teacher, &label_scene, format!("aug_{i:03}_{k}"), cam);
            if cfg.corruption > 0.0 {
                let field = corruption_field(view.color.width, view.color.height, cfg.corruption, &mut rng);
                view.color.add_assign(&field);
                let c = view.color.clamped01();
                view.color = ImageBuf::from_rgb8(c.width, c.height, &c.to_rgb8());
            }
            augmented.push(AugmentedView {
                view,
                parent: i,
                motion: *motion,
            });
        }
    }
    Ok(Dataset {
        train,
        augmented,
        test,
        bank: teacher.oracle.bank.clone(),
        seeds: None,
        config: *cfg,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeedMode {
    Sparse,
    Dense,
    Random,
}

impl std::str::FromStr for SeedMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sparse" => Ok(SeedMode::Sparse),
            "dense" => Ok(SeedMode::Dense),
            "random" => Ok(SeedMode::Random),
            other => Err(Error::InvalidArgument(format!("unknown seed mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeedConfig {
    pub mode: SeedMode,
    pub count: usize,
    /// Maximum positional jitter (sparse and dense modes).
    pub jitter: f64,
    /// Standard deviation of the initial semantic features.
    pub feature_std: f64,
    pub seed: u64,
}

impl Default for SeedConfig {
    fn default() -> Self {
        Self::dense(4000)
    }
}

impl SeedConfig {
    pub fn sparse(count: usize) -> Self {
        Self {
            mode: SeedMode::Sparse,
            count,
            jitter: 0.05,
            feature_std: 0.1,
            seed: 0,
        }
    }

    pub fn dense(count: usize) -> Self {
        Self {
            mode: SeedMode::Dense,
            count,
            jitter: 0.01,
            ..Self::sparse(count)
        }
    }

    pub fn random(count: usize) -> Self {
        Self {
            mode: SeedMode::Random,
            ..Self::sparse(count)
        }
    }
}

fn jitter_in_ball(r: f64, rng: &mut impl Rng) -> Vector3<f64> {
    if r <= 0.0 {
        return Vector3::zeros();
    }
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if v.norm_squared() <= 1.0 {
            return v * r;
        }
    }
}

/// Structure-from-motion stand-in: teacher surface points with jitter, or
/// uniform points in the room for the random mode. Points carry the
/// teacher's degree-0 color and small random features.
pub fn seed_points(teacher: &TeacherScene, cfg: &SeedConfig) -> Result<LayoutPoints> {
    if cfg.count == 0 {
        return Err(Error::InvalidArgument("seed count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0001);
    let d = teacher.scene.feature_dim;
    let n = teacher.scene.len();
    let normal = rand_distr::Normal::new(0.0, cfg.feature_std.max(0.0)).unwrap();
    let mut out = LayoutPoints {
        feature_dim: d,
        positions: Vec::with_capacity(cfg.count),
        sh_dc: Vec::with_capacity(cfg.count),
        features: Vec::with_capacity(cfg.count * d),
    };
    let (lo, hi) = teacher.room_bounds();
    let source: Vec<usize> = match cfg.mode {
        SeedMode::Random => Vec::new(),
        _ if cfg.count <= n => {
            let mut v = sample(&mut rng, n, cfg.count).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..cfg.count).map(|_| rng.random_range(0..n)).collect(),
    };
    for k in 0..cfg.count {
        let (p, dc) = match cfg.mode {
            SeedMode::Random => {
                let p = Vector3::from_fn(|a, _| rng.random_range(lo[a]..hi[a]));
                (p, [sh::rgb_to_dc(0.5) as f32; 3])
            }
            _ => {
                let i = source[k];
                let mut p = teacher.scene.position(i) + jitter_in_ball(cfg.jitter, &mut rng);
                for a in 0..3 {
                    p[a] = p[a].clamp(lo[a], hi[a]);
                }
                let s = teacher.scene.sh(i);
                (p, [s[0], s[1], s[2]])
            }
        };
        out.positions.push([p.x as f32, p.y as f32, p.z as f32]);
        out.sh_dc.push(dc);
        out.features
            .extend((0..d).map(|_| normal.sample(&mut rng) as f32));
    }
    Ok(out)
}

/// Fraction of pixels with accumulated alpha above `threshold`.
pub fn coverage(teacher: &TeacherScene, cam: &Camera, threshold: f64) -> f64 {
    let out = render(cam, &teacher.scene, [0.0; 3]);
    out.alpha.data.iter().filter(|&&a| a > threshold).count() as f64 / out.alpha.data.len() as f64
}

/// Whether a label map has any supervised pixel.
pub fn has_labels(labels: &[u16]) -> bool {
    labels.iter().any(|&l| l != IGNORE_LABEL)
}

/// Focal length used by the default rig.
pub fn rig_focal(rig: &RigConfig) -> f64 {
    focal_from_fov(rig.fov_y_deg, rig.height)
}
