//! Two-phase optimization: layout phase from seed points with densification
//! and outlier removal, then re-initialization from the exported layout and
//! a final semantic phase.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::buffer::ImageBuf;
use crate::correspondence::{
    collect_max_weight, isp_step, labels_from_output, sample_pseudo_views, Mask, PseudoViewConfig, SegmentView, Segmenter,
    DEFAULT_NOISE_SCALE, DEFAULT_PSEUDO_VIEWS,
};
use crate::error::{Error, Result};
use crate::geom::{Camera, GaussianSet};
use crate::io::Checkpoint;
use crate::losses::{
    lambda, logits_backward, loss_color, loss_generated_semantic, loss_inter, loss_intra, loss_local_adaptive,
    loss_semantic, loss_spc3d, segmentation_logits, HeadGrads, IntraConfig, LocalConfig, LossBreakdown,
    SegmentationLogits, SemanticHeads, SupervisionMaps, TextBank, DEFAULT_LAMBDA_WARMUP,
};
use crate::metrics::{EvalAccumulator, EvalReport};
use crate::optim::{exponential_decay, AdamConfig, GaussianAdam, HeadAdam, LearningRates};
use crate::raster::{render, render_backward, RenderGrads, RenderOutput};
use crate::scenegen::{label_scene_from, Dataset, View};
use crate::sgi::{densify_and_prune, export_layout, ogr, reinit_from_layout, DensifyConfig, DensifyStats, OgrConfig};

/// Smallest densification interval of a scaled schedule.
pub const MIN_DENSIFY_INTERVAL: usize = 10;
/// Gaussian cap of the scaled schedules.
pub const DESK_MAX_GAUSSIANS: usize = 20_000;

/// Semantic-prompt consistency settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpcConfig {
    pub enabled: bool,
    /// Also apply the consistency terms during the layout phase.
    pub in_phase1: bool,
    pub pseudo_views: usize,
    pub noise_scale: f64,
    /// Square erosion kernel applied to region masks before the 3D term.
    pub erosion: usize,
    pub intra: IntraConfig,
}

impl Default for SpcConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            in_phase1: true,
            pseudo_views: DEFAULT_PSEUDO_VIEWS,
            noise_scale: DEFAULT_NOISE_SCALE,
            erosion: 5,
            intra: IntraConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub phase1_iters: usize,
    pub phase2_iters: usize,
    pub lr_semantic: f64,
    pub lr_heads: f64,
    pub lr_position: f64,
    pub lr_position_final: f64,
    pub lr_sh: f64,
    /// Higher-order SH rate as a fraction of `lr_sh`.
    pub lr_sh_rest_factor: f64,
    pub lr_opacity: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    pub lambda_warmup: usize,
    /// Count the warmup over both phases instead of restarting it per phase.
    pub lambda_global: bool,
    pub ogr: OgrConfig,
    pub ogr_enabled: bool,
    pub ogr_in_phase2: bool,
    pub densify: DensifyConfig,
    pub densify_enabled: bool,
    pub local: LocalConfig,
    pub spc: SpcConfig,
    /// Semantic loss on augmented views.
    pub augmented_semantic: bool,
    /// Color loss on augmented views.
    pub augmented_color: bool,
    pub sh_degree: usize,
    /// World-space scene size; derived from the seed points when absent.
    pub scene_extent: Option<f64>,
    pub background: [f64; 3],
    pub seed: u64,
    pub log_interval: usize,
}

impl TrainConfig {
    /// Full-length schedule: two 10k-iteration phases, 4k warmup.
    pub fn full() -> Self {
        Self {
            phase1_iters: 10_000,
            phase2_iters: 10_000,
            lr_semantic: 0.0025,
            lr_heads: 0.0005,
            lr_position: 1.6e-4,
            lr_position_final: 1.6e-6,
            lr_sh: 2.5e-3,
            lr_sh_rest_factor: 1.0 / 20.0,
            lr_opacity: 0.05,
            lr_scale: 5e-3,
            lr_rotation: 1e-3,
            lambda_warmup: DEFAULT_LAMBDA_WARMUP,
            lambda_global: false,
            ogr: OgrConfig::default(),
            ogr_enabled: true,
            ogr_in_phase2: false,
            densify: DensifyConfig::default(),
            densify_enabled: true,
            local: LocalConfig::default(),
            spc: SpcConfig::default(),
            augmented_semantic: true,
            augmented_color: false,
            sh_degree: 3,
            scene_extent: None,
            background: [0.0; 3],
            seed: 0,
            log_interval: 100,
        }
    }

    /// Schedule shortened to `phase1 + phase2` iterations with every
    /// iteration-indexed setting (warmup, densification window and interval,
    /// OGR interval) scaled by `phase1 / 10000`.
    pub fn scaled(phase1: usize, phase2: usize) -> Self {
        let p = Self::full();
        let f = phase1 as f64 / p.phase1_iters as f64;
        let s = |v: usize| ((v as f64 * f).round() as usize).max(1);
        Self {
            phase1_iters: phase1,
            phase2_iters: phase2,
            lambda_warmup: s(p.lambda_warmup),
            ogr: OgrConfig {
                interval: s(p.ogr.interval),
                ..p.ogr
            },
            densify: DensifyConfig {
                densify_from: s(p.densify.densify_from),
                densify_until: s(p.densify.densify_until),
                densify_interval: s(p.densify.densify_interval).max(MIN_DENSIFY_INTERVAL),
                max_gaussians: DESK_MAX_GAUSSIANS,
                ..p.densify
            },
            ..p
        }
    }

    /// Desk-scale schedule: 3k + 3k iterations.
    pub fn desk() -> Self {
        Self::scaled(3000, 3000)
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [
            self.lr_semantic,
            self.lr_heads,
            self.lr_position,
            self.lr_position_final,
            self.lr_sh,
            self.lr_sh_rest_factor,
            self.lr_opacity,
            self.lr_scale,
            self.lr_rotation,
        ];
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::InvalidArgument("learning rates must be positive and finite".into()));
        }
        if self.sh_degree > crate::sh::MAX_DEGREE {
            return Err(Error::InvalidArgument(format!("SH degree {} > 3", self.sh_degree)));
        }
        if self.ogr_enabled && (self.ogr.neighbor_min == 0 || !(self.ogr.radius > 0.0)) {
            return Err(Error::InvalidArgument("OGR needs neighbor_min >= 1 and radius > 0".into()));
        }
        if self.log_interval == 0 {
            return Err(Error::InvalidArgument("log interval must be >= 1".into()));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    Loss {
        phase: u8,
        iteration: usize,
        gaussians: usize,
        /// Mean total loss over the logging window.
        total: f64,
        /// Mean of each component over the window.
        terms: LossBreakdown,
        spc_skipped: usize,
    },
    Densify {
        phase: u8,
        iteration: usize,
        before: usize,
        after: usize,
        cloned: usize,
        split: usize,
        removed: usize,
    },
    Ogr {
        phase: u8,
        iteration: usize,
        before: usize,
        after: usize,
    },
    Reinit {
        layout_points: usize,
    },
}

/// Phase output: the trained state plus its log.
#[derive(Debug, Clone)]
pub struct PhaseResult {
    pub checkpoint: Checkpoint,
    pub events: Vec<LogEvent>,
    /// Total loss at every iteration.
    pub losses: Vec<f64>,
}

/// Per-view supervision prepared once per phase.
struct TrainView<'a> {
    view: &'a View,
    sup: SupervisionMaps,
}

fn supervision(view: &View) -> SupervisionMaps {
    SupervisionMaps::from_labels(view.color.width, view.color.height, view.labels.clone())
}

/// Size of the scene from the bounds of `scene`'s positions.
pub fn scene_extent(scene: &GaussianSet) -> f64 {
    scene
        .bounds()
        .map(|(lo, hi)| (hi - lo).max())
        .filter(|e| *e > 0.0)
        .unwrap_or(1.0)
}

fn phase_rng(seed: u64, phase: u8) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ phase as u64)
}

struct Step<'a> {
    scene: &'a GaussianSet,
    heads: &'a SemanticHeads,
    bank: &'a TextBank,
    background: [f64; 3],
}

impl Step<'_> {
    fn render(&self, cam: &Camera) -> RenderOutput {
        render(cam, self.scene, self.background)
    }

    fn logits(&self, out: &RenderOutput) -> SegmentationLogits {
        segmentation_logits(&out.feature, self.heads, self.bank)
    }

    fn backward(
        &self,
        cam: &Camera,
        out: &RenderOutput,
        d_color: Option<&ImageBuf>,
        d_feature: Option<&ImageBuf>,
    ) -> Result<RenderGrads> {
        let zeros_c;
        let zeros_f;
        let d_color = match d_color {
            Some(g) => g,
            None => {
                zeros_c = ImageBuf::zeros(out.width, out.height, 3);
                &zeros_c
            }
        };
        let d_feature = match d_feature {
            Some(g) => g,
            None => {
                zeros_f = ImageBuf::zeros(out.width, out.height, self.scene.feature_dim);
                &zeros_f
            }
        };
        let d_alpha = ImageBuf::zeros(out.width, out.height, 1);
        render_backward(cam, self.scene, out, d_color, d_feature, &d_alpha)
    }
}

/// Trains one phase starting from `state`. Heads are created when `state`
/// carries none.
pub fn train_phase(
    state: Checkpoint,
    dataset: &Dataset,
    cfg: &TrainConfig,
    phase: u8,
    segmenter: Option<&dyn Segmenter>,
    rng: &mut impl Rng,
) -> Result<PhaseResult> {
    cfg.validate()?;
    let iters = if phase == 1 { cfg.phase1_iters } else { cfg.phase2_iters };
    if iters == 0 {
        return Ok(PhaseResult {
            checkpoint: state,
            events: Vec::new(),
            losses: Vec::new(),
        });
    }
    if dataset.train.is_empty() {
        return Err(Error::InvalidArgument("dataset has no training views".into()));
    }
    let bank = &dataset.bank;
    let m = bank.len();
    let mut scene = state.scene;
    if scene.is_empty() {
        return Err(Error::EmptyLayout);
    }
    let d = scene.feature_dim;
    let mut heads = match state.heads {
        Some(h) => h,
        None => SemanticHeads::new(d, m, rng),
    };
    heads.validate(d, m)?;
    let spc_on = cfg.spc.enabled && (phase == 2 || cfg.spc.in_phase1);
    if spc_on && segmenter.is_none() {
        return Err(Error::InvalidArgument(
            "semantic-prompt consistency needs a segmenter".into(),
        ));
    }
    if spc_on && dataset.train.len() < 2 {
        return Err(Error::NotEnoughCameras(dataset.train.len()));
    }
    let densify_on = phase == 1 && cfg.densify_enabled;
    let ogr_on = cfg.ogr_enabled && (phase == 1 || cfg.ogr_in_phase2);
    let extent = cfg.scene_extent.unwrap_or_else(|| scene_extent(&scene));
    let iteration_offset = if cfg.lambda_global && phase == 2 { cfg.phase1_iters } else { 0 };

    let train_views: Vec<TrainView> = dataset
        .train
        .iter()
        .map(|v| TrainView {
            view: v,
            sup: supervision(v),
        })
        .collect();
    let aug_sup: Vec<SupervisionMaps> = dataset.augmented.iter().map(|a| supervision(&a.view)).collect();
    let train_cams = dataset.train_cameras();
    let mut auto_masks: Vec<Option<Vec<Mask>>> = vec![None; train_views.len()];
    let pseudo_cfg = PseudoViewConfig {
        count: cfg.spc.pseudo_views,
        noise_scale: cfg.spc.noise_scale,
        ..PseudoViewConfig::default()
    };

    let adam_cfg = AdamConfig::default();
    let mut adam = GaussianAdam::new(&scene, adam_cfg);
    let mut head_adam = HeadAdam::new(&heads, adam_cfg);
    let mut stats = DensifyStats::new(scene.len());
    let mut events = Vec::new();
    let mut losses = Vec::with_capacity(iters);
    let mut window = LossBreakdown::default();
    let mut window_total = 0.0;
    let mut window_count = 0usize;
    let mut spc_skipped = 0usize;

    for it in 0..iters {
        let iteration = it + 1;
        let lam = if spc_on { lambda(it + iteration_offset, cfg.lambda_warmup) } else { 0.0 };
        let v = it % train_views.len();
        let tv = &train_views[v];
        let cam = &tv.view.camera;
        let step = Step {
            scene: &scene,
            heads: &heads,
            bank,
            background: cfg.background,
        };
        let mut terms = LossBreakdown {
            lambda: lam,
            ..Default::default()
        };
        let mut head_grads = HeadGrads::zeros(&heads);
        let mut feature_grads = vec![0.0; scene.len() * d];

        // Training view: color, semantic and (with λ) intra-view contrast.
        let out = step.render(cam);
        let color = loss_color(&out.color, &tv.view.color)?;
        terms.color = color.value;
        let logits = step.logits(&out);
        let sem = loss_semantic(&out.feature, &logits, &tv.sup, &heads, bank)?;
        terms.semantic = sem.value;
        head_grads.add_scaled(&sem.heads, 1.0);
        let mut d_feature = sem.d_feature;

        let mut pseudo: Vec<(Camera, RenderOutput, ImageBuf)> = Vec::new();
        if lam > 0.0 {
            let seg = segmenter.expect("checked above");
            if auto_masks[v].is_none() {
                auto_masks[v] = Some(seg.auto_masks(&SegmentView {
                    key: &format!("train_{v}"),
                    camera: cam,
                })?);
            }
            let intra = loss_intra(
                &out.feature,
                &logits,
                auto_masks[v].as_deref().unwrap_or(&[]),
                &heads,
                &cfg.spc.intra,
                rng,
            )?;
            terms.intra = intra.value;
            d_feature.add_scaled(&intra.d_feature, lam);
            head_grads.add_scaled(&intra.heads, lam);

            let pcams = sample_pseudo_views(&train_cams, v, &pseudo_cfg, rng)?;
            let masks = isp_step(v, cam, &pcams, seg, rng)?;
            let pouts: Vec<RenderOutput> = pcams.iter().map(|p| step.render(&p.camera)).collect();
            let pfeat: Vec<ImageBuf> = pouts.iter().map(|o| o.feature.clone()).collect();
            let plogits: Vec<SegmentationLogits> = pouts.iter().map(|o| step.logits(o)).collect();
            let inter = loss_inter(&out.feature, &logits, &pfeat, &plogits, &masks, &heads)?;
            terms.inter = inter.value;
            let eroded = masks.eroded(cfg.spc.erosion)?;
            let train_ids = collect_max_weight(&out, &eroded.train_mask)?;
            let pseudo_ids = pouts
                .iter()
                .zip(&eroded.pseudo_masks)
                .map(|(o, mk)| collect_max_weight(o, mk))
                .collect::<Result<Vec<_>>>()?;
            let s3 = loss_spc3d(&scene, &train_ids, &pseudo_ids);
            terms.spc3d = s3.value;
            if inter.skipped || s3.skipped {
                spc_skipped += 1;
            }
            for (g, s) in feature_grads.iter_mut().zip(&s3.d_features) {
                *g += lam * s;
            }
            drop(pfeat);
            for (k, (pc, po)) in pcams.into_iter().zip(pouts).enumerate() {
                let (mut dpf, hg) = logits_backward(&po.feature, &plogits[k], &heads, bank, &inter.d_pseudo_logits[k])?;
                dpf.add_assign(&inter.d_pseudo_features[k]);
                dpf.scale(lam);
                head_grads.add_scaled(&hg, lam);
                pseudo.push((pc.camera, po, dpf));
            }
        }

        let mut grads = step.backward(cam, &out, Some(&color.grad), Some(&d_feature))?;
        if densify_on {
            stats.add(&grads, cam.width, cam.height);
        }

        // Augmented view, rotating.
        if !dataset.augmented.is_empty() && (cfg.augmented_semantic || cfg.augmented_color) {
            let a = it % dataset.augmented.len();
            let av = &dataset.augmented[a].view;
            let aout = step.render(&av.camera);
            let mut d_feat = None;
            let mut d_col = None;
            if cfg.augmented_semantic {
                let alog = step.logits(&aout);
                let gs = loss_generated_semantic(&aout.feature, &alog, &aug_sup[a], &heads, bank)?;
                terms.generated_semantic = gs.value;
                head_grads.add_scaled(&gs.heads, 1.0);
                d_feat = Some(gs.d_feature);
            }
            if cfg.augmented_color {
                let gc = loss_color(&aout.color, &av.color)?;
                terms.generated_color = gc.value;
                d_col = Some(gc.grad);
            }
            let ag = step.backward(&av.camera, &aout, d_col.as_ref(), d_feat.as_ref())?;
            if densify_on {
                stats.add(&ag, av.camera.width, av.camera.height);
            }
            grads.add_assign(&ag);
        }

        for (pcam, pout, dpf) in &pseudo {
            let pg = step.backward(pcam, pout, None, Some(dpf))?;
            if densify_on {
                stats.add(&pg, pcam.width, pcam.height);
            }
            grads.add_assign(&pg);
        }

        if cfg.local.samples > 0 {
            let local = loss_local_adaptive(&scene, &cfg.local, rng);
            terms.local = local.value;
            for (g, s) in feature_grads.iter_mut().zip(&local.d_features) {
                *g += s;
            }
        }
        for (g, s) in grads.features.iter_mut().zip(&feature_grads) {
            *g += s;
        }

        let total = terms.total();
        if !total.is_finite() || !grads.is_finite() || !head_grads.is_finite() {
            let snapshot = serde_json::json!({
                "terms": terms,
                "gaussians": scene.len(),
                "view": v,
                "gradients_finite": grads.is_finite(),
                "head_gradients_finite": head_grads.is_finite(),
            });
            return Err(Error::NonFiniteLoss {
                phase,
                iteration,
                snapshot: snapshot.to_string(),
            });
        }
        losses.push(total);

        let pos_lr = exponential_decay(cfg.lr_position, cfg.lr_position_final, it, iters) * extent;
        let lr = LearningRates {
            position: pos_lr,
            sh_dc: cfg.lr_sh,
            sh_rest: cfg.lr_sh * cfg.lr_sh_rest_factor,
            opacity: cfg.lr_opacity,
            scale: cfg.lr_scale,
            rotation: cfg.lr_rotation,
            feature: cfg.lr_semantic,
        };
        adam.step(&mut scene, &grads, &lr);
        head_adam.step(&mut heads, &head_grads, cfg.lr_heads);

        accumulate(&mut window, &terms);
        window_total += total;
        window_count += 1;
        if iteration % cfg.log_interval == 0 || iteration == iters {
            let n = window_count as f64;
            events.push(LogEvent::Loss {
                phase,
                iteration,
                gaussians: scene.len(),
                total: window_total / n,
                terms: scaled(&window, 1.0 / n),
                spc_skipped,
            });
            window = LossBreakdown::default();
            window_total = 0.0;
            window_count = 0;
            spc_skipped = 0;
        }

        let dcfg = &cfg.densify;
        if densify_on
            && iteration >= dcfg.densify_from
            && iteration <= dcfg.densify_until
            && iteration % dcfg.densify_interval == 0
        {
            let before = scene.len();
            let rebuilt = densify_and_prune(&scene, &stats, dcfg, extent, rng)?;
            adam.remap(&rebuilt.scene, &rebuilt.sources);
            scene = rebuilt.scene;
            stats = DensifyStats::new(scene.len());
            events.push(LogEvent::Densify {
                phase,
                iteration,
                before,
                after: scene.len(),
                cloned: rebuilt.cloned,
                split: rebuilt.split,
                removed: rebuilt.removed,
            });
        }
        if ogr_on && iteration % cfg.ogr.interval == 0 {
            let before = scene.len();
            let rebuilt = ogr(&scene, &cfg.ogr)?;
            adam.remap(&rebuilt.scene, &rebuilt.sources);
            stats.remap(&rebuilt.sources);
            scene = rebuilt.scene;
            events.push(LogEvent::Ogr {
                phase,
                iteration,
                before,
                after: scene.len(),
            });
        }
        if scene.is_empty() {
            return Err(Error::EmptyLayout);
        }
    }
    Ok(PhaseResult {
        checkpoint: Checkpoint {
            scene,
            heads: Some(heads),
            bank: Some(bank.clone()),
            config: Some(serde_json::to_value(cfg).expect("config serializes")),
            iteration: (state.iteration as usize + iters) as u64,
            labels: None,
        },
        events,
        losses,
    })
}

fn accumulate(acc: &mut LossBreakdown, t: &LossBreakdown) {
    acc.color += t.color;
    acc.semantic += t.semantic;
    acc.generated_semantic += t.generated_semantic;
    acc.generated_color += t.generated_color;
    acc.local += t.local;
    acc.inter += t.inter;
    acc.intra += t.intra;
    acc.spc3d += t.spc3d;
    acc.lambda += t.lambda;
}

fn scaled(t: &LossBreakdown, s: f64) -> LossBreakdown {
    let mut out = LossBreakdown::default();
    accumulate(&mut out, t);
    out.color *= s;
    out.semantic *= s;
    out.generated_semantic *= s;
    out.generated_color *= s;
    out.local *= s;
    out.inter *= s;
    out.intra *= s;
    out.spc3d *= s;
    out.lambda *= s;
    out
}

/// Result of the full pipeline.
#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub checkpoint: Checkpoint,
    /// Gaussians after the layout phase (before re-initialization).
    pub layout_points: usize,
    pub events: Vec<LogEvent>,
    pub losses: Vec<f64>,
}

/// Layout phase from the dataset's seed points, export, re-initialization
/// and final phase.
pub fn run_pipeline(dataset: &Dataset, cfg: &TrainConfig, segmenter: Option<&dyn Segmenter>) -> Result<PipelineResult> {
    cfg.validate()?;
    let seeds = dataset
        .seeds
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("dataset has no seed points".into()))?;
    let init = reinit_from_layout(seeds, cfg.sh_degree)?;
    let mut cfg = *cfg;
    if cfg.scene_extent.is_none() {
        cfg.scene_extent = Some(scene_extent(&init));
    }
    let mut rng = phase_rng(cfg.seed, 1);
    let p1 = train_phase(Checkpoint::from_scene(init), dataset, &cfg, 1, segmenter, &mut rng)?;
    let layout = export_layout(&p1.checkpoint.scene);
    if layout.is_empty() {
        return Err(Error::EmptyLayout);
    }
    let mut events = p1.events;
    events.push(LogEvent::Reinit {
        layout_points: layout.len(),
    });
    let state = Checkpoint {
        scene: reinit_from_layout(&layout, cfg.sh_degree)?,
        ..p1.checkpoint
    };
    let mut rng = phase_rng(cfg.seed, 2);
    let p2 = train_phase(state, dataset, &cfg, 2, segmenter, &mut rng)?;
    events.extend(p2.events);
    let mut losses = p1.losses;
    losses.extend(p2.losses);
    Ok(PipelineResult {
        checkpoint: p2.checkpoint,
        layout_points: layout.len(),
        events,
        losses,
    })
}

/// Renders `scene` at `cam` and labels each pixel by the class with the
/// highest cosine.
pub fn render_with_labels(
    cam: &Camera,
    scene: &GaussianSet,
    heads: &SemanticHeads,
    bank: &TextBank,
    background: [f64; 3],
) -> (RenderOutput, Vec<u16>) {
    let out = render(cam, scene, background);
    let labels = segmentation_logits(&out.feature, heads, bank).argmax_labels();
    (out, labels)
}

/// Color render and per-pixel classes of a checkpoint. Checkpoints that
/// carry per-Gaussian labels are labeled by blending those labels; others
/// by their semantic heads against `bank`.
pub fn checkpoint_labels(
    ckpt: &Checkpoint,
    cam: &Camera,
    bank: &TextBank,
    background: [f64; 3],
) -> Result<(RenderOutput, Vec<u16>)> {
    if let Some(labels) = &ckpt.labels {
        if labels.len() != ckpt.scene.len() {
            return Err(Error::ShapeMismatch {
                context: "checkpoint labels",
                expected: ckpt.scene.len(),
                actual: labels.len(),
            });
        }
        let out = render(cam, &ckpt.scene, background);
        let label_scene = label_scene_from(&ckpt.scene, labels, bank.len());
        let labels = labels_from_output(&render(cam, &label_scene, [0.0; 3])).labels;
        return Ok((out, labels));
    }
    let heads = ckpt
        .heads
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("checkpoint has no semantic heads".into()))?;
    heads.validate(ckpt.scene.feature_dim, bank.len())?;
    Ok(render_with_labels(cam, &ckpt.scene, heads, bank, background))
}

/// PSNR, SSIM, mIoU and mAcc of a checkpoint over `views`.
pub fn evaluate(ckpt: &Checkpoint, views: &[View], bank: &TextBank, background: [f64; 3]) -> Result<EvalReport> {
    let mut acc = EvalAccumulator::new(bank.len());
    for v in views {
        let (out, labels) = checkpoint_labels(ckpt, &v.camera, bank, background)?;
        acc.add(&v.id, &out.color, &v.color, &labels, &v.labels)?;
    }
    Ok(acc.finish())
}

/// Writes events as JSON lines.
pub fn write_log(events: &[LogEvent], out: &mut impl std::io::Write) -> std::io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut *out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
