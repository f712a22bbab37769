use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spcgs_core::io::Checkpoint;
use spcgs_core::scenegen::*;
use spcgs_core::sgi::reinit_from_layout;
use spcgs_core::trainer::*;
use spcgs_core::Error;

struct Tiny {
    teacher: TeacherScene,
    data: Dataset,
}

fn tiny(gaussians: usize, points: usize) -> Tiny {
    let teacher = make_teacher_scene(&TeacherConfig {
        seed: 3,
        gaussians,
        ..TeacherConfig::default()
    })
    .unwrap();
    let mut data = make_dataset(
        &teacher,
        &DatasetConfig {
            train_views: 3,
            augment_per_view: 1,
            test_views: 2,
            rig: RigConfig {
                width: 32,
                height: 32,
                orbit_frames: 8,
                ..RigConfig::default()
            },
            ..DatasetConfig::default()
        },
    )
    .unwrap();
    data.seeds = Some(seed_points(&teacher, &SeedConfig::dense(points)).unwrap());
    Tiny { teacher, data }
}

fn tiny_config(iters: usize) -> TrainConfig {
    let mut cfg = TrainConfig::desk();
    cfg.phase1_iters = iters;
    cfg.phase2_iters = 0;
    cfg.lambda_warmup = iters / 2;
    cfg.densify_enabled = false;
    cfg.ogr_enabled = false;
    cfg.sh_degree = 1;
    cfg.local.samples = 32;
    cfg.spc.intra.patch = 16;
    cfg.log_interval = 50;
    cfg
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn tiny_scene_loss_decreases() {
    let t = tiny(50, 50);
    let seg = t.teacher.segmenter();
    let mut cfg = tiny_config(200);
    cfg.spc.enabled = false;
    let r = run_pipeline(&t.data, &cfg, Some(&seg)).unwrap();
    assert_eq!(r.losses.len(), 200);
    let first = mean(&r.losses[..30]);
    let last = mean(&r.losses[170..]);
    assert!(last < first, "loss did not decrease: {first} -> {last}");
    assert!(r.losses.iter().all(|l| l.is_finite()));
}

#[test]
fn consistency_terms_activate_after_warmup() {
    let t = tiny(400, 120);
    let seg = t.teacher.segmenter();
    let mut cfg = tiny_config(40);
    cfg.log_interval = 1;
    let r = run_pipeline(&t.data, &cfg, Some(&seg)).unwrap();
    let mut active = 0;
    for e in &r.events {
        if let LogEvent::Loss { terms, iteration, .. } = e {
            if *iteration <= 20 {
                assert_eq!(terms.lambda, 0.0, "iteration {iteration}");
                assert_eq!(terms.inter + terms.intra + terms.spc3d, 0.0);
            } else {
                assert_eq!(terms.lambda, 1.0, "iteration {iteration}");
                active += (terms.intra > 0.0) as usize;
            }
        }
    }
    assert!(active > 0);
}

#[test]
fn zero_iterations_return_input_unchanged() {
    let t = tiny(200, 80);
    let mut cfg = tiny_config(0);
    cfg.phase2_iters = 0;
    let init = reinit_from_layout(t.data.seeds.as_ref().unwrap(), cfg.sh_degree).unwrap();
    let state = Checkpoint::from_scene(init.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let r = train_phase(state.clone(), &t.data, &cfg, 1, None, &mut rng).unwrap();
    assert_eq!(r.checkpoint, state);
    assert!(r.events.is_empty() && r.losses.is_empty());
}

#[test]
fn training_is_deterministic_for_a_seed() {
    let t = tiny(300, 100);
    let seg = t.teacher.segmenter();
    let mut cfg = tiny_config(30);
    cfg.phase2_iters = 10;
    cfg.densify_enabled = true;
    cfg.densify.densify_from = 5;
    cfg.densify.densify_interval = 10;
    cfg.densify.grad_threshold = 1e-6;
    let a = run_pipeline(&t.data, &cfg, Some(&seg)).unwrap();
    let b = run_pipeline(&t.data, &cfg, Some(&seg)).unwrap();
    assert_eq!(a.losses, b.losses);
    assert_eq!(a.checkpoint, b.checkpoint);
    assert_eq!(a.events, b.events);
    cfg.seed = 1;
    let c = run_pipeline(&t.data, &cfg, Some(&seg)).unwrap();
    assert_ne!(a.losses, c.losses);
}

#[test]
fn densify_and_ogr_are_logged_with_point_counts() {
    let t = tiny(300, 150);
    let seg = t.teacher.segmenter();
    let mut cfg = tiny_config(20);
    cfg.spc.enabled = false;
    cfg.densify_enabled = true;
    cfg.densify.densify_from = 5;
    cfg.densify.densify_interval = 5;
    cfg.densify.grad_threshold = 1e-7;
    cfg.ogr_enabled = true;
    cfg.ogr.interval = 10;
    cfg.ogr.radius = 0.5;
    let mut data = t.data.clone();
    // Far-away outliers that OGR must remove.
    let seeds = data.seeds.as_mut().unwrap();
    for k in 0..5 {
        seeds.positions.push([1.9, -0.9 + 0.001 * k as f32, 1.9 - 0.9 * k as f32]);
        seeds.sh_dc.push([0.0; 3]);
        seeds.features.extend(std::iter::repeat_n(0.0, seeds.feature_dim));
    }
    let r = run_pipeline(&data, &cfg, Some(&seg)).unwrap();
    let mut densify = 0;
    let mut ogr = Vec::new();
    for e in &r.events {
        match e {
            LogEvent::Densify { before, after, cloned, split, removed, .. } => {
                densify += 1;
                assert_eq!(*after, before + cloned + 2 * split - removed);
            }
            LogEvent::Ogr { before, after, iteration, .. } => ogr.push((*iteration, *before, *after)),
            _ => {}
        }
    }
    assert!(densify >= 2);
    assert_eq!(ogr.iter().map(|o| o.0).collect::<Vec<_>>(), vec![10, 20]);
    assert!(ogr[0].2 < ogr[0].1, "outliers not removed: {ogr:?}");
    let mut log = Vec::new();
    write_log(&r.events, &mut log).unwrap();
    let text = String::from_utf8(log).unwrap();
    assert_eq!(text.lines().count(), r.events.len());
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert!(first.get("event").is_some());
}

#[test]
fn spc_without_segmenter_is_rejected() {
    let t = tiny(100, 40);
    let cfg = tiny_config(10);
    assert!(matches!(run_pipeline(&t.data, &cfg, None), Err(Error::InvalidArgument(_))));
}

#[test]
fn non_finite_loss_aborts_with_snapshot() {
    let t = tiny(100, 40);
    let mut cfg = tiny_config(5);
    cfg.spc.enabled = false;
    let mut init = reinit_from_layout(t.data.seeds.as_ref().unwrap(), 0).unwrap();
    for f in init.features.iter_mut() {
        *f = f32::NAN;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let err = train_phase(Checkpoint::from_scene(init), &t.data, &cfg, 1, None, &mut rng).unwrap_err();
    match err {
        Error::NonFiniteLoss { phase, iteration, snapshot } => {
            assert_eq!((phase, iteration), (1, 1));
            assert!(snapshot.contains("terms"));
        }
        e => panic!("unexpected error {e}"),
    }
}

#[test]
fn evaluate_scores_the_teacher_perfectly_on_labels() {
    let t = tiny(2000, 40);
    let heads = spcgs_core::losses::SemanticHeads {
        omega_f: t.teacher.oracle.aligned_omega_f(),
        ..spcgs_core::losses::SemanticHeads::new(
            t.teacher.oracle.feature_dim,
            8,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
    };
    let ckpt = Checkpoint {
        heads: Some(heads),
        ..Checkpoint::from_scene(t.teacher.scene.clone())
    };
    let report = evaluate(&ckpt, &t.data.test, &t.data.bank, [0.0; 3]).unwrap();
    assert!(report.psnr > 40.0, "psnr {}", report.psnr);
    assert!(report.miou > 0.95, "miou {}", report.miou);
}

#[test]
fn presets_round_trip_through_json() {
    for cfg in [TrainConfig::full(), TrainConfig::desk()] {
        cfg.validate().unwrap();
        let s = serde_json::to_string(&cfg).unwrap();
        let back: TrainConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, cfg);
    }
    let mut bad = TrainConfig::desk();
    bad.lr_sh = -1.0;
    assert!(bad.validate().is_err());
}
