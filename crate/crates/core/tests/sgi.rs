use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spcgs_core::geom::{logit, sigmoid, Gaussian, GaussianSet};
use spcgs_core::optim::{AdamConfig, GaussianAdam};
use spcgs_core::sgi::*;
use spcgs_core::RenderGrads;

fn gaussian(p: [f32; 3], log_scale: f32, opacity: f64, d: usize) -> Gaussian {
    Gaussian {
        position: p,
        sh: vec![0.1, 0.2, 0.3],
        opacity_logit: logit(opacity) as f32,
        log_scale: [log_scale; 3],
        rotation: [1.0, 0.0, 0.0, 0.0],
        feature: (0..d).map(|k| k as f32 + p[0]).collect(),
    }
}

fn scene_at(points: &[[f32; 3]]) -> GaussianSet {
    let mut s = GaussianSet::new(0, 2);
    for &p in points {
        s.push(&gaussian(p, -3.0, 0.5, 2));
    }
    s
}

fn brute_survivors(points: &[[f32; 3]], r: f64, min: usize) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| {
            let count = (0..points.len())
                .filter(|&j| {
                    j != i && {
                        let d2: f64 = (0..3)
                            .map(|a| (points[i][a] as f64 - points[j][a] as f64).powi(2))
                            .sum();
                        d2 <= r * r
                    }
                })
                .count();
            count >= min
        })
        .collect()
}

fn clustered_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f32; 3]> {
    let centers: Vec<[f32; 3]> = (0..6)
        .map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0), rng.random_range(-2.0..2.0)])
        .collect();
    (0..n)
        .map(|_| {
            if rng.random_bool(0.8) {
                let c = centers[rng.random_range(0..centers.len())];
                c.map(|v| v + rng.random_range(-0.3f32..0.3))
            } else {
                [rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0), rng.random_range(-2.0..2.0)]
            }
        })
        .collect()
}

#[test]
fn ogr_matches_all_pairs_oracle() {
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=2000);
        let pts = clustered_points(&mut rng, n);
        let r = rng.random_range(0.05..0.6);
        let min = rng.random_range(1..=8);
        let scene = scene_at(&pts);
        let out = ogr(&scene, &OgrConfig { neighbor_min: min, radius: r, interval: 1 }).unwrap();
        let expect = brute_survivors(&pts, r, min);
        let got: Vec<usize> = out.sources.iter().map(|s| s.unwrap()).collect();
        assert_eq!(got, expect, "seed {seed}");
        assert_eq!(out.removed, n - expect.len());
        assert_eq!(out.scene, scene.select(&expect));
    }
}

#[test]
fn ogr_removes_isolated_and_keeps_clusters() {
    let mut pts: Vec<[f32; 3]> = (0..10).map(|k| [0.01 * k as f32, 0.0, 0.0]).collect();
    pts.push([3.0, 0.0, 0.0]);
    let out = ogr(&scene_at(&pts), &OgrConfig { neighbor_min: 5, radius: 0.2, interval: 1 }).unwrap();
    assert_eq!(out.scene.len(), 10);
    assert!(out.scene.positions.iter().all(|p| p[0] < 1.0));
}

#[test]
fn ogr_edge_cases() {
    let cfg = OgrConfig { neighbor_min: 1, radius: 0.5, interval: 1 };
    assert_eq!(ogr(&scene_at(&[[0.0; 3]]), &cfg).unwrap().scene.len(), 0);
    assert_eq!(ogr(&scene_at(&[]), &cfg).unwrap().scene.len(), 0);
    // Six coincident points each see five others.
    let same = vec![[0.25f32, -0.5, 1.0]; 6];
    let five = OgrConfig { neighbor_min: 5, ..cfg };
    assert_eq!(ogr(&scene_at(&same), &five).unwrap().scene.len(), 6);
    let six = OgrConfig { neighbor_min: 6, ..cfg };
    assert_eq!(ogr(&scene_at(&same), &six).unwrap().scene.len(), 0);
    // The radius is inclusive.
    let pair = [[0.0, 0.0, 0.0], [0.5, 0.0, 0.0]];
    assert_eq!(ogr(&scene_at(&pair), &cfg).unwrap().scene.len(), 2);
    // A Gaussian does not count itself.
    assert_eq!(neighbor_counts(&[[0.0; 3]], 1.0, usize::MAX), vec![0]);
    for bad in [
        OgrConfig { neighbor_min: 0, ..cfg },
        OgrConfig { radius: 0.0, ..cfg },
        OgrConfig { radius: f64::NAN, ..cfg },
    ] {
        assert!(ogr(&scene_at(&pair), &bad).is_err());
    }
}

fn grads_with(scene: &GaussianSet, mean2d: &[[f64; 2]]) -> RenderGrads {
    let mut g = RenderGrads::zeros(scene);
    g.mean2d = mean2d.to_vec();
    g.visible = vec![true; scene.len()];
    g
}

#[test]
fn densify_clones_splits_and_prunes() {
    let mut scene = GaussianSet::new(0, 2);
    scene.push(&gaussian([0.0, 0.0, 0.0], (0.001f32).ln(), 0.5, 2)); // small, hot: clone
    scene.push(&gaussian([1.0, 0.0, 0.0], (0.5f32).ln(), 0.5, 2)); // large, hot: split
    scene.push(&gaussian([2.0, 0.0, 0.0], (0.5f32).ln(), 0.5, 2)); // cold: keep
    scene.push(&gaussian([3.0, 0.0, 0.0], (0.001f32).ln(), 0.001, 2)); // transparent: prune
    let mut stats = DensifyStats::new(4);
    // Gradients in pixels of a 100×100 view: NDC norm = 50·|g|.
    stats.add(&grads_with(&scene, &[[1e-4, 0.0], [0.0, 1e-4], [1e-7, 0.0], [1e-4, 0.0]]), 100, 100);
    assert_relative_eq!(stats.mean(0), 5e-3, max_relative = 1e-12);
    let cfg = DensifyConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let out = densify_and_prune(&scene, &stats, &cfg, 4.0, &mut rng).unwrap();
    assert_eq!((out.cloned, out.split, out.removed), (1, 1, 2));
    assert_eq!(out.scene.len(), 5);
    assert_eq!(&out.sources[..2], &[Some(0), Some(2)]);
    assert!(out.sources[2..].iter().all(Option::is_none));
    // The clone is an exact copy.
    assert_eq!(out.scene.get(2), scene.get(0));
    // Split children are shrunk by 1.6 and keep everything else.
    let child = out.scene.get(3);
    assert_relative_eq!(child.log_scale[0] as f64, (0.5f64).ln() - 1.6f64.ln(), epsilon = 1e-6);
    assert_eq!(child.feature, scene.get(1).feature);
    assert_eq!(child.opacity_logit, scene.get(1).opacity_logit);
}

#[test]
fn densify_respects_the_gaussian_cap() {
    let scene = scene_at(&[[0.0; 3], [1.0, 0.0, 0.0]]);
    let mut stats = DensifyStats::new(2);
    stats.add(&grads_with(&scene, &[[1.0, 0.0], [1.0, 0.0]]), 10, 10);
    let cfg = DensifyConfig {
        max_gaussians: 2,
        ..DensifyConfig::default()
    };
    let out = densify_and_prune(&scene, &stats, &cfg, 4.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(out.scene, scene);
    assert_eq!((out.cloned, out.split, out.removed), (0, 0, 0));
    let three = DensifyConfig {
        max_gaussians: 3,
        ..cfg
    };
    let out = densify_and_prune(&scene, &stats, &three, 4.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(out.scene.len(), 3);
    assert_eq!(out.cloned + out.split, 1);
}

#[test]
fn stats_count_only_visible_views_and_remap() {
    let scene = scene_at(&[[0.0; 3], [1.0, 0.0, 0.0]]);
    let mut stats = DensifyStats::new(2);
    let mut g = grads_with(&scene, &[[2.0, 0.0], [1.0, 0.0]]);
    stats.add(&g, 2, 2);
    g.visible[1] = false;
    g.mean2d[0] = [0.0, 4.0];
    stats.add(&g, 2, 2);
    assert_relative_eq!(stats.mean(0), 3.0);
    assert_relative_eq!(stats.mean(1), 1.0);
    stats.remap(&[Some(1), None, Some(0)]);
    assert_eq!(stats.count, vec![1, 0, 2]);
    assert_eq!(stats.mean(1), 0.0);
}

#[test]
fn optimizer_moments_follow_remap() {
    let scene = scene_at(&[[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
    let mut adam = GaussianAdam::new(&scene, AdamConfig::default());
    let mut s = scene.clone();
    let mut g = RenderGrads::zeros(&s);
    // Tag each Gaussian's moment with a distinct gradient.
    g.positions = vec![[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]];
    let lr = spcgs_core::optim::LearningRates {
        position: 0.1,
        sh_dc: 0.0,
        sh_rest: 0.0,
        opacity: 0.0,
        scale: 0.0,
        rotation: 0.0,
        feature: 0.0,
    };
    adam.step(&mut s, &g, &lr);
    let sources = vec![Some(2), None, Some(0)];
    let picked = s.select(&[2, 0, 0]);
    adam.remap(&picked, &sources);
    assert_eq!(adam.len(), 3);
    // A second step with zero gradients moves carried-over Gaussians by
    // their first moment and leaves the fresh one still.
    let mut t = picked.clone();
    let zero = RenderGrads::zeros(&t);
    adam.step(&mut t, &zero, &lr);
    assert_ne!(t.positions[0], picked.positions[0]);
    assert_eq!(t.positions[1], picked.positions[1]);
    assert_ne!(t.positions[2], picked.positions[2]);
}

#[test]
fn reinit_three_points_on_a_line() {
    let layout = LayoutPoints {
        feature_dim: 1,
        positions: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]],
        sh_dc: vec![[0.1, 0.2, 0.3]; 3],
        features: vec![1.0, 2.0, 3.0],
    };
    let s = reinit_from_layout(&layout, 2).unwrap();
    let expect = [1.5, 1.0, 1.5];
    for i in 0..3 {
        for a in 0..3 {
            assert_relative_eq!(s.scale(i)[a], expect[i], max_relative = 1e-6);
        }
        assert_relative_eq!(s.opacity(i), 0.1, max_relative = 1e-6);
        assert_eq!(s.rotations[i], [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(&s.sh(i)[..3], &[0.1, 0.2, 0.3]);
        assert!(s.sh(i)[3..].iter().all(|&v| v == 0.0));
        assert_eq!(s.feature(i), &[i as f32 + 1.0]);
    }
}

#[test]
fn reinit_edge_cases() {
    let single = LayoutPoints {
        feature_dim: 0,
        positions: vec![[1.0, 2.0, 3.0]],
        sh_dc: vec![[0.0; 3]],
        features: vec![],
    };
    let s = reinit_from_layout(&single, 0).unwrap();
    assert_relative_eq!(s.scale(0)[0], ISOLATED_SCALE, max_relative = 1e-6);
    let empty = LayoutPoints {
        positions: vec![],
        sh_dc: vec![],
        ..single
    };
    assert!(matches!(reinit_from_layout(&empty, 0), Err(spcgs_core::Error::EmptyLayout)));
    assert_relative_eq!(sigmoid(logit(REINIT_OPACITY)), REINIT_OPACITY, max_relative = 1e-12);
}

#[test]
fn export_then_reinit_preserves_layout() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut scene = GaussianSet::new(3, 4);
    for _ in 0..40 {
        let mut g = gaussian(
            [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            -2.0,
            0.7,
            4,
        );
        g.sh = (0..48).map(|_| rng.random_range(-1.0..1.0)).collect();
        scene.push(&g);
    }
    let layout = export_layout(&scene);
    let back = reinit_from_layout(&layout, 3).unwrap();
    assert_eq!(back.positions, scene.positions);
    assert_eq!(back.features, scene.features);
    for i in 0..40 {
        assert_eq!(&back.sh(i)[..3], &scene.sh(i)[..3]);
    }
    assert_eq!(export_layout(&back), layout);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn neighbor_counts_match_brute_force(
        pts in prop::collection::vec(prop::array::uniform3(-1.0f32..1.0), 0..120),
        r in 0.01f64..1.0,
    ) {
        let counts = neighbor_counts(&pts, r, usize::MAX);
        for (i, &c) in counts.iter().enumerate() {
            let expect = (0..pts.len())
                .filter(|&j| j != i && (0..3).map(|a| (pts[i][a] as f64 - pts[j][a] as f64).powi(2)).sum::<f64>() <= r * r)
                .count();
            prop_assert_eq!(c, expect);
        }
    }

    #[test]
    fn ogr_survivors_are_a_subset_with_enough_neighbors(
        pts in prop::collection::vec(prop::array::uniform3(-1.0f32..1.0), 0..150),
        r in 0.05f64..0.8,
        min in 1usize..6,
    ) {
        let out = ogr(&scene_at(&pts), &OgrConfig { neighbor_min: min, radius: r, interval: 1 }).unwrap();
        prop_assert_eq!(out.sources.iter().map(|s| s.unwrap()).collect::<Vec<_>>(), brute_survivors(&pts, r, min));
        prop_assert!(out.sources.windows(2).all(|w| w[0] < w[1]));
    }
}
