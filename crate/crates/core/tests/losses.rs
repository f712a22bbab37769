use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use spcgs_core::correspondence::{Mask, RegionMaskSet};
use spcgs_core::fixtures::{random_scene, SceneSpec};
use spcgs_core::losses::*;
use spcgs_core::{GaussianSet, ImageBuf};

const D: usize = 5;
const M: usize = 4;

fn unit_rows(m: usize, dim: usize, rng: &mut impl Rng) -> Vec<f32> {
    let mut out = Vec::with_capacity(m * dim);
    for _ in 0..m {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        out.extend(v.iter().map(|x| (x / n) as f32));
    }
    // renormalize in f32 so the bank check passes
    for r in out.chunks_mut(dim) {
        let n = r.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        r.iter_mut().for_each(|x| *x = (*x as f64 / n) as f32);
    }
    out
}

fn bank(rng: &mut impl Rng) -> TextBank {
    let names = (0..M).map(|i| format!("class{i}")).collect();
    TextBank::new(names, EMBED_DIM, unit_rows(M, EMBED_DIM, rng)).unwrap()
}

fn heads(rng: &mut impl Rng) -> SemanticHeads {
    let mut h = SemanticHeads::new(D, M, rng);
    for b in h.omega_f.bias.iter_mut().chain(h.w_psi.bias.iter_mut()) {
        *b = rng.random_range(-0.05..0.05);
    }
    for w in h.omega_s.weight.iter_mut() {
        *w += rng.random_range(-1.0..1.0);
    }
    for b in h.omega_s.bias.iter_mut() {
        *b = rng.random_range(-0.5..0.5);
    }
    h
}

fn feature_image(w: usize, h: usize, rng: &mut impl Rng) -> ImageBuf {
    ImageBuf::from_vec(w, h, D, (0..w * h * D).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Central difference over an f64 slot.
fn fd64(f: &dyn Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Central difference over an f32 slot using the realized step.
fn fd32(f: &dyn Fn(f32) -> f64, x: f32, h: f32) -> f64 {
    let (up, down) = (x + h, x - h);
    (f(up) - f(down)) / (up as f64 - down as f64)
}

fn naive_cos(y: &[f64], v: &[f32]) -> f64 {
    let dot: f64 = y.iter().zip(v).map(|(a, b)| a * *b as f64).sum();
    let ny = y.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
    if ny < 1e-12 || nv < 1e-12 {
        0.0
    } else {
        dot / (ny * nv)
    }
}

fn omega_f(h: &SemanticHeads, f: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; EMBED_DIM];
    h.omega_f.apply(f, &mut y);
    y
}

#[test]
fn logits_match_naive_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (h, b) = (heads(&mut rng), bank(&mut rng));
    let img = feature_image(6, 5, &mut rng);
    let logits = segmentation_logits(&img, &h, &b);
    for p in 0..30 {
        let y = omega_f(&h, img.at(p));
        for m in 0..M {
            let want = naive_cos(&y, b.row(m));
            assert!((logits.at(p)[m] - want).abs() < 1e-6);
        }
    }
}

#[test]
fn logits_trivial_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let b = bank(&mut rng);
    // ω_f maps the one-hot feature e_m exactly onto bank row m
    let mut h = SemanticHeads::new(M, M, &mut rng);
    h.omega_f = LinearMap::zeros(M, EMBED_DIM);
    for m in 0..M {
        for o in 0..EMBED_DIM {
            h.omega_f.weight[o * M + m] = b.row(m)[o];
        }
    }
    let mut img = ImageBuf::zeros(M, 1, M);
    for m in 0..M {
        img.at_mut(m)[m] = 1.0;
    }
    let logits = segmentation_logits(&img, &h, &b);
    for m in 0..M {
        let row = logits.at(m);
        assert!((row[m] - 1.0).abs() < 1e-6);
        assert!(row.iter().enumerate().all(|(i, &v)| i == m || v < row[m]));
    }
    // zero ω_f output → all logits 0
    let zero = ImageBuf::zeros(2, 2, M);
    h.omega_f.bias.iter_mut().for_each(|v| *v = 0.0);
    let l = segmentation_logits(&zero, &h, &b);
    assert!(l.values.iter().all(|&v| v == 0.0));
}

fn labels(w: usize, h: usize, rng: &mut impl Rng) -> Vec<u16> {
    (0..w * h)
        .map(|_| {
            if rng.random::<f64>() < 0.15 {
                IGNORE_LABEL
            } else {
                rng.random_range(0..M as u16)
            }
        })
        .collect()
}

fn raw_targets(n: usize, rng: &mut impl Rng) -> Vec<f32> {
    (0..n * EMBED_DIM).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn naive_semantic(img: &ImageBuf, sup: &SupervisionMaps, h: &SemanticHeads, b: &TextBank) -> f64 {
    let mut cos_sum = 0.0;
    let mut ce_sum = 0.0;
    let mut count = 0.0;
    for p in 0..img.num_pixels() {
        if sup.labels[p] == IGNORE_LABEL {
            continue;
        }
        count += 1.0;
        let y = omega_f(h, img.at(p));
        let s: Vec<f64> = (0..M).map(|m| naive_cos(&y, b.row(m))).collect();
        let target: &[f32] = match &sup.features {
            Some(f) => &f[p * EMBED_DIM..(p + 1) * EMBED_DIM],
            None => b.row(sup.labels[p] as usize),
        };
        cos_sum += 1.0 - naive_cos(&y, target);
        let mut z = vec![0.0; M];
        h.omega_s.apply(&s, &mut z);
        let lse = z.iter().map(|v| v.exp()).sum::<f64>().ln();
        match &sup.relevancy {
            Some(r) => {
                for m in 0..M {
                    ce_sum -= r[p * M + m] as f64 * (z[m] - lse);
                }
            }
            None => ce_sum -= z[sup.labels[p] as usize] - lse,
        }
    }
    (cos_sum + ce_sum) / count
}

fn semantic_value(img: &ImageBuf, sup: &SupervisionMaps, h: &SemanticHeads, b: &TextBank) -> f64 {
    let logits = segmentation_logits(img, h, b);
    loss_semantic(img, &logits, sup, h, b).unwrap().value
}

fn check_semantic_grads(sup: &SupervisionMaps, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, b) = (heads(&mut rng), bank(&mut rng));
    let img = feature_image(sup.width, sup.height, &mut rng);
    let logits = segmentation_logits(&img, &h, &b);
    let out = loss_semantic(&img, &logits, sup, &h, &b).unwrap();
    assert!((out.value - naive_semantic(&img, sup, &h, &b)).abs() < 1e-6);
    assert!(out.heads.is_finite() && out.d_feature.is_finite());
    for i in (0..img.data.len()).step_by(3) {
        let f = |x: f64| {
            let mut m = img.clone();
            m.data[i] = x;
            semantic_value(&m, sup, &h, &b)
        };
        let fd = fd64(&f, img.data[i], 1e-5);
        assert!(rel_err(fd, out.d_feature.data[i]) < 1e-3, "feature {i}: fd {fd} an {}", out.d_feature.data[i]);
    }
    for i in (0..h.omega_f.weight.len()).step_by(97) {
        let f = |x: f32| {
            let mut hh = h.clone();
            hh.omega_f.weight[i] = x;
            semantic_value(&img, sup, &hh, &b)
        };
        let fd = fd32(&f, h.omega_f.weight[i], 1e-3);
        let an = out.heads.omega_f.weight[i];
        assert!(rel_err(fd, an) < 1e-3, "omega_f w {i}: fd {fd} an {an}");
    }
    for i in (0..EMBED_DIM).step_by(41) {
        let f = |x: f32| {
            let mut hh = h.clone();
            hh.omega_f.bias[i] = x;
            semantic_value(&img, sup, &hh, &b)
        };
        let fd = fd32(&f, h.omega_f.bias[i], 1e-3);
        let an = out.heads.omega_f.bias[i];
        assert!(rel_err(fd, an) < 1e-3, "omega_f b {i}: fd {fd} an {an}");
    }
    for i in 0..M * M {
        let f = |x: f32| {
            let mut hh = h.clone();
            hh.omega_s.weight[i] = x;
            semantic_value(&img, sup, &hh, &b)
        };
        let fd = fd32(&f, h.omega_s.weight[i], 1e-3);
        let an = out.heads.omega_s.weight[i];
        assert!(rel_err(fd, an) < 1e-3, "omega_s w {i}: fd {fd} an {an}");
    }
    for i in 0..M {
        let f = |x: f32| {
            let mut hh = h.clone();
            hh.omega_s.bias[i] = x;
            semantic_value(&img, sup, &hh, &b)
        };
        let fd = fd32(&f, h.omega_s.bias[i], 1e-3);
        assert!(rel_err(fd, out.heads.omega_s.bias[i]) < 1e-3);
    }
}

#[test]
fn semantic_loss_with_label_targets() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let sup = SupervisionMaps::from_labels(6, 5, labels(6, 5, &mut rng));
    check_semantic_grads(&sup, 11);
}

#[test]
fn semantic_loss_with_raw_targets_and_soft_relevancy() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut sup = SupervisionMaps::from_labels(4, 4, labels(4, 4, &mut rng));
    sup.features = Some(raw_targets(16, &mut rng));
    let mut rel = Vec::new();
    for _ in 0..16 {
        let v: Vec<f64> = (0..M).map(|_| rng.random::<f64>() + 0.1).collect();
        let s: f64 = v.iter().sum();
        rel.extend(v.iter().map(|x| (x / s) as f32));
    }
    sup.relevancy = Some(rel);
    sup.validate(M).unwrap();
    check_semantic_grads(&sup, 13);
}

#[test]
fn semantic_loss_trivial_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let b = bank(&mut rng);
    // ω_f(F̂) is exactly the bank row of the label and ω_s is very sharp
    let mut h = SemanticHeads::new(M, M, &mut rng);
    h.omega_f = LinearMap::zeros(M, EMBED_DIM);
    for m in 0..M {
        for o in 0..EMBED_DIM {
            h.omega_f.weight[o * M + m] = b.row(m)[o];
        }
    }
    h.omega_s = LinearMap::scaled_identity(M, 1e4);
    let mut img = ImageBuf::zeros(M, 1, M);
    for m in 0..M {
        img.at_mut(m)[m] = 1.0;
    }
    let sup = SupervisionMaps::from_labels(M, 1, (0..M as u16).collect());
    let logits = segmentation_logits(&img, &h, &b);
    let out = loss_semantic(&img, &logits, &sup, &h, &b).unwrap();
    assert!(out.value < 1e-5, "loss at optimum {}", out.value);
    // orthogonal raw targets give a cosine term of exactly 1
    let mut sup2 = sup.clone();
    let mut raw = vec![0.0f32; M * EMBED_DIM];
    for m in 0..M {
        let y: Vec<f64> = b.row(m).iter().map(|&v| v as f64).collect();
        // Gram-Schmidt a random vector against y
        let mut v: Vec<f64> = (0..EMBED_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dot: f64 = v.iter().zip(&y).map(|(a, b)| a * b).sum();
        let yy: f64 = y.iter().map(|a| a * a).sum();
        v.iter_mut().zip(&y).for_each(|(a, b)| *a -= dot / yy * b);
        raw[m * EMBED_DIM..(m + 1) * EMBED_DIM]
            .iter_mut()
            .zip(&v)
            .for_each(|(r, x)| *r = *x as f32);
    }
    sup2.features = Some(raw);
    let out = loss_semantic(&img, &logits, &sup2, &h, &b).unwrap();
    assert!((out.cosine - 1.0).abs() < 1e-6, "{}", out.cosine);
    // generated-view loss shares the functional form
    let g = loss_generated_semantic(&img, &logits, &sup2, &h, &b).unwrap();
    assert_eq!(g.value, out.value);
}

#[test]
fn logits_backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let (h, b) = (heads(&mut rng), bank(&mut rng));
    let img = feature_image(4, 3, &mut rng);
    let logits = segmentation_logits(&img, &h, &b);
    let dl: Vec<f64> = (0..logits.values.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (df, hg) = logits_backward(&img, &logits, &h, &b, &dl).unwrap();
    let value = |img: &ImageBuf, h: &SemanticHeads| {
        let l = segmentation_logits(img, h, &b);
        l.values.iter().zip(&dl).map(|(a, b)| a * b).sum::<f64>()
    };
    for i in 0..img.data.len() {
        let f = |x: f64| {
            let mut m = img.clone();
            m.data[i] = x;
            value(&m, &h)
        };
        assert!(rel_err(fd64(&f, img.data[i], 1e-5), df.data[i]) < 1e-3);
    }
    for i in (0..h.omega_f.weight.len()).step_by(131) {
        let f = |x: f32| {
            let mut hh = h.clone();
            hh.omega_f.weight[i] = x;
            value(&img, &hh)
        };
        let fd = fd32(&f, h.omega_f.weight[i], 1e-3);
        assert!(rel_err(fd, hg.omega_f.weight[i]) < 1e-3, "{i}: {fd} vs {}", hg.omega_f.weight[i]);
    }
}

#[test]
fn phi_uniform_matches_histogram_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let (h, b) = (heads(&mut rng), bank(&mut rng));
    for _ in 0..20 {
        let img = feature_image(8, 8, &mut rng);
        let logits = segmentation_logits(&img, &h, &b);
        let mask = Mask::from_fn(8, 8, |_, _| rng.random::<f64>() < 0.5);
        let mut hist = [0usize; M];
        for p in mask.iter_set() {
            let mut z = vec![0.0; M];
            h.omega_s.apply(logits.at(p), &mut z);
            let best = (0..M).fold(0, |b, i| if z[i] > z[b] { i } else { b });
            hist[best] += 1;
        }
        let want = if mask.is_empty() {
            None
        } else {
            Some((0..M).fold(0, |b, i| if hist[i] > hist[b] { i } else { b }))
        };
        assert_eq!(phi_uniform(&logits, &mask, &h), want);
    }
    let logits = segmentation_logits(&feature_image(3, 3, &mut rng), &h, &b);
    assert_eq!(phi_uniform(&logits, &Mask::empty(3, 3), &h), None);
}

#[test]
fn phi_uniform_majority_and_ties() {
    // identity relevancy head: the argmax of the logits themselves
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut h = SemanticHeads::new(D, M, &mut rng);
    h.omega_s = LinearMap::scaled_identity(M, 1.0);
    let mk = |classes: &[usize]| SegmentationLogits {
        width: classes.len(),
        height: 1,
        classes: M,
        values: classes
            .iter()
            .flat_map(|&c| (0..M).map(move |m| if m == c { 1.0 } else { 0.0 }))
            .collect(),
        norms: vec![1.0; classes.len()],
    };
    let full = |n| Mask::full(n, 1);
    assert_eq!(phi_uniform(&mk(&[3, 3, 3]), &full(3), &h), Some(3));
    assert_eq!(phi_uniform(&mk(&[1, 1, 1, 2, 2]), &full(5), &h), Some(1));
    assert_eq!(phi_uniform(&mk(&[2, 2, 1, 1]), &full(4), &h), Some(1), "tie → lowest index");
}

#[test]
fn color_loss_constant_offset() {
    let a = ImageBuf::filled(24, 24, 3, 0.5);
    let b = ImageBuf::filled(24, 24, 3, 0.4);
    let out = loss_color(&a, &b).unwrap();
    let c1 = 0.01f64 * 0.01;
    let s = (2.0 * 0.5 * 0.4 + c1) / (0.25 + 0.16 + c1);
    assert!((out.l1 - 0.1).abs() < 1e-12);
    assert!(((1.0 - LAMBDA_SSIM) * out.l1 - 0.08).abs() < 1e-12);
    assert!((out.value - (0.08 + LAMBDA_SSIM * (1.0 - s))).abs() < 1e-12);
    assert_eq!(loss_color(&a, &a).unwrap().value, 0.0);
}

#[test]
fn color_loss_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let a = ImageBuf::from_vec(8, 8, 3, (0..192).map(|_| rng.random()).collect());
    let b = ImageBuf::from_vec(8, 8, 3, (0..192).map(|_| rng.random()).collect());
    let out = loss_color(&a, &b).unwrap();
    for i in 0..a.data.len() {
        let f = |x: f64| {
            let mut m = a.clone();
            m.data[i] = x;
            loss_color(&m, &b).unwrap().value
        };
        let fd = fd64(&f, a.data[i], 1e-6);
        assert!(rel_err(fd, out.grad.data[i]) < 1e-3, "{i}: {fd} vs {}", out.grad.data[i]);
    }
}

fn feature_scene(n: usize, d: usize, rng: &mut impl Rng) -> GaussianSet {
    random_scene(
        &SceneSpec {
            count: n,
            feature_dim: d,
            sh_degree: 0,
            ..Default::default()
        },
        rng,
    )
}

#[test]
fn local_loss_matches_all_pairs_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let scene = feature_scene(50, D, &mut rng);
    let cfg = LocalConfig {
        samples: 20,
        neighbors: 5,
    };
    let out = loss_local_adaptive(&scene, &cfg, &mut ChaCha8Rng::seed_from_u64(7));
    let mut want = 0.0;
    for &i in &out.anchors {
        let pi = scene.position(i);
        let mut all: Vec<(f64, usize)> = (0..50)
            .filter(|&j| j != i)
            .map(|j| ((scene.position(j) - pi).norm(), j))
            .collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for &(d, j) in &all[..5] {
            let diff: f64 = scene
                .feature(i)
                .iter()
                .zip(scene.feature(j))
                .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
                .sum::<f64>()
                .sqrt();
            want += (-d).exp() * diff;
        }
    }
    want /= 100.0;
    assert!((out.value - want).abs() < 1e-6);
    for i in (0..scene.features.len()).step_by(3) {
        let f = |x: f32| {
            let mut s = scene.clone();
            s.features[i] = x;
            loss_local_adaptive(&s, &cfg, &mut ChaCha8Rng::seed_from_u64(7)).value
        };
        let fd = fd32(&f, scene.features[i], 1e-3);
        assert!(rel_err(fd, out.d_features[i]) < 1e-3, "{i}: {fd} vs {}", out.d_features[i]);
    }
}

#[test]
fn local_loss_trivial_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut scene = feature_scene(2, 3, &mut rng);
    scene.positions = vec![[0.0, 0.0, 0.0], [0.0, 0.0, 0.7]];
    scene.features = vec![1.0, 2.0, 3.0, 1.0, 0.0, 3.0];
    let out = loss_local_adaptive(&scene, &LocalConfig::default(), &mut rng);
    assert!((out.value - (-0.7f64).exp() * 2.0).abs() < 1e-6);
    let mut same = feature_scene(30, 3, &mut rng);
    same.features = [0.5f32, -0.2, 0.1].repeat(30);
    assert_eq!(loss_local_adaptive(&same, &LocalConfig::default(), &mut rng).value, 0.0);
    let one = feature_scene(1, 3, &mut rng);
    assert_eq!(loss_local_adaptive(&one, &LocalConfig::default(), &mut rng).value, 0.0);
}

fn logits_of(values: Vec<f64>, w: usize, h: usize, m: usize) -> SegmentationLogits {
    SegmentationLogits {
        width: w,
        height: h,
        classes: m,
        norms: vec![1.0; w * h],
        values,
    }
}

#[test]
fn inter_loss_hand_oracle() {
    // 4×4 single-channel features, 2 classes, one pseudo view
    let train_f = ImageBuf::from_vec(4, 4, 1, (0..16).map(|i| i as f64 / 10.0).collect());
    let pseudo_f = ImageBuf::from_vec(4, 4, 1, (0..16).map(|i| 1.0 - i as f64 / 20.0).collect());
    let train_mask = Mask::from_fn(4, 4, |x, y| x < 2 && y < 2);
    let pseudo_mask = Mask::from_fn(4, 4, |x, _| x == 3);
    let train_l = logits_of((0..16).flat_map(|_| [0.9, 0.1]).collect(), 4, 4, 2);
    let pseudo_vals: Vec<f64> = (0..16).flat_map(|i| [i as f64 / 16.0, 0.5]).collect();
    let pseudo_l = logits_of(pseudo_vals.clone(), 4, 4, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut h = SemanticHeads::new(1, 2, &mut rng);
    h.omega_s = LinearMap::scaled_identity(2, 1.0);
    let masks = RegionMaskSet {
        train_mask,
        pseudo_masks: vec![pseudo_mask],
        prompt: [0, 0],
        source_view: 0,
    };
    let out = loss_inter(&train_f, &train_l, &[pseudo_f], &[pseudo_l], &masks, &h).unwrap();
    // train mean over pixels 0, 1, 4, 5
    let t = (0.0 + 0.1 + 0.4 + 0.5) / 4.0;
    // pseudo mean over pixels 3, 7, 11, 15
    let pm = [3, 7, 11, 15].iter().map(|&i| 1.0 - i as f64 / 20.0).sum::<f64>() / 4.0;
    let mut ce = 0.0;
    for &i in &[3usize, 7, 11, 15] {
        let (a, b) = (pseudo_vals[2 * i], pseudo_vals[2 * i + 1]);
        ce -= (a.exp() / (a.exp() + b.exp())).ln() / 4.0;
    }
    assert_eq!(out.dominant, Some(0));
    assert!((out.feature_term - (pm - t).abs()).abs() < 1e-12);
    assert!((out.ce_term - ce).abs() < 1e-12);
    assert!(!out.skipped);
}

#[test]
fn inter_loss_identical_branches_and_empty_masks() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let (h, b) = (heads(&mut rng), bank(&mut rng));
    let img = feature_image(6, 6, &mut rng);
    let l = segmentation_logits(&img, &h, &b);
    let mask = Mask::from_fn(6, 6, |x, y| x + y < 6);
    let masks = RegionMaskSet {
        train_mask: mask.clone(),
        pseudo_masks: vec![mask.clone(), Mask::empty(6, 6)],
        prompt: [0, 0],
        source_view: 0,
    };
    let out = loss_inter(&img, &l, &[img.clone(), img.clone()], &[l.clone(), l.clone()], &masks, &h).unwrap();
    assert_eq!(out.feature_term, 0.0);
    let c = out.dominant.unwrap();
    let mut floor = 0.0;
    for p in mask.iter_set() {
        let s = l.at(p);
        let lse = s.iter().map(|v| v.exp()).sum::<f64>().ln();
        floor -= (s[c] - lse) / mask.count() as f64;
    }
    assert!((out.ce_term - floor).abs() < 1e-12);
    assert!(out.d_pseudo_logits[1].iter().all(|&v| v == 0.0));
    let all_empty = RegionMaskSet {
        train_mask: Mask::empty(6, 6),
        ..masks
    };
    let out = loss_inter(&img, &l, &[img.clone(), img.clone()], &[l.clone(), l.clone()], &all_empty, &h).unwrap();
    assert!(out.skipped && out.value == 0.0);
}

#[test]
fn inter_loss_gradient_through_pseudo_branch() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let (h, b) = (heads(&mut rng), bank(&mut rng));
    let train = feature_image(5, 5, &mut rng);
    let train_l = segmentation_logits(&train, &h, &b);
    let pseudo: Vec<ImageBuf> = (0..2).map(|_| feature_image(5, 5, &mut rng)).collect();
    let masks = RegionMaskSet {
        train_mask: Mask::from_fn(5, 5, |x, _| x < 3),
        pseudo_masks: vec![Mask::from_fn(5, 5, |_, y| y > 1), Mask::from_fn(5, 5, |x, y| x != y)],
        prompt: [0, 0],
        source_view: 0,
    };
    let value = |pseudo: &[ImageBuf], h: &SemanticHeads| {
        let pl: Vec<_> = pseudo.iter().map(|p| segmentation_logits(p, h, &b)).collect();
        loss_inter(&train, &train_l, pseudo, &pl, &masks, h).unwrap().value
    };
    let pl: Vec<_> = pseudo.iter().map(|p| segmentation_logits(p, &h, &b)).collect();
    let out = loss_inter(&train, &train_l, &pseudo, &pl, &masks, &h).unwrap();
    // total feature gradient: direct term plus the chain through the logits
    for v in 0..2 {
        let (dfl, _) = logits_backward(&pseudo[v], &pl[v], &h, &b, &out.d_pseudo_logits[v]).unwrap();
        for i in 0..pseudo[v].data.len() {
            let an = out.d_pseudo_features[v].data[i] + dfl.data[i];
            let f = |x: f64| {
                let mut p = pseudo.clone();
                p[v].data[i] = x;
                value(&p, &h)
            };
            let fd = fd64(&f, pseudo[v].data[i], 1e-6);
            assert!(rel_err(fd, an) < 1e-3, "view {v} entry {i}: fd {fd} an {an}");
        }
    }
    // the training branch is detached: its features carry no gradient slot,
    // and the pseudo cotangents do not depend on training logits beyond Φ
    let mut shifted = train.clone();
    shifted.data.iter_mut().for_each(|v| *v += 1e-4);
    let out2 = loss_inter(&shifted, &train_l, &pseudo, &pl, &masks, &h).unwrap();
    assert_eq!(out.d_pseudo_logits, out2.d_pseudo_logits);
}

fn supcon_oracle(u: &[Vec<f64>], labels: &[usize], tau: f64) -> f64 {
    let z: Vec<Vec<f64>> = u
        .iter()
        .map(|v| {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / n).collect()
        })
        .collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut total = 0.0;
    let mut anchors = 0;
    for i in 0..z.len() {
        let pos: Vec<usize> = (0..z.len()).filter(|&p| p != i && labels[p] == labels[i]).collect();
        if pos.is_empty() {
            continue;
        }
        anchors += 1;
        let denom: f64 = (0..z.len()).filter(|&a| a != i).map(|a| (dot(&z[i], &z[a]) / tau).exp()).sum();
        let mut li = 0.0;
        for &p in &pos {
            li -= ((dot(&z[i], &z[p]) / tau).exp() / denom).ln();
        }
        total += li / pos.len() as f64;
    }
    if anchors == 0 {
        0.0
    } else {
        total / anchors as f64
    }
}

#[test]
fn supcon_matches_pairwise_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for n in [8usize, 17, 64] {
        let u: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..CONTRASTIVE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let flat: Vec<f64> = u.concat();
        let out = supcon(&flat, CONTRASTIVE_DIM, &labels, 0.2);
        assert!((out.value - supcon_oracle(&u, &labels, 0.2)).abs() < 1e-6);
        // scale invariance and order invariance
        let scaled: Vec<f64> = flat.iter().map(|v| v * 3.7).collect();
        assert!((supcon(&scaled, CONTRASTIVE_DIM, &labels, 0.2).value - out.value).abs() < 1e-9);
        let perm: Vec<usize> = (0..n).rev().collect();
        let pu: Vec<f64> = perm.iter().flat_map(|&i| u[i].clone()).collect();
        let pl: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        assert!((supcon(&pu, CONTRASTIVE_DIM, &pl, 0.2).value - out.value).abs() < 1e-9);
        for i in (0..flat.len()).step_by(5) {
            let f = |x: f64| {
                let mut v = flat.clone();
                v[i] = x;
                supcon(&v, CONTRASTIVE_DIM, &labels, 0.2).value
            };
            let fd = fd64(&f, flat[i], 1e-6);
            assert!(rel_err(fd, out.d_u[i]) < 1e-3);
        }
    }
}

#[test]
fn supcon_closed_forms() {
    let u = [1.0, 2.0, 0.5].repeat(4);
    let out = supcon(&u, 3, &[0, 0, 0, 0], 0.2);
    assert!((out.value - 3f64.ln()).abs() < 1e-12);
    assert_eq!(supcon(&[1.0, 0.0, 0.0, 1.0], 2, &[0, 1], 0.2).value, 0.0);
}

#[test]
fn intra_loss_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let (h, b) = (heads(&mut rng), bank(&mut rng));
    let img = feature_image(8, 8, &mut rng);
    let logits = segmentation_logits(&img, &h, &b);
    let masks = vec![
        Mask::from_fn(8, 8, |x, _| x < 3),
        Mask::from_fn(8, 8, |x, y| x >= 3 && y < 4),
        Mask::from_fn(8, 8, |x, y| x >= 5 && y >= 5),
    ];
    let cfg = IntraConfig {
        patch: 6,
        max_samples: 30,
        temperature: 0.2,
    };
    let out = loss_intra(&img, &logits, &masks, &h, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert!(out.samples >= 2 && out.anchors > 0);
    let value = |img: &ImageBuf, hh: &SemanticHeads| {
        loss_intra(img, &logits, &masks, hh, &cfg, &mut ChaCha8Rng::seed_from_u64(9))
            .unwrap()
            .value
    };
    for i in 0..img.data.len() {
        let f = |x: f64| {
            let mut m = img.clone();
            m.data[i] = x;
            value(&m, &h)
        };
        let fd = fd64(&f, img.data[i], 1e-6);
        assert!(rel_err(fd, out.d_feature.data[i]) < 1e-3, "{i}: {fd} vs {}", out.d_feature.data[i]);
    }
    for i in 0..h.w_psi.weight.len() {
        let f = |x: f32| {
            let mut hh = h.clone();
            hh.w_psi.weight[i] = x;
            value(&img, &hh)
        };
        let fd = fd32(&f, h.w_psi.weight[i], 1e-3);
        assert!(rel_err(fd, out.heads.w_psi.weight[i]) < 1e-3);
    }
    // no masks → no samples → zero
    let none = loss_intra(&img, &logits, &[], &h, &cfg, &mut rng).unwrap();
    assert_eq!(none.value, 0.0);
}

#[test]
fn kl_closed_form_and_oracle() {
    let p = [0.0, 0.0];
    let q = [0.0, 3f64.ln()];
    let (kl, _) = kl_softmax(&p, &q);
    let want = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
    assert!((kl - want).abs() < 1e-12);
    assert!((want - 0.1438).abs() < 1e-4);

    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let mut scene = feature_scene(6, 4, &mut rng);
    let train = vec![0u32, 1, 1];
    let pseudo = vec![vec![2u32, 3], vec![3, 4]];
    let out = loss_spc3d(&scene, &train, &pseudo);
    let soft = |v: &[f64]| {
        let s: f64 = v.iter().map(|x| x.exp()).sum();
        v.iter().map(|x| x.exp() / s).collect::<Vec<_>>()
    };
    let f = |i: usize, s: &GaussianSet| s.feature(i).iter().map(|&v| v as f64).collect::<Vec<_>>();
    let mean: Vec<f64> = (0..4).map(|k| (f(0, &scene)[k] + f(1, &scene)[k]) / 2.0).collect();
    let pbar = soft(&mean);
    let mut want = 0.0;
    for j in [2, 3, 4] {
        let q = soft(&f(j, &scene));
        want += (0..4).map(|k| pbar[k] * (pbar[k] / q[k]).ln()).sum::<f64>();
    }
    assert!((out.value - want).abs() < 1e-6);
    assert_eq!(out.targets, vec![2, 3, 4]);
    // gradients: only pseudo-side Gaussians, matching finite differences
    for i in 0..scene.features.len() {
        let g = |x: f32| {
            let mut s = scene.clone();
            s.features[i] = x;
            loss_spc3d(&s, &train, &pseudo).value
        };
        let an = out.d_features[i];
        if i / 4 <= 1 {
            assert_eq!(an, 0.0, "training side is detached");
            continue;
        }
        let fd = fd32(&g, scene.features[i], 1e-3);
        assert!(rel_err(fd, an) < 1e-3);
    }
    // shared features → 0; empty pseudo list → skipped
    scene.features = [0.3f32, -0.1, 0.2, 0.0].repeat(6);
    assert!(loss_spc3d(&scene, &train, &pseudo).value.abs() < 1e-12);
    assert!(loss_spc3d(&scene, &train, &[vec![2], vec![]]).skipped);
}
