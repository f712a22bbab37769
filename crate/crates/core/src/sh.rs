//! Real spherical-harmonics color basis up to degree 3.
//!
//! Coefficients are stored coefficient-major (`[k][channel]`). The basis uses
//! the Condon-Shortley phase (e.g. `Y₁₋₁ = −C₁·y`).

pub const MAX_DEGREE: usize = 3;
pub const C0: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_9;
const C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Coefficients per color channel for a given degree.
#[inline]
pub const fn num_coeffs(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Evaluates the basis at unit direction `d`, writing `num_coeffs(degree)` values.
pub fn basis(degree: usize, d: &[f64; 3], out: &mut [f64]) {
    let [x, y, z] = *d;
    out[0] = C0;
    if degree == 0 {
        return;
    }
    out[1] = -C1 * y;
    out[2] = C1 * z;
    out[3] = -C1 * x;
    if degree == 1 {
        return;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    out[4] = C2[0] * x * y;
    out[5] = C2[1] * y * z;
    out[6] = C2[2] * (2.0 * zz - xx - yy);
    out[7] = C2[3] * x * z;
    out[8] = C2[4] * (xx - yy);
    if degree == 2 {
        return;
    }
    out[9] = C3[0] * y * (3.0 * xx - yy);
    out[10] = C3[1] * x * y * z;
    out[11] = C3[2] * y * (4.0 * zz - xx - yy);
    out[12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    out[13] = C3[4] * x * (4.0 * zz - xx - yy);
    out[14] = C3[5] * z * (xx - yy);
    out[15] = C3[6] * x * (xx - 3.0 * yy);
}

/// Partial derivatives of each basis polynomial with respect to `(x, y, z)`.
pub fn basis_grad(degree: usize, d: &[f64; 3], out: &mut [[f64; 3]]) {
    let [x, y, z] = *d;
    out[0] = [0.0; 3];
    if degree == 0 {
        return;
    }
    out[1] = [0.0, -C1, 0.0];
    out[2] = [0.0, 0.0, C1];
    out[3] = [-C1, 0.0, 0.0];
    if degree == 1 {
        return;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    out[4] = [C2[0] * y, C2[0] * x, 0.0];
    out[5] = [0.0, C2[1] * z, C2[1] * y];
    out[6] = [-2.0 * C2[2] * x, -2.0 * C2[2] * y, 4.0 * C2[2] * z];
    out[7] = [C2[3] * z, 0.0, C2[3] * x];
    out[8] = [2.0 * C2[4] * x, -2.0 * C2[4] * y, 0.0];
    if degree == 2 {
        return;
    }
    out[9] = [C3[0] * 6.0 * x * y, C3[0] * (3.0 * xx - 3.0 * yy), 0.0];
    out[10] = [C3[1] * y * z, C3[1] * x * z, C3[1] * x * y];
    out[11] = [
        C3[2] * (-2.0 * x * y),
        C3[2] * (4.0 * zz - xx - 3.0 * yy),
        C3[2] * 8.0 * y * z,
    ];
    out[12] = [
        C3[3] * (-6.0 * x * z),
        C3[3] * (-6.0 * y * z),
        C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
    ];
    out[13] = [
        C3[4] * (4.0 * zz - 3.0 * xx - yy),
        C3[4] * (-2.0 * x * y),
        C3[4] * 8.0 * x * z,
    ];
    out[14] = [C3[5] * 2.0 * x * z, C3[5] * (-2.0 * y * z), C3[5] * (xx - yy)];
    out[15] = [C3[6] * (3.0 * xx - 3.0 * yy), C3[6] * (-6.0 * x * y), 0.0];
}

/// Color seen from unit direction `view_dir`: `max(Σ c_k Y_k(dir) + 0.5, 0)` per channel.
pub fn eval_sh(degree: usize, coeffs: &[f32], view_dir: &[f64; 3]) -> [f64; 3] {
    let k = num_coeffs(degree);
    debug_assert_eq!(coeffs.len(), k * 3);
    let mut b = [0.0; 16];
    basis(degree, view_dir, &mut b);
    let mut rgb = [0.5; 3];
    for (i, bi) in b.iter().take(k).enumerate() {
        for c in 0..3 {
            rgb[c] += coeffs[i * 3 + c] as f64 * bi;
        }
    }
    rgb.map(|v| v.max(0.0))
}

/// Backward of [`eval_sh`]: accumulates into `d_coeffs` and returns dL/d(view_dir)
/// (with respect to the unnormalized components of the direction polynomial).
pub fn eval_sh_backward(
    degree: usize,
    coeffs: &[f32],
    view_dir: &[f64; 3],
    d_color: &[f64; 3],
    d_coeffs: &mut [f64],
) -> [f64; 3] {
    let k = num_coeffs(degree);
    let mut b = [0.0; 16];
    basis(degree, view_dir, &mut b);
    let mut raw = [0.5; 3];
    for (i, bi) in b.iter().take(k).enumerate() {
        for c in 0..3 {
            raw[c] += coeffs[i * 3 + c] as f64 * bi;
        }
    }
    // clamped channels pass no gradient
    let g: [f64; 3] = std::array::from_fn(|c| if raw[c] < 0.0 { 0.0 } else { d_color[c] });
    for i in 0..k {
        for c in 0..3 {
            d_coeffs[i * 3 + c] += g[c] * b[i];
        }
    }
    if degree == 0 {
        return [0.0; 3];
    }
    let mut db = [[0.0; 3]; 16];
    basis_grad(degree, view_dir, &mut db);
    let mut d_dir = [0.0; 3];
    for i in 1..k {
        let w: f64 = (0..3).map(|c| g[c] * coeffs[i * 3 + c] as f64).sum();
        for a in 0..3 {
            d_dir[a] += w * db[i][a];
        }
    }
    d_dir
}

/// RGB color to the degree-0 coefficient that reproduces it.
#[inline]
pub fn rgb_to_dc(rgb: f64) -> f64 {
    (rgb - 0.5) / C0
}

#[inline]
pub fn dc_to_rgb(dc: f64) -> f64 {
    dc * C0 + 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn factorial(n: usize) -> f64 {
        (1..=n).map(|v| v as f64).product::<f64>().max(1.0)
    }

    /// Associated Legendre P_l^m(x) with the Condon-Shortley phase, by recurrence.
    fn legendre(l: usize, m: usize, x: f64) -> f64 {
        let mut pmm = 1.0;
        if m > 0 {
            let s = ((1.0 - x) * (1.0 + x)).sqrt();
            let mut fact = 1.0;
            for _ in 0..m {
                pmm *= -fact * s;
                fact += 2.0;
            }
        }
        if l == m {
            return pmm;
        }
        let mut pmmp1 = x * (2 * m + 1) as f64 * pmm;
        if l == m + 1 {
            return pmmp1;
        }
        let mut pll = 0.0;
        for ll in (m + 2)..=l {
            pll = ((2 * ll - 1) as f64 * x * pmmp1 - (ll + m - 1) as f64 * pmm) / (ll - m) as f64;
            pmm = pmmp1;
            pmmp1 = pll;
        }
        pll
    }

    /// Real SH from spherical coordinates; index order l², …, matching m = −l..l.
    fn real_sh_oracle(l: usize, m: i64, d: &[f64; 3]) -> f64 {
        let theta = d[2].clamp(-1.0, 1.0).acos();
        let phi = d[1].atan2(d[0]);
        let am = m.unsigned_abs() as usize;
        let k = ((2 * l + 1) as f64 / (4.0 * PI) * factorial(l - am) / factorial(l + am)).sqrt();
        let p = legendre(l, am, theta.cos());
        match m.cmp(&0) {
            std::cmp::Ordering::Equal => k * p,
            std::cmp::Ordering::Greater => 2f64.sqrt() * k * p * (am as f64 * phi).cos(),
            std::cmp::Ordering::Less => 2f64.sqrt() * k * p * (am as f64 * phi).sin(),
        }
    }

    fn random_dir(rng: &mut impl Rng) -> [f64; 3] {
        loop {
            let v: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if n > 0.1 && n < 1.0 {
                return v.map(|c| c / n);
            }
        }
    }

    #[test]
    fn basis_matches_legendre_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let d = random_dir(&mut rng);
            let mut b = [0.0; 16];
            basis(3, &d, &mut b);
            let mut idx = 0;
            for l in 0..=3usize {
                for m in -(l as i64)..=(l as i64) {
                    let want = real_sh_oracle(l, m, &d);
                    assert!((b[idx] - want).abs() < 1e-9, "l={l} m={m}: {} vs {want}", b[idx]);
                    idx += 1;
                }
            }
        }
    }

    #[test]
    fn degree3_color_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let coeffs: Vec<f32> = (0..48).map(|_| rng.random_range(-0.3..0.3)).collect();
            let d = random_dir(&mut rng);
            let got = eval_sh(3, &coeffs, &d);
            let mut want = [0.5; 3];
            let mut idx = 0;
            for l in 0..=3usize {
                for m in -(l as i64)..=(l as i64) {
                    let y = real_sh_oracle(l, m, &d);
                    for c in 0..3 {
                        want[c] += coeffs[idx * 3 + c] as f64 * y;
                    }
                    idx += 1;
                }
            }
            for c in 0..3 {
                assert!((got[c] - want[c].max(0.0)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn degree0_is_direction_independent() {
        let coeffs = [0.7f32, -0.2, 0.1];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let c = eval_sh(0, &coeffs, &random_dir(&mut rng));
            for ch in 0..3 {
                let want = (coeffs[ch] as f64 * C0 + 0.5).max(0.0);
                assert!((c[ch] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn z_linear_term_flips_sign() {
        let mut coeffs = [0.0f32; 12];
        coeffs[6..9].copy_from_slice(&[0.4, 0.2, 0.1]);
        let up = eval_sh(1, &coeffs, &[0.0, 0.0, 1.0]);
        let down = eval_sh(1, &coeffs, &[0.0, 0.0, -1.0]);
        for c in 0..3 {
            assert!(((up[c] - 0.5) + (down[c] - 0.5)).abs() < 1e-12);
            assert!(up[c] > 0.5);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let coeffs: Vec<f32> = (0..48).map(|_| rng.random_range(-0.2..0.2)).collect();
        let d = random_dir(&mut rng);
        let dc = [0.3, -0.7, 1.1];
        let mut dcoef = vec![0.0; 48];
        let ddir = eval_sh_backward(3, &coeffs, &d, &dc, &mut dcoef);
        let f = |dd: &[f64; 3]| {
            let c = eval_sh(3, &coeffs, dd);
            c[0] * dc[0] + c[1] * dc[1] + c[2] * dc[2]
        };
        let h = 1e-6;
        for a in 0..3 {
            let mut p = d;
            let mut m = d;
            p[a] += h;
            m[a] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            assert!((fd - ddir[a]).abs() < 1e-6, "axis {a}: {fd} vs {}", ddir[a]);
        }
        let mut b = [0.0; 16];
        basis(3, &d, &mut b);
        for k in 0..16 {
            for c in 0..3 {
                assert!((dcoef[k * 3 + c] - dc[c] * b[k]).abs() < 1e-12);
            }
        }
    }
}
