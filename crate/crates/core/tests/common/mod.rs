//! Test-only oracles independent of the library's eigenvalue code.
#![allow(dead_code)]

use num_complex::Complex64;

fn horner(c: &[f64], z: Complex64) -> (Complex64, Complex64) {
    let mut p = Complex64::new(0.0, 0.0);
    let mut dp = Complex64::new(0.0, 0.0);
    for &a in c {
        dp = dp * z + p;
        p = p * z + a;
    }
    (p, dp)
}

/// Polynomial roots by Durand-Kerner (Weierstrass) iteration followed by
/// Newton polishing. `c` holds descending-power coefficients.
pub fn durand_kerner(c: &[f64]) -> Vec<Complex64> {
    let lead = c[0];
    let c: Vec<f64> = c.iter().map(|v| v / lead).collect();
    let n = c.len() - 1;
    // Fujiwara bound for the starting circle
    let radius = 2.0
        * c[1..]
            .iter()
            .enumerate()
            .fold(0.0f64, |m, (k, v)| m.max(v.abs().powf(1.0 / (k + 1) as f64)));
    let seed = Complex64::from_polar(1.0, 0.4);
    let mut z: Vec<Complex64> = (0..n)
        .map(|k| seed.powu(k as u32) * Complex64::from_polar(radius, 0.0) * 0.5)
        .collect();
    for _ in 0..5000 {
        let mut moved = 0.0f64;
        for i in 0..n {
            let (p, _) = horner(&c, z[i]);
            let mut den = Complex64::new(1.0, 0.0);
            for j in 0..n {
                if j != i {
                    den *= z[i] - z[j];
                }
            }
            let dz = p / den;
            z[i] -= dz;
            moved = moved.max(dz.norm() / z[i].norm().max(1.0));
        }
        if moved < 1e-15 {
            break;
        }
    }
    for r in z.iter_mut() {
        for _ in 0..5 {
            let (p, dp) = horner(&c, *r);
            if dp.norm() == 0.0 {
                break;
            }
            *r -= p / dp;
        }
    }
    z
}

/// Greedy matching distance: largest relative distance from each element of
/// `a` to its partner in `b`.
pub fn max_matched_rel_error(a: &[Complex64], b: &[Complex64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut used = vec![false; b.len()];
    let mut worst = 0.0f64;
    for x in a {
        let (j, d) = b
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, y)| (j, (x - y).norm()))
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .unwrap();
        used[j] = true;
        worst = worst.max(d / x.norm().max(1.0));
    }
    worst
}

/// Finds a matching element within relative tolerance on the imaginary part
/// and absolute tolerance on the real part.
pub fn contains_pole(set: &[Complex64], re: f64, im: f64, re_tol: f64, im_rel: f64) -> bool {
    set.iter().any(|p| {
        (p.re - re).abs() <= re_tol
            && if im == 0.0 { p.im.abs() < 1e-6 } else { (p.im - im).abs() <= im_rel * im.abs() }
    })
}
