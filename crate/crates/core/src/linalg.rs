//! Dense nonsymmetric eigenvalue solver and small complex linear-algebra helpers.
//!
//! The eigenvalue path is the classic one: diagonal balancing, Householder
//! reduction to upper Hessenberg form, then Francis double-shift QR on the
//! Hessenberg matrix. Only eigenvalues are produced; eigenvectors, when a
//! caller needs them, come from inverse iteration on the original matrix.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Maximum QR sweeps spent on one eigenvalue before giving up.
const MAX_SWEEPS_PER_EIGENVALUE: usize = 60;

/// Eigenvalues of a real square matrix.
///
/// Complex eigenvalues are returned as conjugate pairs, positive imaginary
/// part first. Order otherwise follows deflation order and carries no meaning.
pub fn eigs(a: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Domain(format!("eigs needs a square matrix, got {}x{}", n, a.ncols())));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("eigs input contains non-finite entries".into()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }

    // 1-based working copy keeps the QR sweep indices readable.
    let mut h = vec![vec![0.0; n + 1]; n + 1];
    for i in 0..n {
        for j in 0..n {
            h[i + 1][j + 1] = a[(i, j)];
        }
    }
    balance(&mut h, n);
    hessenberg(&mut h, n);
    let mut out = hqr(&mut h, n)?;
    // Canonical pair ordering: (re, +im) then (re, -im).
    for k in 0..out.len() {
        if out[k].im < 0.0 && k + 1 < out.len() && out[k + 1].im > 0.0 && out[k + 1].re == out[k].re
        {
            out.swap(k, k + 1);
        }
    }
    Ok(out)
}

fn balance(a: &mut [Vec<f64>], n: usize) {
    const RADIX: f64 = 2.0;
    let sqrdx = RADIX * RADIX;
    loop {
        let mut done = true;
        for i in 1..=n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 1..=n {
                if j != i {
                    c += a[j][i].abs();
                    r += a[i][j].abs();
                }
            }
            if c != 0.0 && r != 0.0 {
                let mut g = r / RADIX;
                let mut f = 1.0;
                let s = c + r;
                while c < g {
                    f *= RADIX;
                    c *= sqrdx;
                }
                g = r * RADIX;
                while c > g {
                    f /= RADIX;
                    c /= sqrdx;
                }
                if (c + r) / f < 0.95 * s {
                    done = false;
                    let g = 1.0 / f;
                    for j in 1..=n {
                        a[i][j] *= g;
                    }
                    for j in 1..=n {
                        a[j][i] *= f;
                    }
                }
            }
        }
        if done {
            break;
        }
    }
}

/// Householder reduction to upper Hessenberg form (eigenvalues only).
fn hessenberg(a: &mut [Vec<f64>], n: usize) {
    let mut ort = vec![0.0; n + 1];
    for m in 2..n {
        let scale: f64 = (m..=n).map(|i| a[i][m - 1].abs()).sum();
        if scale == 0.0 {
            continue;
        }
        let mut hh = 0.0;
        for i in (m..=n).rev() {
            ort[i] = a[i][m - 1] / scale;
            hh += ort[i] * ort[i];
        }
        let mut g = hh.sqrt();
        if ort[m] > 0.0 {
            g = -g;
        }
        hh -= ort[m] * g;
        ort[m] -= g;

        for j in m..=n {
            let f: f64 = (m..=n).rev().map(|i| ort[i] * a[i][j]).sum::<f64>() / hh;
            for i in m..=n {
                a[i][j] -= f * ort[i];
            }
        }
        for i in 1..=n {
            let f: f64 = (m..=n).rev().map(|j| ort[j] * a[i][j]).sum::<f64>() / hh;
            for j in m..=n {
                a[i][j] -= f * ort[j];
            }
        }
        ort[m] *= scale;
        a[m][m - 1] = scale * g;
    }
    for i in 3..=n {
        for j in 1..i - 1 {
            a[i][j] = 0.0;
        }
    }
}

fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

/// Francis double-shift QR on a 1-based upper Hessenberg matrix.
fn hqr(a: &mut [Vec<f64>], n: usize) -> Result<Vec<Complex64>> {
    let mut wr = vec![0.0; n + 1];
    let mut wi = vec![0.0; n + 1];
    let mut anorm = 0.0;
    for i in 1..=n {
        for j in (i.max(2) - 1)..=n {
            anorm += a[i][j].abs();
        }
    }

    let mut nn = n;
    let mut t = 0.0;
    while nn >= 1 {
        let mut its = 0;
        loop {
            let mut l = nn;
            while l >= 2 {
                let mut s = a[l - 1][l - 1].abs() + a[l][l].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[l][l - 1].abs() + s == s {
                    a[l][l - 1] = 0.0;
                    break;
                }
                l -= 1;
            }
            let mut x = a[nn][nn];
            if l == nn {
                wr[nn] = x + t;
                wi[nn] = 0.0;
                nn -= 1;
            } else {
                let mut y = a[nn - 1][nn - 1];
                let mut w = a[nn][nn - 1] * a[nn - 1][nn];
                if l == nn - 1 {
                    let p = 0.5 * (y - x);
                    let q = p * p + w;
                    let mut z = q.abs().sqrt();
                    x += t;
                    if q >= 0.0 {
                        z = p + sign(z, p);
                        wr[nn - 1] = x + z;
                        wr[nn] = x + z;
                        if z != 0.0 {
                            wr[nn] = x - w / z;
                        }
                        wi[nn - 1] = 0.0;
                        wi[nn] = 0.0;
                    } else {
                        wr[nn - 1] = x + p;
                        wr[nn] = x + p;
                        wi[nn - 1] = -z;
                        wi[nn] = z;
                    }
                    nn -= 2;
                } else {
                    if its == MAX_SWEEPS_PER_EIGENVALUE {
                        return Err(Error::EigenNoConvergence { found: n - nn, n });
                    }
                    if its > 0 && its % 10 == 0 {
                        // exceptional shift
                        t += x;
                        for i in 1..=nn {
                            a[i][i] -= x;
                        }
                        let s = a[nn][nn - 1].abs() + a[nn - 1][nn - 2].abs();
                        x = 0.75 * s;
                        y = x;
                        w = -0.4375 * s * s;
                    }
                    its += 1;

                    let mut m = nn - 2;
                    let (mut p, mut q, mut r, mut z);
                    loop {
                        z = a[m][m];
                        r = x - z;
                        let s = y - z;
                        p = (r * s - w) / a[m + 1][m] + a[m][m + 1];
                        q = a[m + 1][m + 1] - z - r - s;
                        r = a[m + 2][m + 1];
                        let s = p.abs() + q.abs() + r.abs();
                        p /= s;
                        q /= s;
                        r /= s;
                        if m == l {
                            break;
                        }
                        let u = a[m][m - 1].abs() * (q.abs() + r.abs());
                        let v = p.abs() * (a[m - 1][m - 1].abs() + z.abs() + a[m + 1][m + 1].abs());
                        if u + v == v {
                            break;
                        }
                        m -= 1;
                    }
                    for i in m + 2..=nn {
                        a[i][i - 2] = 0.0;
                        if i != m + 2 {
                            a[i][i - 3] = 0.0;
                        }
                    }
                    let mut k = m;
                    while k < nn {
                        if k != m {
                            p = a[k][k - 1];
                            q = a[k + 1][k - 1];
                            r = 0.0;
                            if k != nn - 1 {
                                r = a[k + 2][k - 1];
                            }
                            x = p.abs() + q.abs() + r.abs();
                            if x != 0.0 {
                                p /= x;
                                q /= x;
                                r /= x;
                            }
                        }
                        let s = sign((p * p + q * q + r * r).sqrt(), p);
                        if s != 0.0 {
                            if k == m {
                                if l != m {
                                    a[k][k - 1] = -a[k][k - 1];
                                }
                            } else {
                                a[k][k - 1] = -s * x;
                            }
                            p += s;
                            x = p / s;
                            y = q / s;
                            z = r / s;
                            q /= p;
                            r /= p;
                            for j in k..=nn {
                                p = a[k][j] + q * a[k + 1][j];
                                if k != nn - 1 {
                                    p += r * a[k + 2][j];
                                    a[k + 2][j] -= p * z;
                                }
                                a[k + 1][j] -= p * y;
                                a[k][j] -= p * x;
                            }
                            let mmin = nn.min(k + 3);
                            for i in l..=mmin {
                                p = x * a[i][k] + y * a[i][k + 1];
                                if k != nn - 1 {
                                    p += z * a[i][k + 2];
                                    a[i][k + 2] -= p * r;
                                }
                                a[i][k + 1] -= p * q;
                                a[i][k] -= p;
                            }
                        }
                        k += 1;
                    }
                }
            }
            if nn < 2 || l + 1 >= nn {
                break;
            }
        }
    }
    Ok((1..=n).map(|i| Complex64::new(wr[i], wi[i])).collect())
}

/// Solves `m x = b` for complex dense `m` by Gaussian elimination with
/// partial pivoting. Zero pivots are replaced by `eps * norm` so the routine
/// doubles as the inner solve of inverse iteration.
pub fn complex_solve(m: &[Vec<Complex64>], b: &[Complex64]) -> Vec<Complex64> {
    let n = b.len();
    let mut a: Vec<Vec<Complex64>> = m.to_vec();
    let mut x = b.to_vec();
    let norm = a
        .iter()
        .flat_map(|row| row.iter())
        .map(|v| v.norm())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let tiny = f64::EPSILON * norm;
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].norm().total_cmp(&a[j][col].norm()))
            .unwrap_or(col);
        a.swap(col, piv);
        x.swap(col, piv);
        if a[col][col].norm() < tiny {
            a[col][col] = Complex64::new(tiny, 0.0);
        }
        let d = a[col][col];
        for row in col + 1..n {
            let f = a[row][col] / d;
            if f == Complex64::new(0.0, 0.0) {
                continue;
            }
            for k in col..n {
                let v = a[col][k];
                a[row][k] -= f * v;
            }
            let v = x[col];
            x[row] -= f * v;
        }
    }
    for row in (0..n).rev() {
        let mut acc = x[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    x
}

/// Eigenvector for a known eigenvalue by inverse iteration, unit 2-norm.
pub fn eigenvector(a: &DMatrix<f64>, lambda: Complex64) -> Vec<Complex64> {
    let n = a.nrows();
    let shift = lambda + Complex64::new(1.0, 1.0) * (lambda.norm().max(1.0) * 1e-12);
    let m: Vec<Vec<Complex64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let v = Complex64::new(a[(i, j)], 0.0);
                    if i == j {
                        v - shift
                    } else {
                        v
                    }
                })
                .collect()
        })
        .collect();
    let mut v: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(1.0 + 0.1 * i as f64, 0.05 * i as f64))
        .collect();
    for _ in 0..4 {
        v = complex_solve(&m, &v);
        let norm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        for c in v.iter_mut() {
            *c /= norm;
        }
    }
    v
}

/// `‖A v − λ v‖ / ‖v‖` for a candidate eigenpair.
pub fn eigen_residual(a: &DMatrix<f64>, lambda: Complex64, v: &[Complex64]) -> f64 {
    let n = a.nrows();
    let mut num = 0.0;
    for i in 0..n {
        let mut acc = -lambda * v[i];
        for j in 0..n {
            acc += v[j] * a[(i, j)];
        }
        num += acc.norm_sqr();
    }
    let den = v.iter().map(|c| c.norm_sqr()).sum::<f64>();
    (num / den).sqrt()
}

/// Solves the real system `a x = b`.
pub fn solve(a: &DMatrix<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let rhs = nalgebra::DVector::from_column_slice(b);
    let x = a.clone().lu().solve(&rhs).ok_or(Error::Singular("linear solve"))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("linear solve"));
    }
    Ok(x.iter().copied().collect())
}

/// Per-coordinate step `max(1e-7, 1e-7 |x_i|)` scaled by `factor`.
pub fn fd_step(x: f64, factor: f64) -> f64 {
    factor * (1e-7f64).max(1e-7 * x.abs())
}

/// Central-difference Jacobian of `f` at `x`, column `j` using step
/// `fd_step(x_j, factor)`.
pub fn central_jacobian<F>(f: F, x: &[f64], factor: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = x.len();
    let m = f(x)?.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut xp = x.to_vec();
    for j in 0..n {
        let h = fd_step(x[j], factor);
        xp[j] = x[j] + h;
        let fp = f(&xp)?;
        xp[j] = x[j] - h;
        let fm = f(&xp)?;
        xp[j] = x[j];
        for i in 0..m {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_jacobian_of_quadratic() {
        let f = |x: &[f64]| Ok(vec![x[0] * x[0] + x[1], 3.0 * x[1]]);
        let j = central_jacobian(f, &[2.0, -1.0], 1.0).unwrap();
        assert!((j[(0, 0)] - 4.0).abs() < 1e-8);
        assert!((j[(0, 1)] - 1.0).abs() < 1e-8);
        assert_eq!(j[(1, 0)], 0.0);
        assert!((j[(1, 1)] - 3.0).abs() < 1e-8);
    }

    fn sorted(mut v: Vec<Complex64>) -> Vec<Complex64> {
        v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        v
    }

    #[test]
    fn rotation_generator() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let ev = sorted(eigs(&a).unwrap());
        assert!((ev[0] - Complex64::new(0.0, -1.0)).norm() < 1e-14);
        assert!((ev[1] - Complex64::new(0.0, 1.0)).norm() < 1e-14);
    }

    #[test]
    fn diagonal() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, -2.0, -3.0]));
        let ev = sorted(eigs(&a).unwrap());
        for (e, want) in ev.iter().zip([-3.0, -2.0, -1.0]) {
            assert!((e.re - want).abs() < 1e-14 && e.im == 0.0);
        }
    }

    #[test]
    fn empty_and_scalar() {
        assert!(eigs(&DMatrix::zeros(0, 0)).unwrap().is_empty());
        let ev = eigs(&DMatrix::from_element(1, 1, 4.5)).unwrap();
        assert_eq!(ev, vec![Complex64::new(4.5, 0.0)]);
    }

    #[test]
    fn rejects_non_finite() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, f64::NAN, 1.0, 0.0]);
        assert!(eigs(&a).is_err());
    }

    #[test]
    fn pairs_are_conjugate_and_ordered() {
        let a = DMatrix::from_row_slice(
            4,
            4,
            &[0.0, 1.0, 0.0, 0.0, -4.0, -0.2, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.5, 0.0, -9.0, -0.1],
        );
        let ev = eigs(&a).unwrap();
        let mut k = 0;
        while k < ev.len() {
            if ev[k].im != 0.0 {
                assert!(ev[k].im > 0.0);
                assert_eq!(ev[k + 1], ev[k].conj());
                k += 2;
            } else {
                k += 1;
            }
        }
    }

    #[test]
    fn inverse_iteration_residual() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, -1.0, 0.5, 1.0, 3.0, -2.0, 0.0, 4.0, -1.0]);
        for lam in eigs(&a).unwrap() {
            let v = eigenvector(&a, lam);
            assert!(eigen_residual(&a, lam, &v) < 1e-10);
        }
    }
}
