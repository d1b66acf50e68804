//! Real polynomials with coefficients stored in descending powers.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Clone, Debug, PartialEq)]
pub struct Poly {
    /// Descending powers; `coeffs[0]` multiplies `s^degree`.
    coeffs: Vec<f64>,
}

impl Poly {
    /// Builds a polynomial from descending-power coefficients, dropping
    /// leading zeros.
    pub fn new(coeffs: Vec<f64>) -> Self {
        let first = coeffs.iter().position(|c| *c != 0.0).unwrap_or(coeffs.len());
        let mut coeffs = coeffs[first..].to_vec();
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        Self { coeffs }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(vec![c])
    }

    /// `s`
    pub fn s() -> Self {
        Self::new(vec![1.0, 0.0])
    }

    /// Monic polynomial with the given roots. Complex roots must come in
    /// conjugate pairs for the result to be real; imaginary residue is dropped.
    pub fn from_roots(roots: &[Complex64]) -> Self {
        let mut c = vec![Complex64::new(1.0, 0.0)];
        for r in roots {
            let mut next = vec![Complex64::new(0.0, 0.0); c.len() + 1];
            for (i, v) in c.iter().enumerate() {
                next[i] += v;
                next[i + 1] -= v * r;
            }
            c = next;
        }
        Self::new(c.iter().map(|v| v.re).collect())
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.len() == 1 && self.coeffs[0] == 0.0
    }

    pub fn leading(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn scale(&self, k: f64) -> Self {
        Self::new(self.coeffs.iter().map(|c| c * k).collect())
    }

    /// Horner evaluation at a complex point.
    pub fn eval(&self, s: Complex64) -> Complex64 {
        self.coeffs
            .iter()
            .fold(Complex64::new(0.0, 0.0), |acc, c| acc * s + c)
    }

    pub fn eval_real(&self, s: f64) -> f64 {
        self.coeffs.iter().fold(0.0, |acc, c| acc * s + c)
    }

    /// `Σ |c_k| |s|^k`, the natural scale for judging whether `|p(s)|` is small.
    pub fn eval_abs_scale(&self, s: Complex64) -> f64 {
        let r = s.norm();
        self.coeffs.iter().fold(0.0, |acc, c| acc * r + c.abs())
    }

    pub fn derivative(&self) -> Self {
        let d = self.degree();
        if d == 0 {
            return Self::constant(0.0);
        }
        Self::new(
            self.coeffs[..d]
                .iter()
                .enumerate()
                .map(|(i, c)| c * (d - i) as f64)
                .collect(),
        )
    }

    /// Roots via eigenvalues of the companion matrix.
    ///
    /// The variable is rescaled by the geometric mean root magnitude first,
    /// which keeps the companion entries near unity for polynomials whose
    /// coefficients span many decades.
    pub fn roots(&self) -> Result<Vec<Complex64>> {
        if self.is_zero() {
            return Err(Error::Domain("roots of the zero polynomial".into()));
        }
        // strip roots at the origin
        let mut c = self.coeffs.clone();
        let mut zeros = 0;
        while c.len() > 1 && *c.last().unwrap() == 0.0 {
            c.pop();
            zeros += 1;
        }
        let n = c.len() - 1;
        let mut out = vec![Complex64::new(0.0, 0.0); zeros];
        if n == 0 {
            return Ok(out);
        }
        let sigma = (c[n] / c[0]).abs().powf(1.0 / n as f64);
        let sigma = if sigma.is_finite() && sigma > 0.0 { sigma } else { 1.0 };
        // p(sigma * z) / (c0 sigma^n): monic in z
        let scaled: Vec<f64> = (0..=n)
            .map(|k| c[k] / c[0] / sigma.powi(k as i32))
            .collect();
        let mut comp = DMatrix::zeros(n, n);
        for j in 0..n {
            comp[(0, j)] = -scaled[j + 1];
        }
        for i in 1..n {
            comp[(i, i - 1)] = 1.0;
        }
        out.extend(linalg::eigs(&comp)?.into_iter().map(|z| z * sigma));
        Ok(out)
    }
}

impl Add for &Poly {
    type Output = Poly;
    fn add(self, rhs: &Poly) -> Poly {
        let n = self.coeffs.len().max(rhs.coeffs.len());
        let mut c = vec![0.0; n];
        for (i, v) in self.coeffs.iter().rev().enumerate() {
            c[n - 1 - i] += v;
        }
        for (i, v) in rhs.coeffs.iter().rev().enumerate() {
            c[n - 1 - i] += v;
        }
        Poly::new(c)
    }
}

impl Sub for &Poly {
    type Output = Poly;
    fn sub(self, rhs: &Poly) -> Poly {
        self + &(-rhs)
    }
}

impl Neg for &Poly {
    type Output = Poly;
    fn neg(self) -> Poly {
        self.scale(-1.0)
    }
}

impl Mul for &Poly {
    type Output = Poly;
    fn mul(self, rhs: &Poly) -> Poly {
        let mut c = vec![0.0; self.coeffs.len() + rhs.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in rhs.coeffs.iter().enumerate() {
                c[i + j] += a * b;
            }
        }
        Poly::new(c)
    }
}

impl Add for Poly {
    type Output = Poly;
    fn add(self, rhs: Poly) -> Poly {
        &self + &rhs
    }
}

impl Sub for Poly {
    type Output = Poly;
    fn sub(self, rhs: Poly) -> Poly {
        &self - &rhs
    }
}

impl Mul for Poly {
    type Output = Poly;
    fn mul(self, rhs: Poly) -> Poly {
        &self * &rhs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn leading_zeros_are_trimmed() {
        let p = Poly::new(vec![0.0, 0.0, 1.0, 2.0]);
        assert_eq!(p.degree(), 1);
        assert_eq!(p.coeffs(), &[1.0, 2.0]);
        assert!(Poly::new(vec![0.0, 0.0]).is_zero());
    }

    #[test]
    fn roots_at_origin_are_kept() {
        let p = Poly::new(vec![1.0, -3.0, 2.0, 0.0, 0.0]);
        let mut r: Vec<f64> = p.roots().unwrap().iter().map(|z| z.re).collect();
        r.sort_by(f64::total_cmp);
        let want = [0.0, 0.0, 1.0, 2.0];
        for (a, b) in r.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn from_roots_round_trip() {
        let roots = [
            Complex64::new(-1.0, 2.0),
            Complex64::new(-1.0, -2.0),
            Complex64::new(-5.0, 0.0),
        ];
        let p = Poly::from_roots(&roots);
        assert_eq!(p.coeffs().len(), 4);
        for r in roots {
            assert!(p.eval(r).norm() < 1e-12);
        }
    }

    #[test]
    fn derivative_of_cubic() {
        let p = Poly::new(vec![2.0, 0.0, -1.0, 7.0]);
        assert_eq!(p.derivative().coeffs(), &[6.0, 0.0, -1.0]);
    }

    proptest! {
        // Product and sum agree with pointwise evaluation at 16 sample points.
        #[test]
        fn arithmetic_matches_evaluation(
            a in proptest::collection::vec(-5.0f64..5.0, 1..6),
            b in proptest::collection::vec(-5.0f64..5.0, 1..6),
            pts in proptest::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 16),
        ) {
            let pa = Poly::new(a);
            let pb = Poly::new(b);
            let prod = &pa * &pb;
            let sum = &pa + &pb;
            for (re, im) in pts {
                let s = Complex64::new(re, im);
                let want_p = pa.eval(s) * pb.eval(s);
                let want_s = pa.eval(s) + pb.eval(s);
                prop_assert!((prod.eval(s) - want_p).norm() <= 1e-9 * (1.0 + want_p.norm()));
                prop_assert!((sum.eval(s) - want_s).norm() <= 1e-9 * (1.0 + want_s.norm()));
            }
        }
    }
}
