//! B-spline bases over clamped uniform knot vectors.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Basis of `n + k + 1` B-splines of order (degree) `k` over `n` uniform
/// interior knots in `(lower, upper)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplineBasis {
    order: usize,
    interior_knots: usize,
    lower: f64,
    upper: f64,
    #[serde(skip)]
    cache: OnceLock<Cache>,
}

#[derive(Debug, Clone)]
struct Cache {
    knots: Vec<f64>,
    gram: Vec<f64>,
    integrals: Vec<f64>,
}

impl PartialEq for SplineBasis {
    fn eq(&self, other: &Self) -> bool {
        self.order == other.order
            && self.interior_knots == other.interior_knots
            && self.lower == other.lower
            && self.upper == other.upper
    }
}

impl SplineBasis {
    pub fn new(order: usize, interior_knots: usize, lower: f64, upper: f64) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(Error::InvalidArgument(format!(
                "spline interval ({lower}, {upper}) is not a proper finite interval"
            )));
        }
        Ok(SplineBasis {
            order,
            interior_knots,
            lower,
            upper,
            cache: OnceLock::new(),
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn interior_knots(&self) -> usize {
        self.interior_knots
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }

    pub fn basis_count(&self) -> usize {
        self.interior_knots + self.order + 1
    }

    fn cache(&self) -> &Cache {
        self.cache.get_or_init(|| {
            let knots = self.build_knots();
            let (gram, integrals) = gram_and_integrals(self, &knots);
            Cache {
                knots,
                gram,
                integrals,
            }
        })
    }

    fn build_knots(&self) -> Vec<f64> {
        let (a, b, k, n) = (self.lower, self.upper, self.order, self.interior_knots);
        let mut t = vec![a; k + 1];
        for i in 1..=n {
            t.push(a + (b - a) * i as f64 / (n + 1) as f64);
        }
        t.extend(std::iter::repeat_n(b, k + 1));
        t
    }

    /// Full clamped knot vector (boundary knots repeated `k + 1` times).
    pub fn knots(&self) -> &[f64] {
        &self.cache().knots
    }

    /// Gram matrix `∫ B_a B_b` over the interval, row-major.
    pub fn gram(&self) -> &[f64] {
        &self.cache().gram
    }

    /// `∫ B_a` for each basis function.
    pub fn basis_integrals(&self) -> &[f64] {
        &self.cache().integrals
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }

    /// Index `j` of the knot span `[t_j, t_{j+1})` holding `x`.
    fn span(&self, t: &[f64], x: f64) -> usize {
        let k = self.order;
        let last = self.basis_count(); // t[last] == upper
        if x >= t[last] {
            return last - 1;
        }
        // binary search in t[k..=last]
        let (mut lo, mut hi) = (k, last);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if x < t[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Non-zero basis values at `x` via the Cox–de Boor recursion.
    /// Returns the index of the first non-zero basis and `k + 1` values.
    pub fn nonzero_basis(&self, x: f64) -> (usize, Vec<f64>) {
        self.nonzero_basis_on(self.knots(), x)
    }

    fn nonzero_basis_on(&self, t: &[f64], x: f64) -> (usize, Vec<f64>) {
        let k = self.order;
        let j = self.span(t, x);
        let mut n = vec![0.0; k + 1];
        let mut left = vec![0.0; k + 1];
        let mut right = vec![0.0; k + 1];
        n[0] = 1.0;
        for d in 1..=k {
            left[d] = x - t[j + 1 - d];
            right[d] = t[j + d] - x;
            let mut saved = 0.0;
            for r in 0..d {
                let denom = right[r + 1] + left[d - r];
                let temp = if denom == 0.0 { 0.0 } else { n[r] / denom };
                n[r] = saved + right[r + 1] * temp;
                saved = left[d - r] * temp;
            }
            n[d] = saved;
        }
        (j - k, n)
    }

    /// All basis values at `x` (dense).
    pub fn basis(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.basis_count()];
        let (first, vals) = self.nonzero_basis(x);
        out[first..first + vals.len()].copy_from_slice(&vals);
        out
    }
}

fn gram_and_integrals(basis: &SplineBasis, knots: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let nb = basis.basis_count();
    let k = basis.order;
    // k + 1 Gauss–Legendre points integrate the degree-2k products exactly.
    let (nodes, weights) = gauss_legendre(k + 1);
    let mut gram = vec![0.0; nb * nb];
    let mut integrals = vec![0.0; nb];
    for s in k..nb {
        let (a, b) = (knots[s], knots[s + 1]);
        if b <= a {
            continue;
        }
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (&z, &w) in nodes.iter().zip(&weights) {
            let x = mid + half * z;
            let (first, vals) = basis.nonzero_basis_on(knots, x);
            for (p, &vp) in vals.iter().enumerate() {
                integrals[first + p] += w * half * vp;
                for (q, &vq) in vals.iter().enumerate() {
                    gram[(first + p) * nb + first + q] += w * half * vp * vq;
                }
            }
        }
    }
    (gram, integrals)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    if n == 1 {
        return (vec![0.0], vec![2.0]);
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * z * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_legendre_is_exact_for_polynomials() {
        for n in 1..8 {
            let (x, w) = gauss_legendre(n);
            for deg in 0..2 * n {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert_relative_eq!(q, exact, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn quadratic_basis_has_seven_functions_on_four_knots() {
        let b = SplineBasis::new(2, 4, 0.0, 1.0).unwrap();
        assert_eq!(b.basis_count(), 7);
        for (t, e) in b.knots()[3..7].iter().zip([0.2, 0.4, 0.6, 0.8]) {
            assert_relative_eq!(*t, e, epsilon = 1e-15);
        }
    }

    #[test]
    fn partition_of_unity_and_nonnegativity() {
        let b = SplineBasis::new(2, 4, 0.0, 1.0).unwrap();
        for i in 0..=200 {
            let x = i as f64 / 200.0;
            let v = b.basis(x);
            assert!(v.iter().all(|&v| v >= 0.0));
            assert_relative_eq!(v.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn basis_integrals_match_knot_spacing() {
        let b = SplineBasis::new(3, 6, -2.0, 5.0).unwrap();
        let t = b.knots();
        for (i, &v) in b.basis_integrals().iter().enumerate() {
            assert_relative_eq!(v, (t[i + 4] - t[i]) / 4.0, epsilon = 1e-13);
        }
    }
}
