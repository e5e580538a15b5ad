//! Signed log-space arithmetic.
//!
//! Every layer output is carried as a pair `(log|y|, sign(y))` with the sign
//! drawn from `{-1, 0, +1}`. A zero entry has sign `0` and log-magnitude
//! `-inf`. Sum layers are evaluated with the signed log-sum-exp rule: the
//! inputs are shifted by the largest non-zero log-magnitude, combined in
//! linear space, and shifted back.

mod tape;

pub use tape::{Gradients, Tape, TapeOp};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single real number stored as log-magnitude and sign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignedLog {
    pub log_mag: f64,
    pub sign: f64,
}

impl SignedLog {
    pub const ZERO: SignedLog = SignedLog {
        log_mag: f64::NEG_INFINITY,
        sign: 0.0,
    };
    pub const ONE: SignedLog = SignedLog {
        log_mag: 0.0,
        sign: 1.0,
    };

    pub fn from_linear(v: f64) -> Self {
        if v == 0.0 {
            Self::ZERO
        } else {
            SignedLog {
                log_mag: v.abs().ln(),
                sign: v.signum(),
            }
        }
    }

    pub fn to_linear(self) -> f64 {
        if self.sign == 0.0 {
            0.0
        } else {
            self.sign * self.log_mag.exp()
        }
    }

    pub fn is_zero(self) -> bool {
        self.sign == 0.0
    }

    pub fn mul(self, other: SignedLog) -> SignedLog {
        if self.is_zero() || other.is_zero() {
            Self::ZERO
        } else {
            SignedLog {
                log_mag: self.log_mag + other.log_mag,
                sign: self.sign * other.sign,
            }
        }
    }

    pub fn recip(self) -> Result<SignedLog> {
        if self.is_zero() {
            return Err(Error::numeric("reciprocal of an exact zero"));
        }
        Ok(SignedLog {
            log_mag: -self.log_mag,
            sign: self.sign,
        })
    }
}

/// Signed sum of terms given in log-space. Exact cancellation yields zero.
pub fn signed_log_sum(terms: impl IntoIterator<Item = SignedLog> + Clone) -> SignedLog {
    let alpha = terms
        .clone()
        .into_iter()
        .filter(|t| !t.is_zero())
        .fold(f64::NEG_INFINITY, |m, t| m.max(t.log_mag));
    if alpha == f64::NEG_INFINITY {
        return SignedLog::ZERO;
    }
    let s: f64 = terms
        .into_iter()
        .filter(|t| !t.is_zero())
        .map(|t| t.sign * (t.log_mag - alpha).exp())
        .sum();
    shift(alpha, s)
}

#[inline]
fn shift(alpha: f64, s: f64) -> SignedLog {
    if s == 0.0 {
        SignedLog::ZERO
    } else {
        SignedLog {
            log_mag: alpha + s.abs().ln(),
            sign: s.signum(),
        }
    }
}

/// A vector (or row-major matrix) of signed log-space values.
///
/// Invariant: `sign[i] == 0` iff `log_mag[i] == -inf`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SignedLogTensor {
    pub log_mag: Vec<f64>,
    pub sign: Vec<f64>,
}

impl SignedLogTensor {
    pub fn zeros(len: usize) -> Self {
        SignedLogTensor {
            log_mag: vec![f64::NEG_INFINITY; len],
            sign: vec![0.0; len],
        }
    }

    pub fn with_capacity(len: usize) -> Self {
        SignedLogTensor {
            log_mag: Vec::with_capacity(len),
            sign: Vec::with_capacity(len),
        }
    }

    pub fn from_linear(values: &[f64]) -> Self {
        let mut t = Self::with_capacity(values.len());
        for &v in values {
            t.push(SignedLog::from_linear(v));
        }
        t
    }

    pub fn from_values(values: impl IntoIterator<Item = SignedLog>) -> Self {
        let mut t = Self::default();
        for v in values {
            t.push(v);
        }
        t
    }

    pub fn to_linear(&self) -> Vec<f64> {
        self.iter().map(SignedLog::to_linear).collect()
    }

    pub fn len(&self) -> usize {
        self.log_mag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_mag.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> SignedLog {
        SignedLog {
            log_mag: self.log_mag[i],
            sign: self.sign[i],
        }
    }

    #[inline]
    pub fn set(&mut self, i: usize, v: SignedLog) {
        self.log_mag[i] = v.log_mag;
        self.sign[i] = v.sign;
    }

    #[inline]
    pub fn push(&mut self, v: SignedLog) {
        self.log_mag.push(v.log_mag);
        self.sign.push(v.sign);
    }

    pub fn iter(&self) -> impl Iterator<Item = SignedLog> + Clone + '_ {
        self.log_mag
            .iter()
            .zip(&self.sign)
            .map(|(&log_mag, &sign)| SignedLog { log_mag, sign })
    }

    /// Largest log-magnitude over non-zero entries, `-inf` if all are zero.
    pub fn max_log_mag(&self) -> f64 {
        self.iter()
            .filter(|v| !v.is_zero())
            .fold(f64::NEG_INFINITY, |m, v| m.max(v.log_mag))
    }

    /// Linear values scaled by `exp(-alpha)` where `alpha = max_log_mag()`.
    pub fn scaled(&self) -> (f64, Vec<f64>) {
        let alpha = self.max_log_mag();
        if alpha == f64::NEG_INFINITY {
            return (alpha, vec![0.0; self.len()]);
        }
        let v = self
            .iter()
            .map(|x| {
                if x.is_zero() {
                    0.0
                } else {
                    x.sign * (x.log_mag - alpha).exp()
                }
            })
            .collect();
        (alpha, v)
    }

    /// Build from scaled linear values: entry `i` equals `values[i] * exp(alpha)`.
    pub fn from_scaled(alpha: f64, values: &[f64]) -> Self {
        let mut t = Self::with_capacity(values.len());
        if alpha == f64::NEG_INFINITY {
            return Self::zeros(values.len());
        }
        for &s in values {
            t.push(shift(alpha, s));
        }
        t
    }

    pub fn has_nan(&self) -> bool {
        self.log_mag.iter().any(|v| v.is_nan()) || self.sign.iter().any(|v| v.is_nan())
    }

    /// Elementwise signed addition.
    pub fn add(&self, other: &SignedLogTensor) -> SignedLogTensor {
        debug_assert_eq!(self.len(), other.len());
        SignedLogTensor::from_values(
            self.iter()
                .zip(other.iter())
                .map(|(a, b)| signed_log_sum([a, b])),
        )
    }
}

fn check_nan(t: &SignedLogTensor, what: &str) -> Result<()> {
    if t.has_nan() {
        Err(Error::numeric(format!("NaN in {what}")))
    } else {
        Ok(())
    }
}

/// Signed log-sum-exp: computes `W x` for a row-major `rows x cols` matrix.
pub fn signed_logsumexp(
    weights: &[f64],
    rows: usize,
    cols: usize,
    x: &SignedLogTensor,
) -> Result<SignedLogTensor> {
    if weights.len() != rows * cols || x.len() != cols {
        return Err(Error::InvalidArgument(format!(
            "sum layer shape mismatch: weights {} for {rows}x{cols}, input width {}",
            weights.len(),
            x.len()
        )));
    }
    check_nan(x, "sum layer input")?;
    if weights.iter().any(|w| w.is_nan()) {
        return Err(Error::numeric("NaN in sum layer weights"));
    }
    let (alpha, xs) = x.scaled();
    if alpha == f64::NEG_INFINITY {
        return Ok(SignedLogTensor::zeros(rows));
    }
    let s: Vec<f64> = weights
        .chunks_exact(cols)
        .map(|row| row.iter().zip(&xs).map(|(w, v)| w * v).sum())
        .collect();
    let out = SignedLogTensor::from_scaled(alpha, &s);
    check_nan(&out, "sum layer output")?;
    Ok(out)
}

/// Squared sum layer: computes `(W ⊗ W) vec(X)` as `W X Wᵀ`, where `x` holds
/// the `cols x cols` matrix `X` row-major and the result is `rows x rows`.
pub fn signed_squared_logsumexp(
    weights: &[f64],
    rows: usize,
    cols: usize,
    x: &SignedLogTensor,
) -> Result<SignedLogTensor> {
    if weights.len() != rows * cols || x.len() != cols * cols {
        return Err(Error::InvalidArgument(format!(
            "squared sum layer shape mismatch: weights {} for {rows}x{cols}, input width {}",
            weights.len(),
            x.len()
        )));
    }
    check_nan(x, "squared sum layer input")?;
    let (alpha, xs) = x.scaled();
    if alpha == f64::NEG_INFINITY {
        return Ok(SignedLogTensor::zeros(rows * rows));
    }
    // T = W X  (rows x cols)
    let t = matmul(weights, rows, cols, &xs, cols);
    // Y = T Wᵀ (rows x rows)
    let mut y = vec![0.0; rows * rows];
    for s in 0..rows {
        let t_row = &t[s * cols..(s + 1) * cols];
        for u in 0..rows {
            let w_row = &weights[u * cols..(u + 1) * cols];
            y[s * rows + u] = t_row.iter().zip(w_row).map(|(a, b)| a * b).sum();
        }
    }
    let out = SignedLogTensor::from_scaled(alpha, &y);
    check_nan(&out, "squared sum layer output")?;
    Ok(out)
}

/// Row-major `(n x k) * (k x m)` product.
pub(crate) fn matmul(a: &[f64], n: usize, k: usize, b: &[f64], m: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * m];
    for i in 0..n {
        let c_row = &mut c[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * m..(p + 1) * m];
            for (c, b) in c_row.iter_mut().zip(b_row) {
                *c += aip * b;
            }
        }
    }
    c
}

/// Hadamard product in log-space: log-magnitudes add, signs multiply.
pub fn signed_product(xs: &[&SignedLogTensor]) -> Result<SignedLogTensor> {
    let Some(first) = xs.first() else {
        return Err(Error::InvalidArgument("product over zero inputs".into()));
    };
    let width = first.len();
    if xs.iter().any(|x| x.len() != width) {
        return Err(Error::InvalidArgument(
            "Hadamard product inputs must share their width".into(),
        ));
    }
    let mut out = (*first).clone();
    for x in &xs[1..] {
        for i in 0..width {
            let v = out.get(i).mul(x.get(i));
            out.set(i, v);
        }
    }
    check_nan(&out, "product layer output")?;
    Ok(out)
}

/// Kronecker product in log-space (outer sums of log-magnitudes). The first
/// input varies slowest in the output index.
pub fn signed_kronecker(xs: &[&SignedLogTensor]) -> Result<SignedLogTensor> {
    let Some(first) = xs.first() else {
        return Err(Error::InvalidArgument("product over zero inputs".into()));
    };
    let mut out = (*first).clone();
    for x in &xs[1..] {
        let mut next = SignedLogTensor::with_capacity(out.len() * x.len());
        for a in out.iter() {
            for b in x.iter() {
                next.push(a.mul(b));
            }
        }
        out = next;
    }
    check_nan(&out, "Kronecker layer output")?;
    Ok(out)
}

/// Outer product `x ⊗ x` of a vector with itself, row-major.
pub fn self_outer(x: &SignedLogTensor) -> SignedLogTensor {
    let mut out = SignedLogTensor::with_capacity(x.len() * x.len());
    for a in x.iter() {
        for b in x.iter() {
            out.push(a.mul(b));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn lin(v: f64) -> SignedLog {
        SignedLog::from_linear(v)
    }

    #[test]
    fn identity_weight() {
        let x = SignedLogTensor::from_values([lin(2.0)]);
        let y = signed_logsumexp(&[1.0], 1, 1, &x).unwrap();
        assert_relative_eq!(y.log_mag[0], 2f64.ln());
        assert_eq!(y.sign[0], 1.0);
    }

    #[test]
    fn exact_cancellation_gives_zero() {
        let x = SignedLogTensor::from_values([lin(3.0), lin(3.0)]);
        let y = signed_logsumexp(&[1.0, -1.0], 1, 2, &x).unwrap();
        assert_eq!(y.sign[0], 0.0);
        assert_eq!(y.log_mag[0], f64::NEG_INFINITY);
    }

    #[test]
    fn mixed_sign_combination() {
        // 2 * 5 - 3 = 7
        let x = SignedLogTensor::from_values([lin(5.0), lin(3.0)]);
        let y = signed_logsumexp(&[2.0, -1.0], 1, 2, &x).unwrap();
        assert_relative_eq!(y.log_mag[0], 7f64.ln(), max_relative = 1e-15);
        assert_eq!(y.sign[0], 1.0);
    }

    #[test]
    fn all_zero_input_short_circuits() {
        let x = SignedLogTensor::zeros(3);
        let y = signed_logsumexp(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 2, 3, &x).unwrap();
        assert_eq!(y, SignedLogTensor::zeros(2));
    }

    #[test]
    fn nan_input_is_an_error() {
        let x = SignedLogTensor {
            log_mag: vec![f64::NAN],
            sign: vec![1.0],
        };
        assert!(matches!(
            signed_logsumexp(&[1.0], 1, 1, &x),
            Err(Error::Numeric { .. })
        ));
    }

    #[test]
    fn hadamard_rules() {
        let a = SignedLogTensor::from_values([lin(2.0)]);
        let b = SignedLogTensor::from_values([lin(-3.0)]);
        let y = signed_product(&[&a, &b]).unwrap();
        assert_relative_eq!(y.log_mag[0], 6f64.ln());
        assert_eq!(y.sign[0], -1.0);

        let z = SignedLogTensor::zeros(1);
        let y = signed_product(&[&a, &z]).unwrap();
        assert_eq!(y.get(0), SignedLog::ZERO);

        let wide = SignedLogTensor::zeros(2);
        assert!(matches!(
            signed_product(&[&a, &wide]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn kronecker_outer_sums() {
        let a = SignedLogTensor::from_linear(&[2.0, -3.0]);
        let b = SignedLogTensor::from_linear(&[5.0, 7.0]);
        let y = signed_kronecker(&[&a, &b]).unwrap().to_linear();
        let expect = [10.0, 14.0, -15.0, -21.0];
        for (y, e) in y.iter().zip(expect) {
            assert_relative_eq!(*y, e, max_relative = 1e-14);
        }
    }

    #[test]
    fn squared_sum_matches_explicit_kronecker() {
        let w = [0.5, -1.5, 2.0, 0.25, 1.0, -0.75]; // 2x3
        let x: Vec<f64> = (0..9).map(|i| (i as f64 - 4.0) * 0.7 + 0.1).collect();
        let y = signed_squared_logsumexp(&w, 2, 3, &SignedLogTensor::from_linear(&x))
            .unwrap()
            .to_linear();
        for s in 0..2 {
            for t in 0..2 {
                let mut e = 0.0;
                for k in 0..3 {
                    for l in 0..3 {
                        e += w[s * 3 + k] * w[t * 3 + l] * x[k * 3 + l];
                    }
                }
                assert_relative_eq!(y[s * 2 + t], e, max_relative = 1e-13);
            }
        }
    }

    #[test]
    fn sum_of_terms_cancels() {
        assert!(signed_log_sum([lin(1.5), lin(-1.5)]).is_zero());
        assert_relative_eq!(signed_log_sum([lin(1.5), lin(2.5)]).to_linear(), 4.0);
    }
}
