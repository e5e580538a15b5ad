//! Parametric input layers.
//!
//! Each family evaluates `K` univariate functions from a contiguous slice of
//! effective parameters, integrates single functions and pairwise products,
//! and provides vector-Jacobian products for all three.

mod spline;

pub use spline::{gauss_legendre, SplineBasis};

use serde::{Deserialize, Serialize};

use crate::circuit::{BlockRole, Reparam};
use crate::error::{Error, Result};
use crate::signed::{SignedLog, SignedLogTensor};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum InputFamily {
    /// Normal densities; parameters `[means; stds]`.
    Gaussian,
    /// Normalized probability tables (softmax rows).
    Categorical { states: usize },
    /// Unconstrained per-state real values.
    Embedding { states: usize },
    /// Binomial pmfs over `0..=trials` parameterized by logits.
    Binomial { trials: u32 },
    /// Spline functions `Σ_b α_b B_b(x)`.
    Spline(SplineBasis),
}

/// Shape and reparameterization of one parameter block of a family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    pub rows: usize,
    pub cols: usize,
    pub reparam: Reparam,
    pub role: BlockRole,
}

/// Domain of an input variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Support {
    Discrete { states: usize },
    Interval { lower: f64, upper: f64 },
}

impl InputFamily {
    pub fn name(&self) -> &'static str {
        match self {
            InputFamily::Gaussian => "gaussian",
            InputFamily::Categorical { .. } => "categorical",
            InputFamily::Embedding { .. } => "embedding",
            InputFamily::Binomial { .. } => "binomial",
            InputFamily::Spline(_) => "spline",
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(
            self,
            InputFamily::Categorical { .. } | InputFamily::Embedding { .. } | InputFamily::Binomial { .. }
        )
    }

    /// Number of states of a discrete family.
    pub fn states(&self) -> Option<usize> {
        match self {
            InputFamily::Categorical { states } | InputFamily::Embedding { states } => Some(*states),
            InputFamily::Binomial { trials } => Some(*trials as usize + 1),
            _ => None,
        }
    }

    /// Parameter blocks for a layer of `width` units. `nonnegative` selects
    /// the exp reparameterization for families whose raw values are signed.
    pub fn blocks(&self, width: usize, nonnegative: bool) -> Vec<BlockSpec> {
        let coeff = if nonnegative { Reparam::Exp } else { Reparam::Identity };
        let spec = |rows, cols, reparam, role| BlockSpec { rows, cols, reparam, role };
        match self {
            InputFamily::Gaussian => vec![
                spec(width, 1, Reparam::Identity, BlockRole::Location),
                spec(width, 1, Reparam::Exp, BlockRole::LogScale),
            ],
            InputFamily::Categorical { states } => {
                vec![spec(width, *states, Reparam::SoftmaxRow, BlockRole::Weight)]
            }
            InputFamily::Embedding { states } => vec![spec(width, *states, coeff, BlockRole::Weight)],
            InputFamily::Binomial { .. } => vec![spec(width, 1, Reparam::Identity, BlockRole::Weight)],
            InputFamily::Spline(b) => vec![spec(width, b.basis_count(), coeff, BlockRole::Weight)],
        }
    }

    pub fn param_count(&self, width: usize) -> usize {
        self.blocks(width, false).iter().map(|b| b.rows * b.cols).sum()
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            InputFamily::Categorical { states } | InputFamily::Embedding { states } if *states == 0 => {
                Err(Error::InvalidArgument("discrete family needs at least one state".into()))
            }
            _ => Ok(()),
        }
    }

    /// Support of the variable given current parameters (Gaussian intervals
    /// cover 12 standard deviations around the extreme means).
    pub fn support(&self, params: &[f64], width: usize) -> Support {
        match self {
            InputFamily::Gaussian => {
                let (mu, sd) = params.split_at(width);
                let lower = mu.iter().zip(sd).map(|(m, s)| m - 12.0 * s).fold(f64::INFINITY, f64::min);
                let upper = mu.iter().zip(sd).map(|(m, s)| m + 12.0 * s).fold(f64::NEG_INFINITY, f64::max);
                Support::Interval { lower, upper }
            }
            InputFamily::Spline(b) => {
                let (lower, upper) = b.interval();
                Support::Interval { lower, upper }
            }
            other => Support::Discrete {
                states: other.states().unwrap_or(0),
            },
        }
    }

    /// Knots (or other break points) the density may have kinks at.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            InputFamily::Spline(b) => {
                let mut t = b.knots().to_vec();
                t.dedup();
                t
            }
            _ => Vec::new(),
        }
    }

    fn discrete_state(&self, variable: usize, x: f64) -> Result<usize> {
        let states = self.states().unwrap_or(0);
        if x.fract() != 0.0 || x < 0.0 || x >= states as f64 {
            return Err(Error::Domain {
                variable,
                value: x,
                reason: format!("expected an integer state in [0, {states})"),
            });
        }
        Ok(x as usize)
    }

    fn check_x(&self, variable: usize, x: f64) -> Result<()> {
        if !x.is_finite() {
            return Err(Error::Domain {
                variable,
                value: x,
                reason: "non-finite value".into(),
            });
        }
        if let InputFamily::Spline(b) = self {
            if !b.contains(x) {
                let (lo, hi) = b.interval();
                return Err(Error::Domain {
                    variable,
                    value: x,
                    reason: format!("outside the spline interval [{lo}, {hi}]"),
                });
            }
        }
        Ok(())
    }

    /// Values `f_i(x)` of all `width` units.
    pub fn evaluate(&self, params: &[f64], width: usize, variable: usize, x: f64) -> Result<SignedLogTensor> {
        self.check_x(variable, x)?;
        Ok(match self {
            InputFamily::Gaussian => {
                let (mu, sd) = params.split_at(width);
                SignedLogTensor::from_values(mu.iter().zip(sd).map(|(&m, &s)| SignedLog {
                    log_mag: gaussian_log_pdf(x, m, s),
                    sign: 1.0,
                }))
            }
            InputFamily::Categorical { states } | InputFamily::Embedding { states } => {
                let v = self.discrete_state(variable, x)?;
                SignedLogTensor::from_values((0..width).map(|i| SignedLog::from_linear(params[i * states + v])))
            }
            InputFamily::Binomial { trials } => {
                let v = self.discrete_state(variable, x)?;
                SignedLogTensor::from_values(params[..width].iter().map(|&logit| SignedLog {
                    log_mag: binomial_log_pmf(*trials, v as u32, logit),
                    sign: 1.0,
                }))
            }
            InputFamily::Spline(b) => {
                let nb = b.basis_count();
                let (first, vals) = b.nonzero_basis(x);
                SignedLogTensor::from_values((0..width).map(|i| {
                    let row = &params[i * nb + first..i * nb + first + vals.len()];
                    SignedLog::from_linear(row.iter().zip(&vals).map(|(a, v)| a * v).sum())
                }))
            }
        })
    }

    /// Accumulate `Σ_i adj_i ∂f_i(x)/∂θ` into `grad` (effective parameters).
    pub fn evaluate_vjp(
        &self,
        params: &[f64],
        width: usize,
        variable: usize,
        x: f64,
        adj: &SignedLogTensor,
        grad: &mut [f64],
    ) -> Result<()> {
        match self {
            InputFamily::Gaussian => {
                let f = self.evaluate(params, width, variable, x)?;
                let (mu, sd) = params.split_at(width);
                for i in 0..width {
                    let t = adj.get(i).mul(f.get(i)).to_linear();
                    let z = (x - mu[i]) / sd[i];
                    grad[i] += t * z / sd[i];
                    grad[width + i] += t * (z * z - 1.0) / sd[i];
                }
            }
            InputFamily::Categorical { states } | InputFamily::Embedding { states } => {
                let v = self.discrete_state(variable, x)?;
                for i in 0..width {
                    grad[i * states + v] += adj.get(i).to_linear();
                }
            }
            InputFamily::Binomial { trials } => {
                let v = self.discrete_state(variable, x)?;
                for i in 0..width {
                    let logit = params[i];
                    let f = SignedLog {
                        log_mag: binomial_log_pmf(*trials, v as u32, logit),
                        sign: 1.0,
                    };
                    let t = adj.get(i).mul(f).to_linear();
                    grad[i] += t * (v as f64 - *trials as f64 * sigmoid(logit));
                }
            }
            InputFamily::Spline(b) => {
                self.check_x(variable, x)?;
                let nb = b.basis_count();
                let (first, vals) = b.nonzero_basis(x);
                for i in 0..width {
                    let a = adj.get(i).to_linear();
                    for (p, v) in vals.iter().enumerate() {
                        grad[i * nb + first + p] += a * v;
                    }
                }
            }
        }
        Ok(())
    }

    /// Pmf tables `q_i(x)` for every state, row-major `width x states`.
    fn pmf_table(&self, params: &[f64], width: usize) -> Vec<f64> {
        match self {
            InputFamily::Categorical { states } | InputFamily::Embedding { states } => {
                params[..width * states].to_vec()
            }
            InputFamily::Binomial { trials } => {
                let n = *trials as usize + 1;
                let mut out = Vec::with_capacity(width * n);
                for &logit in &params[..width] {
                    for v in 0..n {
                        out.push(binomial_log_pmf(*trials, v as u32, logit).exp());
                    }
                }
                out
            }
            _ => unreachable!("pmf table of a continuous family"),
        }
    }

    /// Backpropagate a gradient on the pmf table to effective parameters.
    fn pmf_table_vjp(&self, params: &[f64], width: usize, dtable: &[f64], grad: &mut [f64]) {
        match self {
            InputFamily::Categorical { .. } | InputFamily::Embedding { .. } => {
                for (g, d) in grad.iter_mut().zip(dtable) {
                    *g += d;
                }
            }
            InputFamily::Binomial { trials } => {
                let n = *trials as usize + 1;
                for i in 0..width {
                    let logit = params[i];
                    let p = sigmoid(logit);
                    for v in 0..n {
                        let q = binomial_log_pmf(*trials, v as u32, logit).exp();
                        grad[i] += dtable[i * n + v] * q * (v as f64 - *trials as f64 * p);
                    }
                }
            }
            _ => unreachable!("pmf table of a continuous family"),
        }
    }

    /// `∫ f_i` (or `Σ_x f_i(x)`) for every unit.
    pub fn integrals(&self, params: &[f64], width: usize) -> SignedLogTensor {
        match self {
            InputFamily::Gaussian => SignedLogTensor::from_values((0..width).map(|_| SignedLog::ONE)),
            InputFamily::Spline(b) => {
                let nb = b.basis_count();
                let c = b.basis_integrals();
                SignedLogTensor::from_values((0..width).map(|i| {
                    SignedLog::from_linear(params[i * nb..(i + 1) * nb].iter().zip(c).map(|(a, c)| a * c).sum())
                }))
            }
            _ => {
                let n = self.states().unwrap_or(0);
                let t = self.pmf_table(params, width);
                SignedLogTensor::from_values(
                    t.chunks(n).map(|row| SignedLog::from_linear(row.iter().sum())),
                )
            }
        }
    }

    pub fn integrals_vjp(&self, params: &[f64], width: usize, adj: &SignedLogTensor, grad: &mut [f64]) {
        match self {
            InputFamily::Gaussian => {}
            InputFamily::Spline(b) => {
                let nb = b.basis_count();
                let c = b.basis_integrals();
                for i in 0..width {
                    let a = adj.get(i).to_linear();
                    for (g, c) in grad[i * nb..(i + 1) * nb].iter_mut().zip(c) {
                        *g += a * c;
                    }
                }
            }
            _ => {
                let n = self.states().unwrap_or(0);
                let mut d = vec![0.0; width * n];
                for i in 0..width {
                    let a = adj.get(i).to_linear();
                    d[i * n..(i + 1) * n].iter_mut().for_each(|v| *v = a);
                }
                self.pmf_table_vjp(params, width, &d, grad);
            }
        }
    }

    /// `∫ f_i f_j` for a single pair of units.
    pub fn product_integral(&self, params: &[f64], width: usize, i: usize, j: usize) -> SignedLog {
        match self {
            InputFamily::Gaussian => {
                let (mu, sd) = params.split_at(width);
                SignedLog {
                    log_mag: gaussian_product_log_integral(mu[i], sd[i], mu[j], sd[j]),
                    sign: 1.0,
                }
            }
            InputFamily::Spline(b) => {
                let nb = b.basis_count();
                let g = b.gram();
                let (ai, aj) = (&params[i * nb..(i + 1) * nb], &params[j * nb..(j + 1) * nb]);
                let mut total = 0.0;
                for (p, &x) in ai.iter().enumerate() {
                    if x == 0.0 {
                        continue;
                    }
                    let row = &g[p * nb..(p + 1) * nb];
                    total += x * row.iter().zip(aj).map(|(g, y)| g * y).sum::<f64>();
                }
                SignedLog::from_linear(total)
            }
            _ => {
                let n = self.states().unwrap_or(0);
                let t = self.pmf_table(params, width);
                SignedLog::from_linear(
                    t[i * n..(i + 1) * n].iter().zip(&t[j * n..(j + 1) * n]).map(|(a, b)| a * b).sum(),
                )
            }
        }
    }

    /// Matrix of pairwise product integrals, row-major `width x width`.
    pub fn integral_matrix(&self, params: &[f64], width: usize) -> SignedLogTensor {
        match self {
            InputFamily::Spline(b) => {
                let nb = b.basis_count();
                let ga = crate::signed::matmul(params, width, nb, b.gram(), nb); // α G
                let mut out = SignedLogTensor::with_capacity(width * width);
                for i in 0..width {
                    for j in 0..width {
                        let v: f64 = ga[i * nb..(i + 1) * nb]
                            .iter()
                            .zip(&params[j * nb..(j + 1) * nb])
                            .map(|(a, b)| a * b)
                            .sum();
                        out.push(SignedLog::from_linear(v));
                    }
                }
                out
            }
            _ => {
                let mut out = SignedLogTensor::with_capacity(width * width);
                for i in 0..width {
                    for j in 0..width {
                        out.push(self.product_integral(params, width, i, j));
                    }
                }
                out
            }
        }
    }

    /// Accumulate `Σ_ij adj_ij ∂(∫ f_i f_j)/∂θ` into `grad`.
    pub fn integral_matrix_vjp(&self, params: &[f64], width: usize, adj: &SignedLogTensor, grad: &mut [f64]) {
        match self {
            InputFamily::Gaussian => {
                let (mu, sd) = params.split_at(width);
                for i in 0..width {
                    for j in 0..width {
                        let m = SignedLog {
                            log_mag: gaussian_product_log_integral(mu[i], sd[i], mu[j], sd[j]),
                            sign: 1.0,
                        };
                        let t = adj.get(i * width + j).mul(m).to_linear();
                        if t == 0.0 {
                            continue;
                        }
                        let v = sd[i] * sd[i] + sd[j] * sd[j];
                        let d = mu[i] - mu[j];
                        grad[i] -= t * d / v;
                        grad[j] += t * d / v;
                        let dv = t * (d * d / (2.0 * v * v) - 0.5 / v);
                        grad[width + i] += dv * 2.0 * sd[i];
                        grad[width + j] += dv * 2.0 * sd[j];
                    }
                }
            }
            InputFamily::Spline(b) => {
                let nb = b.basis_count();
                let ga = crate::signed::matmul(params, width, nb, b.gram(), nb);
                for i in 0..width {
                    for j in 0..width {
                        let a = adj.get(i * width + j).to_linear();
                        if a == 0.0 {
                            continue;
                        }
                        for p in 0..nb {
                            grad[i * nb + p] += a * ga[j * nb + p];
                            grad[j * nb + p] += a * ga[i * nb + p];
                        }
                    }
                }
            }
            _ => {
                let n = self.states().unwrap_or(0);
                let t = self.pmf_table(params, width);
                let mut d = vec![0.0; width * n];
                for i in 0..width {
                    for j in 0..width {
                        let a = adj.get(i * width + j).to_linear();
                        if a == 0.0 {
                            continue;
                        }
                        for v in 0..n {
                            d[i * n + v] += a * t[j * n + v];
                            d[j * n + v] += a * t[i * n + v];
                        }
                    }
                }
                self.pmf_table_vjp(params, width, &d, grad);
            }
        }
    }

    /// True iff every unit computes a non-negative function.
    pub fn is_nonnegative(&self, params: &[f64], width: usize) -> bool {
        match self {
            InputFamily::Gaussian | InputFamily::Categorical { .. } | InputFamily::Binomial { .. } => true,
            InputFamily::Embedding { states } => params[..width * states].iter().all(|&v| v >= 0.0),
            InputFamily::Spline(b) => params[..width * b.basis_count()].iter().all(|&v| v >= 0.0),
        }
    }
}

pub fn gaussian_log_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * z * z - std.ln() - LN_SQRT_2PI
}

/// `log ∫ N(x; μ1, σ1) N(x; μ2, σ2) dx = log N(μ1; μ2, σ1² + σ2²)`.
pub fn gaussian_product_log_integral(m1: f64, s1: f64, m2: f64, s2: f64) -> f64 {
    let v = s1 * s1 + s2 * s2;
    let d = m1 - m2;
    -0.5 * d * d / v - 0.5 * v.ln() - LN_SQRT_2PI
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn ln_choose(n: u32, k: u32) -> f64 {
    let k = k.min(n - k);
    (0..k).map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln()).sum()
}

pub fn binomial_log_pmf(trials: u32, k: u32, logit: f64) -> f64 {
    // log p = -softplus(-logit), log(1 - p) = -softplus(logit)
    ln_choose(trials, k) - k as f64 * softplus(-logit) - (trials - k) as f64 * softplus(logit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn symmetric_binomial() {
        let f = InputFamily::Binomial { trials: 2 };
        let v = f.evaluate(&[0.0], 1, 0, 1.0).unwrap();
        assert_relative_eq!(v.get(0).to_linear(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn standard_gaussian_at_zero() {
        let v = InputFamily::Gaussian.evaluate(&[0.0, 1.0], 1, 0, 0.0).unwrap();
        assert_relative_eq!(v.log_mag[0], -(2.0 * std::f64::consts::PI).sqrt().ln(), epsilon = 1e-15);
    }

    #[test]
    fn spline_of_ones_is_one() {
        let b = SplineBasis::new(2, 4, 0.0, 1.0).unwrap();
        let f = InputFamily::Spline(b);
        for x in [0.0, 0.13, 0.5, 0.77, 1.0] {
            let v = f.evaluate(&[1.0; 7], 1, 0, x).unwrap();
            assert_relative_eq!(v.get(0).to_linear(), 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn spline_outside_interval_is_a_domain_error() {
        let f = InputFamily::Spline(SplineBasis::new(2, 4, 0.0, 1.0).unwrap());
        assert!(matches!(f.evaluate(&[1.0; 7], 1, 3, 1.5), Err(Error::Domain { variable: 3, .. })));
    }

    #[test]
    fn discrete_state_checked() {
        let f = InputFamily::Embedding { states: 3 };
        assert!(f.evaluate(&[1.0; 3], 1, 0, 3.0).is_err());
        assert!(f.evaluate(&[1.0; 3], 1, 0, 0.5).is_err());
        assert!(f.evaluate(&[1.0; 3], 1, 0, 2.0).is_ok());
    }

    #[test]
    fn uniform_categorical_product() {
        let f = InputFamily::Categorical { states: 2 };
        assert_relative_eq!(f.product_integral(&[0.5, 0.5], 1, 0, 0).to_linear(), 0.5);
    }

    #[test]
    fn gaussian_self_product() {
        let v = InputFamily::Gaussian.product_integral(&[0.0, 1.0], 1, 0, 0).to_linear();
        assert_relative_eq!(v, 1.0 / (2.0 * std::f64::consts::PI.sqrt()), epsilon = 1e-15);
    }

    #[test]
    fn binomial_integrals_sum_to_one() {
        let f = InputFamily::Binomial { trials: 7 };
        let s = f.integrals(&[0.3, -1.2], 2).to_linear();
        assert_relative_eq!(s[0], 1.0, epsilon = 1e-13);
        assert_relative_eq!(s[1], 1.0, epsilon = 1e-13);
    }
}
