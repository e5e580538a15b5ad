//! CP decomposition of the 3-way cores of a matrix-product state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::linalg::{frobenius, solve_spd_right};
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpConfig {
    /// Rank `k`; `None` picks the exact rank `min(r², m r)`.
    pub rank: Option<usize>,
    pub max_iters: usize,
    /// Stop when the relative error changes by less than this.
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for CpConfig {
    fn default() -> Self {
        CpConfig {
            rank: None,
            max_iters: 5000,
            tol: 1e-10,
            restarts: 5,
            seed: 0,
        }
    }
}

/// `T[i][a][b] ≈ Σ_k V[i,k] B[a,k] C[b,k]`, factors row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CpDecomposition {
    pub m: usize,
    pub r: usize,
    pub rank: usize,
    pub b: Vec<f64>,
    pub v: Vec<f64>,
    pub c: Vec<f64>,
    /// Relative Frobenius reconstruction error.
    pub error: f64,
    /// Restart seed that produced the factors; `None` for the exact slice
    /// construction.
    pub seed: Option<u64>,
}

impl CpDecomposition {
    pub fn reconstruct(&self) -> Vec<f64> {
        let (m, r, k) = (self.m, self.r, self.rank);
        let mut t = vec![0.0; m * r * r];
        for i in 0..m {
            for a in 0..r {
                for b in 0..r {
                    t[(i * r + a) * r + b] = (0..k)
                        .map(|l| self.v[i * k + l] * self.b[a * k + l] * self.c[b * k + l])
                        .sum();
                }
            }
        }
        t
    }
}

/// Decompose the `m x r x r` tensor `t` (index `[i][a][b]`). At the maximal
/// rank the factors are built directly from slices of `t` and are exact;
/// below it alternating least squares runs from `restarts` seeded starts
/// and the lowest error wins, ties going to the lowest seed.
pub fn cp_decompose(t: &[f64], m: usize, r: usize, config: &CpConfig) -> Result<CpDecomposition> {
    if t.len() != m * r * r || m == 0 || r == 0 {
        return Err(Error::InvalidArgument(format!("core of {} values is not {m}x{r}x{r}", t.len())));
    }
    let full = (r * r).min(m * r);
    let k = config.rank.unwrap_or(full);
    if k == 0 || k > full {
        return Err(Error::PreconditionViolation(format!(
            "CP rank {k} outside 1..={full} for an {m}x{r}x{r} core"
        )));
    }
    if k == full {
        return Ok(exact(t, m, r));
    }
    cp_als(t, m, r, k, config)
}

fn exact(t: &[f64], m: usize, r: usize) -> CpDecomposition {
    let mut d = if m * r <= r * r {
        // k = (i', a'): V = δ(i, i'), B = δ(a, a'), C[b, k] = T[i', a', b]
        let k = m * r;
        let (mut v, mut bf, mut c) = (vec![0.0; m * k], vec![0.0; r * k], vec![0.0; r * k]);
        for i in 0..m {
            for a in 0..r {
                let l = i * r + a;
                v[i * k + l] = 1.0;
                bf[a * k + l] = 1.0;
                for b in 0..r {
                    c[b * k + l] = t[(i * r + a) * r + b];
                }
            }
        }
        CpDecomposition { m, r, rank: k, b: bf, v, c, error: 0.0, seed: None }
    } else {
        // k = (a', b'): B = δ(a, a'), C = δ(b, b'), V[i, k] = T[i, a', b']
        let k = r * r;
        let (mut v, mut bf, mut c) = (vec![0.0; m * k], vec![0.0; r * k], vec![0.0; r * k]);
        for a in 0..r {
            for b in 0..r {
                let l = a * r + b;
                bf[a * k + l] = 1.0;
                c[b * k + l] = 1.0;
                for i in 0..m {
                    v[i * k + l] = t[(i * r + a) * r + b];
                }
            }
        }
        CpDecomposition { m, r, rank: k, b: bf, v, c, error: 0.0, seed: None }
    };
    d.error = relative_error(t, &d.reconstruct());
    d
}

/// Rank-`k` ALS regardless of whether an exact construction exists.
pub fn cp_als(t: &[f64], m: usize, r: usize, k: usize, config: &CpConfig) -> Result<CpDecomposition> {
    if t.len() != m * r * r || k == 0 {
        return Err(Error::InvalidArgument("bad CP problem shape".into()));
    }
    if config.restarts == 0 || config.max_iters == 0 {
        return Err(Error::InvalidArgument("CP needs at least one restart and one iteration".into()));
    }
    let runs = par::map(config.restarts, |s| als_run(t, m, r, k, config, config.seed.wrapping_add(s as u64)));
    let mut best: Option<CpDecomposition> = None;
    let mut last_err = None;
    for run in runs {
        match run {
            Ok(d) => {
                if best.as_ref().is_none_or(|b| d.error < b.error) {
                    best = Some(d);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or_else(|| Error::numeric("CP decomposition failed")))
}

fn als_run(t: &[f64], m: usize, r: usize, k: usize, config: &CpConfig, seed: u64) -> Result<CpDecomposition> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };
    // V is solved for first, so only B and C need a starting point
    let mut v;
    let mut b = draw(r * k);
    let mut c = draw(r * k);
    let norm = frobenius(t);
    if norm == 0.0 {
        return Err(Error::DegenerateModel("CP decomposition of an all-zero core".into()));
    }
    let mut prev = f64::INFINITY;
    let mut d = CpDecomposition { m, r, rank: k, b: Vec::new(), v: Vec::new(), c: Vec::new(), error: f64::INFINITY, seed: Some(seed) };
    for _ in 0..config.max_iters {
        // mode i
        let rhs = contract(m, k, |i, l| (0..r).flat_map(|a| (0..r).map(move |bb| (a, bb)))
            .map(|(a, bb)| t[(i * r + a) * r + bb] * b[a * k + l] * c[bb * k + l]).sum());
        v = solve(&hadamard_gram(&b, &c, r, r, k), k, &rhs, m)?;
        // mode a
        let rhs = contract(r, k, |a, l| (0..m).flat_map(|i| (0..r).map(move |bb| (i, bb)))
            .map(|(i, bb)| t[(i * r + a) * r + bb] * v[i * k + l] * c[bb * k + l]).sum());
        b = solve(&hadamard_gram(&v, &c, m, r, k), k, &rhs, r)?;
        // mode b
        let rhs = contract(r, k, |bb, l| (0..m).flat_map(|i| (0..r).map(move |a| (i, a)))
            .map(|(i, a)| t[(i * r + a) * r + bb] * v[i * k + l] * b[a * k + l]).sum());
        c = solve(&hadamard_gram(&v, &b, m, r, k), k, &rhs, r)?;
        d.v.clone_from(&v);
        d.b.clone_from(&b);
        d.c.clone_from(&c);
        let err = relative_error(t, &d.reconstruct());
        if !err.is_finite() {
            return Err(Error::numeric("CP reconstruction error is not finite"));
        }
        d.error = err;
        if (prev - err).abs() < config.tol || err < 1e-15 {
            break;
        }
        prev = err;
    }
    Ok(d)
}

fn contract(rows: usize, k: usize, f: impl Fn(usize, usize) -> f64) -> Vec<f64> {
    (0..rows).flat_map(|i| (0..k).map(move |l| (i, l))).map(|(i, l)| f(i, l)).collect()
}

/// `(Xᵀ X) ∘ (Yᵀ Y)` for `X: nx x k`, `Y: ny x k`.
fn hadamard_gram(x: &[f64], y: &[f64], nx: usize, ny: usize, k: usize) -> Vec<f64> {
    let mut g = vec![0.0; k * k];
    for p in 0..k {
        for q in 0..k {
            let gx: f64 = (0..nx).map(|i| x[i * k + p] * x[i * k + q]).sum();
            let gy: f64 = (0..ny).map(|i| y[i * k + p] * y[i * k + q]).sum();
            g[p * k + q] = gx * gy;
        }
    }
    g
}

/// Solve `X g = rhs`, adding a growing ridge when `g` is singular.
fn solve(g: &[f64], k: usize, rhs: &[f64], rows: usize) -> Result<Vec<f64>> {
    let trace: f64 = (0..k).map(|i| g[i * k + i]).sum::<f64>().max(f64::MIN_POSITIVE);
    let mut ridge = 0.0;
    for _ in 0..8 {
        let mut gr = g.to_vec();
        for i in 0..k {
            gr[i * k + i] += ridge;
        }
        if let Some(x) = solve_spd_right(&gr, k, rhs, rows) {
            return Ok(x);
        }
        ridge = if ridge == 0.0 { 1e-12 * trace } else { ridge * 100.0 };
    }
    Err(Error::numeric("ALS normal equations stay singular after regularization"))
}

fn relative_error(t: &[f64], approx: &[f64]) -> f64 {
    let diff: Vec<f64> = t.iter().zip(approx).map(|(x, y)| x - y).collect();
    frobenius(&diff) / frobenius(t).max(f64::MIN_POSITIVE)
}
