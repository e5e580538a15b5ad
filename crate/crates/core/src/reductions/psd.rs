//! PSD kernel models `f(x) = κ(x)ᵀ A κ(x)` with an RBF kernel.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::linalg::{matmul, symmetric_eigen, transpose};
use crate::circuit::{CircuitBuilder, ProductKind, Reparam};
use crate::error::{Error, Result};
use crate::input::InputFamily;
use crate::squaring::{square_with_head, SquaredCircuit};

/// Eigenvalues down to this (absolute) negativity are treated as zero.
const NEGATIVE_TOL: f64 = 1e-9;
/// Eigenvalues at or below this fraction of the largest are dropped.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdModel {
    anchors: Vec<Vec<f64>>,
    bandwidth: f64,
    #[serde(rename = "matrix")]
    a: Vec<f64>,
}

impl PsdModel {
    /// `anchors` are `d` points of equal dimension; `a` is `d x d` row-major.
    pub fn new(anchors: Vec<Vec<f64>>, bandwidth: f64, a: Vec<f64>) -> Result<Self> {
        let d = anchors.len();
        if d == 0 {
            return Err(Error::InvalidArgument("PSD model needs at least one anchor".into()));
        }
        let dim = anchors[0].len();
        if dim == 0 || anchors.iter().any(|p| p.len() != dim) {
            return Err(Error::InvalidArgument("anchors must share a positive dimension".into()));
        }
        if anchors.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite anchor coordinate".into()));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidArgument(format!("bandwidth {bandwidth} must be positive")));
        }
        if a.len() != d * d {
            return Err(Error::InvalidArgument(format!("A holds {} entries, expected {}", a.len(), d * d)));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite entry in A".into()));
        }
        for i in 0..d {
            for j in 0..i {
                if (a[i * d + j] - a[j * d + i]).abs() > 1e-12 {
                    return Err(Error::PreconditionViolation(format!("A is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(PsdModel { anchors, bandwidth, a })
    }

    /// `d` anchors uniform in `[-2, 2]^dim` and `A = G Gᵀ` with standard
    /// normal `G`.
    pub fn random(d: usize, dim: usize, bandwidth: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let anchors = (0..d).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let g: Vec<f64> = (0..d * d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut a = matmul(&g, &transpose(&g, d, d), d, d, d);
        for i in 0..d {
            for j in 0..i {
                a[i * d + j] = a[j * d + i];
            }
        }
        Self::new(anchors, bandwidth, a)
    }

    /// JSON object with `anchors`, `bandwidth` and a row-major `matrix`.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: PsdModel = serde_json::from_str(text)?;
        Self::new(raw.anchors, raw.bandwidth, raw.a)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("PSD model serializes")
    }

    pub fn anchors(&self) -> &[Vec<f64>] {
        &self.anchors
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn matrix(&self) -> &[f64] {
        &self.a
    }

    pub fn dimension(&self) -> usize {
        self.anchors[0].len()
    }

    /// `κ_i(x) = exp(-|x - x_i|² / (2 h²))`.
    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        let h2 = self.bandwidth * self.bandwidth;
        self.anchors
            .iter()
            .map(|p| {
                let d2: f64 = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (2.0 * h2)).exp()
            })
            .collect()
    }

    /// Direct evaluation of `κ(x)ᵀ A κ(x)`.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let k = self.features(x);
        let d = k.len();
        (0..d)
            .map(|i| k[i] * (0..d).map(|j| self.a[i * d + j] * k[j]).sum::<f64>())
            .sum()
    }
}

/// Rewrite a PSD model as a mixture of squared shallow mixtures: with
/// `A = Σ λ_i u_i u_iᵀ`, component `i` has the `d` kernel units shared by
/// all components and inner weights `u_i`, and is mixed with weight `λ_i`.
///
/// Each kernel is a product of per-variable Gaussians with standard
/// deviation `h`, rescaled by `(2π h²)^{D/2}` to undo the normalization.
pub fn psd_to_circuit(p: &PsdModel) -> Result<SquaredCircuit> {
    let d = p.anchors.len();
    let dim = p.dimension();
    let (values, vectors) = symmetric_eigen(&p.a, d)?;
    if let Some(&low) = values.last() {
        if low < -NEGATIVE_TOL {
            return Err(Error::PreconditionViolation(format!("A has eigenvalue {low}, not PSD")));
        }
    }
    let top = values[0].max(0.0);
    let kept: Vec<usize> = (0..d).filter(|&i| values[i] > RANK_TOL * top && values[i] > 0.0).collect();
    if kept.is_empty() {
        return Err(Error::DegenerateModel("PSD matrix has rank 0".into()));
    }

    let mut b = CircuitBuilder::new(dim);
    let mut inputs = Vec::with_capacity(dim);
    for v in 0..dim {
        let id = b.input(v, InputFamily::Gaussian, d, false)?;
        let blocks = b.layer(id).params.clone();
        let means: Vec<f64> = p.anchors.iter().map(|a| a[v]).collect();
        b.params_mut().set_block_effective(blocks[0], &means)?;
        b.params_mut().set_block_effective(blocks[1], &vec![p.bandwidth; d])?;
        inputs.push(id);
    }
    let kernels = if dim == 1 { inputs[0] } else { b.product(ProductKind::Hadamard, inputs)? };
    let scale = (2.0 * PI * p.bandwidth * p.bandwidth).powf(dim as f64 / 2.0);
    let rank = kept.len();
    let mut w = Vec::with_capacity(rank * d);
    for &i in &kept {
        w.extend((0..d).map(|j| vectors[j * d + i] * scale));
    }
    let s = b.sum(kernels, rank, Reparam::Identity)?;
    let block = b.layer(s).params[0];
    b.params_mut().set_block_effective(block, &w)?;
    let c = b.finish(s, None)?;
    let mut head = vec![0.0; rank * rank];
    for (slot, &i) in kept.iter().enumerate() {
        head[slot * rank + slot] = values[i];
    }
    square_with_head(c, head)
}
