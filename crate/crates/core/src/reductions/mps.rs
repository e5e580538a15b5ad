//! Matrix-product states and their circuit form.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::cp::{cp_decompose, CpConfig};
use super::linalg::{matmul, transpose};
use crate::circuit::{CircuitBuilder, LayerId, ProductKind, Reparam, TensorizedCircuit};
use crate::error::{Error, Result};
use crate::input::InputFamily;
use crate::region_graph::RegionGraph;

/// `T[x_1..x_D] = Σ A_1[x_1, a_1] A_2[x_2, a_1, a_2] ... A_D[x_D, a_{D-1}]`.
///
/// `cores[0]` and `cores[D-1]` are `m x r`; interior cores are `m x r x r`
/// with index `[x][a][b]`. All row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MpsFactorization {
    d: usize,
    m: usize,
    r: usize,
    cores: Vec<Vec<f64>>,
}

impl MpsFactorization {
    pub fn new(d: usize, m: usize, r: usize, cores: Vec<Vec<f64>>) -> Result<Self> {
        if d < 2 || m == 0 || r == 0 {
            return Err(Error::InvalidArgument(format!(
                "MPS needs D >= 2, m >= 1, r >= 1 (got D={d}, m={m}, r={r})"
            )));
        }
        if cores.len() != d {
            return Err(Error::InvalidArgument(format!("{} cores for D={d}", cores.len())));
        }
        for (j, core) in cores.iter().enumerate() {
            let want = if j == 0 || j == d - 1 { m * r } else { m * r * r };
            if core.len() != want {
                return Err(Error::InvalidArgument(format!(
                    "core {j} holds {} values, expected {want}",
                    core.len()
                )));
            }
            if core.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("core {j} has a non-finite value")));
            }
        }
        Ok(MpsFactorization { d, m, r, cores })
    }

    /// Cores with standard normal entries.
    pub fn random(d: usize, m: usize, r: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cores = (0..d)
            .map(|j| {
                let n = if j == 0 || j + 1 == d { m * r } else { m * r * r };
                (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
            })
            .collect();
        Self::new(d, m, r, cores)
    }

    pub fn variable_count(&self) -> usize {
        self.d
    }

    pub fn states(&self) -> usize {
        self.m
    }

    pub fn rank(&self) -> usize {
        self.r
    }

    pub fn cores(&self) -> &[Vec<f64>] {
        &self.cores
    }

    /// Direct contraction at one assignment.
    pub fn contract(&self, x: &[usize]) -> Result<f64> {
        if x.len() != self.d || x.iter().any(|&s| s >= self.m) {
            return Err(Error::InvalidArgument(format!("assignment {x:?} outside the MPS domain")));
        }
        let r = self.r;
        let mut row: Vec<f64> = self.cores[0][x[0] * r..(x[0] + 1) * r].to_vec();
        for j in 1..self.d - 1 {
            let slice = &self.cores[j][x[j] * r * r..(x[j] + 1) * r * r];
            row = matmul(&row, slice, 1, r, r);
        }
        let last = &self.cores[self.d - 1][x[self.d - 1] * r..(x[self.d - 1] + 1) * r];
        Ok(row.iter().zip(last).map(|(a, b)| a * b).sum())
    }

    /// Binary layout: `D, m, r` as little-endian u64, then the cores in
    /// order as little-endian f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for h in [self.d, self.m, self.r] {
            out.extend_from_slice(&(h as u64).to_le_bytes());
        }
        for v in self.cores.iter().flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let ingest = |message: String| Error::Ingest { line: None, message };
        if bytes.len() < 24 {
            return Err(ingest(format!("MPS file of {} bytes has no complete header", bytes.len())));
        }
        let word = |i: usize| u64::from_le_bytes(bytes[i * 8..i * 8 + 8].try_into().expect("8 bytes"));
        let (d, m, r) = (word(0), word(1), word(2));
        let too_big = || ingest(format!("MPS header D={d}, m={m}, r={r} is too large"));
        let (d, m, r) = (
            usize::try_from(d).map_err(|_| too_big())?,
            usize::try_from(m).map_err(|_| too_big())?,
            usize::try_from(r).map_err(|_| too_big())?,
        );
        if d < 2 || m == 0 || r == 0 {
            return Err(ingest(format!("MPS header D={d}, m={m}, r={r} is invalid")));
        }
        let edge = m.checked_mul(r).ok_or_else(too_big)?;
        let inner = edge.checked_mul(r).ok_or_else(too_big)?;
        let count = inner
            .checked_mul(d - 2)
            .and_then(|x| x.checked_add(2 * edge))
            .ok_or_else(too_big)?;
        let body = &bytes[24..];
        if body.len() != count.checked_mul(8).ok_or_else(too_big)? {
            return Err(ingest(format!(
                "MPS body holds {} bytes, header implies {} values",
                body.len(),
                count
            )));
        }
        let mut values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let cores = (0..d)
            .map(|j| {
                let n = if j == 0 || j + 1 == d { edge } else { inner };
                values.by_ref().take(n).collect()
            })
            .collect();
        Self::new(d, m, r, cores).map_err(|e| ingest(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MpsReduction {
    pub circuit: TensorizedCircuit,
    /// CP rank chosen for each interior core.
    pub ranks: Vec<usize>,
    /// Relative reconstruction error of each interior core.
    pub cp_errors: Vec<f64>,
}

/// Build a linear-tree circuit with Hadamard products computing `T[x]`.
///
/// Each interior core is CP-decomposed as `A_j[x,a,b] = Σ_k V_j[x,k]
/// B_j[a,k] C_j[b,k]`. Variable `j` gets an embedding input from `V_j`
/// (`A_1` for the first variable, `A_D C_{D-1}` for the last); the chain
/// is contracted right to left through sums with weights `C_jᵀ B_{j+1}`,
/// then `B_2`, and a final all-ones sum.
pub fn mps_to_circuit(mps: &MpsFactorization, cp: &CpConfig) -> Result<MpsReduction> {
    let (d, m, r) = (mps.d, mps.m, mps.r);
    let mut decomps = Vec::with_capacity(d.saturating_sub(2));
    for j in 1..d - 1 {
        let mut cfg = *cp;
        cfg.seed = cp.seed.wrapping_add(1000 * j as u64);
        decomps.push(cp_decompose(&mps.cores[j], m, r, &cfg)?);
    }
    let cp_at = |j: usize| &decomps[j - 1];

    let order: Vec<usize> = (0..d).collect();
    let rg = RegionGraph::linear_tree_with_order(&order)?;
    let mut b = CircuitBuilder::new(d);
    let embed = |b: &mut CircuitBuilder, var: usize, table: &[f64], width: usize| -> Result<LayerId> {
        // table is m x width; embedding params are [unit][state]
        let id = b.input(var, InputFamily::Embedding { states: m }, width, false)?;
        let block = b.layer(id).params[0];
        b.params_mut().set_block_effective(block, &transpose(table, m, width))?;
        Ok(id)
    };
    let weighted_sum = |b: &mut CircuitBuilder, input: LayerId, w: &[f64], rows: usize| -> Result<LayerId> {
        let id = b.sum(input, rows, Reparam::Identity)?;
        let block = b.layer(id).params[0];
        b.params_mut().set_block_effective(block, w)?;
        Ok(id)
    };

    let mut cur = if d == 2 {
        let first = embed(&mut b, 0, &mps.cores[0], r)?;
        let last = embed(&mut b, 1, &mps.cores[1], r)?;
        b.product(ProductKind::Hadamard, vec![first, last])?
    } else {
        let c = cp_at(d - 2);
        let last_table = matmul(&mps.cores[d - 1], &c.c, m, r, c.rank);
        let prev = embed(&mut b, d - 2, &c.v, c.rank)?;
        let last = embed(&mut b, d - 1, &last_table, c.rank)?;
        let mut cur = b.product(ProductKind::Hadamard, vec![prev, last])?;
        for j in (1..d - 2).rev() {
            // variable j carries core j (0-based), decomposed as cp_at(j)
            let here = cp_at(j);
            let next = cp_at(j + 1);
            let w = matmul(&transpose(&here.c, r, here.rank), &next.b, here.rank, r, next.rank);
            let s = weighted_sum(&mut b, cur, &w, here.rank)?;
            let input = embed(&mut b, j, &here.v, here.rank)?;
            cur = b.product(ProductKind::Hadamard, vec![input, s])?;
        }
        let s = weighted_sum(&mut b, cur, &cp_at(1).b, r)?;
        let first = embed(&mut b, 0, &mps.cores[0], r)?;
        b.product(ProductKind::Hadamard, vec![first, s])?
    };
    cur = weighted_sum(&mut b, cur, &vec![1.0; r], 1)?;
    let circuit = b.finish(cur, Some(rg))?;
    Ok(MpsReduction {
        circuit,
        ranks: decomps.iter().map(|c| c.rank).collect(),
        cp_errors: decomps.iter().map(|c| c.error).collect(),
    })
}
