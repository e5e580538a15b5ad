use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How free parameters map to the effective values a layer uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reparam {
    Identity,
    /// `exp(θ)`, keeps values strictly positive.
    Exp,
    /// Softmax over each row of the block.
    SoftmaxRow,
}

/// What a block holds; used to pick initial values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockRole {
    Weight,
    Location,
    LogScale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub reparam: Reparam,
    pub role: BlockRole,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

pub type BlockId = usize;

/// Flat float-64 parameter vector with per-block views and a gradient buffer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    values: Vec<f64>,
    gradients: Vec<f64>,
    blocks: Vec<ParamBlock>,
    version: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuild from serialized parts, checking that blocks tile `values`.
    pub fn from_parts(blocks: Vec<ParamBlock>, values: Vec<f64>) -> Result<Self> {
        let mut expected = 0;
        for b in &blocks {
            if b.offset != expected {
                return Err(Error::Serialization(format!(
                    "parameter block at offset {} but expected {expected}",
                    b.offset
                )));
            }
            expected += b.len();
        }
        if expected != values.len() {
            return Err(Error::Serialization(format!(
                "parameter blocks cover {expected} values but {} were given",
                values.len()
            )));
        }
        let n = values.len();
        Ok(ParameterStore {
            values,
            gradients: vec![0.0; n],
            blocks,
            version: 0,
        })
    }

    pub fn add_block(&mut self, rows: usize, cols: usize, reparam: Reparam, role: BlockRole) -> BlockId {
        let offset = self.values.len();
        self.blocks.push(ParamBlock {
            offset,
            rows,
            cols,
            reparam,
            role,
        });
        self.values.resize(offset + rows * cols, 0.0);
        self.gradients.resize(offset + rows * cols, 0.0);
        self.version += 1;
        self.blocks.len() - 1
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn block(&self, id: BlockId) -> &ParamBlock {
        &self.blocks[id]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn gradients(&self) -> &[f64] {
        &self.gradients
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn block_values(&self, id: BlockId) -> &[f64] {
        &self.values[self.blocks[id].range()]
    }

    /// Mutable access to all free values; bumps the version.
    pub fn values_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.values
    }

    pub fn set_values(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters, got {}",
                self.values.len(),
                values.len()
            )));
        }
        self.values.copy_from_slice(values);
        self.version += 1;
        Ok(())
    }

    /// Set a block from effective (post-reparameterization) values.
    pub fn set_block_effective(&mut self, id: BlockId, effective: &[f64]) -> Result<()> {
        let b = self.blocks[id].clone();
        if effective.len() != b.len() {
            return Err(Error::InvalidArgument(format!(
                "block {id} holds {} values, got {}",
                b.len(),
                effective.len()
            )));
        }
        let dst = &mut self.values[b.range()];
        match b.reparam {
            Reparam::Identity => dst.copy_from_slice(effective),
            Reparam::Exp => {
                for (d, &e) in dst.iter_mut().zip(effective) {
                    if e <= 0.0 {
                        return Err(Error::InvalidArgument(
                            "exp-reparameterized block needs positive values".into(),
                        ));
                    }
                    *d = e.ln();
                }
            }
            Reparam::SoftmaxRow => {
                for (drow, erow) in dst.chunks_mut(b.cols).zip(effective.chunks(b.cols)) {
                    let total: f64 = erow.iter().sum();
                    if erow.iter().any(|&e| e <= 0.0) || (total - 1.0).abs() > 1e-9 {
                        return Err(Error::InvalidArgument(
                            "softmax rows need positive values summing to one".into(),
                        ));
                    }
                    for (d, &e) in drow.iter_mut().zip(erow) {
                        *d = e.ln();
                    }
                }
            }
        }
        self.version += 1;
        Ok(())
    }

    /// Effective values for every block, in the same layout as the free values.
    pub fn effective(&self) -> Vec<f64> {
        let mut out = self.values.clone();
        for b in &self.blocks {
            let dst = &mut out[b.range()];
            match b.reparam {
                Reparam::Identity => {}
                Reparam::Exp => dst.iter_mut().for_each(|v| *v = v.exp()),
                Reparam::SoftmaxRow => dst.chunks_mut(b.cols).for_each(softmax_in_place),
            }
        }
        out
    }

    pub fn zero_grad(&mut self) {
        self.gradients.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Chain gradients w.r.t. effective values back to the free values and
    /// add them to the gradient buffer.
    pub fn accumulate_effective_grad(&mut self, effective: &[f64], effective_grad: &[f64]) {
        let free = self.free_grad(effective, effective_grad);
        for (g, f) in self.gradients.iter_mut().zip(free) {
            *g += f;
        }
    }

    /// Gradient w.r.t. free values given the gradient w.r.t. effective values.
    pub fn free_grad(&self, effective: &[f64], effective_grad: &[f64]) -> Vec<f64> {
        let mut out = effective_grad.to_vec();
        for b in &self.blocks {
            let r = b.range();
            match b.reparam {
                Reparam::Identity => {}
                Reparam::Exp => {
                    for i in r {
                        out[i] = effective_grad[i] * effective[i];
                    }
                }
                Reparam::SoftmaxRow => {
                    for row in 0..b.rows {
                        let s = b.offset + row * b.cols;
                        let p = &effective[s..s + b.cols];
                        let g = &effective_grad[s..s + b.cols];
                        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
                        for c in 0..b.cols {
                            out[s + c] = p[c] * (g[c] - dot);
                        }
                    }
                }
            }
        }
        out
    }

    pub fn gradients_mut(&mut self) -> &mut [f64] {
        &mut self.gradients
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    row.iter_mut().for_each(|v| *v /= z);
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn blocks_tile_the_store() {
        let mut s = ParameterStore::new();
        let a = s.add_block(2, 3, Reparam::Identity, BlockRole::Weight);
        let b = s.add_block(1, 4, Reparam::Exp, BlockRole::Weight);
        assert_eq!(s.block(a).range(), 0..6);
        assert_eq!(s.block(b).range(), 6..10);
        assert_eq!(s.len(), s.gradients().len());
        assert!(ParameterStore::from_parts(s.blocks().to_vec(), vec![0.0; 9]).is_err());
    }

    #[test]
    fn softmax_rows_gradient_sums_to_zero() {
        let mut s = ParameterStore::new();
        s.add_block(2, 3, Reparam::SoftmaxRow, BlockRole::Weight);
        s.set_values(&[0.1, -0.4, 1.2, 0.3, 0.3, -2.0]).unwrap();
        let eff = s.effective();
        let g = s.free_grad(&eff, &[1.0, 2.0, -0.5, 0.7, 0.0, 3.0]);
        assert_relative_eq!(g[0] + g[1] + g[2], 0.0, epsilon = 1e-14);
        assert_relative_eq!(g[3] + g[4] + g[5], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn effective_round_trip() {
        let mut s = ParameterStore::new();
        let b = s.add_block(1, 3, Reparam::SoftmaxRow, BlockRole::Weight);
        s.set_block_effective(b, &[0.2, 0.3, 0.5]).unwrap();
        let e = s.effective();
        assert_relative_eq!(e[1], 0.3, epsilon = 1e-15);
        let x = s.add_block(1, 2, Reparam::Exp, BlockRole::Weight);
        assert!(s.set_block_effective(x, &[-1.0, 1.0]).is_err());
    }
}
