use super::{
    matmul, signed_kronecker, signed_log_sum, signed_logsumexp, signed_product,
    signed_squared_logsumexp, SignedLog, SignedLogTensor,
};
use crate::error::{Error, Result};

/// A primitive recorded on the tape. Weight slices are borrowed from the
/// effective parameter buffer that outlives the tape.
#[derive(Debug, Clone, Copy)]
pub enum TapeOp<'w> {
    /// Values injected from outside (input layers).
    Leaf,
    /// `y = W x` with `W` row-major `rows x cols`.
    Sum {
        weights: &'w [f64],
        rows: usize,
        cols: usize,
    },
    /// `y = (W ⊗ W) x`, evaluated as `W X Wᵀ`.
    SquaredSum {
        weights: &'w [f64],
        rows: usize,
        cols: usize,
    },
    Hadamard,
    /// Kronecker product, optionally followed by an index permutation
    /// (`y[o] = z[perm[o]]`).
    Kronecker { permutation: Option<&'w [u32]> },
}

#[derive(Debug)]
struct Entry<'w> {
    op: TapeOp<'w>,
    inputs: Vec<usize>,
    output: SignedLogTensor,
}

/// Forward record of one evaluation. Each evaluation owns its own tape.
#[derive(Debug, Default)]
pub struct Tape<'w> {
    entries: Vec<Entry<'w>>,
}

/// Result of a reverse sweep: adjoints `dL/dy` for every entry (in signed
/// log-space) and linear-space weight gradients for sum entries.
#[derive(Debug)]
pub struct Gradients {
    adjoints: Vec<Option<SignedLogTensor>>,
    weight_grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn adjoint(&self, entry: usize) -> Option<&SignedLogTensor> {
        self.adjoints[entry].as_ref()
    }

    pub fn weight_grad(&self, entry: usize) -> Option<&[f64]> {
        self.weight_grads[entry].as_deref()
    }
}

impl<'w> Tape<'w> {
    pub fn new() -> Self {
        Tape {
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn output(&self, entry: usize) -> &SignedLogTensor {
        &self.entries[entry].output
    }

    fn record(&mut self, op: TapeOp<'w>, inputs: Vec<usize>, output: SignedLogTensor) -> usize {
        self.entries.push(Entry { op, inputs, output });
        self.entries.len() - 1
    }

    pub fn leaf(&mut self, values: SignedLogTensor) -> Result<usize> {
        if values.has_nan() {
            return Err(Error::numeric("NaN in input layer output"));
        }
        Ok(self.record(TapeOp::Leaf, Vec::new(), values))
    }

    pub fn sum(&mut self, weights: &'w [f64], rows: usize, cols: usize, input: usize) -> Result<usize> {
        let y = signed_logsumexp(weights, rows, cols, self.output(input))?;
        Ok(self.record(TapeOp::Sum { weights, rows, cols }, vec![input], y))
    }

    pub fn squared_sum(
        &mut self,
        weights: &'w [f64],
        rows: usize,
        cols: usize,
        input: usize,
    ) -> Result<usize> {
        let y = signed_squared_logsumexp(weights, rows, cols, self.output(input))?;
        Ok(self.record(TapeOp::SquaredSum { weights, rows, cols }, vec![input], y))
    }

    pub fn hadamard(&mut self, inputs: Vec<usize>) -> Result<usize> {
        let xs: Vec<&SignedLogTensor> = inputs.iter().map(|&i| self.output(i)).collect();
        let y = signed_product(&xs)?;
        Ok(self.record(TapeOp::Hadamard, inputs, y))
    }

    pub fn kronecker(&mut self, inputs: Vec<usize>, permutation: Option<&'w [u32]>) -> Result<usize> {
        let xs: Vec<&SignedLogTensor> = inputs.iter().map(|&i| self.output(i)).collect();
        let z = signed_kronecker(&xs)?;
        let y = match permutation {
            Some(p) => {
                if p.len() != z.len() {
                    return Err(Error::InvalidArgument(format!(
                        "permutation of length {} for Kronecker output of width {}",
                        p.len(),
                        z.len()
                    )));
                }
                SignedLogTensor::from_values(p.iter().map(|&i| z.get(i as usize)))
            }
            None => z,
        };
        Ok(self.record(TapeOp::Kronecker { permutation }, inputs, y))
    }

    /// Reverse sweep from `root`, seeded with `dL/d(root output)`.
    ///
    /// Entries are visited in exact reverse order of recording; adjoints
    /// reaching the same entry from several consumers are added.
    pub fn backward(&self, root: usize, seed: SignedLogTensor) -> Result<Gradients> {
        let n = self.entries.len();
        let mut adjoints: Vec<Option<SignedLogTensor>> = vec![None; n];
        let mut weight_grads: Vec<Option<Vec<f64>>> = vec![None; n];
        if seed.len() != self.output(root).len() {
            return Err(Error::InvalidArgument(
                "seed width differs from the root output".into(),
            ));
        }
        adjoints[root] = Some(seed);
        for idx in (0..=root).rev() {
            let Some(g) = adjoints[idx].clone() else {
                continue;
            };
            if g.has_nan() {
                return Err(Error::numeric("NaN adjoint during reverse sweep"));
            }
            let entry = &self.entries[idx];
            match entry.op {
                TapeOp::Leaf => {}
                TapeOp::Sum { weights, rows, cols } => {
                    let x = self.output(entry.inputs[0]);
                    let (dx, dw) = sum_backward(weights, rows, cols, x, &g);
                    accumulate(&mut adjoints, entry.inputs[0], dx);
                    weight_grads[idx] = Some(dw);
                }
                TapeOp::SquaredSum { weights, rows, cols } => {
                    let x = self.output(entry.inputs[0]);
                    let (dx, dw) = squared_sum_backward(weights, rows, cols, x, &g);
                    accumulate(&mut adjoints, entry.inputs[0], dx);
                    weight_grads[idx] = Some(dw);
                }
                TapeOp::Hadamard => {
                    let xs: Vec<&SignedLogTensor> =
                        entry.inputs.iter().map(|&i| self.output(i)).collect();
                    for (pos, &input) in entry.inputs.iter().enumerate() {
                        let mut dx = g.clone();
                        for (other, x) in xs.iter().enumerate() {
                            if other != pos {
                                for k in 0..dx.len() {
                                    let v = dx.get(k).mul(x.get(k));
                                    dx.set(k, v);
                                }
                            }
                        }
                        accumulate(&mut adjoints, input, dx);
                    }
                }
                TapeOp::Kronecker { permutation } => {
                    let xs: Vec<&SignedLogTensor> =
                        entry.inputs.iter().map(|&i| self.output(i)).collect();
                    let gz = match permutation {
                        Some(p) => {
                            let mut gz = SignedLogTensor::zeros(g.len());
                            for (o, &src) in p.iter().enumerate() {
                                gz.set(src as usize, g.get(o));
                            }
                            gz
                        }
                        None => g,
                    };
                    for (pos, dx) in kronecker_backward(&xs, &gz).into_iter().enumerate() {
                        accumulate(&mut adjoints, entry.inputs[pos], dx);
                    }
                }
            }
        }
        Ok(Gradients {
            adjoints,
            weight_grads,
        })
    }
}

fn accumulate(adjoints: &mut [Option<SignedLogTensor>], idx: usize, dx: SignedLogTensor) {
    adjoints[idx] = Some(match adjoints[idx].take() {
        Some(prev) => prev.add(&dx),
        None => dx,
    });
}

fn sum_backward(
    weights: &[f64],
    rows: usize,
    cols: usize,
    x: &SignedLogTensor,
    g: &SignedLogTensor,
) -> (SignedLogTensor, Vec<f64>) {
    let (beta, gs) = g.scaled();
    let mut dx_scaled = vec![0.0; cols];
    for s in 0..rows {
        if gs[s] == 0.0 {
            continue;
        }
        for k in 0..cols {
            dx_scaled[k] += weights[s * cols + k] * gs[s];
        }
    }
    let dx = SignedLogTensor::from_scaled(beta, &dx_scaled);
    let mut dw = vec![0.0; rows * cols];
    for s in 0..rows {
        let gv = g.get(s);
        for k in 0..cols {
            dw[s * cols + k] = gv.mul(x.get(k)).to_linear();
        }
    }
    (dx, dw)
}

fn squared_sum_backward(
    weights: &[f64],
    rows: usize,
    cols: usize,
    x: &SignedLogTensor,
    g: &SignedLogTensor,
) -> (SignedLogTensor, Vec<f64>) {
    let (beta, gs) = g.scaled();
    let (alpha, xs) = x.scaled();
    if beta == f64::NEG_INFINITY {
        return (SignedLogTensor::zeros(cols * cols), vec![0.0; rows * cols]);
    }
    // dX = Wᵀ G W
    let gw = matmul(&gs, rows, rows, weights, cols); // rows x cols
    let mut dx = vec![0.0; cols * cols];
    for s in 0..rows {
        for k in 0..cols {
            let w = weights[s * cols + k];
            if w == 0.0 {
                continue;
            }
            let gw_row = &gw[s * cols..(s + 1) * cols];
            for (d, a) in dx[k * cols..(k + 1) * cols].iter_mut().zip(gw_row) {
                *d += w * a;
            }
        }
    }
    let dx = SignedLogTensor::from_scaled(beta, &dx);
    if alpha == f64::NEG_INFINITY {
        return (dx, vec![0.0; rows * cols]);
    }
    // dW = G W Xᵀ + Gᵀ W X
    let gt: Vec<f64> = (0..rows * rows)
        .map(|i| gs[(i % rows) * rows + i / rows])
        .collect();
    let xt: Vec<f64> = (0..cols * cols)
        .map(|i| xs[(i % cols) * cols + i / cols])
        .collect();
    let m1 = matmul(&gw, rows, cols, &xt, cols);
    let gtw = matmul(&gt, rows, rows, weights, cols);
    let m2 = matmul(&gtw, rows, cols, &xs, cols);
    let scale = (alpha + beta).exp();
    let dw = m1.iter().zip(&m2).map(|(a, b)| (a + b) * scale).collect();
    (dx, dw)
}

fn kronecker_backward(xs: &[&SignedLogTensor], gz: &SignedLogTensor) -> Vec<SignedLogTensor> {
    let widths: Vec<usize> = xs.iter().map(|x| x.len()).collect();
    let mut terms: Vec<Vec<Vec<SignedLog>>> = widths.iter().map(|&w| vec![Vec::new(); w]).collect();
    let mut idx = vec![0usize; widths.len()];
    for flat in 0..gz.len() {
        let mut rem = flat;
        for pos in (0..widths.len()).rev() {
            idx[pos] = rem % widths[pos];
            rem /= widths[pos];
        }
        let gv = gz.get(flat);
        if gv.is_zero() {
            continue;
        }
        for pos in 0..widths.len() {
            let mut term = gv;
            for (other, x) in xs.iter().enumerate() {
                if other != pos {
                    term = term.mul(x.get(idx[other]));
                }
            }
            terms[pos][idx[pos]].push(term);
        }
    }
    terms
        .into_iter()
        .map(|per_unit| {
            SignedLogTensor::from_values(per_unit.into_iter().map(|t| signed_log_sum(t.iter().copied())))
        })
        .collect()
}
