//! Layer-by-layer evaluation of a circuit or of its square at a (partial)
//! assignment, with reverse-mode gradients.
//!
//! A point holds one `Option<f64>` per variable; `None` integrates the
//! variable out. Plain evaluation substitutes `∫ f_i` at such inputs, squared
//! evaluation the matrix of product integrals `∫ f_i f_j`.

use std::sync::OnceLock;

use crate::circuit::{LayerKind, TensorizedCircuit};
use crate::error::{Error, Result};
use crate::signed::{self_outer, SignedLog, SignedLogTensor, Tape};

/// Evaluator bound to one snapshot of the parameters.
pub struct Evaluator<'c> {
    circuit: &'c TensorizedCircuit,
    squared: bool,
    permutations: &'c [Option<Vec<u32>>],
    head: Option<&'c [f64]>,
    effective: Vec<f64>,
    marginal_inputs: Vec<OnceLock<SignedLogTensor>>,
}

impl<'c> Evaluator<'c> {
    /// Evaluates `c` itself.
    pub fn plain(circuit: &'c TensorizedCircuit) -> Self {
        Self::new(circuit, false, &[], None)
    }

    /// Evaluates the square of `circuit`. Kronecker layer `l` is followed by
    /// `permutations[l]` when present; `head` (row-major `S x S`) contracts
    /// a width-`S` output into a scalar.
    pub fn squared(
        circuit: &'c TensorizedCircuit,
        permutations: &'c [Option<Vec<u32>>],
        head: Option<&'c [f64]>,
    ) -> Self {
        Self::new(circuit, true, permutations, head)
    }

    fn new(
        circuit: &'c TensorizedCircuit,
        squared: bool,
        permutations: &'c [Option<Vec<u32>>],
        head: Option<&'c [f64]>,
    ) -> Self {
        Evaluator {
            circuit,
            squared,
            permutations,
            head,
            effective: circuit.params.effective(),
            marginal_inputs: (0..circuit.layers().len()).map(|_| OnceLock::new()).collect(),
        }
    }

    pub fn circuit(&self) -> &'c TensorizedCircuit {
        self.circuit
    }

    pub fn is_squared(&self) -> bool {
        self.squared
    }

    pub fn effective(&self) -> &[f64] {
        &self.effective
    }

    fn check_point(&self, point: &[Option<f64>]) -> Result<()> {
        if point.len() != self.circuit.variable_count() {
            return Err(Error::InvalidArgument(format!(
                "expected {} variables, got {}",
                self.circuit.variable_count(),
                point.len()
            )));
        }
        Ok(())
    }

    fn marginal_input(&self, id: usize) -> &SignedLogTensor {
        self.marginal_inputs[id].get_or_init(|| {
            let layer = self.circuit.layer(id);
            let LayerKind::Input { family, .. } = &layer.kind else {
                unreachable!("marginal values requested for a non-input layer")
            };
            let p = &self.effective[self.circuit.param_range(id)];
            if self.squared {
                family.integral_matrix(p, layer.width)
            } else {
                family.integrals(p, layer.width)
            }
        })
    }

    fn permutation(&self, id: usize) -> Option<&'c [u32]> {
        self.permutations.get(id).and_then(|p| p.as_deref())
    }

    /// Record a forward pass; returns the tape and the root entry.
    pub fn forward(&self, point: &[Option<f64>]) -> Result<(Tape<'_>, usize)> {
        self.check_point(point)?;
        let c = self.circuit;
        let mut tape = Tape::new();
        for (id, layer) in c.layers().iter().enumerate() {
            let step = match &layer.kind {
                LayerKind::Input { variable, family } => {
                    let values = match point[*variable] {
                        Some(x) => {
                            let p = &self.effective[c.param_range(id)];
                            let f = family.evaluate(p, layer.width, *variable, x)?;
                            if self.squared {
                                self_outer(&f)
                            } else {
                                f
                            }
                        }
                        None => self.marginal_input(id).clone(),
                    };
                    tape.leaf(values)
                }
                LayerKind::Sum => {
                    let w = &self.effective[c.param_range(id)];
                    let input = layer.inputs[0];
                    let cols = c.layer(input).width;
                    if self.squared {
                        tape.squared_sum(w, layer.width, cols, input)
                    } else {
                        tape.sum(w, layer.width, cols, input)
                    }
                }
                LayerKind::Hadamard => tape.hadamard(layer.inputs.clone()),
                LayerKind::Kronecker => {
                    let perm = if self.squared { self.permutation(id) } else { None };
                    tape.kronecker(layer.inputs.clone(), perm)
                }
            };
            step.map_err(|e| e.at_layer(id))?;
        }
        let mut root = c.output();
        let width = c.layer(root).width;
        if let Some(head) = self.head.filter(|_| self.squared) {
            root = tape
                .sum(head, 1, width * width, root)
                .map_err(|e| e.at_layer(c.layers().len()))?;
        } else if width != 1 {
            return Err(Error::UnsupportedStructure(format!(
                "output layer has width {width}; a scalar output is required"
            )));
        }
        Ok((tape, root))
    }

    /// Circuit value at `point`.
    pub fn value(&self, point: &[Option<f64>]) -> Result<SignedLog> {
        let (tape, root) = self.forward(point)?;
        Ok(self.finish(tape.output(root).get(0)))
    }

    // A square is non-negative; a negative result can only come from
    // rounding in the contraction and is reported as zero.
    fn finish(&self, v: SignedLog) -> SignedLog {
        if self.squared && v.sign < 0.0 {
            SignedLog::ZERO
        } else {
            v
        }
    }

    /// Value at `point` and the gradient of `log|value|` with respect to the
    /// effective parameters.
    pub fn log_grad(&self, point: &[Option<f64>]) -> Result<(SignedLog, Vec<f64>)> {
        let (tape, root) = self.forward(point)?;
        let y = self.finish(tape.output(root).get(0));
        if y.is_zero() {
            return Err(Error::numeric("log|c(x)| is undefined where c(x) = 0"));
        }
        let seed = SignedLogTensor::from_values([SignedLog {
            log_mag: -y.log_mag,
            sign: y.sign,
        }]);
        let grads = tape.backward(root, seed)?;
        let c = self.circuit;
        let mut out = vec![0.0; self.effective.len()];
        for (id, layer) in c.layers().iter().enumerate() {
            let range = c.param_range(id);
            match &layer.kind {
                LayerKind::Sum => {
                    if let Some(g) = grads.weight_grad(id) {
                        out[range].iter_mut().zip(g).for_each(|(o, g)| *o += g);
                    }
                }
                LayerKind::Input { variable, family } => {
                    let Some(adj) = grads.adjoint(id) else { continue };
                    let p = &self.effective[range.clone()];
                    let dst = &mut out[range];
                    match (point[*variable], self.squared) {
                        (Some(x), false) => family.evaluate_vjp(p, layer.width, *variable, x, adj, dst)?,
                        (Some(x), true) => {
                            let f = family.evaluate(p, layer.width, *variable, x)?;
                            let adj_f = outer_adjoint(adj, &f);
                            family.evaluate_vjp(p, layer.width, *variable, x, &adj_f, dst)?;
                        }
                        (None, false) => family.integrals_vjp(p, layer.width, adj, dst),
                        (None, true) => family.integral_matrix_vjp(p, layer.width, adj, dst),
                    }
                }
                _ => {}
            }
        }
        if out.iter().any(|g| g.is_nan()) {
            return Err(Error::numeric("NaN in parameter gradient"));
        }
        Ok((y, out))
    }

    /// Same computation in plain float-64 arithmetic. Overflows are not
    /// trapped: the result may be infinite or NaN.
    pub fn value_linear(&self, point: &[Option<f64>]) -> Result<f64> {
        self.check_point(point)?;
        let c = self.circuit;
        let mut out: Vec<Vec<f64>> = Vec::with_capacity(c.layers().len());
        for (id, layer) in c.layers().iter().enumerate() {
            let v = match &layer.kind {
                LayerKind::Input { variable, family } => match point[*variable] {
                    Some(x) => {
                        let p = &self.effective[c.param_range(id)];
                        let f = family.evaluate(p, layer.width, *variable, x)?.to_linear();
                        if self.squared {
                            f.iter().flat_map(|a| f.iter().map(move |b| a * b)).collect()
                        } else {
                            f
                        }
                    }
                    None => self.marginal_input(id).to_linear(),
                },
                LayerKind::Sum => {
                    let w = &self.effective[c.param_range(id)];
                    let x = &out[layer.inputs[0]];
                    let cols = c.layer(layer.inputs[0]).width;
                    if self.squared {
                        linear_squared_sum(w, layer.width, cols, x)
                    } else {
                        w.chunks(cols).map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
                    }
                }
                LayerKind::Hadamard => {
                    let mut acc = out[layer.inputs[0]].clone();
                    for &i in &layer.inputs[1..] {
                        acc.iter_mut().zip(&out[i]).for_each(|(a, b)| *a *= b);
                    }
                    acc
                }
                LayerKind::Kronecker => {
                    let mut acc = vec![1.0];
                    for &i in &layer.inputs {
                        acc = acc.iter().flat_map(|a| out[i].iter().map(move |b| a * b)).collect();
                    }
                    match self.permutation(id).filter(|_| self.squared) {
                        Some(p) => p.iter().map(|&i| acc[i as usize]).collect(),
                        None => acc,
                    }
                }
            };
            out.push(v);
        }
        let root = &out[c.output()];
        match self.head.filter(|_| self.squared) {
            Some(h) => Ok(h.iter().zip(root).map(|(a, b)| a * b).sum()),
            None => Ok(root[0]),
        }
    }
}

fn linear_squared_sum(w: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    let t = crate::signed::matmul(w, rows, cols, x, cols);
    let mut y = vec![0.0; rows * rows];
    for s in 0..rows {
        for u in 0..rows {
            y[s * rows + u] = (0..cols).map(|k| t[s * cols + k] * w[u * cols + k]).sum();
        }
    }
    y
}

/// Adjoint of `f` given the adjoint `a` of `f fᵀ`: `(A + Aᵀ) f`.
fn outer_adjoint(a: &SignedLogTensor, f: &SignedLogTensor) -> SignedLogTensor {
    let k = f.len();
    let (alpha, av) = a.scaled();
    let (beta, fv) = f.scaled();
    if alpha == f64::NEG_INFINITY || beta == f64::NEG_INFINITY {
        return SignedLogTensor::zeros(k);
    }
    let v: Vec<f64> = (0..k)
        .map(|i| (0..k).map(|j| (av[i * k + j] + av[j * k + i]) * fv[j]).sum())
        .collect();
    SignedLogTensor::from_scaled(alpha + beta, &v)
}
