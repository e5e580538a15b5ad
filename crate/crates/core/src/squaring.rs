//! Squaring of structured-decomposable circuits.
//!
//! The squared circuit reuses the source's topology: an input layer of `K`
//! functions becomes the `K x K` layer of products `f_i f_j`, a sum layer
//! with weights `W` becomes one with `W ⊗ W` (never materialized), Hadamard
//! layers multiply the squared inputs elementwise, and Kronecker layers are
//! followed by an index permutation restoring the `(z, z')` ordering.

use crate::circuit::{
    next_assignment, CircuitBuilder, LayerId, LayerKind, ModelDocument, ProductKind, Property, Reparam,
    TensorizedCircuit,
};
use crate::engine::Evaluator;
use crate::error::{Error, Result};
use crate::inference::PartitionCache;
use crate::input::InputFamily;

#[derive(Debug, Clone)]
pub struct SquaredCircuit {
    source: TensorizedCircuit,
    permutations: Vec<Option<Vec<u32>>>,
    head: Option<Vec<f64>>,
    pub(crate) partition: PartitionCache,
}

impl PartialEq for SquaredCircuit {
    fn eq(&self, other: &Self) -> bool {
        self.source == other.source && self.head == other.head
    }
}

/// Square `c`. Requires a scalar output.
pub fn square(c: TensorizedCircuit) -> Result<SquaredCircuit> {
    let width = c.layer(c.output()).width;
    if width != 1 {
        return Err(Error::UnsupportedStructure(format!(
            "squaring needs a scalar output, got width {width}"
        )));
    }
    build(c, None)
}

/// Square `c` and contract its width-`S` output with the fixed `S x S`
/// matrix `head`: the result is `c(x)ᵀ H c(x)`.
pub fn square_with_head(c: TensorizedCircuit, head: Vec<f64>) -> Result<SquaredCircuit> {
    let s = c.layer(c.output()).width;
    if head.len() != s * s {
        return Err(Error::InvalidArgument(format!(
            "head of {} entries for an output of width {s}",
            head.len()
        )));
    }
    if head.iter().any(|h| !h.is_finite()) {
        return Err(Error::InvalidArgument("non-finite head weight".into()));
    }
    build(c, Some(head))
}

fn build(c: TensorizedCircuit, head: Option<Vec<f64>>) -> Result<SquaredCircuit> {
    if !c.check_property(Property::StructuredDecomposable)? {
        return Err(Error::UnsupportedStructure(
            "only structured-decomposable circuits can be squared".into(),
        ));
    }
    let permutations = c
        .layers()
        .iter()
        .map(|l| match l.kind {
            LayerKind::Kronecker => {
                let widths: Vec<usize> = l.inputs.iter().map(|&i| c.layer(i).width).collect();
                Some(kronecker_square_permutation(&widths))
            }
            _ => None,
        })
        .collect();
    Ok(SquaredCircuit {
        source: c,
        permutations,
        head,
        partition: PartitionCache::default(),
    })
}

/// Index table taking `(X_1 ⊗ … ⊗ X_N)` (each `X_n` a `K_n x K_n` matrix,
/// flattened) to the `P x P` matrix `z z'ᵀ` with `z = x_1 ⊗ … ⊗ x_N`,
/// `P = Π K_n`: output `o` reads input `perm[o]`.
pub fn kronecker_square_permutation(widths: &[usize]) -> Vec<u32> {
    let p: usize = widths.iter().product();
    let mut perm = Vec::with_capacity(p * p);
    let digits = |mut z: usize| {
        let mut d = vec![0; widths.len()];
        for n in (0..widths.len()).rev() {
            d[n] = z % widths[n];
            z /= widths[n];
        }
        d
    };
    for z in 0..p {
        let i = digits(z);
        for zp in 0..p {
            let j = digits(zp);
            let mut idx = 0;
            for n in 0..widths.len() {
                idx = idx * widths[n] * widths[n] + i[n] * widths[n] + j[n];
            }
            perm.push(idx as u32);
        }
    }
    perm
}

impl SquaredCircuit {
    pub fn source(&self) -> &TensorizedCircuit {
        &self.source
    }

    pub fn source_mut(&mut self) -> &mut TensorizedCircuit {
        &mut self.source
    }

    pub fn into_source(self) -> TensorizedCircuit {
        self.source
    }

    pub fn head(&self) -> Option<&[f64]> {
        self.head.as_deref()
    }

    pub fn variable_count(&self) -> usize {
        self.source.variable_count()
    }

    /// Source layer id to squared layer id. Layers keep their position, the
    /// map is the identity.
    pub fn layer_map(&self) -> Vec<LayerId> {
        (0..self.source.layers().len()).collect()
    }

    /// Width of squared layer `id`: the square of the source width.
    pub fn layer_width(&self, id: LayerId) -> usize {
        let w = self.source.layer(id).width;
        w * w
    }

    pub fn permutation(&self, id: LayerId) -> Option<&[u32]> {
        self.permutations[id].as_deref()
    }

    /// Scalar input connections of the squared circuit (head included).
    pub fn size(&self) -> usize {
        let c = &self.source;
        let body: usize = c
            .layers()
            .iter()
            .enumerate()
            .map(|(id, l)| {
                let widths = l.inputs.iter().map(|&i| self.layer_width(i));
                match l.kind {
                    LayerKind::Input { .. } => 0,
                    LayerKind::Sum => self.layer_width(id) * self.layer_width(l.inputs[0]),
                    LayerKind::Hadamard => widths.sum(),
                    LayerKind::Kronecker => widths.clone().product::<usize>() * widths.max().unwrap_or(0),
                }
            })
            .sum();
        body + self.head.as_ref().map_or(0, |h| h.len())
    }

    pub fn evaluator(&self) -> Evaluator<'_> {
        Evaluator::squared(&self.source, &self.permutations, self.head.as_deref())
    }

    pub fn z_evaluations(&self) -> u64 {
        self.partition.count()
    }

    pub fn to_document(&self) -> ModelDocument {
        let mut d = ModelDocument::from_circuit(&self.source);
        d.squared = true;
        d.head = self.head.clone();
        d
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        if !doc.squared {
            return Err(Error::Serialization("document does not describe a squared model".into()));
        }
        let c = doc.to_circuit()?;
        match &doc.head {
            Some(h) => square_with_head(c, h.clone()),
            None => square(c),
        }
    }
}

/// Deterministic squaring: for a deterministic circuit, `c²` is obtained by
/// squaring every weight and every input function on the same structure.
pub fn square_deterministic(c: &TensorizedCircuit) -> Result<TensorizedCircuit> {
    if !c.check_property(Property::DeterministicInputs)? {
        return Err(Error::PreconditionViolation("circuit is not deterministic".into()));
    }
    let eff = c.params.effective();
    let mut b = CircuitBuilder::new(c.variable_count());
    let mut values: Vec<(LayerId, Vec<f64>)> = Vec::new();
    for (id, layer) in c.layers().iter().enumerate() {
        let p = &eff[c.param_range(id)];
        let new_id = match &layer.kind {
            LayerKind::Input { variable, family } => {
                let states = family.states().ok_or_else(|| {
                    Error::UnsupportedOperation("deterministic squaring needs discrete inputs".into())
                })?;
                let mut table = vec![0.0; layer.width * states];
                for s in 0..states {
                    let f = family.evaluate(p, layer.width, *variable, s as f64)?.to_linear();
                    for (i, v) in f.iter().enumerate() {
                        table[i * states + s] = v * v;
                    }
                }
                values.push((id, table));
                b.input(*variable, InputFamily::Embedding { states }, layer.width, false)?
            }
            LayerKind::Sum => {
                values.push((id, p.iter().map(|w| w * w).collect()));
                b.sum(layer.inputs[0], layer.width, Reparam::Identity)?
            }
            LayerKind::Hadamard => b.product(ProductKind::Hadamard, layer.inputs.clone())?,
            LayerKind::Kronecker => b.product(ProductKind::Kronecker, layer.inputs.clone())?,
        };
        debug_assert_eq!(new_id, id);
    }
    let mut out = b.finish(c.output(), c.region_graph().cloned())?;
    for (id, v) in values {
        let block = out.layer(id).params[0];
        out.params.set_block_effective(block, &v)?;
    }
    Ok(out)
}

/// All assignments of a discrete circuit's variables, first variable
/// fastest.
pub fn enumerate_assignments(states: &[usize]) -> Vec<Vec<f64>> {
    let total: usize = states.iter().product();
    let mut x = vec![0usize; states.len()];
    let mut out = Vec::with_capacity(total);
    for _ in 0..total {
        out.push(x.iter().map(|&v| v as f64).collect());
        next_assignment(&mut x, states);
    }
    out
}
