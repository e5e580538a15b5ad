//! Tensorized circuits: layered computation graphs over a shared parameter
//! store, built from tree region graphs.

mod document;
mod params;

pub use document::{ModelDocument, FORMAT_VERSION};
pub use params::{BlockId, BlockRole, ParamBlock, ParameterStore, Reparam};

use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::PartitionCache;
use crate::input::InputFamily;
use crate::region_graph::{NodeId, RegionGraph, RgNode, Scope};

pub type LayerId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProductKind {
    Hadamard,
    Kronecker,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    /// `width` univariate functions of one variable.
    Input { variable: usize, family: InputFamily },
    /// `y = W x`, `W` of shape `width x input width`.
    Sum,
    Hadamard,
    Kronecker,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub kind: LayerKind,
    pub scope: Scope,
    pub width: usize,
    pub inputs: Vec<LayerId>,
    /// Parameter blocks, contiguous in the store.
    pub params: Vec<BlockId>,
}

impl Layer {
    pub fn is_input(&self) -> bool {
        matches!(self.kind, LayerKind::Input { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Property {
    Smooth,
    Decomposable,
    StructuredDecomposable,
    Monotonic,
    DeterministicInputs,
}

#[derive(Debug, Clone)]
pub struct TensorizedCircuit {
    variable_count: usize,
    layers: Vec<Layer>,
    output: LayerId,
    region_graph: Option<RegionGraph>,
    pub params: ParameterStore,
    pub(crate) partition: PartitionCache,
}

impl PartialEq for TensorizedCircuit {
    fn eq(&self, other: &Self) -> bool {
        self.variable_count == other.variable_count
            && self.layers == other.layers
            && self.output == other.output
            && self.region_graph == other.region_graph
            && self.params.values() == other.params.values()
            && self.params.blocks() == other.params.blocks()
    }
}

/// Incremental construction of a circuit; layers must be added in
/// topological order.
#[derive(Debug, Default)]
pub struct CircuitBuilder {
    variable_count: usize,
    layers: Vec<Layer>,
    params: ParameterStore,
}

impl CircuitBuilder {
    pub fn new(variable_count: usize) -> Self {
        CircuitBuilder {
            variable_count,
            ..Default::default()
        }
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }

    pub fn layer(&self, id: LayerId) -> &Layer {
        &self.layers[id]
    }

    pub fn input(&mut self, variable: usize, family: InputFamily, width: usize, nonnegative: bool) -> Result<LayerId> {
        if variable >= self.variable_count {
            return Err(Error::InvalidArgument(format!(
                "variable {variable} out of range for {} variables",
                self.variable_count
            )));
        }
        if width == 0 {
            return Err(Error::InvalidArgument("layer width must be positive".into()));
        }
        family.validate()?;
        let params = family
            .blocks(width, nonnegative)
            .into_iter()
            .map(|b| self.params.add_block(b.rows, b.cols, b.reparam, b.role))
            .collect();
        self.layers.push(Layer {
            kind: LayerKind::Input { variable, family },
            scope: Scope::singleton(variable),
            width,
            inputs: Vec::new(),
            params,
        });
        Ok(self.layers.len() - 1)
    }

    pub fn sum(&mut self, input: LayerId, width: usize, reparam: Reparam) -> Result<LayerId> {
        self.check_ids(&[input])?;
        if width == 0 {
            return Err(Error::InvalidArgument("layer width must be positive".into()));
        }
        let cols = self.layers[input].width;
        let block = self.params.add_block(width, cols, reparam, BlockRole::Weight);
        self.layers.push(Layer {
            kind: LayerKind::Sum,
            scope: self.layers[input].scope.clone(),
            width,
            inputs: vec![input],
            params: vec![block],
        });
        Ok(self.layers.len() - 1)
    }

    pub fn product(&mut self, kind: ProductKind, inputs: Vec<LayerId>) -> Result<LayerId> {
        if inputs.is_empty() {
            return Err(Error::InvalidArgument("product layer needs inputs".into()));
        }
        self.check_ids(&inputs)?;
        let widths: Vec<usize> = inputs.iter().map(|&i| self.layers[i].width).collect();
        let width = match kind {
            ProductKind::Hadamard => {
                if widths.iter().any(|&w| w != widths[0]) {
                    return Err(Error::InvalidArgument(
                        "Hadamard inputs must share their width".into(),
                    ));
                }
                widths[0]
            }
            ProductKind::Kronecker => widths.iter().product(),
        };
        let scope = Scope::union(inputs.iter().map(|&i| &self.layers[i].scope));
        self.layers.push(Layer {
            kind: match kind {
                ProductKind::Hadamard => LayerKind::Hadamard,
                ProductKind::Kronecker => LayerKind::Kronecker,
            },
            scope,
            width,
            inputs,
            params: Vec::new(),
        });
        Ok(self.layers.len() - 1)
    }

    fn check_ids(&self, ids: &[LayerId]) -> Result<()> {
        match ids.iter().find(|&&i| i >= self.layers.len()) {
            Some(i) => Err(Error::InvalidArgument(format!("unknown layer {i}"))),
            None => Ok(()),
        }
    }

    pub fn finish(self, output: LayerId, region_graph: Option<RegionGraph>) -> Result<TensorizedCircuit> {
        TensorizedCircuit::from_parts(self.variable_count, self.layers, output, region_graph, self.params)
    }
}

impl TensorizedCircuit {
    pub fn from_parts(
        variable_count: usize,
        layers: Vec<Layer>,
        output: LayerId,
        region_graph: Option<RegionGraph>,
        params: ParameterStore,
    ) -> Result<Self> {
        if output >= layers.len() {
            return Err(Error::InvalidArgument("output layer out of range".into()));
        }
        for (id, layer) in layers.iter().enumerate() {
            if layer.inputs.iter().any(|&i| i >= id) {
                return Err(Error::InvalidArgument(format!(
                    "layer {id} is not in topological order"
                )));
            }
            if layer.params.iter().any(|&b| b >= params.blocks().len()) {
                return Err(Error::InvalidArgument(format!("layer {id} references a missing block")));
            }
            match &layer.kind {
                LayerKind::Sum => {
                    let [input] = layer.inputs[..] else {
                        return Err(Error::InvalidArgument(format!("sum layer {id} needs exactly one input")));
                    };
                    let b = layer.params.first().map(|&b| params.block(b));
                    if b.map(|b| (b.rows, b.cols)) != Some((layer.width, layers[input].width)) {
                        return Err(Error::InvalidArgument(format!("sum layer {id} has a mis-shaped weight block")));
                    }
                }
                LayerKind::Input { variable, family } => {
                    if *variable >= variable_count || !layer.inputs.is_empty() {
                        return Err(Error::InvalidArgument(format!("malformed input layer {id}")));
                    }
                    let expected: usize = family.param_count(layer.width);
                    let got: usize = layer.params.iter().map(|&b| params.block(b).len()).sum();
                    if expected != got {
                        return Err(Error::InvalidArgument(format!(
                            "input layer {id} expects {expected} parameters, has {got}"
                        )));
                    }
                }
                LayerKind::Hadamard | LayerKind::Kronecker => {
                    if layer.inputs.is_empty() {
                        return Err(Error::InvalidArgument(format!("product layer {id} has no inputs")));
                    }
                }
            }
            // blocks of one layer must be contiguous
            for w in layer.params.windows(2) {
                let (a, b) = (params.block(w[0]), params.block(w[1]));
                if a.offset + a.len() != b.offset {
                    return Err(Error::InvalidArgument(format!("layer {id} blocks are not contiguous")));
                }
            }
        }
        if layers[output].scope != Scope::full(variable_count) {
            return Err(Error::InvalidArgument("output layer must cover every variable".into()));
        }
        Ok(TensorizedCircuit {
            variable_count,
            layers,
            output,
            region_graph,
            params,
            partition: PartitionCache::default(),
        })
    }

    /// Standard construction: leaf regions become input layers of width
    /// `width`, each partition a product layer followed by a sum layer of
    /// width `width` (width 1 at the root). A single-variable graph yields an
    /// input layer and a `1 x width` sum.
    ///
    /// `families[v]` is the input family of variable `v`. With `monotonic`,
    /// sum weights and signed input families are exp-reparameterized.
    pub fn from_region_graph(
        rg: &RegionGraph,
        width: usize,
        product: ProductKind,
        families: &[InputFamily],
        monotonic: bool,
    ) -> Result<Self> {
        if width == 0 {
            return Err(Error::InvalidArgument("width must be at least 1".into()));
        }
        if families.len() != rg.variable_count() {
            return Err(Error::InvalidArgument(format!(
                "{} input families for {} variables",
                families.len(),
                rg.variable_count()
            )));
        }
        let violations = rg.validate();
        if !violations.is_empty() {
            return Err(Error::InvalidArgument(format!("invalid region graph: {violations:?}")));
        }
        let sum_reparam = if monotonic { Reparam::Exp } else { Reparam::Identity };
        let mut b = CircuitBuilder::new(rg.variable_count());
        let root = build_region(&mut b, rg, rg.root(), width, product, families, monotonic, sum_reparam)?;
        let output = if b.layer(root).is_input() {
            b.sum(root, 1, sum_reparam)?
        } else {
            root
        };
        b.finish(output, Some(rg.clone()))
    }

    pub fn variable_count(&self) -> usize {
        self.variable_count
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer(&self, id: LayerId) -> &Layer {
        &self.layers[id]
    }

    pub fn output(&self) -> LayerId {
        self.output
    }

    pub fn region_graph(&self) -> Option<&RegionGraph> {
        self.region_graph.as_ref()
    }

    /// Range of the store covered by a layer's blocks.
    pub fn param_range(&self, id: LayerId) -> Range<usize> {
        let l = &self.layers[id];
        match (l.params.first(), l.params.last()) {
            (Some(&a), Some(&b)) => self.params.block(a).offset..self.params.block(b).range().end,
            _ => 0..0,
        }
    }

    pub fn input_layers(&self) -> impl Iterator<Item = (LayerId, &Layer)> {
        self.layers.iter().enumerate().filter(|(_, l)| l.is_input())
    }

    /// Family of the input layer(s) over `variable`.
    pub fn family_of(&self, variable: usize) -> Option<&InputFamily> {
        self.layers.iter().find_map(|l| match &l.kind {
            LayerKind::Input { variable: v, family } if *v == variable => Some(family),
            _ => None,
        })
    }

    pub fn is_discrete(&self) -> bool {
        self.input_layers().all(|(_, l)| match &l.kind {
            LayerKind::Input { family, .. } => family.is_discrete(),
            _ => unreachable!(),
        })
    }

    /// Number of scalar input connections: `S*K` per sum, `N*K` per
    /// Hadamard and `K^(N+1)` per Kronecker (for unequal widths, the product
    /// of input widths times the largest one).
    pub fn size(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                let widths = l.inputs.iter().map(|&i| self.layers[i].width);
                match l.kind {
                    LayerKind::Input { .. } => 0,
                    LayerKind::Sum => l.width * self.layers[l.inputs[0]].width,
                    LayerKind::Hadamard => widths.sum(),
                    LayerKind::Kronecker => widths.clone().product::<usize>() * widths.max().unwrap_or(0),
                }
            })
            .sum()
    }

    pub fn check_property(&self, property: Property) -> Result<bool> {
        Ok(match property {
            Property::Smooth => self.is_smooth(),
            Property::Decomposable => self.is_decomposable(),
            Property::StructuredDecomposable => self.is_structured_decomposable(),
            Property::Monotonic => self.is_monotonic(),
            Property::DeterministicInputs => self.is_deterministic()?,
        })
    }

    fn is_smooth(&self) -> bool {
        self.layers.iter().all(|l| match l.kind {
            LayerKind::Sum => l.inputs.len() == 1 && self.layers[l.inputs[0]].scope == l.scope,
            _ => true,
        })
    }

    fn is_decomposable(&self) -> bool {
        self.layers.iter().all(|l| match l.kind {
            LayerKind::Hadamard | LayerKind::Kronecker => {
                let scopes: Vec<&Scope> = l.inputs.iter().map(|&i| &self.layers[i].scope).collect();
                let disjoint = (0..scopes.len())
                    .all(|a| (a + 1..scopes.len()).all(|b| scopes[a].is_disjoint(scopes[b])));
                disjoint && Scope::union(scopes.iter().copied()) == l.scope
            }
            _ => true,
        })
    }

    /// Decomposable, and every pair of product layers with the same scope
    /// splits it into the same set of child scopes.
    fn is_structured_decomposable(&self) -> bool {
        if !self.is_decomposable() {
            return false;
        }
        let mut seen: HashMap<&Scope, Vec<&Scope>> = HashMap::new();
        for l in &self.layers {
            if !matches!(l.kind, LayerKind::Hadamard | LayerKind::Kronecker) {
                continue;
            }
            let mut split: Vec<&Scope> = l.inputs.iter().map(|&i| &self.layers[i].scope).collect();
            split.sort_by(|a, b| a.vars().cmp(b.vars()));
            match seen.get(&l.scope) {
                Some(prev) if *prev != split => return false,
                Some(_) => {}
                None => {
                    seen.insert(&l.scope, split);
                }
            }
        }
        true
    }

    fn is_monotonic(&self) -> bool {
        let eff = self.params.effective();
        self.layers.iter().enumerate().all(|(id, l)| {
            let p = &eff[self.param_range(id)];
            match &l.kind {
                LayerKind::Sum => p.iter().all(|&w| w >= 0.0),
                LayerKind::Input { family, .. } => family.is_nonnegative(p, l.width),
                _ => true,
            }
        })
    }

    /// Exhaustive check over all assignments: for every sum unit and every
    /// assignment, at most one input with non-zero weight is non-zero.
    fn is_deterministic(&self) -> Result<bool> {
        let states = self.discrete_states()?;
        let total: u128 = states.iter().map(|&m| m as u128).product();
        if self.variable_count > 16 {
            return Err(Error::UnsupportedOperation(
                "determinism check is limited to 16 variables".into(),
            ));
        }
        let eff = self.params.effective();
        let mut x = vec![0usize; self.variable_count];
        for _ in 0..total {
            let point: Vec<f64> = x.iter().map(|&v| v as f64).collect();
            let values = self.layer_values_linear_with(&eff, &point)?;
            for (id, l) in self.layers.iter().enumerate() {
                if l.kind != LayerKind::Sum {
                    continue;
                }
                let input = &values[l.inputs[0]];
                let w = &eff[self.param_range(id)];
                for row in w.chunks(input.len()) {
                    let active = row.iter().zip(input).filter(|(w, v)| **w != 0.0 && **v != 0.0).count();
                    if active > 1 {
                        return Ok(false);
                    }
                }
            }
            next_assignment(&mut x, &states);
        }
        Ok(true)
    }

    /// State counts of every variable; fails on continuous inputs.
    pub fn discrete_states(&self) -> Result<Vec<usize>> {
        (0..self.variable_count)
            .map(|v| {
                self.family_of(v)
                    .and_then(|f| f.states())
                    .ok_or_else(|| Error::UnsupportedOperation(format!("variable {v} is not finite-discrete")))
            })
            .collect()
    }

    /// Every layer's output in plain float-64 arithmetic.
    pub fn layer_values_linear(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.layer_values_linear_with(&self.params.effective(), x)
    }

    fn layer_values_linear_with(&self, eff: &[f64], x: &[f64]) -> Result<Vec<Vec<f64>>> {
        if x.len() != self.variable_count {
            return Err(Error::InvalidArgument(format!(
                "expected {} values, got {}",
                self.variable_count,
                x.len()
            )));
        }
        let mut out: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (id, l) in self.layers.iter().enumerate() {
            let p = &eff[self.param_range(id)];
            let v = match &l.kind {
                LayerKind::Input { variable, family } => {
                    family.evaluate(p, l.width, *variable, x[*variable])?.to_linear()
                }
                LayerKind::Sum => {
                    let input = &out[l.inputs[0]];
                    p.chunks(input.len())
                        .map(|row| row.iter().zip(input).map(|(a, b)| a * b).sum())
                        .collect()
                }
                LayerKind::Hadamard => {
                    let mut acc = vec![1.0; l.width];
                    for &i in &l.inputs {
                        acc.iter_mut().zip(&out[i]).for_each(|(a, b)| *a *= b);
                    }
                    acc
                }
                LayerKind::Kronecker => {
                    let mut acc = vec![1.0];
                    for &i in &l.inputs {
                        acc = acc.iter().flat_map(|a| out[i].iter().map(move |b| a * b)).collect();
                    }
                    acc
                }
            };
            out.push(v);
        }
        Ok(out)
    }

    /// `c(x)` in plain float-64 arithmetic.
    pub fn evaluate_linear(&self, x: &[f64]) -> Result<f64> {
        let values = self.layer_values_linear(x)?;
        Ok(values[self.output][0])
    }

    /// Partition-function evaluations performed on this circuit.
    pub fn z_evaluations(&self) -> u64 {
        self.partition.count()
    }
}

/// Advance a mixed-radix counter (first variable fastest).
pub(crate) fn next_assignment(x: &mut [usize], states: &[usize]) {
    for (v, m) in x.iter_mut().zip(states) {
        *v += 1;
        if *v < *m {
            return;
        }
        *v = 0;
    }
}

#[allow(clippy::too_many_arguments)]
fn build_region(
    b: &mut CircuitBuilder,
    rg: &RegionGraph,
    region: NodeId,
    width: usize,
    product: ProductKind,
    families: &[InputFamily],
    monotonic: bool,
    sum_reparam: Reparam,
) -> Result<LayerId> {
    let RgNode::Region { scope, children } = rg.node(region) else {
        return Err(Error::InvalidArgument(format!("node {region} is not a region")));
    };
    let Some(&partition) = children.first() else {
        let [variable] = scope.vars() else {
            return Err(Error::UnsupportedStructure(
                "leaf regions must hold a single variable".into(),
            ));
        };
        return b.input(*variable, families[*variable].clone(), width, monotonic);
    };
    let mut inputs = Vec::new();
    for &child in rg.node(partition).children() {
        inputs.push(build_region(b, rg, child, width, product, families, monotonic, sum_reparam)?);
    }
    let prod = b.product(product, inputs)?;
    let out_width = if region == rg.root() { 1 } else { width };
    b.sum(prod, out_width, sum_reparam)
}
