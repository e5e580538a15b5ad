//! Declarative model descriptions built against a dataset.

use std::str::FromStr;

use crate::circuit::{ProductKind, TensorizedCircuit};
use crate::data::{ColumnKind, Dataset};
use crate::error::{Error, Result};
use crate::inference::Model;
use crate::input::{InputFamily, SplineBasis};
use crate::learning::{init_parameters, InitScheme};
use crate::region_graph::RegionGraph;
use crate::squaring::square;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// A monotonic circuit used directly.
    Monotonic,
    /// The square of a circuit with real weights.
    Squared,
    /// The square of a monotonic circuit.
    SquaredMonotonic,
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "monotonic" => Ok(ModelKind::Monotonic),
            "squared" | "squared-nonmonotonic" => Ok(ModelKind::Squared),
            "squared-monotonic" => Ok(ModelKind::SquaredMonotonic),
            other => Err(Error::InvalidArgument(format!("unknown model kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionGraphKind {
    Linear,
    Binary,
}

impl FromStr for RegionGraphKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(RegionGraphKind::Linear),
            "binary" => Ok(RegionGraphKind::Binary),
            other => Err(Error::InvalidArgument(format!("unknown region graph '{other}'"))),
        }
    }
}

/// Input family for continuous columns; discrete columns always use
/// categorical inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContinuousFamily {
    Gaussian,
    Spline { order: usize, knots: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub region_graph: RegionGraphKind,
    pub width: usize,
    pub product: ProductKind,
    pub family: ContinuousFamily,
    /// Spline domains are the column range widened by this fraction.
    pub domain_padding: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Squared,
            region_graph: RegionGraphKind::Binary,
            width: 8,
            product: ProductKind::Hadamard,
            family: ContinuousFamily::Gaussian,
            domain_padding: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn families(&self, data: &Dataset) -> Result<Vec<InputFamily>> {
        (0..data.column_count())
            .map(|c| match (data.columns[c].kind, self.family) {
                (ColumnKind::Discrete { states }, _) => Ok(InputFamily::Categorical { states }),
                (ColumnKind::Continuous, ContinuousFamily::Gaussian) => Ok(InputFamily::Gaussian),
                (ColumnKind::Continuous, ContinuousFamily::Spline { order, knots }) => {
                    let (lo, hi) = data.padded_range(c, self.domain_padding);
                    Ok(InputFamily::Spline(SplineBasis::new(order, knots, lo, hi)?))
                }
            })
            .collect()
    }

    /// Circuit over the dataset's columns with parameters drawn from `init`.
    pub fn build_circuit(&self, data: &Dataset, init: InitScheme, seed: u64) -> Result<TensorizedCircuit> {
        let d = data.column_count();
        let rg = match self.region_graph {
            RegionGraphKind::Linear => RegionGraph::linear_tree(d, seed)?,
            RegionGraphKind::Binary => RegionGraph::binary_tree(d, seed)?,
        };
        let monotonic = self.kind != ModelKind::Squared;
        let mut c = TensorizedCircuit::from_region_graph(&rg, self.width, self.product, &self.families(data)?, monotonic)?;
        init_parameters(&mut c, init, seed)?;
        Ok(c)
    }

    pub fn build(&self, data: &Dataset, init: InitScheme, seed: u64) -> Result<Model> {
        let c = self.build_circuit(data, init, seed)?;
        Ok(match self.kind {
            ModelKind::Monotonic => Model::Plain(c),
            ModelKind::Squared | ModelKind::SquaredMonotonic => Model::Squared(square(c)?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, Synthetic};

    #[test]
    fn builds_each_kind() {
        let data = generate_synthetic(Synthetic::Rings, 50, 10, 10, 0, None).unwrap();
        for kind in [ModelKind::Monotonic, ModelKind::Squared, ModelKind::SquaredMonotonic] {
            let cfg = ModelConfig {
                kind,
                family: ContinuousFamily::Spline { order: 2, knots: 8 },
                ..Default::default()
            };
            let m = cfg.build(&data, InitScheme::Normal { mean: 0.0, std: 1.0 }, 1).unwrap();
            assert_eq!(m.is_squared(), kind != ModelKind::Monotonic);
            assert_eq!(m.is_monotonic().unwrap(), kind != ModelKind::Squared);
            assert!(m.log_partition().unwrap().is_finite());
        }
        let disc = generate_synthetic(Synthetic::Rings, 50, 10, 10, 0, Some(4)).unwrap();
        let m = ModelConfig::default().build(&disc, InitScheme::Normal { mean: 0.0, std: 1.0 }, 2).unwrap();
        assert!(m.circuit().is_discrete());
    }
}
