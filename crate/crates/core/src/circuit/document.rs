use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Layer, LayerId, ParamBlock, ParameterStore, TensorizedCircuit};
use crate::error::{Error, Result};
use crate::region_graph::RegionGraph;

pub const FORMAT_VERSION: u32 = 1;

/// Serialized model. Values are written as shortest round-trip decimals, so
/// reading a document back reproduces every float-64 bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub format_version: u32,
    pub variable_count: usize,
    pub region_graph: Option<RegionGraph>,
    pub layers: Vec<Layer>,
    pub output: LayerId,
    pub parameter_blocks: Vec<ParamBlock>,
    pub values: Vec<f64>,
    /// The model is the square of the stored circuit.
    #[serde(default)]
    pub squared: bool,
    /// Fixed weights over the squared output, row-major `S x S`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<Vec<f64>>,
}

impl ModelDocument {
    pub fn from_circuit(c: &TensorizedCircuit) -> Self {
        ModelDocument {
            format_version: FORMAT_VERSION,
            variable_count: c.variable_count(),
            region_graph: c.region_graph().cloned(),
            layers: c.layers().to_vec(),
            output: c.output(),
            parameter_blocks: c.params.blocks().to_vec(),
            values: c.params.values().to_vec(),
            squared: false,
            head: None,
        }
    }

    pub fn to_circuit(&self) -> Result<TensorizedCircuit> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Serialization(format!(
                "unsupported format version {}",
                self.format_version
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Serialization("non-finite parameter value".into()));
        }
        let params = ParameterStore::from_parts(self.parameter_blocks.clone(), self.values.clone())?;
        TensorizedCircuit::from_parts(
            self.variable_count,
            self.layers.clone(),
            self.output,
            self.region_graph.clone(),
            params,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
