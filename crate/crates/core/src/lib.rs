//! Squared non-monotonic probabilistic circuits.
//!
//! Circuits are built from tree region graphs, squared layer by layer, and
//! evaluated in signed log-space so that negative weights, exact
//! cancellations and very large or small values stay representable.

pub mod circuit;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod inference;
pub mod input;
pub mod learning;
pub mod par;
pub mod quadrature;
pub mod reductions;
pub mod region_graph;
pub mod signed;
pub mod squaring;

pub use circuit::{ModelDocument, ProductKind, Property, TensorizedCircuit};
pub use error::{Error, Result};
pub use inference::Model;
pub use region_graph::RegionGraph;
pub use squaring::{square, SquaredCircuit};
