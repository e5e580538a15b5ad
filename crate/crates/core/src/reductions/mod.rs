//! Constructive translations of other model classes into circuits.

pub mod cp;
pub mod linalg;
pub mod mps;
pub mod psd;
pub mod udisj;

pub use cp::{cp_als, cp_decompose, CpConfig, CpDecomposition};
pub use mps::{mps_to_circuit, MpsFactorization, MpsReduction};
pub use psd::{psd_to_circuit, PsdModel};
pub use udisj::{communication_matrix, udisj_circuit, CommunicationMatrix, Graph};
