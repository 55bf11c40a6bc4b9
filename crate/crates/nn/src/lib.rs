//! Minimal differentiable operator set for 4-D activation grids.
//!
//! Every operator has a functional forward/backward pair in [`ops`] and is
//! also reachable through the reverse-mode [`Graph`], which records the fixed
//! operator set used by the timbre-transfer network. [`Adam`] and
//! [`lr_schedule`] cover optimisation.

mod adam;
mod error;
pub mod gradcheck;
mod graph;
pub mod init;
pub mod ops;
mod params;
mod scalar;
mod schedule;
mod tensor;

pub use adam::{Adam, AdamConfig, AdamSlot};
pub use error::NnError;
pub use graph::{Gradients, Graph, Var};
pub use params::{Param, ParamId, ParamStore};
pub use scalar::Scalar;
pub use schedule::lr_schedule;
pub use tensor::{Shape4, Tensor4};

pub type Result<T, E = NnError> = std::result::Result<T, E>;
