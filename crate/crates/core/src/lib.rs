//! Deep networks as finite-difference approximations of k-th order
//! dynamical systems.
//!
//! Residual-style `C^k` blocks and additive dense blocks are implemented both
//! as direct multi-lag recurrences and as first-order state-space systems on
//! the stacked backward differences `q = [q_1; ...; q_k]`, together with the
//! training loop and the experiments that probe them.

pub mod arch;
pub mod autodiff;
pub mod data;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod report;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, IdxError, Result};
