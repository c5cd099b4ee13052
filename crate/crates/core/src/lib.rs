//! Differentiable two-agent tactile MPC for bi-manual grasping.

pub mod bench;
pub mod error;
pub mod lifting;
pub mod mpc;
pub mod qp;
pub mod sim;
pub mod tactile;
pub mod train;

pub use error::{Error, Result};
