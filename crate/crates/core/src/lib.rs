//! Spin relaxation driven by geodesic rotation of a spin-orbit lag tensor.

// `!(x > 0.0)` style checks are there to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod gamma;
pub mod propagator;
pub mod quadrature;
pub mod stochastic;
pub mod su2;

pub use error::{Error, Result};
pub use gamma::GammaTensor;
pub use su2::{Polarization, Rotor};
