//! Multi-scale anisotropic fourth-order diffusion for enhancing ridges and
//! valleys in 2D images, with baseline filters, sub-pixel crease extraction,
//! synthetic test data and centerline accuracy metrics.

pub mod baselines;
pub mod crease;
pub mod error;
pub mod evaluate;
pub mod experiment;
pub mod grid;
pub mod io;
pub mod scale_select;
pub mod solver;
pub mod synthgen;
pub mod tensor;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use grid::{GradientField, HessianField, ScalarField2D, Sym2};
