//! Computational periodic homogenization in two dimensions: corrector cell
//! problems, effective tensors, corrected coordinates, cell-scale transport,
//! homogenized vorticity dynamics and finite-ε reference runs.

pub mod cellsolve;
pub mod efftensor;
pub mod epsbench;
pub mod error;
pub mod grid;
pub mod harmcoord;
pub mod harness;
pub mod interp;
pub mod macroflow;
pub mod microflow;
pub mod microgeom;
pub mod pcg;
pub mod spectral;

pub use error::{Error, Result};
pub use grid::{Grid, ScalarField, VectorField};
