//! Finite-element hyper-elastodynamics with a VMS-stabilized mixed
//! displacement/pressure/velocity formulation, generalized-α time stepping and
//! nested block-preconditioned Krylov solvers.

pub mod assembly;
pub mod driver;
pub mod dual;
pub mod error;
pub mod krylov;
pub mod materials;
pub mod mesh;
pub mod precond;
pub mod tensor;
pub mod timeint;
pub mod vtk;

pub use error::{Error, Result};
