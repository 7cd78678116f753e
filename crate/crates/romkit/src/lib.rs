//! Reduced-order-modeling toolkit.
//!
//! The crate follows the usual offline/online split: built-in full-order
//! solvers ([`fom`]) generate parametric snapshot databases ([`dataset`]),
//! reduced models are trained offline (intrusive Galerkin projection in
//! [`galerkin`]; non-intrusive DMD, RBF, GPR and neural surrogates in
//! [`dmd`], [`kernel`] and [`neural`] on top of [`reduction`]), and the
//! [`pipeline`] module evaluates them online and reports relative errors
//! and speedups.
//!
//! Geometry parametrization lives in [`ffd`]; dense linear-algebra kernels
//! shared by everything are in [`numerics`].

pub mod dataset;
pub mod dmd;
pub mod error;
pub mod ffd;
pub mod fom;
pub mod galerkin;
pub mod kernel;
pub mod neural;
pub mod numerics;
pub mod pipeline;
pub mod reduction;
pub mod sparse;

pub use error::{Result, RomError};
pub use numerics::Matrix;
