//! Energy-based Riemannian metrics and geodesic solvers on low-dimensional data.
//!
//! The crate is `no_std` (with `alloc`). File formats, configuration and the
//! command line live in the companion `ebmgeo` crate.

#![no_std]

extern crate alloc;

pub mod autodiff;
pub mod density;
pub mod ebm;
pub mod error;
pub mod eval;
pub mod geodesic;
pub mod metric;
pub mod nets;
pub mod optim;
pub mod stats;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
