//! Tensor-train filtering for continuous-time nonlinear filtering problems.
//!
//! The unnormalized conditional density is propagated between observations
//! by a compressed finite-difference propagator and reweighted by an
//! exponential observation factor at each observation time. Everything here
//! is `no_std` + `alloc`; file formats and the command line live in the
//! `qttfilter` crate.

#![no_std]

extern crate alloc;
#[cfg(any(feature = "std", test))]
extern crate std;

mod error;
mod linalg;

pub mod baselines;
pub mod fd;
pub mod filter;
pub mod tt;

pub use error::{Error, Result};
pub use tt::{RoundingPolicy, TensorShape, TtMatrix, TtTensor};
