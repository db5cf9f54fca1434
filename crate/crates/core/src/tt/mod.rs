//! Tensor-train (TT) and quantized tensor-train (QTT) representations.
//!
//! A tensor `U` of shape `n_1 x ... x n_d` is stored as cores `G_k` of shape
//! `r_{k-1} x n_k x r_k` with `r_0 = r_d = 1`, so that
//! `U(i_1, ..., i_d) = G_1(i_1) G_2(i_2) ... G_d(i_d)`.
//!
//! Dense data is always laid out with the *first* index varying fastest. With
//! that convention quantization is a pure reshape: a mode of size `2^L` splits
//! into `L` binary modes, least significant bit first.

mod dump;
mod matrix;
mod product;
mod quantize;
mod rank;
mod tensor;

pub use matrix::TtMatrix;
pub use product::{hadamard_truncated, matmul_truncated, matvec_truncated};
pub use quantize::{quantize_matrix, quantize_tensor, unquantize_matrix, unquantize_tensor};
pub use rank::effective_rank_of;
pub use tensor::{Core, RoundReport, TtTensor};

use crate::error::{Error, Result};
use alloc::format;
use alloc::vec::Vec;

/// Default cap on the number of entries `to_full` will materialize.
pub const DEFAULT_MATERIALIZE_LIMIT: usize = 1 << 26;

/// Norms below this are treated as the zero tensor by rounding.
pub const ZERO_NORM: f64 = 1e-300;

/// Ordered mode sizes of a tensor.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TensorShape(Vec<usize>);

impl TensorShape {
    pub fn new(modes: Vec<usize>) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::InvalidShape("tensor needs at least one mode".into()));
        }
        if let Some(k) = modes.iter().position(|&n| n == 0) {
            return Err(Error::InvalidShape(format!("mode {k} has size 0")));
        }
        modes
            .iter()
            .try_fold(1usize, |acc, &n| acc.checked_mul(n))
            .ok_or_else(|| Error::InvalidShape("total size overflows usize".into()))?;
        Ok(Self(modes))
    }

    /// `d` modes of equal size `n`.
    pub fn uniform(d: usize, n: usize) -> Result<Self> {
        Self::new(alloc::vec![n; d])
    }

    pub fn modes(&self) -> &[usize] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn size(&self) -> usize {
        self.0.iter().product()
    }

    /// Column-major (first index fastest) linear offset of a multi-index.
    pub fn linear_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.0.len());
        idx.iter()
            .zip(&self.0)
            .rev()
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    /// Inverse of [`linear_index`](Self::linear_index).
    pub fn multi_index(&self, mut linear: usize, out: &mut [usize]) {
        for (slot, &n) in out.iter_mut().zip(&self.0) {
            *slot = linear % n;
            linear /= n;
        }
    }
}

/// Relative accuracy target for TT truncation, with an optional hard rank cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundingPolicy {
    pub epsilon: f64,
    pub max_rank: Option<usize>,
}

impl RoundingPolicy {
    pub fn new(epsilon: f64, max_rank: Option<usize>) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidPolicy("epsilon must be positive and finite"));
        }
        if max_rank == Some(0) {
            return Err(Error::InvalidPolicy("max_rank must be at least 1"));
        }
        Ok(Self { epsilon, max_rank })
    }

    pub fn eps(epsilon: f64) -> Result<Self> {
        Self::new(epsilon, None)
    }

    /// Same cap, different tolerance.
    pub fn with_epsilon(self, epsilon: f64) -> Self {
        Self { epsilon, ..self }
    }
}

fn check_same(a: &TensorShape, b: &TensorShape) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch {
            left: a.modes().to_vec(),
            right: b.modes().to_vec(),
        });
    }
    Ok(())
}
