//! Finite-difference discretization of the forward Kolmogorov generator on a
//! tensor-product grid, assembled directly as QTT matrices.
//!
//! Grid indices run `0..N` on every axis with `x(l) = -a + l h`, `h = 2a/(N-1)`.
//! A grid function is a dense array with axis 0 varying fastest; its QTT form
//! has `d L` binary modes, axis by axis, least significant bit first.

mod assemble;
mod model;
mod stability;

pub use assemble::{
    assemble_convection, assemble_generator, assemble_laplace, assemble_potential,
    assemble_step_unrounded,
    central_difference_1d, coordinate_tensor, laplace_1d, sample_dense, sample_field,
    separable_tensor, GeneratorOperator,
};
pub use model::{AxisFn, Field, ModelSpec, ObservationField, Preset};
pub use stability::{check_stability, StabilityReport};

use crate::error::{Error, Result};
use crate::tt::TensorShape;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

/// Largest supported `L` (points per axis `2^L`).
pub const MAX_LEVELS: u32 = 20;

/// Uniform tensor grid on `[-a, a]^d` with `2^L` points per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    half_width: f64,
    dim: usize,
    levels: u32,
}

impl Grid {
    pub fn new(half_width: f64, dim: usize, levels: u32) -> Result<Self> {
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::InvalidModel(format!("half width {half_width} must be positive")));
        }
        if dim == 0 {
            return Err(Error::InvalidModel("grid dimension must be at least 1".into()));
        }
        if levels == 0 || levels > MAX_LEVELS {
            return Err(Error::InvalidModel(format!("grid level {levels} outside 1..={MAX_LEVELS}")));
        }
        (1usize << levels)
            .checked_pow(dim as u32)
            .ok_or(Error::SizeLimit { size: usize::MAX, limit: usize::MAX })?;
        Ok(Self { half_width, dim, levels })
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    /// Points per axis.
    pub fn points(&self) -> usize {
        1 << self.levels
    }

    /// Total number of nodes, `N^d`.
    pub fn nodes(&self) -> usize {
        self.points().pow(self.dim as u32)
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.points() - 1) as f64
    }

    /// Coordinate of node `l` along any axis. The last node is exactly `a`.
    pub fn coord(&self, l: usize) -> f64 {
        if l + 1 == self.points() {
            return self.half_width;
        }
        -self.half_width + l as f64 * self.spacing()
    }

    pub fn axis_coords(&self) -> Vec<f64> {
        (0..self.points()).map(|l| self.coord(l)).collect()
    }

    /// `d` modes of size `N`.
    pub fn shape(&self) -> TensorShape {
        TensorShape::uniform(self.dim, self.points()).expect("validated grid")
    }

    /// `d L` binary modes.
    pub fn qtt_shape(&self) -> TensorShape {
        TensorShape::new(vec![2; self.dim * self.levels as usize]).expect("validated grid")
    }

    /// Binary shape of a single axis.
    pub fn axis_qtt_shape(&self) -> TensorShape {
        TensorShape::new(vec![2; self.levels as usize]).expect("validated grid")
    }

    /// Calls `f(linear, x)` for every node in dense order.
    pub fn for_each_node<F: FnMut(usize, &[f64])>(&self, mut f: F) {
        let n = self.points();
        let coords = self.axis_coords();
        let mut idx = vec![0usize; self.dim];
        let mut x: Vec<f64> = vec![coords[0]; self.dim];
        for linear in 0..self.nodes() {
            f(linear, &x);
            for k in 0..self.dim {
                idx[k] += 1;
                if idx[k] < n {
                    x[k] = coords[idx[k]];
                    break;
                }
                idx[k] = 0;
                x[k] = coords[0];
            }
        }
    }
}
