//! Dense explicit finite differences on the full grid.
//!
//! One step is `u <- u + τ A u` with the same generator the QTT pipeline
//! compresses: `(q/2) Δu - Σ_k ∂_k(f_k u) - ½ (hᵀS⁻¹h) u`, central differences
//! in conservative form and zero values outside the grid.

use crate::error::{Error, Result};
use crate::fd::{sample_dense, Grid, ModelSpec};
use crate::filter::{Clock, ObservationSeries, PosteriorEstimate};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use libm::{exp, log};

/// Growth of the l1 norm over one observation interval that is treated as a
/// blow-up of the explicit scheme.
pub const BLOW_UP_FACTOR: f64 = 1e6;

/// Stencil coefficients of `I + τA`, stored per node.
#[derive(Debug, Clone)]
pub struct DensePropagator {
    grid: Grid,
    tau: f64,
    centre: Vec<f64>,
    /// `from_above[k][l]`: weight of `u[l]` in the update of its lower
    /// neighbour along axis `k`; `from_below[k][l]` likewise for the upper one.
    from_above: Vec<Vec<f64>>,
    from_below: Vec<Vec<f64>>,
}

impl DensePropagator {
    pub fn new(grid: &Grid, model: &ModelSpec, tau: f64) -> Result<Self> {
        model.validate()?;
        if model.dim != grid.dim() {
            return Err(Error::InvalidModel(format!(
                "{}-dimensional model on a {}-dimensional grid",
                model.dim,
                grid.dim()
            )));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidModel("time step must be positive".into()));
        }
        let h = grid.spacing();
        let d = grid.dim();
        let q = model.diffusion;
        let alpha = tau * q / (2.0 * h * h);
        let potential = sample_dense(grid, &|x: &[f64]| model.potential(x))?;
        let centre = potential
            .iter()
            .map(|v| 1.0 - tau * (q * d as f64 / (h * h) + 0.5 * v))
            .collect();
        let mut from_above = Vec::with_capacity(d);
        let mut from_below = Vec::with_capacity(d);
        for f in &model.drift {
            let g = sample_dense(grid, f.as_ref())?;
            let c = tau / (2.0 * h);
            from_above.push(g.iter().map(|v| alpha - c * v).collect());
            from_below.push(g.iter().map(|v| alpha + c * v).collect());
        }
        Ok(Self { grid: *grid, tau, centre, from_above, from_below })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// `out = (I + τA) u`.
    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        let n = self.grid.points();
        assert_eq!(u.len(), self.centre.len(), "state must live on the grid");
        assert_eq!(out.len(), u.len(), "output must live on the grid");
        for ((o, c), v) in out.iter_mut().zip(&self.centre).zip(u) {
            *o = c * v;
        }
        let mut stride = 1;
        for k in 0..self.grid.dim() {
            let block = stride * n;
            let up = &self.from_above[k];
            let down = &self.from_below[k];
            for start in (0..u.len()).step_by(block) {
                // neighbours inside this block along axis k sit `stride` apart
                let lo = start..start + block - stride;
                let hi = start + stride..start + block;
                for (i, j) in lo.clone().zip(hi.clone()) {
                    out[i] += up[j] * u[j];
                    out[j] += down[i] * u[i];
                }
            }
            stride = block;
        }
    }

    /// `steps` applications of `I + τA`.
    pub fn propagate(&self, u: &mut Vec<f64>, steps: usize) {
        let mut scratch = vec![0.0; u.len()];
        for _ in 0..steps {
            self.apply(u, &mut scratch);
            core::mem::swap(u, &mut scratch);
        }
    }
}

/// One explicit Euler step.
pub fn dense_fd_step(state: &[f64], prop: &DensePropagator) -> Vec<f64> {
    let mut out = vec![0.0; state.len()];
    prop.apply(state, &mut out);
    out
}

/// Per-interval diagnostics of [`dense_fd_filter`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DenseStep {
    pub step: usize,
    pub t_fke_seconds: f64,
    pub t_exp_seconds: f64,
}

/// Assimilate-propagate-estimate loop with dense arrays, mirroring the
/// compressed online stage step for step.
pub fn dense_fd_filter(
    model: &ModelSpec,
    grid: &Grid,
    observations: &ObservationSeries,
    steps: usize,
    clock: &dyn Clock,
    on_step: &mut dyn FnMut(&DenseStep),
) -> Result<Vec<PosteriorEstimate>> {
    if steps == 0 {
        return Err(Error::InvalidModel("need at least one time step per interval".into()));
    }
    if observations.obs_dim() != model.obs_dim() {
        return Err(Error::InvalidObservations(format!(
            "observations have {} components, model expects {}",
            observations.obs_dim(),
            model.obs_dim()
        )));
    }
    let prop = DensePropagator::new(grid, model, observations.dt() / steps as f64)?;
    let h: Vec<Vec<f64>> = model
        .observation
        .iter()
        .map(|o| sample_dense(grid, o.field.as_ref()))
        .collect::<Result<_>>()?;
    let coords: Vec<Vec<f64>> = (0..grid.dim())
        .map(|k| sample_dense(grid, &|x: &[f64]| x[k]))
        .collect::<Result<_>>()?;
    let times = observations.times();
    let ys = observations.values();
    let mut u = sample_dense(grid, model.initial_density.as_ref())?;
    let mut log_mass = 0.0;
    let mut out = Vec::with_capacity(observations.intervals());
    for j in 0..observations.intervals() {
        let start = clock.now();
        if j > 0 {
            let s = model.obs_noise;
            let mut e = vec![0.0; u.len()];
            for (i, hi) in h.iter().enumerate() {
                let c = (ys[j][i] - ys[j - 1][i]) / s;
                for (v, hv) in e.iter_mut().zip(hi) {
                    *v += c * hv;
                }
            }
            let shift = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for (v, ev) in u.iter_mut().zip(&e) {
                *v *= exp((ev - shift).max(-crate::filter::EXPONENT_CLAMP));
            }
            log_mass += shift;
        }
        let mid = clock.now();
        let before: f64 = u.iter().map(|v| v.abs()).sum();
        prop.propagate(&mut u, steps);
        let end = clock.now();
        // an unstable explicit step grows an alternating mode whose signed
        // sum stays small, so growth is measured in the l1 norm, both over
        // this interval and against the signed mass
        let size: f64 = u.iter().map(|v| v.abs()).sum();
        let mass: f64 = u.iter().sum();
        if !size.is_finite() || size > BLOW_UP_FACTOR * before || size > BLOW_UP_FACTOR * mass.abs() {
            return Err(Error::Unstable(format!(
                "dense solution grew from {before:e} to {size:e} (signed mass {mass:e}) over interval {}",
                j + 1
            )));
        }
        if !(mass > 0.0) {
            return Err(Error::ZeroMass);
        }
        for v in u.iter_mut() {
            *v /= mass;
        }
        log_mass += log(mass);
        let mean = coords
            .iter()
            .map(|c| c.iter().zip(&u).map(|(x, v)| x * v).sum())
            .collect();
        on_step(&DenseStep { step: j + 1, t_fke_seconds: end - mid, t_exp_seconds: mid - start });
        out.push(PosteriorEstimate { step: j + 1, time: times[j + 1], mean, mass, log_mass });
    }
    Ok(out)
}
