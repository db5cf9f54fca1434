//! Exact filter for the scalar linear-Gaussian model under the same
//! Euler–Maruyama discretization the particle filter uses.
//!
//! Over one observation interval the pair `(x, H)` with `H = Σ c x dt` is
//! jointly Gaussian. The increment `Δy = H + sqrt(s ΔT) η` is then a linear
//! observation of that pair.

use crate::error::{Error, Result};
use crate::filter::ObservationSeries;
use alloc::vec::Vec;
use libm::{fabs, round};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearGaussian {
    /// `dx = -decay x dt + sqrt(q) dv`.
    pub decay: f64,
    /// `dy = gain x dt + sqrt(s) dw`.
    pub gain: f64,
    pub q: f64,
    pub s: f64,
    pub prior_mean: f64,
    pub prior_var: f64,
}

/// Filtered `(mean, variance)` at `t_1, ..., t_{N_t}`.
pub fn kalman_filter(model: &LinearGaussian, observations: &ObservationSeries, dt: f64) -> Result<Vec<(f64, f64)>> {
    if observations.obs_dim() != 1 {
        return Err(Error::InvalidObservations("scalar observations expected".into()));
    }
    let dt_obs = observations.dt();
    let sub = round(dt_obs / dt);
    if sub < 1.0 || fabs(sub * dt - dt_obs) > 1e-9 * dt_obs {
        return Err(Error::InvalidObservations("step must divide the observation interval".into()));
    }
    let a = 1.0 - model.decay * dt;
    let b = model.gain * dt;
    let (mut m, mut p) = (model.prior_mean, model.prior_var);
    let ys = observations.values();
    let mut out = Vec::with_capacity(observations.intervals());
    for j in 1..=observations.intervals() {
        // mean (mx, mh) and covariance [[pxx, pxh], [pxh, phh]] of (x, H)
        let (mut mx, mut mh) = (m, 0.0);
        let (mut pxx, mut pxh, mut phh) = (p, 0.0, 0.0);
        for _ in 0..sub as usize {
            mh += b * mx;
            phh += 2.0 * b * pxh + b * b * pxx;
            pxh = a * (pxh + b * pxx);
            mx *= a;
            pxx = a * a * pxx + model.q * dt;
        }
        let innovation = ys[j][0] - ys[j - 1][0] - mh;
        let total = phh + model.s * dt_obs;
        let k = pxh / total;
        m = mx + k * innovation;
        p = pxx - k * pxh;
        out.push((m, p));
    }
    Ok(out)
}
