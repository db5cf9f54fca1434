//! Euler–Maruyama sample paths of the signal and its observation.

use crate::error::{Error, Result};
use crate::fd::ModelSpec;
use crate::filter::ObservationSeries;
use alloc::vec;
use alloc::vec::Vec;
use libm::{fabs, round, sqrt};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::StandardNormal;

/// Stream ids that keep the random numbers of different consumers apart
/// when they share a seed.
pub(crate) const TRUTH_STREAM: u64 = 0;
pub(crate) const PARTICLE_STREAM: u64 = 1;

pub(crate) fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// States and observations at `t_i = i dt`, `i = 0..=n`, with `Y(0) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthPath {
    pub dt: f64,
    pub seed: u64,
    pub states: Vec<Vec<f64>>,
    pub observations: Vec<Vec<f64>>,
}

impl TruthPath {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    /// Fine steps per observation interval, if `dt_obs` is a multiple of `dt`.
    pub fn stride(&self, dt_obs: f64) -> Result<usize> {
        let k = round(dt_obs / self.dt);
        if k < 1.0 || fabs(k * self.dt - dt_obs) > 1e-9 * dt_obs {
            return Err(Error::InvalidObservations(alloc::format!(
                "observation interval {dt_obs} is not a multiple of the fine step {}",
                self.dt
            )));
        }
        Ok(k as usize)
    }

    /// Observations subsampled every `dt_obs`.
    pub fn observation_series(&self, dt_obs: f64) -> Result<ObservationSeries> {
        let k = self.stride(dt_obs)?;
        let values: Vec<Vec<f64>> = self.observations.iter().step_by(k).cloned().collect();
        ObservationSeries::uniform(0.0, k as f64 * self.dt, values)
    }

    /// True states at the observation times `dt_obs, 2 dt_obs, ...`.
    pub fn states_at(&self, dt_obs: f64) -> Result<Vec<Vec<f64>>> {
        let k = self.stride(dt_obs)?;
        Ok(self.states.iter().step_by(k).skip(1).cloned().collect())
    }
}

/// `X_{i+1} = X_i + f(X_i) dt + sqrt(q dt) ξ`, `Y_{i+1} = Y_i + h(X_i) dt + sqrt(s dt) η`.
pub fn simulate_truth(model: &ModelSpec, horizon: f64, dt: f64, seed: u64) -> Result<TruthPath> {
    model.validate()?;
    if !(dt > 0.0 && horizon >= dt) {
        return Err(Error::InvalidModel("need 0 < dt <= horizon".into()));
    }
    let n = round(horizon / dt) as usize;
    let mut r = rng(seed, TRUTH_STREAM);
    let (d, m) = (model.dim, model.obs_dim());
    let sq = sqrt(model.diffusion * dt);
    let so = sqrt(model.obs_noise * dt);
    let mut x = model.initial_state.clone();
    let mut y = vec![0.0; m];
    let mut f = vec![0.0; d];
    let mut h = vec![0.0; m];
    let mut states = Vec::with_capacity(n + 1);
    let mut observations = Vec::with_capacity(n + 1);
    states.push(x.clone());
    observations.push(y.clone());
    for _ in 0..n {
        model.eval_drift(&x, &mut f);
        model.eval_observation(&x, &mut h);
        for (xi, fi) in x.iter_mut().zip(&f) {
            let xi_noise: f64 = r.sample(StandardNormal);
            *xi += fi * dt + sq * xi_noise;
        }
        for (yi, hi) in y.iter_mut().zip(&h) {
            let eta: f64 = r.sample(StandardNormal);
            *yi += hi * dt + so * eta;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("simulated state"));
        }
        states.push(x.clone());
        observations.push(y.clone());
    }
    Ok(TruthPath { dt, seed, states, observations })
}
