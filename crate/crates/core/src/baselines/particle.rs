//! Bootstrap particle filter.
//!
//! Particles follow the signal by Euler–Maruyama and accumulate
//! `H = ∫ h(x) dt` over each observation interval. An increment `Δy` then
//! has likelihood `N(H, s ΔT)`. Systematic resampling runs whenever the
//! effective sample size drops below half the particle count.

use super::truth::{rng, PARTICLE_STREAM};
use crate::error::{Error, Result};
use crate::fd::ModelSpec;
use crate::filter::{ObservationSeries, PosteriorEstimate, EXPONENT_CLAMP};
use alloc::vec;
use alloc::vec::Vec;
use libm::{exp, fabs, log, round, sqrt};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// How the initial particles are drawn.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorSampling {
    /// Rejection sampling of the model's initial density on `[-a, a]^d`,
    /// with the density at the model's initial state as envelope.
    Density { half_width: f64 },
    /// Every particle starts at the given point.
    Point(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleConfig {
    pub particles: usize,
    /// Euler–Maruyama step inside an observation interval.
    pub dt: f64,
    pub prior: PriorSampling,
    pub seed: u64,
}

/// Particle positions (`d` consecutive values per particle) and normalized weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub dim: usize,
    pub positions: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ParticleEnsemble {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    /// `1 / Σ w_i²`.
    pub fn effective_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for (i, w) in self.weights.iter().enumerate() {
            for (mk, x) in m.iter_mut().zip(self.particle(i)) {
                *mk += w * x;
            }
        }
        m
    }

    fn resample(&mut self, r: &mut ChaCha8Rng) {
        let picks = systematic_resample(&self.weights, self.len(), r.gen::<f64>());
        let mut next = Vec::with_capacity(self.positions.len());
        for &i in &picks {
            next.extend_from_slice(self.particle(i));
        }
        self.positions = next;
        let w = 1.0 / self.len() as f64;
        self.weights.iter_mut().for_each(|v| *v = w);
    }
}

/// `count` indices drawn by systematic resampling with offset `u ∈ [0, 1)`:
/// pointer `i` sits at `(i + u) / count` and is mapped through the weight CDF.
pub fn systematic_resample(weights: &[f64], count: usize, u: f64) -> Vec<usize> {
    let p = count;
    let mut out = Vec::with_capacity(p);
    let mut cdf = weights[0];
    let mut j = 0;
    let last = weights.len() - 1;
    for i in 0..p {
        let target = (i as f64 + u) / p as f64;
        while target >= cdf && j < last {
            j += 1;
            cdf += weights[j];
        }
        out.push(j);
    }
    out
}

/// Per-run counters of [`particle_filter`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleRun {
    /// Filtered estimates at `t_1, ..., t_{N_t}`.
    pub estimates: Vec<PosteriorEstimate>,
    pub resamples: usize,
    /// Intervals in which every weight underflowed and the weights were reset.
    pub collapses: usize,
    pub ensemble: ParticleEnsemble,
}

fn draw_prior(model: &ModelSpec, config: &ParticleConfig, r: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let d = model.dim;
    let p = config.particles;
    match &config.prior {
        PriorSampling::Point(x) => {
            if x.len() != d {
                return Err(Error::InvalidModel("prior point has the wrong length".into()));
            }
            Ok(x.iter().copied().cycle().take(p * d).collect())
        }
        PriorSampling::Density { half_width } => {
            let a = *half_width;
            let mut bound = (model.initial_density)(&model.initial_state);
            if !(bound > 0.0 && bound.is_finite()) {
                return Err(Error::InvalidModel("initial density must be positive at the initial state".into()));
            }
            let mut out = Vec::with_capacity(p * d);
            let mut x = vec![0.0; d];
            let mut tries = 0usize;
            while out.len() < p * d {
                tries += 1;
                if tries > 10_000 * p.max(1000) {
                    return Err(Error::InvalidModel("initial density is too concentrated to sample".into()));
                }
                for v in x.iter_mut() {
                    *v = a * (2.0 * r.gen::<f64>() - 1.0);
                }
                let f = (model.initial_density)(&x);
                bound = bound.max(f);
                if r.gen::<f64>() * bound < f {
                    out.extend_from_slice(&x);
                }
            }
            Ok(out)
        }
    }
}

pub fn particle_filter(model: &ModelSpec, observations: &ObservationSeries, config: &ParticleConfig) -> Result<ParticleRun> {
    model.validate()?;
    if config.particles == 0 {
        return Err(Error::InvalidModel("need at least one particle".into()));
    }
    if observations.obs_dim() != model.obs_dim() {
        return Err(Error::InvalidObservations("observation length differs from the model".into()));
    }
    let dt_obs = observations.dt();
    let sub = round(dt_obs / config.dt).max(1.0);
    if fabs(sub * config.dt - dt_obs) > 1e-9 * dt_obs {
        return Err(Error::InvalidObservations("particle step must divide the observation interval".into()));
    }
    let sub = sub as usize;
    let dt = config.dt;
    let (d, m, p) = (model.dim, model.obs_dim(), config.particles);
    let mut r = rng(config.seed, PARTICLE_STREAM);
    let mut ens = ParticleEnsemble {
        dim: d,
        positions: draw_prior(model, config, &mut r)?,
        weights: vec![1.0 / p as f64; p],
    };
    let sq = sqrt(model.diffusion * dt);
    let var = model.obs_noise * dt_obs;
    let mut f = vec![0.0; d];
    let mut h = vec![0.0; m];
    let mut acc = vec![0.0; p * m];
    let mut loglik = vec![0.0; p];
    let mut estimates = Vec::with_capacity(observations.intervals());
    let (mut resamples, mut collapses) = (0, 0);
    let mut log_mass = 0.0;
    let (times, ys) = (observations.times(), observations.values());
    for j in 1..=observations.intervals() {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..p {
            let x = &mut ens.positions[i * d..(i + 1) * d];
            let hi = &mut acc[i * m..(i + 1) * m];
            for _ in 0..sub {
                model.eval_drift(x, &mut f);
                model.eval_observation(x, &mut h);
                for (a, v) in hi.iter_mut().zip(&h) {
                    *a += v * dt;
                }
                for (xk, fk) in x.iter_mut().zip(&f) {
                    let z: f64 = r.sample(StandardNormal);
                    *xk += fk * dt + sq * z;
                }
            }
        }
        if ens.positions.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("particle position"));
        }
        for (i, ll) in loglik.iter_mut().enumerate() {
            let hi = &acc[i * m..(i + 1) * m];
            let r2: f64 = (0..m).map(|c| {
                let e = ys[j][c] - ys[j - 1][c] - hi[c];
                e * e
            }).sum();
            *ll = -r2 / (2.0 * var);
        }
        let best = loglik.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        let mut mass = 0.0;
        for (w, ll) in ens.weights.iter_mut().zip(&loglik) {
            let l = exp(ll - best);
            mass += *w * l;
            *w *= l;
            total += *w;
        }
        if best < -EXPONENT_CLAMP || !(total > 0.0) {
            collapses += 1;
            ens.weights.iter_mut().for_each(|w| *w = 1.0 / p as f64);
        } else {
            ens.weights.iter_mut().for_each(|w| *w /= total);
            log_mass += best + log(mass);
        }
        let mean = ens.mean();
        estimates.push(PosteriorEstimate { step: j, time: times[j], mean, mass, log_mass });
        if ens.effective_size() < 0.5 * p as f64 {
            ens.resample(&mut r);
            resamples += 1;
        }
    }
    Ok(ParticleRun { estimates, resamples, collapses, ensemble: ens })
}
