//! Reference solvers used to validate and benchmark the compressed filter:
//! dense finite differences, Euler–Maruyama truth, a bootstrap particle
//! filter, and the exact filter of a scalar linear-Gaussian model.

mod dense;
mod kalman;
mod particle;
mod truth;

pub use dense::{dense_fd_filter, dense_fd_step, DensePropagator, DenseStep, BLOW_UP_FACTOR};
pub use kalman::{kalman_filter, LinearGaussian};
pub use particle::{
    particle_filter, systematic_resample, ParticleConfig, ParticleEnsemble, ParticleRun, PriorSampling,
};
pub use truth::{simulate_truth, TruthPath};
