//! Offline/online filtering of the robust Zakai equation.
//!
//! Offline, the explicit Euler step `τA + I` is raised to the power
//! `ΔT/τ` in QTT form. Online, each observation increment multiplies the
//! density by `exp(h^T S^{-1} Δy)` and the propagator moves it to the next
//! observation time. Conditional means are ratios of QTT sums, so the
//! density is rescaled to unit mass after every step.

mod offline;
mod online;

pub use offline::{offline_build, CONSTRUCTION_EPS, propagator_power, OfflineBundle, PowerReport, WeightSource};
pub use online::{
    assimilate, estimate_state, initialize, observation_weight, observation_weight_within, run_filter,
    marginal, support_window, Clock, Estimator,
    FilterState, NoClock, ObservationSeries, PosteriorEstimate, StepRecord, StepTiming, Weight,
    EXPONENT_CLAMP, WEIGHT_WINDOW_FLOOR_MAX, weight_headroom, weight_window_floor,
};
