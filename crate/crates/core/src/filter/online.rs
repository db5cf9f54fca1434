use super::{OfflineBundle, WeightSource};
use crate::error::{Error, Result};
use crate::fd::{coordinate_tensor, separable_tensor, Grid};
use crate::tt::{hadamard_truncated, matvec_truncated, TtTensor, DEFAULT_MATERIALIZE_LIMIT};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use libm::{exp, fabs, log};

/// Exponents of the observation weight are kept within `[-EXPONENT_CLAMP, 0]`
/// after subtracting their maximum.
pub const EXPONENT_CLAMP: f64 = 700.0;

/// Relative floor of the per-axis window in which the separable weight is
/// applied exactly: nodes whose marginal density reaches this fraction of the
/// marginal's peak. Outside the window each axis factor is capped at its
/// largest value inside, so rounding noise in the far tails of the density
/// is never amplified above the bulk. Tied to the online tolerance so that
/// tight rounding leaves the weight untouched almost everywhere.
pub fn weight_window_floor(epsilon: f64) -> f64 {
    libm::sqrt(epsilon).min(WEIGHT_WINDOW_FLOOR_MAX)
}

/// Log of the factor by which a capped axis weight may still exceed its
/// largest value inside the window: noise at relative level `ε` grows to at
/// most `√ε`.
pub fn weight_headroom(epsilon: f64) -> f64 {
    -0.25 * libm::log(epsilon)
}

/// Upper bound of [`weight_window_floor`].
pub const WEIGHT_WINDOW_FLOOR_MAX: f64 = 1e-2;

/// Monotonic wall-clock source in seconds. The core crate has no clock of
/// its own; callers that want timings pass one in.
pub trait Clock {
    fn now(&self) -> f64;
}

/// Reports zero for every reading.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now(&self) -> f64 {
        0.0
    }
}

/// Observations `y(t_0), ..., y(t_{N_t})` on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSeries {
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl ObservationSeries {
    pub fn new(times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidObservations("need y(t_0) and at least one more observation".into()));
        }
        if times.len() != values.len() {
            return Err(Error::InvalidObservations(format!(
                "{} times but {} observation vectors",
                times.len(),
                values.len()
            )));
        }
        let m = values[0].len();
        if values.iter().any(|v| v.len() != m) {
            return Err(Error::InvalidObservations("observation vectors differ in length".into()));
        }
        if values.iter().flatten().chain(&times).any(|v| !v.is_finite()) {
            return Err(Error::InvalidObservations("non-finite entry".into()));
        }
        let dt = times[1] - times[0];
        if !(dt > 0.0) {
            return Err(Error::InvalidObservations("times must increase".into()));
        }
        for w in times.windows(2) {
            if fabs(w[1] - w[0] - dt) > 1e-12 * (1.0 + fabs(w[1])) {
                return Err(Error::InvalidObservations(format!(
                    "non-uniform spacing at t = {}",
                    w[1]
                )));
            }
        }
        Ok(Self { times, values })
    }

    /// `times[j] = t0 + j dt`.
    pub fn uniform(t0: f64, dt: f64, values: Vec<Vec<f64>>) -> Result<Self> {
        let times = (0..values.len()).map(|j| t0 + j as f64 * dt).collect();
        Self::new(times, values)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    /// Number of intervals `N_t`.
    pub fn intervals(&self) -> usize {
        self.times.len() - 1
    }

    pub fn obs_dim(&self) -> usize {
        self.values[0].len()
    }
}

/// Unnormalized conditional density at an observation time, kept at unit sum.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub density: TtTensor,
    pub time: f64,
    pub step: usize,
    /// Log of the total mass the density would have without rescaling.
    pub log_mass: f64,
    /// Sum of the density just before the last rescaling.
    pub last_mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorEstimate {
    pub step: usize,
    pub time: f64,
    pub mean: Vec<f64>,
    pub mass: f64,
    pub log_mass: f64,
}

/// Per-step diagnostics handed to the observer of [`run_filter`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    pub mean: Vec<f64>,
    pub mass_log: f64,
    pub effective_rank: f64,
    pub t_fke_seconds: f64,
    pub t_exp_seconds: f64,
    pub clamped: bool,
}

/// `exp(h^T S^{-1} Δy - shift)` in QTT form.
#[derive(Debug, Clone, PartialEq)]
pub struct Weight {
    pub tensor: TtTensor,
    /// The subtracted maximum exponent; `log` of the dropped constant factor.
    pub log_shift: f64,
    /// Some exponent fell below `-EXPONENT_CLAMP` after the shift and was raised to it.
    pub clamped: bool,
}

fn clamp_exponents(e: &mut [f64]) -> (f64, bool) {
    let shift = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut clamped = false;
    for v in e.iter_mut() {
        *v -= shift;
        if *v < -EXPONENT_CLAMP {
            *v = -EXPONENT_CLAMP;
            clamped = true;
        }
        *v = exp(*v);
    }
    (shift, clamped)
}

pub fn observation_weight(bundle: &OfflineBundle, dy: &[f64]) -> Result<Weight> {
    observation_weight_within(bundle, dy, None)
}

/// Marginal of a QTT density on `axis`: the sum over all other axes.
pub fn marginal(density: &TtTensor, grid: &Grid, axis: usize) -> Result<Vec<f64>> {
    let levels = grid.levels() as usize;
    if axis >= grid.dim() || density.dim() != grid.dim() * levels {
        return Err(Error::InvalidShape("density does not match the grid".into()));
    }
    let cores = density.cores();
    let summed = |c: &crate::tt::Core, v: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; c.right()];
        for (b, o) in out.iter_mut().enumerate() {
            for i in 0..c.mode() {
                for (a, x) in v.iter().enumerate() {
                    *o += x * c.get(a, i, b);
                }
            }
        }
        out
    };
    let mut left = vec![1.0];
    for c in &cores[..axis * levels] {
        left = summed(c, &left);
    }
    // rows: axis index so far (least significant bit first), columns: rank
    let mut rows = 1;
    let mut m = left;
    for c in &cores[axis * levels..(axis + 1) * levels] {
        let (r0, r1) = (c.left(), c.right());
        let mut next = vec![0.0; rows * 2 * r1];
        for i in 0..2 {
            for b in 0..r1 {
                for a in 0..r0 {
                    let g = c.get(a, i, b);
                    for idx in 0..rows {
                        next[(idx + rows * i) * r1 + b] += m[idx * r0 + a] * g;
                    }
                }
            }
        }
        rows *= 2;
        m = next;
    }
    let mut right = vec![1.0];
    for c in cores[(axis + 1) * levels..].iter().rev() {
        let mut out = vec![0.0; c.left()];
        for (a, o) in out.iter_mut().enumerate() {
            for i in 0..c.mode() {
                for (b, x) in right.iter().enumerate() {
                    *o += c.get(a, i, b) * x;
                }
            }
        }
        right = out;
    }
    let r = right.len();
    Ok((0..rows).map(|idx| (0..r).map(|b| m[idx * r + b] * right[b]).sum()).collect())
}

/// Per-axis coordinate interval covering the nodes whose marginal reaches
/// `floor` times its peak.
pub fn support_window(density: &TtTensor, grid: &Grid, floor: f64) -> Result<Vec<(f64, f64)>> {
    (0..grid.dim())
        .map(|k| {
            let m = marginal(density, grid, k)?;
            let peak = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !(peak > 0.0 && peak.is_finite()) {
                return Err(Error::ZeroMass);
            }
            let inside = |v: &f64| *v >= floor * peak;
            let lo = m.iter().position(inside).unwrap_or(0);
            let hi = m.iter().rposition(inside).unwrap_or(m.len() - 1);
            Ok((grid.coord(lo), grid.coord(hi)))
        })
        .collect()
}

/// Like [`observation_weight`]; with a window, each axis exponent of a
/// separable weight is capped at its maximum over the window's nodes plus
/// `headroom`.
pub fn observation_weight_within(
    bundle: &OfflineBundle,
    dy: &[f64],
    window: Option<(&[(f64, f64)], f64)>,
) -> Result<Weight> {
    if dy.len() != bundle.weights.obs_dim() {
        return Err(Error::InvalidObservations(format!(
            "observation has {} components, model expects {}",
            dy.len(),
            bundle.weights.obs_dim()
        )));
    }
    if dy.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("observation increment"));
    }
    let grid = &bundle.grid;
    let s = bundle.obs_noise;
    match &bundle.weights {
        WeightSource::Separable { terms } => {
            let mut factors = vec![vec![0.0; grid.points()]; grid.dim()];
            for (i, component) in terms.iter().enumerate() {
                let c = dy[i] / s;
                for (k, samples) in component {
                    for (f, g) in factors[*k].iter_mut().zip(samples) {
                        *f += c * g;
                    }
                }
            }
            if let Some((win, headroom)) = window {
                for (f, &(lo, hi)) in factors.iter_mut().zip(win) {
                    let cap = f
                        .iter()
                        .enumerate()
                        .filter(|(l, _)| (lo..=hi).contains(&grid.coord(*l)))
                        .map(|(_, v)| *v)
                        .fold(f64::NEG_INFINITY, f64::max);
                    if cap.is_finite() {
                        f.iter_mut().for_each(|v| *v = v.min(cap + headroom));
                    }
                }
            }
            let mut log_shift = 0.0;
            let mut clamped = false;
            for f in factors.iter_mut() {
                let (shift, c) = clamp_exponents(f);
                log_shift += shift;
                clamped |= c;
            }
            let tensor = separable_tensor(grid, &factors, bundle.online_policy)?;
            Ok(Weight { tensor, log_shift, clamped })
        }
        WeightSource::Joint { fields } => {
            if grid.nodes() > DEFAULT_MATERIALIZE_LIMIT {
                return Err(Error::SizeLimit { size: grid.nodes(), limit: DEFAULT_MATERIALIZE_LIMIT });
            }
            let mut e = vec![0.0; grid.nodes()];
            for (field, d) in fields.iter().zip(dy) {
                let c = d / s;
                for (v, h) in e.iter_mut().zip(field.to_full()?) {
                    *v += c * h;
                }
            }
            let (log_shift, clamped) = clamp_exponents(&mut e);
            let tensor = TtTensor::from_full(&e, &grid.qtt_shape(), bundle.online_policy)?;
            Ok(Weight { tensor, log_shift, clamped })
        }
    }
}

fn rescale(density: TtTensor) -> Result<(TtTensor, f64)> {
    let mass = density.sum();
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(Error::ZeroMass);
    }
    Ok((density.scale(1.0 / mass)?, mass))
}

/// Samples of `σ_0`, propagated once to `t_1`.
pub fn initialize(bundle: &OfflineBundle) -> Result<FilterState> {
    let u = matvec_truncated(&bundle.propagator, &bundle.initial, bundle.online_policy)?;
    let (density, mass) = rescale(u)?;
    Ok(FilterState {
        density,
        time: bundle.dt_obs,
        step: 1,
        log_mass: log(mass),
        last_mass: mass,
    })
}

/// Seconds spent in the two halves of an online step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepTiming {
    pub t_exp: f64,
    pub t_fke: f64,
    pub clamped: bool,
}

/// Multiply by the weight of `y_new - y_prev`, then propagate one interval.
pub fn assimilate(
    state: &FilterState,
    y_prev: &[f64],
    y_new: &[f64],
    bundle: &OfflineBundle,
    clock: &dyn Clock,
) -> Result<(FilterState, StepTiming)> {
    if y_prev.len() != y_new.len() {
        return Err(Error::InvalidObservations("observation vectors differ in length".into()));
    }
    let start = clock.now();
    let dy: Vec<f64> = y_new.iter().zip(y_prev).map(|(a, b)| a - b).collect();
    let eps = bundle.online_policy.epsilon;
    let window = support_window(&state.density, &bundle.grid, weight_window_floor(eps))?;
    let w = observation_weight_within(bundle, &dy, Some((&window, weight_headroom(eps))))?;
    let weighted = if w.tensor.max_rank() == 1 {
        w.tensor.hadamard(&state.density)?.round(bundle.online_policy)?
    } else {
        hadamard_truncated(&w.tensor, &state.density, bundle.online_policy)?
    };
    let mid = clock.now();
    let u = matvec_truncated(&bundle.propagator, &weighted, bundle.online_policy)?;
    let end = clock.now();
    let (density, mass) = rescale(u)?;
    let next = FilterState {
        density,
        time: state.time + bundle.dt_obs,
        step: state.step + 1,
        log_mass: state.log_mass + w.log_shift + log(mass),
        last_mass: mass,
    };
    Ok((next, StepTiming { t_exp: mid - start, t_fke: end - mid, clamped: w.clamped }))
}

/// Coordinate tensors of a grid, built once and reused for every estimate.
#[derive(Debug, Clone)]
pub struct Estimator {
    coords: Vec<TtTensor>,
}

impl Estimator {
    pub fn new(grid: &Grid) -> Result<Self> {
        let coords = (0..grid.dim()).map(|k| coordinate_tensor(grid, k)).collect::<Result<_>>()?;
        Ok(Self { coords })
    }

    /// `mean_k = sum(x_k ⊙ U) / sum(U)`.
    pub fn estimate(&self, state: &FilterState) -> Result<PosteriorEstimate> {
        let total = state.density.sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::ZeroMass);
        }
        let mean = self
            .coords
            .iter()
            .map(|c| Ok(c.dot(&state.density)? / total))
            .collect::<Result<Vec<f64>>>()?;
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("posterior mean"));
        }
        Ok(PosteriorEstimate {
            step: state.step,
            time: state.time,
            mean,
            mass: state.last_mass,
            log_mass: state.log_mass,
        })
    }
}

pub fn estimate_state(state: &FilterState, grid: &Grid) -> Result<PosteriorEstimate> {
    Estimator::new(grid)?.estimate(state)
}

/// The full online loop: estimates at `t_1, ..., t_{N_t}`.
pub fn run_filter(
    bundle: &OfflineBundle,
    observations: &ObservationSeries,
    clock: &dyn Clock,
    on_step: &mut dyn FnMut(&StepRecord),
) -> Result<Vec<PosteriorEstimate>> {
    if fabs(observations.dt() - bundle.dt_obs) > 1e-9 * bundle.dt_obs {
        return Err(Error::InvalidObservations(format!(
            "observation spacing {} differs from the bundle's {}",
            observations.dt(),
            bundle.dt_obs
        )));
    }
    if observations.obs_dim() != bundle.weights.obs_dim() {
        return Err(Error::InvalidObservations(format!(
            "observations have {} components, model expects {}",
            observations.obs_dim(),
            bundle.weights.obs_dim()
        )));
    }
    let estimator = Estimator::new(&bundle.grid)?;
    let times = observations.times();
    let ys = observations.values();
    let start = clock.now();
    let mut state = initialize(bundle)?;
    state.time = times[1];
    let t_fke = clock.now() - start;
    let mut out = Vec::with_capacity(observations.intervals());
    let record = |state: &FilterState, est: &PosteriorEstimate, t: StepTiming| StepRecord {
        step: state.step,
        time: state.time,
        mean: est.mean.clone(),
        mass_log: state.log_mass,
        effective_rank: state.density.effective_rank(),
        t_fke_seconds: t.t_fke,
        t_exp_seconds: t.t_exp,
        clamped: t.clamped,
    };
    let est = estimator.estimate(&state)?;
    on_step(&record(&state, &est, StepTiming { t_fke, ..Default::default() }));
    out.push(est);
    for j in 1..observations.intervals() {
        let (mut next, timing) = assimilate(&state, &ys[j - 1], &ys[j], bundle, clock)?;
        next.time = times[j + 1];
        let est = estimator.estimate(&next)?;
        on_step(&record(&next, &est, timing));
        out.push(est);
        state = next;
    }
    Ok(out)
}
