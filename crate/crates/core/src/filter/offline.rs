use crate::error::{Error, Result};
use crate::fd::{assemble_generator, check_stability, sample_field, Grid, ModelSpec, StabilityReport};
use crate::tt::{matmul_truncated, RoundingPolicy, TtMatrix, TtTensor};
use alloc::string::String;
use alloc::vec::Vec;

/// Accuracy of sampled fields and assembled operators.
pub const CONSTRUCTION_EPS: f64 = 1e-12;

/// How the online stage builds `exp(h^T S^{-1} Δy)`.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightSource {
    /// Every `h_i` is a sum of one-coordinate terms; `terms[i]` lists
    /// `(axis, samples along that axis)`. The weight is then rank one.
    Separable { terms: Vec<Vec<(usize, Vec<f64>)>> },
    /// QTT samples of each `h_i`; the weight is sampled on the full grid.
    Joint { fields: Vec<TtTensor> },
}

impl WeightSource {
    pub fn obs_dim(&self) -> usize {
        match self {
            Self::Separable { terms } => terms.len(),
            Self::Joint { fields } => fields.len(),
        }
    }
}

/// Everything the online stage needs. No closures: a bundle can be written
/// to disk and reloaded in another process.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineBundle {
    pub propagator: TtMatrix,
    pub grid: Grid,
    pub model_name: String,
    pub diffusion: f64,
    pub obs_noise: f64,
    pub tau: f64,
    pub dt_obs: f64,
    pub steps: usize,
    pub build_policy: RoundingPolicy,
    pub online_policy: RoundingPolicy,
    pub weights: WeightSource,
    pub initial: TtTensor,
    /// Both explicit-scheme conditions held for `tau` on this grid.
    pub stable: bool,
}

/// Outcome of [`propagator_power`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PowerReport {
    pub multiplications: usize,
    pub capped: bool,
}

/// `base^steps` by repeated right multiplication, truncating every product
/// at `policy.epsilon` relative to its own Frobenius norm. The accumulated
/// relative error is then at most about `steps * policy.epsilon`.
///
/// Squaring would need far fewer products, but a relative Frobenius rounding
/// of a near-identity operator discards most of the information that moves
/// the density, and the per-product tolerance needed to compensate drives the
/// ranks well above those of the sequential product.
pub fn propagator_power(base: &TtMatrix, steps: usize, policy: RoundingPolicy) -> Result<(TtMatrix, PowerReport)> {
    if base.rows() != base.cols() {
        return Err(Error::ShapeMismatch {
            left: base.rows().modes().to_vec(),
            right: base.cols().modes().to_vec(),
        });
    }
    if steps == 0 {
        return Err(Error::InvalidModel("propagator needs at least one step".into()));
    }
    let mut report = PowerReport::default();
    let (rounded, r) = base.round_report(policy)?;
    report.capped |= r.capped;
    let mut acc = base.clone();
    if steps == 1 {
        acc = rounded;
    }
    for _ in 1..steps {
        report.multiplications += 1;
        acc = multiply(&acc, base, policy, &mut report)?;
    }
    finish(acc, report, policy)
}

fn multiply(a: &TtMatrix, b: &TtMatrix, policy: RoundingPolicy, report: &mut PowerReport) -> Result<TtMatrix> {
    let p = matmul_truncated(a, b, policy)?;
    if let Some(cap) = policy.max_rank {
        if p.max_rank() >= cap {
            report.capped = true;
        }
    }
    Ok(p)
}

fn finish(p: TtMatrix, report: PowerReport, policy: RoundingPolicy) -> Result<(TtMatrix, PowerReport)> {
    if report.capped {
        return Err(Error::RankCap {
            needed: p.max_rank(),
            cap: policy.max_rank.unwrap_or(usize::MAX),
        });
    }
    Ok((p, report))
}

/// Offline stage: assemble `τA + I` with `τ = dt_obs / steps`, raise it to
/// `steps`, and sample everything the online stage needs.
pub fn offline_build(
    model: &ModelSpec,
    grid: &Grid,
    dt_obs: f64,
    steps: usize,
    build_policy: RoundingPolicy,
    online_policy: RoundingPolicy,
) -> Result<(OfflineBundle, StabilityReport)> {
    model.validate()?;
    if !(dt_obs > 0.0 && dt_obs.is_finite()) || steps == 0 {
        return Err(Error::InvalidModel("observation interval and step count must be positive".into()));
    }
    let tau = dt_obs / steps as f64;
    let stability = check_stability(grid, model, tau)?;
    let construction = RoundingPolicy::eps(CONSTRUCTION_EPS)?;
    let generator = assemble_generator(grid, model, construction)?;
    let base = generator.euler_step(tau)?;
    let (propagator, _) = propagator_power(&base, steps, build_policy)?;
    let weights = weight_source(grid, model, construction)?;
    let initial = sample_field(grid, model.initial_density.as_ref(), construction)?;
    if !(initial.sum() > 0.0) {
        return Err(Error::ZeroMass);
    }
    let bundle = OfflineBundle {
        propagator,
        grid: *grid,
        model_name: model.name.clone(),
        diffusion: model.diffusion,
        obs_noise: model.obs_noise,
        tau,
        dt_obs,
        steps,
        build_policy,
        online_policy,
        weights,
        initial,
        stable: stability.passed(),
    };
    Ok((bundle, stability))
}

fn weight_source(grid: &Grid, model: &ModelSpec, policy: RoundingPolicy) -> Result<WeightSource> {
    if model.observation.iter().all(|o| o.terms.is_some()) {
        let coords = grid.axis_coords();
        let terms = model
            .observation
            .iter()
            .map(|o| {
                o.terms
                    .as_ref()
                    .expect("checked")
                    .iter()
                    .map(|(k, g)| {
                        let s: Vec<f64> = coords.iter().map(|&x| g(x)).collect();
                        if s.iter().any(|v| !v.is_finite()) {
                            return Err(Error::NonFinite("observation term sample"));
                        }
                        Ok((*k, s))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok(WeightSource::Separable { terms });
    }
    let fields = model
        .observation
        .iter()
        .map(|o| sample_field(grid, o.field.as_ref(), policy))
        .collect::<Result<Vec<_>>>()?;
    Ok(WeightSource::Joint { fields })
}
