use crate::error::{Error, Result};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use libm::{exp, sin};

/// Scalar field on the state space.
pub type Field = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Function of a single coordinate.
pub type AxisFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// One observation component `h_i`.
///
/// When `h_i` is a sum of single-coordinate terms, `exp(c h_i)` is a rank-one
/// tensor and the online weight can be built axis by axis without sampling the
/// whole grid.
#[derive(Clone)]
pub struct ObservationField {
    pub field: Field,
    pub terms: Option<Vec<(usize, AxisFn)>>,
}

impl ObservationField {
    pub fn joint(field: Field) -> Self {
        Self { field, terms: None }
    }

    /// `h(x) = sum_k g_k(x[axis_k])`.
    pub fn additive(terms: Vec<(usize, AxisFn)>) -> Self {
        let parts = terms.clone();
        let field: Field = Arc::new(move |x: &[f64]| parts.iter().map(|(k, g)| g(x[*k])).sum());
        Self { field, terms: Some(terms) }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.field)(x)
    }
}

/// State-space model `dx = f(x) dt + sqrt(q) dv`, `dy = h(x) dt + sqrt(s) dw`.
#[derive(Clone)]
pub struct ModelSpec {
    pub name: String,
    pub dim: usize,
    pub drift: Vec<Field>,
    pub observation: Vec<ObservationField>,
    /// Diffusion scale `q`, with `g Q g^T = q I`.
    pub diffusion: f64,
    /// Observation noise scale `s`, with `S = s I`.
    pub obs_noise: f64,
    pub initial_density: Field,
    pub initial_state: Vec<f64>,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("obs_dim", &self.obs_dim())
            .field("diffusion", &self.diffusion)
            .field("obs_noise", &self.obs_noise)
            .finish()
    }
}

fn field<F: Fn(&[f64]) -> f64 + Send + Sync + 'static>(f: F) -> Field {
    Arc::new(f)
}

fn axis<F: Fn(f64) -> f64 + Send + Sync + 'static>(f: F) -> AxisFn {
    Arc::new(f)
}

impl ModelSpec {
    pub fn obs_dim(&self) -> usize {
        self.observation.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidModel("state dimension must be positive".into()));
        }
        if self.drift.len() != self.dim {
            return Err(Error::InvalidModel(format!(
                "{} drift components for a {}-dimensional state",
                self.drift.len(),
                self.dim
            )));
        }
        if self.initial_state.len() != self.dim {
            return Err(Error::InvalidModel("initial state has the wrong length".into()));
        }
        if !(self.diffusion >= 0.0 && self.diffusion.is_finite()) {
            return Err(Error::InvalidModel("diffusion scale must be nonnegative".into()));
        }
        if !(self.obs_noise > 0.0 && self.obs_noise.is_finite()) {
            return Err(Error::InvalidModel("observation noise scale must be positive".into()));
        }
        for o in &self.observation {
            if let Some(terms) = &o.terms {
                if terms.iter().any(|(k, _)| *k >= self.dim) {
                    return Err(Error::InvalidModel("observation term on a missing axis".into()));
                }
            }
        }
        Ok(())
    }

    pub fn eval_drift(&self, x: &[f64], out: &mut [f64]) {
        for (o, f) in out.iter_mut().zip(&self.drift) {
            *o = f(x);
        }
    }

    pub fn eval_observation(&self, x: &[f64], out: &mut [f64]) {
        for (o, h) in out.iter_mut().zip(&self.observation) {
            *o = h.eval(x);
        }
    }

    /// `h(x)^T S^{-1} h(x)`.
    pub fn potential(&self, x: &[f64]) -> f64 {
        self.observation.iter().map(|h| {
            let v = h.eval(x);
            v * v
        }).sum::<f64>()
            / self.obs_noise
    }

    /// Nearly linear drift with a mildly nonlinear sensor on three axes.
    pub fn almost_linear() -> Self {
        let drift = (0..3).map(|i| field(move |x: &[f64]| -0.3 * x[i])).collect();
        let observation = (0..3)
            .map(|i| {
                let next = (i + 1) % 3;
                ObservationField::additive(vec![(next, axis(|v| v)), (i, axis(sin))])
            })
            .collect();
        Self {
            name: "almost_linear".to_string(),
            dim: 3,
            drift,
            observation,
            diffusion: 1.5,
            obs_noise: 1.0,
            initial_density: field(|x: &[f64]| exp(-4.0 * x.iter().map(|v| v * v).sum::<f64>())),
            initial_state: vec![0.0; 3],
        }
    }

    /// Linear coupled drift observed through cubes of the coordinates.
    pub fn cubic_sensor() -> Self {
        let drift = vec![
            field(|x: &[f64]| -0.6 * x[0] - 0.1 * x[1]),
            field(|x: &[f64]| -0.5 * x[1] + 0.1 * x[2]),
            field(|x: &[f64]| -0.6 * x[2] + 0.1 * x[0]),
        ];
        let observation = (0..3)
            .map(|i| ObservationField::additive(vec![((i + 1) % 3, axis(|v| v * v * v))]))
            .collect();
        Self {
            name: "cubic_sensor".to_string(),
            dim: 3,
            drift,
            observation,
            diffusion: 1.5,
            obs_noise: 1.0,
            initial_density: field(|x: &[f64]| {
                exp(-10.0 * x.iter().map(|v| v * v * v * v).sum::<f64>())
            }),
            initial_state: vec![0.0; 3],
        }
    }

    /// Pure diffusion with a blind sensor: `f = 0`, `h = 0`.
    pub fn pure_diffusion(dim: usize, diffusion: f64, width: f64) -> Self {
        let c = 1.0 / (width * width);
        Self {
            name: "pure_diffusion".to_string(),
            dim,
            drift: (0..dim).map(|_| field(|_: &[f64]| 0.0)).collect(),
            observation: (0..dim).map(|_| ObservationField::joint(field(|_: &[f64]| 0.0))).collect(),
            diffusion,
            obs_noise: 1.0,
            initial_density: field(move |x: &[f64]| exp(-c * x.iter().map(|v| v * v).sum::<f64>())),
            initial_state: vec![0.0; dim],
        }
    }

    /// Scalar linear-Gaussian model `dx = -k x dt + sqrt(q) dv`, `dy = c x dt + sqrt(s) dw`.
    pub fn linear_gaussian(k: f64, c: f64, q: f64, s: f64, prior_var: f64) -> Self {
        Self {
            name: "linear_gaussian".to_string(),
            dim: 1,
            drift: vec![field(move |x: &[f64]| -k * x[0])],
            observation: vec![ObservationField::additive(vec![(0, axis(move |v| c * v))])],
            diffusion: q,
            obs_noise: s,
            initial_density: field(move |x: &[f64]| exp(-x[0] * x[0] / (2.0 * prior_var))),
            initial_state: vec![0.0],
        }
    }
}

/// A model together with the experiment settings it is normally run with.
#[derive(Debug, Clone)]
pub struct Preset {
    pub model: ModelSpec,
    pub half_width: f64,
    pub dt_obs: f64,
    pub steps: usize,
    pub horizon: f64,
    pub truth_dt: f64,
    pub eps_build: f64,
    pub eps_online: f64,
    pub particles: usize,
}

impl Preset {
    pub const NAMES: [&'static str; 2] = ["almost_linear", "cubic_sensor"];

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "almost_linear" => Some(Self {
                model: ModelSpec::almost_linear(),
                half_width: 5.0,
                dt_obs: 0.05,
                steps: 100,
                horizon: 20.0,
                truth_dt: 0.001,
                eps_build: 5e-4,
                eps_online: 5e-4,
                particles: 3000,
            }),
            "cubic_sensor" => Some(Self {
                model: ModelSpec::cubic_sensor(),
                half_width: 3.0,
                dt_obs: 0.05,
                steps: 200,
                horizon: 20.0,
                truth_dt: 0.001,
                eps_build: 5e-5,
                eps_online: 5e-5,
                particles: 5000,
            }),
            _ => None,
        }
    }
}
