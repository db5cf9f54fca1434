use super::{sample_dense, Grid, ModelSpec};
use crate::error::Result;
use libm::fabs;

/// Sampled bounds and the explicit-scheme conditions `h < 1/C_f` and
/// `τ < (q d / h^2 + d L_f + (d/2) C_h^2 / s)^{-1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityReport {
    /// `max |f_i|` over nodes and components.
    pub drift_bound: f64,
    /// `max |h_i|` over nodes and components.
    pub obs_bound: f64,
    /// Largest adjacent-node difference quotient of any drift component.
    pub drift_lipschitz: f64,
    pub spacing: f64,
    pub tau: f64,
    pub tau_max: f64,
    pub mesh_ok: bool,
    pub step_ok: bool,
}

impl StabilityReport {
    pub fn passed(&self) -> bool {
        self.mesh_ok && self.step_ok
    }
}

pub fn check_stability(grid: &Grid, model: &ModelSpec, tau: f64) -> Result<StabilityReport> {
    let n = grid.points();
    let h = grid.spacing();
    let d = grid.dim() as f64;
    let mut c_f: f64 = 0.0;
    let mut l_f: f64 = 0.0;
    for f in &model.drift {
        let s = sample_dense(grid, f.as_ref())?;
        c_f = s.iter().fold(c_f, |m, v| m.max(fabs(*v)));
        let mut stride = 1;
        for _ in 0..grid.dim() {
            for (i, v) in s.iter().enumerate() {
                if (i / stride) % n + 1 < n {
                    l_f = l_f.max(fabs(s[i + stride] - v) / h);
                }
            }
            stride *= n;
        }
    }
    let mut c_h: f64 = 0.0;
    for o in &model.observation {
        let s = sample_dense(grid, o.field.as_ref())?;
        c_h = s.iter().fold(c_h, |m, v| m.max(fabs(*v)));
    }
    let rate = model.diffusion * d / (h * h) + d * l_f + 0.5 * d * c_h * c_h / model.obs_noise;
    let tau_max = if rate > 0.0 { 1.0 / rate } else { f64::INFINITY };
    Ok(StabilityReport {
        drift_bound: c_f,
        obs_bound: c_h,
        drift_lipschitz: l_f,
        spacing: h,
        tau,
        tau_max,
        mesh_ok: h * c_f < 1.0,
        step_ok: tau < tau_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pure_diffusion_bound_is_h_squared_over_d() {
        let g = Grid::new(2.0, 2, 4).unwrap();
        let m = ModelSpec::pure_diffusion(2, 1.0, 1.0);
        let r = check_stability(&g, &m, 1e-3).unwrap();
        let h = g.spacing();
        assert!((r.tau_max - h * h / 2.0).abs() < 1e-15);
        assert!(r.mesh_ok);
        let twice = check_stability(&g, &m, 2.0 * r.tau_max).unwrap();
        assert!(!twice.step_ok && !twice.passed());
    }

    #[test]
    fn almost_linear_step_is_stable_at_sixty_four_points() {
        let g = Grid::new(5.0, 3, 6).unwrap();
        let r = check_stability(&g, &ModelSpec::almost_linear(), 0.05 / 100.0).unwrap();
        assert!(r.passed(), "{r:?}");
        assert!((r.drift_bound - 1.5).abs() < 1e-12);
        assert!((r.drift_lipschitz - 0.3).abs() < 1e-12);
    }
}
