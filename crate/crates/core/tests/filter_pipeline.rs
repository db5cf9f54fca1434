//! Offline propagator and online assimilation against dense and closed-form oracles.

use proptest::prelude::*;
use qttfilter_core::baselines::{dense_fd_filter, simulate_truth};
use qttfilter_core::fd::{assemble_generator, sample_dense, Grid, ModelSpec, ObservationField, Preset};
use qttfilter_core::filter::{
    assimilate, estimate_state, initialize, marginal, observation_weight, observation_weight_within, offline_build,
    propagator_power, run_filter, support_window, Estimator, NoClock, ObservationSeries, OfflineBundle,
};
use qttfilter_core::tt::matvec_truncated;
use qttfilter_core::{RoundingPolicy, TtMatrix};
use std::sync::{Arc, OnceLock};

fn eps(e: f64) -> RoundingPolicy {
    RoundingPolicy::eps(e).unwrap()
}

fn dense_matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for j in 0..n {
        for k in 0..n {
            let v = b[k + n * j];
            if v != 0.0 {
                for i in 0..n {
                    c[i + n * j] += a[i + n * k] * v;
                }
            }
        }
    }
    c
}

fn dense_power(a: &[f64], n: usize, mut k: usize) -> Vec<f64> {
    let mut acc: Option<Vec<f64>> = None;
    let mut sq = a.to_vec();
    loop {
        if k & 1 == 1 {
            acc = Some(match acc {
                None => sq.clone(),
                Some(x) => dense_matmul(&x, &sq, n),
            });
        }
        k >>= 1;
        if k == 0 {
            return acc.unwrap();
        }
        sq = dense_matmul(&sq, &sq, n);
    }
}

fn frob(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn base_step(grid: &Grid, model: &ModelSpec, tau: f64) -> TtMatrix {
    assemble_generator(grid, model, eps(1e-12)).unwrap().euler_step(tau).unwrap()
}

#[test]
fn single_step_power_is_the_rounded_base() {
    let g = Grid::new(5.0, 3, 3).unwrap();
    let base = base_step(&g, &ModelSpec::almost_linear(), 5e-4);
    let (p, report) = propagator_power(&base, 1, eps(1e-8)).unwrap();
    assert_eq!(report.multiplications, 0);
    let diff: Vec<f64> = p
        .to_full()
        .unwrap()
        .iter()
        .zip(base.to_full().unwrap())
        .map(|(a, b)| a - b)
        .collect();
    assert!(frob(&diff) <= 1e-8 * base.norm());
}

#[test]
fn power_matches_dense_power_within_accumulated_rounding() {
    let g = Grid::new(5.0, 3, 3).unwrap();
    let n = g.nodes();
    let base = base_step(&g, &ModelSpec::almost_linear(), 5e-4);
    let dense = base.to_full().unwrap();
    for (steps, e) in [(4usize, 1e-10), (100, 5e-4)] {
        let (p, report) = propagator_power(&base, steps, eps(e)).unwrap();
        assert_eq!(report.multiplications, steps - 1);
        let want = dense_power(&dense, n, steps);
        let diff: Vec<f64> = p.to_full().unwrap().iter().zip(&want).map(|(a, b)| a - b).collect();
        assert!(frob(&diff) <= steps as f64 * e * frob(&want), "steps {steps}: {}", frob(&diff) / frob(&want));
    }
}

#[test]
fn diagonal_base_powers_entrywise() {
    let g = Grid::new(1.0, 2, 3).unwrap();
    let v = qttfilter_core::fd::sample_field(&g, &|x: &[f64]| 0.9 + 0.05 * x[0] - 0.02 * x[1], eps(1e-14)).unwrap();
    let d = TtMatrix::diag(&v);
    let (p, _) = propagator_power(&d, 7, eps(1e-12)).unwrap();
    let full = p.to_full().unwrap();
    let vd = v.to_full().unwrap();
    let n = g.nodes();
    for i in 0..n {
        assert!((full[i + n * i] - vd[i].powi(7)).abs() < 1e-12);
    }
}

#[test]
fn zero_steps_and_non_square_bases_are_rejected() {
    let g = Grid::new(1.0, 1, 3).unwrap();
    let base = base_step(&g, &ModelSpec::pure_diffusion(1, 1.0, 0.5), 1e-3);
    assert!(propagator_power(&base, 0, eps(1e-6)).is_err());
}

/// Bundle over a short interval `0.01` with 20 steps; `build` controls the
/// propagator, `online` the weights and products.
fn small_bundle(model: &ModelSpec, levels: u32, build: f64, online: f64) -> OfflineBundle {
    let half = if model.name == "cubic_sensor" { 3.0 } else { 5.0 };
    let g = Grid::new(half, model.dim, levels).unwrap();
    offline_build(model, &g, 0.01, 20, eps(build), eps(online)).unwrap().0
}

#[test]
fn symmetric_prior_and_odd_drift_keep_zero_mean() {
    let b = small_bundle(&ModelSpec::almost_linear(), 4, 1e-6, 1e-8);
    let s = initialize(&b).unwrap();
    let est = estimate_state(&s, &b.grid).unwrap();
    assert!(est.mean.iter().all(|m| m.abs() < 1e-5), "{:?}", est.mean);
    assert!((s.density.sum() - 1.0).abs() < 1e-12);
    assert_eq!(s.step, 1);
}

#[test]
fn unchanged_observation_is_pure_propagation() {
    let b = small_bundle(&ModelSpec::almost_linear(), 3, 1e-4, 1e-10);
    let s = initialize(&b).unwrap();
    let y = [0.3, -0.2, 1.0];
    let (next, timing) = assimilate(&s, &y, &y, &b, &NoClock).unwrap();
    assert!(!timing.clamped);
    let pure = matvec_truncated(&b.propagator, &s.density, b.online_policy).unwrap();
    let pure = pure.scale(1.0 / pure.sum()).unwrap();
    let diff = next.density.sub(&pure).unwrap().norm();
    assert!(diff <= 1e-9 * pure.norm());
    assert_eq!(next.step, 2);
}

#[test]
fn separable_weight_matches_pointwise_exponential() {
    let b = small_bundle(&ModelSpec::almost_linear(), 3, 1e-3, 1e-12);
    let model = ModelSpec::almost_linear();
    let dy = [0.4, -1.3, 0.25];
    let w = observation_weight(&b, &dy).unwrap();
    let l = b.grid.levels() as usize;
    let ranks = w.tensor.ranks();
    assert_eq!((ranks[l], ranks[2 * l]), (1, 1), "rank one across axes: {ranks:?}");
    let got = w.tensor.to_full().unwrap();
    let want = sample_dense(&b.grid, &|x: &[f64]| {
        let mut h = [0.0; 3];
        model.eval_observation(x, &mut h);
        h.iter().zip(&dy).map(|(a, b)| a * b).sum::<f64>() / model.obs_noise
    })
    .unwrap();
    let shift = w.log_shift;
    for (g, e) in got.iter().zip(&want) {
        let target = (e - shift).exp();
        assert!((g - target).abs() <= 1e-10 * (1.0 + target), "{g} vs {target}");
    }
    assert!(want.iter().all(|e| e - shift <= 1e-12));
}

#[test]
fn joint_weight_matches_pointwise_exponential() {
    let mut model = ModelSpec::pure_diffusion(2, 1.0, 0.7);
    model.observation = vec![ObservationField::joint(Arc::new(|x: &[f64]| x[0] * x[1] + 0.5 * x[1]))];
    let g = Grid::new(2.0, 2, 4).unwrap();
    let (b, _) = offline_build(&model, &g, 0.05, 20, eps(1e-10), eps(1e-12)).unwrap();
    let w = observation_weight(&b, &[0.8]).unwrap();
    let got = w.tensor.to_full().unwrap();
    let want = sample_dense(&g, &|x: &[f64]| (0.8 * (x[0] * x[1] + 0.5 * x[1]) - w.log_shift).exp()).unwrap();
    let diff: Vec<f64> = got.iter().zip(&want).map(|(a, b)| a - b).collect();
    assert!(frob(&diff) <= 1e-11 * frob(&want));
    assert!(observation_weight(&b, &[0.8, 0.1]).is_err());
}

#[test]
fn extreme_increments_are_clamped_not_overflowed() {
    let b = small_bundle(&ModelSpec::cubic_sensor(), 3, 1e-3, 1e-8);
    let w = observation_weight(&b, &[1e4, -1e4, 5e3]).unwrap();
    assert!(w.clamped);
    let full = w.tensor.to_full().unwrap();
    assert!(full.iter().all(|v| v.is_finite() && *v >= 0.0));
    assert!(w.log_shift.is_finite() && w.log_shift > 700.0);
}

#[test]
fn one_interval_gives_the_initialized_estimate() {
    let b = small_bundle(&ModelSpec::almost_linear(), 3, 1e-4, 1e-8);
    let obs = ObservationSeries::uniform(0.0, 0.01, vec![vec![0.0; 3], vec![1.0, 2.0, 3.0]]).unwrap();
    let mut records = Vec::new();
    let est = run_filter(&b, &obs, &NoClock, &mut |r| records.push(r.clone())).unwrap();
    assert_eq!(est.len(), 1);
    let direct = estimate_state(&initialize(&b).unwrap(), &b.grid).unwrap();
    assert_eq!(est[0].mean, direct.mean);
    assert_eq!(records.len(), 1);
    assert!((records[0].time - 0.01).abs() < 1e-15);
}

#[test]
fn mismatched_observations_are_rejected() {
    let b = small_bundle(&ModelSpec::almost_linear(), 3, 1e-3, 1e-6);
    let wrong_dt = ObservationSeries::uniform(0.0, 0.05, vec![vec![0.0; 3]; 3]).unwrap();
    assert!(run_filter(&b, &wrong_dt, &NoClock, &mut |_| {}).is_err());
    let wrong_dim = ObservationSeries::uniform(0.0, 0.01, vec![vec![0.0; 2]; 3]).unwrap();
    assert!(run_filter(&b, &wrong_dim, &NoClock, &mut |_| {}).is_err());
}

/// A Gaussian density times `exp(c x Δy / s)` stays Gaussian with its mean
/// shifted by `P c Δy / s`; under the generator with potential `½ c² x² / s`
/// its moments follow `m' = -(k + P c²/s) m`, `P' = q - 2 k P - P² c²/s`.
#[test]
fn linear_gaussian_means_follow_the_moment_equations() {
    let (k, c, q, s, prior) = (0.5, 1.0, 1.0, 0.5, 0.5);
    let model = ModelSpec::linear_gaussian(k, c, q, s, prior);
    let path = simulate_truth(&model, 2.0, 0.001, 5).unwrap();
    let obs = path.observation_series(0.05).unwrap();
    let g = Grid::new(6.0, 1, 7).unwrap();
    let (b, stability) = offline_build(&model, &g, 0.05, 50, eps(1e-10), eps(1e-10)).unwrap();
    assert!(stability.passed());
    let est = run_filter(&b, &obs, &NoClock, &mut |_| {}).unwrap();
    let rhs = |m: f64, p: f64| (-(k + p * c * c / s) * m, q - 2.0 * k * p - p * p * c * c / s);
    let (mut m, mut p) = (0.0f64, prior);
    let ys = obs.values();
    let mut worst = 0.0f64;
    for (j, e) in est.iter().enumerate() {
        if j > 0 {
            m += p * c * (ys[j][0] - ys[j - 1][0]) / s;
        }
        let n = 200;
        let dt = 0.05 / n as f64;
        for _ in 0..n {
            let (a1, b1) = rhs(m, p);
            let (a2, b2) = rhs(m + 0.5 * dt * a1, p + 0.5 * dt * b1);
            let (a3, b3) = rhs(m + 0.5 * dt * a2, p + 0.5 * dt * b2);
            let (a4, b4) = rhs(m + dt * a3, p + dt * b3);
            m += dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
            p += dt / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
        }
        worst = worst.max((e.mean[0] - m).abs());
    }
    assert!(worst < 1e-3, "max deviation {worst}");
}

#[test]
fn compressed_and_dense_pipelines_agree_at_tight_rounding() {
    let pre = Preset::builtin("almost_linear").unwrap();
    let g = Grid::new(pre.half_width, 3, 3).unwrap();
    let path = simulate_truth(&pre.model, 0.5, 0.001, 9).unwrap();
    let obs = path.observation_series(0.05).unwrap();
    let (b, _) = offline_build(&pre.model, &g, 0.05, 100, eps(1e-8), eps(1e-8)).unwrap();
    let qtt = run_filter(&b, &obs, &NoClock, &mut |_| {}).unwrap();
    let dense = dense_fd_filter(&pre.model, &g, &obs, 100, &NoClock, &mut |_| {}).unwrap();
    for (a, d) in qtt.iter().zip(&dense) {
        assert_eq!(a.step, d.step);
        for (x, y) in a.mean.iter().zip(&d.mean) {
            assert!((x - y).abs() < 1e-5, "step {}: {x} vs {y}", a.step);
        }
    }
}

/// Far-tail rounding noise must not be amplified by the cubic weight into a
/// density with no positive mass.
#[test]
fn cubic_sensor_keeps_positive_mass_at_its_preset_tolerance() {
    let pre = Preset::builtin("cubic_sensor").unwrap();
    let g = Grid::new(pre.half_width, 3, 4).unwrap();
    let path = simulate_truth(&pre.model, 4.0, pre.truth_dt, 1).unwrap();
    let obs = path.observation_series(pre.dt_obs).unwrap();
    let (b, _) = offline_build(&pre.model, &g, pre.dt_obs, pre.steps, eps(pre.eps_build), eps(pre.eps_online)).unwrap();
    let qtt = run_filter(&b, &obs, &NoClock, &mut |_| {}).unwrap();
    let dense = dense_fd_filter(&pre.model, &g, &obs, pre.steps, &NoClock, &mut |_| {}).unwrap();
    let n = (qtt.len() * 3) as f64;
    let mse: f64 = qtt
        .iter()
        .zip(&dense)
        .flat_map(|(a, d)| a.mean.iter().zip(&d.mean).map(|(x, y)| (x - y) * (x - y)))
        .sum::<f64>()
        / n;
    assert!(mse < 0.05, "mse {mse}");
}

#[test]
fn weight_cap_only_lowers_factors_outside_the_window() {
    let pre = Preset::builtin("cubic_sensor").unwrap();
    let b = small_bundle(&pre.model, 4, 1e-6, 1e-6);
    let dy = [0.4, -0.6, 0.2];
    let full = observation_weight(&b, &dy).unwrap().tensor.to_full().unwrap();
    let win = [(-1.0, 1.0), (-0.5, 1.5), (-2.0, 0.0)];
    let capped = observation_weight_within(&b, &dy, Some((&win, 0.5))).unwrap();
    let free = observation_weight_within(&b, &dy, None).unwrap();
    let dense = capped.tensor.to_full().unwrap();
    let shift = free.log_shift - capped.log_shift;
    let tol = 1e-5 * full.iter().copied().fold(0.0, f64::max);
    let mut inside_equal = 0;
    b.grid.for_each_node(|l, x| {
        let a = dense[l] * (-shift).exp();
        assert!(a <= full[l] + tol);
        if x.iter().zip(&win).all(|(v, (lo, hi))| (lo..=hi).contains(&v)) {
            assert!((a - full[l]).abs() <= tol);
            inside_equal += 1;
        }
    });
    assert!(inside_equal > 0);
}

#[test]
fn marginals_match_dense_sums() {
    let pre = Preset::builtin("almost_linear").unwrap();
    let b = small_bundle(&pre.model, 3, 1e-8, 1e-8);
    let state = initialize(&b).unwrap();
    let full = state.density.to_full().unwrap();
    let n = b.grid.points();
    for axis in 0..3 {
        let m = marginal(&state.density, &b.grid, axis).unwrap();
        let mut want = vec![0.0; n];
        for (l, v) in full.iter().enumerate() {
            want[(l / n.pow(axis as u32)) % n] += v;
        }
        for (a, w) in m.iter().zip(&want) {
            assert!((a - w).abs() < 1e-12, "axis {axis}: {a} vs {w}");
        }
    }
    let win = support_window(&state.density, &b.grid, 1e-2).unwrap();
    assert!(win.iter().all(|(lo, hi)| lo <= hi && -b.grid.half_width() <= *lo && *hi <= b.grid.half_width()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn estimates_ignore_density_scale(scale in 1e-6f64..1e6) {
        static BUNDLE: OnceLock<OfflineBundle> = OnceLock::new();
        let b = BUNDLE.get_or_init(|| small_bundle(&ModelSpec::almost_linear(), 3, 1e-4, 1e-8));
        let mut s = initialize(b).unwrap();
        let y0 = [0.0; 3];
        let y1 = [0.2, 0.5, -0.1];
        s = assimilate(&s, &y0, &y1, b, &NoClock).unwrap().0;
        let est = Estimator::new(&b.grid).unwrap();
        let base = est.estimate(&s).unwrap();
        s.density = s.density.scale(scale).unwrap();
        let scaled = est.estimate(&s).unwrap();
        for (a, c) in base.mean.iter().zip(&scaled.mean) {
            prop_assert!((a - c).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }
}
