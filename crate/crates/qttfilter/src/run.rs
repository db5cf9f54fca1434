//! The five experiment commands, independent of argument parsing.
//!
//! Every command is deterministic given its configuration: truth path `p`
//! uses seed `seed + p`, results are collected in path order whatever
//! `jobs` is, and only the reported timings vary between runs.

use crate::bundle::{read_bundle, write_bundle};
use crate::config::{Backend, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::truth_io::{read_truth, write_truth};
use qttfilter_core::baselines::{
    dense_fd_filter, particle_filter, simulate_truth, ParticleConfig, PriorSampling, TruthPath,
};
use qttfilter_core::fd::{assemble_step_unrounded, sample_field, Grid, StabilityReport};
use qttfilter_core::filter::{
    offline_build, propagator_power, run_filter, Clock, OfflineBundle, PosteriorEstimate, CONSTRUCTION_EPS,
};
use qttfilter_core::RoundingPolicy;
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

/// Monotonic seconds since construction.
pub struct WallClock(Instant);

impl WallClock {
    pub fn start() -> Self {
        Self(Instant::now())
    }
}

impl Clock for WallClock {
    fn now(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// `f(0), ..., f(n-1)` on up to `jobs` threads, in index order. The first
/// error by index wins.
pub fn parallel_map<T, F>(n: usize, jobs: usize, f: F) -> CliResult<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> CliResult<T> + Sync,
{
    if jobs <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<CliResult<T>>>> = (0..n).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..jobs.min(n) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = f(i);
                *slots[i].lock().expect("no panics while holding the slot") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("worker panicked").expect("every index ran"))
        .collect()
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("plain data serializes");
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> CliResult<()> {
    let fail = |e: csv::Error| CliError::input(path, e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(fail)?;
    w.write_record(header).map_err(fail)?;
    for r in rows {
        w.write_record(r).map_err(fail)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

// ---------------------------------------------------------------- simulate

pub fn simulate_paths(cfg: &ExperimentConfig) -> CliResult<Vec<TruthPath>> {
    let model = cfg.model_spec();
    parallel_map(cfg.paths, cfg.jobs, |p| {
        Ok(simulate_truth(&model, cfg.horizon, cfg.truth_dt, cfg.path_seed(p))?)
    })
}

pub fn truth_file(dir: &Path, p: usize) -> PathBuf {
    dir.join(format!("truth_{p:03}.csv"))
}

/// Writes `truth_000.csv, truth_001.csv, ...` into the output directory.
pub fn cmd_simulate(cfg: &ExperimentConfig) -> CliResult<Vec<PathBuf>> {
    create_dir(&cfg.out)?;
    let paths = simulate_paths(cfg)?;
    paths
        .iter()
        .enumerate()
        .map(|(p, t)| {
            let f = truth_file(&cfg.out, p);
            write_truth(&f, t)?;
            Ok(f)
        })
        .collect()
}

// ----------------------------------------------------------------- offline

pub struct OfflineOutcome {
    pub bundle: OfflineBundle,
    pub stability: StabilityReport,
    pub seconds: f64,
}

#[derive(Debug, Serialize)]
pub struct OfflineSummary {
    pub model: String,
    pub levels: u32,
    pub points: usize,
    pub tau: f64,
    pub steps: usize,
    pub eps_build: f64,
    pub eps_online: f64,
    pub ranks: Vec<usize>,
    pub max_rank: usize,
    pub effective_rank: f64,
    pub build_seconds: f64,
    pub mesh_ok: bool,
    pub step_ok: bool,
    pub tau_max: f64,
}

impl OfflineOutcome {
    pub fn summary(&self) -> OfflineSummary {
        let b = &self.bundle;
        OfflineSummary {
            model: b.model_name.clone(),
            levels: b.grid.levels(),
            points: b.grid.points(),
            tau: b.tau,
            steps: b.steps,
            eps_build: b.build_policy.epsilon,
            eps_online: b.online_policy.epsilon,
            ranks: b.propagator.ranks(),
            max_rank: b.propagator.max_rank(),
            effective_rank: b.propagator.effective_rank(),
            build_seconds: self.seconds,
            mesh_ok: self.stability.mesh_ok,
            step_ok: self.stability.step_ok,
            tau_max: self.stability.tau_max,
        }
    }
}

pub fn grid_of(cfg: &ExperimentConfig) -> CliResult<Grid> {
    Ok(Grid::new(cfg.half_width, cfg.model_spec().dim, cfg.levels)?)
}

pub fn build_bundle(cfg: &ExperimentConfig) -> CliResult<OfflineOutcome> {
    build_bundle_with(cfg, cfg.build_policy(), cfg.online_policy())
}

fn build_bundle_with(cfg: &ExperimentConfig, build: RoundingPolicy, online: RoundingPolicy) -> CliResult<OfflineOutcome> {
    let grid = grid_of(cfg)?;
    let start = Instant::now();
    let (bundle, stability) = offline_build(&cfg.model_spec(), &grid, cfg.dt_obs, cfg.steps, build, online)?;
    Ok(OfflineOutcome { bundle, stability, seconds: start.elapsed().as_secs_f64() })
}

pub fn bundle_file(dir: &Path) -> PathBuf {
    dir.join("bundle.qttb")
}

/// Writes `bundle.qttb` and `offline.json` into the output directory.
pub fn cmd_offline(cfg: &ExperimentConfig) -> CliResult<OfflineOutcome> {
    create_dir(&cfg.out)?;
    let outcome = build_bundle(cfg)?;
    write_bundle(&bundle_file(&cfg.out), &outcome.bundle)?;
    write_json(&cfg.out.join("offline.json"), &outcome.summary())?;
    Ok(outcome)
}

// ------------------------------------------------------------------ online

/// One diagnostics record per observation interval. Fields a backend cannot
/// report are `null`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub time: f64,
    pub mean: Vec<f64>,
    pub mass_log: f64,
    pub effective_rank: Option<f64>,
    pub t_fke_seconds: Option<f64>,
    pub t_exp_seconds: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BackendRun {
    pub backend: Backend,
    pub estimates: Vec<PosteriorEstimate>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub seconds: f64,
    /// Particle-filter intervals whose weights all underflowed.
    pub collapses: usize,
}

impl BackendRun {
    /// Total propagation time, if the backend reports it.
    pub fn t_fke(&self) -> Option<f64> {
        sum_reported(self.diagnostics.iter().map(|d| d.t_fke_seconds))
    }

    /// Total assimilation time, if the backend reports it.
    pub fn t_exp(&self) -> Option<f64> {
        sum_reported(self.diagnostics.iter().map(|d| d.t_exp_seconds))
    }
}

fn sum_reported(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    values.fold(None, |acc, v| match (acc, v) {
        (None, v) => v,
        (Some(a), Some(b)) => Some(a + b),
        (a, None) => a,
    })
}

fn mean_reported(values: impl Iterator<Item = Option<f64>>, n: f64) -> Option<f64> {
    sum_reported(values).map(|s| s / n)
}

pub fn run_qtt(bundle: &OfflineBundle, truth: &TruthPath) -> CliResult<BackendRun> {
    let obs = truth.observation_series(bundle.dt_obs)?;
    let clock = WallClock::start();
    let mut diagnostics = Vec::with_capacity(obs.intervals());
    let estimates = run_filter(bundle, &obs, &clock, &mut |r| {
        diagnostics.push(StepDiagnostics {
            step: r.step,
            time: r.time,
            mean: r.mean.clone(),
            mass_log: r.mass_log,
            effective_rank: Some(r.effective_rank),
            t_fke_seconds: Some(r.t_fke_seconds),
            t_exp_seconds: Some(r.t_exp_seconds),
        })
    })?;
    Ok(BackendRun { backend: Backend::Qtt, estimates, diagnostics, seconds: clock.now(), collapses: 0 })
}

pub fn run_fd(cfg: &ExperimentConfig, truth: &TruthPath) -> CliResult<BackendRun> {
    let obs = truth.observation_series(cfg.dt_obs)?;
    let grid = grid_of(cfg)?;
    let clock = WallClock::start();
    let mut timings = Vec::with_capacity(obs.intervals());
    let estimates = dense_fd_filter(&cfg.model_spec(), &grid, &obs, cfg.steps, &clock, &mut |s| timings.push(*s))?;
    let diagnostics = estimates
        .iter()
        .zip(&timings)
        .map(|(e, t)| StepDiagnostics {
            step: e.step,
            time: e.time,
            mean: e.mean.clone(),
            mass_log: e.log_mass,
            effective_rank: None,
            t_fke_seconds: Some(t.t_fke_seconds),
            t_exp_seconds: Some(t.t_exp_seconds),
        })
        .collect();
    Ok(BackendRun { backend: Backend::Fd, estimates, diagnostics, seconds: clock.now(), collapses: 0 })
}

pub fn run_pf(cfg: &ExperimentConfig, truth: &TruthPath) -> CliResult<BackendRun> {
    let obs = truth.observation_series(cfg.dt_obs)?;
    let pc = ParticleConfig {
        particles: cfg.particles,
        dt: truth.dt,
        prior: PriorSampling::Density { half_width: cfg.half_width },
        seed: truth.seed,
    };
    let clock = WallClock::start();
    let run = particle_filter(&cfg.model_spec(), &obs, &pc)?;
    let diagnostics = run
        .estimates
        .iter()
        .map(|e| StepDiagnostics {
            step: e.step,
            time: e.time,
            mean: e.mean.clone(),
            mass_log: e.log_mass,
            effective_rank: None,
            t_fke_seconds: None,
            t_exp_seconds: None,
        })
        .collect();
    Ok(BackendRun {
        backend: Backend::Pf,
        estimates: run.estimates,
        diagnostics,
        seconds: clock.now(),
        collapses: run.collapses,
    })
}

pub fn run_backend(
    cfg: &ExperimentConfig,
    backend: Backend,
    bundle: Option<&OfflineBundle>,
    truth: &TruthPath,
) -> CliResult<BackendRun> {
    match backend {
        Backend::Qtt => run_qtt(bundle.ok_or_else(|| CliError::Config("the qtt backend needs a bundle".into()))?, truth),
        Backend::Fd => run_fd(cfg, truth),
        Backend::Pf => run_pf(cfg, truth),
    }
}

pub fn estimates_file(dir: &Path, backend: Backend) -> PathBuf {
    dir.join(format!("estimates_{}.csv", backend.name()))
}

/// Columns `step,time,mean_0,...,mass_log`.
pub fn write_estimates(path: &Path, estimates: &[PosteriorEstimate]) -> CliResult<()> {
    let d = estimates.first().map_or(0, |e| e.mean.len());
    let header: Vec<String> = ["step", "time"]
        .into_iter()
        .map(String::from)
        .chain((0..d).map(|k| format!("mean_{k}")))
        .chain(["mass_log".to_string()])
        .collect();
    let rows: Vec<Vec<String>> = estimates
        .iter()
        .map(|e| {
            [e.step.to_string(), e.time.to_string()]
                .into_iter()
                .chain(e.mean.iter().map(f64::to_string))
                .chain([e.log_mass.to_string()])
                .collect()
        })
        .collect();
    write_csv(path, &header, &rows)
}

/// Runs one backend on a stored truth path and writes `estimates_<backend>.csv`
/// and `diagnostics_<backend>.json`. The qtt backend reads its bundle; the
/// others use the configuration.
pub fn cmd_online(
    cfg: &ExperimentConfig,
    backend: Backend,
    bundle_path: &Path,
    truth_path: &Path,
    online_eps: Option<f64>,
) -> CliResult<BackendRun> {
    let truth = read_truth(truth_path)?;
    let bundle = match backend {
        Backend::Qtt => {
            let mut b = read_bundle(bundle_path)?;
            if let Some(e) = online_eps {
                b.online_policy = b.online_policy.with_epsilon(e);
            }
            Some(b)
        }
        _ => None,
    };
    let run = run_backend(cfg, backend, bundle.as_ref(), &truth)?;
    create_dir(&cfg.out)?;
    write_estimates(&estimates_file(&cfg.out, backend), &run.estimates)?;
    write_json(&cfg.out.join(format!("diagnostics_{}.json", backend.name())), &run.diagnostics)?;
    Ok(run)
}

// ----------------------------------------------------------------- compare

/// Time- and coordinate-averaged squared difference of two estimate series.
pub fn mse(a: &[PosteriorEstimate], b: &[PosteriorEstimate]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (x, y) in a.iter().zip(b) {
        for (u, v) in x.mean.iter().zip(&y.mean) {
            sum += (u - v) * (u - v);
            n += 1;
        }
    }
    sum / n.max(1) as f64
}

pub fn max_abs_deviation(a: &[PosteriorEstimate], b: &[PosteriorEstimate]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.mean.iter().zip(&y.mean).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max)
}

fn rmse_to_truth(est: &[PosteriorEstimate], states: &[Vec<f64>]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (e, x) in est.iter().zip(states) {
        for (u, v) in e.mean.iter().zip(x) {
            sum += (u - v) * (u - v);
            n += 1;
        }
    }
    (sum / n.max(1) as f64).sqrt()
}

#[derive(Debug, Clone, Serialize)]
pub struct PairScore {
    pub first: String,
    pub second: String,
    /// Mean over paths of the per-path MSE.
    pub mse: f64,
    pub max_abs_deviation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BackendScore {
    pub backend: String,
    /// Mean over paths of the per-path RMSE against the true state.
    pub rmse: f64,
    pub collapses: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RuntimeRow {
    pub backend: String,
    pub offline_seconds: f64,
    /// Means over paths.
    pub online_seconds: f64,
    pub t_fke_seconds: Option<f64>,
    pub t_exp_seconds: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub max_abs_deviation: f64,
    pub mse: f64,
    pub propagator_effective_rank: f64,
    pub build_seconds: f64,
    pub online_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PathScores {
    pub path: usize,
    pub seed: u64,
    pub mse: Vec<f64>,
    pub rmse: Vec<f64>,
    pub collapses: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub model: String,
    pub levels: u32,
    pub paths: usize,
    pub backends: Vec<String>,
    pub pairs: Vec<PairScore>,
    pub accuracy: Vec<BackendScore>,
    pub runtime: Vec<RuntimeRow>,
    pub sweep: Vec<SweepRow>,
    pub per_path: Vec<PathScores>,
}

impl CompareReport {
    pub fn pair(&self, a: Backend, b: Backend) -> Option<&PairScore> {
        self.pairs.iter().find(|p| {
            (p.first == a.name() && p.second == b.name()) || (p.first == b.name() && p.second == a.name())
        })
    }

    pub fn runtime_of(&self, b: Backend) -> Option<&RuntimeRow> {
        self.runtime.iter().find(|r| r.backend == b.name())
    }

    pub fn accuracy_of(&self, b: Backend) -> Option<&BackendScore> {
        self.accuracy.iter().find(|r| r.backend == b.name())
    }
}

struct PathResult {
    truth_states: Vec<Vec<f64>>,
    runs: Vec<BackendRun>,
}

/// Runs every selected backend on shared truth paths and writes
/// `report.json`, `mse.csv`, `rmse.csv`, `runtime.csv`, `sweep.csv` and one
/// `estimates_path<p>.csv` per path.
pub fn cmd_compare(cfg: &ExperimentConfig) -> CliResult<CompareReport> {
    create_dir(&cfg.out)?;
    if !cfg.sweep.is_empty() && !cfg.backends.contains(&Backend::Fd) {
        return Err(CliError::Config("the precision sweep is measured against the fd backend".into()));
    }
    let offline = if cfg.backends.contains(&Backend::Qtt) { Some(build_bundle(cfg)?) } else { None };
    let bundle = offline.as_ref().map(|o| &o.bundle);
    let model = cfg.model_spec();
    let results = parallel_map(cfg.paths, cfg.jobs, |p| {
        let truth = simulate_truth(&model, cfg.horizon, cfg.truth_dt, cfg.path_seed(p))?;
        let runs = cfg
            .backends
            .iter()
            .map(|&b| run_backend(cfg, b, bundle, &truth))
            .collect::<CliResult<Vec<_>>>()?;
        let result = PathResult { truth_states: truth.states_at(cfg.dt_obs)?, runs };
        write_path_estimates(&cfg.out.join(format!("estimates_path{p:03}.csv")), &result)?;
        Ok(result)
    })?;

    let names: Vec<String> = cfg.backends.iter().map(|b| b.name().to_string()).collect();
    let nb = cfg.backends.len();
    let pair_indices: Vec<(usize, usize)> = (0..nb).flat_map(|i| (i + 1..nb).map(move |j| (i, j))).collect();
    let per_path: Vec<PathScores> = results
        .iter()
        .enumerate()
        .map(|(p, r)| PathScores {
            path: p,
            seed: cfg.path_seed(p),
            mse: pair_indices.iter().map(|&(i, j)| mse(&r.runs[i].estimates, &r.runs[j].estimates)).collect(),
            rmse: r.runs.iter().map(|run| rmse_to_truth(&run.estimates, &r.truth_states)).collect(),
            collapses: r.runs.iter().map(|run| run.collapses).collect(),
        })
        .collect();
    let paths = results.len() as f64;
    let pairs = pair_indices
        .iter()
        .enumerate()
        .map(|(k, &(i, j))| PairScore {
            first: names[i].clone(),
            second: names[j].clone(),
            mse: per_path.iter().map(|s| s.mse[k]).sum::<f64>() / paths,
            max_abs_deviation: results
                .iter()
                .map(|r| max_abs_deviation(&r.runs[i].estimates, &r.runs[j].estimates))
                .fold(0.0, f64::max),
        })
        .collect();
    let accuracy = (0..nb)
        .map(|i| BackendScore {
            backend: names[i].clone(),
            rmse: per_path.iter().map(|s| s.rmse[i]).sum::<f64>() / paths,
            collapses: per_path.iter().map(|s| s.collapses[i]).sum(),
        })
        .collect();
    let runtime = (0..nb)
        .map(|i| RuntimeRow {
            backend: names[i].clone(),
            offline_seconds: if cfg.backends[i] == Backend::Qtt { offline.as_ref().map_or(0.0, |o| o.seconds) } else { 0.0 },
            online_seconds: results.iter().map(|r| r.runs[i].seconds).sum::<f64>() / paths,
            t_fke_seconds: mean_reported(results.iter().map(|r| r.runs[i].t_fke()), paths),
            t_exp_seconds: mean_reported(results.iter().map(|r| r.runs[i].t_exp()), paths),
        })
        .collect();
    let sweep = if cfg.sweep.is_empty() {
        Vec::new()
    } else {
        let fd = cfg.backends.iter().position(|&b| b == Backend::Fd).expect("checked above");
        precision_sweep(cfg, &results[0].runs[fd].estimates)?
    };
    let report = CompareReport {
        model: cfg.model.clone(),
        levels: cfg.levels,
        paths: cfg.paths,
        backends: names,
        pairs,
        accuracy,
        runtime,
        sweep,
        per_path,
    };
    write_report(&cfg.out, &report)?;
    Ok(report)
}

/// Rebuilds the bundle with build and online tolerance both set to each
/// sweep value and compares the compressed filter with the dense reference
/// on path 0.
fn precision_sweep(cfg: &ExperimentConfig, reference: &[PosteriorEstimate]) -> CliResult<Vec<SweepRow>> {
    let truth = simulate_truth(&cfg.model_spec(), cfg.horizon, cfg.truth_dt, cfg.path_seed(0))?;
    parallel_map(cfg.sweep.len(), cfg.jobs, |k| {
        let eps = cfg.sweep[k];
        let policy = RoundingPolicy::new(eps, cfg.max_rank)?;
        let o = build_bundle_with(cfg, policy, policy)?;
        let run = run_qtt(&o.bundle, &truth)?;
        Ok(SweepRow {
            epsilon: eps,
            max_abs_deviation: max_abs_deviation(&run.estimates, reference),
            mse: mse(&run.estimates, reference),
            propagator_effective_rank: o.bundle.propagator.effective_rank(),
            build_seconds: o.seconds,
            online_seconds: run.seconds,
        })
    })
}

fn write_path_estimates(path: &Path, r: &PathResult) -> CliResult<()> {
    let d = r.truth_states.first().map_or(0, Vec::len);
    let mut header = vec!["time".to_string()];
    header.extend((0..d).map(|k| format!("truth_{k}")));
    for run in &r.runs {
        header.extend((0..d).map(|k| format!("{}_{k}", run.backend.name())));
    }
    let rows: Vec<Vec<String>> = r
        .truth_states
        .iter()
        .enumerate()
        .map(|(j, x)| {
            let mut row = vec![r.runs.first().map_or(String::new(), |run| run.estimates[j].time.to_string())];
            row.extend(x.iter().map(f64::to_string));
            for run in &r.runs {
                row.extend(run.estimates[j].mean.iter().map(f64::to_string));
            }
            row
        })
        .collect();
    write_csv(path, &header, &rows)
}

fn write_report(dir: &Path, r: &CompareReport) -> CliResult<()> {
    write_json(&dir.join("report.json"), r)?;
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    write_csv(
        &dir.join("mse.csv"),
        &s(&["first", "second", "mse", "max_abs_deviation"]),
        &r.pairs
            .iter()
            .map(|p| vec![p.first.clone(), p.second.clone(), p.mse.to_string(), p.max_abs_deviation.to_string()])
            .collect::<Vec<_>>(),
    )?;
    write_csv(
        &dir.join("rmse.csv"),
        &s(&["backend", "rmse", "collapses"]),
        &r.accuracy.iter().map(|a| vec![a.backend.clone(), a.rmse.to_string(), a.collapses.to_string()]).collect::<Vec<_>>(),
    )?;
    write_csv(
        &dir.join("runtime.csv"),
        &s(&["backend", "offline_seconds", "online_seconds", "t_fke_seconds", "t_exp_seconds"]),
        &r.runtime
            .iter()
            .map(|t| {
                vec![
                    t.backend.clone(),
                    t.offline_seconds.to_string(),
                    t.online_seconds.to_string(),
                    opt(t.t_fke_seconds),
                    opt(t.t_exp_seconds),
                ]
            })
            .collect::<Vec<_>>(),
    )?;
    write_csv(
        &dir.join("sweep.csv"),
        &s(&["epsilon", "max_abs_deviation", "mse", "propagator_effective_rank", "build_seconds", "online_seconds"]),
        &r.sweep
            .iter()
            .map(|w| {
                vec![
                    w.epsilon.to_string(),
                    w.max_abs_deviation.to_string(),
                    w.mse.to_string(),
                    w.propagator_effective_rank.to_string(),
                    w.build_seconds.to_string(),
                    w.online_seconds.to_string(),
                ]
            })
            .collect::<Vec<_>>(),
    )
}

// ------------------------------------------------------------------- ranks

/// Effective ranks on one grid: sampled drift components, the quadratic
/// observation potential, the explicit step operator (exact sum of its
/// structured terms, and recompressed) and the propagator.
#[derive(Debug, Clone, Serialize)]
pub struct RankRow {
    pub levels: u32,
    pub points: usize,
    pub drift: Vec<f64>,
    pub potential: f64,
    pub step_operator: f64,
    pub step_operator_recompressed: f64,
    pub propagator: Option<f64>,
    pub propagator_seconds: Option<f64>,
}

pub fn rank_row(cfg: &ExperimentConfig, levels: u32) -> CliResult<RankRow> {
    let model = cfg.model_spec();
    let grid = Grid::new(cfg.half_width, model.dim, levels)?;
    let construction = RoundingPolicy::eps(CONSTRUCTION_EPS)?;
    let drift = model
        .drift
        .iter()
        .map(|f| Ok(sample_field(&grid, f.as_ref(), construction)?.effective_rank()))
        .collect::<CliResult<Vec<f64>>>()?;
    let potential = sample_field(&grid, &|x: &[f64]| model.potential(x), construction)?.effective_rank();
    let tau = cfg.dt_obs / cfg.steps as f64;
    let step = assemble_step_unrounded(&grid, &model, tau, construction)?;
    let base = step.round(construction)?;
    let (propagator, propagator_seconds) = if levels <= cfg.propagator_max_levels {
        let start = Instant::now();
        let (p, _) = propagator_power(&base, cfg.steps, cfg.build_policy())?;
        (Some(p.effective_rank()), Some(start.elapsed().as_secs_f64()))
    } else {
        (None, None)
    };
    Ok(RankRow {
        levels,
        points: grid.points(),
        drift,
        potential,
        step_operator: step.effective_rank(),
        step_operator_recompressed: base.effective_rank(),
        propagator,
        propagator_seconds,
    })
}

/// Writes `ranks.csv` with columns `levels,points,drift_0..,potential,
/// step_operator,step_operator_recompressed,propagator,propagator_seconds`.
pub fn cmd_ranks(cfg: &ExperimentConfig) -> CliResult<Vec<RankRow>> {
    create_dir(&cfg.out)?;
    let rows = parallel_map(cfg.rank_levels.len(), cfg.jobs, |k| rank_row(cfg, cfg.rank_levels[k]))?;
    let d = cfg.model_spec().dim;
    let mut header = vec!["levels".to_string(), "points".to_string()];
    header.extend((0..d).map(|k| format!("drift_{k}")));
    header.extend(
        ["potential", "step_operator", "step_operator_recompressed", "propagator", "propagator_seconds"]
            .map(String::from),
    );
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut row = vec![r.levels.to_string(), r.points.to_string()];
            row.extend(r.drift.iter().map(|v| format!("{v:.4}")));
            row.push(format!("{:.4}", r.potential));
            row.push(format!("{:.4}", r.step_operator));
            row.push(format!("{:.4}", r.step_operator_recompressed));
            row.push(r.propagator.map(|v| format!("{v:.4}")).unwrap_or_default());
            row.push(opt(r.propagator_seconds));
            row
        })
        .collect();
    write_csv(&cfg.out.join("ranks.csv"), &header, &body)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn est(means: &[[f64; 2]]) -> Vec<PosteriorEstimate> {
        means
            .iter()
            .enumerate()
            .map(|(j, m)| PosteriorEstimate { step: j + 1, time: j as f64, mean: m.to_vec(), mass: 1.0, log_mass: 0.0 })
            .collect()
    }

    #[test]
    fn mse_averages_over_time_and_coordinates() {
        let a = est(&[[0.0, 0.0], [1.0, 1.0]]);
        let b = est(&[[1.0, 0.0], [1.0, 3.0]]);
        assert_eq!(mse(&a, &a), 0.0);
        assert_eq!(mse(&a, &b), (1.0 + 4.0) / 4.0);
        assert_eq!(max_abs_deviation(&a, &b), 2.0);
    }

    #[test]
    fn parallel_map_keeps_order_and_reports_the_first_error() {
        let v = parallel_map(17, 4, |i| Ok(i * i)).unwrap();
        assert_eq!(v, (0..17).map(|i| i * i).collect::<Vec<_>>());
        let e = parallel_map(9, 3, |i| if i % 4 == 3 { Err(CliError::Config(format!("{i}"))) } else { Ok(i) });
        assert!(matches!(e, Err(CliError::Config(m)) if m == "3"));
    }
}
