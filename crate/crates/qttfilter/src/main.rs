use clap::{Args, Parser, Subcommand};
use qttfilter::run::{bundle_file, cmd_compare, cmd_offline, cmd_online, cmd_ranks, cmd_simulate, truth_file};
use qttfilter::{Backend, CliError, CliResult, ExperimentConfig, FileConfig, Overrides};
use std::path::PathBuf;
use std::process::ExitCode;

/// Tensor-train nonlinear filter: truth simulation, offline propagator
/// build, online filtering and comparisons against dense finite
/// differences and a particle filter.
///
/// Exit codes: 0 success, 2 configuration or input error, 3 numerical
/// failure (instability, rank cap, vanishing mass).
#[derive(Parser)]
#[command(name = "qttfilter", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate truth paths. Writes truth_NNN.csv with columns
    /// time,x0..,y0.. and one row per fine time step.
    Simulate(Common),
    /// Build the propagator bundle. Writes bundle.qttb and offline.json
    /// (ranks, effective rank, build seconds, stability checks).
    Offline(Common),
    /// Filter one stored truth path. Writes estimates_<backend>.csv with
    /// columns step,time,mean_0..,mass_log and diagnostics_<backend>.json
    /// with one {step, time, mean, mass_log, effective_rank, t_fke_seconds,
    /// t_exp_seconds} record per observation interval.
    Online(OnlineArgs),
    /// Run the selected backends on shared truth paths. Writes mse.csv
    /// (first,second,mse,max_abs_deviation), rmse.csv (backend,rmse,collapses),
    /// runtime.csv (backend,offline_seconds,online_seconds,t_fke_seconds,
    /// t_exp_seconds), sweep.csv (epsilon,max_abs_deviation,mse,
    /// propagator_effective_rank,build_seconds,online_seconds), report.json
    /// and estimates_pathNNN.csv (time,truth_k..,<backend>_k..).
    Compare(Common),
    /// Effective ranks per grid size. Writes ranks.csv with columns
    /// levels,points,drift_0..,potential,step_operator,
    /// step_operator_recompressed,propagator,propagator_seconds.
    Ranks(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in model: almost_linear or cubic_sensor.
    #[arg(long)]
    model: Option<String>,
    /// Grid levels L; each axis has 2^L points.
    #[arg(long)]
    grid_l: Option<u32>,
    /// Time between observations.
    #[arg(long)]
    dt_obs: Option<f64>,
    /// Explicit time steps per observation interval.
    #[arg(long)]
    steps: Option<usize>,
    /// Final time of the simulated paths.
    #[arg(long)]
    horizon: Option<f64>,
    /// Rounding tolerance of the offline propagator power.
    #[arg(long)]
    eps_build: Option<f64>,
    /// Rounding tolerance of the online products.
    #[arg(long)]
    eps_online: Option<f64>,
    /// Number of truth paths.
    #[arg(long)]
    paths: Option<usize>,
    /// Base seed; path p uses seed + p.
    #[arg(long)]
    seed: Option<u64>,
    /// Backends to run (comma separated or repeated).
    #[arg(long, value_enum, value_delimiter = ',')]
    backend: Vec<Backend>,
    /// Worker threads for independent paths.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OnlineArgs {
    #[command(flatten)]
    common: Common,
    /// Bundle file (default: <out>/bundle.qttb).
    #[arg(long)]
    bundle: Option<PathBuf>,
    /// Truth path file (default: <out>/truth_000.csv).
    #[arg(long)]
    truth: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> CliResult<ExperimentConfig> {
        let file = self.config.as_deref().map(FileConfig::load).transpose()?;
        let o = Overrides {
            model: self.model.clone(),
            grid_l: self.grid_l,
            dt_obs: self.dt_obs,
            steps: self.steps,
            horizon: self.horizon,
            eps_build: self.eps_build,
            eps_online: self.eps_online,
            paths: self.paths,
            seed: self.seed,
            backends: self.backend.clone(),
            jobs: self.jobs,
            out: self.out.clone(),
        };
        ExperimentConfig::resolve(file, &o)
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(c) => {
            let cfg = c.resolve()?;
            for f in cmd_simulate(&cfg)? {
                println!("{}", f.display());
            }
        }
        Command::Offline(c) => {
            let cfg = c.resolve()?;
            let o = cmd_offline(&cfg)?;
            let s = o.summary();
            if !o.bundle.stable {
                eprintln!(
                    "warning: explicit-scheme conditions fail (mesh ok: {}, step ok: {}, tau {} vs bound {})",
                    s.mesh_ok, s.step_ok, s.tau, s.tau_max
                );
            }
            println!(
                "{}: N = {}, effective rank {:.2}, max rank {}, built in {:.2} s",
                s.model, s.points, s.effective_rank, s.max_rank, s.build_seconds
            );
        }
        Command::Online(a) => {
            let cfg = a.common.resolve()?;
            let backend = match a.common.backend.as_slice() {
                [] => Backend::Qtt,
                [b] => *b,
                _ => return Err(CliError::Config("online runs exactly one backend".into())),
            };
            let bundle = a.bundle.unwrap_or_else(|| bundle_file(&cfg.out));
            let truth = a.truth.unwrap_or_else(|| truth_file(&cfg.out, 0));
            let r = cmd_online(&cfg, backend, &bundle, &truth, a.common.eps_online)?;
            println!(
                "{}: {} estimates in {:.2} s (t_fke {}, t_exp {})",
                backend.name(),
                r.estimates.len(),
                r.seconds,
                seconds(r.t_fke()),
                seconds(r.t_exp())
            );
        }
        Command::Compare(c) => {
            let cfg = c.resolve()?;
            let r = cmd_compare(&cfg)?;
            for p in &r.pairs {
                println!("mse {} vs {}: {:.6} (max deviation {:.3e})", p.first, p.second, p.mse, p.max_abs_deviation);
            }
            for a in &r.accuracy {
                println!("rmse {} vs truth: {:.4} ({} collapses)", a.backend, a.rmse, a.collapses);
            }
            for t in &r.runtime {
                println!(
                    "runtime {}: offline {:.2} s, online {:.2} s per path (t_fke {}, t_exp {})",
                    t.backend,
                    t.offline_seconds,
                    t.online_seconds,
                    seconds(t.t_fke_seconds),
                    seconds(t.t_exp_seconds)
                );
            }
            for w in &r.sweep {
                println!("sweep eps {:e}: max deviation {:.3e}, mse {:.3e}", w.epsilon, w.max_abs_deviation, w.mse);
            }
        }
        Command::Ranks(c) => {
            let cfg = c.resolve()?;
            for r in cmd_ranks(&cfg)? {
                println!(
                    "N = {:4}: drift {:?}, potential {:.2}, step {:.2} ({:.2} recompressed), propagator {}",
                    r.points,
                    r.drift.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>(),
                    r.potential,
                    r.step_operator,
                    r.step_operator_recompressed,
                    r.propagator.map_or("-".to_string(), |v| format!("{v:.2}"))
                );
            }
        }
    }
    Ok(())
}

fn seconds(v: Option<f64>) -> String {
    v.map_or("n/a".to_string(), |s| format!("{s:.2} s"))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
