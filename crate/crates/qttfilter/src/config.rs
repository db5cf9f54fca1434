//! Experiment configuration: built-in model defaults, overlaid by a TOML
//! file, overlaid by command-line flags.
//!
//! ```toml
//! [run]
//! model = "almost_linear"   # or "cubic_sensor"
//! seed = 1
//! paths = 5
//! jobs = 1
//! out = "out"
//! backends = ["qtt", "fd", "pf"]
//!
//! [grid]
//! half_width = 5.0
//! levels = 6                # N = 2^levels points per axis
//!
//! [time]
//! dt_obs = 0.05
//! steps = 100               # explicit steps per observation interval
//! horizon = 20.0
//! truth_dt = 0.001
//!
//! [rounding]
//! build = 5e-4
//! online = 5e-4
//! max_rank = 400            # optional
//!
//! [particles]
//! count = 3000
//!
//! [compare]
//! sweep = [1e-2, 1e-3, 1e-4, 1e-5]
//!
//! [ranks]
//! levels = [4, 5, 6, 7, 8]
//! propagator_max_levels = 6
//! ```

use crate::error::{CliError, CliResult};
use qttfilter_core::fd::{ModelSpec, Preset, MAX_LEVELS};
use qttfilter_core::RoundingPolicy;
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    /// Compressed offline/online filter.
    Qtt,
    /// Dense explicit finite differences.
    Fd,
    /// Bootstrap particle filter.
    Pf,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Self::Qtt => "qtt",
            Self::Fd => "fd",
            Self::Pf => "pf",
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub time: TimeSection,
    #[serde(default)]
    pub rounding: RoundingSection,
    #[serde(default)]
    pub particles: ParticleSection,
    #[serde(default)]
    pub compare: CompareSection,
    #[serde(default)]
    pub ranks: RanksSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub model: Option<String>,
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub backends: Option<Vec<Backend>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub half_width: Option<f64>,
    pub levels: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub dt_obs: Option<f64>,
    pub steps: Option<usize>,
    pub horizon: Option<f64>,
    pub truth_dt: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundingSection {
    pub build: Option<f64>,
    pub online: Option<f64>,
    pub max_rank: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleSection {
    pub count: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    pub sweep: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RanksSection {
    pub levels: Option<Vec<u32>>,
    pub propagator_max_levels: Option<u32>,
}

impl FileConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub model: Option<String>,
    pub grid_l: Option<u32>,
    pub dt_obs: Option<f64>,
    pub steps: Option<usize>,
    pub horizon: Option<f64>,
    pub eps_build: Option<f64>,
    pub eps_online: Option<f64>,
    pub paths: Option<usize>,
    pub seed: Option<u64>,
    pub backends: Vec<Backend>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
}

/// Fully resolved and validated settings of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: String,
    pub half_width: f64,
    pub levels: u32,
    pub dt_obs: f64,
    pub steps: usize,
    pub horizon: f64,
    pub truth_dt: f64,
    pub eps_build: f64,
    pub eps_online: f64,
    pub max_rank: Option<usize>,
    pub backends: Vec<Backend>,
    pub paths: usize,
    pub seed: u64,
    pub particles: usize,
    pub jobs: usize,
    pub out: PathBuf,
    pub sweep: Vec<f64>,
    pub rank_levels: Vec<u32>,
    pub propagator_max_levels: u32,
}

pub const DEFAULT_LEVELS: u32 = 6;

impl ExperimentConfig {
    pub fn resolve(file: Option<FileConfig>, cli: &Overrides) -> CliResult<Self> {
        let f = file.unwrap_or_default();
        let model = cli
            .model
            .clone()
            .or(f.run.model)
            .unwrap_or_else(|| Preset::NAMES[0].to_string());
        let preset = Preset::builtin(&model).ok_or_else(|| {
            CliError::Config(format!("unknown model '{model}' (built-in: {})", Preset::NAMES.join(", ")))
        })?;
        let levels = cli.grid_l.or(f.grid.levels).unwrap_or(DEFAULT_LEVELS);
        let mut backends = if cli.backends.is_empty() {
            f.run.backends.unwrap_or_else(|| vec![Backend::Qtt, Backend::Fd, Backend::Pf])
        } else {
            cli.backends.clone()
        };
        backends.sort();
        backends.dedup();
        let cfg = Self {
            model,
            half_width: f.grid.half_width.unwrap_or(preset.half_width),
            levels,
            dt_obs: cli.dt_obs.or(f.time.dt_obs).unwrap_or(preset.dt_obs),
            steps: cli.steps.or(f.time.steps).unwrap_or(preset.steps),
            horizon: cli.horizon.or(f.time.horizon).unwrap_or(preset.horizon),
            truth_dt: f.time.truth_dt.unwrap_or(preset.truth_dt),
            eps_build: cli.eps_build.or(f.rounding.build).unwrap_or(preset.eps_build),
            eps_online: cli.eps_online.or(f.rounding.online).unwrap_or(preset.eps_online),
            max_rank: f.rounding.max_rank,
            backends,
            paths: cli.paths.or(f.run.paths).unwrap_or(1),
            seed: cli.seed.or(f.run.seed).unwrap_or(1),
            particles: f.particles.count.unwrap_or(preset.particles),
            jobs: cli.jobs.or(f.run.jobs).unwrap_or(1),
            out: cli.out.clone().or(f.run.out).unwrap_or_else(|| PathBuf::from("out")),
            sweep: f.compare.sweep.unwrap_or_default(),
            rank_levels: f.ranks.levels.unwrap_or_else(|| (4..=levels.max(4)).collect()),
            propagator_max_levels: f.ranks.propagator_max_levels.unwrap_or(levels),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                bad(format!("{name} must be positive and finite, got {v}"))
            }
        };
        positive("grid.half_width", self.half_width)?;
        positive("time.dt_obs", self.dt_obs)?;
        positive("time.horizon", self.horizon)?;
        positive("time.truth_dt", self.truth_dt)?;
        positive("rounding.build", self.eps_build)?;
        positive("rounding.online", self.eps_online)?;
        for &e in &self.sweep {
            positive("compare.sweep entry", e)?;
        }
        for &l in self.rank_levels.iter().chain([&self.levels]) {
            if !(1..=MAX_LEVELS).contains(&l) {
                return bad(format!("grid levels must lie in 1..={MAX_LEVELS}, got {l}"));
            }
        }
        if self.steps == 0 || self.paths == 0 || self.jobs == 0 || self.particles == 0 {
            return bad("steps, paths, jobs and particle count must be at least 1".into());
        }
        if self.max_rank == Some(0) {
            return bad("rounding.max_rank must be at least 1".into());
        }
        if self.backends.is_empty() {
            return bad("no backends selected".into());
        }
        integral_ratio("time.horizon", self.horizon, "time.dt_obs", self.dt_obs)?;
        integral_ratio("time.dt_obs", self.dt_obs, "time.truth_dt", self.truth_dt)?;
        Ok(())
    }

    pub fn preset(&self) -> Preset {
        Preset::builtin(&self.model).expect("validated model name")
    }

    pub fn model_spec(&self) -> ModelSpec {
        self.preset().model
    }

    pub fn build_policy(&self) -> RoundingPolicy {
        RoundingPolicy::new(self.eps_build, self.max_rank).expect("validated tolerance")
    }

    pub fn online_policy(&self) -> RoundingPolicy {
        RoundingPolicy::new(self.eps_online, self.max_rank).expect("validated tolerance")
    }

    /// Observation intervals in `[0, horizon]`.
    pub fn intervals(&self) -> usize {
        (self.horizon / self.dt_obs).round() as usize
    }

    /// Seed of truth path `p`; the particle filter uses the same seed on
    /// its own random stream.
    pub fn path_seed(&self, p: usize) -> u64 {
        self.seed.wrapping_add(p as u64)
    }
}

fn integral_ratio(a_name: &str, a: f64, b_name: &str, b: f64) -> CliResult<()> {
    let k = (a / b).round();
    if k < 1.0 || (k * b - a).abs() > 1e-9 * a {
        return Err(CliError::Config(format!("{a_name} = {a} is not a whole multiple of {b_name} = {b}")));
    }
    Ok(())
}
