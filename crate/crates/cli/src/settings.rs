use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use clap::Args;
use geoflow_core::{build_initial_data, Config, EmbeddedTarget, Metric, Scenario, Scheme, State, Target, TargetKind};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::error::CliError;

/// Flags shared by every subcommand. Anything left unset falls back to the
/// `--config` file and then to the built-in default.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML file with the same keys as the long flags
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// s2 | s6 | t2
    #[arg(long)]
    pub target: Option<String>,
    /// flat | conformal:<amplitude>
    #[arg(long)]
    pub metric: Option<String>,
    /// N or N,M
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<usize>>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub t_final: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// rk4-project | imex-spectral | duhamel
    #[arg(long)]
    pub scheme: Option<String>,
    /// constant | spin-wave | random-smooth | equator-circle | s6-hopf-like
    #[arg(long)]
    pub scenario: Option<String>,
    /// spin-wave polar angle
    #[arg(long)]
    pub theta: Option<f64>,
    /// spin-wave wavenumber
    #[arg(long, allow_negative_numbers = true)]
    pub k_mode: Option<i64>,
    /// random-smooth Fourier band
    #[arg(long)]
    pub band: Option<usize>,
    /// depth k of the energy hierarchy
    #[arg(long)]
    pub k_sobolev: Option<usize>,
    #[arg(long)]
    pub diagnostics_every: Option<usize>,
    #[arg(long)]
    pub snapshot_every: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct FileConfig {
    pub target: Option<String>,
    pub metric: Option<String>,
    pub grid: Option<Vec<usize>>,
    pub dt: Option<f64>,
    pub t_final: Option<f64>,
    pub epsilon: Option<f64>,
    pub scheme: Option<String>,
    pub scenario: Option<String>,
    pub theta: Option<f64>,
    pub k_mode: Option<i64>,
    pub band: Option<usize>,
    pub k_sobolev: Option<usize>,
    pub diagnostics_every: Option<usize>,
    pub snapshot_every: Option<usize>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub eps_list: Option<Vec<f64>>,
    pub modes_max: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("config file {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetricSpec {
    Flat,
    Conformal(f64),
}

impl FromStr for MetricSpec {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        if s == "flat" {
            return Ok(MetricSpec::Flat);
        }
        if let Some(a) = s.strip_prefix("conformal:") {
            let a: f64 = a.parse().map_err(|_| CliError::Usage(format!("bad conformal amplitude in '{s}'")))?;
            return Ok(MetricSpec::Conformal(a));
        }
        Err(CliError::Usage(format!("unknown metric '{s}' (expected flat or conformal:<amplitude>)")))
    }
}

impl fmt::Display for MetricSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricSpec::Flat => f.write_str("flat"),
            MetricSpec::Conformal(a) => write!(f, "conformal:{a}"),
        }
    }
}

/// Fully resolved and validated run settings.
#[derive(Debug, Clone)]
pub struct Settings {
    pub target: TargetKind,
    pub metric: MetricSpec,
    pub grid: Vec<usize>,
    pub dt: f64,
    pub t_final: f64,
    pub epsilon: f64,
    pub scheme: Scheme,
    pub scenario: Scenario,
    pub k_sobolev: usize,
    pub diagnostics_every: usize,
    pub snapshot_every: Option<usize>,
    pub out: PathBuf,
    pub seed: u64,
    pub file: FileConfig,
}

fn default_scenario(target: TargetKind) -> &'static str {
    match target {
        TargetKind::Sphere2 => "spin-wave",
        TargetKind::Sphere6 => "s6-hopf-like",
        TargetKind::FlatTorus2 => "random-smooth",
    }
}

fn usage<E: fmt::Display>(e: E) -> CliError {
    CliError::Usage(e.to_string())
}

impl Settings {
    pub fn resolve(args: &CommonArgs) -> Result<Self, CliError> {
        let file = match &args.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let target: TargetKind = args.target.clone().or(file.target.clone()).as_deref().unwrap_or("s2").parse().map_err(usage)?;
        let metric: MetricSpec = args.metric.clone().or(file.metric.clone()).as_deref().unwrap_or("flat").parse()?;
        let grid = args.grid.clone().or(file.grid.clone()).unwrap_or_else(|| vec![128]);
        if grid.is_empty() || grid.len() > 2 {
            return Err(CliError::Usage("--grid takes one or two sizes".into()));
        }
        let scheme: Scheme = args.scheme.clone().or(file.scheme.clone()).as_deref().unwrap_or("rk4-project").parse().map_err(usage)?;
        let seed = args.seed.or(file.seed).unwrap_or(0);
        let scenario_name = args.scenario.clone().or(file.scenario.clone()).unwrap_or_else(|| default_scenario(target).into());
        let theta = args.theta.or(file.theta).unwrap_or(std::f64::consts::FRAC_PI_4);
        let k_mode = args.k_mode.or(file.k_mode).unwrap_or(1);
        let band = args.band.or(file.band).unwrap_or(3);
        let scenario = match scenario_name.as_str() {
            "constant" => Scenario::Constant,
            "spin-wave" => Scenario::SpinWave { theta, k: k_mode },
            "random-smooth" => Scenario::RandomSmooth { seed, band },
            "equator-circle" => Scenario::EquatorCircle,
            "s6-hopf-like" => Scenario::S6HopfLike { seed },
            other => return Err(CliError::Usage(format!("unknown scenario '{other}'"))),
        };
        let settings = Settings {
            target,
            metric,
            grid,
            dt: args.dt.or(file.dt).unwrap_or(1e-4),
            t_final: args.t_final.or(file.t_final).unwrap_or(1.0),
            epsilon: args.epsilon.or(file.epsilon).unwrap_or(0.0),
            scheme,
            scenario,
            k_sobolev: args.k_sobolev.or(file.k_sobolev).unwrap_or(2),
            diagnostics_every: args.diagnostics_every.or(file.diagnostics_every).unwrap_or(1),
            snapshot_every: args.snapshot_every.or(file.snapshot_every),
            out: args.out.clone().or(file.out.clone()).unwrap_or_else(|| PathBuf::from("geoflow-out")),
            seed,
            file,
        };
        if settings.snapshot_every == Some(0) {
            return Err(CliError::Usage("--snapshot-every must be positive".into()));
        }
        settings.flow_config().validate(&settings.metric()?).map_err(usage)?;
        Ok(settings)
    }

    pub fn metric(&self) -> Result<Metric, CliError> {
        match self.metric {
            MetricSpec::Flat => Metric::flat(&self.grid),
            MetricSpec::Conformal(a) => Metric::conformal(&self.grid, a),
        }
        .map_err(usage)
    }

    pub fn target(&self) -> Target {
        EmbeddedTarget::from_kind(self.target)
    }

    pub fn flow_config(&self) -> Config {
        Config {
            diagnostics_stride: self.diagnostics_every,
            k: self.k_sobolev,
            seed: self.seed,
            snapshot_every: self.snapshot_every,
            ..Config::new(self.epsilon, self.dt, self.t_final, self.scheme)
        }
    }

    pub fn initial_state(&self) -> Result<State, CliError> {
        build_initial_data(&self.scenario, Arc::new(self.metric()?), self.target()).map_err(usage)
    }

    pub fn echo(&self) -> Value {
        let mut scenario = json!({ "name": self.scenario.name() });
        match self.scenario {
            Scenario::SpinWave { theta, k } => {
                scenario["theta"] = json!(theta);
                scenario["k_mode"] = json!(k);
            }
            Scenario::RandomSmooth { seed, band } => {
                scenario["seed"] = json!(seed);
                scenario["band"] = json!(band);
            }
            Scenario::S6HopfLike { seed } => scenario["seed"] = json!(seed),
            _ => {}
        }
        json!({
            "target": self.target.token(),
            "metric": self.metric.to_string(),
            "grid": self.grid,
            "dt": self.dt,
            "t_final": self.t_final,
            "epsilon": self.epsilon,
            "scheme": self.scheme.token(),
            "scenario": scenario,
            "k_sobolev": self.k_sobolev,
            "diagnostics_every": self.diagnostics_every,
            "snapshot_every": self.snapshot_every,
            "seed": self.seed,
        })
    }
}
