//! Run configuration: TOML file, command-line overrides, validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use xysync::evolve::{uniform_grid, RateOptions};
use xysync::reference::NoiseChannels;
use xysync::trajectories::{Scheme, TrajectoryConfig};
use xysync::{ChainSpec, InitialState, NoiseSpec};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Engine {
    /// Noise-averaged correlation matrix.
    #[default]
    Jw,
    /// Full density matrix (N <= 6).
    Reference,
    /// Ensemble of noise realizations.
    Trajectories,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    pub coupling: f64,
    pub field: f64,
}

impl Default for ChainSection {
    fn default() -> Self {
        ChainSection { n: None, coupling: 1.0, field: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub sites: Vec<usize>,
    pub gamma: f64,
    pub channels: NoiseChannels,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialSection {
    /// Excitation probability per site.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub populations: Option<Vec<f64>>,
    /// Single excited site; the default is site 1.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub site: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeSection {
    pub t_max: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_points: Option<usize>,
}

impl Default for TimeSection {
    fn default() -> Self {
        TimeSection { t_max: 100.0, dt: None, n_points: None }
    }
}

pub const DEFAULT_DT: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RatesSection {
    pub magnetization_filter: bool,
    pub factor: f64,
    pub lambda_tol: f64,
    pub mu_tol: f64,
    pub filter_threshold: f64,
}

impl Default for RatesSection {
    fn default() -> Self {
        let o = RateOptions::default();
        RatesSection {
            magnetization_filter: o.magnetization_filter,
            factor: o.factor,
            lambda_tol: o.lambda_tol,
            mu_tol: o.mu_tol,
            filter_threshold: o.filter_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectorySection {
    pub dt: f64,
    pub n_traj: u64,
    pub scheme: Scheme,
    pub output_dt: f64,
}

impl Default for TrajectorySection {
    fn default() -> Self {
        TrajectorySection { dt: 1e-3, n_traj: 1000, scheme: Scheme::default(), output_dt: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsSection {
    /// Site pairs such as `"1-4"`.
    pub pearson: Vec<String>,
    pub concurrence: Vec<String>,
    /// Trailing window; one period of the slowest visible oscillation when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pearson_window: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// Chain lengths; `chain.n` alone when empty.
    pub ns: Vec<usize>,
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub points: usize,
    pub continuity_check: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection { ns: Vec::new(), gamma_min: 1e-3, gamma_max: 10.0, points: 60, continuity_check: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TwoQubitSection {
    pub coupling: f64,
    /// Dephasing rate `Gamma` on spin 1.
    pub gamma: f64,
    pub p1: f64,
    pub p2: f64,
}

impl Default for TwoQubitSection {
    fn default() -> Self {
        TwoQubitSection { coupling: 1.0, gamma: 2.0, p1: 1.0, p2: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
    pub engine: Engine,
    pub chain: ChainSection,
    pub noise: NoiseSection,
    pub initial: InitialSection,
    pub time: TimeSection,
    pub rates: RatesSection,
    pub trajectories: TrajectorySection,
    pub diagnostics: DiagnosticsSection,
    pub sweep: SweepSection,
    pub twoqubit: TwoQubitSection,
}

/// Values given on the command line; each one replaces the file value.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// TOML configuration file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory [default: $XYSYNC_OUTPUT_DIR, else ./xysync-out].
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Chain length.
    #[arg(long = "N", value_name = "N")]
    pub n: Option<usize>,
    /// Coupling J [default: 1].
    #[arg(long = "J", value_name = "J")]
    pub coupling: Option<f64>,
    /// Transverse field h [default: 1].
    #[arg(long = "h", value_name = "H", allow_hyphen_values = true)]
    pub field: Option<f64>,
    /// Noisy sites, comma separated.
    #[arg(long, value_delimiter = ',', value_name = "U[,V]")]
    pub sites: Option<Vec<usize>>,
    /// Noise strength gamma [default: 0].
    #[arg(long, allow_hyphen_values = true)]
    pub gamma: Option<f64>,
    /// Initial excitation probabilities, comma separated [default: site 1 excited].
    #[arg(long, value_delimiter = ',', value_name = "P1,..,PN")]
    pub populations: Option<Vec<f64>>,
    /// Single initially excited site.
    #[arg(long = "initial-site", value_name = "J")]
    pub initial_site: Option<usize>,
    /// End of the time grid [default: 100].
    #[arg(long = "t-max")]
    pub t_max: Option<f64>,
    /// Time step of the output grid [default: 0.05].
    #[arg(long)]
    pub dt: Option<f64>,
    /// Number of grid points (alternative to --dt).
    #[arg(long = "n-points")]
    pub n_points: Option<usize>,
    /// Random seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Disable the magnetization filter in rate extraction.
    #[arg(long = "no-filter")]
    pub no_filter: bool,
}

pub fn default_output_dir() -> PathBuf {
    std::env::var_os(crate::OUTPUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("xysync-out"))
}

fn field(name: &str, message: impl std::fmt::Display) -> CliError {
    CliError::Config { field: name.to_string(), message: message.to_string() }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config { field: "config".into(), message: e.message().to_string() })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| field("--config", format!("cannot read {}: {e}", path.display())))?;
        RunConfig::from_toml(&text).map_err(|e| match e {
            CliError::Config { message, .. } => CliError::Config { field: path.display().to_string(), message },
            other => other,
        })
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = &o.out {
            self.output_dir = Some(v.clone());
        }
        if let Some(v) = o.n {
            self.chain.n = Some(v);
        }
        if let Some(v) = o.coupling {
            self.chain.coupling = v;
        }
        if let Some(v) = o.field {
            self.chain.field = v;
        }
        if let Some(v) = &o.sites {
            self.noise.sites = v.clone();
        }
        if let Some(v) = o.gamma {
            self.noise.gamma = v;
        }
        if let Some(v) = &o.populations {
            self.initial.populations = Some(v.clone());
            self.initial.site = None;
        }
        if let Some(v) = o.initial_site {
            self.initial.site = Some(v);
            self.initial.populations = None;
        }
        if let Some(v) = o.t_max {
            self.time.t_max = v;
        }
        if let Some(v) = o.dt {
            self.time.dt = Some(v);
            self.time.n_points = None;
        }
        if let Some(v) = o.n_points {
            self.time.n_points = Some(v);
            self.time.dt = None;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if o.no_filter {
            self.rates.magnetization_filter = false;
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(default_output_dir)
    }

    /// Checks every section that has been filled in.
    pub fn validate(&self) -> Result<(), CliError> {
        let c = &self.chain;
        if let Some(n) = c.n {
            let chain = ChainSpec::new(n, c.coupling, c.field).map_err(|e| {
                let name = match e {
                    xysync::Error::ChainTooShort(_) => "chain.n",
                    xysync::Error::BadCoupling(_) => "chain.coupling",
                    _ => "chain.field",
                };
                field(name, e)
            })?;
            self.noise_spec_for(&chain)?;
            self.initial_state(n)?;
        } else {
            ChainSpec::new(2, c.coupling, c.field).map_err(|e| {
                field(if matches!(e, xysync::Error::BadCoupling(_)) { "chain.coupling" } else { "chain.field" }, e)
            })?;
        }
        if !(self.noise.gamma.is_finite() && self.noise.gamma >= 0.0) {
            return Err(field("noise.gamma", xysync::Error::NegativeGamma(self.noise.gamma)));
        }
        if self.time.dt.is_some() && self.time.n_points.is_some() {
            return Err(field("time", "set either dt or n_points, not both"));
        }
        self.grid()?;
        self.rate_options()?;
        self.trajectory_config()?;
        for p in &self.diagnostics.pearson {
            parse_pair(p, self.chain.n).map_err(|m| field("diagnostics.pearson", m))?;
        }
        for p in &self.diagnostics.concurrence {
            parse_pair(p, self.chain.n).map_err(|m| field("diagnostics.concurrence", m))?;
        }
        if let Some(w) = self.diagnostics.pearson_window {
            if !(w.is_finite() && w > 0.0) {
                return Err(field("diagnostics.pearson_window", format!("must be positive, got {w}")));
            }
        }
        let s = &self.sweep;
        if !(s.gamma_min > 0.0 && s.gamma_max > s.gamma_min && s.gamma_max.is_finite()) {
            return Err(field(
                "sweep.gamma_min",
                format!("need 0 < gamma_min < gamma_max, got [{}, {}]", s.gamma_min, s.gamma_max),
            ));
        }
        if s.points < 3 {
            return Err(field("sweep.points", format!("need at least 3, got {}", s.points)));
        }
        if let Some(&n) = s.ns.iter().find(|&&n| n < 2) {
            return Err(field("sweep.ns", xysync::Error::ChainTooShort(n)));
        }
        let t = &self.twoqubit;
        if !(t.coupling.is_finite() && t.coupling > 0.0) {
            return Err(field("twoqubit.coupling", xysync::Error::BadCoupling(t.coupling)));
        }
        if !(t.gamma.is_finite() && t.gamma >= 0.0) {
            return Err(field("twoqubit.gamma", xysync::Error::NegativeGamma(t.gamma)));
        }
        for (name, p) in [("twoqubit.p1", t.p1), ("twoqubit.p2", t.p2)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(field(name, format!("probability must lie in [0,1], got {p}")));
            }
        }
        Ok(())
    }

    pub fn chain(&self) -> Result<ChainSpec, CliError> {
        let n = self.chain.n.ok_or_else(|| field("chain.n", "required (set chain.n or pass --N)"))?;
        ChainSpec::new(n, self.chain.coupling, self.chain.field).map_err(|e| field("chain", e))
    }

    fn noise_spec_for(&self, chain: &ChainSpec) -> Result<Option<NoiseSpec>, CliError> {
        if self.noise.sites.is_empty() {
            return Ok(None);
        }
        let spec = NoiseSpec::new(self.noise.sites.clone(), self.noise.gamma).map_err(|e| {
            let name = if matches!(e, xysync::Error::NegativeGamma(_)) { "noise.gamma" } else { "noise.sites" };
            field(name, e)
        })?;
        spec.validate(chain).map_err(|e| field("noise.sites", e))?;
        Ok(Some(spec))
    }

    pub fn noise(&self, chain: &ChainSpec) -> Result<NoiseSpec, CliError> {
        self.noise_spec_for(chain)?
            .ok_or_else(|| field("noise.sites", "required (set noise.sites or pass --sites)"))
    }

    pub fn initial_state(&self, n: usize) -> Result<InitialState, CliError> {
        let init = &self.initial;
        let state = match (&init.populations, init.site) {
            (Some(_), Some(_)) => return Err(field("initial", "set either populations or site, not both")),
            (Some(p), None) => {
                if p.len() != n {
                    return Err(field("initial.populations", format!("expected {n} values, got {}", p.len())));
                }
                InitialState::Populations(p.clone())
            }
            (None, Some(site)) => InitialState::excitation_on(n, site).map_err(|e| field("initial.site", e))?,
            (None, None) => InitialState::first_site_excited(n),
        };
        state.correlation_matrix(n).map_err(|e| field("initial.populations", e))?;
        Ok(state)
    }

    pub fn grid(&self) -> Result<Vec<f64>, CliError> {
        let t = &self.time;
        let dt = match (t.dt, t.n_points) {
            (_, Some(p)) if p < 2 => return Err(field("time.n_points", format!("need at least 2, got {p}"))),
            (_, Some(p)) => t.t_max / (p - 1) as f64,
            (Some(dt), None) => dt,
            (None, None) => DEFAULT_DT,
        };
        if !(t.t_max.is_finite() && t.t_max > 0.0) {
            return Err(field("time.t_max", format!("must be positive, got {}", t.t_max)));
        }
        uniform_grid(t.t_max, dt).map_err(|e| field("time.dt", e))
    }

    pub fn rate_options(&self) -> Result<RateOptions, CliError> {
        let r = &self.rates;
        for (name, v) in [
            ("rates.factor", r.factor),
            ("rates.lambda_tol", r.lambda_tol),
            ("rates.mu_tol", r.mu_tol),
            ("rates.filter_threshold", r.filter_threshold),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(field(name, format!("must be positive, got {v}")));
            }
        }
        Ok(RateOptions {
            lambda_tol: r.lambda_tol,
            mu_tol: r.mu_tol,
            factor: r.factor,
            magnetization_filter: r.magnetization_filter,
            filter_threshold: r.filter_threshold,
        })
    }

    pub fn trajectory_config(&self) -> Result<TrajectoryConfig, CliError> {
        let t = &self.trajectories;
        let cfg = TrajectoryConfig {
            dt: t.dt,
            t_max: self.time.t_max,
            n_traj: t.n_traj,
            seed: self.seed,
            scheme: t.scheme,
            output_dt: t.output_dt,
        };
        cfg.validate().map_err(|e| field("trajectories", e))?;
        Ok(cfg)
    }

    pub fn gamma_grid(&self) -> Vec<f64> {
        xysync::sweep::log_grid(self.sweep.gamma_min, self.sweep.gamma_max, self.sweep.points)
    }
}

/// `"i-j"` with `1 <= i, j <= n` and `i != j`.
pub fn parse_pair(text: &str, n: Option<usize>) -> Result<(usize, usize), String> {
    let (a, b) = text
        .split_once('-')
        .ok_or_else(|| format!("site pair `{text}` must look like `1-4`"))?;
    let parse = |s: &str| s.trim().parse::<usize>().map_err(|_| format!("bad site `{s}` in pair `{text}`"));
    let (i, j) = (parse(a)?, parse(b)?);
    if i == j {
        return Err(format!("pair `{text}` repeats site {i}"));
    }
    if let Some(n) = n {
        for s in [i, j] {
            if s == 0 || s > n {
                return Err(format!("site index {s} out of range [1,{n}]"));
            }
        }
    }
    Ok((i, j))
}

/// `--diagnostics pearson:1-4,2-3` or `concurrence:1-5`.
pub fn apply_diagnostics_flag(config: &mut RunConfig, spec: &str) -> Result<(), CliError> {
    let (kind, pairs) = spec
        .split_once(':')
        .ok_or_else(|| field("--diagnostics", format!("`{spec}` must look like pearson:1-4,2-3")))?;
    let list: Vec<String> = pairs.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    match kind {
        "pearson" => config.diagnostics.pearson.extend(list),
        "concurrence" => config.diagnostics.concurrence.extend(list),
        other => return Err(field("--diagnostics", format!("unknown diagnostic `{other}` (pearson, concurrence)"))),
    }
    Ok(())
}
