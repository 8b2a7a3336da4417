//! `xysync`: command-line front end.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use xysync::reference::NoiseChannels;
use xysync::trajectories::Scheme;

use config::{apply_diagnostics_flag, Engine, Overrides, RunConfig};
use error::{exit, CliError};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "XYSYNC_OUTPUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "xysync", version, about = "Noise-induced synchronization in XY spin chains")]
struct Cli {
    /// Worker threads [default: one per core].
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Tabulate magnetization modes with frequencies and decay constants.
    Modes(Plain),
    /// Decide whether the noise leaves exactly one mode undamped.
    SyncCheck(Plain),
    /// Spectrum of the noise-averaged generator and the synchronization rate.
    Spectrum(Plain),
    /// Magnetization dynamics with optional diagnostics.
    Evolve(EvolveArgs),
    /// Stochastic trajectories: ensemble mean or one realization.
    Traj(TrajArgs),
    /// Synchronization rate against gamma, with the optimum per chain length.
    Sweep(SweepArgs),
    /// Fit r_max(N) and gamma_opt(N) to a + b/(N+c)^2.
    Fit(FitArgs),
    /// Two dephased spins: closed form against the reference engine.
    Twoqubit(TwoQubitArgs),
}

#[derive(Debug, Args)]
struct Plain {
    #[command(flatten)]
    o: Overrides,
}

fn parse_channels(s: &str) -> Result<NoiseChannels, String> {
    match s {
        "shared" => Ok(NoiseChannels::Shared),
        "independent" => Ok(NoiseChannels::Independent),
        _ => Err(format!("expected `shared` or `independent`, got `{s}`")),
    }
}

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    match s {
        "strang-splitting" | "strang" => Ok(Scheme::StrangSplitting),
        "stratonovich-heun" | "heun" => Ok(Scheme::StratonovichHeun),
        "euler-maruyama" => Ok(Scheme::EulerMaruyama),
        _ => Err(format!("expected strang-splitting, stratonovich-heun or euler-maruyama, got `{s}`")),
    }
}

#[derive(Debug, Default, Args)]
struct DiagnosticArgs {
    /// Diagnostics such as `pearson:1-4,2-3` or `concurrence:1-5` (repeatable).
    #[arg(long = "diagnostics", value_name = "KIND:PAIRS")]
    diagnostics: Vec<String>,
    /// Trailing Pearson window [default: one period of the slowest visible mode].
    #[arg(long = "pearson-window")]
    pearson_window: Option<f64>,
}

impl DiagnosticArgs {
    fn apply(&self, c: &mut RunConfig) -> Result<(), CliError> {
        for d in &self.diagnostics {
            apply_diagnostics_flag(c, d)?;
        }
        if let Some(w) = self.pearson_window {
            c.diagnostics.pearson_window = Some(w);
        }
        Ok(())
    }
}

#[derive(Debug, Default, Args)]
struct TrajectoryArgs {
    /// Number of trajectories.
    #[arg(long = "n-traj")]
    n_traj: Option<u64>,
    /// Integration step.
    #[arg(long = "traj-dt")]
    traj_dt: Option<f64>,
    /// Spacing of recorded points.
    #[arg(long = "output-dt")]
    output_dt: Option<f64>,
    /// strang-splitting, stratonovich-heun or euler-maruyama.
    #[arg(long, value_parser = parse_scheme)]
    scheme: Option<Scheme>,
}

impl TrajectoryArgs {
    fn apply(&self, c: &mut RunConfig) {
        let t = &mut c.trajectories;
        if let Some(v) = self.n_traj {
            t.n_traj = v;
        }
        if let Some(v) = self.traj_dt {
            t.dt = v;
        }
        if let Some(v) = self.output_dt {
            t.output_dt = v;
        }
        if let Some(v) = self.scheme {
            t.scheme = v;
        }
    }
}

#[derive(Debug, Args)]
struct EvolveArgs {
    #[command(flatten)]
    o: Overrides,
    /// Dynamics engine [default: jw].
    #[arg(long, value_enum)]
    engine: Option<Engine>,
    /// Noise channels for two noisy sites: shared or independent.
    #[arg(long, value_parser = parse_channels)]
    channels: Option<NoiseChannels>,
    #[command(flatten)]
    diag: DiagnosticArgs,
    #[command(flatten)]
    traj: TrajectoryArgs,
}

#[derive(Debug, Args)]
struct TrajArgs {
    #[command(flatten)]
    o: Overrides,
    #[command(flatten)]
    traj: TrajectoryArgs,
    #[command(flatten)]
    diag: DiagnosticArgs,
    /// Write one realization with this index instead of the ensemble.
    #[arg(long)]
    single: Option<u64>,
}

#[derive(Debug, Default, Args)]
struct GridArgs {
    /// Chain lengths, comma separated [default: --N].
    #[arg(long, value_delimiter = ',')]
    ns: Option<Vec<usize>>,
    #[arg(long = "gamma-min")]
    gamma_min: Option<f64>,
    #[arg(long = "gamma-max")]
    gamma_max: Option<f64>,
    /// Log-spaced grid points [default: 60].
    #[arg(long)]
    points: Option<usize>,
}

impl GridArgs {
    fn apply(&self, c: &mut RunConfig) {
        let s = &mut c.sweep;
        if let Some(v) = &self.ns {
            s.ns = v.clone();
        }
        if let Some(v) = self.gamma_min {
            s.gamma_min = v;
        }
        if let Some(v) = self.gamma_max {
            s.gamma_max = v;
        }
        if let Some(v) = self.points {
            s.points = v;
        }
    }
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    o: Overrides,
    #[command(flatten)]
    grid: GridArgs,
    /// Recompute rates at grid midpoints and flag jumps.
    #[arg(long = "continuity-check")]
    continuity_check: bool,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    o: Overrides,
    #[command(flatten)]
    grid: GridArgs,
    /// Fit an existing optimum.csv instead of sweeping.
    #[arg(long, value_name = "PATH")]
    input: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TwoQubitArgs {
    #[command(flatten)]
    o: Overrides,
    /// Dephasing rate Gamma on spin 1 [default: 2].
    #[arg(long = "Gamma")]
    big_gamma: Option<f64>,
    /// Initial excitation probability of spin 1 [default: 1].
    #[arg(long)]
    p1: Option<f64>,
    /// Initial excitation probability of spin 2 [default: 0].
    #[arg(long)]
    p2: Option<f64>,
}

/// Config file, then flags, then validation.
fn resolve(o: &Overrides, extra: impl FnOnce(&mut RunConfig) -> Result<(), CliError>) -> Result<RunConfig, CliError> {
    let mut c = match &o.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    c.apply(o);
    extra(&mut c)?;
    c.validate()?;
    Ok(c)
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Config { field: "--threads".into(), message: "must be at least 1".into() });
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Config { field: "--threads".into(), message: e.to_string() })?;
    }
    match cli.command {
        Command::Modes(a) => commands::modes(&resolve(&a.o, |_| Ok(()))?),
        Command::SyncCheck(a) => commands::sync_check(&resolve(&a.o, |_| Ok(()))?),
        Command::Spectrum(a) => commands::spectrum(&resolve(&a.o, |_| Ok(()))?),
        Command::Evolve(a) => {
            let c = resolve(&a.o, |c| {
                if let Some(e) = a.engine {
                    c.engine = e;
                }
                if let Some(ch) = a.channels {
                    c.noise.channels = ch;
                }
                a.traj.apply(c);
                a.diag.apply(c)
            })?;
            commands::evolve(&c)
        }
        Command::Traj(a) => {
            let c = resolve(&a.o, |c| {
                c.engine = Engine::Trajectories;
                a.traj.apply(c);
                a.diag.apply(c)
            })?;
            commands::trajectories(&c, a.single, "traj")
        }
        Command::Sweep(a) => {
            let c = resolve(&a.o, |c| {
                a.grid.apply(c);
                if a.continuity_check {
                    c.sweep.continuity_check = true;
                }
                Ok(())
            })?;
            commands::sweep(&c)
        }
        Command::Fit(a) => {
            let c = resolve(&a.o, |c| {
                a.grid.apply(c);
                Ok(())
            })?;
            commands::fit(&c, a.input.as_deref())
        }
        Command::Twoqubit(a) => {
            let c = resolve(&a.o, |c| {
                let t = &mut c.twoqubit;
                if let Some(j) = a.o.coupling {
                    t.coupling = j;
                }
                if let Some(g) = a.big_gamma {
                    t.gamma = g;
                }
                if let Some(p) = a.p1 {
                    t.p1 = p;
                }
                if let Some(p) = a.p2 {
                    t.p2 = p;
                }
                Ok(())
            })?;
            commands::twoqubit(&c)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::CONFIG } else { exit::OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from(["xysync", "evolve", "--N", "5", "--sites", "2,3", "--gamma", "0.2", "--engine", "reference"]).unwrap();
        let Command::Evolve(a) = cli.command else { panic!() };
        assert_eq!(a.o.sites, Some(vec![2, 3]));
        assert_eq!(a.engine, Some(Engine::Reference));
        assert!(Cli::try_parse_from(["xysync", "evolve", "--engine", "magic"]).is_err());
    }
}
