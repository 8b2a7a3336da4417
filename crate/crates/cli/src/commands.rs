//! Subcommand implementations.

use std::path::Path;

use serde::Serialize;
use xysync::diagnostics::{concurrence_series, concurrence_wootters, pearson, two_qubit_analytic};
use xysync::evolve::{
    liouville_spectrum, propagate, rate_report, AveragedGenerator, CorrelationMatrix, RateOptions, RateReport,
};
use xysync::perturbation::{mode_table, sync_condition, Degeneracy, EndRelation};
use xysync::reference::{initial_density, reduced_two_qubit, NoiseChannels, ReferenceEngine};
use xysync::sweep::{continuity_check, lieb_robinson_report, rate_curve, scaling_study, ScalingStudy, SweepResult};
use xysync::trajectories::{ensemble_average, integrate_single};
use xysync::{ChainSpec, Error, InitialState, NoiseSpec};

use crate::config::{parse_pair, Engine, RunConfig};
use crate::error::CliError;
use crate::output::{num, opt, series_csv, Csv, OutputDir};

/// Relative jump between neighbouring grid rates that the continuity check flags.
pub const CONTINUITY_MAX_RELATIVE: f64 = 0.2;

fn pair_label((i, j): (usize, usize)) -> String {
    format!("{i}-{j}")
}

/// Ten decimals with trailing zeros dropped, for terminal reports.
fn short(x: f64) -> String {
    let s = format!("{x:.10}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

fn join(values: &[f64]) -> String {
    values.iter().copied().map(num).collect::<Vec<_>>().join(" ")
}

fn degeneracy_label(d: &Degeneracy) -> String {
    match d {
        Degeneracy::Nondegenerate => "nondegenerate".into(),
        Degeneracy::Partner { k, l } => format!("partner:{k}-{l}"),
        Degeneracy::Accidental { pairs } => {
            format!("accidental:{}", pairs.iter().copied().map(pair_label).collect::<Vec<_>>().join(";"))
        }
    }
}

/// The averaged generator and the trajectory integrator model one shared noise
/// process; independent channels differ once two sites are noisy.
fn require_shared(config: &RunConfig, noise: &NoiseSpec, engine: &str) -> Result<(), CliError> {
    if config.noise.channels == NoiseChannels::Independent && noise.sites().len() > 1 {
        return Err(CliError::Config {
            field: "noise.channels".into(),
            message: format!("the {engine} engine models a shared noise process; use the reference engine for independent channels"),
        });
    }
    Ok(())
}

struct Setup {
    chain: ChainSpec,
    noise: NoiseSpec,
    initial: InitialState,
}

fn setup(config: &RunConfig) -> Result<Setup, CliError> {
    let chain = config.chain()?;
    let noise = config.noise(&chain)?;
    let initial = config.initial_state(chain.n())?;
    Ok(Setup { chain, noise, initial })
}

pub fn modes(config: &RunConfig) -> Result<(), CliError> {
    let s = setup(config)?;
    let table = mode_table(&s.chain, &s.noise, &s.initial)?;
    let mut out = OutputDir::create(&config.output_dir())?;
    let mut csv = Csv::new(&["k", "l", "frequency", "degeneracy", "m", "m_exact", "amplitude_re", "amplitude_im"]);
    for e in &table.entries {
        csv.row(vec![
            e.k.to_string(),
            e.l.to_string(),
            num(e.frequency),
            degeneracy_label(&e.degeneracy),
            num(e.decay),
            e.decay_exact.map(|(p, q)| format!("{p}/{q}")).unwrap_or_default(),
            num(e.amplitude.re),
            num(e.amplitude.im),
        ]);
    }
    out.write_csv("modes.csv", csv)?;
    let mut clusters = Csv::new(&["frequency", "pairs", "rates"]);
    for c in &table.clusters {
        clusters.row(vec![
            num(c.frequency),
            c.pairs.iter().copied().map(pair_label).collect::<Vec<_>>().join(" "),
            join(&c.rates),
        ]);
    }
    out.write_csv("clusters.csv", clusters)?;
    let zeros = table.zero_decay_pairs();
    println!(
        "N={} noise sites {:?}: {} modes, {} distinct frequencies, zero-decay pairs {:?}",
        table.n,
        s.noise.sites(),
        table.entries.len(),
        table.distinct_frequencies(),
        zeros
    );
    out.finish("modes", config)?;
    Ok(())
}

pub fn sync_check(config: &RunConfig) -> Result<(), CliError> {
    let chain = config.chain()?;
    let noise = config.noise(&chain)?;
    let report = sync_condition(&chain, &noise)?;
    let yes_no = |b: bool| if b { "yes" } else { "no" };
    println!("chain N={} noise sites {:?}", chain.n(), noise.sites());
    println!("stable synchronization: {}", yes_no(report.satisfied));
    if let Some(p) = report.surviving_pair {
        println!("surviving pair: ({},{})", p.0, p.1);
    }
    if let Some(v) = &report.stable_mode {
        println!("stable mode: ({})", v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(", "));
    }
    if let Some(f) = report.frequency {
        println!("frequency: {}", short(f));
    }
    if let Some(r) = report.end_relation {
        println!("first and last spin: {}", if r == EndRelation::InPhase { "in phase" } else { "anti-phase" });
    }
    if let Some(g) = report.decay_gap {
        println!("slowest remaining decay: {} gamma", short(g));
    }
    if !report.satisfied {
        println!("zero-decay pairs: {:?}", report.zero_decay_pairs);
    }
    println!("single sites giving stable synchronization: {:?}", report.admissible_sites);
    let mut out = OutputDir::create(&config.output_dir())?;
    out.write_json("sync.json", &report)?;
    out.finish("sync-check", config)?;
    Ok(())
}

#[derive(Serialize)]
struct RatesFile {
    gamma: f64,
    options: RateOptions,
    report: Option<RateReport>,
    /// Set when no decaying oscillating mode beyond the surviving one exists.
    note: Option<String>,
}

fn rates_or_note(spectrum: &xysync::evolve::LiouvilleSpectrum, options: &RateOptions) -> Result<(Option<RateReport>, Option<String>), CliError> {
    match rate_report(spectrum, options) {
        Ok(r) => Ok((Some(r), None)),
        Err(e @ Error::NoOscillatingMode(_)) => Ok((None, Some(e.to_string()))),
        Err(e) => Err(e.into()),
    }
}

pub fn spectrum(config: &RunConfig) -> Result<(), CliError> {
    let chain = config.chain()?;
    let noise = config.noise(&chain)?;
    let options = config.rate_options()?;
    let g = AveragedGenerator::new(&chain, &noise)?;
    let spectrum = liouville_spectrum(&g, false)?;
    let mut out = OutputDir::create(&config.output_dir())?;
    let mut csv = Csv::new(&["mu", "lambda", "magnetization_weight"]);
    for m in &spectrum.modes {
        csv.row(vec![num(m.mu), num(m.lambda), num(m.magnetization_weight)]);
    }
    out.write_csv("spectrum.csv", csv)?;
    let (report, note) = rates_or_note(&spectrum, &options)?;
    match (&report, &note) {
        (Some(r), _) => {
            let t = if options.magnetization_filter { r.filtered } else { r.unfiltered };
            println!("mu_s = {}  r = {}  tau_s = {}", t.mu_s, t.r, t.tau_s);
        }
        (None, Some(n)) => println!("{n}"),
        _ => {}
    }
    out.write_json("rates.json", &RatesFile { gamma: noise.gamma(), options, report, note })?;
    out.finish("spectrum", config)?;
    Ok(())
}

/// One period of the slowest oscillation visible in the magnetizations.
fn auto_window(chain: &ChainSpec, noise: &NoiseSpec, options: &RateOptions) -> Result<f64, CliError> {
    let g = AveragedGenerator::new(chain, noise)?;
    let spectrum = liouville_spectrum(&g, false)?;
    spectrum
        .modes
        .iter()
        .filter(|m| m.lambda > options.lambda_tol && m.magnetization_weight > options.filter_threshold)
        .min_by(|a, b| a.mu.total_cmp(&b.mu))
        .map(|m| std::f64::consts::TAU / m.lambda)
        .ok_or_else(|| Error::NoOscillatingMode(f64::NAN).into())
}

fn pearson_csv(config: &RunConfig, s: &Setup, times: &[f64], mags: &[Vec<f64>]) -> Result<Option<Csv>, CliError> {
    if config.diagnostics.pearson.is_empty() {
        return Ok(None);
    }
    let window = match config.diagnostics.pearson_window {
        Some(w) => w,
        None => auto_window(&s.chain, &s.noise, &config.rate_options()?)?,
    };
    let mut columns = Vec::new();
    for p in &config.diagnostics.pearson {
        let (i, j) = parse_pair(p, Some(s.chain.n())).map_err(|m| CliError::Config { field: "diagnostics.pearson".into(), message: m })?;
        let x: Vec<f64> = mags.iter().map(|r| r[i - 1]).collect();
        let y: Vec<f64> = mags.iter().map(|r| r[j - 1]).collect();
        columns.push(pearson(times, &x, &y, window, (i, j))?);
    }
    let mut header = vec!["tau".to_string()];
    header.extend(columns.iter().map(|c| format!("C_{}_{}", c.pair.0, c.pair.1)));
    let mut csv = Csv::new(&header);
    for (k, t) in times.iter().enumerate() {
        let mut row = vec![num(*t)];
        row.extend(columns.iter().map(|c| opt(c.values[k])));
        csv.row(row);
    }
    eprintln!("pearson window {window}");
    Ok(Some(csv))
}

fn concurrence_pairs(config: &RunConfig, n: usize) -> Result<Vec<(usize, usize)>, CliError> {
    config
        .diagnostics
        .concurrence
        .iter()
        .map(|p| parse_pair(p, Some(n)).map_err(|m| CliError::Config { field: "diagnostics.concurrence".into(), message: m }))
        .collect()
}

fn concurrence_csv(times: &[f64], pairs: &[(usize, usize)], columns: &[Vec<f64>]) -> Csv {
    let mut header = vec!["tau".to_string()];
    header.extend(pairs.iter().map(|(i, j)| format!("concurrence_{i}_{j}")));
    let mut csv = Csv::new(&header);
    for (k, t) in times.iter().enumerate() {
        let mut row = vec![num(*t)];
        row.extend(columns.iter().map(|c| num(c[k])));
        csv.row(row);
    }
    csv
}

pub fn evolve(config: &RunConfig) -> Result<(), CliError> {
    if config.engine == Engine::Trajectories {
        return trajectories(config, None, "evolve");
    }
    let s = setup(config)?;
    let n = s.chain.n();
    let grid = config.grid()?;
    let pairs = concurrence_pairs(config, n)?;
    let (mags, concurrence): (Vec<Vec<f64>>, Vec<Vec<f64>>) = match config.engine {
        Engine::Jw => {
            require_shared(config, &s.noise, "jw")?;
            let g = AveragedGenerator::new(&s.chain, &s.noise)?;
            let prop = propagate(&g, &s.initial, &grid)?;
            if let Some(reason) = &prop.fallback_reason {
                eprintln!("note: spectral propagation abandoned ({reason}); used matrix exponentials");
            }
            let conc = pairs
                .iter()
                .map(|&(i, j)| concurrence_series(&prop.states, i, j).map(|c| c.values))
                .collect::<Result<_, _>>()?;
            (prop.magnetizations(), conc)
        }
        Engine::Reference => {
            let engine = ReferenceEngine::new(&s.chain, &s.noise, config.noise.channels)?;
            let rho0 = initial_density(n, &s.initial)?;
            let states = engine.evolve(&rho0, &grid)?;
            let mut conc = Vec::with_capacity(pairs.len());
            for &(i, j) in &pairs {
                conc.push(
                    states
                        .iter()
                        .map(|r| reduced_two_qubit(r, i, j).and_then(|rho| concurrence_wootters(&rho)))
                        .collect::<Result<Vec<_>, _>>()?,
                );
            }
            (states.iter().map(|r| r.magnetizations()).collect(), conc)
        }
        Engine::Trajectories => unreachable!(),
    };
    let mut out = OutputDir::create(&config.output_dir())?;
    out.write_csv("magnetizations.csv", series_csv("tau", "sz", &grid, &mags))?;
    if let Some(csv) = pearson_csv(config, &s, &grid, &mags)? {
        out.write_csv("pearson.csv", csv)?;
    }
    if !pairs.is_empty() {
        out.write_csv("concurrence.csv", concurrence_csv(&grid, &pairs, &concurrence))?;
    }
    let last = mags.last().map(|r| join(r)).unwrap_or_default();
    println!("{} points to tau = {}; final sz: {last}", grid.len(), grid.last().copied().unwrap_or(0.0));
    out.finish("evolve", config)?;
    Ok(())
}

/// Ensemble (or, with `single`, one realization) of the stochastic dynamics.
pub fn trajectories(config: &RunConfig, single: Option<u64>, command: &str) -> Result<(), CliError> {
    let s = setup(config)?;
    require_shared(config, &s.noise, "trajectory")?;
    if !config.diagnostics.concurrence.is_empty() {
        return Err(Error::Precondition(
            "concurrence needs the noise-averaged state; the trajectory engine only provides mean magnetizations".into(),
        )
        .into());
    }
    let tc = config.trajectory_config()?;
    let mut out = OutputDir::create(&config.output_dir())?;
    if let Some(k) = single {
        let traj = integrate_single(&s.chain, &s.noise, &s.initial, &tc, k)?;
        for w in &traj.warnings {
            eprintln!("warning: {w}");
        }
        let times: Vec<f64> = traj.states.iter().map(|z| z.time).collect();
        let mags: Vec<Vec<f64>> = traj.states.iter().map(CorrelationMatrix::magnetizations).collect();
        out.write_csv(&format!("trajectory_{k}.csv"), series_csv("tau", "sz", &times, &mags))?;
        println!("trajectory {k}: {} points", times.len());
    } else {
        let ens = ensemble_average(&s.chain, &s.noise, &s.initial, &tc)?;
        for w in &ens.warnings {
            eprintln!("warning: {w}");
        }
        out.write_csv("magnetizations.csv", series_csv("tau", "sz", &ens.times, &ens.mean_magnetizations))?;
        out.write_csv("magnetizations_stderr.csv", series_csv("tau", "stderr", &ens.times, &ens.stderr))?;
        if let Some(csv) = pearson_csv(config, &s, &ens.times, &ens.mean_magnetizations)? {
            out.write_csv("pearson.csv", csv)?;
        }
        println!("{} trajectories, {} output points", tc.n_traj, ens.times.len());
    }
    out.finish(command, config)?;
    Ok(())
}

fn sweep_ns(config: &RunConfig) -> Result<Vec<usize>, CliError> {
    if !config.sweep.ns.is_empty() {
        return Ok(config.sweep.ns.clone());
    }
    config
        .chain
        .n
        .map(|n| vec![n])
        .ok_or_else(|| CliError::Config { field: "sweep.ns".into(), message: "required (set sweep.ns, chain.n, --ns or --N)".into() })
}

fn sweep_sites(config: &RunConfig) -> Result<Vec<usize>, CliError> {
    if config.noise.sites.is_empty() {
        return Err(CliError::Config { field: "noise.sites".into(), message: "required (set noise.sites or pass --sites)".into() });
    }
    Ok(config.noise.sites.clone())
}

fn write_curves(out: &mut OutputDir, curves: &[SweepResult]) -> Result<(), CliError> {
    let mut sweep = Csv::new(&["N", "gamma", "r", "r_filtered", "r_unfiltered"]);
    let mut optimum = Csv::new(&["N", "gamma_opt", "r_max", "unimodal", "interior_maxima"]);
    for c in curves {
        for k in 0..c.gammas.len() {
            sweep.row(vec![
                c.n.to_string(),
                num(c.gammas[k]),
                num(c.rates[k]),
                num(c.rates_filtered[k]),
                num(c.rates_unfiltered[k]),
            ]);
        }
        optimum.row(vec![
            c.n.to_string(),
            num(c.gamma_opt),
            num(c.r_max),
            c.unimodal.to_string(),
            c.local_maxima.len().to_string(),
        ]);
    }
    out.write_csv("sweep.csv", sweep)?;
    out.write_csv("optimum.csv", optimum)?;
    Ok(())
}

fn print_optima(curves: &[SweepResult]) {
    println!("{:>4} {:>14} {:>14} {:>9}", "N", "gamma_opt", "r_max", "unimodal");
    for c in curves {
        println!("{:>4} {:>14.6} {:>14.6e} {:>9}", c.n, c.gamma_opt, c.r_max, c.unimodal);
    }
}

pub fn sweep(config: &RunConfig) -> Result<(), CliError> {
    let ns = sweep_ns(config)?;
    let sites = sweep_sites(config)?;
    let options = config.rate_options()?;
    let gammas = config.gamma_grid();
    let mut curves = Vec::with_capacity(ns.len());
    let mut continuity = Csv::new(&["N", "gamma_mid", "r_mid", "flagged"]);
    let mut flagged_total = 0;
    for &n in &ns {
        let chain = ChainSpec::new(n, config.chain.coupling, config.chain.field)?;
        let curve = rate_curve(&chain, &sites, &gammas, &options)?;
        if !curve.unimodal {
            eprintln!("warning: N={n}: {} interior maxima; gamma_opt is the grid argmax", curve.local_maxima.len());
        }
        if config.sweep.continuity_check {
            let check = continuity_check(&chain, &curve, &options, CONTINUITY_MAX_RELATIVE)?;
            flagged_total += check.flagged.len();
            for (k, (&g, &r)) in check.midpoints.iter().zip(&check.midpoint_rates).enumerate() {
                continuity.row(vec![n.to_string(), num(g), num(r), check.flagged.contains(&k).to_string()]);
            }
        }
        curves.push(curve);
    }
    let mut out = OutputDir::create(&config.output_dir())?;
    write_curves(&mut out, &curves)?;
    if config.sweep.continuity_check {
        out.write_csv("continuity.csv", continuity)?;
        println!("continuity check: {flagged_total} flagged intervals");
    }
    print_optima(&curves);
    out.finish("sweep", config)?;
    Ok(())
}

/// `(N, gamma_opt, r_max)` columns.
type Optima = (Vec<usize>, Vec<f64>, Vec<f64>);

/// Reads `N`, `gamma_opt` and `r_max` columns from an optimum table.
pub fn read_optima(path: &Path) -> Result<Optima, CliError> {
    let bad = |message: String| CliError::Input { path: path.display().to_string(), message };
    let text = std::fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty file".into()))?.split(',').map(str::trim).collect();
    let col = |name: &str| header.iter().position(|h| *h == name).ok_or_else(|| bad(format!("missing column `{name}`")));
    let (cn, cg, cr) = (col("N")?, col("gamma_opt")?, col("r_max")?);
    let (mut ns, mut g, mut r) = (Vec::new(), Vec::new(), Vec::new());
    for (k, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let get = |c: usize| fields.get(c).copied().ok_or_else(|| bad(format!("row {} is short", k + 1)));
        ns.push(get(cn)?.parse().map_err(|_| bad(format!("row {}: bad N", k + 1)))?);
        g.push(get(cg)?.parse().map_err(|_| bad(format!("row {}: bad gamma_opt", k + 1)))?);
        r.push(get(cr)?.parse().map_err(|_| bad(format!("row {}: bad r_max", k + 1)))?);
    }
    Ok((ns, g, r))
}

#[derive(Serialize)]
struct FitFile<'a> {
    a: f64,
    b: f64,
    c: f64,
    r_squared: f64,
    ns: &'a [usize],
    r_max: &'a [f64],
    gamma_opt: &'a [f64],
    rate_fit: &'a xysync::sweep::FitResult,
    gamma_opt_fit: &'a xysync::sweep::FitResult,
    lieb_robinson: xysync::sweep::LiebRobinsonReport,
}

pub fn fit(config: &RunConfig, input: Option<&Path>) -> Result<(), CliError> {
    let mut out = OutputDir::create(&config.output_dir())?;
    let study = match input {
        Some(path) => {
            let (ns, gamma_opt, r_max) = read_optima(path)?;
            ScalingStudy::from_optima(&ns, &r_max, &gamma_opt)?
        }
        None => {
            let ns = sweep_ns(config)?;
            let study = scaling_study(
                &ns,
                &sweep_sites(config)?,
                &config.gamma_grid(),
                config.chain.coupling,
                config.chain.field,
                &config.rate_options()?,
            )?;
            write_curves(&mut out, &study.curves)?;
            print_optima(&study.curves);
            study
        }
    };
    let lr = lieb_robinson_report(&study, config.chain.coupling)?;
    let p = study.rate_fit.params;
    let q = study.gamma_opt_fit.params;
    println!("r_max     = {} + {} / (N + {})^2   R2 = {}", p.a, p.b, p.c, study.rate_fit.r_squared);
    println!("gamma_opt = {} + {} / (N + {})^2   R2 = {}", q.a, q.b, q.c, study.gamma_opt_fit.r_squared);
    println!("log-log slope of r_max: {} (shifted {})", lr.loglog_slope, lr.shifted_loglog_slope);
    out.write_json(
        "fit.json",
        &FitFile {
            a: p.a,
            b: p.b,
            c: p.c,
            r_squared: study.rate_fit.r_squared,
            ns: &study.ns,
            r_max: &study.r_max,
            gamma_opt: &study.gamma_opt,
            rate_fit: &study.rate_fit,
            gamma_opt_fit: &study.gamma_opt_fit,
            lieb_robinson: lr,
        },
    )?;
    out.finish("fit", config)?;
    Ok(())
}

/// Closed form next to the reference engine in reduced units `tau = J t`,
/// `gamma = Gamma / J`.
pub fn twoqubit(config: &RunConfig) -> Result<(), CliError> {
    let t = &config.twoqubit;
    let grid = config.grid()?;
    let exact = two_qubit_analytic(t.coupling, t.gamma, t.p1, t.p2, &grid)?;
    let chain = ChainSpec::unit(2)?;
    let noise = NoiseSpec::one_site(1, t.gamma / t.coupling)?;
    let tau: Vec<f64> = grid.iter().map(|&x| x * t.coupling).collect();
    let rho0 = initial_density(2, &InitialState::Populations(vec![t.p1, t.p2]))?;
    let states = ReferenceEngine::new(&chain, &noise, NoiseChannels::Shared)?.evolve(&rho0, &tau)?;
    let mut csv = Csv::new(&["t", "sz_1", "sz_2", "sz_1_reference", "sz_2_reference"]);
    let mut worst = 0.0f64;
    for (k, rho) in states.iter().enumerate() {
        let m = rho.magnetizations();
        worst = worst.max((m[0] - exact.sz1[k]).abs()).max((m[1] - exact.sz2[k]).abs());
        csv.row(vec![num(grid[k]), num(exact.sz1[k]), num(exact.sz2[k]), num(m[0]), num(m[1])]);
    }
    let mut out = OutputDir::create(&config.output_dir())?;
    out.write_csv("twoqubit.csv", csv)?;
    let regime = serde_json::to_value(exact.regime).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
    println!("{regime} (Gamma/2J = {}); max deviation from the reference engine {worst:.3e}", t.gamma / (2.0 * t.coupling));
    out.finish("twoqubit", config)?;
    Ok(())
}
