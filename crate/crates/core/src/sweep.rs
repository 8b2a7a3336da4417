//! Noise-strength sweeps of the synchronization rate and their scaling with
//! chain length.

use faer::linalg::solvers::Solve;
use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolve::{liouville_spectrum, rate_report, AveragedGenerator, RateOptions, RateReport};
use crate::model::{ChainSpec, NoiseSpec};

/// 60 points, log-spaced over `[1e-3, 10]`.
pub fn default_gamma_grid() -> Vec<f64> {
    log_grid(1e-3, 10.0, 60)
}

pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && points >= 2);
    let (a, b) = (lo.ln(), hi.ln());
    (0..points)
        .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp())
        .collect()
}

/// Rates with and without the magnetization filter at one noise strength.
/// `gamma = 0` has no decaying mode and reports zero.
pub fn rates_at(chain: &ChainSpec, sites: &[usize], gamma: f64, options: &RateOptions) -> Result<RateReport> {
    let noise = NoiseSpec::new(sites.to_vec(), gamma)?;
    noise.validate(chain)?;
    if gamma == 0.0 {
        let zero = crate::evolve::SyncTiming { mu_s: 0.0, r: 0.0, tau_s: f64::INFINITY };
        return Ok(RateReport { filtered: zero, unfiltered: zero });
    }
    let g = AveragedGenerator::new(chain, &noise)?;
    rate_report(&liouville_spectrum(&g, false)?, options)
}

fn selected(report: &RateReport, options: &RateOptions) -> f64 {
    if options.magnetization_filter {
        report.filtered.r
    } else {
        report.unfiltered.r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub n: usize,
    pub sites: Vec<usize>,
    pub gammas: Vec<f64>,
    /// Rate used for the optimum (filtered unless the options say otherwise).
    pub rates: Vec<f64>,
    pub rates_filtered: Vec<f64>,
    pub rates_unfiltered: Vec<f64>,
    pub gamma_opt: f64,
    pub r_max: f64,
    /// Grid indices of interior local maxima.
    pub local_maxima: Vec<usize>,
    /// False when the grid shows more than one local maximum or none in the
    /// interior; `gamma_opt` is then the grid argmax, unrefined.
    pub unimodal: bool,
}

/// Relative tolerance of the golden-section refinement in `gamma`.
pub const REFINE_TOL: f64 = 1e-4;

/// `r(gamma)` on a grid, followed by refinement of the optimum.
pub fn rate_curve(chain: &ChainSpec, sites: &[usize], gammas: &[f64], options: &RateOptions) -> Result<SweepResult> {
    if gammas.len() < 3 {
        return Err(Error::Grid(format!("need at least 3 gamma points, got {}", gammas.len())));
    }
    if let Some(w) = gammas.windows(2).find(|w| !(w[1] > w[0])) {
        return Err(Error::Grid(format!("gamma grid not increasing at {} -> {}", w[0], w[1])));
    }
    let reports: Vec<RateReport> = gammas
        .par_iter()
        .map(|&g| rates_at(chain, sites, g, options))
        .collect::<Result<_>>()?;
    let rates: Vec<f64> = reports.iter().map(|r| selected(r, options)).collect();
    let local_maxima = interior_maxima(&rates);
    let best = argmax(&rates);
    let unimodal = local_maxima.len() == 1 && local_maxima[0] == best;
    let (gamma_opt, r_max) = if unimodal {
        let f = |g: f64| rates_at(chain, sites, g, options).map(|r| selected(&r, options));
        golden_max(f, gammas[best - 1], gammas[best + 1], (gammas[best], rates[best]))?
    } else {
        (gammas[best], rates[best])
    };
    Ok(SweepResult {
        n: chain.n(),
        sites: sites.to_vec(),
        gammas: gammas.to_vec(),
        rates,
        rates_filtered: reports.iter().map(|r| r.filtered.r).collect(),
        rates_unfiltered: reports.iter().map(|r| r.unfiltered.r).collect(),
        gamma_opt,
        r_max,
        local_maxima,
        unimodal,
    })
}

fn argmax(x: &[f64]) -> usize {
    (0..x.len()).fold(0, |b, i| if x[i] > x[b] { i } else { b })
}

// Sign changes of the discrete derivative from + to -; differences below a
// relative 1e-12 are treated as flat.
fn interior_maxima(r: &[f64]) -> Vec<usize> {
    let scale = r.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let eps = 1e-12 * scale;
    let mut out = Vec::new();
    let mut rising_since: Option<usize> = None;
    let mut peak = 0;
    for i in 1..r.len() {
        let d = r[i] - r[i - 1];
        if d > eps {
            rising_since = Some(i);
            peak = i;
        } else if d < -eps && rising_since.take().is_some() {
            out.push(peak);
        }
    }
    out
}

/// Golden-section maximization on `[lo, hi]` given an interior point known
/// to beat both ends.
fn golden_max(f: impl Fn(f64) -> Result<f64>, lo: f64, hi: f64, seed: (f64, f64)) -> Result<(f64, f64)> {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    let mut best = seed;
    while (b - a) > REFINE_TOL * 0.5 * (a + b) {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
        }
        for (x, y) in [(c, fc), (d, fd)] {
            if y > best.1 {
                best = (x, y);
            }
        }
    }
    Ok(best)
}

/// Grid intervals whose rate changes by more than `max_relative` once the
/// spacing is halved; flags jumps from eigenvalue reordering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuityCheck {
    pub midpoints: Vec<f64>,
    pub midpoint_rates: Vec<f64>,
    pub flagged: Vec<usize>,
}

pub fn continuity_check(
    chain: &ChainSpec,
    curve: &SweepResult,
    options: &RateOptions,
    max_relative: f64,
) -> Result<ContinuityCheck> {
    let midpoints: Vec<f64> = curve
        .gammas
        .windows(2)
        .map(|w| if w[0] > 0.0 { (w[0] * w[1]).sqrt() } else { 0.5 * w[1] })
        .collect();
    let midpoint_rates: Vec<f64> = midpoints
        .par_iter()
        .map(|&g| rates_at(chain, &curve.sites, g, options).map(|r| selected(&r, options)))
        .collect::<Result<_>>()?;
    let rel = |x: f64, y: f64| (x - y).abs() / x.abs().max(y.abs()).max(f64::MIN_POSITIVE);
    let flagged = (0..midpoints.len())
        .filter(|&i| {
            let m = midpoint_rates[i];
            rel(curve.rates[i], m) > max_relative || rel(m, curve.rates[i + 1]) > max_relative
        })
        .collect();
    Ok(ContinuityCheck { midpoints, midpoint_rates, flagged })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl FitParams {
    pub fn eval(&self, n: f64) -> f64 {
        self.a + self.b / (n + self.c).powi(2)
    }
}

/// Reference constants for `r_max(N)`.
pub const REFERENCE_RATE_FIT: FitParams = FitParams { a: -0.008, b: 1.357, c: -4.289 };
/// Reference constants for `gamma_opt(N)`.
pub const REFERENCE_GAMMA_OPT_FIT: FitParams = FitParams { a: 0.182, b: 12.289, c: -0.660 };

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: FitParams,
    pub residual_norm: f64,
    pub r_squared: f64,
    /// `|J^T r|` at the returned parameters.
    pub gradient_norm: f64,
    pub iterations: usize,
    pub restarts: usize,
    pub n_points: usize,
}

const MAX_RESTARTS: usize = 5;
const MAX_ITER: usize = 2000;
const STEP_TOL: f64 = 1e-10;

/// Least-squares fit of `a + b/(N+c)^2` by damped Gauss-Newton
/// (Levenberg-Marquardt). Starts from `a = c = 0` with `b` the slope between
/// the two largest `N`. A singular normal matrix, or `c` running off along the
/// flat direction `a + b/c^2`, triggers a restart from a shifted guess.
pub fn fit_inverse_square(ns: &[f64], ys: &[f64]) -> Result<FitResult> {
    if ns.len() != ys.len() {
        return Err(Error::MismatchedSeries(ns.len(), ys.len()));
    }
    if ns.len() < 3 {
        return Err(Error::Precondition(format!("fit needs at least 3 points, got {}", ns.len())));
    }
    let mut order: Vec<usize> = (0..ns.len()).collect();
    order.sort_by(|&i, &j| ns[j].total_cmp(&ns[i]));
    let (i, j) = (order[0], order[1]);
    let b0 = (ys[i] - ys[j]) / (ns[i].powi(-2) - ns[j].powi(-2));
    let n_max = ns[i].abs();
    let mut start = FitParams { a: 0.0, b: b0, c: 0.0 };
    for restart in 0..=MAX_RESTARTS {
        let fitted = levenberg_marquardt(ns, ys, start).filter(|(p, _)| p.c.abs() < 1e3 * n_max);
        if let Some((params, iterations)) = fitted {
            let res = residuals(ns, ys, &params);
            let (jac, _) = jacobian(ns, &params);
            let grad: f64 = (0..3)
                .map(|p| jac.iter().zip(&res).map(|(row, r)| row[p] * r).sum::<f64>().powi(2))
                .sum::<f64>()
                .sqrt();
            let mean = ys.iter().sum::<f64>() / ys.len() as f64;
            let ss_tot: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
            let ss_res: f64 = res.iter().map(|r| r * r).sum();
            return Ok(FitResult {
                params,
                residual_norm: ss_res.sqrt(),
                r_squared: if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { f64::NAN },
                gradient_norm: grad,
                iterations,
                restarts: restart,
                n_points: ns.len(),
            });
        }
        let k = (restart + 1) as f64;
        start = FitParams { a: 0.01 * k * b0.signum(), b: b0 * (1.0 + 0.25 * k), c: 0.5 * k };
    }
    Err(Error::Numerical(format!("fit failed after {MAX_RESTARTS} restarts (singular or degenerate Jacobian)")))
}

fn residuals(ns: &[f64], ys: &[f64], p: &FitParams) -> Vec<f64> {
    ns.iter().zip(ys).map(|(&n, &y)| p.eval(n) - y).collect()
}

// rows [1, 1/(N+c)^2, -2b/(N+c)^3]; false if some N + c vanishes
fn jacobian(ns: &[f64], p: &FitParams) -> (Vec<[f64; 3]>, bool) {
    let mut ok = true;
    let rows = ns
        .iter()
        .map(|&n| {
            let s = n + p.c;
            ok &= s.abs() > 1e-12;
            [1.0, 1.0 / (s * s), -2.0 * p.b / (s * s * s)]
        })
        .collect();
    (rows, ok)
}

fn levenberg_marquardt(ns: &[f64], ys: &[f64], start: FitParams) -> Option<(FitParams, usize)> {
    let cost = |p: &FitParams| residuals(ns, ys, p).iter().map(|r| r * r).sum::<f64>();
    let to_vec = |p: &FitParams| [p.a, p.b, p.c];
    let mut p = start;
    let mut current = cost(&p);
    let mut damping = 1e-3;
    for iter in 1..=MAX_ITER {
        let (jac, ok) = jacobian(ns, &p);
        if !ok || !current.is_finite() {
            return None;
        }
        let res = residuals(ns, ys, &p);
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for (row, r) in jac.iter().zip(&res) {
            for i in 0..3 {
                jtr[i] += row[i] * r;
                for j in 0..3 {
                    jtj[i][j] += row[i] * row[j];
                }
            }
        }
        let diag_max = (0..3).fold(0.0f64, |m, i| m.max(jtj[i][i]));
        if (0..3).any(|i| jtj[i][i] <= 1e-24 * diag_max) {
            return None;
        }
        if jtr.iter().all(|g| g.abs() <= 1e-300) {
            return Some((p, iter));
        }
        loop {
            let a = Mat::from_fn(3, 3, |i, j| jtj[i][j] + if i == j { damping * jtj[i][i] } else { 0.0 });
            let rhs = Mat::from_fn(3, 1, |i, _| -jtr[i]);
            let step = a.partial_piv_lu().solve(&rhs);
            let d = [step[(0, 0)], step[(1, 0)], step[(2, 0)]];
            if d.iter().any(|x| !x.is_finite()) {
                return None;
            }
            let trial = FitParams { a: p.a + d[0], b: p.b + d[1], c: p.c + d[2] };
            let trial_cost = cost(&trial);
            let step_norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
            let p_norm = to_vec(&p).iter().map(|x| x * x).sum::<f64>().sqrt();
            if trial_cost.is_finite() && trial_cost <= current {
                let done = step_norm <= STEP_TOL * (p_norm + STEP_TOL) || trial_cost == current;
                p = trial;
                current = trial_cost;
                damping = (damping / 3.0).max(1e-15);
                if done {
                    return Some((p, iter));
                }
                break;
            }
            damping *= 4.0;
            if damping > 1e16 {
                // no descent direction left at machine precision
                return Some((p, iter));
            }
        }
    }
    Some((p, MAX_ITER))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingStudy {
    pub ns: Vec<usize>,
    pub curves: Vec<SweepResult>,
    pub r_max: Vec<f64>,
    pub gamma_opt: Vec<f64>,
    /// Fits use only `N > 5`.
    pub rate_fit: FitResult,
    pub gamma_opt_fit: FitResult,
}

/// Chain lengths fitted by [`scaling_study`].
pub const FIT_MIN_EXCLUSIVE: usize = 5;

/// One rate curve per chain length, then the `a + b/(N+c)^2` fits.
pub fn scaling_study(
    ns: &[usize],
    sites: &[usize],
    gammas: &[f64],
    coupling: f64,
    field: f64,
    options: &RateOptions,
) -> Result<ScalingStudy> {
    let mut curves = Vec::with_capacity(ns.len());
    for &n in ns {
        let chain = ChainSpec::new(n, coupling, field)?;
        curves.push(rate_curve(&chain, sites, gammas, options)?);
    }
    let r_max: Vec<f64> = curves.iter().map(|c| c.r_max).collect();
    let gamma_opt: Vec<f64> = curves.iter().map(|c| c.gamma_opt).collect();
    let mut study = ScalingStudy::from_optima(ns, &r_max, &gamma_opt)?;
    study.curves = curves;
    Ok(study)
}

impl ScalingStudy {
    /// Fits previously computed optima; `curves` is left empty.
    pub fn from_optima(ns: &[usize], r_max: &[f64], gamma_opt: &[f64]) -> Result<ScalingStudy> {
        for v in [r_max, gamma_opt] {
            if v.len() != ns.len() {
                return Err(Error::MismatchedSeries(v.len(), ns.len()));
            }
        }
        let keep: Vec<usize> = (0..ns.len()).filter(|&i| ns[i] > FIT_MIN_EXCLUSIVE).collect();
        let fit_n: Vec<f64> = keep.iter().map(|&i| ns[i] as f64).collect();
        let pick = |v: &[f64]| keep.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        let rate_fit = fit_inverse_square(&fit_n, &pick(r_max))?;
        let gamma_opt_fit = fit_inverse_square(&fit_n, &pick(gamma_opt))?;
        Ok(ScalingStudy {
            ns: ns.to_vec(),
            curves: Vec::new(),
            r_max: r_max.to_vec(),
            gamma_opt: gamma_opt.to_vec(),
            rate_fit,
            gamma_opt_fit,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiebRobinsonReport {
    /// `2 J`.
    pub v_lr: f64,
    /// Slope of `ln r_max` against `ln N` over all chain lengths.
    pub loglog_slope: f64,
    /// The same slope restricted to the fitted chain lengths.
    pub loglog_slope_fitted: f64,
    /// Slope of `ln(r_max - a)` against `ln(N + c)` over the fitted chain
    /// lengths, with the fitted `a, c`.
    pub shifted_loglog_slope: f64,
    /// Mean of `gamma_opt` over the two largest chain lengths.
    pub gamma_opt_plateau: f64,
    /// `|gamma_opt(N_max) - gamma_opt(N_prev)| / gamma_opt(N_max)`.
    pub plateau_relative_change: f64,
    pub reference_rate_fit: FitParams,
    pub reference_gamma_opt_fit: FitParams,
}

pub fn lieb_robinson_report(study: &ScalingStudy, coupling: f64) -> Result<LiebRobinsonReport> {
    let m = study.ns.len();
    if m < 2 {
        return Err(Error::Precondition("scaling report needs at least two chain lengths".into()));
    }
    let x: Vec<f64> = study.ns.iter().map(|&n| (n as f64).ln()).collect();
    let y: Vec<f64> = study.r_max.iter().map(|r| r.ln()).collect();
    let p = study.rate_fit.params;
    let fitted: Vec<usize> = (0..m).filter(|&i| study.ns[i] > FIT_MIN_EXCLUSIVE).collect();
    let xf: Vec<f64> = fitted.iter().map(|&i| x[i]).collect();
    let yf: Vec<f64> = fitted.iter().map(|&i| y[i]).collect();
    let xs: Vec<f64> = fitted.iter().map(|&i| (study.ns[i] as f64 + p.c).ln()).collect();
    let ys: Vec<f64> = fitted.iter().map(|&i| (study.r_max[i] - p.a).ln()).collect();
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by_key(|&i| study.ns[i]);
    let (top, prev) = (study.gamma_opt[idx[m - 1]], study.gamma_opt[idx[m - 2]]);
    Ok(LiebRobinsonReport {
        v_lr: 2.0 * coupling,
        loglog_slope: slope(&x, &y),
        loglog_slope_fitted: slope(&xf, &yf),
        shifted_loglog_slope: slope(&xs, &ys),
        gamma_opt_plateau: 0.5 * (top + prev),
        plateau_relative_change: (top - prev).abs() / top.abs(),
        reference_rate_fit: REFERENCE_RATE_FIT,
        reference_gamma_opt_fit: REFERENCE_GAMMA_OPT_FIT,
    })
}

/// Ordinary least-squares slope; NaN if any input is non-finite.
fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}
