//! Synchronization and entanglement observables.

use faer::Mat;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolve::CorrelationMatrix;
use crate::linalg::{hermiticity_defect, hermitian_eigenvalues, CMat};

/// `<sigma^z_j> = 2 Z_jj - 1`.
pub fn magnetizations(z: &CorrelationMatrix) -> Vec<f64> {
    z.magnetizations()
}

/// Population variance below which a Pearson window is reported as a gap.
pub const VARIANCE_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PearsonSeries {
    pub pair: (usize, usize),
    pub window: f64,
    pub times: Vec<f64>,
    /// `None` where the window is incomplete or one signal is flat.
    pub values: Vec<Option<f64>>,
}

/// Trailing-window Pearson coefficient of two sampled signals. The value at
/// `t` uses the samples in `[t - window, t]`.
pub fn pearson(times: &[f64], x: &[f64], y: &[f64], window: f64, pair: (usize, usize)) -> Result<PearsonSeries> {
    if x.len() != times.len() {
        return Err(Error::MismatchedSeries(x.len(), times.len()));
    }
    if y.len() != times.len() {
        return Err(Error::MismatchedSeries(y.len(), times.len()));
    }
    if times.len() < 3 {
        return Err(Error::Grid("need at least three samples".into()));
    }
    let step = times[1] - times[0];
    if !(window >= 2.0 * step * (1.0 - 1e-12)) {
        return Err(Error::Grid(format!("window {window} shorter than two sample intervals")));
    }
    let eps = 1e-9 * step;
    let mut values = Vec::with_capacity(times.len());
    let mut start = 0;
    for (i, &t) in times.iter().enumerate() {
        if t - times[0] < window - eps {
            values.push(None);
            continue;
        }
        while times[start] < t - window - eps {
            start += 1;
        }
        let (xs, ys) = (&x[start..=i], &y[start..=i]);
        let m = xs.len() as f64;
        let (mx, my) = (xs.iter().sum::<f64>() / m, ys.iter().sum::<f64>() / m);
        let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
        for (a, b) in xs.iter().zip(ys) {
            let (da, db) = (a - mx, b - my);
            sxx += da * da;
            syy += db * db;
            sxy += da * db;
        }
        if sxx / m < VARIANCE_FLOOR || syy / m < VARIANCE_FLOOR {
            values.push(None);
        } else {
            values.push(Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)));
        }
    }
    Ok(PearsonSeries { pair, window, times: times.to_vec(), values })
}

/// Wootters concurrence of a two-qubit density matrix.
///
/// With `rho~ = (Y (x) Y) rho* (Y (x) Y)` and `k_1 >= ... >= k_4` the
/// eigenvalues of `rho rho~`, `C = max(0, sqrt k_1 - sqrt k_2 - sqrt k_3 - sqrt k_4)`.
/// The square roots are obtained directly as the singular values of
/// `T = W^T (Y (x) Y) W` for a factorization `rho = W W^dag`, which keeps
/// exactly vanishing `k` at zero instead of turning roundoff into `sqrt(eps)`.
pub fn concurrence_wootters(rho: &CMat) -> Result<f64> {
    if rho.nrows() != 4 || rho.ncols() != 4 {
        return Err(Error::InitialState(format!("expected a 4x4 matrix, got {}x{}", rho.nrows(), rho.ncols())));
    }
    let tr: C64 = (0..4).map(|i| rho[(i, i)]).sum();
    let defect = hermiticity_defect(rho.as_ref());
    if (tr.re - 1.0).abs() > 1e-8 || tr.im.abs() > 1e-8 || defect > 1e-10 {
        return Err(Error::InitialState(format!(
            "two-qubit state must be Hermitian with unit trace (trace {tr}, defect {defect:e})"
        )));
    }
    let lo = hermitian_eigenvalues(rho.as_ref())?[0];
    if lo < -1e-8 {
        return Err(Error::NotPositive(lo));
    }
    let w = psd_factor(rho, 1e-14 * tr.re);
    // Y (x) Y is antidiagonal with signs (-1, 1, 1, -1)
    let sign = [-1.0, 1.0, 1.0, -1.0];
    let r = w.ncols();
    if r == 0 {
        return Ok(0.0);
    }
    let t = Mat::from_fn(r, r, |a, b| {
        (0..4).map(|i| w[(i, a)] * w[(3 - i, b)] * sign[i]).sum::<C64>()
    });
    let mut roots = t
        .singular_values()
        .map_err(|e| Error::Numerical(format!("concurrence SVD failed: {e:?}")))?;
    roots.resize(4, 0.0);
    roots.sort_by(|a, b| b.total_cmp(a));
    Ok((roots[0] - roots[1] - roots[2] - roots[3]).max(0.0))
}

// Diagonally pivoted outer-product Cholesky of a Hermitian PSD matrix; pivots
// at or below `tol` are dropped.
fn psd_factor(rho: &CMat, tol: f64) -> CMat {
    let n = rho.nrows();
    let mut a = rho.clone();
    let mut cols: Vec<Vec<C64>> = Vec::new();
    for _ in 0..n {
        let (p, d) = (0..n)
            .map(|i| (i, a[(i, i)].re))
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .expect("nonempty");
        if d <= tol {
            break;
        }
        let s = d.sqrt();
        let v: Vec<C64> = (0..n).map(|i| a[(i, p)] / s).collect();
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] -= v[i] * v[j].conj();
            }
        }
        cols.push(v);
    }
    Mat::from_fn(n, cols.len(), |i, c| cols[c][i])
}

/// Reduced state of sites `i`, `j` reconstructed from a single-excitation
/// correlation matrix, in the basis `|b_i b_j>` with index `2 b_i + b_j`.
pub fn pair_state_from_z(z: &CorrelationMatrix, i: usize, j: usize) -> Result<CMat> {
    let n = z.z.nrows();
    for s in [i, j] {
        if s == 0 || s > n {
            return Err(Error::SiteOutOfRange { site: s, n });
        }
    }
    if i == j {
        return Err(Error::SameSite(i));
    }
    let tr = z.trace();
    if (tr - 1.0).abs() > 1e-8 {
        return Err(Error::NotSingleExcitation(tr));
    }
    let (zi, zj) = (z.z[(i - 1, i - 1)].re, z.z[(j - 1, j - 1)].re);
    let mut rho = Mat::<C64>::zeros(4, 4);
    rho[(0, 0)] = C64::new(1.0 - zi - zj, 0.0);
    rho[(1, 1)] = C64::new(zj, 0.0);
    rho[(2, 2)] = C64::new(zi, 0.0);
    rho[(2, 1)] = z.z[(j - 1, i - 1)];
    rho[(1, 2)] = z.z[(i - 1, j - 1)];
    Ok(rho)
}

/// Tolerance for the agreement check between the two concurrence paths.
pub const CONCURRENCE_AGREEMENT_TOL: f64 = 1e-8;

/// Concurrence `2 |Z_ij|` of sites `i`, `j` in a single-excitation state,
/// verified against the Wootters formula on the reconstructed pair state.
pub fn concurrence_from_z(z: &CorrelationMatrix, i: usize, j: usize) -> Result<f64> {
    let rho = pair_state_from_z(z, i, j)?;
    let fast = 2.0 * z.z[(i - 1, j - 1)].norm();
    let general = concurrence_wootters(&rho)?;
    if (fast - general).abs() > CONCURRENCE_AGREEMENT_TOL {
        return Err(Error::Numerical(format!(
            "concurrence paths disagree: 2|Z_ij| = {fast}, Wootters = {general}"
        )));
    }
    Ok(fast)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConcurrenceSeries {
    pub pair: (usize, usize),
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

pub fn concurrence_series(states: &[CorrelationMatrix], i: usize, j: usize) -> Result<ConcurrenceSeries> {
    let values = states.iter().map(|s| concurrence_from_z(s, i, j)).collect::<Result<_>>()?;
    Ok(ConcurrenceSeries { pair: (i, j), times: states.iter().map(|s| s.time).collect(), values })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DampingRegime {
    Underdamped,
    Critical,
    Overdamped,
}

/// Two spins with dephasing of strength `Gamma` on one of them, starting from
/// a diagonal state with excitation probabilities `p1`, `p2`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwoQubitSolution {
    pub coupling: f64,
    pub gamma: f64,
    pub p1: f64,
    pub p2: f64,
    pub regime: DampingRegime,
    pub times: Vec<f64>,
    pub sz1: Vec<f64>,
    pub sz2: Vec<f64>,
}

impl TwoQubitSolution {
    /// `(<sigma^z_1>, <sigma^z_2>)` at time `t`.
    pub fn at(&self, t: f64) -> (f64, f64) {
        two_qubit_point(self.coupling, self.gamma, self.p1, self.p2, self.regime, t)
    }
}

fn regime(coupling: f64, gamma: f64) -> DampingRegime {
    let d = 2.0 * coupling - gamma;
    if d.abs() <= 1e-12 * 2.0 * coupling {
        DampingRegime::Critical
    } else if d > 0.0 {
        DampingRegime::Underdamped
    } else {
        DampingRegime::Overdamped
    }
}

// envelope of the population difference, normalized to 1 at t = 0
fn relaxation(coupling: f64, gamma: f64, regime: DampingRegime, t: f64) -> f64 {
    match regime {
        DampingRegime::Underdamped => {
            let w = (4.0 * coupling * coupling - gamma * gamma).sqrt();
            (-gamma * t).exp() * ((w * t).cos() + gamma / w * (w * t).sin())
        }
        DampingRegime::Critical => (-gamma * t).exp() * (1.0 + gamma * t),
        DampingRegime::Overdamped => {
            let w = (gamma * gamma - 4.0 * coupling * coupling).sqrt();
            let (slow, fast) = ((-(gamma - w) * t).exp(), (-(gamma + w) * t).exp());
            0.5 * (slow + fast) + 0.5 * gamma / w * (slow - fast)
        }
    }
}

fn two_qubit_point(coupling: f64, gamma: f64, p1: f64, p2: f64, regime: DampingRegime, t: f64) -> (f64, f64) {
    let base = p1 + p2 - 1.0;
    let d = (p1 - p2) * relaxation(coupling, gamma, regime, t);
    (base + d, base - d)
}

/// Closed-form magnetizations of the dephased two-spin chain; times are in
/// units of `1/J` only when `coupling = 1`.
pub fn two_qubit_analytic(coupling: f64, gamma: f64, p1: f64, p2: f64, grid: &[f64]) -> Result<TwoQubitSolution> {
    if !(coupling.is_finite() && coupling > 0.0) {
        return Err(Error::BadCoupling(coupling));
    }
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(Error::NegativeGamma(gamma));
    }
    for p in [p1, p2] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InitialState(format!("population {p} outside [0,1]")));
        }
    }
    let regime = regime(coupling, gamma);
    let (sz1, sz2) = grid.iter().map(|&t| two_qubit_point(coupling, gamma, p1, p2, regime, t)).unzip();
    Ok(TwoQubitSolution { coupling, gamma, p1, p2, regime, times: grid.to_vec(), sz1, sz2 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinusoidFit {
    pub omega: f64,
    pub offset: f64,
    pub amplitude: f64,
    pub phase: f64,
    /// Root-mean-square residual.
    pub rms_residual: f64,
}

// least-squares offset + cos + sin at fixed omega; returns (fit, residual sum of squares)
fn linear_sinusoid(times: &[f64], values: &[f64], omega: f64) -> (SinusoidFit, f64) {
    let mut ata = Mat::<f64>::zeros(3, 3);
    let mut atb = Mat::<f64>::zeros(3, 1);
    for (&t, &v) in times.iter().zip(values) {
        let row = [1.0, (omega * t).cos(), (omega * t).sin()];
        for a in 0..3 {
            for b in 0..3 {
                ata[(a, b)] += row[a] * row[b];
            }
            atb[(a, 0)] += row[a] * v;
        }
    }
    use faer::linalg::solvers::Solve;
    let x = ata.partial_piv_lu().solve(&atb);
    let (c0, c1, c2) = (x[(0, 0)], x[(1, 0)], x[(2, 0)]);
    let rss: f64 = times
        .iter()
        .zip(values)
        .map(|(&t, &v)| (v - c0 - c1 * (omega * t).cos() - c2 * (omega * t).sin()).powi(2))
        .sum();
    let fit = SinusoidFit {
        omega,
        offset: c0,
        amplitude: c1.hypot(c2),
        phase: (-c2).atan2(c1),
        rms_residual: (rss / times.len() as f64).sqrt(),
    };
    (fit, rss)
}

/// Least-squares fit `offset + amplitude cos(omega t + phase)` with `omega`
/// searched in `[omega_min, omega_max]`: a coarse scan followed by golden-section
/// refinement of the residual.
pub fn fit_sinusoid(times: &[f64], values: &[f64], omega_min: f64, omega_max: f64) -> Result<SinusoidFit> {
    if times.len() != values.len() {
        return Err(Error::MismatchedSeries(times.len(), values.len()));
    }
    if times.len() < 4 || !(omega_min > 0.0 && omega_max > omega_min) {
        return Err(Error::Grid("sinusoid fit needs at least four samples and 0 < omega_min < omega_max".into()));
    }
    let rss = |w: f64| linear_sinusoid(times, values, w).1;
    let span = times[times.len() - 1] - times[0];
    // resolve the residual landscape well below its natural width 2 pi / span
    let steps = (((omega_max - omega_min) * span / (2.0 * std::f64::consts::PI)) * 20.0).ceil().max(50.0) as usize;
    let h = (omega_max - omega_min) / steps as f64;
    let best = (0..=steps)
        .map(|i| omega_min + i as f64 * h)
        .min_by(|a, b| rss(*a).total_cmp(&rss(*b)))
        .expect("nonempty scan");
    let (mut a, mut b) = ((best - h).max(omega_min), (best + h).min(omega_max));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
    let (mut fc, mut fd) = (rss(c), rss(d));
    while b - a > 1e-12 * best.abs().max(1.0) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = rss(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = rss(d);
        }
    }
    Ok(linear_sinusoid(times, values, 0.5 * (a + b)).0)
}

/// Per-period `(min, max)` of a uniformly sampled signal, over consecutive
/// windows of length `period` starting at the first sample.
pub fn period_extrema(times: &[f64], values: &[f64], period: f64) -> Result<Vec<(f64, f64)>> {
    if times.len() != values.len() {
        return Err(Error::MismatchedSeries(times.len(), values.len()));
    }
    if times.is_empty() || !(period > 0.0) {
        return Err(Error::Grid("need samples and a positive period".into()));
    }
    let t0 = times[0];
    let count = ((times[times.len() - 1] - t0) / period + 1e-9).floor() as usize;
    let mut out = vec![(f64::INFINITY, f64::NEG_INFINITY); count];
    for (&t, &v) in times.iter().zip(values) {
        let k = ((t - t0) / period).floor() as usize;
        if k < count {
            out[k].0 = out[k].0.min(v);
            out[k].1 = out[k].1.max(v);
        }
    }
    Ok(out)
}
