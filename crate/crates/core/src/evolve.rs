//! Noise-averaged dynamics of the Jordan–Wigner correlation matrix.
//!
//! `Z_jk = <c_j^dag c_k>` evolves under
//! `dZ/dtau = i[Omega/J, Z] - (gamma/2)[Y,[Y,Z]]`. Because `Y` is diagonal the
//! dephasing term acts elementwise as `-2 gamma (p_j - p_k)^2 Z_jk`.
//! Matrices are vectorized row-major, `Z[j,k] -> j N + k`.

use faer::linalg::solvers::Solve;
use faer::{Mat, MatRef};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{expm, hermitian_eigenvalues, max_abs, CMat, I};
use crate::model::{build_jw_matrix, ChainSpec, InitialState, NoiseSpec, NOISE_SITE_WEIGHT};

/// Correlation matrix at time `tau`.
#[derive(Debug, Clone)]
pub struct CorrelationMatrix {
    pub z: CMat,
    pub time: f64,
}

impl CorrelationMatrix {
    /// `<sigma^z_j> = 2 Z_jj - 1`.
    pub fn magnetizations(&self) -> Vec<f64> {
        (0..self.z.nrows()).map(|j| 2.0 * self.z[(j, j)].re - 1.0).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.z.nrows()).map(|j| self.z[(j, j)].re).sum()
    }
}

/// The noise-averaged generator acting on `N x N` correlation matrices.
#[derive(Debug, Clone)]
pub struct AveragedGenerator {
    omega: Mat<f64>,
    // 2 gamma (p_j - p_k)^2, row-major
    damping: Vec<f64>,
    gamma: f64,
}

impl AveragedGenerator {
    pub fn new(chain: &ChainSpec, noise: &NoiseSpec) -> Result<Self> {
        noise.validate(chain)?;
        let n = chain.n();
        let p = noise.indicator(n);
        // (gamma/2) (y_j - y_k)^2 with y = NOISE_SITE_WEIGHT * p
        let c = 0.5 * noise.gamma() * NOISE_SITE_WEIGHT * NOISE_SITE_WEIGHT;
        let damping = (0..n * n)
            .map(|i| c * (p[i / n] - p[i % n]).powi(2))
            .collect();
        Ok(AveragedGenerator { omega: build_jw_matrix(chain), damping, gamma: noise.gamma() })
    }

    pub fn n(&self) -> usize {
        self.omega.nrows()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn omega(&self) -> MatRef<'_, f64> {
        self.omega.as_ref()
    }

    /// `dZ/dtau` at `z`.
    pub fn apply(&self, z: MatRef<'_, C64>) -> CMat {
        let n = self.n();
        Mat::from_fn(n, n, |j, k| {
            let mut acc = C64::new(0.0, 0.0);
            for m in 0..n {
                acc += self.omega[(j, m)] * z[(m, k)] - z[(j, m)] * self.omega[(m, k)];
            }
            I * acc - self.damping[j * n + k] * z[(j, k)]
        })
    }

    /// Dense `N^2 x N^2` matrix `i(Omega (x) 1 - 1 (x) Omega^T) - D`.
    pub fn to_dense(&self) -> CMat {
        let n = self.n();
        let mut l = Mat::<C64>::zeros(n * n, n * n);
        for j in 0..n {
            for k in 0..n {
                let row = j * n + k;
                for m in 0..n {
                    let a = self.omega[(j, m)];
                    if a != 0.0 {
                        l[(row, m * n + k)] += I * a;
                    }
                    let b = self.omega[(m, k)];
                    if b != 0.0 {
                        l[(row, j * n + m)] -= I * b;
                    }
                }
                l[(row, row)] -= C64::new(self.damping[row], 0.0);
            }
        }
        l
    }
}

/// Eigenvalue `-mu + i lambda` of the averaged generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LiouvilleMode {
    pub mu: f64,
    pub lambda: f64,
    /// Norm of the unit eigenvector's projection onto the diagonal entries
    /// `|e_j, e_j>`, i.e. how strongly the mode shows up in magnetizations.
    pub magnetization_weight: f64,
    #[serde(skip)]
    pub vector: Option<Vec<C64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LiouvilleSpectrum {
    pub modes: Vec<LiouvilleMode>,
}

/// Full spectrum of the averaged generator. Eigenvectors are kept only when
/// `keep_vectors` is set.
pub fn liouville_spectrum(generator: &AveragedGenerator, keep_vectors: bool) -> Result<LiouvilleSpectrum> {
    let n = generator.n();
    let l = generator.to_dense();
    let eig = l
        .eigen()
        .map_err(|e| Error::Numerical(format!("non-Hermitian eigensolver failed: {e:?}")))?;
    let s = eig.S().column_vector();
    let u = eig.U();
    let mut modes = Vec::with_capacity(n * n);
    for a in 0..n * n {
        let ev = s[a];
        let col = u.col(a);
        let norm2: f64 = col.iter().map(|x| x.norm_sqr()).sum();
        let diag2: f64 = (0..n).map(|j| col[j * n + j].norm_sqr()).sum();
        modes.push(LiouvilleMode {
            mu: -ev.re,
            lambda: ev.im,
            magnetization_weight: (diag2 / norm2).sqrt(),
            vector: keep_vectors.then(|| col.iter().copied().collect()),
        });
    }
    modes.sort_by(|a, b| a.mu.total_cmp(&b.mu).then(b.lambda.total_cmp(&a.lambda)));
    Ok(LiouvilleSpectrum { modes })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateOptions {
    /// Modes with `|lambda|` below this count as non-oscillating.
    pub lambda_tol: f64,
    /// Strict-inequality guard separating `r` from `mu_s`.
    pub mu_tol: f64,
    /// `tau_s = factor / r`.
    pub factor: f64,
    pub magnetization_filter: bool,
    pub filter_threshold: f64,
}

impl Default for RateOptions {
    fn default() -> Self {
        RateOptions { lambda_tol: 1e-9, mu_tol: 1e-12, factor: 5.0, magnetization_filter: true, filter_threshold: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyncTiming {
    /// Decay of the slowest oscillating mode.
    pub mu_s: f64,
    /// Decay of the next-slowest oscillating mode.
    pub r: f64,
    pub tau_s: f64,
}

/// Extracts `mu_s`, `r` and `tau_s` from the oscillating part of the spectrum.
///
/// Only modes with `lambda > lambda_tol` are scanned; their conjugates carry
/// the same decay.
pub fn extract_rate(spectrum: &LiouvilleSpectrum, options: &RateOptions) -> Result<SyncTiming> {
    let osc: Vec<f64> = spectrum
        .modes
        .iter()
        .filter(|m| m.lambda > options.lambda_tol)
        .filter(|m| !options.magnetization_filter || m.magnetization_weight > options.filter_threshold)
        .map(|m| m.mu)
        .collect();
    let mu_s = osc.iter().copied().fold(f64::INFINITY, f64::min);
    if !mu_s.is_finite() {
        return Err(Error::NoOscillatingMode(f64::NAN));
    }
    let r = osc
        .iter()
        .copied()
        .filter(|&m| m > mu_s.max(0.0) + options.mu_tol)
        .fold(f64::INFINITY, f64::min);
    if !r.is_finite() {
        let largest = osc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        return Err(Error::NoOscillatingMode(largest));
    }
    Ok(SyncTiming { mu_s: mu_s.max(0.0), r, tau_s: options.factor / r })
}

/// Filtered and unfiltered timings side by side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub filtered: SyncTiming,
    pub unfiltered: SyncTiming,
}

pub fn rate_report(spectrum: &LiouvilleSpectrum, options: &RateOptions) -> Result<RateReport> {
    let on = RateOptions { magnetization_filter: true, ..*options };
    let off = RateOptions { magnetization_filter: false, ..*options };
    Ok(RateReport { filtered: extract_rate(spectrum, &on)?, unfiltered: extract_rate(spectrum, &off)? })
}

/// Convenience: spectrum plus rate for one parameter point.
pub fn sync_timing(chain: &ChainSpec, noise: &NoiseSpec, options: &RateOptions) -> Result<SyncTiming> {
    let g = AveragedGenerator::new(chain, noise)?;
    extract_rate(&liouville_spectrum(&g, false)?, options)
}

/// `0, dt, 2 dt, ...` up to `t_max` inclusive (rounded to the nearest step).
pub fn uniform_grid(t_max: f64, dt: f64) -> Result<Vec<f64>> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Grid(format!("step must be positive, got {dt}")));
    }
    if !(t_max.is_finite() && t_max >= 0.0) {
        return Err(Error::Grid(format!("t_max must be nonnegative, got {t_max}")));
    }
    let steps = (t_max / dt).round() as usize;
    Ok((0..=steps).map(|i| i as f64 * dt).collect())
}

pub(crate) fn check_grid(grid: &[f64]) -> Result<()> {
    match grid.first() {
        None => return Err(Error::Grid("empty time grid".into())),
        Some(&t) if t != 0.0 => return Err(Error::Grid(format!("grid must start at 0, starts at {t}"))),
        _ => {}
    }
    if let Some(w) = grid.windows(2).find(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
        return Err(Error::Grid(format!("grid not strictly increasing at {} -> {}", w[0], w[1])));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PropagationMethod {
    /// Eigendecomposition of the generator.
    Spectral,
    /// Matrix exponential of the generator per grid step.
    Exponential,
}

#[derive(Debug, Clone)]
pub struct Propagation {
    pub states: Vec<CorrelationMatrix>,
    pub method: PropagationMethod,
    /// Why the spectral path was abandoned, if it was.
    pub fallback_reason: Option<String>,
}

impl Propagation {
    /// Magnetization series, one row per grid point.
    pub fn magnetizations(&self) -> Vec<Vec<f64>> {
        self.states.iter().map(|s| s.magnetizations()).collect()
    }
}

/// Relative residual above which the eigendecomposition is rejected.
const SPECTRAL_RESIDUAL_TOL: f64 = 1e-10;

fn vectorize(z: MatRef<'_, C64>) -> Mat<C64> {
    let n = z.nrows();
    Mat::from_fn(n * n, 1, |i, _| z[(i / n, i % n)])
}

fn unvectorize(v: MatRef<'_, C64>, n: usize, time: f64) -> CorrelationMatrix {
    CorrelationMatrix { z: Mat::from_fn(n, n, |j, k| v[(j * n + k, 0)]), time }
}

fn spectral(l: &CMat, z0: &Mat<C64>, grid: &[f64], n: usize) -> std::result::Result<Vec<CorrelationMatrix>, String> {
    let eig = l.eigen().map_err(|e| format!("eigensolver failed: {e:?}"))?;
    let v = eig.U().to_owned();
    let s: Vec<C64> = eig.S().column_vector().iter().copied().collect();
    let lu = v.partial_piv_lu();
    // residual of the decomposition L V = V S
    let lv = l * &v;
    let mut res: f64 = 0.0;
    for a in 0..s.len() {
        for i in 0..v.nrows() {
            res = res.max((lv[(i, a)] - v[(i, a)] * s[a]).norm());
        }
    }
    let scale = max_abs(l.as_ref()).max(1.0);
    if res > SPECTRAL_RESIDUAL_TOL * scale {
        return Err(format!("eigendecomposition residual {res:e}"));
    }
    let c = lu.solve(z0);
    // a nearly defective basis shows up as a large amplification of Z(0)
    let back = &v * &c;
    let mut err: f64 = 0.0;
    for i in 0..z0.nrows() {
        err = err.max((back[(i, 0)] - z0[(i, 0)]).norm());
    }
    let amp = (0..c.nrows()).map(|i| c[(i, 0)].norm()).fold(0.0, f64::max);
    if err > 1e-11 || amp > 1e6 {
        return Err(format!("ill-conditioned eigenbasis (reconstruction {err:e}, amplification {amp:e})"));
    }
    let mut out = Vec::with_capacity(grid.len());
    for &t in grid {
        let w = Mat::from_fn(s.len(), 1, |a, _| c[(a, 0)] * (s[a] * t).exp());
        out.push(unvectorize((&v * &w).as_ref(), n, t));
    }
    Ok(out)
}

fn exponential(l: &CMat, z0: &Mat<C64>, grid: &[f64], n: usize) -> Result<Vec<CorrelationMatrix>> {
    let mut out = Vec::with_capacity(grid.len());
    let mut state = z0.clone();
    out.push(unvectorize(state.as_ref(), n, 0.0));
    let mut cached: Option<(f64, CMat)> = None;
    for w in grid.windows(2) {
        let h = w[1] - w[0];
        let step = match &cached {
            Some((dt, e)) if (dt - h).abs() <= 1e-12 * h => e,
            _ => {
                let scaled = Mat::from_fn(l.nrows(), l.ncols(), |i, j| l[(i, j)] * h);
                cached = Some((h, expm(scaled.as_ref())?));
                &cached.as_ref().expect("just set").1
            }
        };
        state = step * &state;
        out.push(unvectorize(state.as_ref(), n, w[1]));
    }
    Ok(out)
}

/// Propagates `Z(0)` over `grid` (strictly increasing, starting at 0).
pub fn propagate(generator: &AveragedGenerator, initial: &InitialState, grid: &[f64]) -> Result<Propagation> {
    propagate_with(generator, initial, grid, PropagationMethod::Spectral)
}

/// Like [`propagate`] with an explicit preferred method. The spectral path
/// falls back to the exponential one when the eigenbasis is unreliable.
pub fn propagate_with(
    generator: &AveragedGenerator,
    initial: &InitialState,
    grid: &[f64],
    preferred: PropagationMethod,
) -> Result<Propagation> {
    check_grid(grid)?;
    let n = generator.n();
    let z0 = vectorize(initial.correlation_matrix(n)?.as_ref());
    let l = generator.to_dense();
    let (states, method, fallback_reason) = match preferred {
        PropagationMethod::Spectral => match spectral(&l, &z0, grid, n) {
            Ok(s) => (s, PropagationMethod::Spectral, None),
            Err(why) => (exponential(&l, &z0, grid, n)?, PropagationMethod::Exponential, Some(why)),
        },
        PropagationMethod::Exponential => (exponential(&l, &z0, grid, n)?, PropagationMethod::Exponential, None),
    };
    if let Some((i, _)) = states
        .iter()
        .enumerate()
        .find(|(_, s)| s.z.col_iter().any(|c| c.iter().any(|x| !x.re.is_finite() || !x.im.is_finite())))
    {
        return Err(Error::Numerical(format!("non-finite correlation matrix at grid index {i}")));
    }
    Ok(Propagation { states, method, fallback_reason })
}

/// Smallest and largest eigenvalue of a correlation matrix.
pub fn occupation_bounds(z: &CorrelationMatrix) -> Result<(f64, f64)> {
    let ev = hermitian_eigenvalues(z.z.as_ref())?;
    Ok((ev[0], ev[ev.len() - 1]))
}
