//! Single noise realizations and ensemble averages.
//!
//! For one realization of the white noise `xi` (with `<xi(t) xi(s)> =
//! gamma delta(t - s)`) the correlation matrix follows the Stratonovich
//! equation `dZ = i[Omega/J, Z] dtau + i[Y, Z] o dW sqrt(gamma)`, whose
//! average is the generator in [`crate::evolve`].
//!
//! Trajectory `m` draws its increments from a ChaCha20 stream seeded with
//! `seed` and stream number `m`, so its content does not depend on scheduling.

use faer::Mat;
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolve::CorrelationMatrix;
use crate::linalg::{expm, CompensatedSum, CMat, I};
use crate::model::{ChainSpec, InitialState, NoiseSpec, NOISE_SITE_WEIGHT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// `Z <- U Z U^dag` with `U = exp(i Omega dt/2) exp(i Y sqrt(gamma) dW)
    /// exp(i Omega dt/2)`. Each factor is exact; averaging the diagonal noise
    /// factor reproduces the dephasing over `dt` exactly, so the ensemble
    /// mean carries only the second-order splitting error.
    #[default]
    StrangSplitting,
    /// Stratonovich Heun predictor-corrector on `Z`.
    StratonovichHeun,
    /// Explicit Euler-Maruyama on `Z`, read as an Ito equation without the
    /// drift correction. Its mean follows the noiseless dynamics; kept for
    /// comparison only.
    EulerMaruyama,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub dt: f64,
    pub t_max: f64,
    pub n_traj: u64,
    pub seed: u64,
    pub scheme: Scheme,
    /// Spacing of recorded time points; a multiple of `dt`.
    pub output_dt: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig {
            dt: 1e-3,
            t_max: 10.0,
            n_traj: 10_000,
            seed: 0,
            scheme: Scheme::StrangSplitting,
            output_dt: 0.05,
        }
    }
}

impl TrajectoryConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::TrajectoryConfig(m));
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_max.is_finite() && self.t_max >= self.dt) {
            return bad(format!("t_max must be at least dt, got {}", self.t_max));
        }
        if self.n_traj == 0 {
            return bad("n_traj must be at least 1".into());
        }
        self.stride()?;
        Ok(())
    }

    fn stride(&self) -> Result<usize> {
        let s = (self.output_dt / self.dt).round();
        if !(s >= 1.0) || (s * self.dt - self.output_dt).abs() > 1e-9 * self.output_dt {
            return Err(Error::TrajectoryConfig(format!(
                "output_dt {} is not a positive multiple of dt {}",
                self.output_dt, self.dt
            )));
        }
        Ok(s as usize)
    }

    fn steps(&self) -> usize {
        (self.t_max / self.dt).round() as usize
    }

    /// Recorded time points.
    pub fn output_times(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let stride = self.stride()?;
        Ok((0..=self.steps() / stride).map(|k| (k * stride) as f64 * self.dt).collect())
    }
}

// Omega/J, the noise weights and the free half-step propagator.
#[derive(Debug, Clone)]
struct Operators {
    n: usize,
    onsite: f64,
    noise: Vec<f64>,
    sqrt_gamma: f64,
    /// `exp(i Omega dt / 2)`, row-major.
    half_step: Vec<C64>,
}

impl Operators {
    fn new(chain: &ChainSpec, noise: &NoiseSpec, dt: f64) -> Result<Self> {
        noise.validate(chain)?;
        let n = chain.n();
        let p = noise.indicator(n);
        let mut ops = Operators {
            n,
            onsite: 2.0 * chain.reduced_field(),
            noise: p.iter().map(|x| NOISE_SITE_WEIGHT * x).collect(),
            sqrt_gamma: noise.gamma().sqrt(),
            half_step: Vec::new(),
        };
        let gen = ops.omega() * faer::Scale(I * (0.5 * dt));
        let u = expm(gen.as_ref())?;
        ops.half_step = (0..n * n).map(|i| u[(i / n, i % n)]).collect();
        Ok(ops)
    }

    fn omega(&self) -> CMat {
        Mat::from_fn(self.n, self.n, |i, j| {
            let x = if i == j {
                self.onsite
            } else if i.abs_diff(j) == 1 {
                1.0
            } else {
                0.0
            };
            C64::new(x, 0.0)
        })
    }

    fn y(&self) -> CMat {
        Mat::from_fn(self.n, self.n, |i, j| if i == j { C64::new(self.noise[i], 0.0) } else { C64::new(0.0, 0.0) })
    }

    // generous bound on the spectral radius of the averaged generator
    fn rate_bound(&self) -> f64 {
        2.0 * (self.onsite.abs() + 2.0) + self.sqrt_gamma.powi(2) * 2.0 * NOISE_SITE_WEIGHT.powi(2)
    }

    // v <- exp(i Omega dt/2) v
    fn half(&self, v: &mut [C64], scratch: &mut [C64]) {
        let n = self.n;
        for (j, out) in scratch.iter_mut().enumerate() {
            let row = &self.half_step[j * n..(j + 1) * n];
            *out = row.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
        }
        v.copy_from_slice(scratch);
    }
}

enum State {
    // weighted single-particle vectors, Z = sum_a w_a v_a v_a^dag
    Vectors { weights: Vec<f64>, vectors: Vec<Vec<C64>>, scratch: Vec<C64> },
    Matrix { z: CMat, omega: CMat, y: CMat },
}

impl State {
    fn new(ops: &Operators, initial: &InitialState, scheme: Scheme) -> Result<Self> {
        let n = ops.n;
        let z = initial.correlation_matrix(n)?;
        match scheme {
            Scheme::StrangSplitting => {
                let (weights, vectors) = match initial {
                    InitialState::Populations(p) => p
                        .iter()
                        .enumerate()
                        .filter(|(_, w)| **w > 0.0)
                        .map(|(j, w)| {
                            let mut v = vec![C64::new(0.0, 0.0); n];
                            v[j] = C64::new(1.0, 0.0);
                            (*w, v)
                        })
                        .unzip(),
                    InitialState::Correlation(_) => {
                        let eig = z
                            .self_adjoint_eigen(faer::Side::Lower)
                            .map_err(|e| Error::Numerical(format!("eigensolver failed: {e:?}")))?;
                        let s = eig.S().column_vector();
                        let u = eig.U();
                        (0..n)
                            .filter(|&a| s[a].re > 1e-15)
                            .map(|a| (s[a].re, u.col(a).iter().copied().collect()))
                            .unzip()
                    }
                };
                Ok(State::Vectors { weights, vectors, scratch: vec![C64::new(0.0, 0.0); n] })
            }
            _ => Ok(State::Matrix { z, omega: ops.omega(), y: ops.y() }),
        }
    }

    fn step(&mut self, ops: &Operators, scheme: Scheme, dt: f64, dw: f64) {
        let s = ops.sqrt_gamma * dw;
        match self {
            State::Vectors { vectors, scratch, .. } => {
                for v in vectors.iter_mut() {
                    ops.half(v, scratch);
                    for (x, &y) in v.iter_mut().zip(&ops.noise) {
                        if y != 0.0 {
                            *x *= C64::from_polar(1.0, y * s);
                        }
                    }
                    ops.half(v, scratch);
                }
            }
            State::Matrix { z, omega, y } => {
                let comm = |a: &CMat, b: &CMat| -> CMat { (a * b - b * a) * faer::Scale(I) };
                let incr = |z: &CMat| -> CMat { comm(omega, z) * faer::Scale(C64::new(dt, 0.0)) + comm(y, z) * faer::Scale(C64::new(s, 0.0)) };
                let k1 = incr(z);
                match scheme {
                    Scheme::EulerMaruyama => *z += k1,
                    _ => {
                        let pred = &*z + &k1;
                        let k2 = incr(&pred);
                        *z += (k1 + k2) * faer::Scale(C64::new(0.5, 0.0));
                    }
                }
            }
        }
    }

    fn magnetizations(&self, out: &mut [f64]) {
        match self {
            State::Vectors { weights, vectors, .. } => {
                out.iter_mut().for_each(|x| *x = -1.0);
                for (w, v) in weights.iter().zip(vectors) {
                    for (o, x) in out.iter_mut().zip(v) {
                        *o += 2.0 * w * x.norm_sqr();
                    }
                }
            }
            State::Matrix { z, .. } => {
                for (j, o) in out.iter_mut().enumerate() {
                    *o = 2.0 * z[(j, j)].re - 1.0;
                }
            }
        }
    }

    fn correlation(&self, n: usize) -> CMat {
        match self {
            State::Vectors { weights, vectors, .. } => {
                let mut z = Mat::<C64>::zeros(n, n);
                for (w, v) in weights.iter().zip(vectors) {
                    for j in 0..n {
                        for k in 0..n {
                            z[(j, k)] += v[j] * v[k].conj() * *w;
                        }
                    }
                }
                z
            }
            State::Matrix { z, .. } => z.clone(),
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            State::Vectors { vectors, .. } => vectors.iter().flatten().all(|x| x.re.is_finite() && x.im.is_finite()),
            State::Matrix { z, .. } => z.col_iter().all(|c| c.iter().all(|x| x.re.is_finite() && x.im.is_finite())),
        }
    }
}

fn rng_for(seed: u64, traj_index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(traj_index);
    rng
}

fn step_warning(ops: &Operators, config: &TrajectoryConfig) -> Option<String> {
    let x = ops.rate_bound() * config.dt;
    (x > 0.5).then(|| format!("dt = {} is large: spectral radius times dt is about {x:.3} (> 0.5)", config.dt))
}

// Runs one realization, handing (output index, state) to `record`.
fn run(
    ops: &Operators,
    initial: &InitialState,
    config: &TrajectoryConfig,
    traj_index: u64,
    mut record: impl FnMut(usize, &State),
) -> Result<()> {
    let stride = config.stride()?;
    let steps = config.steps();
    let mut rng = rng_for(config.seed, traj_index);
    let mut state = State::new(ops, initial, config.scheme)?;
    let sdt = config.dt.sqrt();
    record(0, &state);
    for step in 1..=steps {
        let z: f64 = StandardNormal.sample(&mut rng);
        state.step(ops, config.scheme, config.dt, sdt * z);
        if step % stride == 0 {
            if !state.is_finite() {
                return Err(Error::NonFinite { trajectory: traj_index, step });
            }
            record(step / stride, &state);
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub traj_index: u64,
    pub states: Vec<CorrelationMatrix>,
    pub warnings: Vec<String>,
}

/// One noise realization, recorded every `output_dt`.
pub fn integrate_single(
    chain: &ChainSpec,
    noise: &NoiseSpec,
    initial: &InitialState,
    config: &TrajectoryConfig,
    traj_index: u64,
) -> Result<Trajectory> {
    config.validate()?;
    if traj_index >= config.n_traj {
        return Err(Error::TrajectoryConfig(format!(
            "trajectory index {traj_index} outside 0..{}",
            config.n_traj
        )));
    }
    let ops = Operators::new(chain, noise, config.dt)?;
    let times = config.output_times()?;
    let n = chain.n();
    let mut states = Vec::with_capacity(times.len());
    run(&ops, initial, config, traj_index, |k, s| {
        states.push(CorrelationMatrix { z: s.correlation(n), time: times[k] })
    })?;
    Ok(Trajectory { traj_index, states, warnings: step_warning(&ops, config).into_iter().collect() })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub times: Vec<f64>,
    /// `mean_magnetizations[t][j]`.
    pub mean_magnetizations: Vec<Vec<f64>>,
    /// Standard error of the mean from the unbiased variance; zero when a
    /// single trajectory is run.
    pub stderr: Vec<Vec<f64>>,
    pub config: TrajectoryConfig,
    pub warnings: Vec<String>,
}

/// Trajectories per parallel batch; the reduction order is fixed by index.
const BATCH: u64 = 256;

/// Averages `n_traj` realizations.
pub fn ensemble_average(
    chain: &ChainSpec,
    noise: &NoiseSpec,
    initial: &InitialState,
    config: &TrajectoryConfig,
) -> Result<EnsembleResult> {
    config.validate()?;
    let ops = Operators::new(chain, noise, config.dt)?;
    initial.correlation_matrix(chain.n())?;
    let times = config.output_times()?;
    let (n, nt) = (chain.n(), times.len());
    // moments of the deviation from trajectory 0, which sits within a few
    // standard deviations of the mean and so avoids cancellation in the variance
    let mut shift: Option<Vec<f64>> = None;
    let mut sum = vec![CompensatedSum::default(); nt * n];
    let mut sq = vec![CompensatedSum::default(); nt * n];

    let mut start = 0;
    while start < config.n_traj {
        let end = (start + BATCH).min(config.n_traj);
        let batch: Vec<Vec<f64>> = (start..end)
            .into_par_iter()
            .map(|m| {
                let mut series = vec![0.0; nt * n];
                run(&ops, initial, config, m, |k, s| s.magnetizations(&mut series[k * n..(k + 1) * n]))?;
                Ok(series)
            })
            .collect::<Result<_>>()?;
        let shift = shift.get_or_insert_with(|| batch[0].clone());
        for series in &batch {
            for (i, (&x, &c)) in series.iter().zip(shift.iter()).enumerate() {
                let d = x - c;
                sum[i].add(d);
                sq[i].add(d * d);
            }
        }
        start = end;
    }

    let shift = shift.expect("at least one trajectory");
    let m = config.n_traj as f64;
    let mut mean = vec![vec![0.0; n]; nt];
    let mut stderr = vec![vec![0.0; n]; nt];
    for t in 0..nt {
        for j in 0..n {
            let i = t * n + j;
            let d = sum[i].value() / m;
            mean[t][j] = shift[i] + d;
            if config.n_traj > 1 {
                let var = ((sq[i].value() - m * d * d) / (m - 1.0)).max(0.0);
                stderr[t][j] = (var / m).sqrt();
            }
        }
    }
    Ok(EnsembleResult {
        times,
        mean_magnetizations: mean,
        stderr,
        config: *config,
        warnings: step_warning(&ops, config).into_iter().collect(),
    })
}
