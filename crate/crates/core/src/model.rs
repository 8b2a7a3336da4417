//! Chain and noise specifications, and the single-particle (Jordan–Wigner)
//! picture of the XY chain.
//!
//! All energies are measured in units of the coupling `J` and all times in
//! `tau = J t`. Site and mode labels are 1-based everywhere in the public API.

use std::f64::consts::PI;

use faer::Mat;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{hermiticity_defect, hermitian_eigenvalues, CMat};

/// Weight of a noisy site in the single-particle noise operator.
///
/// Under the Jordan–Wigner map `sigma^z_u = 2 n_u - 1`, so a noise term
/// `xi(t) sigma^z_u` acts on the fermions as `2 xi(t) n_u` (the constant drops
/// out of every commutator).
pub const NOISE_SITE_WEIGHT: f64 = 2.0;

/// Open XY chain with uniform coupling `J` and transverse field `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    n_sites: usize,
    coupling: f64,
    field: f64,
}

impl ChainSpec {
    pub fn new(n_sites: usize, coupling: f64, field: f64) -> Result<Self> {
        if n_sites < 2 {
            return Err(Error::ChainTooShort(n_sites));
        }
        if !(coupling.is_finite() && coupling > 0.0) {
            return Err(Error::BadCoupling(coupling));
        }
        if !field.is_finite() {
            return Err(Error::BadField(field));
        }
        Ok(ChainSpec { n_sites, coupling, field })
    }

    /// Chain of `n` sites with `J = h = 1`.
    pub fn unit(n_sites: usize) -> Result<Self> {
        Self::new(n_sites, 1.0, 1.0)
    }

    pub fn n(&self) -> usize {
        self.n_sites
    }

    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    pub fn field(&self) -> f64 {
        self.field
    }

    /// `h / J`.
    pub fn reduced_field(&self) -> f64 {
        self.field / self.coupling
    }

    pub fn check_site(&self, site: usize) -> Result<()> {
        if site == 0 || site > self.n_sites {
            Err(Error::SiteOutOfRange { site, n: self.n_sites })
        } else {
            Ok(())
        }
    }

    pub fn check_pair(&self, k: usize, l: usize) -> Result<()> {
        if k == 0 || k >= l || l > self.n_sites {
            Err(Error::BadModePair { k, l, n: self.n_sites })
        } else {
            Ok(())
        }
    }
}

/// Classical white noise `xi(t)` coupled to `sum_u sigma^z_u` over one or two
/// sites, with reduced strength `gamma = Gamma / J`.
///
/// Site ranges depend on the chain, so consumers call [`NoiseSpec::validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    sites: Vec<usize>,
    gamma: f64,
}

impl NoiseSpec {
    pub fn new(sites: Vec<usize>, gamma: f64) -> Result<Self> {
        if sites.is_empty() || sites.len() > 2 {
            return Err(Error::UnsupportedSiteCount(sites.len()));
        }
        if sites.len() == 2 && sites[0] == sites[1] {
            return Err(Error::DuplicateSite(sites[0]));
        }
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(Error::NegativeGamma(gamma));
        }
        Ok(NoiseSpec { sites, gamma })
    }

    pub fn one_site(site: usize, gamma: f64) -> Result<Self> {
        Self::new(vec![site], gamma)
    }

    pub fn two_site(u: usize, v: usize, gamma: f64) -> Result<Self> {
        Self::new(vec![u, v], gamma)
    }

    pub fn sites(&self) -> &[usize] {
        &self.sites
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(self.sites.clone(), gamma)
    }

    /// Checks every site against the chain length.
    pub fn validate(&self, chain: &ChainSpec) -> Result<()> {
        self.sites.iter().try_for_each(|&s| chain.check_site(s))
    }

    /// 0/1 indicator of the noisy sites, indexed from zero.
    pub fn indicator(&self, n: usize) -> Vec<f64> {
        let mut p = vec![0.0; n];
        for &s in &self.sites {
            if (1..=n).contains(&s) {
                p[s - 1] = 1.0;
            }
        }
        p
    }
}

/// Closed-form eigensystem of the tridiagonal single-particle matrix.
#[derive(Debug, Clone)]
pub struct SingleParticleEigensystem {
    lambdas: Vec<f64>,
    vectors: Vec<Vec<f64>>,
}

impl SingleParticleEigensystem {
    pub fn n(&self) -> usize {
        self.lambdas.len()
    }

    /// Eigenvalue `Lambda_k`, `k` in `1..=N`.
    pub fn lambda(&self, k: usize) -> f64 {
        self.lambdas[k - 1]
    }

    /// Eigenvector `phi_k`, `k` in `1..=N`; component `j` is stored at `j-1`.
    pub fn vector(&self, k: usize) -> &[f64] {
        &self.vectors[k - 1]
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    /// Frequency `Lambda_k - Lambda_l` of the single-particle coherence `(k,l)`.
    pub fn frequency(&self, k: usize, l: usize) -> f64 {
        self.lambda(k) - self.lambda(l)
    }
}

/// Initial single-particle state.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    /// Diagonal correlation matrix with the given site occupations.
    Populations(Vec<f64>),
    /// Full Hermitian correlation matrix `Z(0)`.
    Correlation(CMat),
}

impl InitialState {
    /// One excitation on `site` (1-based), all other sites empty.
    pub fn excitation_on(n: usize, site: usize) -> Result<Self> {
        if site == 0 || site > n {
            return Err(Error::SiteOutOfRange { site, n });
        }
        let mut p = vec![0.0; n];
        p[site - 1] = 1.0;
        Ok(InitialState::Populations(p))
    }

    /// The default used throughout: the first spin excited.
    pub fn first_site_excited(n: usize) -> Self {
        let mut p = vec![0.0; n];
        p[0] = 1.0;
        InitialState::Populations(p)
    }

    /// Validated correlation matrix `Z(0)`.
    pub fn correlation_matrix(&self, n: usize) -> Result<CMat> {
        let z = match self {
            InitialState::Populations(p) => {
                if p.len() != n {
                    return Err(Error::InitialState(format!(
                        "expected {n} populations, got {}",
                        p.len()
                    )));
                }
                if let Some(x) = p.iter().find(|x| !(0.0..=1.0).contains(*x)) {
                    return Err(Error::InitialState(format!("population {x} outside [0,1]")));
                }
                Mat::from_fn(n, n, |i, j| if i == j { C64::new(p[i], 0.0) } else { C64::new(0.0, 0.0) })
            }
            InitialState::Correlation(z) => {
                if z.nrows() != n || z.ncols() != n {
                    return Err(Error::InitialState(format!(
                        "expected a {n}x{n} matrix, got {}x{}",
                        z.nrows(),
                        z.ncols()
                    )));
                }
                let defect = hermiticity_defect(z.as_ref());
                if defect > 1e-10 {
                    return Err(Error::InitialState(format!(
                        "correlation matrix is not Hermitian (defect {defect:e})"
                    )));
                }
                let ev = hermitian_eigenvalues(z.as_ref())?;
                let (lo, hi) = (ev[0], ev[ev.len() - 1]);
                if lo < -1e-10 || hi > 1.0 + 1e-10 {
                    return Err(Error::InitialState(format!(
                        "correlation matrix eigenvalues must lie in [0,1], found [{lo}, {hi}]"
                    )));
                }
                z.clone()
            }
        };
        Ok(z)
    }
}

/// Single-particle hopping matrix `Omega / J`: `2h/J` on the diagonal and 1 on
/// the first off-diagonals.
pub fn build_jw_matrix(chain: &ChainSpec) -> Mat<f64> {
    let n = chain.n();
    let d = 2.0 * chain.reduced_field();
    Mat::from_fn(n, n, |i, j| {
        if i == j {
            d
        } else if i.abs_diff(j) == 1 {
            1.0
        } else {
            0.0
        }
    })
}

/// Eigenvalues `2h/J + 2 cos(k pi/(N+1))` and sine eigenvectors of the
/// tridiagonal Toeplitz matrix returned by [`build_jw_matrix`].
pub fn toeplitz_eigensystem(chain: &ChainSpec) -> SingleParticleEigensystem {
    let n = chain.n();
    let np1 = (n + 1) as f64;
    let norm = (2.0 / np1).sqrt();
    let lambdas = (1..=n)
        .map(|k| 2.0 * chain.reduced_field() + 2.0 * (k as f64 * PI / np1).cos())
        .collect();
    let vectors = (1..=n)
        .map(|k| (1..=n).map(|j| norm * sine(j * k, n + 1)).collect())
        .collect();
    SingleParticleEigensystem { lambdas, vectors }
}

/// `sin(m pi / d)` with the argument reduced mod `2d` so exact zeros stay
/// exact.
pub(crate) fn sine(m: usize, d: usize) -> f64 {
    let r = m % (2 * d);
    if r == 0 || r == d {
        0.0
    } else {
        (r as f64 * PI / d as f64).sin()
    }
}

/// Single-particle noise operator `Y = 2 sum_u |e_u><e_u|`.
///
/// The noise-averaged correlation dynamics read
/// `dZ/dtau = i[Omega/J, Z] - (gamma/2) [Y, [Y, Z]]`, the exact image of the
/// spin-level dephasing `-(gamma/2)[V, [V, rho]]` with `V = sum_u sigma^z_u`.
pub fn noise_projector(noise: &NoiseSpec, chain: &ChainSpec) -> Result<Mat<f64>> {
    noise.validate(chain)?;
    let p = noise.indicator(chain.n());
    Ok(Mat::from_fn(chain.n(), chain.n(), |i, j| {
        if i == j {
            NOISE_SITE_WEIGHT * p[i]
        } else {
            0.0
        }
    }))
}
