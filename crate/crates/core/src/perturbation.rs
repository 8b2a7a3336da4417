//! First-order perturbation theory in the noise strength.
//!
//! A magnetization mode `(k,l)`, `k < l`, oscillates at `Lambda_k - Lambda_l`
//! and decays at `gamma * m_kl`. The rates follow from the dephasing
//! superoperator `Z_jk -> -2 gamma (p_j - p_k)^2 Z_jk` (with `p` the noisy-site
//! indicator) projected onto the unperturbed mode space. Modes sharing a
//! frequency are handled with degenerate perturbation theory: the partner
//! `(N+1-l, N+1-k)` always shares the frequency of `(k,l)`, and a few chain
//! lengths carry extra accidental coincidences that merge several partner
//! classes into one cluster.

use std::f64::consts::PI;

use faer::{Mat, Side};
use num_complex::Complex64 as C64;
use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{toeplitz_eigensystem, ChainSpec, InitialState, NoiseSpec, SingleParticleEigensystem};

/// Frequencies closer than this are treated as equal.
pub const FREQUENCY_TOL: f64 = 1e-9;

/// Decay constants below this count as exactly zero in the mode scan.
pub const ZERO_DECAY_TOL: f64 = 1e-12;

/// Degeneracy class of a magnetization mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Degeneracy {
    /// `l = N+1-k`: the mode is its own partner.
    Nondegenerate,
    /// Twofold degenerate with the mirror partner `(N+1-l, N+1-k)`.
    Partner { k: usize, l: usize },
    /// Frequency shared with further pairs beyond the mirror partner. The list
    /// holds every other pair of the cluster.
    Accidental { pairs: Vec<(usize, usize)> },
}

/// `(N+1-l, N+1-k)`.
pub fn partner(n: usize, k: usize, l: usize) -> (usize, usize) {
    (n + 1 - l, n + 1 - k)
}

fn all_pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (1..=n).flat_map(move |k| (k + 1..=n).map(move |l| (k, l)))
}

/// Classifies `(k,l)` by the exact partner relation, then looks for accidental
/// coincidences with other partner classes.
pub fn classify(chain: &ChainSpec, k: usize, l: usize) -> Result<Degeneracy> {
    chain.check_pair(k, l)?;
    let n = chain.n();
    let es = toeplitz_eigensystem(chain);
    Ok(classify_with(&es, n, k, l))
}

fn classify_with(es: &SingleParticleEigensystem, n: usize, k: usize, l: usize) -> Degeneracy {
    let p = partner(n, k, l);
    let w = es.frequency(k, l);
    let others: Vec<_> = all_pairs(n)
        .filter(|&q| q != (k, l) && q != p && (es.frequency(q.0, q.1) - w).abs() < FREQUENCY_TOL)
        .collect();
    if !others.is_empty() {
        let mut pairs = others;
        if p != (k, l) {
            pairs.push(p);
        }
        pairs.sort_unstable();
        Degeneracy::Accidental { pairs }
    } else if p == (k, l) {
        Degeneracy::Nondegenerate
    } else {
        Degeneracy::Partner { k: p.0, l: p.1 }
    }
}

/// `sin^2(m pi / d)` as an exact fraction when it is rational.
///
/// By Niven's theorem this happens only when the reduced angle is a multiple
/// of `pi/6` or `pi/4`.
pub fn sin_sq_exact(m: usize, d: usize) -> Option<Ratio<i64>> {
    let r = Ratio::new((m % d) as i64, d as i64);
    let v = match *r.denom() {
        1 => (0, 1),
        2 => (1, 1),
        3 => (3, 4),
        4 => (1, 2),
        6 => (1, 4),
        _ => return None,
    };
    Some(Ratio::new(v.0, v.1))
}

/// A decay constant in units of `gamma`, with its exact value when all the
/// trigonometric ingredients are rational.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayConstant {
    pub value: f64,
    pub exact: Option<Ratio<i64>>,
}

impl DecayConstant {
    fn float(value: f64) -> Self {
        DecayConstant { value, exact: None }
    }

    fn from_exact(exact: Option<Ratio<i64>>, value: f64) -> Self {
        match exact {
            Some(q) => DecayConstant { value: *q.numer() as f64 / *q.denom() as f64, exact: Some(q) },
            None => DecayConstant::float(value),
        }
    }
}

// Weighted squared mode amplitude summed over the noisy sites, sum_u phi_k(u)^2.
fn weight(es: &SingleParticleEigensystem, sites: &[usize], k: usize) -> f64 {
    sites.iter().map(|&u| es.vector(k)[u - 1].powi(2)).sum()
}

fn weight_exact(n: usize, sites: &[usize], k: usize) -> Option<Ratio<i64>> {
    let norm = Ratio::new(2, (n + 1) as i64);
    sites
        .iter()
        .map(|&u| sin_sq_exact(u * k, n + 1).map(|s| s * norm))
        .sum()
}

// Coupling g = sum_u (-1)^u phi_k(u) phi_l(u) between (k,l) and its partner;
// the off-diagonal rate element is -4 g^2.
fn partner_coupling(es: &SingleParticleEigensystem, sites: &[usize], k: usize, l: usize) -> f64 {
    sites
        .iter()
        .map(|&u| {
            let s = if u % 2 == 0 { 1.0 } else { -1.0 };
            s * es.vector(k)[u - 1] * es.vector(l)[u - 1]
        })
        .sum()
}

fn is_square(x: i64) -> Option<i64> {
    if x < 0 {
        return None;
    }
    let r = (x as f64).sqrt().round() as i64;
    (r * r == x).then_some(r)
}

fn rational_sqrt(q: Ratio<i64>) -> Option<Ratio<i64>> {
    Some(Ratio::new(is_square(*q.numer())?, is_square(*q.denom())?))
}

fn partner_coupling_sq_exact(
    es: &SingleParticleEigensystem,
    n: usize,
    sites: &[usize],
    k: usize,
    l: usize,
) -> Option<Ratio<i64>> {
    // g^2 = sum_u a_u b_u + 2 sum_{u<v} (sign) sqrt(a_u b_u a_v b_v)
    let norm = Ratio::new(2, (n + 1) as i64);
    let terms: Vec<Ratio<i64>> = sites
        .iter()
        .map(|&u| Some(sin_sq_exact(u * k, n + 1)? * sin_sq_exact(u * l, n + 1)? * norm * norm))
        .collect::<Option<_>>()?;
    let mut total: Ratio<i64> = terms.iter().copied().sum();
    for i in 0..sites.len() {
        for j in i + 1..sites.len() {
            let root = rational_sqrt(terms[i] * terms[j])?;
            let gi = partner_coupling(es, &sites[i..=i], k, l);
            let gj = partner_coupling(es, &sites[j..=j], k, l);
            let sign = if gi * gj < 0.0 { -1 } else { 1 };
            total += root * Ratio::from_integer(2 * sign);
        }
    }
    Some(total)
}

/// First-order rate matrix on a set of equal-frequency modes,
/// `R_{ab} = 2 sum_{j,j'} (p_j - p_j')^2 phi_ka(j) phi_la(j') phi_kb(j) phi_lb(j')`.
pub fn rate_matrix(es: &SingleParticleEigensystem, indicator: &[f64], pairs: &[(usize, usize)]) -> Mat<f64> {
    let n = es.n();
    let m = pairs.len();
    let mut r = Mat::<f64>::zeros(m, m);
    for a in 0..m {
        for b in a..m {
            let (ka, la) = pairs[a];
            let (kb, lb) = pairs[b];
            let (pka, pla) = (es.vector(ka), es.vector(la));
            let (pkb, plb) = (es.vector(kb), es.vector(lb));
            let mut s = 0.0;
            for j in 0..n {
                let left = pka[j] * pkb[j];
                if left == 0.0 {
                    continue;
                }
                for jp in 0..n {
                    let d = (indicator[j] - indicator[jp]).powi(2);
                    if d != 0.0 {
                        s += d * left * pla[jp] * plb[jp];
                    }
                }
            }
            r[(a, b)] = 2.0 * s;
            r[(b, a)] = 2.0 * s;
        }
    }
    r
}

/// Eigenvalues of [`rate_matrix`], ascending.
pub fn cluster_rates(es: &SingleParticleEigensystem, indicator: &[f64], pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    let r = rate_matrix(es, indicator, pairs);
    let mut ev = r
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Numerical(format!("rate-matrix eigensolver failed: {e:?}")))?;
    ev.sort_by(|a, b| a.total_cmp(b));
    Ok(ev)
}

fn decay(chain: &ChainSpec, sites: &[usize], k: usize, l: usize, degeneracy: &Degeneracy) -> Result<DecayConstant> {
    chain.check_pair(k, l)?;
    for &s in sites {
        chain.check_site(s)?;
    }
    let n = chain.n();
    let es = toeplitz_eigensystem(chain);
    let (a, b) = (weight(&es, sites, k), weight(&es, sites, l));
    let diag = 2.0 * (a + b - 2.0 * a * b);
    let diag_exact = match (weight_exact(n, sites, k), weight_exact(n, sites, l)) {
        (Some(a), Some(b)) => Some(Ratio::from_integer(2) * (a + b - Ratio::from_integer(2) * a * b)),
        _ => None,
    };
    match degeneracy {
        Degeneracy::Nondegenerate => Ok(DecayConstant::from_exact(diag_exact, diag)),
        Degeneracy::Partner { .. } => {
            let g = partner_coupling(&es, sites, k, l);
            let value = (diag - 4.0 * g * g).max(0.0);
            let exact = match (diag_exact, partner_coupling_sq_exact(&es, n, sites, k, l)) {
                (Some(d), Some(g2)) => Some(d - Ratio::from_integer(4) * g2),
                _ => None,
            };
            Ok(DecayConstant::from_exact(exact, value))
        }
        Degeneracy::Accidental { pairs } => {
            let mut cluster = vec![(k, l)];
            cluster.extend(pairs.iter().copied());
            let rates = cluster_rates(&es, &NoiseSpec::new(sites.to_vec(), 0.0)?.indicator(n), &cluster)?;
            Ok(DecayConstant::float(rates[0].max(0.0)))
        }
    }
}

/// One-site decay constant `m^u_kl`. For a partner-degenerate pair this is the
/// slower rate `m^-`; for an accidental cluster it is the slowest rate of the
/// cluster.
pub fn decay_one_site(chain: &ChainSpec, u: usize, k: usize, l: usize, degeneracy: &Degeneracy) -> Result<DecayConstant> {
    decay(chain, &[u], k, l, degeneracy)
}

/// Two-site decay constant `m^{u,v}_kl` for one noise process shared by both
/// sites, with the same conventions as [`decay_one_site`].
///
/// The partner coupling carries the relative sign `(-1)^(u+v)` between the
/// two site contributions.
pub fn decay_two_site(
    chain: &ChainSpec,
    u: usize,
    v: usize,
    k: usize,
    l: usize,
    degeneracy: &Degeneracy,
) -> Result<DecayConstant> {
    if u == v {
        return Err(Error::SameSite(u));
    }
    decay(chain, &[u, v], k, l, degeneracy)
}

/// Both rates `(m^-, m^+)` of a partner-degenerate pair.
pub fn partner_rates(chain: &ChainSpec, sites: &[usize], k: usize, l: usize) -> Result<(f64, f64)> {
    chain.check_pair(k, l)?;
    let es = toeplitz_eigensystem(chain);
    let (a, b) = (weight(&es, sites, k), weight(&es, sites, l));
    let d = 2.0 * (a + b - 2.0 * a * b);
    let g = partner_coupling(&es, sites, k, l);
    Ok(((d - 4.0 * g * g).max(0.0), d + 4.0 * g * g))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeEntry {
    pub k: usize,
    pub l: usize,
    pub frequency: f64,
    pub degeneracy: Degeneracy,
    /// `m_kl` in units of `gamma`; the slowest rate of the frequency cluster.
    pub decay: f64,
    /// Exact value as `(numerator, denominator)` when rational.
    pub decay_exact: Option<(i64, i64)>,
    /// `eps_{j,kl} = 2 phi_k(j) phi_l(j)`.
    pub mode_vector: Vec<f64>,
    /// `c_kl = phi_k^T Z(0) phi_l`.
    pub amplitude: C64,
}

/// Modes sharing one frequency and their first-order rates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrequencyCluster {
    pub frequency: f64,
    pub pairs: Vec<(usize, usize)>,
    /// Ascending, in units of `gamma`.
    pub rates: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeTable {
    pub n: usize,
    pub entries: Vec<ModeEntry>,
    /// Clusters in descending frequency.
    pub clusters: Vec<FrequencyCluster>,
}

impl ModeTable {
    pub fn entry(&self, k: usize, l: usize) -> Option<&ModeEntry> {
        self.entries.iter().find(|e| e.k == k && e.l == l)
    }

    pub fn distinct_frequencies(&self) -> usize {
        self.clusters.len()
    }

    /// Pairs whose decay constant vanishes.
    pub fn zero_decay_pairs(&self) -> Vec<(usize, usize)> {
        self.entries
            .iter()
            .filter(|e| e.decay < ZERO_DECAY_TOL)
            .map(|e| (e.k, e.l))
            .collect()
    }
}

/// Enumerates every magnetization mode with its frequency, degeneracy, decay
/// constant, mode vector and initial amplitude.
pub fn mode_table(chain: &ChainSpec, noise: &NoiseSpec, initial: &InitialState) -> Result<ModeTable> {
    noise.validate(chain)?;
    let n = chain.n();
    let es = toeplitz_eigensystem(chain);
    let z0 = initial.correlation_matrix(n)?;
    let indicator = noise.indicator(n);

    // group pairs into frequency clusters
    let mut pairs: Vec<(usize, usize)> = all_pairs(n).collect();
    pairs.sort_by(|a, b| es.frequency(b.0, b.1).total_cmp(&es.frequency(a.0, a.1)));
    let mut clusters: Vec<FrequencyCluster> = Vec::new();
    for p in pairs {
        let w = es.frequency(p.0, p.1);
        match clusters.last_mut() {
            Some(c) if (c.frequency - w).abs() < FREQUENCY_TOL => c.pairs.push(p),
            _ => clusters.push(FrequencyCluster { frequency: w, pairs: vec![p], rates: vec![] }),
        }
    }
    for c in &mut clusters {
        c.pairs.sort_unstable();
        c.rates = cluster_rates(&es, &indicator, &c.pairs)?
            .into_iter()
            .map(|r| if r.abs() < ZERO_DECAY_TOL { 0.0 } else { r })
            .collect();
    }

    let mut entries = Vec::new();
    for c in &clusters {
        for &(k, l) in &c.pairs {
            let degeneracy = classify_with(&es, n, k, l);
            let exact = match &degeneracy {
                Degeneracy::Accidental { .. } => None,
                d => decay(chain, noise.sites(), k, l, d)?.exact,
            };
            let decay = match exact {
                Some(q) => *q.numer() as f64 / *q.denom() as f64,
                None => c.rates[0].max(0.0),
            };
            let (pk, pl) = (es.vector(k), es.vector(l));
            let mut amplitude = C64::new(0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    amplitude += z0[(i, j)] * pk[i] * pl[j];
                }
            }
            entries.push(ModeEntry {
                k,
                l,
                frequency: c.frequency,
                degeneracy,
                decay,
                decay_exact: exact.map(|q| (*q.numer(), *q.denom())),
                mode_vector: (0..n).map(|j| 2.0 * pk[j] * pl[j]).collect(),
                amplitude,
            });
        }
    }
    entries.sort_by_key(|e| (e.k, e.l));
    Ok(ModeTable { n, entries, clusters })
}

/// Phase relation between the first and last spin in the stable mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EndRelation {
    InPhase,
    AntiPhase,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyncReport {
    pub satisfied: bool,
    pub surviving_pair: Option<(usize, usize)>,
    pub stable_mode: Option<Vec<f64>>,
    pub frequency: Option<f64>,
    pub end_relation: Option<EndRelation>,
    /// Every pair with vanishing first-order decay.
    pub zero_decay_pairs: Vec<(usize, usize)>,
    /// Smallest decay constant among the remaining modes.
    pub decay_gap: Option<f64>,
    /// Sites at which single-site noise alone gives stable synchronization.
    pub admissible_sites: Vec<usize>,
}

/// Stable synchronization holds when exactly one magnetization mode is immune
/// to the noise. Decided by an exhaustive scan of the mode table.
pub fn sync_condition(chain: &ChainSpec, noise: &NoiseSpec) -> Result<SyncReport> {
    noise.validate(chain)?;
    let n = chain.n();
    let table = mode_table(chain, noise, &InitialState::first_site_excited(n))?;
    let zeros = table.zero_decay_pairs();
    let admissible_sites = (1..=n).filter(|&u| single_site_synchronizes(n, u)).collect();

    let surviving = (zeros.len() == 1).then(|| zeros[0]);
    let decay_gap = surviving.map(|p| {
        table
            .entries
            .iter()
            .filter(|e| (e.k, e.l) != p)
            .map(|e| e.decay)
            .fold(f64::INFINITY, f64::min)
    });
    let (stable, relation) = match surviving {
        Some(p) => {
            let e = table.entry(p.0, p.1).expect("pair from the table");
            let v = e.mode_vector.clone();
            let rel = if v[0] * v[n - 1] > 0.0 { EndRelation::InPhase } else { EndRelation::AntiPhase };
            (Some(v), Some(rel))
        }
        None => (None, None),
    };
    Ok(SyncReport {
        satisfied: surviving.is_some(),
        surviving_pair: surviving,
        frequency: surviving.map(|(k, l)| toeplitz_eigensystem(chain).frequency(k, l)),
        stable_mode: stable,
        end_relation: relation,
        zero_decay_pairs: zeros,
        decay_gap,
        admissible_sites,
    })
}

// A single noisy site u freezes mode k iff sin(u k pi/(N+1)) = 0; exactly one
// frozen pair needs exactly two such k, i.e. gcd(u, N+1) = 3.
fn single_site_synchronizes(n: usize, u: usize) -> bool {
    (1..=n).filter(|&k| (u * k).is_multiple_of(n + 1)).count() == 2
}

/// Stable mode `(4/(N+1)) sin(j pi/3) sin(2 j pi/3)`, `j = 1..N`.
pub fn stable_mode(chain: &ChainSpec) -> Result<Vec<f64>> {
    let n = chain.n();
    if !(n + 1).is_multiple_of(3) {
        return Err(Error::NotDivisibleByThree(n + 1));
    }
    let c = 4.0 / (n + 1) as f64;
    Ok((1..=n)
        .map(|j| {
            let jf = j as f64;
            if j % 3 == 0 {
                0.0
            } else {
                c * (jf * PI / 3.0).sin() * (2.0 * jf * PI / 3.0).sin()
            }
        })
        .collect())
}
