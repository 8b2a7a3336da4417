//! Brute-force density-matrix engine for short chains.
//!
//! The Hamiltonian is assembled from Kronecker products of Pauli matrices with
//! site 1 as the leftmost factor. In the computational basis a set bit means
//! the spin is excited (`sigma^z = +1`); site `j` lives on bit `N - j`.
//!
//! Both the Hamiltonian and the dephasing operator conserve the excitation
//! number, so the Lindblad equation splits into independent blocks labelled by
//! the excitation numbers of the ket and bra sides. Each block is propagated
//! with its own matrix exponential.

use faer::{Mat, Scale};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{expm, hermiticity_defect, hermitian_eigenvalues, CMat, I};
use crate::model::{ChainSpec, InitialState, NoiseSpec};

pub const DEFAULT_CAP: usize = 6;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// How two noisy sites couple to the noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseChannels {
    /// One process on `V = sum_u sigma^z_u`: `-(gamma/2)[V,[V,rho]]`.
    #[default]
    Shared,
    /// Independent processes: `-(gamma/2) sum_u [sigma^z_u,[sigma^z_u,rho]]`.
    Independent,
}

fn check_cap(n: usize, cap: usize) -> Result<()> {
    if n > cap {
        Err(Error::ReferenceCap { n, cap })
    } else {
        Ok(())
    }
}

// local basis (down, up)
fn pauli(which: char) -> CMat {
    let mut m = Mat::<C64>::zeros(2, 2);
    match which {
        'x' => {
            m[(0, 1)] = ONE;
            m[(1, 0)] = ONE;
        }
        'y' => {
            m[(0, 1)] = I;
            m[(1, 0)] = -I;
        }
        'z' => {
            m[(0, 0)] = -ONE;
            m[(1, 1)] = ONE;
        }
        _ => {
            m[(0, 0)] = ONE;
            m[(1, 1)] = ONE;
        }
    }
    m
}

fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac, br, bc) = (a.nrows(), a.ncols(), b.nrows(), b.ncols());
    Mat::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

/// Product of single-site operators; `ops[j-1]` acts on site `j`.
fn site_product(ops: &[CMat]) -> CMat {
    ops.iter().skip(1).fold(ops[0].clone(), |acc, o| kron(&acc, o))
}

fn embed(n: usize, placed: &[(usize, char)]) -> CMat {
    let ops: Vec<CMat> = (1..=n)
        .map(|j| match placed.iter().find(|(s, _)| *s == j) {
            Some((_, p)) => pauli(*p),
            None => pauli('1'),
        })
        .collect();
    site_product(&ops)
}

/// `H0 / J = (1/2) sum_j (X_j X_{j+1} + Y_j Y_{j+1}) + (h/J) sum_j Z_j`.
pub fn build_spin_hamiltonian(chain: &ChainSpec) -> Result<CMat> {
    build_spin_hamiltonian_capped(chain, DEFAULT_CAP)
}

pub fn build_spin_hamiltonian_capped(chain: &ChainSpec, cap: usize) -> Result<CMat> {
    let n = chain.n();
    check_cap(n, cap)?;
    let dim = 1usize << n;
    let mut h = Mat::<C64>::zeros(dim, dim);
    for j in 1..n {
        for p in ['x', 'y'] {
            h += Scale(C64::new(0.5, 0.0)) * embed(n, &[(j, p), (j + 1, p)]);
        }
    }
    let f = chain.reduced_field();
    for j in 1..=n {
        h += Scale(C64::new(f, 0.0)) * embed(n, &[(j, 'z')]);
    }
    Ok(h)
}

/// `sigma^z` eigenvalue of site `j` (1-based) in basis state `a`.
pub fn spin_z(n: usize, a: usize, j: usize) -> f64 {
    if (a >> (n - j)) & 1 == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Basis index with the listed sites excited.
pub fn basis_index(n: usize, excited: &[usize]) -> Result<usize> {
    let mut a = 0;
    for &s in excited {
        if s == 0 || s > n {
            return Err(Error::SiteOutOfRange { site: s, n });
        }
        a |= 1 << (n - s);
    }
    Ok(a)
}

/// Density matrix of a computational basis state.
pub fn basis_state(n: usize, excited: &[usize]) -> Result<CMat> {
    let a = basis_index(n, excited)?;
    let dim = 1usize << n;
    Ok(Mat::from_fn(dim, dim, |i, j| if i == a && j == a { ONE } else { ZERO }))
}

/// Density matrix matching an [`InitialState`].
///
/// Populations give the product state with site `j` excited with probability
/// `p_j`. A full correlation matrix must have unit trace and is mapped to the
/// single-excitation state with `<j|rho|k> = Z_kj`.
pub fn initial_density(n: usize, initial: &InitialState) -> Result<CMat> {
    let z = initial.correlation_matrix(n)?;
    let dim = 1usize << n;
    match initial {
        InitialState::Populations(p) => Ok(Mat::from_fn(dim, dim, |a, b| {
            if a != b {
                return ZERO;
            }
            let w: f64 = (1..=n)
                .map(|j| if spin_z(n, a, j) > 0.0 { p[j - 1] } else { 1.0 - p[j - 1] })
                .product();
            C64::new(w, 0.0)
        })),
        InitialState::Correlation(_) => {
            let tr: f64 = (0..n).map(|j| z[(j, j)].re).sum();
            if (tr - 1.0).abs() > 1e-8 {
                return Err(Error::NotSingleExcitation(tr));
            }
            let idx: Vec<usize> = (1..=n).map(|j| 1usize << (n - j)).collect();
            let mut rho = Mat::<C64>::zeros(dim, dim);
            for j in 0..n {
                for k in 0..n {
                    rho[(idx[j], idx[k])] = z[(k, j)];
                }
            }
            Ok(rho)
        }
    }
}

#[derive(Debug, Clone)]
pub struct DensityMatrix {
    pub rho: CMat,
    pub time: f64,
}

impl DensityMatrix {
    pub fn n(&self) -> usize {
        self.rho.nrows().trailing_zeros() as usize
    }

    pub fn trace(&self) -> C64 {
        (0..self.rho.nrows()).map(|a| self.rho[(a, a)]).sum()
    }

    pub fn purity(&self) -> f64 {
        let d = self.rho.nrows();
        let mut s = 0.0;
        for a in 0..d {
            for b in 0..d {
                s += (self.rho[(a, b)] * self.rho[(b, a)]).re;
            }
        }
        s
    }

    pub fn magnetizations(&self) -> Vec<f64> {
        let n = self.n();
        (1..=n)
            .map(|j| (0..self.rho.nrows()).map(|a| self.rho[(a, a)].re * spin_z(n, a, j)).sum())
            .collect()
    }

    /// Total weight outside the given excitation-number sector.
    pub fn leakage(&self, excitations: usize) -> f64 {
        (0..self.rho.nrows())
            .filter(|a| a.count_ones() as usize != excitations)
            .map(|a| self.rho[(a, a)].norm())
            .sum()
    }
}

/// Block-structured Lindblad propagator for one chain and noise setting.
#[derive(Debug, Clone)]
pub struct ReferenceEngine {
    n: usize,
    sectors: Vec<Vec<usize>>,
    h_blocks: Vec<CMat>,
    // (gamma/2) times the squared noise-eigenvalue difference, per basis pair
    noise_sites: Vec<usize>,
    gamma: f64,
    channels: NoiseChannels,
}

impl ReferenceEngine {
    pub fn new(chain: &ChainSpec, noise: &NoiseSpec, channels: NoiseChannels) -> Result<Self> {
        Self::with_cap(chain, noise, channels, DEFAULT_CAP)
    }

    pub fn with_cap(chain: &ChainSpec, noise: &NoiseSpec, channels: NoiseChannels, cap: usize) -> Result<Self> {
        noise.validate(chain)?;
        let h = build_spin_hamiltonian_capped(chain, cap)?;
        let n = chain.n();
        let mut sectors = vec![Vec::new(); n + 1];
        for a in 0..1usize << n {
            sectors[a.count_ones() as usize].push(a);
        }
        let h_blocks = sectors
            .iter()
            .map(|s| Mat::from_fn(s.len(), s.len(), |i, j| h[(s[i], s[j])]))
            .collect();
        Ok(ReferenceEngine {
            n,
            sectors,
            h_blocks,
            noise_sites: noise.sites().to_vec(),
            gamma: noise.gamma(),
            channels,
        })
    }

    fn damping(&self, a: usize, b: usize) -> f64 {
        let n = self.n;
        let d = match self.channels {
            NoiseChannels::Shared => {
                let v = |x| self.noise_sites.iter().map(|&u| spin_z(n, x, u)).sum::<f64>();
                (v(a) - v(b)).powi(2)
            }
            NoiseChannels::Independent => self
                .noise_sites
                .iter()
                .map(|&u| (spin_z(n, a, u) - spin_z(n, b, u)).powi(2))
                .sum(),
        };
        0.5 * self.gamma * d
    }

    /// Generator of the `(ket, bra)` block acting on row-major vectorized
    /// `d_ket x d_bra` matrices.
    pub fn block_generator(&self, ket: usize, bra: usize) -> CMat {
        let (sk, sb) = (&self.sectors[ket], &self.sectors[bra]);
        let (hk, hb) = (&self.h_blocks[ket], &self.h_blocks[bra]);
        let (dk, db) = (sk.len(), sb.len());
        let mut l = Mat::<C64>::zeros(dk * db, dk * db);
        for a in 0..dk {
            for b in 0..db {
                let row = a * db + b;
                for c in 0..dk {
                    let x = hk[(a, c)];
                    if x != ZERO {
                        l[(row, c * db + b)] -= I * x;
                    }
                }
                for c in 0..db {
                    let x = hb[(c, b)];
                    if x != ZERO {
                        l[(row, a * db + c)] += I * x;
                    }
                }
                l[(row, row)] -= C64::new(self.damping(sk[a], sb[b]), 0.0);
            }
        }
        l
    }

    /// Eigenvalues of one block generator.
    pub fn block_spectrum(&self, ket: usize, bra: usize) -> Result<Vec<C64>> {
        if ket > self.n || bra > self.n {
            return Err(Error::Precondition(format!("sector ({ket},{bra}) out of range for N={}", self.n)));
        }
        self.block_generator(ket, bra)
            .eigenvalues()
            .map_err(|e| Error::Numerical(format!("block eigensolver failed: {e:?}")))
    }

    /// Evolves `rho0` over `grid` (strictly increasing, starting at 0).
    pub fn evolve(&self, rho0: &CMat, grid: &[f64]) -> Result<Vec<DensityMatrix>> {
        crate::evolve::check_grid(grid)?;
        let dim = 1usize << self.n;
        if rho0.nrows() != dim || rho0.ncols() != dim {
            return Err(Error::InitialState(format!("expected a {dim}x{dim} density matrix")));
        }
        let defect = hermiticity_defect(rho0.as_ref());
        let tr: C64 = (0..dim).map(|a| rho0[(a, a)]).sum();
        if defect > 1e-10 || (tr - ONE).norm() > 1e-10 {
            return Err(Error::InitialState(format!(
                "density matrix must be Hermitian with unit trace (defect {defect:e}, trace {tr})"
            )));
        }
        let lo = hermitian_eigenvalues(rho0.as_ref())?[0];
        if lo < -1e-8 {
            return Err(Error::NotPositive(lo));
        }

        let mut out: Vec<DensityMatrix> =
            grid.iter().map(|&t| DensityMatrix { rho: Mat::zeros(dim, dim), time: t }).collect();
        for ket in 0..=self.n {
            for bra in 0..=self.n {
                let (sk, sb) = (&self.sectors[ket], &self.sectors[bra]);
                let db = sb.len();
                let mut x = Mat::from_fn(sk.len() * db, 1, |i, _| rho0[(sk[i / db], sb[i % db])]);
                if x.col(0).iter().all(|v| *v == ZERO) {
                    continue;
                }
                let l = self.block_generator(ket, bra);
                let mut cached: Option<(f64, CMat)> = None;
                for (t, slot) in out.iter_mut().enumerate() {
                    if t > 0 {
                        let h = grid[t] - grid[t - 1];
                        let fresh = !matches!(&cached, Some((dt, _)) if (dt - h).abs() <= 1e-12 * h);
                        if fresh {
                            let scaled = Mat::from_fn(l.nrows(), l.ncols(), |i, j| l[(i, j)] * h);
                            cached = Some((h, expm(scaled.as_ref())?));
                        }
                        x = &cached.as_ref().expect("step cached").1 * &x;
                    }
                    for i in 0..x.nrows() {
                        slot.rho[(sk[i / db], sb[i % db])] = x[(i, 0)];
                    }
                }
            }
        }
        if out.iter().any(|d| !d.trace().re.is_finite()) {
            return Err(Error::Numerical("non-finite density matrix".into()));
        }
        Ok(out)
    }
}

/// Shared-noise Lindblad evolution with the default size cap.
pub fn lindblad_evolve(chain: &ChainSpec, noise: &NoiseSpec, rho0: &CMat, grid: &[f64]) -> Result<Vec<DensityMatrix>> {
    ReferenceEngine::new(chain, noise, NoiseChannels::Shared)?.evolve(rho0, grid)
}

/// Reduced state of sites `i` and `j` in the basis `|b_i b_j>`, index
/// `2 b_i + b_j`, with `b = 1` for an excited spin.
pub fn reduced_two_qubit(rho: &DensityMatrix, i: usize, j: usize) -> Result<CMat> {
    let n = rho.n();
    for s in [i, j] {
        if s == 0 || s > n {
            return Err(Error::SiteOutOfRange { site: s, n });
        }
    }
    if i == j {
        return Err(Error::SameSite(i));
    }
    let (bi, bj) = (n - i, n - j);
    let local = |a: usize| 2 * ((a >> bi) & 1) + ((a >> bj) & 1);
    let mask = (1usize << bi) | (1usize << bj);
    let mut out = Mat::<C64>::zeros(4, 4);
    let dim = rho.rho.nrows();
    for a in 0..dim {
        for b in 0..dim {
            if a & !mask == b & !mask {
                out[(local(a), local(b))] += rho.rho[(a, b)];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{commutator, max_abs};

    fn total_sz(n: usize) -> CMat {
        let d = 1usize << n;
        Mat::from_fn(d, d, |a, b| {
            if a == b {
                C64::new((1..=n).map(|j| spin_z(n, a, j)).sum(), 0.0)
            } else {
                ZERO
            }
        })
    }

    #[test]
    fn hamiltonian_commutes_with_total_sz() {
        for n in 2..=5 {
            let h = build_spin_hamiltonian(&ChainSpec::new(n, 1.0, 0.7).unwrap()).unwrap();
            assert!(max_abs(commutator(h.as_ref(), total_sz(n).as_ref()).as_ref()) < 1e-12);
            assert!(hermiticity_defect(h.as_ref()) < 1e-15);
        }
    }

    #[test]
    fn two_site_energies() {
        let h = build_spin_hamiltonian(&ChainSpec::unit(2).unwrap()).unwrap();
        let ev = hermitian_eigenvalues(h.as_ref()).unwrap();
        for (a, b) in ev.iter().zip([-2.0, -1.0, 1.0, 2.0]) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn single_excitation_block_is_shifted_hopping_matrix() {
        for n in 2..=6 {
            let chain = ChainSpec::new(n, 1.0, 0.8).unwrap();
            let h = build_spin_hamiltonian(&chain).unwrap();
            let omega = crate::model::build_jw_matrix(&chain);
            let shift = n as f64 * chain.reduced_field();
            for j in 1..=n {
                for k in 1..=n {
                    let a = basis_index(n, &[j]).unwrap();
                    let b = basis_index(n, &[k]).unwrap();
                    let want = omega[(j - 1, k - 1)] - if j == k { shift } else { 0.0 };
                    assert!((h[(a, b)] - C64::new(want, 0.0)).norm() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn cap_is_enforced() {
        let err = build_spin_hamiltonian(&ChainSpec::unit(7).unwrap()).unwrap_err();
        assert!(matches!(err, Error::ReferenceCap { n: 7, cap: 6 }));
        assert!(build_spin_hamiltonian_capped(&ChainSpec::unit(7).unwrap(), 7).is_ok());
    }

    fn full_rhs(h: &CMat, v: &[CMat], gamma: f64, rho: &CMat) -> CMat {
        let mut out = Scale(-I) * (h * rho - rho * h);
        for op in v {
            let inner = commutator(op.as_ref(), rho.as_ref());
            out -= Scale(C64::new(0.5 * gamma, 0.0)) * commutator(op.as_ref(), inner.as_ref());
        }
        out
    }

    fn rk4(h: &CMat, v: &[CMat], gamma: f64, rho0: &CMat, dt: f64, steps: usize) -> CMat {
        let mut rho = rho0.clone();
        let c = |x: f64| C64::new(x, 0.0);
        for _ in 0..steps {
            let k1 = full_rhs(h, v, gamma, &rho);
            let k2 = full_rhs(h, v, gamma, &(&rho + Scale(c(dt / 2.0)) * &k1));
            let k3 = full_rhs(h, v, gamma, &(&rho + Scale(c(dt / 2.0)) * &k2));
            let k4 = full_rhs(h, v, gamma, &(&rho + Scale(c(dt)) * &k3));
            rho += Scale(c(dt / 6.0)) * (k1 + Scale(c(2.0)) * k2 + Scale(c(2.0)) * k3 + k4);
        }
        rho
    }

    #[test]
    fn blockwise_matches_full_space_rk4() {
        let n = 3;
        let chain = ChainSpec::new(n, 1.0, 0.6).unwrap();
        let noise = NoiseSpec::two_site(1, 3, 0.4).unwrap();
        let h = build_spin_hamiltonian(&chain).unwrap();
        // mixed initial state with coherences across sectors
        let dim = 8;
        let psi: Vec<C64> = (0..dim).map(|a| C64::new(1.0 + a as f64, 0.3 * a as f64)).collect();
        let norm: f64 = psi.iter().map(|x| x.norm_sqr()).sum();
        let rho0 = Mat::from_fn(dim, dim, |a, b| psi[a] * psi[b].conj() / norm);
        let grid = [0.0, 0.5, 1.0, 1.5];
        for channels in [NoiseChannels::Shared, NoiseChannels::Independent] {
            let ops = match channels {
                NoiseChannels::Shared => vec![embed(n, &[(1, 'z')]) + embed(n, &[(3, 'z')])],
                NoiseChannels::Independent => vec![embed(n, &[(1, 'z')]), embed(n, &[(3, 'z')])],
            };
            let eng = ReferenceEngine::new(&chain, &noise, channels).unwrap();
            let out = eng.evolve(&rho0, &grid).unwrap();
            let want = rk4(&h, &ops, 0.4, &rho0, 1e-3, 1500);
            assert!(max_abs((&out[3].rho - &want).as_ref()) < 1e-10, "{channels:?}");
        }
    }

    #[test]
    fn unitary_limit_preserves_purity() {
        let chain = ChainSpec::unit(4).unwrap();
        let noise = NoiseSpec::one_site(2, 0.0).unwrap();
        let rho0 = basis_state(4, &[1]).unwrap();
        let out = lindblad_evolve(&chain, &noise, &rho0, &[0.0, 1.0, 7.5, 30.0]).unwrap();
        for d in &out {
            assert!((d.purity() - 1.0).abs() < 1e-10);
            assert!((d.trace() - ONE).norm() < 1e-12);
            assert!(d.leakage(1) < 1e-12);
        }
    }

    #[test]
    fn initial_density_from_populations() {
        let rho = initial_density(2, &InitialState::Populations(vec![0.25, 1.0])).unwrap();
        let d = DensityMatrix { rho, time: 0.0 };
        let m = d.magnetizations();
        assert!((m[0] + 0.5).abs() < 1e-15 && (m[1] - 1.0).abs() < 1e-15);
        assert!((d.trace() - ONE).norm() < 1e-15);
    }

    #[test]
    fn initial_density_from_correlation() {
        let mut z = Mat::<C64>::zeros(3, 3);
        z[(0, 0)] = C64::new(0.5, 0.0);
        z[(2, 2)] = C64::new(0.5, 0.0);
        z[(0, 2)] = C64::new(0.0, 0.5);
        z[(2, 0)] = C64::new(0.0, -0.5);
        let rho = initial_density(3, &InitialState::Correlation(z.clone())).unwrap();
        let d = DensityMatrix { rho, time: 0.0 };
        assert!((d.purity() - 1.0).abs() < 1e-14);
        let r = reduced_two_qubit(&d, 1, 3).unwrap();
        // <1|rho|3> = Z_31
        assert!((r[(2, 1)] - z[(2, 0)]).norm() < 1e-15);

        let mut mixed = z.clone();
        mixed[(1, 1)] = C64::new(0.5, 0.0);
        assert!(matches!(
            initial_density(3, &InitialState::Correlation(mixed)),
            Err(Error::NotSingleExcitation(_))
        ));
    }

    #[test]
    fn partial_trace_of_product_state() {
        let rho = initial_density(4, &InitialState::Populations(vec![0.2, 0.7, 0.4, 0.9])).unwrap();
        let r = reduced_two_qubit(&DensityMatrix { rho, time: 0.0 }, 2, 4).unwrap();
        let (p, q) = (0.7, 0.9);
        let want = [(1.0 - p) * (1.0 - q), (1.0 - p) * q, p * (1.0 - q), p * q];
        for a in 0..4 {
            assert!((r[(a, a)].re - want[a]).abs() < 1e-15);
        }
        assert!(matches!(reduced_two_qubit(&DensityMatrix { rho: r.clone(), time: 0.0 }, 1, 1), Err(Error::SameSite(1))));
    }

    #[test]
    fn partial_trace_of_bell_pair_in_chain() {
        // (|0110> + |0101>)/sqrt2 on N=4: sites 3 and 4 share one excitation, site 2 excited
        let n = 4;
        let a = basis_index(n, &[2, 3]).unwrap();
        let b = basis_index(n, &[2, 4]).unwrap();
        let mut rho = Mat::<C64>::zeros(16, 16);
        for x in [a, b] {
            for y in [a, b] {
                rho[(x, y)] = C64::new(0.5, 0.0);
            }
        }
        let d = DensityMatrix { rho, time: 0.0 };
        let r34 = reduced_two_qubit(&d, 3, 4).unwrap();
        let mut want = Mat::<C64>::zeros(4, 4);
        for x in [1, 2] {
            for y in [1, 2] {
                want[(x, y)] = C64::new(0.5, 0.0);
            }
        }
        assert!(max_abs((&r34 - &want).as_ref()) < 1e-15);
        let r12 = reduced_two_qubit(&d, 1, 2).unwrap();
        assert!((r12[(1, 1)].re - 1.0).abs() < 1e-15);
        let tr: C64 = (0..4).map(|i| r12[(i, i)]).sum();
        assert!((tr - ONE).norm() < 1e-12);
    }

    #[test]
    fn coherence_block_matches_correlation_generator() {
        use crate::evolve::{liouville_spectrum, AveragedGenerator};
        for (n, sites) in [(4, vec![2, 3]), (5, vec![3])] {
            let chain = ChainSpec::unit(n).unwrap();
            let noise = NoiseSpec::new(sites, 0.3).unwrap();
            let eng = ReferenceEngine::new(&chain, &noise, NoiseChannels::Shared).unwrap();
            let block = eng.block_spectrum(1, 1).unwrap();
            let jw = liouville_spectrum(&AveragedGenerator::new(&chain, &noise).unwrap(), false).unwrap();
            let jw: Vec<C64> = jw.modes.iter().map(|m| C64::new(-m.mu, m.lambda)).collect();
            assert_eq!(block.len(), jw.len());
            for (xs, ys) in [(&block, &jw), (&jw, &block)] {
                for a in xs.iter() {
                    let d = ys.iter().map(|b| (a - b).norm()).fold(f64::INFINITY, f64::min);
                    assert!(d < 1e-8, "{a} unmatched");
                }
            }
        }
    }
}
