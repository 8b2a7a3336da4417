//! Acceptance criteria. Each test writes one `PASS` or `FAIL` line to stderr
//! (bypassing the harness capture) before asserting.

use std::io::Write;
use std::time::Instant;

use xysync::diagnostics::{
    concurrence_series, concurrence_wootters, fit_sinusoid, pair_state_from_z, pearson, period_extrema,
    two_qubit_analytic,
};
use xysync::evolve::{liouville_spectrum, propagate, sync_timing, uniform_grid, AveragedGenerator, RateOptions};
use xysync::perturbation::{mode_table, sync_condition};
use xysync::reference::{initial_density, lindblad_evolve, reduced_two_qubit, NoiseChannels, ReferenceEngine};
use xysync::sweep::{default_gamma_grid, lieb_robinson_report, scaling_study};
use xysync::trajectories::{ensemble_average, Scheme, TrajectoryConfig};
use xysync::{ChainSpec, InitialState, NoiseSpec};

fn report(criterion: u32, pass: bool, detail: &str, started: Instant) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let secs = started.elapsed().as_secs_f64();
    let _ = writeln!(std::io::stderr(), "{verdict} criterion {criterion}: {detail} [{secs:.1} s]");
}

fn chain(n: usize) -> ChainSpec {
    ChainSpec::unit(n).unwrap()
}

#[test]
fn criterion_01_decay_table() {
    let t0 = Instant::now();
    let table = mode_table(&chain(5), &NoiseSpec::one_site(3, 1.0).unwrap(), &InitialState::first_site_excited(5)).unwrap();
    let expected = [
        ((1, 2), 2.0 / 3.0),
        ((1, 4), 2.0 / 3.0),
        ((2, 3), 2.0 / 3.0),
        ((1, 3), 4.0 / 9.0),
        ((1, 5), 8.0 / 9.0),
        ((2, 4), 0.0),
    ];
    let worst = expected
        .iter()
        .map(|&((k, l), m)| (table.entry(k, l).unwrap().decay - m).abs())
        .fold(0.0, f64::max);
    let pass = worst < 1e-12;
    report(1, pass, &format!("N=5 u=3 decay constants, max error {worst:.2e} (< 1e-12)"), t0);
    assert!(pass);
}

// independent check: oscillating Liouville modes that do not decay at all
fn frozen_modes(n: usize, u: usize) -> usize {
    let g = AveragedGenerator::new(&chain(n), &NoiseSpec::one_site(u, 0.1).unwrap()).unwrap();
    liouville_spectrum(&g, false)
        .unwrap()
        .modes
        .iter()
        .filter(|m| m.lambda > 1e-9 && m.mu.abs() < 1e-10)
        .count()
}

#[test]
fn criterion_02_sync_condition() {
    let t0 = Instant::now();
    let yes = [(5, 3), (8, 3), (8, 6), (11, 3)];
    let no = [(4, 2), (5, 2), (6, 3), (7, 3)];
    let mut bad = Vec::new();
    for (n, u, want) in yes.iter().map(|&(n, u)| (n, u, true)).chain(no.iter().map(|&(n, u)| (n, u, false))) {
        let rep = sync_condition(&chain(n), &NoiseSpec::one_site(u, 0.1).unwrap()).unwrap();
        let scan = frozen_modes(n, u) == 1;
        if rep.satisfied != want || scan != want {
            bad.push((n, u, rep.satisfied, scan));
        }
    }
    let pass = bad.is_empty();
    report(2, pass, &format!("8 (N,u) cases, mismatches {bad:?}"), t0);
    assert!(pass);
}

#[test]
fn criterion_03_stable_mode() {
    let t0 = Instant::now();
    let c = chain(5);
    let noise = NoiseSpec::one_site(3, 0.2).unwrap();
    let timing = sync_timing(&c, &noise, &RateOptions::default()).unwrap();
    let g = AveragedGenerator::new(&c, &noise).unwrap();
    let span = 10.0 * std::f64::consts::PI;
    let grid = uniform_grid(timing.tau_s + span + 1.0, 0.01).unwrap();
    let prop = propagate(&g, &InitialState::first_site_excited(5), &grid).unwrap();
    let (mut d15, mut d24, mut deriv) = (0.0f64, 0.0f64, 0.0f64);
    let (mut fit_t, mut fit_x) = (Vec::new(), Vec::new());
    for s in prop.states.iter().filter(|s| s.time > timing.tau_s) {
        let m = s.magnetizations();
        d15 = d15.max((m[0] - m[4]).abs());
        d24 = d24.max((m[1] - m[3]).abs());
        deriv = deriv.max((2.0 * g.apply(s.z.as_ref())[(2, 2)].re).abs());
        if s.time <= timing.tau_s + span {
            fit_t.push(s.time);
            fit_x.push(m[0]);
        }
    }
    let fit = fit_sinusoid(&fit_t, &fit_x, 1.0, 3.0).unwrap();
    let freq_ok = (fit.omega - 2.0).abs() < 0.02;
    let pass = d15 < 1e-3 && d24 < 1e-3 && deriv < 1e-3 && freq_ok;
    report(
        3,
        pass,
        &format!(
            "tau_s={:.3}: max|sz1-sz5|={d15:.2e}, max|sz2-sz4|={d24:.2e}, max|dsz3/dtau|={deriv:.2e} (each < 1e-3), fitted omega={:.5} (2 +- 1%)",
            timing.tau_s, fit.omega
        ),
        t0,
    );
    assert!(pass);
}

#[test]
fn criterion_04_oracle_equivalence() {
    let t0 = Instant::now();
    let grid = uniform_grid(200.0, 0.5).unwrap();
    let mut worst = (0.0f64, 0, 0.0);
    for n in 2..=6 {
        let init = InitialState::first_site_excited(n);
        let rho0 = initial_density(n, &init).unwrap();
        for gamma in [0.0, 0.05, 0.2, 1.0] {
            let noise = NoiseSpec::one_site(n.min(3), gamma).unwrap();
            let jw = propagate(&AveragedGenerator::new(&chain(n), &noise).unwrap(), &init, &grid).unwrap();
            let reference = lindblad_evolve(&chain(n), &noise, &rho0, &grid).unwrap();
            for (a, b) in jw.states.iter().zip(&reference) {
                for (x, y) in a.magnetizations().iter().zip(b.magnetizations()) {
                    if (x - y).abs() > worst.0 {
                        worst = ((x - y).abs(), n, gamma);
                    }
                }
            }
        }
    }
    let pass = worst.0 < 1e-6;
    report(
        4,
        pass,
        &format!("N=2..6, gamma in {{0,0.05,0.2,1}}, tau in [0,200]: sup error {:.2e} (N={}, gamma={}) (< 1e-6)", worst.0, worst.1, worst.2),
        t0,
    );
    assert!(pass);
}

#[test]
fn criterion_05_perturbation_vs_spectrum() {
    let t0 = Instant::now();
    let gamma = 0.01;
    let mut worst = (0.0f64, 0, 0.0);
    let mut count_mismatch = Vec::new();
    for n in [5, 8, 11] {
        let noise = NoiseSpec::one_site(3, gamma).unwrap();
        let table = mode_table(&chain(n), &noise, &InitialState::first_site_excited(n)).unwrap();
        let spec = liouville_spectrum(&AveragedGenerator::new(&chain(n), &noise).unwrap(), false).unwrap();
        for cl in &table.clusters {
            let mut mus: Vec<f64> = spec
                .modes
                .iter()
                .filter(|m| (m.lambda - cl.frequency).abs() < 1e-3)
                .map(|m| m.mu)
                .collect();
            mus.sort_by(f64::total_cmp);
            if mus.len() != cl.rates.len() {
                count_mismatch.push((n, cl.frequency, mus.len(), cl.rates.len()));
                continue;
            }
            for (mu, m) in mus.iter().zip(&cl.rates) {
                let first = gamma * m;
                let err = if first > 0.0 { (mu - first).abs() / first } else if mu.abs() < 1e-10 { 0.0 } else { f64::INFINITY };
                if err > worst.0 {
                    worst = (err, n, cl.frequency);
                }
            }
        }
    }
    let pass = worst.0 <= 0.05 && count_mismatch.is_empty();
    report(
        5,
        pass,
        &format!(
            "gamma=0.01, N in {{5,8,11}}: worst relative error {:.2e} (N={}, Lambda={:.4}) (<= 5%), unpaired clusters {count_mismatch:?}",
            worst.0, worst.1, worst.2
        ),
        t0,
    );
    assert!(pass);
}

#[test]
fn criterion_06_pearson() {
    let t0 = Instant::now();
    let c = chain(4);
    let noise = NoiseSpec::two_site(2, 3, 0.2).unwrap();
    let timing = sync_timing(&c, &noise, &RateOptions::default()).unwrap();
    let g = AveragedGenerator::new(&c, &noise).unwrap();
    // the longest-lived oscillation sets the window: one period
    let spec = liouville_spectrum(&g, false).unwrap();
    let slow = spec
        .modes
        .iter()
        .filter(|m| m.lambda > 1e-9 && m.magnetization_weight > 1e-8)
        .min_by(|a, b| a.mu.total_cmp(&b.mu))
        .unwrap();
    let window = 2.0 * std::f64::consts::PI / slow.lambda;
    let t_end = timing.tau_s + (1e6f64).ln() / slow.mu + 20.0;
    let grid = uniform_grid(t_end, 0.01).unwrap();
    let mz = propagate(&g, &InitialState::first_site_excited(4), &grid).unwrap().magnetizations();
    let col = |j: usize| mz.iter().map(|m| m[j]).collect::<Vec<f64>>();
    let c14 = pearson(&grid, &col(0), &col(3), window, (1, 4)).unwrap();
    let c23 = pearson(&grid, &col(1), &col(2), window, (2, 3)).unwrap();
    // trailing-window oscillation amplitude across all sites
    let steps = (window / 0.01).round() as usize;
    let amplitude = |i: usize| {
        let lo = i.saturating_sub(steps);
        (0..4)
            .map(|j| {
                let w = &mz[lo..=i];
                let (a, b) = w.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), m| (a.min(m[j]), b.max(m[j])));
                0.5 * (b - a)
            })
            .fold(0.0, f64::max)
    };
    let (mut min14, mut min23, mut until) = (f64::INFINITY, f64::INFINITY, grid[grid.len() - 1]);
    for i in 0..grid.len() {
        if grid[i] <= timing.tau_s {
            continue;
        }
        if amplitude(i) < 1e-6 {
            until = grid[i];
            break;
        }
        min14 = min14.min(c14.values[i].unwrap_or(f64::NEG_INFINITY));
        min23 = min23.min(c23.values[i].unwrap_or(f64::NEG_INFINITY));
    }
    let pass = min14 > 0.99 && min23 > 0.99;
    report(
        6,
        pass,
        &format!(
            "N=4 u=2 v=3 gamma=0.2, tau in ({:.2}, {until:.1}): min C14={min14:.4}, min C23={min23:.4} (both > 0.99)",
            timing.tau_s
        ),
        t0,
    );
    assert!(pass);
}

#[test]
fn criterion_07_concurrence() {
    let t0 = Instant::now();
    let opts = RateOptions::default();

    // synchronized N=5 run
    let c5 = chain(5);
    let n5 = NoiseSpec::one_site(3, 0.2).unwrap();
    let ts5 = sync_timing(&c5, &n5, &opts).unwrap();
    let g5 = AveragedGenerator::new(&c5, &n5).unwrap();
    let period = std::f64::consts::PI; // stable frequency 2
    let grid = uniform_grid(ts5.tau_s + 10.0 * period + 1.0, 0.005).unwrap();
    let prop = propagate(&g5, &InitialState::first_site_excited(5), &grid).unwrap();
    let series = concurrence_series(&prop.states, 1, 5).unwrap();
    let (t, v): (Vec<f64>, Vec<f64>) = series
        .times
        .iter()
        .zip(&series.values)
        .filter(|(t, _)| **t >= ts5.tau_s)
        .map(|(a, b)| (*a, *b))
        .unzip();
    let ext = period_extrema(&t, &v, period).unwrap();
    let min_c = ext.iter().map(|e| e.0).fold(f64::INFINITY, f64::min);
    let amps: Vec<f64> = ext.iter().take(10).map(|e| 0.5 * (e.1 - e.0)).collect();
    let drift = (amps[amps.len() - 1] - amps[0]).abs() / amps[0];
    let steady = min_c > 0.0 && drift < 0.01 && amps.len() == 10 && amps[0] > 1e-3;

    // both concurrence paths on every state
    let mut path_gap = 0.0f64;
    for s in &prop.states {
        let fast = 2.0 * s.z[(0, 4)].norm();
        let general = concurrence_wootters(&pair_state_from_z(s, 1, 5).unwrap()).unwrap();
        path_gap = path_gap.max((fast - general).abs());
    }

    // against the full density matrix
    let coarse = uniform_grid(40.0, 0.5).unwrap();
    let init = InitialState::first_site_excited(5);
    let jw = propagate(&g5, &init, &coarse).unwrap();
    let engine = ReferenceEngine::new(&c5, &n5, NoiseChannels::Shared).unwrap();
    let full = engine.evolve(&initial_density(5, &init).unwrap(), &coarse).unwrap();
    let mut ref_gap = 0.0f64;
    for (a, b) in jw.states.iter().zip(&full) {
        let x = 2.0 * a.z[(0, 4)].norm();
        let y = concurrence_wootters(&reduced_two_qubit(b, 1, 5).unwrap()).unwrap();
        ref_gap = ref_gap.max((x - y).abs());
    }

    // transient N=4 run
    let c4 = chain(4);
    let n4 = NoiseSpec::two_site(2, 3, 0.2).unwrap();
    let ts4 = sync_timing(&c4, &n4, &opts).unwrap();
    let g4 = AveragedGenerator::new(&c4, &n4).unwrap();
    let grid4 = uniform_grid(3.0 * ts4.tau_s + 200.0, 0.05).unwrap();
    let p4 = propagate(&g4, &InitialState::first_site_excited(4), &grid4).unwrap();
    let late = concurrence_series(&p4.states, 1, 4)
        .unwrap()
        .times
        .iter()
        .zip(concurrence_series(&p4.states, 1, 4).unwrap().values)
        .filter(|(t, _)| **t > 3.0 * ts4.tau_s)
        .map(|(_, c)| c)
        .fold(0.0, f64::max);

    let pass = steady && path_gap < 1e-10 && ref_gap < 1e-6 && late < 1e-3;
    report(
        7,
        pass,
        &format!(
            "N=5 C15 after tau_s: min {min_c:.3e} (> 0), amplitude {:.4e} drift {drift:.2e} over 10 periods (< 1%); \
             N=4 max C14 after 3 tau_s ({:.1}): {late:.2e} (< 1e-3); fast vs Wootters {path_gap:.1e} (< 1e-10); \
             JW vs full density matrix {ref_gap:.1e} (< 1e-6)",
            amps[0],
            3.0 * ts4.tau_s
        ),
        t0,
    );
    assert!(pass);
}

#[test]
fn criterion_08_trajectories() {
    let t0 = Instant::now();
    let c = chain(5);
    let noise = NoiseSpec::one_site(3, 0.2).unwrap();
    let init = InitialState::first_site_excited(5);
    let base = TrajectoryConfig {
        dt: 1e-3,
        t_max: 10.0,
        n_traj: 10_000,
        seed: 20_240_601,
        scheme: Scheme::StrangSplitting,
        output_dt: 0.05,
    };
    let small = ensemble_average(&c, &noise, &init, &base).unwrap();
    let large = ensemble_average(&c, &noise, &init, &TrajectoryConfig { n_traj: 40_000, seed: 977, ..base }).unwrap();
    let exact = propagate(&AveragedGenerator::new(&c, &noise).unwrap(), &init, &small.times)
        .unwrap()
        .magnetizations();
    let (mut inside, mut total) = (0usize, 0usize);
    let (mut rmin, mut rmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..small.times.len() {
        for j in 0..5 {
            total += 1;
            if (small.mean_magnetizations[t][j] - exact[t][j]).abs() <= 3.0 * small.stderr[t][j] {
                inside += 1;
            }
            if small.stderr[t][j] > 1e-12 {
                let r = large.stderr[t][j] / small.stderr[t][j];
                rmin = rmin.min(r);
                rmax = rmax.max(r);
            }
        }
    }
    let frac = inside as f64 / total as f64;
    let pass = frac >= 0.99 && rmin >= 0.45 && rmax <= 0.55;
    report(
        8,
        pass,
        &format!(
            "N=5 u=3 gamma=0.2 dt=1e-3, M=1e4: {:.2}% of {total} points within 3 stderr (>= 99%); stderr ratio M=4e4/M=1e4 in [{rmin:.4}, {rmax:.4}] (within [0.45, 0.55])",
            100.0 * frac
        ),
        t0,
    );
    assert!(pass);
}

#[test]
fn criterion_09_two_qubit() {
    let t0 = Instant::now();
    let grid = uniform_grid(20.0, 0.01).unwrap();
    let rho0 = initial_density(2, &InitialState::first_site_excited(2)).unwrap();
    let mut worst = 0.0f64;
    for ratio in [0.5, 1.0, 2.0] {
        let gamma = 2.0 * ratio;
        let noise = NoiseSpec::one_site(1, gamma).unwrap();
        let states = lindblad_evolve(&chain(2), &noise, &rho0, &grid).unwrap();
        let exact = two_qubit_analytic(1.0, gamma, 1.0, 0.0, &grid).unwrap();
        for (k, s) in states.iter().enumerate() {
            let m = s.magnetizations();
            worst = worst.max((m[0] - exact.sz1[k]).abs()).max((m[1] - exact.sz2[k]).abs());
        }
    }
    let pass = worst < 1e-8;
    report(9, pass, &format!("Gamma/2J in {{0.5,1,2}}: sup error {worst:.2e} (< 1e-8)"), t0);
    assert!(pass);
}

#[test]
fn criterion_10_scaling() {
    let t0 = Instant::now();
    let ns = [5, 8, 11, 14, 17, 20];
    let study = scaling_study(&ns, &[3], &default_gamma_grid(), 1.0, 1.0, &RateOptions::default()).unwrap();
    let lr = lieb_robinson_report(&study, 1.0).unwrap();
    let unimodal = study.curves.iter().all(|c| c.unimodal);
    let decreasing = study.gamma_opt.windows(2).all(|w| w[1] < w[0]);
    let slope_ok = (-2.3..=-1.7).contains(&lr.loglog_slope);
    let plateau_ok = lr.plateau_relative_change < 0.1;
    let r2_ok = study.rate_fit.r_squared >= 0.99;
    let pass = unimodal && slope_ok && decreasing && plateau_ok && r2_ok;
    let p = study.rate_fit.params;
    let q = study.gamma_opt_fit.params;
    let (rp, rq) = (lr.reference_rate_fit, lr.reference_gamma_opt_fit);
    report(
        10,
        pass,
        &format!(
            "N={ns:?}: single optimum {unimodal}; log-log slope of r_max {:.3} (in [-2.3,-1.7]; N>5 only {:.3}, shifted by fitted a,c {:.3}); \
             gamma_opt {:?} decreasing {decreasing}, last change {:.1}% (< 10%); \
             r_max fit a={:.4} b={:.4} c={:.4} R2={:.5} (>= 0.99) vs reference a={} b={} c={}; \
             gamma_opt fit a={:.4} b={:.4} c={:.4} vs reference a={} b={} c={}; r_max {:?}",
            lr.loglog_slope,
            lr.loglog_slope_fitted,
            lr.shifted_loglog_slope,
            study.gamma_opt.iter().map(|g| (g * 1e4).round() / 1e4).collect::<Vec<_>>(),
            100.0 * lr.plateau_relative_change,
            p.a,
            p.b,
            p.c,
            study.rate_fit.r_squared,
            rp.a,
            rp.b,
            rp.c,
            q.a,
            q.b,
            q.c,
            rq.a,
            rq.b,
            rq.c,
            study.r_max.iter().map(|r| (r * 1e6).round() / 1e6).collect::<Vec<_>>(),
        ),
        t0,
    );
    assert!(pass);
}

