//! Affine-invariant ensemble stretch moves on the low-wavenumber subspace.
//!
//! A walker proposes along the line toward a partner walker, scaled by a draw
//! `Z` with density proportional to `1/sqrt(z)` on `[1/a, a]`. The diagram
//! block moves with the identity projection; each BC coordinate vector moves
//! only in its first-M Karhunen-Loeve directions. The acceptance probability
//! is `min(1, Z^(D-1) pi(proposal)/pi(current))` with `D` the dimension of
//! the moved subspace.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Counter, FesTarget, Projectors, Walker, WalkerState};

/// Inverse-CDF draw of the stretch factor: `z = (1/sqrt(a) + u (sqrt(a) -
/// 1/sqrt(a)))^2` for `u` uniform on [0, 1].
pub fn stretch_z(a: f64, u: f64) -> f64 {
    debug_assert!(a > 1.0);
    let s = a.sqrt();
    let r = 1.0 / s + u * (s - 1.0 / s);
    r * r
}

/// Stretch-move settings: the scale `a` and the inverse temperature of the
/// chain being updated.
#[derive(Debug, Clone, Copy)]
pub struct AiesSettings {
    pub a: f64,
    pub beta_temp: f64,
}

/// Stretch proposal from `cur` toward `partner`:
/// `x + (1 - z) P (partner - x)` blockwise. Returns `None` when the moved
/// components of the two walkers coincide exactly (degenerate direction).
pub fn propose_stretch(
    cur: &WalkerState,
    partner: &WalkerState,
    z: f64,
    projs: &Projectors,
) -> Option<WalkerState> {
    let g = 1.0 - z;
    let mut degenerate = true;

    let mut fd = Vec::with_capacity(cur.fd.len());
    for (c, p) in cur.fd.iter().zip(&partner.fd) {
        let d = p - c;
        degenerate &= d == 0.0;
        fd.push(c + g * d);
    }

    let move_block = |x: &[f64], px: &[f64], prior: Option<&crate::prior::LogOuPrior>| {
        match prior {
            Some(prior) => {
                let diff: Vec<f64> = px.iter().zip(x).map(|(p, c)| p - c).collect();
                let pdiff = prior.project_low(&diff);
                let moved = pdiff.iter().any(|&d| d != 0.0);
                let out: Vec<f64> = x.iter().zip(&pdiff).map(|(c, d)| c + g * d).collect();
                (out, moved)
            }
            None => (x.to_vec(), false),
        }
    };

    let (x_in, in_moved) = move_block(&cur.x_in, &partner.x_in, projs.inlet);
    let (x_out, out_moved) = move_block(&cur.x_out, &partner.x_out, projs.outlet);
    degenerate &= !in_moved && !out_moved;

    if degenerate {
        None
    } else {
        Some(WalkerState { fd, x_in, x_out })
    }
}

fn accept_stretch(
    cur: &Walker,
    prop_state: WalkerState,
    z: f64,
    dim: usize,
    beta: f64,
    target: &(impl FesTarget + ?Sized),
    u_accept: f64,
) -> Option<Walker> {
    let logprior = target.log_prior(&prop_state);
    if logprior.is_infinite() {
        return None;
    }
    let loglik = target.log_likelihood(&prop_state);
    if loglik.is_infinite() || loglik.is_nan() {
        return None;
    }
    let ln_ratio = (dim as f64 - 1.0) * z.ln() + beta * (loglik - cur.loglik)
        + (logprior - cur.logprior);
    if ln_ratio >= 0.0 || u_accept.ln() < ln_ratio {
        Some(Walker {
            state: prop_state,
            loglik,
            logprior,
        })
    } else {
        None
    }
}

/// One stretch-move sweep over an ensemble at a single temperature.
///
/// In serial mode each walker proposes against the current in-place ensemble,
/// so later walkers see earlier accepted updates. In parallel mode the
/// ensemble is split into complementary halves updated against the frozen
/// other half, with likelihood evaluations fanned out across threads; both
/// schedules leave the target invariant.
#[allow(clippy::too_many_arguments)]
pub fn aies_sweep(
    walkers: &mut [Walker],
    rngs: &mut [ChaCha8Rng],
    target: &(impl FesTarget + ?Sized + Sync),
    projs: &Projectors,
    settings: AiesSettings,
    counter: &mut Counter,
    parallel: bool,
) {
    let l = walkers.len();
    let dim = projs.moved_dimension(walkers[0].state.fd.len());
    if parallel {
        let half = l / 2;
        for (lo, hi) in [(0, half), (half, l)] {
            // draw all randomness serially, then evaluate in parallel
            let mut proposals: Vec<(usize, WalkerState, f64, f64)> = Vec::new();
            for i in lo..hi {
                let rng = &mut rngs[i];
                let other = if lo == 0 { half..l } else { 0..half };
                let j = rng.gen_range(other);
                let z = stretch_z(settings.a, rng.gen::<f64>());
                let u = rng.gen::<f64>();
                if let Some(p) = propose_stretch(&walkers[i].state, &walkers[j].state, z, projs)
                {
                    proposals.push((i, p, z, u));
                }
            }
            let updates: Vec<(usize, Option<Walker>)> = proposals
                .into_par_iter()
                .map(|(i, state, z, u)| {
                    (
                        i,
                        accept_stretch(&walkers[i], state, z, dim, settings.beta_temp, target, u),
                    )
                })
                .collect();
            for (i, update) in updates {
                counter.record(update.is_some());
                if let Some(w) = update {
                    walkers[i] = w;
                }
            }
        }
    } else {
        for i in 0..l {
            let rng = &mut rngs[i];
            let j = {
                let j = rng.gen_range(0..l - 1);
                if j >= i {
                    j + 1
                } else {
                    j
                }
            };
            let z = stretch_z(settings.a, rng.gen::<f64>());
            let u = rng.gen::<f64>();
            let Some(state) = propose_stretch(&walkers[i].state, &walkers[j].state, z, projs)
            else {
                continue;
            };
            let update = accept_stretch(&walkers[i], state, z, dim, settings.beta_temp, target, u);
            counter.record(update.is_some());
            if let Some(w) = update {
                walkers[i] = w;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::SeedableRng;

    struct FlatTarget;
    impl FesTarget for FlatTarget {
        fn log_likelihood(&self, _: &WalkerState) -> f64 {
            0.0
        }
        fn log_prior(&self, _: &WalkerState) -> f64 {
            0.0
        }
    }

    /// Independent Gaussian on the diagram block with per-axis scales.
    struct DiagGaussian {
        scales: Vec<f64>,
    }
    impl FesTarget for DiagGaussian {
        fn log_likelihood(&self, s: &WalkerState) -> f64 {
            -0.5
                * s.fd
                    .iter()
                    .zip(&self.scales)
                    .map(|(x, sc)| (x / sc) * (x / sc))
                    .sum::<f64>()
        }
        fn log_prior(&self, _: &WalkerState) -> f64 {
            0.0
        }
    }

    fn ensemble(dim: usize, l: usize, spread: f64, seed: u64) -> (Vec<Walker>, Vec<ChaCha8Rng>) {
        let mut seeder = ChaCha8Rng::seed_from_u64(seed);
        let walkers = (0..l)
            .map(|_| {
                let fd: Vec<f64> = (0..dim)
                    .map(|_| spread * (seeder.gen::<f64>() - 0.5))
                    .collect();
                Walker {
                    state: WalkerState {
                        fd,
                        x_in: vec![],
                        x_out: vec![],
                    },
                    loglik: 0.0,
                    logprior: 0.0,
                }
            })
            .collect();
        let rngs = (0..l)
            .map(|i| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream(1 + i as u64);
                r
            })
            .collect();
        (walkers, rngs)
    }

    #[test]
    fn stretch_z_closed_form() {
        assert_abs_diff_eq!(stretch_z(2.0, 0.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(stretch_z(2.0, 1.0), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(stretch_z(2.0, 0.5), 1.125, epsilon = 1e-15);
    }

    #[test]
    fn stretch_z_mean_matches_quadrature() {
        // E[z] against Simpson quadrature of z g(z) on [1/a, a]
        let a = 2.0f64;
        let (lo, hi) = (1.0 / a, a);
        let n = 10_000;
        let h = (hi - lo) / n as f64;
        let g = |z: f64| 1.0 / z.sqrt();
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..n {
            let z0 = lo + k as f64 * h;
            let z1 = z0 + h;
            let zm = 0.5 * (z0 + z1);
            num += h / 6.0 * (z0 * g(z0) + 4.0 * zm * g(zm) + z1 * g(z1));
            den += h / 6.0 * (g(z0) + 4.0 * g(zm) + g(z1));
        }
        let quadrature_mean = num / den;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = 1_000_000;
        let mc: f64 =
            (0..draws).map(|_| stretch_z(a, rng.gen::<f64>())).sum::<f64>() / draws as f64;
        assert_relative_eq!(mc, quadrature_mean, max_relative = 0.01);
        // closed form of the mean for reference: (a + 1/a + 1)/3
        assert_relative_eq!(quadrature_mean, (a + 1.0 / a + 1.0) / 3.0, max_relative = 1e-6);
    }

    #[test]
    fn z_equal_one_proposes_current_state_and_accepts() {
        let (walkers, _) = ensemble(3, 6, 2.0, 7);
        let prop = propose_stretch(
            &walkers[0].state,
            &walkers[1].state,
            1.0,
            &Projectors::none(),
        )
        .unwrap();
        for (p, c) in prop.fd.iter().zip(&walkers[0].state.fd) {
            assert_abs_diff_eq!(*p, *c, epsilon = 1e-15);
        }
        // ratio is z^(D-1) = 1: always accepted
        let w = accept_stretch(&walkers[0], prop, 1.0, 3, 1.0, &FlatTarget, 0.999999);
        assert!(w.is_some());
    }

    #[test]
    fn degenerate_partner_is_skipped() {
        let (walkers, _) = ensemble(3, 6, 2.0, 9);
        let twin = walkers[0].state.clone();
        assert!(propose_stretch(&walkers[0].state, &twin, 1.3, &Projectors::none()).is_none());
    }

    #[test]
    fn flat_target_acceptance_matches_z_power() {
        // bin proposals by z; empirical acceptance must equal min(1, z^(D-1))
        let dim = 12;
        let (mut walkers, _) = ensemble(dim, 20, 1.0, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = 2.0;
        let n_bins = 14;
        let mut tries = vec![0u64; n_bins];
        let mut accepts = vec![0u64; n_bins];
        let mut expected = vec![0.0f64; n_bins];
        let (z_lo, z_hi) = (1.0 / a, a);
        for trial in 0..400_000 {
            let i = trial % walkers.len();
            let j = (i + 1 + (trial / walkers.len()) % (walkers.len() - 1)) % walkers.len();
            let z = stretch_z(a, rng.gen::<f64>());
            let u = rng.gen::<f64>();
            let bin = (((z - z_lo) / (z_hi - z_lo)) * n_bins as f64) as usize;
            let bin = bin.min(n_bins - 1);
            let Some(state) = propose_stretch(
                &walkers[i].state,
                &walkers[j].state,
                z,
                &Projectors::none(),
            ) else {
                continue;
            };
            tries[bin] += 1;
            expected[bin] += z.powi(dim as i32 - 1).min(1.0);
            let cur = walkers[i].clone();
            if let Some(w) = accept_stretch(&cur, state, z, dim, 1.0, &FlatTarget, u) {
                accepts[bin] += 1;
                walkers[i] = w;
            }
        }
        for b in 0..n_bins {
            if tries[b] < 2_000 {
                continue;
            }
            let expect = expected[b] / tries[b] as f64;
            let emp = accepts[b] as f64 / tries[b] as f64;
            assert!(
                (emp - expect).abs() < 0.02,
                "bin {b}: empirical {emp:.4} vs mean min(1, z^(D-1)) {expect:.4}"
            );
        }
    }

    #[test]
    fn gaussian_moments_recovered() {
        let scales: Vec<f64> = (0..12).map(|d| 0.5 + 0.25 * d as f64).collect();
        let target = DiagGaussian {
            scales: scales.clone(),
        };
        let (mut walkers, mut rngs) = ensemble(12, 26, 0.5, 17);
        for w in &mut walkers {
            w.loglik = target.log_likelihood(&w.state);
        }
        let mut counter = Counter::default();
        let settings = AiesSettings { a: 2.0, beta_temp: 1.0 };
        let mut acc = vec![0.0; 12];
        let mut count = 0u64;
        let sweeps = 60_000;
        for sweep in 0..sweeps {
            aies_sweep(
                &mut walkers,
                &mut rngs,
                &target,
                &Projectors::none(),
                settings,
                &mut counter,
                false,
            );
            if sweep > sweeps / 5 {
                for w in &walkers {
                    for (a, x) in acc.iter_mut().zip(&w.state.fd) {
                        *a += x * x;
                    }
                }
                count += walkers.len() as u64;
            }
        }
        for d in 0..12 {
            let emp = acc[d] / count as f64;
            let expect = scales[d] * scales[d];
            assert_relative_eq!(emp, expect, max_relative = 0.05);
        }
        assert!(counter.rate() > 0.1 && counter.rate() < 0.9);
    }

    #[test]
    fn affine_equivariance_on_anisotropic_gaussian() {
        // run on f(Ax) and on f with transformed initialization, shared
        // random numbers: acceptance rates and mapped moments agree
        let scales = vec![1.0, 1.0, 1.0];
        let a_mat = [[2.0, 0.7, 0.0], [0.0, 0.5, 0.3], [0.0, 0.0, 1.5]];
        let apply = |x: &[f64]| -> Vec<f64> {
            (0..3)
                .map(|r| (0..3).map(|c| a_mat[r][c] * x[c]).sum())
                .collect()
        };
        struct Mapped {
            scales: Vec<f64>,
            mat: [[f64; 3]; 3],
        }
        impl FesTarget for Mapped {
            fn log_likelihood(&self, s: &WalkerState) -> f64 {
                let y: Vec<f64> = (0..3)
                    .map(|r| (0..3).map(|c| self.mat[r][c] * s.fd[c]).sum())
                    .collect();
                -0.5
                    * y.iter()
                        .zip(&self.scales)
                        .map(|(v, sc)| (v / sc) * (v / sc))
                        .sum::<f64>()
            }
            fn log_prior(&self, _: &WalkerState) -> f64 {
                0.0
            }
        }
        let direct = DiagGaussian {
            scales: scales.clone(),
        };
        let mapped = Mapped {
            scales,
            mat: a_mat,
        };

        let (walkers0, rngs_a) = ensemble(3, 16, 1.0, 23);
        // chain B starts at A * (chain A start)
        let mut walkers_b: Vec<Walker> = walkers0
            .iter()
            .map(|w| Walker {
                state: WalkerState {
                    fd: apply(&w.state.fd),
                    x_in: vec![],
                    x_out: vec![],
                },
                loglik: 0.0,
                logprior: 0.0,
            })
            .collect();
        let mut walkers_a = walkers0;
        for w in &mut walkers_a {
            w.loglik = mapped.log_likelihood(&w.state);
        }
        for w in &mut walkers_b {
            w.loglik = direct.log_likelihood(&w.state);
        }
        let mut rngs_b = rngs_a.clone();
        let mut rngs_a = rngs_a;
        let settings = AiesSettings { a: 2.0, beta_temp: 1.0 };
        let (mut ca, mut cb) = (Counter::default(), Counter::default());
        let sweeps = 30_000;
        let mut var_a = vec![0.0; 3];
        let mut var_b = vec![0.0; 3];
        let mut count = 0u64;
        for sweep in 0..sweeps {
            aies_sweep(&mut walkers_a, &mut rngs_a, &mapped, &Projectors::none(), settings, &mut ca, false);
            aies_sweep(&mut walkers_b, &mut rngs_b, &direct, &Projectors::none(), settings, &mut cb, false);
            if sweep > sweeps / 5 {
                for (wa, wb) in walkers_a.iter().zip(&walkers_b) {
                    let ya = apply(&wa.state.fd);
                    for d in 0..3 {
                        var_a[d] += ya[d] * ya[d];
                        var_b[d] += wb.state.fd[d] * wb.state.fd[d];
                    }
                }
                count += walkers_a.len() as u64;
            }
        }
        assert_abs_diff_eq!(ca.rate(), cb.rate(), epsilon = 0.01);
        for d in 0..3 {
            let (va, vb) = (var_a[d] / count as f64, var_b[d] / count as f64);
            assert_relative_eq!(va, vb, max_relative = 0.06);
            assert_relative_eq!(va, 1.0, max_relative = 0.06);
        }
    }

    #[test]
    fn parallel_and_serial_sweeps_both_sample_the_target() {
        let scales = vec![1.0, 2.0];
        let target = DiagGaussian {
            scales: scales.clone(),
        };
        for parallel in [false, true] {
            let (mut walkers, mut rngs) = ensemble(2, 13, 0.5, 29);
            for w in &mut walkers {
                w.loglik = target.log_likelihood(&w.state);
            }
            let mut counter = Counter::default();
            let mut acc = vec![0.0; 2];
            let mut count = 0u64;
            let sweeps = 40_000;
            for sweep in 0..sweeps {
                aies_sweep(
                    &mut walkers,
                    &mut rngs,
                    &target,
                    &Projectors::none(),
                    AiesSettings { a: 2.0, beta_temp: 1.0 },
                    &mut counter,
                    parallel,
                );
                if sweep > sweeps / 5 {
                    for w in &walkers {
                        for (a, x) in acc.iter_mut().zip(&w.state.fd) {
                            *a += x * x;
                        }
                    }
                    count += walkers.len() as u64;
                }
            }
            for d in 0..2 {
                let emp = acc[d] / count as f64;
                assert_relative_eq!(emp, scales[d] * scales[d], max_relative = 0.06);
            }
        }
    }
}
