//! Preconditioned Crank-Nicolson updates on the high-wavenumber complement
//! of one boundary-condition block.
//!
//! The proposal `x' = P x + Q (sqrt(1 - omega^2) x + omega xi)` with
//! `xi ~ N(0, C)` leaves the Gaussian prior invariant on the complement, so
//! the acceptance ratio involves only the (tempered) likelihood difference.

use rand::Rng;

use super::{Counter, FesTarget, Walker};
use crate::prior::LogOuPrior;

/// Which boundary block a pCN move touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BcSide {
    Inlet,
    Outlet,
}

/// The pCN proposal vector for coordinates `x` under `prior`, using the
/// supplied prior draw `xi`.
pub fn pcn_proposal(x: &[f64], xi: &[f64], omega: f64, prior: &LogOuPrior) -> Vec<f64> {
    debug_assert!(omega > 0.0 && omega <= 1.0);
    let damp = (1.0 - omega * omega).sqrt();
    // y = sqrt(1-w^2) x + w xi ; x' = y + P (x - y)
    let y: Vec<f64> = x
        .iter()
        .zip(xi)
        .map(|(xv, xiv)| damp * xv + omega * xiv)
        .collect();
    let diff: Vec<f64> = x.iter().zip(&y).map(|(xv, yv)| xv - yv).collect();
    let p_diff = prior.project_low(&diff);
    y.iter().zip(&p_diff).map(|(yv, d)| yv + d).collect()
}

/// One pCN update of `walker`'s chosen BC block at inverse temperature
/// `beta_temp`: accept with probability `min(1, exp(beta_temp * delta
/// loglik))`.
pub fn pcn_update<R: Rng + ?Sized>(
    walker: &mut Walker,
    side: BcSide,
    omega: f64,
    prior: &LogOuPrior,
    beta_temp: f64,
    target: &(impl FesTarget + ?Sized),
    counter: &mut Counter,
    rng: &mut R,
) {
    let (state, xi, u) = {
        let xi = prior.sample_x(rng);
        let u = rng.gen::<f64>();
        let mut state = walker.state.clone();
        match side {
            BcSide::Inlet => state.x_in = pcn_proposal(&walker.state.x_in, &xi, omega, prior),
            BcSide::Outlet => state.x_out = pcn_proposal(&walker.state.x_out, &xi, omega, prior),
        }
        (state, xi, u)
    };
    let _ = xi;
    let loglik = target.log_likelihood(&state);
    let accepted = !loglik.is_nan()
        && (beta_temp * (loglik - walker.loglik) >= 0.0
            || u.ln() < beta_temp * (loglik - walker.loglik));
    counter.record(accepted);
    if accepted {
        walker.logprior = target.log_prior(&state);
        walker.state = state;
        walker.loglik = loglik;
    }
}
