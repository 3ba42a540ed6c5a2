//! Random-walk Metropolis with a Gaussian proposal.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Chain and acceptance rate from [`rwm`].
#[derive(Debug, Clone)]
pub struct RwmResult {
    pub chain: Vec<Vec<f64>>,
    pub acceptance_rate: f64,
}

/// Standard Gaussian-proposal Metropolis chain on `logpost`.
///
/// `proposal_cov` must be symmetric positive definite; rejection handles
/// `-inf` posterior values, so no special casing is needed in the target.
pub fn rwm<F, R>(
    logpost: F,
    init: &[f64],
    proposal_cov: &DMatrix<f64>,
    n_iters: usize,
    rng: &mut R,
) -> Result<RwmResult>
where
    F: Fn(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    let dim = init.len();
    if proposal_cov.nrows() != dim || proposal_cov.ncols() != dim {
        return Err(Error::Config(format!(
            "proposal covariance is {}x{}, state has dimension {dim}",
            proposal_cov.nrows(),
            proposal_cov.ncols()
        )));
    }
    let chol = Cholesky::new(proposal_cov.clone())
        .ok_or_else(|| Error::Numerical("proposal covariance is not positive definite".into()))?;
    let l = chol.l();

    let mut state = init.to_vec();
    let mut lp = logpost(&state);
    let mut chain = Vec::with_capacity(n_iters);
    let mut accepted = 0usize;
    for _ in 0..n_iters {
        let z = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let step = &l * z;
        let prop: Vec<f64> = state.iter().zip(step.iter()).map(|(x, s)| x + s).collect();
        let lp_prop = logpost(&prop);
        let accept = lp_prop - lp >= 0.0 || rng.gen::<f64>().ln() < lp_prop - lp;
        if accept {
            state = prop;
            lp = lp_prop;
            accepted += 1;
        }
        chain.push(state.clone());
    }
    Ok(RwmResult {
        chain,
        acceptance_rate: accepted as f64 / n_iters as f64,
    })
}
