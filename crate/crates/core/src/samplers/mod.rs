//! Gradient-free MCMC: random-walk Metropolis, pCN, affine-invariant stretch
//! moves on the low-wavenumber subspace, and parallel tempering, combined by
//! a random-scan Metropolis-within-Gibbs controller.
//!
//! The sampled state is a [`WalkerState`]: a finite-dimensional diagram block
//! plus native OU coordinate vectors for the inlet and outlet boundary
//! conditions. Ensemble stretch moves act on the diagram block (identity
//! projection) and on the first-M Karhunen-Loeve coordinates of each BC;
//! pCN handles the high-wavenumber complement, and temperature swaps move
//! whole walkers between tempered copies of the posterior.

mod aies;
mod fes;
mod pcn;
mod pt;
mod rwm;

pub use aies::{aies_sweep, propose_stretch, stretch_z, AiesSettings};
pub use fes::{
    append_bc_snapshots, append_chain_records, chain_csv_path, prior_box_init, BcSnapshot,
    ChainRecord, FesConfig, FesRun, FesSampler, SamplerCheckpoint,
};
pub use pcn::{pcn_proposal, pcn_update, BcSide};
pub use pt::{pt_swap_accept, tune_schedule, ScheduleTuner, DEFAULT_BETAS};
pub use rwm::{rwm, RwmResult};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::prior::LogOuPrior;

/// Position of one walker: diagram parameters plus the two BC coordinate
/// vectors (either may be empty for reduced targets).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkerState {
    pub fd: Vec<f64>,
    pub x_in: Vec<f64>,
    pub x_out: Vec<f64>,
}

/// A walker with its cached untempered log-likelihood and log-prior.
///
/// Caches are temperature-independent, so swaps move walkers wholesale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Walker {
    pub state: WalkerState,
    pub loglik: f64,
    pub logprior: f64,
}

impl Walker {
    /// Tempered log-posterior at inverse temperature `beta`.
    pub fn log_posterior(&self, beta: f64) -> f64 {
        if self.logprior.is_infinite() || self.loglik.is_infinite() {
            return f64::NEG_INFINITY;
        }
        beta * self.loglik + self.logprior
    }
}

/// Target distribution seen by the samplers: an untempered log-likelihood and
/// a log-prior, both `-inf` on invalid states.
pub trait FesTarget: Sync {
    fn log_likelihood(&self, state: &WalkerState) -> f64;
    fn log_prior(&self, state: &WalkerState) -> f64;

    fn evaluate(&self, state: &WalkerState) -> (f64, f64) {
        let logprior = self.log_prior(state);
        if logprior.is_infinite() {
            return (f64::NEG_INFINITY, logprior);
        }
        (self.log_likelihood(state), logprior)
    }
}

impl FesTarget for crate::model::Model {
    fn log_likelihood(&self, state: &WalkerState) -> f64 {
        let Ok(fd) = crate::fd::DelCastilloParams::from_vector(&state.fd) else {
            return f64::NEG_INFINITY;
        };
        let theta = crate::model::Theta {
            fd,
            bc_in: self.prior_in.bc_from_x(state.x_in.clone()),
            bc_out: self.prior_out.bc_from_x(state.x_out.clone()),
        };
        crate::model::Model::log_likelihood(self, &theta)
    }

    fn log_prior(&self, state: &WalkerState) -> f64 {
        if state.fd.len() != 4 {
            return f64::NEG_INFINITY;
        }
        let params = [state.fd[0], state.fd[1], state.fd[2], state.fd[3]];
        let box_term = self.fd_box.log_density(&params);
        if box_term.is_infinite() {
            return f64::NEG_INFINITY;
        }
        box_term
            + self.prior_in.log_density_x(&state.x_in)
            + self.prior_out.log_density_x(&state.x_out)
    }
}

/// Low-wavenumber projectors for the two BC blocks. `None` means the block is
/// absent (its coordinate vector must be empty).
#[derive(Clone, Copy)]
pub struct Projectors<'a> {
    pub inlet: Option<&'a LogOuPrior>,
    pub outlet: Option<&'a LogOuPrior>,
}

impl<'a> Projectors<'a> {
    pub fn none() -> Self {
        Self {
            inlet: None,
            outlet: None,
        }
    }

    /// Dimension of the subspace an ensemble stretch move acts on.
    pub fn moved_dimension(&self, fd_len: usize) -> usize {
        fd_len
            + self.inlet.map_or(0, |p| p.m_trunc())
            + self.outlet.map_or(0, |p| p.m_trunc())
    }
}

/// Reconstructible ChaCha stream state for checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self, seed: u64) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Proposal/acceptance counter.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counter {
    pub proposals: u64,
    pub accepts: u64,
}

impl Counter {
    pub fn record(&mut self, accepted: bool) {
        self.proposals += 1;
        self.accepts += u64::from(accepted);
    }

    pub fn rate(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.accepts as f64 / self.proposals as f64
        }
    }
}

/// Per-move acceptance statistics of a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MoveStats {
    /// Stretch-move counters per temperature.
    pub aies: Vec<Counter>,
    /// pCN counters per temperature, inlet block.
    pub pcn_in: Vec<Counter>,
    /// pCN counters per temperature, outlet block.
    pub pcn_out: Vec<Counter>,
    /// Swap counters per adjacent temperature pair.
    pub swap: Vec<Counter>,
}

impl MoveStats {
    pub fn new(n_temps: usize) -> Self {
        Self {
            aies: vec![Counter::default(); n_temps],
            pcn_in: vec![Counter::default(); n_temps],
            pcn_out: vec![Counter::default(); n_temps],
            swap: vec![Counter::default(); n_temps.saturating_sub(1)],
        }
    }
}
