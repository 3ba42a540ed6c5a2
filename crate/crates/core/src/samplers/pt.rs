//! Parallel-tempering swaps and temperature-schedule tuning.
//!
//! Swapping states between inverse temperatures `beta_i > beta_j` accepts
//! with probability `min(1, exp((beta_i - beta_j)(loglik_j - loglik_i)))`;
//! the untempered prior factors cancel and the pseudo-prior over the
//! temperature index is uniform.
//!
//! The schedule tuner finds the temperature ratio at which a two-chain pilot
//! run swaps at roughly the target rate (about 23%) and extrapolates a
//! geometric schedule; when the pilot cannot bracket the target it falls back
//! to the default schedule `[1, 0.76, 0.58, 0.44]`.

use rand::Rng;

/// Default inverse-temperature schedule.
pub const DEFAULT_BETAS: [f64; 4] = [1.0, 0.76, 0.58, 0.44];

/// Swap acceptance for untempered log-likelihoods `ll_i`, `ll_j` at inverse
/// temperatures `beta_i`, `beta_j`, given a uniform draw `u`.
pub fn pt_swap_accept(beta_i: f64, beta_j: f64, ll_i: f64, ll_j: f64, u: f64) -> bool {
    let ln_alpha = (beta_i - beta_j) * (ll_j - ll_i);
    ln_alpha >= 0.0 || u.ln() < ln_alpha
}

/// Configuration of the pilot-run schedule tuner.
#[derive(Debug, Clone)]
pub struct ScheduleTuner {
    pub n_temps: usize,
    /// Target adjacent swap rate.
    pub target_swap: f64,
    /// Acceptable deviation from the target before bisection stops.
    pub tol: f64,
    /// Iterations per pilot run.
    pub pilot_iters: usize,
    /// Random-walk proposal standard deviation at beta = 1 (scaled by
    /// `1/sqrt(beta)` at hotter temperatures).
    pub rwm_step: f64,
    pub max_bisections: usize,
}

impl Default for ScheduleTuner {
    fn default() -> Self {
        Self {
            n_temps: 4,
            target_swap: 0.23,
            tol: 0.02,
            pilot_iters: 4000,
            rwm_step: 1.0,
            max_bisections: 30,
        }
    }
}

impl ScheduleTuner {
    /// Swap rate between chains at `beta = 1` and `beta = ratio` in a short
    /// two-chain pilot with alternating within-temperature moves and swaps.
    fn pilot_swap_rate<F, R>(&self, loglik: &F, init: &[f64], ratio: f64, rng: &mut R) -> f64
    where
        F: Fn(&[f64]) -> f64,
        R: Rng + ?Sized,
    {
        let betas = [1.0, ratio];
        let mut states = [init.to_vec(), init.to_vec()];
        let mut lls = [loglik(init), loglik(init)];
        let mut attempts = 0u64;
        let mut accepts = 0u64;
        for _ in 0..self.pilot_iters {
            for c in 0..2 {
                let step = self.rwm_step / betas[c].sqrt();
                let prop: Vec<f64> = states[c]
                    .iter()
                    .map(|x| x + step * rng.sample::<f64, _>(rand_distr::StandardNormal))
                    .collect();
                let ll_prop = loglik(&prop);
                let d = betas[c] * (ll_prop - lls[c]);
                if d >= 0.0 || rng.gen::<f64>().ln() < d {
                    states[c] = prop;
                    lls[c] = ll_prop;
                }
            }
            attempts += 1;
            if pt_swap_accept(betas[0], betas[1], lls[0], lls[1], rng.gen::<f64>()) {
                states.swap(0, 1);
                lls.swap(0, 1);
                accepts += 1;
            }
        }
        accepts as f64 / attempts as f64
    }

    /// Tune a geometric inverse-temperature schedule for the target whose
    /// untempered log-likelihood is `loglik`. Falls back to
    /// [`DEFAULT_BETAS`] when the pilot cannot bracket the target rate.
    pub fn tune<F, R>(&self, loglik: F, init: &[f64], rng: &mut R) -> Vec<f64>
    where
        F: Fn(&[f64]) -> f64,
        R: Rng + ?Sized,
    {
        let fallback: Vec<f64> = DEFAULT_BETAS.iter().copied().take(self.n_temps.max(1)).collect();
        if self.n_temps < 2 {
            return vec![1.0];
        }
        // swap rate is monotone increasing in the ratio
        let (mut lo, mut hi) = (0.02f64, 0.98f64);
        let rate_lo = self.pilot_swap_rate(&loglik, init, lo, rng);
        let rate_hi = self.pilot_swap_rate(&loglik, init, hi, rng);
        if !(rate_lo < self.target_swap && self.target_swap < rate_hi) {
            return fallback;
        }
        let mut ratio = 0.5 * (lo + hi);
        for _ in 0..self.max_bisections {
            ratio = 0.5 * (lo + hi);
            let rate = self.pilot_swap_rate(&loglik, init, ratio, rng);
            if (rate - self.target_swap).abs() <= self.tol {
                break;
            }
            if rate > self.target_swap {
                hi = ratio;
            } else {
                lo = ratio;
            }
        }
        (0..self.n_temps).map(|k| ratio.powi(k as i32)).collect()
    }
}

/// Convenience wrapper over [`ScheduleTuner::tune`] with default settings.
pub fn tune_schedule<F, R>(loglik: F, init: &[f64], n_temps: usize, rng: &mut R) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    ScheduleTuner {
        n_temps,
        ..ScheduleTuner::default()
    }
    .tune(loglik, init, rng)
}
