//! Chain diagnostics: effective sample size and per-parameter summaries.

use serde::{Deserialize, Serialize};

/// Effective sample size by the initial-positive-sequence estimator: sum
/// autocorrelations in even/odd pairs until a pair sum turns non-positive,
/// then `ESS = n / (1 + 2 sum rho_k)`.
///
/// A constant chain has no information; its ESS is 1.
pub fn effective_sample_size(chain: &[f64]) -> f64 {
    let n = chain.len();
    if n < 2 {
        return n as f64;
    }
    let mean = chain.iter().sum::<f64>() / n as f64;
    let var = chain.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    if var == 0.0 {
        return 1.0;
    }
    let autocov = |lag: usize| -> f64 {
        let mut acc = 0.0;
        for k in 0..n - lag {
            acc += (chain[k] - mean) * (chain[k + lag] - mean);
        }
        acc / n as f64
    };
    let mut tau = 1.0;
    let mut lag = 1;
    while lag + 1 < n {
        let pair = (autocov(lag) + autocov(lag + 1)) / var;
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    (n as f64 / tau).min(n as f64).max(1.0)
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty() && (0.0..=1.0).contains(&q));
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite sample"));
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Per-parameter posterior summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub mean: f64,
    pub sd: f64,
    pub ess: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
}

impl ChainSummary {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Self {
            mean,
            sd: var.sqrt(),
            ess: effective_sample_size(samples),
            q05: quantile(samples, 0.05),
            q50: quantile(samples, 0.50),
            q95: quantile(samples, 0.95),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn iid_chain_ess_near_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 5000;
        let chain: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let ess = effective_sample_size(&chain);
        assert!(
            (ess - n as f64).abs() <= 0.2 * n as f64,
            "ESS {ess} for an iid chain of {n}"
        );
    }

    #[test]
    fn constant_chain_ess_is_one() {
        let chain = vec![3.5; 1000];
        assert_eq!(effective_sample_size(&chain), 1.0);
    }

    #[test]
    fn correlated_chain_has_reduced_ess() {
        // AR(1) with lag-one 0.9: true ESS factor (1-phi)/(1+phi) = 1/19
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 20000;
        let phi: f64 = 0.9;
        let mut chain = vec![0.0; n];
        for k in 1..n {
            chain[k] = phi * chain[k - 1]
                + (1.0 - phi * phi).sqrt() * rng.sample::<f64, _>(StandardNormal);
        }
        let ess = effective_sample_size(&chain);
        let expect = n as f64 / 19.0;
        assert!(
            ess > 0.5 * expect && ess < 2.0 * expect,
            "ESS {ess}, expected about {expect}"
        );
    }

    #[test]
    fn quantiles_and_summary() {
        let values: Vec<f64> = (0..=100).map(|i| i as f64).collect();
        assert_eq!(quantile(&values, 0.0), 0.0);
        assert_eq!(quantile(&values, 0.5), 50.0);
        assert_eq!(quantile(&values, 1.0), 100.0);
        let s = ChainSummary::from_samples(&values);
        assert_eq!(s.mean, 50.0);
        assert_eq!(s.q05, 5.0);
        assert_eq!(s.q95, 95.0);
    }
}
