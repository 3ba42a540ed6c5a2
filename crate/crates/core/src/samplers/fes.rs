//! Functional ensemble sampler with parallel tempering.
//!
//! A random-scan Metropolis-within-Gibbs controller draws one of four moves
//! per iteration — ensemble stretch sweep, pCN on the inlet block, pCN on the
//! outlet block, or a temperature swap — with configured probabilities.
//! Within-temperature moves are applied to every tempered ensemble; a swap
//! move picks one adjacent temperature pair uniformly and proposes to
//! exchange each walker slot independently.
//!
//! All proposal randomness comes from per-walker ChaCha streams keyed by
//! `(temperature, slot)`, with a separate controller stream for move
//! selection and swaps, so a fixed seed reproduces a run bit-for-bit and the
//! parallel evaluation schedule does not alter the draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::path::Path;

use super::{
    aies_sweep, pcn_proposal, pt_swap_accept, AiesSettings, BcSide, FesTarget, MoveStats,
    Projectors, RngState, Walker, WalkerState,
};
use crate::error::{Error, Result};
use crate::model::FdPriorBox;
use crate::prior::LogOuPrior;

/// Tuning parameters of the combined sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FesConfig {
    /// Walkers per temperature.
    pub n_walkers: usize,
    /// Stretch-move scale.
    pub stretch_a: f64,
    /// Probabilities of the four moves: stretch sweep, pCN inlet, pCN
    /// outlet, temperature swap. Must sum to 1.
    pub move_probs: [f64; 4],
    /// Inverse temperatures, starting at exactly 1 and strictly decreasing.
    pub betas: Vec<f64>,
    /// pCN step size per temperature for the inlet block.
    pub pcn_step_in: Vec<f64>,
    /// pCN step size per temperature for the outlet block.
    pub pcn_step_out: Vec<f64>,
    /// Total planned iterations.
    pub n_iters: usize,
    /// Chain thinning interval.
    pub thin: usize,
    /// Iterations between BC coordinate snapshots of the cold ensemble.
    pub snapshot_every: usize,
    pub seed: u64,
    /// Scale applied to prior draws when initializing BC coordinates.
    pub init_bc_scale: f64,
    /// Fan likelihood evaluations out across threads.
    pub parallel: bool,
    /// Fraction of `n_iters` discarded before accumulating posterior means.
    pub burn_fraction: f64,
}

impl Default for FesConfig {
    fn default() -> Self {
        Self {
            n_walkers: 13,
            stretch_a: 2.0,
            move_probs: [0.25, 0.125, 0.125, 0.5],
            betas: super::pt::DEFAULT_BETAS.to_vec(),
            pcn_step_in: vec![0.155, 0.17, 0.2, 0.25],
            pcn_step_out: vec![0.078, 0.09, 0.11, 0.15],
            n_iters: 102_000,
            thin: 100,
            snapshot_every: 1000,
            seed: 0,
            init_bc_scale: 0.1,
            parallel: false,
            burn_fraction: 0.5,
        }
    }
}

impl FesConfig {
    fn validate(&self, m_in: usize, m_out: usize) -> Result<()> {
        let k = self.betas.len();
        if k == 0 {
            return Err(Error::Config("need at least one temperature".into()));
        }
        if self.betas[0] != 1.0 {
            return Err(Error::Config("the first inverse temperature must be 1".into()));
        }
        if self.betas.windows(2).any(|w| w[1] >= w[0]) || self.betas.iter().any(|&b| b <= 0.0) {
            return Err(Error::Config(
                "inverse temperatures must be strictly decreasing and positive".into(),
            ));
        }
        let prob_sum: f64 = self.move_probs.iter().sum();
        if (prob_sum - 1.0).abs() > 1e-9 || self.move_probs.iter().any(|&p| p < 0.0) {
            return Err(Error::Config("move probabilities must be non-negative and sum to 1".into()));
        }
        if self.pcn_step_in.len() != k || self.pcn_step_out.len() != k {
            return Err(Error::Config(format!(
                "need one pCN step size per temperature ({k})"
            )));
        }
        for &w in self.pcn_step_in.iter().chain(&self.pcn_step_out) {
            if !(w > 0.0 && w <= 1.0) {
                return Err(Error::Config(format!("pCN step size {w} outside (0, 1]")));
            }
        }
        let m = m_in.max(m_out);
        if self.n_walkers < m + 2 {
            return Err(Error::Config(format!(
                "need at least M + 2 = {} walkers, got {}",
                m + 2,
                self.n_walkers
            )));
        }
        if self.thin == 0 || self.snapshot_every == 0 {
            return Err(Error::Config("thin and snapshot_every must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.burn_fraction) {
            return Err(Error::Config("burn_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// One thinned chain row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub iteration: usize,
    pub temp: usize,
    pub walker: usize,
    pub fd: Vec<f64>,
    pub loglik: f64,
}

/// Cold-ensemble BC coordinates at a snapshot iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcSnapshot {
    pub iteration: usize,
    pub walker: usize,
    pub x_in: Vec<f64>,
    pub x_out: Vec<f64>,
}

/// Serializable sampler state for interrupt/resume.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerCheckpoint {
    pub iteration: usize,
    pub walkers: Vec<Vec<Walker>>,
    pub controller: RngState,
    pub rngs: Vec<Vec<RngState>>,
    pub stats: MoveStats,
    pub bc_mean_in: Vec<f64>,
    pub bc_mean_out: Vec<f64>,
    pub bc_mean_count: u64,
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct FesRun {
    pub records: Vec<ChainRecord>,
    pub snapshots: Vec<BcSnapshot>,
    pub stats: MoveStats,
    pub final_walkers: Vec<Vec<Walker>>,
    /// Posterior-mean BC density curves from the cold ensemble past burn-in.
    pub bc_mean_in: Option<Vec<f64>>,
    pub bc_mean_out: Option<Vec<f64>>,
    pub betas: Vec<f64>,
    pub iterations: usize,
}

/// The combined sampler. Walkers are indexed `[temperature][slot]`.
pub struct FesSampler<'a, T: FesTarget> {
    target: &'a T,
    prior_in: Option<&'a LogOuPrior>,
    prior_out: Option<&'a LogOuPrior>,
    pub config: FesConfig,
    walkers: Vec<Vec<Walker>>,
    rngs: Vec<Vec<ChaCha8Rng>>,
    controller: ChaCha8Rng,
    stats: MoveStats,
    iteration: usize,
    records: Vec<ChainRecord>,
    snapshots: Vec<BcSnapshot>,
    bc_mean_in: Vec<f64>,
    bc_mean_out: Vec<f64>,
    bc_mean_count: u64,
}

/// Standard initialization: diagram parameters uniform over the prior box,
/// BC coordinates as prior draws shrunk toward zero.
pub fn prior_box_init<'a>(
    fd_box: FdPriorBox,
    prior_in: Option<&'a LogOuPrior>,
    prior_out: Option<&'a LogOuPrior>,
    scale: f64,
) -> impl FnMut(&mut ChaCha8Rng) -> WalkerState + 'a {
    move |rng| {
        let fd = fd_box.sample(rng).to_vec();
        let draw = |p: Option<&LogOuPrior>, rng: &mut ChaCha8Rng| match p {
            Some(p) => p.sample_x(rng).into_iter().map(|v| scale * v).collect(),
            None => Vec::new(),
        };
        let x_in = draw(prior_in, rng);
        let x_out = draw(prior_out, rng);
        WalkerState { fd, x_in, x_out }
    }
}

impl<'a, T: FesTarget> FesSampler<'a, T> {
    /// Build the sampler and initialize every walker to a finite posterior,
    /// retrying the initializer up to 100 times per walker.
    pub fn new(
        target: &'a T,
        prior_in: Option<&'a LogOuPrior>,
        prior_out: Option<&'a LogOuPrior>,
        config: FesConfig,
        mut init: impl FnMut(&mut ChaCha8Rng) -> WalkerState,
    ) -> Result<Self> {
        config.validate(
            prior_in.map_or(0, |p| p.m_trunc()),
            prior_out.map_or(0, |p| p.m_trunc()),
        )?;
        let k = config.betas.len();
        let l = config.n_walkers;
        let controller = stream_rng(config.seed, 0);
        let mut rngs: Vec<Vec<ChaCha8Rng>> = (0..k)
            .map(|kt| {
                (0..l)
                    .map(|i| stream_rng(config.seed, 1 + (kt * l + i) as u64))
                    .collect()
            })
            .collect();
        let mut walkers = Vec::with_capacity(k);
        for (kt, rng_row) in rngs.iter_mut().enumerate() {
            let mut row = Vec::with_capacity(l);
            for (slot, rng) in rng_row.iter_mut().enumerate() {
                let mut found = None;
                for _ in 0..100 {
                    let state = init(rng);
                    let (loglik, logprior) = target.evaluate(&state);
                    if loglik.is_finite() && logprior.is_finite() {
                        found = Some(Walker {
                            state,
                            loglik,
                            logprior,
                        });
                        break;
                    }
                }
                row.push(found.ok_or_else(|| {
                    Error::Config(format!(
                        "walker (temperature {kt}, slot {slot}) stuck at -inf posterior after initialization"
                    ))
                })?);
            }
            walkers.push(row);
        }
        let stats = MoveStats::new(k);
        Ok(Self {
            target,
            prior_in,
            prior_out,
            config,
            walkers,
            rngs,
            controller,
            stats,
            iteration: 0,
            records: Vec::new(),
            snapshots: Vec::new(),
            bc_mean_in: vec![0.0; prior_in.map_or(0, |p| p.n())],
            bc_mean_out: vec![0.0; prior_out.map_or(0, |p| p.n())],
            bc_mean_count: 0,
        })
    }

    /// Restore a sampler from a checkpoint taken with the same target,
    /// priors, and configuration.
    pub fn restore(
        target: &'a T,
        prior_in: Option<&'a LogOuPrior>,
        prior_out: Option<&'a LogOuPrior>,
        config: FesConfig,
        ckpt: SamplerCheckpoint,
    ) -> Result<Self> {
        config.validate(
            prior_in.map_or(0, |p| p.m_trunc()),
            prior_out.map_or(0, |p| p.m_trunc()),
        )?;
        if ckpt.walkers.len() != config.betas.len()
            || ckpt.walkers.iter().any(|row| row.len() != config.n_walkers)
        {
            return Err(Error::Config("checkpoint shape does not match configuration".into()));
        }
        let seed = config.seed;
        Ok(Self {
            target,
            prior_in,
            prior_out,
            config,
            walkers: ckpt.walkers,
            rngs: ckpt
                .rngs
                .iter()
                .map(|row| row.iter().map(|s| s.restore(seed)).collect())
                .collect(),
            controller: ckpt.controller.restore(seed),
            stats: ckpt.stats,
            iteration: ckpt.iteration,
            records: Vec::new(),
            snapshots: Vec::new(),
            bc_mean_in: ckpt.bc_mean_in,
            bc_mean_out: ckpt.bc_mean_out,
            bc_mean_count: ckpt.bc_mean_count,
        })
    }

    pub fn checkpoint(&self) -> SamplerCheckpoint {
        SamplerCheckpoint {
            iteration: self.iteration,
            walkers: self.walkers.clone(),
            controller: RngState::capture(&self.controller),
            rngs: self
                .rngs
                .iter()
                .map(|row| row.iter().map(RngState::capture).collect())
                .collect(),
            stats: self.stats.clone(),
            bc_mean_in: self.bc_mean_in.clone(),
            bc_mean_out: self.bc_mean_out.clone(),
            bc_mean_count: self.bc_mean_count,
        }
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn walkers(&self) -> &[Vec<Walker>] {
        &self.walkers
    }

    pub fn stats(&self) -> &MoveStats {
        &self.stats
    }

    /// Drain chain records accumulated since the last call.
    pub fn take_records(&mut self) -> Vec<ChainRecord> {
        std::mem::take(&mut self.records)
    }

    /// Drain BC snapshots accumulated since the last call.
    pub fn take_snapshots(&mut self) -> Vec<BcSnapshot> {
        std::mem::take(&mut self.snapshots)
    }

    fn projectors(&self) -> Projectors<'a> {
        Projectors {
            inlet: self.prior_in,
            outlet: self.prior_out,
        }
    }

    /// Advance `n` iterations (clipped to the configured total).
    pub fn run(&mut self, n: usize) {
        let end = (self.iteration + n).min(self.config.n_iters);
        while self.iteration < end {
            self.step_once();
        }
    }

    pub fn run_to_completion(&mut self) {
        let remaining = self.config.n_iters.saturating_sub(self.iteration);
        self.run(remaining);
    }

    fn step_once(&mut self) {
        let u: f64 = self.controller.gen();
        let p = self.config.move_probs;
        if u < p[0] {
            self.aies_block();
        } else if u < p[0] + p[1] {
            self.pcn_block(BcSide::Inlet);
        } else if u < p[0] + p[1] + p[2] {
            self.pcn_block(BcSide::Outlet);
        } else {
            self.swap_block();
        }
        self.iteration += 1;
        self.observe();
    }

    fn aies_block(&mut self) {
        let projs = self.projectors();
        for kt in 0..self.config.betas.len() {
            let settings = AiesSettings {
                a: self.config.stretch_a,
                beta_temp: self.config.betas[kt],
            };
            aies_sweep(
                &mut self.walkers[kt],
                &mut self.rngs[kt],
                self.target,
                &projs,
                settings,
                &mut self.stats.aies[kt],
                self.config.parallel,
            );
        }
    }

    fn pcn_block(&mut self, side: BcSide) {
        let prior = match side {
            BcSide::Inlet => self.prior_in,
            BcSide::Outlet => self.prior_out,
        };
        let Some(prior) = prior else { return };
        let steps = match side {
            BcSide::Inlet => &self.config.pcn_step_in,
            BcSide::Outlet => &self.config.pcn_step_out,
        };
        let k = self.config.betas.len();
        let l = self.config.n_walkers;
        // Draw all proposal randomness serially from the per-walker streams,
        // then evaluate likelihoods (optionally in parallel), then apply:
        // identical results in both execution modes.
        let mut proposals: Vec<(usize, usize, WalkerState, f64)> = Vec::with_capacity(k * l);
        for kt in 0..k {
            for i in 0..l {
                let rng = &mut self.rngs[kt][i];
                let xi = prior.sample_x(rng);
                let u = rng.gen::<f64>();
                let mut state = self.walkers[kt][i].state.clone();
                match side {
                    BcSide::Inlet => {
                        state.x_in = pcn_proposal(&self.walkers[kt][i].state.x_in, &xi, steps[kt], prior)
                    }
                    BcSide::Outlet => {
                        state.x_out =
                            pcn_proposal(&self.walkers[kt][i].state.x_out, &xi, steps[kt], prior)
                    }
                }
                proposals.push((kt, i, state, u));
            }
        }
        let target = self.target;
        let likelihoods: Vec<f64> = if self.config.parallel {
            proposals
                .par_iter()
                .map(|(_, _, state, _)| target.log_likelihood(state))
                .collect()
        } else {
            proposals
                .iter()
                .map(|(_, _, state, _)| target.log_likelihood(state))
                .collect()
        };
        for ((kt, i, state, u), loglik) in proposals.into_iter().zip(likelihoods) {
            let beta = self.config.betas[kt];
            let walker = &mut self.walkers[kt][i];
            let d = beta * (loglik - walker.loglik);
            let accepted = !loglik.is_nan() && (d >= 0.0 || u.ln() < d);
            let counter = match side {
                BcSide::Inlet => &mut self.stats.pcn_in[kt],
                BcSide::Outlet => &mut self.stats.pcn_out[kt],
            };
            counter.record(accepted);
            if accepted {
                walker.logprior = target.log_prior(&state);
                walker.state = state;
                walker.loglik = loglik;
            }
        }
    }

    fn swap_block(&mut self) {
        let k = self.config.betas.len();
        if k < 2 {
            return;
        }
        let pair = self.controller.gen_range(0..k - 1);
        let (hot, cold) = (pair + 1, pair);
        for i in 0..self.config.n_walkers {
            let u = self.controller.gen::<f64>();
            let accept = pt_swap_accept(
                self.config.betas[cold],
                self.config.betas[hot],
                self.walkers[cold][i].loglik,
                self.walkers[hot][i].loglik,
                u,
            );
            self.stats.swap[pair].record(accept);
            if accept {
                let tmp = self.walkers[cold][i].clone();
                self.walkers[cold][i] = self.walkers[hot][i].clone();
                self.walkers[hot][i] = tmp;
            }
        }
    }

    fn observe(&mut self) {
        let t = self.iteration;
        if t % self.config.thin == 0 {
            for (kt, row) in self.walkers.iter().enumerate() {
                for (i, w) in row.iter().enumerate() {
                    self.records.push(ChainRecord {
                        iteration: t,
                        temp: kt,
                        walker: i,
                        fd: w.state.fd.clone(),
                        loglik: w.loglik,
                    });
                }
            }
            if t as f64 > self.config.burn_fraction * self.config.n_iters as f64 {
                for w in &self.walkers[0] {
                    if let Some(p) = self.prior_in {
                        for (acc, d) in self.bc_mean_in.iter_mut().zip(p.density_from_x(&w.state.x_in))
                        {
                            *acc += d;
                        }
                    }
                    if let Some(p) = self.prior_out {
                        for (acc, d) in
                            self.bc_mean_out.iter_mut().zip(p.density_from_x(&w.state.x_out))
                        {
                            *acc += d;
                        }
                    }
                    self.bc_mean_count += 1;
                }
            }
        }
        if t % self.config.snapshot_every == 0 {
            for (i, w) in self.walkers[0].iter().enumerate() {
                self.snapshots.push(BcSnapshot {
                    iteration: t,
                    walker: i,
                    x_in: w.state.x_in.clone(),
                    x_out: w.state.x_out.clone(),
                });
            }
        }
        #[cfg(debug_assertions)]
        if t % 512 == 0 {
            let w = &self.walkers[0][0];
            let (ll, lp) = self.target.evaluate(&w.state);
            debug_assert!(
                (ll == w.loglik || (ll.is_infinite() && w.loglik.is_infinite()))
                    && (lp == w.logprior || (lp.is_infinite() && w.logprior.is_infinite())),
                "walker cache drifted: loglik {} vs {}, logprior {} vs {}",
                ll,
                w.loglik,
                lp,
                w.logprior
            );
        }
    }

    /// Finish and collect outputs.
    pub fn finish(self) -> FesRun {
        let count = self.bc_mean_count as f64;
        let mean = |acc: Vec<f64>| {
            if count > 0.0 && !acc.is_empty() {
                Some(acc.into_iter().map(|v| v / count).collect())
            } else {
                None
            }
        };
        FesRun {
            records: self.records,
            snapshots: self.snapshots,
            stats: self.stats,
            betas: self.config.betas.clone(),
            iterations: self.iteration,
            bc_mean_in: mean(self.bc_mean_in),
            bc_mean_out: mean(self.bc_mean_out),
            final_walkers: self.walkers,
        }
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Chain CSV path for one temperature/walker pair.
pub fn chain_csv_path(dir: &Path, temp: usize, walker: usize) -> std::path::PathBuf {
    dir.join(format!("chain_t{temp}_w{walker}.csv"))
}

/// Append chain records to their per-temperature-per-walker CSVs, creating
/// headers on first write. `fd_names` labels the diagram columns.
pub fn append_chain_records(dir: &Path, records: &[ChainRecord], fd_names: &[&str]) -> Result<()> {
    use std::collections::BTreeMap;
    let mut grouped: BTreeMap<(usize, usize), Vec<&ChainRecord>> = BTreeMap::new();
    for r in records {
        grouped.entry((r.temp, r.walker)).or_default().push(r);
    }
    for ((temp, walker), rows) in grouped {
        let path = chain_csv_path(dir, temp, walker);
        let new = !path.exists();
        let mut file = std::fs::OpenOptions::new().create(true).append(true).open(&path)?;
        if new {
            write!(file, "iteration")?;
            for name in fd_names {
                write!(file, ",{name}")?;
            }
            writeln!(file, ",loglik")?;
        }
        for r in rows {
            write!(file, "{}", r.iteration)?;
            for v in &r.fd {
                write!(file, ",{v}")?;
            }
            writeln!(file, ",{}", r.loglik)?;
        }
    }
    Ok(())
}

/// Append cold-ensemble BC snapshots to `bc_in.csv` / `bc_out.csv`:
/// one row per (iteration, walker), coordinates as columns.
pub fn append_bc_snapshots(dir: &Path, snapshots: &[BcSnapshot]) -> Result<()> {
    for (name, pick) in [
        ("bc_in.csv", true),
        ("bc_out.csv", false),
    ] {
        let path = dir.join(name);
        let mut file = std::fs::OpenOptions::new().create(true).append(true).open(&path)?;
        for s in snapshots {
            let x = if pick { &s.x_in } else { &s.x_out };
            if x.is_empty() {
                continue;
            }
            write!(file, "{},{}", s.iteration, s.walker)?;
            for v in x {
                write!(file, ",{v}")?;
            }
            writeln!(file)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::OuParams;
    use approx::assert_relative_eq;

    struct FlatLik;
    impl FesTarget for FlatLik {
        fn log_likelihood(&self, _: &WalkerState) -> f64 {
            0.0
        }
        fn log_prior(&self, state: &WalkerState) -> f64 {
            // Gaussian prior on the BC blocks only
            -0.5 * state.x_in.iter().map(|v| v * v).sum::<f64>()
        }
    }

    fn toy_config(n_iters: usize) -> FesConfig {
        FesConfig {
            n_walkers: 8,
            n_iters,
            thin: 10,
            snapshot_every: 50,
            move_probs: [0.5, 0.25, 0.0, 0.25],
            pcn_step_in: vec![0.4, 0.5, 0.6, 0.7],
            pcn_step_out: vec![0.4, 0.5, 0.6, 0.7],
            ..FesConfig::default()
        }
    }

    fn toy_prior() -> LogOuPrior {
        LogOuPrior::build(OuParams::new(0.5, 1.0, 1.0).unwrap(), vec![0.0; 20], 4).unwrap()
    }

    #[test]
    fn zero_iterations_returns_initial_ensemble() {
        let prior = toy_prior();
        let config = FesConfig {
            n_iters: 0,
            ..toy_config(0)
        };
        let init = prior_box_init(FdPriorBox::default(), Some(&prior), None, 0.1);
        let mut sampler =
            FesSampler::new(&FlatLik, Some(&prior), None, config, init).unwrap();
        let before = sampler.walkers().to_vec();
        sampler.run_to_completion();
        assert_eq!(sampler.iteration(), 0);
        assert_eq!(sampler.walkers(), &before[..]);
    }

    #[test]
    fn fixed_seed_reproduces_bit_identical_chains() {
        let prior = toy_prior();
        let run = |seed: u64| {
            let config = FesConfig {
                seed,
                ..toy_config(400)
            };
            let init = prior_box_init(FdPriorBox::default(), Some(&prior), None, 0.1);
            let mut sampler =
                FesSampler::new(&FlatLik, Some(&prior), None, config, init).unwrap();
            sampler.run_to_completion();
            sampler.finish()
        };
        let a = run(7);
        let b = run(7);
        let c = run(8);
        assert_eq!(a.records, b.records);
        assert_eq!(a.snapshots, b.snapshots);
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn checkpoint_resume_matches_uninterrupted_run() {
        let prior = toy_prior();
        let config = toy_config(300);
        let init = prior_box_init(FdPriorBox::default(), Some(&prior), None, 0.1);
        let mut full = FesSampler::new(&FlatLik, Some(&prior), None, config.clone(), init).unwrap();
        full.run_to_completion();
        let full_run = full.finish();

        let init = prior_box_init(FdPriorBox::default(), Some(&prior), None, 0.1);
        let mut part = FesSampler::new(&FlatLik, Some(&prior), None, config.clone(), init).unwrap();
        part.run(120);
        let mut records = part.take_records();
        let ckpt = part.checkpoint();
        drop(part);
        let mut resumed =
            FesSampler::restore(&FlatLik, Some(&prior), None, config, ckpt).unwrap();
        resumed.run_to_completion();
        assert_eq!(resumed.iteration(), 300);
        let resumed_run = resumed.finish();
        records.extend(resumed_run.records);
        assert_eq!(records, full_run.records);
        assert_eq!(resumed_run.final_walkers, full_run.final_walkers);
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let prior = toy_prior();
        let bad_probs = FesConfig {
            move_probs: [0.5, 0.5, 0.5, 0.5],
            ..toy_config(10)
        };
        let init = prior_box_init(FdPriorBox::default(), Some(&prior), None, 0.1);
        assert!(FesSampler::new(&FlatLik, Some(&prior), None, bad_probs, init).is_err());

        let bad_betas = FesConfig {
            betas: vec![0.9, 0.5],
            pcn_step_in: vec![0.1, 0.1],
            pcn_step_out: vec![0.1, 0.1],
            ..toy_config(10)
        };
        let init = prior_box_init(FdPriorBox::default(), Some(&prior), None, 0.1);
        assert!(FesSampler::new(&FlatLik, Some(&prior), None, bad_betas, init).is_err());

        let too_few_walkers = FesConfig {
            n_walkers: 3,
            ..toy_config(10)
        };
        let init = prior_box_init(FdPriorBox::default(), Some(&prior), None, 0.1);
        assert!(FesSampler::new(&FlatLik, Some(&prior), None, too_few_walkers, init).is_err());
    }

    #[test]
    fn single_temperature_fes_keeps_sane_acceptance() {
        // swap probability 0 with one temperature: plain FES
        let prior = toy_prior();
        let config = FesConfig {
            betas: vec![1.0],
            pcn_step_in: vec![0.5],
            pcn_step_out: vec![0.5],
            move_probs: [0.5, 0.5, 0.0, 0.0],
            n_walkers: 8,
            n_iters: 4000,
            thin: 10,
            snapshot_every: 1000,
            ..FesConfig::default()
        };
        let init = prior_box_init(FdPriorBox::default(), Some(&prior), None, 0.1);
        let mut sampler = FesSampler::new(&FlatLik, Some(&prior), None, config, init).unwrap();
        sampler.run_to_completion();
        let run = sampler.finish();
        // flat likelihood: pCN accepts everything
        assert_eq!(run.stats.pcn_in[0].rate(), 1.0);
        assert!(run.stats.aies[0].rate() > 0.1);
    }

    #[test]
    fn chain_csv_append_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![
            ChainRecord {
                iteration: 10,
                temp: 0,
                walker: 1,
                fd: vec![1.0, 2.0],
                loglik: -3.5,
            },
            ChainRecord {
                iteration: 20,
                temp: 0,
                walker: 1,
                fd: vec![1.5, 2.5],
                loglik: -3.0,
            },
        ];
        append_chain_records(dir.path(), &records[..1], &["a", "b"]).unwrap();
        append_chain_records(dir.path(), &records[1..], &["a", "b"]).unwrap();
        let text = std::fs::read_to_string(chain_csv_path(dir.path(), 0, 1)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "iteration,a,b,loglik");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("10,1,2,"));
    }

    #[test]
    fn flat_likelihood_bc_covariance_converges_to_prior() {
        // FES (stretch + pCN) with a flat likelihood samples the BC prior:
        // empirical covariance of the coordinates approaches C
        struct PriorOnly<'p> {
            prior: &'p LogOuPrior,
        }
        impl FesTarget for PriorOnly<'_> {
            fn log_likelihood(&self, _: &WalkerState) -> f64 {
                0.0
            }
            fn log_prior(&self, s: &WalkerState) -> f64 {
                self.prior.log_density_x(&s.x_in)
            }
        }
        let prior = LogOuPrior::build(
            OuParams::new(0.22, 0.256, 0.5).unwrap(),
            vec![0.0; 30],
            4,
        )
        .unwrap();
        let target = PriorOnly { prior: &prior };
        let config = FesConfig {
            n_walkers: 10,
            betas: vec![1.0],
            pcn_step_in: vec![0.7],
            pcn_step_out: vec![0.7],
            move_probs: [0.4, 0.6, 0.0, 0.0],
            n_iters: 30_000,
            thin: 5,
            snapshot_every: 100_000,
            seed: 42,
            ..FesConfig::default()
        };
        let init = prior_box_init(FdPriorBox::default(), Some(&prior), None, 1.0);
        let mut sampler = FesSampler::new(&target, Some(&prior), None, config, init).unwrap();
        sampler.run_to_completion();
        let n = prior.n();
        let mut acc = vec![0.0; n * n];
        let mut count = 0u64;
        let records_per_thin = sampler.walkers()[0].len();
        let _ = records_per_thin;
        // accumulate from the final ensemble states along the run
        // (re-run manually for covariance collection)
        let init = prior_box_init(FdPriorBox::default(), Some(&prior), None, 1.0);
        let config2 = FesConfig {
            n_iters: 30_000,
            ..sampler.config.clone()
        };
        let mut s2 = FesSampler::new(&target, Some(&prior), None, config2, init).unwrap();
        for _ in 0..6000 {
            s2.run(5);
            if s2.iteration() > 6000 {
                for w in &s2.walkers()[0] {
                    for i in 0..n {
                        for j in 0..n {
                            acc[i * n + j] += w.state.x_in[i] * w.state.x_in[j];
                        }
                    }
                    count += 1;
                }
            }
        }
        let c = crate::prior::ou_covariance(&prior.ou, n).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..n {
            for j in 0..n {
                let emp = acc[i * n + j] / count as f64;
                num += (emp - c[(i, j)]) * (emp - c[(i, j)]);
                den += c[(i, j)] * c[(i, j)];
            }
        }
        let rel = (num / den).sqrt();
        assert!(rel < 0.15, "coordinate covariance error {rel}");
        assert_relative_eq!(s2.stats().pcn_in[0].rate(), 1.0, epsilon = 1e-12);
    }
}
