//! Log-OU Gaussian-process prior over boundary conditions.
//!
//! The logarithm of a boundary-condition density series, centered by a fitted
//! log-mean curve `mu`, is modeled as a stationary Ornstein-Uhlenbeck process
//! `dX_t = -beta X_t dt + sigma dW_t`. On a uniform grid the process is an
//! exact AR(1): lag-one coefficient `exp(-beta dt)`, stationary variance
//! `sigma^2 / (2 beta)`, innovation variance `sigma^2 (1 - exp(-2 beta dt)) /
//! (2 beta)`. Exactness makes the 1-minute fitting grid and the fine inference
//! grid consistent by construction.
//!
//! Sampler state stores a boundary condition as its native OU coordinate
//! vector `x` (mean-zero Gaussian with covariance `C`); the density series is
//! the deterministic map `exp(mu + x)`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::Read;

use crate::error::{Error, Result};

/// Hyperparameters of the OU process on a uniform grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuParams {
    /// Mean-reversion rate (1/min).
    pub beta: f64,
    /// Diffusivity (per sqrt-min).
    pub sigma: f64,
    /// Grid spacing (min): 1 for fitting, the BC spacing for inference.
    pub dt: f64,
}

impl OuParams {
    pub fn new(beta: f64, sigma: f64, dt: f64) -> Result<Self> {
        if !(beta > 0.0 && sigma > 0.0 && dt > 0.0) {
            return Err(Error::Config(format!(
                "OU parameters must be positive: beta={beta}, sigma={sigma}, dt={dt}"
            )));
        }
        Ok(Self { beta, sigma, dt })
    }

    /// Stationary variance `sigma^2 / (2 beta)`.
    pub fn stationary_variance(&self) -> f64 {
        self.sigma * self.sigma / (2.0 * self.beta)
    }

    /// Lag-one autocorrelation `exp(-beta dt)`.
    pub fn lag_one(&self) -> f64 {
        (-self.beta * self.dt).exp()
    }

    /// Innovation variance of the exact AR(1) discretization.
    pub fn innovation_variance(&self) -> f64 {
        let phi = self.lag_one();
        self.stationary_variance() * (1.0 - phi * phi)
    }

    /// Log-determinant of the `n x n` covariance matrix, in closed form from
    /// the AR(1) factorization.
    pub fn log_det_cov(&self, n: usize) -> f64 {
        self.stationary_variance().ln() + (n as f64 - 1.0) * self.innovation_variance().ln()
    }

    /// Gaussian quadratic form `x' C^{-1} x` in O(n) via the AR(1) precision.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let phi = self.lag_one();
        let v0 = self.stationary_variance();
        let vi = self.innovation_variance();
        let mut q = x[0] * x[0] / v0;
        for k in 1..x.len() {
            let r = x[k] - phi * x[k - 1];
            q += r * r / vi;
        }
        q
    }
}

/// Dense stationary OU covariance `C[s,t] = sigma^2/(2 beta) exp(-beta dt |s-t|)`.
pub fn ou_covariance(ou: &OuParams, n: usize) -> Result<DMatrix<f64>> {
    if n < 2 {
        return Err(Error::Config(format!("covariance needs n >= 2, got {n}")));
    }
    let v0 = ou.stationary_variance();
    let phi = ou.lag_one();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        v0 * f64::powi(phi, (i as i32 - j as i32).abs())
    }))
}

/// Top-`m` orthonormal eigenvectors of a symmetric positive-definite matrix,
/// eigenvalues in non-increasing order. Sign convention: the first component
/// of each eigenvector that is nonzero (relative to its largest entry) is
/// positive.
pub fn kl_decompose(c: &DMatrix<f64>, m: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let n = c.nrows();
    if c.ncols() != n {
        return Err(Error::Config("covariance must be square".into()));
    }
    if m == 0 || m > n {
        return Err(Error::Config(format!("truncation {m} outside 1..={n}")));
    }
    let eig = c
        .clone()
        .try_symmetric_eigen(1e-13, 10_000)
        .ok_or_else(|| Error::Numerical("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("non-finite eigenvalue")
    });
    let mut vecs = DMatrix::zeros(n, m);
    let mut vals = Vec::with_capacity(m);
    for (col, &idx) in order.iter().take(m).enumerate() {
        let lambda = eig.eigenvalues[idx];
        if !(lambda > 0.0) {
            return Err(Error::Numerical(format!(
                "eigenvalue {lambda} of an SPD matrix is not positive"
            )));
        }
        vals.push(lambda);
        let v = eig.eigenvectors.column(idx);
        let scale = v.amax();
        let flip = v
            .iter()
            .find(|&&c| c.abs() > 1e-12 * scale)
            .map_or(1.0, |&c| c.signum());
        for i in 0..n {
            vecs[(i, col)] = flip * v[i];
        }
    }
    Ok((vecs, vals))
}

/// A boundary condition held as native OU coordinates plus its cached density
/// series `exp(mu + x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCondition {
    /// Centered log-density coordinates, `N(0, C)` under the prior.
    pub x: Vec<f64>,
    /// Density series (veh/km), strictly positive by construction.
    pub density: Vec<f64>,
}

/// Log-OU prior for one boundary: log-mean curve, OU hyperparameters, and the
/// truncated Karhunen-Loeve basis of the covariance.
#[derive(Debug, Clone)]
pub struct LogOuPrior {
    pub ou: OuParams,
    /// Log-mean curve on the BC time grid.
    pub mu: Vec<f64>,
    /// First-`m` eigenvector matrix `J` (`n x m`, orthonormal columns).
    pub eigvecs: DMatrix<f64>,
    /// Corresponding eigenvalues, non-increasing.
    pub eigvals: Vec<f64>,
    log_det_cov: f64,
}

impl LogOuPrior {
    pub fn build(ou: OuParams, mu: Vec<f64>, m_trunc: usize) -> Result<Self> {
        let n = mu.len();
        let c = ou_covariance(&ou, n)?;
        let (eigvecs, eigvals) = kl_decompose(&c, m_trunc)?;
        Ok(Self {
            log_det_cov: ou.log_det_cov(n),
            ou,
            mu,
            eigvecs,
            eigvals,
        })
    }

    /// Build with a precomputed KL basis (the basis depends only on
    /// `(beta, sigma, dt, n)`, so priors sharing those can share it).
    pub fn with_basis(
        ou: OuParams,
        mu: Vec<f64>,
        eigvecs: DMatrix<f64>,
        eigvals: Vec<f64>,
    ) -> Result<Self> {
        if eigvecs.nrows() != mu.len() || eigvecs.ncols() != eigvals.len() {
            return Err(Error::Config("KL basis dimensions do not match mu".into()));
        }
        Ok(Self {
            log_det_cov: ou.log_det_cov(mu.len()),
            ou,
            mu,
            eigvecs,
            eigvals,
        })
    }

    pub fn n(&self) -> usize {
        self.mu.len()
    }

    pub fn m_trunc(&self) -> usize {
        self.eigvals.len()
    }

    /// Deterministic map from standard-normal draws to an OU path.
    pub fn x_from_normals(&self, z: &[f64]) -> Vec<f64> {
        let phi = self.ou.lag_one();
        let s0 = self.ou.stationary_variance().sqrt();
        let si = self.ou.innovation_variance().sqrt();
        let mut x = vec![0.0; self.n()];
        x[0] = s0 * z[0];
        for k in 1..x.len() {
            x[k] = phi * x[k - 1] + si * z[k];
        }
        x
    }

    /// Draw `x ~ N(0, C)` by the exact AR(1) recursion with stationary start.
    pub fn sample_x<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.n()).map(|_| rng.sample(StandardNormal)).collect();
        self.x_from_normals(&z)
    }

    /// Density series for coordinates `x`.
    pub fn density_from_x(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mu).map(|(xi, mi)| (mi + xi).exp()).collect()
    }

    pub fn bc_from_x(&self, x: Vec<f64>) -> BoundaryCondition {
        let density = self.density_from_x(&x);
        BoundaryCondition { x, density }
    }

    /// Draw a boundary condition from the prior.
    pub fn sample_bc<R: Rng + ?Sized>(&self, rng: &mut R) -> BoundaryCondition {
        let x = self.sample_x(rng);
        self.bc_from_x(x)
    }

    /// Normalized Gaussian log-density of `x` under `N(0, C)`.
    pub fn log_density_x(&self, x: &[f64]) -> f64 {
        let n = self.n() as f64;
        -0.5 * (self.ou.quadratic_form(x)
            + self.log_det_cov
            + n * (2.0 * std::f64::consts::PI).ln())
    }

    /// KL coordinates `J' x` of the low-wavenumber block.
    pub fn kl_coords(&self, x: &[f64]) -> Vec<f64> {
        let m = self.m_trunc();
        let mut out = vec![0.0; m];
        for (j, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (i, xi) in x.iter().enumerate() {
                acc += self.eigvecs[(i, j)] * xi;
            }
            *o = acc;
        }
        out
    }

    /// Low-wavenumber projection `P x = J J' x`.
    pub fn project_low(&self, x: &[f64]) -> Vec<f64> {
        let coords = self.kl_coords(x);
        let mut out = vec![0.0; x.len()];
        for (j, &c) in coords.iter().enumerate() {
            for (i, o) in out.iter_mut().enumerate() {
                *o += self.eigvecs[(i, j)] * c;
            }
        }
        out
    }

    /// High-wavenumber complement `Q x = (I - J J') x`.
    pub fn project_high(&self, x: &[f64]) -> Vec<f64> {
        let p = self.project_low(x);
        x.iter().zip(p).map(|(xi, pi)| xi - pi).collect()
    }
}

/// Pointwise mean of the log-curves followed by a centered moving average
/// whose window shrinks at the boundaries (so constants are preserved).
pub fn fit_log_mean(curves: &[Vec<f64>], window: usize) -> Result<Vec<f64>> {
    if curves.is_empty() {
        return Err(Error::Data("need at least one curve to fit the mean".into()));
    }
    let n = curves[0].len();
    if n == 0 || curves.iter().any(|c| c.len() != n) {
        return Err(Error::Data("curves must share a common nonempty grid".into()));
    }
    let mut mean = vec![0.0; n];
    for curve in curves {
        for (m, &v) in mean.iter_mut().zip(curve) {
            if !(v > 0.0) {
                return Err(Error::Data(format!("non-positive density {v} in history curve")));
            }
            *m += v.ln();
        }
    }
    for m in &mut mean {
        *m /= curves.len() as f64;
    }
    let half = window.max(1) / 2;
    let mut smoothed = vec![0.0; n];
    for i in 0..n {
        let lo = i.saturating_sub(half);
        let hi = (i + half).min(n - 1);
        smoothed[i] = mean[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64;
    }
    Ok(smoothed)
}

/// Result of the OU hyperparameter fit.
#[derive(Debug, Clone)]
pub struct OuFit {
    /// Random-walk Metropolis chain over `(beta, sigma)`.
    pub chain: Vec<[f64; 2]>,
    /// Posterior mean after discarding the first half of the chain.
    pub posterior_mean: (f64, f64),
    pub acceptance_rate: f64,
}

/// Gaussian log-likelihood of centered curves under the OU precision:
/// `(N/2) log|precision| - 1/2 sum_i x_i' precision x_i`.
pub fn ou_log_likelihood(curves: &[Vec<f64>], beta: f64, sigma: f64, dt: f64) -> f64 {
    let ou = OuParams { beta, sigma, dt };
    let n = curves[0].len();
    let logdet_prec = -ou.log_det_cov(n);
    let mut ll = 0.5 * curves.len() as f64 * logdet_prec;
    for x in curves {
        ll -= 0.5 * ou.quadratic_form(x);
    }
    ll
}

/// Fit `(beta, sigma)` to centered log-density curves on a common grid by
/// random-walk Metropolis with a flat positive prior.
///
/// The chain starts from AR(1) moment estimates; proposals leaving the
/// positive quadrant (or `sigma < 1e-6`) are rejected at the prior boundary.
pub fn fit_ou<R: Rng + ?Sized>(
    curves: &[Vec<f64>],
    dt: f64,
    n_iters: usize,
    rng: &mut R,
) -> Result<OuFit> {
    if curves.len() < 2 {
        return Err(Error::Data("OU fit needs at least 2 curves".into()));
    }
    let n = curves[0].len();
    if n < 3 || curves.iter().any(|c| c.len() != n) {
        return Err(Error::Data("curves must share a common grid of length >= 3".into()));
    }

    // Moment-based start: lag-one autocorrelation and stationary variance.
    let mut var = 0.0;
    let mut cov1 = 0.0;
    let mut count = 0usize;
    for x in curves {
        for k in 0..n {
            var += x[k] * x[k];
            if k + 1 < n {
                cov1 += x[k] * x[k + 1];
            }
            count += 1;
        }
    }
    var /= count as f64;
    cov1 /= (count - curves.len()) as f64;
    let phi = if var > 0.0 {
        (cov1 / var).clamp(1e-6, 1.0 - 1e-6)
    } else {
        0.5
    };
    let beta0 = -phi.ln() / dt;
    let sigma0 = (2.0 * beta0 * var.max(1e-12)).sqrt().max(1e-5);

    let mut state = [beta0, sigma0];
    let mut ll = ou_log_likelihood(curves, state[0], state[1], dt);
    let step = [0.05 * beta0, 0.02 * sigma0];
    let mut chain = Vec::with_capacity(n_iters);
    let mut accepted = 0usize;
    for _ in 0..n_iters {
        let prop = [
            state[0] + step[0] * rng.sample::<f64, _>(StandardNormal),
            state[1] + step[1] * rng.sample::<f64, _>(StandardNormal),
        ];
        if prop[0] > 0.0 && prop[1] >= 1e-6 {
            let ll_prop = ou_log_likelihood(curves, prop[0], prop[1], dt);
            if ll_prop - ll >= rng.gen::<f64>().ln() {
                state = prop;
                ll = ll_prop;
                accepted += 1;
            }
        }
        chain.push(state);
    }
    let burn = chain.len() / 2;
    let kept = &chain[burn..];
    let mean_beta = kept.iter().map(|s| s[0]).sum::<f64>() / kept.len() as f64;
    let mean_sigma = kept.iter().map(|s| s[1]).sum::<f64>() / kept.len() as f64;
    Ok(OuFit {
        posterior_mean: (mean_beta, mean_sigma),
        acceptance_rate: accepted as f64 / n_iters as f64,
        chain,
    })
}

/// Historical-curve CSV: one column per day (header row of day labels), one
/// row per minute.
pub fn load_history_csv<R: Read>(reader: R) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let n_days = rdr.headers()?.len();
    if n_days == 0 {
        return Err(Error::Data("history CSV has no columns".into()));
    }
    let mut curves = vec![Vec::new(); n_days];
    for record in rdr.records() {
        let record = record?;
        if record.len() != n_days {
            return Err(Error::Data("ragged history CSV".into()));
        }
        for (day, field) in record.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::Data(format!("bad density value {field:?}")))?;
            curves[day].push(v);
        }
    }
    if curves[0].is_empty() {
        return Err(Error::Data("history CSV has no rows".into()));
    }
    Ok(curves)
}

/// JSON export of a fitted prior.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriorExport {
    pub mu: Vec<f64>,
    pub beta: f64,
    pub sigma: f64,
    pub m: usize,
    pub eigenvalues: Vec<f64>,
}

impl PriorExport {
    pub fn from_prior(prior: &LogOuPrior) -> Self {
        Self {
            mu: prior.mu.clone(),
            beta: prior.ou.beta,
            sigma: prior.ou.sigma,
            m: prior.m_trunc(),
            eigenvalues: prior.eigvals.clone(),
        }
    }
}
