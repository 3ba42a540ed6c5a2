//! Statistical model: PDE observation operator, Poisson count likelihood,
//! direct fundamental-diagram fit, and the tempered posterior.
//!
//! The observation operator solves the conservation law under the proposed
//! fundamental diagram and boundary conditions, maps density to flow through
//! the same diagram, and picks out the flow at the cell/time of each detector
//! observation. The first `burn_in` observation times are excluded from the
//! likelihood so the (unknown) initial condition cannot influence it; the
//! initial state is a constant free-flow profile at the inlet boundary's
//! first value.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::fd::{DelCastilloParams, Fd};
use crate::prior::{BoundaryCondition, LogOuPrior};
use crate::solver::{solve, Grid, Scheme};

/// Numerical floor (veh/min) applied to predicted flows before taking logs:
/// benign underflow must not produce `-inf`, while genuinely zero-flow
/// predictions stay heavily penalized.
pub const FLOW_FLOOR: f64 = 1e-3;

/// Detector geometry and integer flow counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    /// Detector positions (km).
    pub detector_positions: Vec<f64>,
    /// Observation times (min), strictly increasing.
    pub obs_times: Vec<f64>,
    /// Counts (veh/min summed over lanes), shape `(detector, time)`.
    pub counts: Array2<u64>,
    /// Number of initial observation times excluded from the likelihood.
    pub burn_in: usize,
}

impl ObservationSet {
    pub fn new(
        detector_positions: Vec<f64>,
        obs_times: Vec<f64>,
        counts: Array2<u64>,
        burn_in: usize,
    ) -> Result<Self> {
        if counts.nrows() != detector_positions.len() || counts.ncols() != obs_times.len() {
            return Err(Error::Data(format!(
                "count matrix {}x{} does not match {} detectors x {} times",
                counts.nrows(),
                counts.ncols(),
                detector_positions.len(),
                obs_times.len()
            )));
        }
        if obs_times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Data("observation times must be strictly increasing".into()));
        }
        if burn_in > obs_times.len() {
            return Err(Error::Data(format!(
                "burn_in {} exceeds {} observation times",
                burn_in,
                obs_times.len()
            )));
        }
        Ok(Self {
            detector_positions,
            obs_times,
            counts,
            burn_in,
        })
    }

    /// Default burn-in: the time for a free-flow wave at 100 km/h to cross
    /// the road, rounded up to whole observation minutes.
    pub fn default_burn_in(road_length_km: f64) -> usize {
        (road_length_km / (100.0 / 60.0)).ceil() as usize
    }

    /// CSV loader. Requires columns `detector_km` (or `position_km`),
    /// `minute`, and `count`; extra columns are ignored.
    pub fn from_csv<R: Read>(reader: R, burn_in: usize) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let find = |names: &[&str]| {
            headers
                .iter()
                .position(|h| names.contains(&h.trim()))
        };
        let pos_col = find(&["detector_km", "position_km"])
            .ok_or_else(|| Error::Data("missing detector_km/position_km column".into()))?;
        let min_col = find(&["minute"]).ok_or_else(|| Error::Data("missing minute column".into()))?;
        let cnt_col = find(&["count"]).ok_or_else(|| Error::Data("missing count column".into()))?;

        let mut triples: Vec<(f64, f64, u64)> = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let parse_f = |i: usize| -> Result<f64> {
                record[i]
                    .trim()
                    .parse()
                    .map_err(|_| Error::Data(format!("bad numeric field {:?}", &record[i])))
            };
            let count: f64 = parse_f(cnt_col)?;
            if count < 0.0 || count.fract() != 0.0 {
                return Err(Error::Data(format!("count {count} is not a non-negative integer")));
            }
            triples.push((parse_f(pos_col)?, parse_f(min_col)?, count as u64));
        }
        if triples.is_empty() {
            return Err(Error::Data("observation CSV has no rows".into()));
        }
        let mut positions: Vec<f64> = triples.iter().map(|t| t.0).collect();
        positions.sort_by(|a, b| a.partial_cmp(b).unwrap());
        positions.dedup();
        let mut times: Vec<f64> = triples.iter().map(|t| t.1).collect();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        times.dedup();
        let mut counts = Array2::zeros((positions.len(), times.len()));
        let mut seen = Array2::from_elem((positions.len(), times.len()), false);
        for (pos, minute, count) in triples {
            let i = positions.iter().position(|&p| p == pos).unwrap();
            let j = times.iter().position(|&t| t == minute).unwrap();
            if seen[(i, j)] {
                return Err(Error::Data(format!(
                    "duplicate observation at detector {pos} km, minute {minute}"
                )));
            }
            seen[(i, j)] = true;
            counts[(i, j)] = count;
        }
        if seen.iter().any(|&s| !s) {
            return Err(Error::Data(
                "observation CSV is not a complete detector x minute grid".into(),
            ));
        }
        Self::new(positions, times, counts, burn_in)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "detector_km,minute,count")?;
        for (i, &pos) in self.detector_positions.iter().enumerate() {
            for (j, &t) in self.obs_times.iter().enumerate() {
                writeln!(w, "{pos},{t},{}", self.counts[(i, j)])?;
            }
        }
        Ok(())
    }
}

/// Independent uniform box prior over `(z, rho_j, u, omega)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdPriorBox {
    pub z: (f64, f64),
    pub rho_j: (f64, f64),
    pub u: (f64, f64),
    pub omega: (f64, f64),
}

impl Default for FdPriorBox {
    fn default() -> Self {
        Self {
            z: (100.0, 400.0),
            rho_j: (300.0, 800.0),
            u: (1.0, 10.0),
            omega: (0.004, 10.0),
        }
    }
}

impl FdPriorBox {
    pub fn bounds(&self) -> [(f64, f64); 4] {
        [self.z, self.rho_j, self.u, self.omega]
    }

    pub fn contains(&self, params: &[f64; 4]) -> bool {
        self.bounds()
            .iter()
            .zip(params)
            .all(|((lo, hi), v)| v >= lo && v <= hi)
    }

    /// Log-density up to a constant: 0 inside the box, `-inf` outside.
    pub fn log_density(&self, params: &[f64; 4]) -> f64 {
        if self.contains(params) {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 4] {
        let mut out = [0.0; 4];
        for (o, (lo, hi)) in out.iter_mut().zip(self.bounds()) {
            *o = rng.gen_range(lo..hi);
        }
        out
    }
}

/// A full parameter point: fundamental diagram plus both boundary conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    pub fd: DelCastilloParams,
    pub bc_in: BoundaryCondition,
    pub bc_out: BoundaryCondition,
}

/// How predicted flows are read off the solver output at observation times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsMode {
    /// Instantaneous solver value at the observation time.
    Instantaneous,
    /// Average of the flow over the minute window ending at the observation
    /// time, sampled at the boundary-condition spacing.
    MinuteAverage,
}

/// The inverse-problem forward model and posterior.
#[derive(Debug, Clone)]
pub struct Model {
    pub grid: Grid,
    pub obs: ObservationSet,
    pub fd_box: FdPriorBox,
    pub prior_in: LogOuPrior,
    pub prior_out: LogOuPrior,
    pub scheme: Scheme,
    pub obs_mode: ObsMode,
    detector_cells: Vec<usize>,
}

impl Model {
    pub fn new(
        grid: Grid,
        obs: ObservationSet,
        fd_box: FdPriorBox,
        prior_in: LogOuPrior,
        prior_out: LogOuPrior,
        scheme: Scheme,
        obs_mode: ObsMode,
    ) -> Result<Self> {
        let n_bc = grid.n_bc_points();
        if prior_in.n() != n_bc || prior_out.n() != n_bc {
            return Err(Error::Config(format!(
                "BC priors must live on the {n_bc}-point inference grid"
            )));
        }
        if let Some(&last) = obs.obs_times.last() {
            if last > grid.t_final + 1e-9 {
                return Err(Error::Config(format!(
                    "observation time {last} beyond horizon {}",
                    grid.t_final
                )));
            }
        }
        let detector_cells = obs
            .detector_positions
            .iter()
            .map(|&x| grid.cell_index_for_position(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid,
            obs,
            fd_box,
            prior_in,
            prior_out,
            scheme,
            obs_mode,
            detector_cells,
        })
    }

    pub fn detector_cells(&self) -> &[usize] {
        &self.detector_cells
    }

    /// Forward map: predicted flow (veh/min) at every detector and
    /// observation time, for the given diagram and boundary densities.
    pub fn predict_flows(
        &self,
        fd: &DelCastilloParams,
        bc_in_density: &[f64],
        bc_out_density: &[f64],
    ) -> Result<Array2<f64>> {
        let fd_m = Fd::DelCastillo(*fd);
        let ic = vec![bc_in_density[0]; self.grid.n_cells];
        let n_det = self.detector_cells.len();
        let n_t = self.obs.obs_times.len();
        let mut out = Array2::zeros((n_det, n_t));
        match self.obs_mode {
            ObsMode::Instantaneous => {
                let (field, _) = solve(
                    &ic,
                    bc_in_density,
                    bc_out_density,
                    &fd_m,
                    &self.grid,
                    &self.obs.obs_times,
                    self.scheme,
                )?;
                for (d, &cell) in self.detector_cells.iter().enumerate() {
                    for j in 0..n_t {
                        out[(d, j)] = fd_m.flow_unchecked(field.values[(cell, j)]);
                    }
                }
            }
            ObsMode::MinuteAverage => {
                let fine_times: Vec<f64> = (0..self.grid.n_bc_points())
                    .map(|k| k as f64 * self.grid.bc_dt)
                    .collect();
                let (field, _) = solve(
                    &ic,
                    bc_in_density,
                    bc_out_density,
                    &fd_m,
                    &self.grid,
                    &fine_times,
                    self.scheme,
                )?;
                for (j, &t) in self.obs.obs_times.iter().enumerate() {
                    let hi = ((t / self.grid.bc_dt).round() as usize).min(fine_times.len() - 1);
                    let window = (1.0 / self.grid.bc_dt).round() as usize;
                    let lo = hi.saturating_sub(window - 1);
                    for (d, &cell) in self.detector_cells.iter().enumerate() {
                        let mut acc = 0.0;
                        for k in lo..=hi {
                            acc += fd_m.flow_unchecked(field.values[(cell, k)]);
                        }
                        out[(d, j)] = acc / (hi - lo + 1) as f64;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Untempered Poisson log-likelihood of `theta`; `-inf` when the forward
    /// solve fails or the proposal is inconsistent (BC density at or above
    /// the proposed jam density).
    pub fn log_likelihood(&self, theta: &Theta) -> f64 {
        let rho_j = theta.fd.rho_j;
        let max_bc = theta
            .bc_in
            .density
            .iter()
            .chain(&theta.bc_out.density)
            .cloned()
            .fold(0.0, f64::max);
        if !(max_bc < rho_j) {
            return f64::NEG_INFINITY;
        }
        match self.predict_flows(&theta.fd, &theta.bc_in.density, &theta.bc_out.density) {
            Ok(predicted) => {
                let ll = poisson_loglik(
                    self.obs.counts.view(),
                    predicted.view(),
                    self.obs.burn_in,
                    FLOW_FLOOR,
                );
                if ll.is_nan() {
                    f64::NEG_INFINITY
                } else {
                    ll
                }
            }
            Err(_) => f64::NEG_INFINITY,
        }
    }

    /// Log-prior: uniform box over the diagram parameters plus the Gaussian
    /// log-densities of both BC coordinate vectors.
    pub fn log_prior(&self, theta: &Theta) -> f64 {
        let box_term = self.fd_box.log_density(&theta.fd.to_vector());
        if box_term.is_infinite() {
            return f64::NEG_INFINITY;
        }
        box_term
            + self.prior_in.log_density_x(&theta.bc_in.x)
            + self.prior_out.log_density_x(&theta.bc_out.x)
    }

    /// Tempered log-posterior `beta_temp * loglik + logprior`,
    /// `beta_temp in (0, 1]`. The prior is never tempered.
    pub fn log_posterior(&self, theta: &Theta, beta_temp: f64) -> f64 {
        let prior = self.log_prior(theta);
        if prior.is_infinite() {
            return f64::NEG_INFINITY;
        }
        let ll = self.log_likelihood(theta);
        if ll.is_infinite() {
            return f64::NEG_INFINITY;
        }
        beta_temp * ll + prior
    }
}

/// Poisson log-likelihood up to an additive constant:
/// `sum (-q_hat + q log q_hat)` over entries past the first `skip_cols`
/// observation times. Predictions are floored at `floor` before the log.
pub fn poisson_loglik(
    counts: ArrayView2<u64>,
    predicted: ArrayView2<f64>,
    skip_cols: usize,
    floor: f64,
) -> f64 {
    debug_assert_eq!(counts.dim(), predicted.dim());
    let mut ll = 0.0;
    for j in skip_cols..counts.ncols() {
        for i in 0..counts.nrows() {
            let q_hat = predicted[(i, j)];
            if !q_hat.is_finite() {
                return f64::NEG_INFINITY;
            }
            let q_hat = q_hat.max(floor);
            ll += -q_hat + counts[(i, j)] as f64 * q_hat.ln();
        }
    }
    ll
}

/// Direct fit: Poisson log-likelihood of observed `(density, count)` pairs
/// under the diagram alone (no PDE). Densities outside the proposed
/// `[0, rho_j]` get their predicted flow clamped to the floor.
pub fn direct_fit_loglik(fd: &DelCastilloParams, pairs: &[(f64, u64)]) -> f64 {
    let fd_m = Fd::DelCastillo(*fd);
    let mut ll = 0.0;
    for &(rho, count) in pairs {
        let q_hat = if (0.0..=fd.rho_j).contains(&rho) {
            fd_m.flow_unchecked(rho).max(FLOW_FLOOR)
        } else {
            FLOW_FLOOR
        };
        ll += -q_hat + count as f64 * q_hat.ln();
    }
    ll
}
