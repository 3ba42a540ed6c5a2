//! Conservative finite-volume solver for the scalar conservation law
//! `rho_t + f(rho)_x = 0` on a road segment.
//!
//! Interface fluxes are exact Godunov (Riemann) fluxes for a concave flux
//! function, optionally augmented with a Lax-Wendroff correction flux limited
//! by minmod. Boundary conditions enter through one ghost cell per side
//! holding a density value interpolated from a time series sampled every
//! `bc_dt` minutes. Time stepping is CFL-controlled and lands exactly on the
//! requested output times by clipping the step, so recorded fields never
//! involve temporal interpolation.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fd::Fd;

/// Spatial/temporal discretization of the road segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    /// Road length (km).
    pub road_length: f64,
    /// Number of finite-volume cells.
    pub n_cells: usize,
    /// Cell width (km), `road_length / n_cells`.
    pub dx: f64,
    /// Simulation horizon (min).
    pub t_final: f64,
    /// Boundary-condition sample spacing (min).
    pub bc_dt: f64,
    /// CFL safety factor in (0, 1].
    pub cfl_number: f64,
}

impl Grid {
    pub fn new(
        road_length: f64,
        n_cells: usize,
        t_final: f64,
        bc_dt: f64,
        cfl_number: f64,
    ) -> Result<Self> {
        if n_cells < 3 {
            return Err(Error::Config(format!("need at least 3 cells, got {n_cells}")));
        }
        if !(road_length > 0.0) || !(t_final > 0.0) || !(bc_dt > 0.0) {
            return Err(Error::Config(
                "road_length, t_final and bc_dt must be positive".into(),
            ));
        }
        if !(cfl_number > 0.0 && cfl_number <= 1.0) {
            return Err(Error::Config(format!("cfl_number must be in (0,1], got {cfl_number}")));
        }
        let steps = t_final / bc_dt;
        if (steps - steps.round()).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "t_final ({t_final}) must be a whole number of bc_dt ({bc_dt}) intervals"
            )));
        }
        Ok(Self {
            road_length,
            n_cells,
            dx: road_length / n_cells as f64,
            t_final,
            bc_dt,
            cfl_number,
        })
    }

    /// Paper-scale default: 5 km, 259 cells, 1.5 s boundary samples.
    pub fn default_road(t_final: f64) -> Result<Self> {
        Grid::new(5.0, 259, t_final, 0.025, 0.9)
    }

    /// Number of samples in a boundary-condition series covering `[0, t_final]`.
    pub fn n_bc_points(&self) -> usize {
        (self.t_final / self.bc_dt).round() as usize + 1
    }

    pub fn cell_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dx
    }

    /// Cell whose center is nearest to `x`; ties break toward the lower index.
    pub fn cell_index_for_position(&self, x: f64) -> Result<usize> {
        if !(0.0..=self.road_length + 1e-12).contains(&x) {
            return Err(Error::Config(format!(
                "position {x} outside road [0, {}]",
                self.road_length
            )));
        }
        let lower = ((x / self.dx) - 0.5).floor() as isize;
        let lo = lower.clamp(0, self.n_cells as isize - 1) as usize;
        let hi = (lower + 1).clamp(0, self.n_cells as isize - 1) as usize;
        let (d_lo, d_hi) = (
            (x - self.cell_center(lo)).abs(),
            (x - self.cell_center(hi)).abs(),
        );
        Ok(if d_lo <= d_hi { lo } else { hi })
    }
}

/// Density solution recorded at a set of output times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityField {
    /// Density (veh/km), shape `(n_cells, n_times)`.
    pub values: Array2<f64>,
    /// Output times (min), strictly increasing.
    pub times: Vec<f64>,
}

impl DensityField {
    /// CSV export: one row per cell (first column the cell center), one
    /// column per output time.
    pub fn write_csv<W: Write>(&self, grid: &Grid, mut w: W) -> Result<()> {
        write!(w, "x_km")?;
        for t in &self.times {
            write!(w, ",{t}")?;
        }
        writeln!(w)?;
        for i in 0..self.values.nrows() {
            write!(w, "{}", grid.cell_center(i))?;
            for j in 0..self.values.ncols() {
                write!(w, ",{}", self.values[(i, j)])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// JSON sidecar with the grid metadata for a CSV export.
    pub fn write_metadata<P: AsRef<Path>>(&self, grid: &Grid, path: P) -> Result<()> {
        let meta = serde_json::json!({
            "grid": grid,
            "n_times": self.times.len(),
            "times": self.times,
        });
        std::fs::write(path, serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }
}

/// Spatial order of the scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// First-order Godunov fluxes only.
    Godunov,
    /// Godunov plus a minmod-limited Lax-Wendroff correction.
    MinmodLimited,
}

/// Exact Riemann (Godunov) interface flux for a concave flux function.
pub fn godunov_flux(rho_l: f64, rho_r: f64, fd: &Fd) -> Result<f64> {
    let rho_j = fd.jam_density();
    for rho in [rho_l, rho_r] {
        if rho.is_nan() || rho < 0.0 || rho > rho_j {
            return Err(Error::Domain(format!("density {rho} outside [0, {rho_j}]")));
        }
    }
    Ok(godunov_flux_cached(
        rho_l,
        rho_r,
        fd.flow_unchecked(rho_l),
        fd.flow_unchecked(rho_r),
        fd.critical_density(),
        fd.capacity(),
    ))
}

/// Godunov flux from pre-evaluated cell flows. `rho_l <= rho_r` is a shock
/// (minimum over the interval); otherwise a rarefaction, passing through the
/// diagram peak when the critical density lies between the states.
#[inline]
fn godunov_flux_cached(rho_l: f64, rho_r: f64, f_l: f64, f_r: f64, rho_c: f64, q_max: f64) -> f64 {
    if rho_l <= rho_r {
        f_l.min(f_r)
    } else if rho_r <= rho_c && rho_c <= rho_l {
        q_max
    } else {
        f_l.max(f_r)
    }
}

/// CFL-limited time step for the current state: `cfl * dx / lambda_max`,
/// where `lambda_max` is the largest wave speed over the current cell values
/// and the diagram's global endpoint bound, capped at `bc_dt`.
pub fn cfl_dt(state: &[f64], fd: &Fd, grid: &Grid) -> f64 {
    let mut lam = fd.max_wave_speed();
    for &rho in state {
        let s = fd.wave_speed(rho).unwrap_or(0.0).abs();
        if s > lam {
            lam = s;
        }
    }
    if lam == 0.0 {
        return grid.bc_dt;
    }
    (grid.cfl_number * grid.dx / lam).min(grid.bc_dt)
}

/// Scratch buffers reused across steps of a solve.
#[derive(Debug, Default)]
pub struct StepWorkspace {
    ext: Vec<f64>,
    flow: Vec<f64>,
    delta: Vec<f64>,
    speed: Vec<f64>,
}

impl StepWorkspace {
    fn prepare(&mut self, n: usize) {
        self.ext.resize(n + 2, 0.0);
        self.flow.resize(n + 2, 0.0);
        self.delta.resize(n + 1, 0.0);
        self.speed.resize(n + 1, 0.0);
    }
}

/// One conservative update `rho_i -= dt/dx (F_{i+1/2} - F_{i-1/2})` with ghost
/// cells holding the boundary densities. Returns the (inlet, outlet) boundary
/// fluxes of the step for mass accounting.
///
/// Panics if `dt` violates the CFL bound; that is an internal stepping bug,
/// not a data condition.
pub fn step(
    state: &mut [f64],
    fd: &Fd,
    grid: &Grid,
    bc_in: f64,
    bc_out: f64,
    dt: f64,
    scheme: Scheme,
    ws: &mut StepWorkspace,
) -> Result<(f64, f64)> {
    let n = state.len();
    let rho_j = fd.jam_density();
    for bc in [bc_in, bc_out] {
        if bc.is_nan() || bc < 0.0 || bc > rho_j {
            return Err(Error::Domain(format!("boundary density {bc} outside [0, {rho_j}]")));
        }
    }
    let nu = dt / grid.dx;
    assert!(
        nu * fd.max_wave_speed() <= 1.0 + 1e-12,
        "CFL violation: dt={dt} exceeds the stable step"
    );

    ws.prepare(n);
    ws.ext[0] = bc_in;
    ws.ext[1..=n].copy_from_slice(state);
    ws.ext[n + 1] = bc_out;
    for i in 0..n + 2 {
        ws.flow[i] = fd.flow_unchecked(ws.ext[i]);
    }
    let rho_c = fd.critical_density();
    let q_max = fd.capacity();

    // Interface k sits between extended cells k and k+1, k = 0..=n.
    let second_order = scheme == Scheme::MinmodLimited;
    if second_order {
        for k in 0..=n {
            let d = ws.ext[k + 1] - ws.ext[k];
            ws.delta[k] = d;
            ws.speed[k] = if d != 0.0 {
                (ws.flow[k + 1] - ws.flow[k]) / d
            } else {
                0.0
            };
        }
    }

    let mut influx = 0.0;
    let mut outflux = 0.0;
    let mut left_flux = 0.0;
    for k in 0..=n {
        let mut flux = godunov_flux_cached(
            ws.ext[k],
            ws.ext[k + 1],
            ws.flow[k],
            ws.flow[k + 1],
            rho_c,
            q_max,
        );
        if second_order {
            let d = ws.delta[k];
            if d != 0.0 {
                let s = ws.speed[k];
                // Upwind wave for the minmod ratio; waves beyond the ghost
                // cells are taken as zero, dropping to first order there.
                let d_up = if s >= 0.0 {
                    if k > 0 {
                        ws.delta[k - 1]
                    } else {
                        0.0
                    }
                } else if k < n {
                    ws.delta[k + 1]
                } else {
                    0.0
                };
                let theta = d_up / d;
                let phi = theta.clamp(0.0, 1.0); // minmod
                flux += 0.5 * s.abs() * (1.0 - nu * s.abs()) * phi * d;
            }
        }
        if k == 0 {
            influx = flux;
        } else {
            // flux difference for interior cell k-1 (0-based)
            state[k - 1] -= nu * (flux - left_flux);
        }
        if k == n {
            outflux = flux;
        }
        left_flux = flux;
    }
    Ok((influx, outflux))
}

/// Per-run accounting produced by [`solve`].
#[derive(Debug, Clone, PartialEq)]
pub struct SolveStats {
    /// Number of time steps taken.
    pub n_steps: usize,
    /// Accumulated `integral (F_in - F_out) dt` up to each output time.
    pub boundary_balance: Vec<f64>,
}

/// Linear interpolation of a boundary series sampled every `bc_dt`.
#[inline]
fn interp_bc(series: &[f64], bc_dt: f64, t: f64) -> f64 {
    let pos = t / bc_dt;
    let k = (pos.floor() as usize).min(series.len() - 2);
    let w = pos - k as f64;
    series[k] + w * (series[k + 1] - series[k])
}

/// March the scheme from initial profile `ic` under boundary series
/// `bc_in`/`bc_out`, recording the field at each requested output time.
///
/// The time step is the CFL-stable step capped at `bc_dt`, clipped so the
/// integration lands exactly on every output time.
pub fn solve(
    ic: &[f64],
    bc_in: &[f64],
    bc_out: &[f64],
    fd: &Fd,
    grid: &Grid,
    output_times: &[f64],
    scheme: Scheme,
) -> Result<(DensityField, SolveStats)> {
    let n = grid.n_cells;
    if ic.len() != n {
        return Err(Error::Config(format!(
            "initial condition has {} values, grid has {n} cells",
            ic.len()
        )));
    }
    let n_bc = grid.n_bc_points();
    for (name, series) in [("inlet", bc_in), ("outlet", bc_out)] {
        if series.len() < n_bc {
            return Err(Error::Config(format!(
                "{name} boundary series has {} samples, need {n_bc} to cover [0, {}]",
                series.len(),
                grid.t_final
            )));
        }
    }
    let rho_j = fd.jam_density();
    for &rho in ic.iter().chain(bc_in).chain(bc_out) {
        if rho.is_nan() || rho < 0.0 || rho > rho_j {
            return Err(Error::Domain(format!("density {rho} outside [0, {rho_j}]")));
        }
    }
    if output_times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("output times must be strictly increasing".into()));
    }
    if let Some(&last) = output_times.last() {
        if last > grid.t_final + 1e-9 || output_times[0] < 0.0 {
            return Err(Error::Config("output times must lie within [0, t_final]".into()));
        }
    }

    let lam = fd.max_wave_speed();
    // For these concave diagrams the endpoint bound dominates every cell
    // value, so the CFL step is constant through the run.
    let dt_base = if lam > 0.0 {
        (grid.cfl_number * grid.dx / lam).min(grid.bc_dt)
    } else {
        grid.bc_dt
    };
    debug_assert!(dt_base <= cfl_dt(ic, fd, grid) + 1e-15);

    let mut state = ic.to_vec();
    let mut ws = StepWorkspace::default();
    let mut values = Array2::zeros((n, output_times.len()));
    let mut balance_at = vec![0.0; output_times.len()];
    let mut balance = 0.0;
    let mut t = 0.0;
    let mut n_steps = 0usize;
    let mut out_idx = 0usize;

    // Record any outputs at t = 0 (or pathological negatives already checked).
    while out_idx < output_times.len() && output_times[out_idx] <= t + 1e-12 {
        record(&mut values, out_idx, &state);
        balance_at[out_idx] = balance;
        out_idx += 1;
    }

    let t_end = output_times.last().copied().unwrap_or(0.0);
    while t < t_end - 1e-12 {
        let mut dt = dt_base;
        let mut lands_on_output = false;
        if out_idx < output_times.len() {
            let remaining = output_times[out_idx] - t;
            if remaining <= dt * (1.0 + 1e-12) {
                dt = remaining;
                lands_on_output = true;
            }
        }
        let g_in = interp_bc(bc_in, grid.bc_dt, t);
        let g_out = interp_bc(bc_out, grid.bc_dt, t);
        let (fin, fout) = step(&mut state, fd, grid, g_in, g_out, dt, scheme, &mut ws)?;
        balance += dt * (fin - fout);
        n_steps += 1;
        if lands_on_output {
            t = output_times[out_idx];
            record(&mut values, out_idx, &state);
            balance_at[out_idx] = balance;
            out_idx += 1;
        } else {
            t += dt;
        }
    }

    Ok((
        DensityField {
            values,
            times: output_times.to_vec(),
        },
        SolveStats {
            n_steps,
            boundary_balance: balance_at,
        },
    ))
}

fn record(values: &mut Array2<f64>, col: usize, state: &[f64]) {
    for (i, &rho) in state.iter().enumerate() {
        values[(i, col)] = rho;
    }
}
