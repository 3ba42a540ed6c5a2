//! Quick timing check of the forward solve at the desk-scale inference grid.

use lwr_core::fd::{DelCastilloParams, Fd};
use lwr_core::solver::{solve, Grid, Scheme};
use std::time::Instant;

fn main() {
    let grid = Grid::new(2.0, 104, 30.0, 0.025, 0.9).unwrap();
    let fd = Fd::DelCastillo(DelCastilloParams::new(250.0, 500.0, 3.1, 0.2).unwrap());
    let nb = grid.n_bc_points();
    let bc_in: Vec<f64> = (0..nb).map(|k| 95.0 + 10.0 * ((k as f64) * 0.01).sin()).collect();
    let bc_out: Vec<f64> = (0..nb)
        .map(|k| {
            let t = k as f64 * 0.025;
            if (10.0..18.0).contains(&t) {
                260.0
            } else {
                50.0
            }
        })
        .collect();
    let ic = vec![bc_in[0]; grid.n_cells];
    let times: Vec<f64> = (0..=30).map(|m| m as f64).collect();

    // warmup + timed loop
    let mut total_steps = 0usize;
    let reps = 20;
    let start = Instant::now();
    for _ in 0..reps {
        let (field, stats) =
            solve(&ic, &bc_in, &bc_out, &fd, &grid, &times, Scheme::MinmodLimited).unwrap();
        total_steps += stats.n_steps;
        std::hint::black_box(field);
    }
    let elapsed = start.elapsed();
    println!(
        "{} solves in {:?} -> {:.2} ms/solve, {} steps/solve",
        reps,
        elapsed,
        elapsed.as_secs_f64() * 1000.0 / reps as f64,
        total_steps / reps
    );

    // a hot (fast-wave) corner of the prior box for the worst case
    let fd_fast = Fd::DelCastillo(DelCastilloParams::new(400.0, 320.0, 10.0, 0.2).unwrap());
    let bc_out_low: Vec<f64> = bc_out.iter().map(|v| v.min(300.0)).collect();
    let start = Instant::now();
    let (field, stats) =
        solve(&ic, &bc_in, &bc_out_low, &fd_fast, &grid, &times, Scheme::MinmodLimited).unwrap();
    std::hint::black_box(field);
    println!(
        "worst-corner solve: {:.2} ms, {} steps",
        start.elapsed().as_secs_f64() * 1000.0,
        stats.n_steps
    );
}
