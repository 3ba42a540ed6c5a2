//! Timing check of the dense symmetric eigendecomposition at inference size.

use nalgebra::DMatrix;
use std::time::Instant;

fn main() {
    for n in [301usize, 601, 1201] {
        let beta = 0.22_f64;
        let sigma = 0.256_f64;
        let dt = 0.025_f64;
        let v0 = sigma * sigma / (2.0 * beta);
        let phi = (-beta * dt).exp();
        let c = DMatrix::from_fn(n, n, |i, j| v0 * f64::powi(phi, (i as i32 - j as i32).abs()));
        let start = Instant::now();
        let eig = c.symmetric_eigen();
        println!(
            "n={n}: {:?}, top eigenvalue {:.4}",
            start.elapsed(),
            eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max)
        );
    }
}
