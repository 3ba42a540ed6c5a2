//! Fundamental diagrams: flow-density relations closing the LWR conservation
//! law, their derivatives (kinematic wave speeds), and branch inversion.
//!
//! Two models are provided. The triangular (bi-linear) diagram is parameterized
//! by capacity, critical density, and jam density. The negative-power diagram
//! has a scale `z`, jam density `rho_j`, a critical-density parameter `u`, and
//! a shape parameter stored as `omega = 1/gamma`; as `gamma -> inf` it tends to
//! the triangular diagram with peak at `rho_j / (1 + u)`.
//!
//! All densities are veh/km, flows veh/min, wave speeds km/min.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of the triangular (bi-linear) fundamental diagram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriangularParams {
    /// Flow capacity (veh/min), the peak of the diagram.
    pub q_c: f64,
    /// Critical density (veh/km) separating free and congested flow.
    pub rho_c: f64,
    /// Jam density (veh/km) at which flow vanishes.
    pub rho_j: f64,
}

impl TriangularParams {
    pub fn new(q_c: f64, rho_c: f64, rho_j: f64) -> Result<Self> {
        if !(q_c > 0.0) {
            return Err(Error::Domain(format!("capacity must be positive, got {q_c}")));
        }
        if !(0.0 < rho_c && rho_c < rho_j) {
            return Err(Error::Domain(format!(
                "need 0 < rho_c < rho_j, got rho_c={rho_c}, rho_j={rho_j}"
            )));
        }
        Ok(Self { q_c, rho_c, rho_j })
    }
}

/// Parameters of the negative-power (del Castillo) fundamental diagram.
///
/// The shape parameter is stored inverted (`omega = 1/gamma`) so that the
/// triangular limit `gamma -> inf` sits at `omega -> 0`, which keeps the
/// sampled parameter bounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelCastilloParams {
    /// Flow scale (veh/min).
    pub z: f64,
    /// Jam density (veh/km).
    pub rho_j: f64,
    /// Critical-density parameter (dimensionless).
    pub u: f64,
    /// Inverse shape parameter, `omega = 1/gamma` (dimensionless).
    pub omega: f64,
}

impl DelCastilloParams {
    pub fn new(z: f64, rho_j: f64, u: f64, omega: f64) -> Result<Self> {
        for (name, v) in [("z", z), ("rho_j", rho_j), ("u", u), ("omega", omega)] {
            if !(v > 0.0) {
                return Err(Error::Domain(format!("{name} must be strictly positive, got {v}")));
            }
        }
        Ok(Self { z, rho_j, u, omega })
    }

    /// Shape exponent `gamma = 1/omega`.
    pub fn gamma(&self) -> f64 {
        1.0 / self.omega
    }

    /// Parameter vector in sampling order `(z, rho_j, u, omega)`.
    pub fn to_vector(&self) -> [f64; 4] {
        [self.z, self.rho_j, self.u, self.omega]
    }

    pub fn from_vector(v: &[f64]) -> Result<Self> {
        if v.len() != 4 {
            return Err(Error::Domain(format!("expected 4 parameters, got {}", v.len())));
        }
        Self::new(v[0], v[1], v[2], v[3])
    }
}

/// Dimensionless critical density of the negative-power diagram,
/// `1 / (1 + u^(gamma/(gamma+1)))` with `gamma = 1/omega`.
///
/// Multiply by `rho_j` for physical units.
pub fn critical_density(u: f64, omega: f64) -> f64 {
    let gamma = 1.0 / omega;
    1.0 / (1.0 + u.powf(gamma / (gamma + 1.0)))
}

/// A fundamental diagram of either family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Fd {
    Triangular(TriangularParams),
    DelCastillo(DelCastilloParams),
}

impl From<TriangularParams> for Fd {
    fn from(p: TriangularParams) -> Self {
        Fd::Triangular(p)
    }
}

impl From<DelCastilloParams> for Fd {
    fn from(p: DelCastilloParams) -> Self {
        Fd::DelCastillo(p)
    }
}

/// Flow of the triangular diagram at density `rho`.
pub fn triangular_flow(rho: f64, p: &TriangularParams) -> Result<f64> {
    check_domain(rho, p.rho_j)?;
    Ok(triangular_flow_unchecked(rho, p))
}

#[inline]
fn triangular_flow_unchecked(rho: f64, p: &TriangularParams) -> f64 {
    if rho < p.rho_c {
        p.q_c / p.rho_c * rho
    } else {
        p.q_c * (p.rho_j - rho) / (p.rho_j - p.rho_c)
    }
}

/// Flow of the negative-power diagram at density `rho`.
///
/// The defining form `z * ((u rho/rho_j)^-g + (1 - rho/rho_j)^-g)^(-1/g)` is
/// evaluated as `z * m * (1 + (m/M)^g)^(-1/g)` with `m, M` the smaller/larger
/// of the two bracket bases, which never overflows and degrades gracefully to
/// the triangular limit `z * min(u rho/rho_j, 1 - rho/rho_j)` for large `g`.
pub fn delcastillo_flow(rho: f64, p: &DelCastilloParams) -> Result<f64> {
    check_domain(rho, p.rho_j)?;
    Ok(delcastillo_flow_unchecked(rho, p))
}

#[inline]
fn delcastillo_flow_unchecked(rho: f64, p: &DelCastilloParams) -> f64 {
    let frac = rho / p.rho_j;
    let a = p.u * frac;
    let b = 1.0 - frac;
    if a <= 0.0 || b <= 0.0 {
        return 0.0;
    }
    let gamma = 1.0 / p.omega;
    let (m, big) = if a <= b { (a, b) } else { (b, a) };
    let s = (m / big).powf(gamma);
    p.z * m * (1.0 + s).powf(-p.omega)
}

#[inline]
fn check_domain(rho: f64, rho_j: f64) -> Result<()> {
    if rho.is_nan() || rho < 0.0 || rho > rho_j {
        return Err(Error::Domain(format!("density {rho} outside [0, {rho_j}]")));
    }
    Ok(())
}

impl Fd {
    /// Flow at density `rho`; domain error outside `[0, rho_j]`.
    pub fn flow(&self, rho: f64) -> Result<f64> {
        match self {
            Fd::Triangular(p) => triangular_flow(rho, p),
            Fd::DelCastillo(p) => delcastillo_flow(rho, p),
        }
    }

    /// Flow without the domain check, for hot loops whose inputs are already
    /// maintained inside `[0, rho_j]` by the caller.
    #[inline]
    pub fn flow_unchecked(&self, rho: f64) -> f64 {
        match self {
            Fd::Triangular(p) => triangular_flow_unchecked(rho, p),
            Fd::DelCastillo(p) => delcastillo_flow_unchecked(rho, p),
        }
    }

    /// Kinematic wave speed `dq/drho` at density `rho` (km/min).
    ///
    /// For the triangular diagram the two one-sided slopes meet at `rho_c`;
    /// exactly `rho_c` returns the congested slope.
    pub fn wave_speed(&self, rho: f64) -> Result<f64> {
        match self {
            Fd::Triangular(p) => {
                check_domain(rho, p.rho_j)?;
                Ok(if rho < p.rho_c {
                    p.q_c / p.rho_c
                } else {
                    -p.q_c / (p.rho_j - p.rho_c)
                })
            }
            Fd::DelCastillo(p) => {
                check_domain(rho, p.rho_j)?;
                let gamma = 1.0 / p.omega;
                if rho == 0.0 {
                    return Ok(p.z * p.u / p.rho_j);
                }
                if rho == p.rho_j {
                    return Ok(-p.z / p.rho_j);
                }
                let frac = rho / p.rho_j;
                let a = p.u * frac;
                let b = 1.0 - frac;
                // d/drho of z*(a^-g + b^-g)^(-1/g), factored through the larger
                // bracket term exactly as in `delcastillo_flow`.
                let (m, big, m_is_a) = if a <= b { (a, b, true) } else { (b, a, false) };
                let s = (m / big).powf(gamma);
                let common = p.z * m * (1.0 + s).powf(-p.omega - 1.0);
                let speed = if m_is_a {
                    common * (1.0 / rho - s / (p.rho_j - rho))
                } else {
                    common * (s / rho - 1.0 / (p.rho_j - rho))
                };
                Ok(speed)
            }
        }
    }

    /// Critical density (veh/km): the argmax of the diagram.
    pub fn critical_density(&self) -> f64 {
        match self {
            Fd::Triangular(p) => p.rho_c,
            Fd::DelCastillo(p) => p.rho_j * critical_density(p.u, p.omega),
        }
    }

    /// Peak flow (veh/min).
    pub fn capacity(&self) -> f64 {
        match self {
            Fd::Triangular(p) => p.q_c,
            Fd::DelCastillo(_) => self.flow_unchecked(self.critical_density()),
        }
    }

    pub fn jam_density(&self) -> f64 {
        match self {
            Fd::Triangular(p) => p.rho_j,
            Fd::DelCastillo(p) => p.rho_j,
        }
    }

    /// Global bound on `|dq/drho|`, attained at the domain endpoints for these
    /// concave diagrams; used by the CFL time-step control.
    pub fn max_wave_speed(&self) -> f64 {
        match self {
            Fd::Triangular(p) => (p.q_c / p.rho_c).max(p.q_c / (p.rho_j - p.rho_c)),
            Fd::DelCastillo(p) => p.z * p.u.max(1.0) / p.rho_j,
        }
    }

    /// The two densities (free branch, congested branch) mapping to flow `q`.
    ///
    /// At capacity both equal the critical density; above capacity there is no
    /// solution. Branch inversion runs bisection to machine-level width so the
    /// forward map reproduces `q` to full precision.
    pub fn density_pair_for_flow(&self, q: f64) -> Result<(f64, f64)> {
        if !(q > 0.0) {
            return Err(Error::Domain(format!("flow must be positive, got {q}")));
        }
        let cap = self.capacity();
        let rho_c = self.critical_density();
        if q > cap {
            let rel = (q - cap) / cap;
            if rel > 1e-12 {
                return Err(Error::Domain(format!("flow {q} exceeds capacity {cap}")));
            }
            return Ok((rho_c, rho_c));
        }
        if let Fd::Triangular(p) = self {
            // Both branches are linear; invert exactly.
            return Ok((
                q * p.rho_c / p.q_c,
                p.rho_j - q * (p.rho_j - p.rho_c) / p.q_c,
            ));
        }
        let rho_j = self.jam_density();
        let free = bisect_monotone(|r| self.flow_unchecked(r) - q, 0.0, rho_c, true)?;
        let cong = bisect_monotone(|r| self.flow_unchecked(r) - q, rho_c, rho_j, false)?;
        Ok((free, cong))
    }
}

/// Bisection for a sign change of `f` on `[lo, hi]`, `f` increasing or
/// decreasing according to `increasing`. Runs to interval width at rounding
/// level (or 200 iterations).
fn bisect_monotone<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, increasing: bool) -> Result<f64> {
    let (mut lo, mut hi) = (lo, hi);
    let f_lo = f(lo);
    let f_hi = f(hi);
    let (neg_at_lo, neg_at_hi) = (f_lo <= 0.0, f_hi <= 0.0);
    if neg_at_lo == neg_at_hi {
        // Peak flow is attained strictly inside; a target at or just below
        // capacity can leave both endpoint signs equal only by rounding.
        if increasing {
            return Ok(hi);
        }
        return Ok(lo);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        let mid_neg = fm <= 0.0;
        if mid_neg == neg_at_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn tri_unit() -> TriangularParams {
        TriangularParams::new(1.0, 0.15, 1.0).unwrap()
    }

    fn dc_unit() -> DelCastilloParams {
        // gamma = 5
        DelCastilloParams::new(1.0, 1.0, 3.1, 0.2).unwrap()
    }

    #[test]
    fn triangular_flow_examples() {
        let p = tri_unit();
        assert_eq!(triangular_flow(0.0, &p).unwrap(), 0.0);
        assert_abs_diff_eq!(triangular_flow(0.15, &p).unwrap(), 1.0, epsilon = 1e-15);
        // midpoint of the congested branch
        assert_abs_diff_eq!(triangular_flow(0.575, &p).unwrap(), 0.5, epsilon = 1e-15);
        assert!(triangular_flow(1.5, &p).is_err());
        assert!(triangular_flow(-0.1, &p).is_err());
    }

    #[test]
    fn delcastillo_flow_examples() {
        let p = dc_unit();
        assert_eq!(delcastillo_flow(0.0, &p).unwrap(), 0.0);
        assert_eq!(delcastillo_flow(1.0, &p).unwrap(), 0.0);
        // frozen from a 30-digit evaluation of the defining expression
        assert_relative_eq!(
            delcastillo_flow(0.3, &p).unwrap(),
            0.670351421848542853,
            max_relative = 1e-12
        );
        assert!(delcastillo_flow(1.1, &p).is_err());
    }

    #[test]
    fn delcastillo_triangular_limit() {
        // gamma = 100 stays within 0.02 of z * min(u rho/rho_j, 1 - rho/rho_j)
        let p = DelCastilloParams::new(1.0, 1.0, 3.1, 0.01).unwrap();
        let mut max_dev: f64 = 0.0;
        for i in 0..=10_000 {
            let rho = i as f64 / 10_000.0;
            let q = delcastillo_flow(rho, &p).unwrap();
            let tri = (3.1 * rho).min(1.0 - rho);
            max_dev = max_dev.max((q - tri).abs());
        }
        assert!(max_dev < 0.02, "max deviation {max_dev}");
    }

    #[test]
    fn critical_density_examples() {
        assert_abs_diff_eq!(critical_density(1.0, 0.2), 0.5, epsilon = 1e-15);
        // frozen from a 30-digit evaluation
        assert_relative_eq!(critical_density(3.1, 0.2), 0.280328022917084, max_relative = 1e-12);
        // gamma -> inf limit: 1 / (1 + u)
        assert_relative_eq!(critical_density(3.1, 1e-9), 1.0 / 4.1, max_relative = 1e-6);
    }

    #[test]
    fn triangular_wave_speed_branches() {
        let fd = Fd::Triangular(tri_unit());
        assert_relative_eq!(fd.wave_speed(0.05).unwrap(), 1.0 / 0.15, max_relative = 1e-12);
        assert_relative_eq!(fd.wave_speed(0.5).unwrap(), -1.0 / 0.85, max_relative = 1e-12);
        // exactly at the kink: congested slope by convention
        assert_relative_eq!(fd.wave_speed(0.15).unwrap(), -1.0 / 0.85, max_relative = 1e-12);
    }

    #[test]
    fn delcastillo_wave_speed_matches_finite_difference() {
        let fd = Fd::DelCastillo(dc_unit());
        let h = 1e-6;
        for i in 1..100 {
            let rho = i as f64 / 100.0;
            let analytic = fd.wave_speed(rho).unwrap();
            let numeric =
                (fd.flow(rho + h).unwrap() - fd.flow(rho - h).unwrap()) / (2.0 * h);
            assert_relative_eq!(analytic, numeric, max_relative = 1e-5);
        }
        // endpoint limits
        assert_relative_eq!(fd.wave_speed(0.0).unwrap(), 3.1, max_relative = 1e-12);
        assert_relative_eq!(fd.wave_speed(1.0).unwrap(), -1.0, max_relative = 1e-12);
    }

    #[test]
    fn delcastillo_unimodal_and_peak_location() {
        let fd = Fd::DelCastillo(dc_unit());
        let n = 10_000;
        let mut sign_changes = 0;
        let mut last_positive = true;
        let mut argmax = 0.0;
        let mut qmax = 0.0;
        for i in 1..n {
            let rho = i as f64 / n as f64;
            let s = fd.wave_speed(rho).unwrap();
            let positive = s > 0.0;
            if i > 1 && positive != last_positive {
                sign_changes += 1;
            }
            last_positive = positive;
            let q = fd.flow(rho).unwrap();
            if q > qmax {
                qmax = q;
                argmax = rho;
            }
        }
        assert_eq!(sign_changes, 1);
        let rho_c = critical_density(3.1, 0.2);
        assert!((argmax - rho_c).abs() <= 1.0 / n as f64, "argmax {argmax} vs {rho_c}");
    }

    #[test]
    fn density_pair_examples() {
        let tri = Fd::Triangular(tri_unit());
        let (f, c) = tri.density_pair_for_flow(0.5).unwrap();
        assert_abs_diff_eq!(f, 0.075, epsilon = 1e-12);
        assert_abs_diff_eq!(c, 0.575, epsilon = 1e-12);

        let (f, c) = tri.density_pair_for_flow(1.0).unwrap();
        assert_abs_diff_eq!(f, 0.15, epsilon = 1e-12);
        assert_abs_diff_eq!(c, 0.15, epsilon = 1e-12);

        assert!(tri.density_pair_for_flow(1.1).is_err());

        let dc = Fd::DelCastillo(dc_unit());
        for q in [0.1, 0.3, 0.5, 0.65] {
            let (f, c) = dc.density_pair_for_flow(q).unwrap();
            assert!(f < dc.critical_density() && c > dc.critical_density());
            assert_relative_eq!(dc.flow(f).unwrap(), q, max_relative = 1e-10);
            assert_relative_eq!(dc.flow(c).unwrap(), q, max_relative = 1e-10);
        }
    }

    #[test]
    fn nonnegative_and_zero_at_endpoints() {
        for fd in [Fd::Triangular(tri_unit()), Fd::DelCastillo(dc_unit())] {
            assert_eq!(fd.flow(0.0).unwrap(), 0.0);
            assert_abs_diff_eq!(fd.flow(fd.jam_density()).unwrap(), 0.0, epsilon = 1e-15);
            for i in 0..=1000 {
                let rho = fd.jam_density() * i as f64 / 1000.0;
                assert!(fd.flow(rho).unwrap() >= 0.0);
            }
        }
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(TriangularParams::new(0.0, 0.15, 1.0).is_err());
        assert!(TriangularParams::new(1.0, 1.0, 1.0).is_err());
        assert!(TriangularParams::new(1.0, 1.2, 1.0).is_err());
        assert!(DelCastilloParams::new(1.0, 1.0, 3.1, 0.0).is_err());
        assert!(DelCastilloParams::new(1.0, -1.0, 3.1, 0.2).is_err());
        assert!(DelCastilloParams::from_vector(&[1.0, 1.0, 3.1]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn prop_wave_speed_matches_finite_difference(
            z in 10.0..400.0f64,
            rho_j in 100.0..800.0f64,
            u in 1.0..10.0f64,
            omega in 0.02..2.0f64,
            t in 0.02..0.98f64,
        ) {
            let fd = Fd::DelCastillo(DelCastilloParams::new(z, rho_j, u, omega).unwrap());
            let rho = t * rho_j;
            let h = 1e-6 * rho_j;
            let analytic = fd.wave_speed(rho).unwrap();
            let numeric = (fd.flow(rho + h).unwrap() - fd.flow(rho - h).unwrap()) / (2.0 * h);
            let scale = fd.max_wave_speed();
            proptest::prop_assert!((analytic - numeric).abs() <= 1e-5 * scale);
        }

        #[test]
        fn prop_density_pair_round_trip(
            z in 10.0..400.0f64,
            rho_j in 100.0..800.0f64,
            u in 1.0..10.0f64,
            omega in 0.02..2.0f64,
            t in 0.01..0.99f64,
        ) {
            let fd = Fd::DelCastillo(DelCastilloParams::new(z, rho_j, u, omega).unwrap());
            let q = t * fd.capacity();
            let (f, c) = fd.density_pair_for_flow(q).unwrap();
            proptest::prop_assert!((fd.flow(f).unwrap() - q).abs() <= 1e-10 * q);
            proptest::prop_assert!((fd.flow(c).unwrap() - q).abs() <= 1e-10 * q);
        }
    }
}
