//! Detector-data ingestion, traffic-engineering density estimators, and
//! synthetic-twin generation.
//!
//! Loop detectors report per-minute vehicle counts (summed over lanes),
//! occupancy, average speed, and counts by vehicle type. Density is not
//! measured directly; it is estimated either from speed (`60 q / v`) or from
//! occupancy via the average vehicle length. Synthetic twins run the forward
//! model at known parameters and draw Poisson counts, producing datasets on
//! which inference can be validated by recovery.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::fd::DelCastilloParams;
use crate::model::{Model, ObservationSet};

/// Vehicle lengths (m) by detector type class 1-4.
pub const VEHICLE_LENGTHS_M: [f64; 4] = [4.0, 6.0, 9.0, 16.0];

/// One detector-minute record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorRecord {
    pub position_km: f64,
    pub minute: f64,
    /// Total count (veh/min, summed over lanes).
    pub count: u64,
    /// Fraction of the minute the detector was occupied, in [0, 1].
    pub occupancy: f64,
    pub avg_speed_kmh: f64,
    /// Counts by vehicle type 1-4.
    pub counts_by_type: [u64; 4],
}

impl DetectorRecord {
    /// Invariants: occupancy a fraction, and the per-type counts (when any
    /// are present) summing to the total.
    pub fn is_valid(&self) -> bool {
        let type_sum: u64 = self.counts_by_type.iter().sum();
        (0.0..=1.0).contains(&self.occupancy)
            && self.position_km >= 0.0
            && (type_sum == 0 || type_sum == self.count)
    }
}

/// Density (veh/km) from count and average speed: `60 count / speed`.
pub fn density_from_speed(count: u64, speed_kmh: f64) -> Result<f64> {
    if !(speed_kmh > 0.0) {
        return Err(Error::Data(format!(
            "cannot estimate density from non-positive speed {speed_kmh}"
        )));
    }
    Ok(60.0 * count as f64 / speed_kmh)
}

/// Count-weighted average vehicle length (m) from the per-type counts.
pub fn avg_vehicle_length(counts_by_type: &[u64; 4]) -> Result<f64> {
    let total: u64 = counts_by_type.iter().sum();
    if total == 0 {
        return Err(Error::Data("no vehicles in the minute; substitute a previous length".into()));
    }
    let weighted: f64 = counts_by_type
        .iter()
        .zip(VEHICLE_LENGTHS_M)
        .map(|(&q, l)| q as f64 * l)
        .sum();
    Ok(weighted / total as f64)
}

/// Density (veh/km) from occupancy fraction and average vehicle length (m):
/// `1000 occ / L`.
pub fn density_from_occupancy(occ: f64, length_m: f64) -> Result<f64> {
    if !(length_m > 0.0) || !(0.0..=1.0).contains(&occ) {
        return Err(Error::Data(format!(
            "invalid occupancy {occ} or vehicle length {length_m}"
        )));
    }
    Ok(1000.0 * occ / length_m)
}

/// Flow-density pairs for the direct diagram fit, using the occupancy
/// estimator. Minutes with no vehicles reuse the previous minute's average
/// length; leading empty minutes are skipped.
pub fn flow_density_pairs(records: &[DetectorRecord]) -> Vec<(f64, u64)> {
    let mut pairs = Vec::new();
    let mut last_length: Option<f64> = None;
    for r in records {
        let length = avg_vehicle_length(&r.counts_by_type).ok().or(last_length);
        let Some(length) = length else { continue };
        last_length = Some(length);
        if let Ok(rho) = density_from_occupancy(r.occupancy, length) {
            pairs.push((rho, r.count));
        }
    }
    pairs
}

/// Report of excluded records and dropped detectors from ingestion.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub n_records: usize,
    pub n_faulty: usize,
    /// Detectors dropped for exceeding the faulty-minute threshold (20%).
    pub dropped_detectors: Vec<f64>,
}

/// Detector CSV with columns `position_km, minute, count, occupancy,
/// avg_speed_kmh, q1, q2, q3, q4`. Occupancy above 1 is treated as a
/// percentage and normalized. Records failing invariants are excluded;
/// detectors with more than 20% faulty minutes are dropped entirely.
pub fn load_detector_csv<R: Read>(reader: R) -> Result<(Vec<DetectorRecord>, IngestReport)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut records: Vec<DetectorRecord> = Vec::new();
    let mut report = IngestReport::default();
    let mut faulty_by_pos: std::collections::BTreeMap<u64, (f64, usize, usize)> =
        std::collections::BTreeMap::new();
    for row in rdr.records() {
        let row = row?;
        if row.len() < 9 {
            return Err(Error::Data(format!("detector CSV row has {} fields, need 9", row.len())));
        }
        let f = |i: usize| -> Result<f64> {
            row[i]
                .trim()
                .parse()
                .map_err(|_| Error::Data(format!("bad field {:?}", &row[i])))
        };
        let int = |i: usize| -> Result<u64> {
            let v = f(i)?;
            if v < 0.0 || v.fract() != 0.0 {
                return Err(Error::Data(format!("expected a count, got {v}")));
            }
            Ok(v as u64)
        };
        let mut occupancy = f(3)?;
        if occupancy > 1.0 && occupancy <= 100.0 {
            occupancy /= 100.0;
        }
        let rec = DetectorRecord {
            position_km: f(0)?,
            minute: f(1)?,
            count: int(2)?,
            occupancy,
            avg_speed_kmh: f(4)?,
            counts_by_type: [int(5)?, int(6)?, int(7)?, int(8)?],
        };
        report.n_records += 1;
        let entry = faulty_by_pos
            .entry(rec.position_km.to_bits())
            .or_insert((rec.position_km, 0, 0));
        entry.2 += 1;
        if rec.is_valid() {
            records.push(rec);
        } else {
            report.n_faulty += 1;
            entry.1 += 1;
        }
    }
    for (_, (pos, faulty, total)) in faulty_by_pos {
        if faulty as f64 > 0.2 * total as f64 {
            report.dropped_detectors.push(pos);
        }
    }
    records.retain(|r| !report.dropped_detectors.contains(&r.position_km));
    Ok((records, report))
}

pub fn write_detector_csv<W: Write>(records: &[DetectorRecord], mut w: W) -> Result<()> {
    writeln!(w, "position_km,minute,count,occupancy,avg_speed_kmh,q1,q2,q3,q4")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.position_km,
            r.minute,
            r.count,
            r.occupancy,
            r.avg_speed_kmh,
            r.counts_by_type[0],
            r.counts_by_type[1],
            r.counts_by_type[2],
            r.counts_by_type[3]
        )?;
    }
    Ok(())
}

/// Default detector layout: 8 working detectors over a 5 km section.
pub fn default_detector_layout() -> Vec<f64> {
    vec![0.0, 1.0, 2.0, 2.5, 3.0, 4.0, 4.5, 5.0]
}

/// Default observation times: 49 one-minute samples.
pub fn default_obs_times() -> Vec<f64> {
    (0..49).map(|m| m as f64).collect()
}

/// Count noise model for twin generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountNoise {
    /// Counts drawn from `Poisson(q_hat)`.
    Poisson,
    /// Zero-variance mode: counts are `round(q_hat)`.
    Rounded,
}

/// Ground truth bundled with a synthetic twin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinTruth {
    pub fd: DelCastilloParams,
    pub bc_in_density: Vec<f64>,
    pub bc_out_density: Vec<f64>,
    /// Noise-free predicted flows (detector x time).
    pub flows: Array2<f64>,
}

/// Run the forward model at the true parameters and draw counts.
///
/// The detector layout and observation times come from `model.obs`; its
/// counts are ignored and replaced.
pub fn synthesize_twin<R: Rng + ?Sized>(
    model: &Model,
    true_fd: &DelCastilloParams,
    true_bc_in: &[f64],
    true_bc_out: &[f64],
    noise: CountNoise,
    rng: &mut R,
) -> Result<(ObservationSet, TwinTruth)> {
    let flows = model
        .predict_flows(true_fd, true_bc_in, true_bc_out)
        .map_err(|e| Error::Config(format!("forward solve failed at the true parameters: {e}")))?;
    let mut counts = Array2::zeros(flows.dim());
    for (idx, &q_hat) in flows.indexed_iter() {
        counts[idx] = match noise {
            CountNoise::Rounded => q_hat.round().max(0.0) as u64,
            CountNoise::Poisson => {
                if q_hat > 0.0 {
                    Poisson::new(q_hat)
                        .map_err(|_| Error::Numerical(format!("bad Poisson rate {q_hat}")))?
                        .sample(rng) as u64
                } else {
                    0
                }
            }
        };
    }
    let obs = ObservationSet::new(
        model.obs.detector_positions.clone(),
        model.obs.obs_times.clone(),
        counts,
        model.obs.burn_in,
    )?;
    let truth = TwinTruth {
        fd: *true_fd,
        bc_in_density: true_bc_in.to_vec(),
        bc_out_density: true_bc_out.to_vec(),
        flows,
    };
    Ok((obs, truth))
}

/// Detector records for a twin: occupancy and speed are derived from the true
/// density field assuming all vehicles are 4 m type-1 cars.
pub fn twin_detector_records(
    model: &Model,
    truth: &TwinTruth,
    obs: &ObservationSet,
) -> Result<Vec<DetectorRecord>> {
    let fd_m = crate::fd::Fd::DelCastillo(truth.fd);
    let ic = vec![truth.bc_in_density[0]; model.grid.n_cells];
    let (field, _) = crate::solver::solve(
        &ic,
        &truth.bc_in_density,
        &truth.bc_out_density,
        &fd_m,
        &model.grid,
        &obs.obs_times,
        model.scheme,
    )?;
    let mut records = Vec::new();
    for (d, &pos) in obs.detector_positions.iter().enumerate() {
        let cell = model.detector_cells()[d];
        for (j, &minute) in obs.obs_times.iter().enumerate() {
            let rho = field.values[(cell, j)];
            let q = truth.flows[(d, j)];
            let count = obs.counts[(d, j)];
            records.push(DetectorRecord {
                position_km: pos,
                minute,
                count,
                occupancy: (rho * VEHICLE_LENGTHS_M[0] / 1000.0).min(1.0),
                avg_speed_kmh: if rho > 0.0 { 60.0 * q / rho } else { 0.0 },
                counts_by_type: [count, 0, 0, 0],
            });
        }
    }
    Ok(records)
}
