//! Deterministic synthetic telemetry.
//!
//! The smoke series is four coupled sinusoids plus Gaussian noise, small
//! enough to train on in seconds. The stand-in mimics the magnitude and
//! texture of hourly machine telemetry (noisy level plus slow drift and rare
//! excursions) for runs where the real corpus is not available.

use std::f64::consts::TAU;

use chrono::{Duration, NaiveDateTime};
use rand_distr::{Distribution, Normal};

use crate::data::{TelemetryRecord, DATETIME_FORMAT};
use crate::rng::{derive_seed, rng_from_seed};

pub const SMOKE_ROWS: usize = 200;
pub const SMOKE_SEED: u64 = 2024;
pub const TELEMETRY_ROWS: usize = 8760;

fn start() -> NaiveDateTime {
    NaiveDateTime::parse_from_str("2015-01-01 06:00:00", DATETIME_FORMAT).expect("valid literal")
}

/// Rounds to 6 decimals so the CSV round trip is exact.
fn r6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Hourly rows of four coupled sinusoids for machine 1.
pub fn smoke_records(rows: usize, seed: u64) -> Vec<TelemetryRecord> {
    let mut rng = rng_from_seed(seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let t0 = start();
    (0..rows)
        .map(|t| {
            let a = TAU * t as f64 / 24.0;
            let b = TAU * t as f64 / 61.0;
            let mut e = || noise.sample(&mut rng);
            let volt = 170.0 + 12.0 * a.sin() + 4.0 * b.sin() + 1.0 * e();
            let rotate = 450.0 - 30.0 * (a + 0.6).sin() + 10.0 * b.cos() + 3.0 * e();
            let pressure = 100.0 + 8.0 * (a - 0.9).sin() + 0.3 * (volt - 170.0) + 0.8 * e();
            let vibration = 40.0 + 3.0 * a.cos() + 2.0 * (b + 1.2).sin() + 0.3 * e();
            TelemetryRecord {
                timestamp: t0 + Duration::hours(t as i64),
                machine_id: 1,
                volt: r6(volt),
                rotate: r6(rotate),
                pressure: r6(pressure),
                vibration: r6(vibration),
            }
        })
        .collect()
}

/// `rows` hourly records for each machine `1..=machines`, machine-major.
pub fn telemetry_stand_in(machines: u32, rows: usize, seed: u64) -> Vec<TelemetryRecord> {
    const MEAN: [f64; 4] = [170.8, 446.6, 100.9, 40.4];
    const SD: [f64; 4] = [15.5, 52.7, 11.0, 5.4];
    let t0 = start();
    let mut out = Vec::with_capacity(machines as usize * rows);
    for machine in 1..=machines {
        let mut rng = rng_from_seed(derive_seed(seed, machine as u64));
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        // Slow AR(1) drift under white measurement noise.
        let mut drift = [0.0f64; 4];
        let mut excursion = 0usize;
        let mut excursion_shift = [0.0f64; 4];
        for t in 0..rows {
            if excursion == 0 && unit.sample(&mut rng) > 2.8 {
                let extra: f64 = unit.sample(&mut rng);
                excursion = 24 + (extra.abs() * 24.0) as usize;
                for (j, s) in excursion_shift.iter_mut().enumerate() {
                    *s = unit.sample(&mut rng) * 1.5 * SD[j];
                }
            }
            let mut v = [0.0f64; 4];
            for j in 0..4 {
                drift[j] = 0.995 * drift[j] + 0.1 * unit.sample(&mut rng);
                let shift = if excursion > 0 { excursion_shift[j] } else { 0.0 };
                v[j] = r6(MEAN[j] + SD[j] * (0.9 * unit.sample(&mut rng) + 0.4 * drift[j]) + shift);
            }
            excursion = excursion.saturating_sub(1);
            out.push(TelemetryRecord {
                timestamp: t0 + Duration::hours(t as i64),
                machine_id: machine,
                volt: v[0],
                rotate: v[1],
                pressure: v[2],
                vibration: v[3],
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoke_is_deterministic_and_hourly() {
        let a = smoke_records(SMOKE_ROWS, SMOKE_SEED);
        assert_eq!(a, smoke_records(SMOKE_ROWS, SMOKE_SEED));
        assert_ne!(a, smoke_records(SMOKE_ROWS, SMOKE_SEED + 1));
        assert_eq!(a.len(), SMOKE_ROWS);
        assert!(a.windows(2).all(|w| w[1].timestamp - w[0].timestamp == Duration::hours(1)));
    }

    #[test]
    fn stand_in_shape() {
        let recs = telemetry_stand_in(2, 100, 1);
        assert_eq!(recs.len(), 200);
        assert_eq!(recs.iter().filter(|r| r.machine_id == 2).count(), 100);
        let mean_volt = recs.iter().map(|r| r.volt).sum::<f64>() / 200.0;
        assert!((mean_volt - 170.8).abs() < 10.0);
    }
}
