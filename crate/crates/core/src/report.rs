// SPDX-License-Identifier: Apache-2.0

//! Reference latency dataset and speedup reporting.
//!
//! The embedded fixture holds measured end-to-end chain latencies for 2-,
//! 4-, and 8-core deployments over five network sizes, in three execution
//! modes: serial, analytic multi-core estimate, and staged-parallel. The
//! serial baseline is core-count independent, so its five points repeat in
//! every panel. Gains are reported against both the serial and the analytic
//! baseline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("embedded fixture is corrupted: checksum {actual:#018x} != expected {expected:#018x}")]
    CorruptFixture { expected: u64, actual: u64 },
    #[error("invalid gain CSV: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    Serial,
    Theoretical,
    Nfp,
}

impl fmt::Display for ExecMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExecMode::Serial => write!(f, "serial"),
            ExecMode::Theoretical => write!(f, "theoretical"),
            ExecMode::Nfp => write!(f, "nfp"),
        }
    }
}

impl FromStr for ExecMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "serial" => Ok(ExecMode::Serial),
            "theoretical" => Ok(ExecMode::Theoretical),
            "nfp" => Ok(ExecMode::Nfp),
            _ => Err(format!("unknown mode '{s}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixtureRow {
    pub cores: u32,
    pub network_size: u32,
    pub mode: ExecMode,
    pub latency: f64,
}

/// The embedded latency dataset: 3 core counts x 5 sizes x 3 modes.
#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub rows: Vec<FixtureRow>,
}

pub const CORE_COUNTS: [u32; 3] = [2, 4, 8];
pub const NETWORK_SIZES: [u32; 5] = [50, 100, 150, 200, 250];

/// Serial latencies per size; one baseline, repeated for every core count.
const SERIAL_SECONDS: [f64; 5] = [0.45, 0.98, 1.58, 4.87, 10.1];

/// (cores, per-size theoretical latencies, per-size staged latencies).
const PANEL_SECONDS: [(u32, [f64; 5], [f64; 5]); 3] = [
    (2, [0.28, 0.67, 1.53, 4.26, 9.0], [0.23, 0.56, 1.12, 2.72, 6.05]),
    (4, [0.18, 0.57, 1.03, 2.96, 6.1], [0.13, 0.41, 0.72, 1.62, 4.05]),
    (8, [0.12, 0.28, 0.58, 2.07, 4.1], [0.10, 0.21, 0.46, 1.82, 2.95]),
];

/// FNV-1a over the canonical row rendering, frozen when the dataset was
/// embedded.
const FIXTURE_CHECKSUM: u64 = 0x0008_6442_185e_ad32;

fn fixture_rows() -> Vec<FixtureRow> {
    let mut rows = Vec::with_capacity(45);
    for (cores, theoretical, nfp) in PANEL_SECONDS {
        for (i, &size) in NETWORK_SIZES.iter().enumerate() {
            rows.push(FixtureRow {
                cores,
                network_size: size,
                mode: ExecMode::Serial,
                latency: SERIAL_SECONDS[i],
            });
            rows.push(FixtureRow {
                cores,
                network_size: size,
                mode: ExecMode::Theoretical,
                latency: theoretical[i],
            });
            rows.push(FixtureRow {
                cores,
                network_size: size,
                mode: ExecMode::Nfp,
                latency: nfp[i],
            });
        }
    }
    rows
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn checksum(rows: &[FixtureRow]) -> u64 {
    let mut text = String::new();
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{}\n",
            r.cores, r.network_size, r.mode, r.latency
        ));
    }
    fnv1a(text.as_bytes())
}

/// Materialize the embedded dataset, verifying its checksum.
pub fn load_fixture() -> Result<Fixture, ReportError> {
    let rows = fixture_rows();
    let actual = checksum(&rows);
    if actual != FIXTURE_CHECKSUM {
        return Err(ReportError::CorruptFixture {
            expected: FIXTURE_CHECKSUM,
            actual,
        });
    }
    Ok(Fixture { rows })
}

impl Fixture {
    pub fn latency(&self, cores: u32, network_size: u32, mode: ExecMode) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.cores == cores && r.network_size == network_size && r.mode == mode)
            .map(|r| r.latency)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).expect("csv serialize");
        }
        String::from_utf8(w.into_inner().expect("csv flush")).expect("utf8")
    }
}

/// Speedups at one (cores, size) point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainRow {
    pub cores: u32,
    pub network_size: u32,
    pub gain_theoretical_over_nfp: f64,
    pub gain_serial_over_nfp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainTable {
    pub rows: Vec<GainRow>,
}

/// Ratios of fixture latencies at every (cores, size) point.
pub fn compute_gains(fixture: &Fixture) -> GainTable {
    let mut rows = Vec::with_capacity(15);
    for cores in CORE_COUNTS {
        for size in NETWORK_SIZES {
            let get = |mode| {
                fixture
                    .latency(cores, size, mode)
                    .expect("fixture covers every (cores, size, mode) point")
            };
            let nfp = get(ExecMode::Nfp);
            rows.push(GainRow {
                cores,
                network_size: size,
                gain_theoretical_over_nfp: get(ExecMode::Theoretical) / nfp,
                gain_serial_over_nfp: get(ExecMode::Serial) / nfp,
            });
        }
    }
    GainTable { rows }
}

impl GainTable {
    pub fn mean_theoretical_gain(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.gain_theoretical_over_nfp)
            .sum::<f64>()
            / self.rows.len() as f64
    }

    /// The largest serial/staged ratio and where it occurs.
    pub fn max_serial_gain(&self) -> &GainRow {
        self.rows
            .iter()
            .max_by(|a, b| a.gain_serial_over_nfp.total_cmp(&b.gain_serial_over_nfp))
            .expect("gain table is never empty")
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).expect("csv serialize");
        }
        String::from_utf8(w.into_inner().expect("csv flush")).expect("utf8")
    }

    pub fn from_csv(text: &str) -> Result<GainTable, ReportError> {
        Ok(GainTable {
            rows: csv::Reader::from_reader(text.as_bytes())
                .deserialize()
                .collect::<Result<Vec<GainRow>, csv::Error>>()?,
        })
    }
}

/// One row of size-sweep output: a comparison row tagged with the swept
/// network size and the offered load it mapped to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub network_size: u32,
    pub lambda: f64,
    pub mode: String,
    pub seed: Option<u64>,
    pub count: Option<u64>,
    pub mean: f64,
    pub p50: Option<f64>,
    pub p95: Option<f64>,
    pub p99: Option<f64>,
    pub littles_residual: Option<f64>,
}

pub fn sweep_rows_to_csv(rows: &[SweepRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("csv serialize");
    }
    String::from_utf8(w.into_inner().expect("csv flush")).expect("utf8")
}

pub fn sweep_rows_from_csv(text: &str) -> Result<Vec<SweepRow>, ReportError> {
    Ok(csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<Vec<SweepRow>, csv::Error>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_loads_and_has_45_rows() {
        let f = load_fixture().unwrap();
        assert_eq!(f.rows.len(), 45);
        for cores in CORE_COUNTS {
            for size in NETWORK_SIZES {
                for mode in [ExecMode::Serial, ExecMode::Theoretical, ExecMode::Nfp] {
                    assert!(f.latency(cores, size, mode).is_some());
                }
            }
        }
    }

    #[test]
    fn serial_baseline_is_shared_across_core_counts() {
        let f = load_fixture().unwrap();
        for size in NETWORK_SIZES {
            let two = f.latency(2, size, ExecMode::Serial).unwrap();
            assert_eq!(f.latency(4, size, ExecMode::Serial).unwrap(), two);
            assert_eq!(f.latency(8, size, ExecMode::Serial).unwrap(), two);
        }
    }

    #[test]
    fn known_fixture_points() {
        let f = load_fixture().unwrap();
        assert_eq!(f.latency(2, 250, ExecMode::Serial).unwrap(), 10.1);
        assert_eq!(f.latency(2, 250, ExecMode::Nfp).unwrap(), 6.05);
        assert_eq!(f.latency(8, 250, ExecMode::Theoretical).unwrap(), 4.1);
    }

    #[test]
    fn modes_are_ordered_at_every_point() {
        let f = load_fixture().unwrap();
        for cores in CORE_COUNTS {
            for size in NETWORK_SIZES {
                let serial = f.latency(cores, size, ExecMode::Serial).unwrap();
                let theory = f.latency(cores, size, ExecMode::Theoretical).unwrap();
                let nfp = f.latency(cores, size, ExecMode::Nfp).unwrap();
                assert!(
                    serial >= theory && theory >= nfp,
                    "ordering violated at cores={cores} size={size}"
                );
            }
        }
    }

    #[test]
    fn quoted_gain_ratios() {
        let gains = compute_gains(&load_fixture().unwrap());
        let at = |cores, size| {
            gains
                .rows
                .iter()
                .find(|r| r.cores == cores && r.network_size == size)
                .unwrap()
        };
        assert!((at(2, 200).gain_theoretical_over_nfp - 1.566).abs() < 1e-3);
        assert!((at(2, 250).gain_serial_over_nfp - 1.669).abs() < 1e-3);
        assert!((at(8, 250).gain_theoretical_over_nfp - 1.390).abs() < 1e-3);
    }

    #[test]
    fn mean_and_max_theoretical_gain_in_expected_band() {
        let gains = compute_gains(&load_fixture().unwrap());
        let mean = gains.mean_theoretical_gain();
        assert!((1.2..=1.9).contains(&mean), "mean gain {mean}");
        let max = gains
            .rows
            .iter()
            .map(|r| r.gain_theoretical_over_nfp)
            .fold(0.0_f64, f64::max);
        assert!((1.2..=1.9).contains(&max), "max gain {max}");
        assert!(gains.rows.iter().all(|r| r.gain_serial_over_nfp > 0.0
            && r.gain_theoretical_over_nfp > 0.0));
    }

    #[test]
    fn gain_csv_round_trips() {
        let gains = compute_gains(&load_fixture().unwrap());
        let text = gains.to_csv();
        let back = GainTable::from_csv(&text).unwrap();
        assert_eq!(back, gains);
        assert_eq!(back.to_csv(), text);
    }
}
