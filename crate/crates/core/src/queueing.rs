// SPDX-License-Identifier: Apache-2.0

//! M/M/c equilibrium analysis for single stations and whole chains.
//!
//! A station has Poisson arrivals at rate `lambda`, `c` parallel servers,
//! and exponential service at rate `mu` per server. Per-server utilization
//! is `rho = lambda / (c * mu)`; all derived quantities require `rho < 1`.
//!
//! Probabilities are accumulated with running term ratios so no factorial
//! is ever materialized; for offered loads large enough that the raw terms
//! would overflow an f64, the normalization constant is evaluated in log
//! space instead.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{StagePlan, VnfInstance};

/// Offered load above which `sum a^n/n!` is evaluated in log space.
/// The largest term is about `e^a / sqrt(2*pi*a)`, so 700 keeps the direct
/// path safely below f64 overflow.
const DIRECT_EVAL_LOAD_LIMIT: f64 = 700.0;

/// Relative disagreement between the two mean-wait formulas that signals a bug.
const MEAN_WAIT_CONSISTENCY_TOL: f64 = 1e-12;

/// Denominator floor for [`MmcParams::balance_residual`]. Equilibrium
/// probabilities in the deep geometric tail underflow into the subnormal
/// range where relative comparison is meaningless; below this floor the
/// residual is measured against the floor instead.
const BALANCE_DENOM_FLOOR: f64 = 1e-300;

#[derive(Debug, Error)]
pub enum QueueingError {
    #[error("invalid M/M/c parameters: lambda={lambda}, mu={mu}, c={servers} (lambda and mu must be > 0, c >= 1)")]
    InvalidParams { lambda: f64, mu: f64, servers: u32 },
    #[error("unstable station{station}: rho = lambda/(c*mu) = {rho} >= 1")]
    Unstable { station: String, rho: f64 },
    #[error("mean-wait consistency failure: direct form {direct} vs queue-length form {via_queue} (implementation bug)")]
    MeanWaitMismatch { direct: f64, via_queue: f64 },
}

impl QueueingError {
    fn unstable(rho: f64) -> Self {
        QueueingError::Unstable {
            station: String::new(),
            rho,
        }
    }

    /// Attach a station name to an instability error.
    fn for_station(self, id: &str) -> Self {
        match self {
            QueueingError::Unstable { rho, .. } => QueueingError::Unstable {
                station: format!(" '{id}'"),
                rho,
            },
            other => other,
        }
    }
}

/// Parameters of one M/M/c station.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmcParams {
    /// Arrival rate, packets per second.
    pub lambda: f64,
    /// Service rate per server, packets per second.
    pub mu: f64,
    /// Number of parallel servers.
    pub servers: u32,
}

/// A finite, strictly positive rate (rejects NaN and infinities).
pub(crate) fn positive_rate(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

impl MmcParams {
    pub fn new(lambda: f64, mu: f64, servers: u32) -> Result<Self, QueueingError> {
        if !positive_rate(lambda) || !positive_rate(mu) || servers < 1 {
            return Err(QueueingError::InvalidParams {
                lambda,
                mu,
                servers,
            });
        }
        Ok(MmcParams {
            lambda,
            mu,
            servers,
        })
    }

    /// Offered load `a = lambda / mu` (in units of busy servers).
    pub fn offered_load(&self) -> f64 {
        self.lambda / self.mu
    }

    fn rho_raw(&self) -> f64 {
        self.lambda / (self.servers as f64 * self.mu)
    }

    /// Per-server utilization `rho = lambda / (c * mu)`; errors when `rho >= 1`.
    pub fn utilization(&self) -> Result<f64, QueueingError> {
        let rho = self.rho_raw();
        if rho >= 1.0 {
            return Err(QueueingError::unstable(rho));
        }
        Ok(rho)
    }

    /// Probability of an empty system.
    ///
    /// `1/p0 = sum_{n<c} a^n/n! + a^c/c! * 1/(1-rho)` with `a = c*rho`,
    /// accumulated by term ratio. Underflows to 0 for very large loads,
    /// which is the correct limit.
    pub fn p0(&self) -> Result<f64, QueueingError> {
        let rho = self.utilization()?;
        let a = self.offered_load();
        let c = self.servers;
        if a < DIRECT_EVAL_LOAD_LIMIT {
            let (partial_sum, tail_term) = poisson_terms(a, c);
            Ok(1.0 / (partial_sum + tail_term / (1.0 - rho)))
        } else {
            // log-sum-exp over the same terms
            let ln_terms = ln_poisson_terms(a, c);
            let tail = *ln_terms.last().expect("c >= 1 gives at least one term") - (1.0 - rho).ln();
            let max = ln_terms[..c as usize]
                .iter()
                .copied()
                .fold(tail, f64::max);
            let scaled: f64 = ln_terms[..c as usize]
                .iter()
                .map(|t| (t - max).exp())
                .sum::<f64>()
                + (tail - max).exp();
            Ok((-(max + scaled.ln())).exp())
        }
    }

    /// Probability of exactly `n` packets in the system:
    /// `p_n = a^n/n! * p0` for `n <= c`, `p_{c+k} = rho^k * p_c`.
    pub fn p_n(&self, n: u64) -> Result<f64, QueueingError> {
        let rho = self.utilization()?;
        let c = self.servers as u64;
        if n <= c {
            let p0 = self.p0()?;
            let a = self.offered_load();
            let mut p = p0;
            for i in 1..=n {
                p *= a / i as f64;
            }
            Ok(p)
        } else {
            let exceed = n - c;
            if exceed > i32::MAX as u64 {
                return Ok(0.0);
            }
            Ok(self.p_c()? * rho.powi(exceed as i32))
        }
    }

    /// `p_c`, the probability all servers are busy with an empty queue.
    fn p_c(&self) -> Result<f64, QueueingError> {
        let rho = self.utilization()?;
        let a = self.offered_load();
        let c = self.servers;
        if a < DIRECT_EVAL_LOAD_LIMIT {
            let (_, tail_term) = poisson_terms(a, c);
            Ok(self.p0()? * tail_term)
        } else {
            // exp(ln p0 + ln(a^c/c!)) without forming either factor
            let ln_terms = ln_poisson_terms(a, c);
            let ln_tail = *ln_terms.last().expect("nonempty");
            let p0 = self.p0()?;
            if p0 == 0.0 {
                // recompute ln(1/p0) to combine in log space
                let tail = ln_tail - (1.0 - rho).ln();
                let max = ln_terms[..c as usize]
                    .iter()
                    .copied()
                    .fold(tail, f64::max);
                let scaled: f64 = ln_terms[..c as usize]
                    .iter()
                    .map(|t| (t - max).exp())
                    .sum::<f64>()
                    + (tail - max).exp();
                Ok((ln_tail - (max + scaled.ln())).exp())
            } else {
                Ok((p0.ln() + ln_tail).exp())
            }
        }
    }

    /// Erlang-C delay probability: chance an arriving packet finds all
    /// servers busy and has to queue.
    ///
    /// Evaluated scale-free as `1 / ((1-rho) * S/T + 1)` where `S/T` is the
    /// head-sum-to-top-term ratio, so it stays finite for any server count.
    pub fn delay_probability(&self) -> Result<f64, QueueingError> {
        let rho = self.utilization()?;
        let a = self.offered_load();
        let c = self.servers;
        let mut head_over_top = 0.0;
        let mut ratio = 1.0; // term_n / term_c walking n from c down to 0
        for n in (1..=c).rev() {
            ratio *= n as f64 / a;
            head_over_top += ratio;
        }
        Ok(1.0 / ((1.0 - rho) * head_over_top + 1.0))
    }

    /// Mean number of packets waiting in queue: `Pi_W * rho / (1 - rho)`.
    pub fn mean_queue_length(&self) -> Result<f64, QueueingError> {
        let rho = self.utilization()?;
        Ok(self.delay_probability()? * rho / (1.0 - rho))
    }

    /// Mean wait in queue: `Pi_W * 1/(1-rho) * 1/(c*mu)`.
    ///
    /// Cross-checked against the queue-length form
    /// `Pi_W/(c*mu) + E(L^q)/(c*mu)`; disagreement beyond 1e-12 relative is
    /// reported as an internal error.
    pub fn mean_wait(&self) -> Result<f64, QueueingError> {
        let rho = self.utilization()?;
        let c_mu = self.servers as f64 * self.mu;
        let pi_w = self.delay_probability()?;
        let direct = pi_w / (1.0 - rho) / c_mu;
        let via_queue = pi_w / c_mu + self.mean_queue_length()? / c_mu;
        let scale = direct.abs().max(via_queue.abs());
        if scale > 0.0 && (direct - via_queue).abs() / scale > MEAN_WAIT_CONSISTENCY_TOL {
            return Err(QueueingError::MeanWaitMismatch { direct, via_queue });
        }
        Ok(direct)
    }

    /// Mean time spent at the station: queue wait plus one service.
    pub fn station_latency(&self) -> Result<f64, QueueingError> {
        Ok(self.mean_wait()? + 1.0 / self.mu)
    }

    /// All derived station metrics at once.
    pub fn metrics(&self) -> Result<MmcMetrics, QueueingError> {
        Ok(MmcMetrics {
            lambda: self.lambda,
            mu: self.mu,
            servers: self.servers,
            rho: self.utilization()?,
            p0: self.p0()?,
            delay_probability: self.delay_probability()?,
            mean_queue_length: self.mean_queue_length()?,
            mean_wait: self.mean_wait()?,
        })
    }

    /// Relative residual of the birth-death flow balance
    /// `lambda * p_{n-1} = min(n,c) * mu * p_n` at level `n >= 1`.
    ///
    /// The denominator is floored at 1e-300: deep-tail probabilities
    /// underflow into subnormals where bit-level noise would dominate a
    /// pure relative measure.
    pub fn balance_residual(&self, n: u64) -> Result<f64, QueueingError> {
        assert!(n >= 1, "balance equation is defined for n >= 1");
        let inflow = self.lambda * self.p_n(n - 1)?;
        let service_rate = (n.min(self.servers as u64)) as f64 * self.mu;
        let outflow = service_rate * self.p_n(n)?;
        let denom = inflow.max(outflow).max(BALANCE_DENOM_FLOOR);
        Ok((inflow - outflow).abs() / denom)
    }
}

/// `(sum_{n<c} a^n/n!, a^c/c!)` by running term ratio. Caller guarantees the
/// terms stay in f64 range.
fn poisson_terms(a: f64, c: u32) -> (f64, f64) {
    let mut term = 1.0;
    let mut sum = 0.0;
    for n in 0..c {
        sum += term;
        term *= a / (n + 1) as f64;
    }
    (sum, term)
}

/// `ln(a^n/n!)` for n = 0..=c.
fn ln_poisson_terms(a: f64, c: u32) -> Vec<f64> {
    let ln_a = a.ln();
    let mut out = Vec::with_capacity(c as usize + 1);
    let mut ln_term = 0.0;
    out.push(0.0);
    for n in 1..=c {
        ln_term += ln_a - (n as f64).ln();
        out.push(ln_term);
    }
    out
}

/// Derived quantities for one station, in CSV column order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmcMetrics {
    pub lambda: f64,
    pub mu: f64,
    #[serde(rename = "c")]
    pub servers: u32,
    pub rho: f64,
    pub p0: f64,
    #[serde(rename = "pi_w")]
    pub delay_probability: f64,
    #[serde(rename = "e_lq")]
    pub mean_queue_length: f64,
    #[serde(rename = "e_w")]
    pub mean_wait: f64,
}

impl MmcMetrics {
    /// One CSV document: header row plus this row.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(self).expect("csv serialize");
        String::from_utf8(w.into_inner().expect("csv flush")).expect("utf8")
    }

    pub fn from_csv(text: &str) -> Result<Vec<MmcMetrics>, csv::Error> {
        csv::Reader::from_reader(text.as_bytes())
            .deserialize()
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimateMode {
    Serial,
    Staged,
}

/// Latency of one stage of a chain estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEstimate {
    pub stage: usize,
    /// Member station ids, '+'-joined for parallel stages.
    pub members: String,
    pub latency: f64,
}

/// Analytic end-to-end latency of a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainEstimate {
    pub mode: EstimateMode,
    pub per_stage: Vec<StageEstimate>,
    pub total: f64,
}

/// One line of the estimate CSV: a stage row or the trailing TOTAL row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub mode: String,
    pub stage: String,
    pub members: String,
    pub latency: f64,
}

impl ChainEstimate {
    /// Per-stage CSV rows plus a TOTAL row.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mode = match self.mode {
            EstimateMode::Serial => "serial",
            EstimateMode::Staged => "staged",
        };
        for s in &self.per_stage {
            w.serialize(EstimateRow {
                mode: mode.to_string(),
                stage: s.stage.to_string(),
                members: s.members.clone(),
                latency: s.latency,
            })
            .expect("csv serialize");
        }
        w.serialize(EstimateRow {
            mode: mode.to_string(),
            stage: "TOTAL".to_string(),
            members: String::new(),
            latency: self.total,
        })
        .expect("csv serialize");
        String::from_utf8(w.into_inner().expect("csv flush")).expect("utf8")
    }

    pub fn rows_from_csv(text: &str) -> Result<Vec<EstimateRow>, csv::Error> {
        csv::Reader::from_reader(text.as_bytes())
            .deserialize()
            .collect()
    }
}

/// Analytic latency of a serial chain: every station sees the full arrival
/// rate and contributes `E(W) + 1/mu`.
pub fn chain_latency_serial(
    chain: &[VnfInstance],
    lambda: f64,
) -> Result<ChainEstimate, QueueingError> {
    let mut per_stage = Vec::with_capacity(chain.len());
    let mut total = 0.0;
    for (i, vnf) in chain.iter().enumerate() {
        let params = MmcParams::new(lambda, vnf.mu, vnf.servers)?;
        let latency = params
            .station_latency()
            .map_err(|e| e.for_station(&vnf.id))?;
        total += latency;
        per_stage.push(StageEstimate {
            stage: i,
            members: vnf.id.clone(),
            latency,
        });
    }
    Ok(ChainEstimate {
        mode: EstimateMode::Serial,
        per_stage,
        total,
    })
}

/// Analytic latency of a staged plan: stage latency is the max over member
/// stations plus the merge overhead; stages add up. Every station sees the
/// full arrival rate.
pub fn chain_latency_staged(
    plan: &StagePlan,
    chain: &[VnfInstance],
    lambda: f64,
) -> Result<ChainEstimate, QueueingError> {
    let mut per_stage = Vec::with_capacity(plan.stages.len());
    let mut total = 0.0;
    for (i, stage) in plan.stages.iter().enumerate() {
        let mut stage_latency = f64::NEG_INFINITY;
        for id in stage {
            let vnf = chain
                .iter()
                .find(|v| &v.id == id)
                .unwrap_or_else(|| panic!("stage plan names unknown station '{id}'"));
            let params = MmcParams::new(lambda, vnf.mu, vnf.servers)?;
            let latency = params
                .station_latency()
                .map_err(|e| e.for_station(&vnf.id))?;
            stage_latency = stage_latency.max(latency);
        }
        let stage_latency = stage_latency + plan.merge_overhead;
        total += stage_latency;
        per_stage.push(StageEstimate {
            stage: i,
            members: stage.join("+"),
            latency: stage_latency,
        });
    }
    Ok(ChainEstimate {
        mode: EstimateMode::Staged,
        per_stage,
        total,
    })
}
