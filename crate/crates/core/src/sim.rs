// SPDX-License-Identifier: Apache-2.0

//! Seeded discrete-event simulation of packets traversing a VNF chain.
//!
//! Arrivals are Poisson; every station is an M/M/c FIFO queue. Two
//! execution modes are simulated: serial (stations visited in chain order)
//! and staged-parallel (a stage broadcasts the packet to all members and
//! joins on the slowest, paying the merge overhead). Every random draw
//! comes from a stream derived from the master seed and a stable label, so
//! runs are bit-reproducible and adding a station never perturbs another
//! station's draws.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{build_stage_plan, AnalysisError, StagePlan, VnfInstance};
use crate::queueing::{chain_latency_serial, ChainEstimate, QueueingError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("statistics are empty (no measured packets)")]
    EmptyStats,
    #[error("invalid simulation config: {reason}")]
    InvalidConfig { reason: String },
    #[error("scenario line {line}: {reason}")]
    Scenario { line: u32, reason: String },
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Queueing(#[from] QueueingError),
    #[error("invalid comparison CSV: {0}")]
    Csv(#[from] csv::Error),
}

/// Measurement horizon: a fixed packet count or a span of simulated time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    Packets(u64),
    Seconds(f64),
}

/// Simulation parameters. `warmup` packets are discarded before statistics
/// start; `thinning` lets drop-capable stations remove packets with
/// probability `drop_probability` instead of forwarding everything.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    pub lambda: f64,
    pub horizon: Horizon,
    pub warmup: u64,
    pub merge_overhead: f64,
    pub thinning: bool,
    pub drop_probability: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 1,
            lambda: 1.0,
            horizon: Horizon::Packets(1_000_000),
            warmup: 10_000,
            merge_overhead: 0.0,
            thinning: false,
            drop_probability: 0.0,
        }
    }
}

impl SimConfig {
    fn validate(&self) -> Result<(), SimError> {
        if !crate::queueing::positive_rate(self.lambda) {
            return Err(SimError::InvalidConfig {
                reason: format!("lambda={} must be > 0", self.lambda),
            });
        }
        if let Horizon::Packets(h) = self.horizon {
            if h < self.warmup {
                return Err(SimError::InvalidConfig {
                    reason: format!("horizon {h} below warmup {}", self.warmup),
                });
            }
        }
        if self.merge_overhead < 0.0 {
            return Err(SimError::InvalidConfig {
                reason: "merge overhead must be >= 0".to_string(),
            });
        }
        Ok(())
    }
}

/// Per-station observations from one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationStats {
    pub id: String,
    /// Fraction of total server capacity kept busy.
    pub utilization: f64,
    /// Mean time measured packets spent queued before service.
    pub mean_queue_wait: f64,
}

/// End-to-end latency summary of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    /// Measured packets that completed the chain.
    pub count: u64,
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
    /// Time-average number of measured packets in the system.
    pub mean_in_system: f64,
    pub stations: Vec<StationStats>,
    /// Any station observed above 99% utilization.
    pub saturated: bool,
    /// Measured packets removed by thinning.
    pub dropped: u64,
}

impl LatencyStats {
    fn empty(stations: Vec<StationStats>) -> Self {
        LatencyStats {
            count: 0,
            mean: 0.0,
            p50: 0.0,
            p95: 0.0,
            p99: 0.0,
            mean_in_system: 0.0,
            stations,
            saturated: false,
            dropped: 0,
        }
    }
}

/// Relative Little's-law residual `|L - lambda * W| / (lambda * W)` for a
/// completed run.
pub fn validate_littles_law(stats: &LatencyStats, lambda: f64) -> Result<f64, SimError> {
    if stats.count == 0 {
        return Err(SimError::EmptyStats);
    }
    let expected = lambda * stats.mean;
    Ok((stats.mean_in_system - expected).abs() / expected)
}

// ---------------------------------------------------------------------------
// RNG streams
// ---------------------------------------------------------------------------

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A named stream: FNV-1a over the label, mixed with the master seed.
fn stream_rng(master: u64, label: &str) -> ChaCha12Rng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    ChaCha12Rng::seed_from_u64(splitmix64(master ^ h))
}

fn exp_draw(rng: &mut ChaCha12Rng, rate: f64) -> f64 {
    let u: f64 = rng.gen();
    -(1.0 - u).ln() / rate
}

// ---------------------------------------------------------------------------
// Stations
// ---------------------------------------------------------------------------

#[derive(PartialEq)]
struct TotalF64(f64);

impl Eq for TotalF64 {}

impl PartialOrd for TotalF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for TotalF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

struct Station<'a> {
    vnf: &'a VnfInstance,
    service_rng: ChaCha12Rng,
    drop_rng: ChaCha12Rng,
    /// Next-free times of servers that have served at least once.
    busy: BinaryHeap<Reverse<TotalF64>>,
    spawned: u32,
    busy_time: f64,
    wait_sum: f64,
    wait_count: u64,
}

impl<'a> Station<'a> {
    fn new(vnf: &'a VnfInstance, master_seed: u64) -> Self {
        Station {
            vnf,
            service_rng: stream_rng(master_seed, &format!("service:{}", vnf.id)),
            drop_rng: stream_rng(master_seed, &format!("drop:{}", vnf.id)),
            busy: BinaryHeap::new(),
            spawned: 0,
            busy_time: 0.0,
            wait_sum: 0.0,
            wait_count: 0,
        }
    }

    /// Serve one packet arriving at `arrival`; packets must be offered in
    /// arrival order (FIFO). Returns the departure time.
    fn serve(&mut self, arrival: f64, measured: bool) -> f64 {
        let available = if self.spawned < self.vnf.servers {
            self.spawned += 1;
            0.0
        } else {
            self.busy.pop().expect("spawned servers are in the heap").0 .0
        };
        let start = arrival.max(available);
        let service = exp_draw(&mut self.service_rng, self.vnf.mu);
        let departure = start + service;
        self.busy.push(Reverse(TotalF64(departure)));
        self.busy_time += service;
        if measured {
            self.wait_sum += start - arrival;
            self.wait_count += 1;
        }
        departure
    }

    fn drops(&mut self, probability: f64) -> bool {
        self.vnf.profile.can_drop && self.drop_rng.gen::<f64>() < probability
    }

    fn stats(&self, span: f64) -> StationStats {
        StationStats {
            id: self.vnf.id.clone(),
            utilization: if span > 0.0 {
                self.busy_time / (self.vnf.servers as f64 * span)
            } else {
                0.0
            },
            mean_queue_wait: if self.wait_count > 0 {
                self.wait_sum / self.wait_count as f64
            } else {
                0.0
            },
        }
    }
}

fn poisson_arrivals(cfg: &SimConfig) -> Vec<f64> {
    let mut rng = stream_rng(cfg.seed, "arrivals");
    let mut t = 0.0;
    match cfg.horizon {
        Horizon::Packets(n) => (0..n)
            .map(|_| {
                t += exp_draw(&mut rng, cfg.lambda);
                t
            })
            .collect(),
        Horizon::Seconds(limit) => {
            let mut out = Vec::new();
            loop {
                t += exp_draw(&mut rng, cfg.lambda);
                if t > limit {
                    break;
                }
                out.push(t);
            }
            out
        }
    }
}

// ---------------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------------

struct RunOutcome {
    stats: LatencyStats,
    /// Per-packet sojourn of measured completions, in packet order; the
    /// equivalence tests compare runs packet by packet through this.
    #[cfg_attr(not(test), allow(dead_code))]
    sojourns: Vec<f64>,
}

fn finish_run(
    arrivals: &[f64],
    completion: &[f64],
    alive: &[bool],
    warmup: u64,
    stations: &[Station<'_>],
) -> RunOutcome {
    let n = arrivals.len();
    let span = completion.iter().copied().fold(0.0_f64, f64::max);
    // chain order
    let station_stats: Vec<StationStats> = stations.iter().map(|s| s.stats(span)).collect();
    let saturated = station_stats.iter().any(|s| s.utilization > 0.99);

    let mut sojourns = Vec::new();
    let mut events: Vec<(f64, i32)> = Vec::new();
    let mut dropped = 0u64;
    let mut first_arrival = f64::INFINITY;
    let mut last_completion = 0.0_f64;
    for i in warmup as usize..n {
        if !alive[i] {
            dropped += 1;
            continue;
        }
        sojourns.push(completion[i] - arrivals[i]);
        events.push((arrivals[i], 1));
        events.push((completion[i], -1));
        first_arrival = first_arrival.min(arrivals[i]);
        last_completion = last_completion.max(completion[i]);
    }
    if sojourns.is_empty() {
        let mut stats = LatencyStats::empty(station_stats);
        stats.saturated = saturated;
        stats.dropped = dropped;
        return RunOutcome {
            stats,
            sojourns,
        };
    }

    let count = sojourns.len() as u64;
    let mean = sojourns.iter().sum::<f64>() / count as f64;
    let mut sorted = sojourns.clone();
    sorted.sort_by(f64::total_cmp);
    let quantile = |q: f64| -> f64 {
        let rank = ((q * count as f64).ceil() as usize).clamp(1, count as usize);
        sorted[rank - 1]
    };

    // time-average population over the measured window
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut area = 0.0;
    let mut population = 0i64;
    let mut prev_t = first_arrival;
    for (t, delta) in events {
        area += population as f64 * (t - prev_t);
        population += delta as i64;
        prev_t = t;
    }
    let window = last_completion - first_arrival;
    let mean_in_system = if window > 0.0 { area / window } else { 0.0 };

    RunOutcome {
        stats: LatencyStats {
            count,
            mean,
            p50: quantile(0.50),
            p95: quantile(0.95),
            p99: quantile(0.99),
            mean_in_system,
            stations: station_stats,
            saturated,
            dropped,
        },
        sojourns,
    }
}

fn resort(order: &mut [u32], time: &[f64]) {
    order.sort_by(|&a, &b| {
        time[a as usize]
            .total_cmp(&time[b as usize])
            .then(a.cmp(&b))
    });
}

fn run_serial_outcome(chain: &[VnfInstance], cfg: &SimConfig) -> Result<RunOutcome, SimError> {
    if chain.is_empty() {
        return Err(AnalysisError::EmptyChain.into());
    }
    cfg.validate()?;
    let arrivals = poisson_arrivals(cfg);
    let n = arrivals.len();
    let mut stations: Vec<Station> = chain.iter().map(|v| Station::new(v, cfg.seed)).collect();
    let mut time = arrivals.clone();
    let mut alive = vec![true; n];
    let mut order: Vec<u32> = (0..n as u32).collect();
    for st in &mut stations {
        for &i in &order {
            let i = i as usize;
            if !alive[i] {
                continue;
            }
            time[i] = st.serve(time[i], i as u64 >= cfg.warmup);
            if cfg.thinning && st.drops(cfg.drop_probability) {
                alive[i] = false;
            }
        }
        resort(&mut order, &time);
    }
    Ok(finish_run(&arrivals, &time, &alive, cfg.warmup, &stations))
}

fn run_nfp_outcome(
    plan: &StagePlan,
    chain: &[VnfInstance],
    cfg: &SimConfig,
) -> Result<RunOutcome, SimError> {
    cfg.validate()?;
    // resolve plan ids against the chain
    let mut stage_members: Vec<Vec<usize>> = Vec::with_capacity(plan.stages.len());
    for stage in &plan.stages {
        let mut members = Vec::with_capacity(stage.len());
        for id in stage {
            let idx = chain.iter().position(|v| &v.id == id).ok_or_else(|| {
                SimError::InvalidConfig {
                    reason: format!("stage plan names unknown station '{id}'"),
                }
            })?;
            members.push(idx);
        }
        stage_members.push(members);
    }
    if stage_members.is_empty() {
        return Err(AnalysisError::EmptyChain.into());
    }

    let arrivals = poisson_arrivals(cfg);
    let n = arrivals.len();
    let mut stations: Vec<Station> = chain.iter().map(|v| Station::new(v, cfg.seed)).collect();
    let mut time = arrivals.clone();
    let mut alive = vec![true; n];
    let mut order: Vec<u32> = (0..n as u32).collect();
    let mut join_time = vec![0.0_f64; n];
    let mut drop_mark = vec![false; n];
    for members in &stage_members {
        for i in 0..n {
            join_time[i] = f64::NEG_INFINITY;
            drop_mark[i] = false;
        }
        for &m in members {
            let st = &mut stations[m];
            for &i in &order {
                let i = i as usize;
                if !alive[i] {
                    continue;
                }
                let departure = st.serve(time[i], i as u64 >= cfg.warmup);
                if departure > join_time[i] {
                    join_time[i] = departure;
                }
                if cfg.thinning && st.drops(cfg.drop_probability) {
                    drop_mark[i] = true;
                }
            }
        }
        for i in 0..n {
            if !alive[i] {
                continue;
            }
            time[i] = join_time[i] + plan.merge_overhead;
            if drop_mark[i] {
                alive[i] = false;
            }
        }
        resort(&mut order, &time);
    }
    Ok(finish_run(&arrivals, &time, &alive, cfg.warmup, &stations))
}

/// Simulate the chain with stations visited strictly in order.
pub fn run_serial(chain: &[VnfInstance], cfg: &SimConfig) -> Result<LatencyStats, SimError> {
    run_serial_outcome(chain, cfg).map(|o| o.stats)
}

/// Simulate a staged plan: each stage broadcasts the packet to every member
/// and completes at the slowest member plus the merge overhead.
pub fn run_nfp(
    plan: &StagePlan,
    chain: &[VnfInstance],
    cfg: &SimConfig,
) -> Result<LatencyStats, SimError> {
    run_nfp_outcome(plan, chain, cfg).map(|o| o.stats)
}

// ---------------------------------------------------------------------------
// Mode comparison
// ---------------------------------------------------------------------------

/// Side-by-side results of the serial simulation, the analytic estimate,
/// and the staged-parallel simulation over one or more seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub lambda: f64,
    pub plan: StagePlan,
    pub theoretical: ChainEstimate,
    pub serial_runs: Vec<(u64, LatencyStats)>,
    pub nfp_runs: Vec<(u64, LatencyStats)>,
    /// Means averaged across replications.
    pub serial_mean: f64,
    pub nfp_mean: f64,
    pub gain_serial_over_nfp: f64,
    pub gain_theoretical_over_nfp: f64,
}

/// Run serial and staged simulations over `replications` seeds
/// (`cfg.seed + i`), average the means, and relate both to the analytic
/// serial estimate.
pub fn compare_modes(
    chain: &[VnfInstance],
    cfg: &SimConfig,
    replications: u32,
) -> Result<ComparisonReport, SimError> {
    if replications < 1 {
        return Err(SimError::InvalidConfig {
            reason: "replications must be >= 1".to_string(),
        });
    }
    let plan = build_stage_plan(chain)?.with_merge_overhead(cfg.merge_overhead);
    let theoretical = chain_latency_serial(chain, cfg.lambda)?;
    let mut serial_runs = Vec::with_capacity(replications as usize);
    let mut nfp_runs = Vec::with_capacity(replications as usize);
    for i in 0..replications as u64 {
        let mut run_cfg = cfg.clone();
        run_cfg.seed = cfg.seed + i;
        serial_runs.push((run_cfg.seed, run_serial(chain, &run_cfg)?));
        nfp_runs.push((run_cfg.seed, run_nfp(&plan, chain, &run_cfg)?));
    }
    let avg = |runs: &[(u64, LatencyStats)]| {
        runs.iter().map(|(_, s)| s.mean).sum::<f64>() / runs.len() as f64
    };
    let serial_mean = avg(&serial_runs);
    let nfp_mean = avg(&nfp_runs);
    Ok(ComparisonReport {
        lambda: cfg.lambda,
        plan,
        theoretical: theoretical.clone(),
        serial_runs,
        nfp_runs,
        serial_mean,
        nfp_mean,
        gain_serial_over_nfp: serial_mean / nfp_mean,
        gain_theoretical_over_nfp: theoretical.total / nfp_mean,
    })
}

/// One row of the comparison CSV
/// (`mode,seed,count,mean,p50,p95,p99,littles_residual`). The analytic row
/// carries only `mode` and `mean`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub mode: String,
    pub seed: Option<u64>,
    pub count: Option<u64>,
    pub mean: f64,
    pub p50: Option<f64>,
    pub p95: Option<f64>,
    pub p99: Option<f64>,
    pub littles_residual: Option<f64>,
}

impl ComparisonReport {
    pub fn rows(&self) -> Vec<ComparisonRow> {
        let run_row = |mode: &str, seed: u64, s: &LatencyStats| ComparisonRow {
            mode: mode.to_string(),
            seed: Some(seed),
            count: Some(s.count),
            mean: s.mean,
            p50: Some(s.p50),
            p95: Some(s.p95),
            p99: Some(s.p99),
            littles_residual: validate_littles_law(s, self.lambda).ok(),
        };
        let mut rows: Vec<ComparisonRow> = self
            .serial_runs
            .iter()
            .map(|(seed, s)| run_row("serial", *seed, s))
            .collect();
        rows.push(ComparisonRow {
            mode: "theoretical".to_string(),
            seed: None,
            count: None,
            mean: self.theoretical.total,
            p50: None,
            p95: None,
            p99: None,
            littles_residual: None,
        });
        rows.extend(self.nfp_runs.iter().map(|(seed, s)| run_row("nfp", *seed, s)));
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in self.rows() {
            w.serialize(row).expect("csv serialize");
        }
        String::from_utf8(w.into_inner().expect("csv flush")).expect("utf8")
    }
}

/// Parse comparison rows back from CSV.
pub fn comparison_rows_from_csv(text: &str) -> Result<Vec<ComparisonRow>, SimError> {
    Ok(csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<Vec<ComparisonRow>, csv::Error>>()?)
}

// ---------------------------------------------------------------------------
// Scenario files
// ---------------------------------------------------------------------------

/// A parsed scenario file: the referenced chain spec plus simulation
/// settings, `key = value` per line.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Chain spec path as written in the file.
    pub chain: String,
    pub config: SimConfig,
    /// Per-node arrival rate used by size sweeps (`lambda = size * rate`).
    pub base_node_rate: f64,
}

/// Parse a scenario document. Recognized keys: `chain` (required), `seed`,
/// `lambda`, `horizon` (packets), `horizon_secs`, `warmup`, `epsilon`,
/// `thinning`, `drop_prob`, `base_rate`.
pub fn parse_scenario(text: &str) -> Result<Scenario, SimError> {
    let mut chain: Option<String> = None;
    let mut config = SimConfig::default();
    let mut base_node_rate = 0.005;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx as u32 + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| SimError::Scenario {
            line: line_no,
            reason: "expected 'key = value'".to_string(),
        })?;
        let key = key.trim();
        let value = value.trim();
        let bad = |what: &str| SimError::Scenario {
            line: line_no,
            reason: format!("invalid {what} '{value}'"),
        };
        match key {
            "chain" => chain = Some(value.to_string()),
            "seed" => config.seed = value.parse().map_err(|_| bad("seed"))?,
            "lambda" => config.lambda = value.parse().map_err(|_| bad("lambda"))?,
            "horizon" => {
                config.horizon = Horizon::Packets(value.parse().map_err(|_| bad("horizon"))?)
            }
            "horizon_secs" => {
                config.horizon = Horizon::Seconds(value.parse().map_err(|_| bad("horizon_secs"))?)
            }
            "warmup" => config.warmup = value.parse().map_err(|_| bad("warmup"))?,
            "epsilon" => {
                config.merge_overhead = value.parse().map_err(|_| bad("epsilon"))?
            }
            "thinning" => config.thinning = value.parse().map_err(|_| bad("thinning"))?,
            "drop_prob" => {
                config.drop_probability = value.parse().map_err(|_| bad("drop_prob"))?
            }
            "base_rate" => base_node_rate = value.parse().map_err(|_| bad("base_rate"))?,
            other => {
                return Err(SimError::Scenario {
                    line: line_no,
                    reason: format!("unknown key '{other}'"),
                })
            }
        }
    }
    let chain = chain.ok_or(SimError::Scenario {
        line: 0,
        reason: "missing required key 'chain'".to_string(),
    })?;
    config.validate()?;
    Ok(Scenario {
        chain,
        config,
        base_node_rate,
    })
}
