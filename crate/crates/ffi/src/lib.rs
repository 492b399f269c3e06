// SPDX-License-Identifier: Apache-2.0

//! C ABI for the service-chain library.
//!
//! Conventions:
//! - every fallible call returns an [`SfcStatus`]; `Ok` is 0;
//! - on failure, [`sfc_last_error_message`] returns a thread-local detail
//!   string valid until the next failing call on the same thread;
//! - handles (`SfcChain`, `SfcStagePlan`, `SfcFlowTable`) are opaque and
//!   must be released with their matching `_free` function;
//! - strings returned through `char **` out-parameters are heap-allocated
//!   and must be released with [`sfc_string_free`].
//!
//! The matching header is generated into `include/sfc_nfp.h` at build time.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;

use sfc_nfp::analysis::{
    build_stage_plan, parse_chain_spec, AnalysisError, StagePlan, VnfInstance,
};
use sfc_nfp::policy::{compile_to_flow_table, flow_table_to_csv, parse_policy, FlowRule};
use sfc_nfp::queueing::{chain_latency_serial, chain_latency_staged, MmcParams, QueueingError};
use sfc_nfp::sim::{compare_modes, Horizon, SimConfig, SimError};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfcStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    InvalidArgument = 4,
    Unstable = 5,
    Infeasible = 6,
    InternalError = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: SfcStatus, message: impl AsRef<str>) -> SfcStatus {
    let sanitized = message.as_ref().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
    status
}

fn status_of_analysis(e: &AnalysisError) -> SfcStatus {
    match e {
        AnalysisError::InfeasibleOrder { .. } => SfcStatus::Infeasible,
        AnalysisError::EmptyChain | AnalysisError::DuplicateId { .. } => SfcStatus::InvalidArgument,
        _ => SfcStatus::ParseError,
    }
}

fn status_of_queueing(e: &QueueingError) -> SfcStatus {
    match e {
        QueueingError::Unstable { .. } => SfcStatus::Unstable,
        QueueingError::InvalidParams { .. } => SfcStatus::InvalidArgument,
        QueueingError::MeanWaitMismatch { .. } => SfcStatus::InternalError,
    }
}

fn status_of_sim(e: &SimError) -> SfcStatus {
    match e {
        SimError::Analysis(inner) => status_of_analysis(inner),
        SimError::Queueing(inner) => status_of_queueing(inner),
        SimError::EmptyStats | SimError::InvalidConfig { .. } => SfcStatus::InvalidArgument,
        _ => SfcStatus::ParseError,
    }
}

/// Message describing the most recent failure on this thread. Never null;
/// empty before the first failure. Valid until the next failing call on
/// the same thread.
#[no_mangle]
pub extern "C" fn sfc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Release a string returned through a `char **` out-parameter. Null is
/// ignored.
///
/// # Safety
/// `s` must be null or a pointer previously returned by this library and
/// not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sfc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

unsafe fn read_utf8<'a>(text: *const c_char) -> Result<&'a str, SfcStatus> {
    if text.is_null() {
        return Err(fail(SfcStatus::NullArgument, "text pointer is null"));
    }
    CStr::from_ptr(text)
        .to_str()
        .map_err(|_| fail(SfcStatus::InvalidUtf8, "text is not valid UTF-8"))
}

fn export_string(s: String, out: *mut *mut c_char) -> SfcStatus {
    match CString::new(s) {
        Ok(c) => {
            unsafe { *out = c.into_raw() };
            SfcStatus::Ok
        }
        Err(_) => fail(SfcStatus::InternalError, "output contained a NUL byte"),
    }
}

// ---------------------------------------------------------------------------
// Station metrics
// ---------------------------------------------------------------------------

/// Derived M/M/c station quantities.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SfcMmcMetrics {
    /// Per-server utilization, `lambda / (c * mu)`.
    pub rho: f64,
    /// Probability of an empty station.
    pub p0: f64,
    /// Probability an arrival has to queue.
    pub delay_probability: f64,
    /// Mean number of queued packets.
    pub mean_queue_length: f64,
    /// Mean queue wait, seconds.
    pub mean_wait: f64,
}

/// Evaluate all M/M/c metrics for one station.
///
/// # Safety
/// `out` must point to writable memory for one `SfcMmcMetrics`.
#[no_mangle]
pub unsafe extern "C" fn sfc_mmc_metrics(
    lambda: f64,
    mu: f64,
    servers: u32,
    out: *mut SfcMmcMetrics,
) -> SfcStatus {
    if out.is_null() {
        return fail(SfcStatus::NullArgument, "out pointer is null");
    }
    let params = match MmcParams::new(lambda, mu, servers) {
        Ok(p) => p,
        Err(e) => return fail(status_of_queueing(&e), e.to_string()),
    };
    match params.metrics() {
        Ok(m) => {
            *out = SfcMmcMetrics {
                rho: m.rho,
                p0: m.p0,
                delay_probability: m.delay_probability,
                mean_queue_length: m.mean_queue_length,
                mean_wait: m.mean_wait,
            };
            SfcStatus::Ok
        }
        Err(e) => fail(status_of_queueing(&e), e.to_string()),
    }
}

// ---------------------------------------------------------------------------
// Chains and stage plans
// ---------------------------------------------------------------------------

/// Opaque handle: a parsed VNF chain.
pub struct SfcChain(Vec<VnfInstance>);

/// Opaque handle: a parallel-stage plan for a chain.
pub struct SfcStagePlan(StagePlan);

/// Parse a chain spec (`id kind mu=<float> c=<int>` per line) into a chain
/// handle.
///
/// # Safety
/// `text` must be a valid NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sfc_chain_parse(
    text: *const c_char,
    out: *mut *mut SfcChain,
) -> SfcStatus {
    if out.is_null() {
        return fail(SfcStatus::NullArgument, "out pointer is null");
    }
    let text = match read_utf8(text) {
        Ok(t) => t,
        Err(status) => return status,
    };
    match parse_chain_spec(text) {
        Ok(chain) => {
            *out = Box::into_raw(Box::new(SfcChain(chain)));
            SfcStatus::Ok
        }
        Err(e) => fail(status_of_analysis(&e), e.to_string()),
    }
}

/// Number of functions in the chain. Null yields 0.
///
/// # Safety
/// `chain` must be null or a live chain handle.
#[no_mangle]
pub unsafe extern "C" fn sfc_chain_len(chain: *const SfcChain) -> usize {
    chain.as_ref().map_or(0, |c| c.0.len())
}

/// # Safety
/// `chain` must be null or a chain handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sfc_chain_free(chain: *mut SfcChain) {
    if !chain.is_null() {
        drop(Box::from_raw(chain));
    }
}

/// Pack the chain into parallel stages.
///
/// # Safety
/// `chain` must be a live chain handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sfc_stage_plan_build(
    chain: *const SfcChain,
    out: *mut *mut SfcStagePlan,
) -> SfcStatus {
    if chain.is_null() || out.is_null() {
        return fail(SfcStatus::NullArgument, "chain or out pointer is null");
    }
    match build_stage_plan(&(*chain).0) {
        Ok(plan) => {
            *out = Box::into_raw(Box::new(SfcStagePlan(plan)));
            SfcStatus::Ok
        }
        Err(e) => fail(status_of_analysis(&e), e.to_string()),
    }
}

/// Number of stages in the plan. Null yields 0.
///
/// # Safety
/// `plan` must be null or a live plan handle.
#[no_mangle]
pub unsafe extern "C" fn sfc_stage_plan_stage_count(plan: *const SfcStagePlan) -> usize {
    plan.as_ref().map_or(0, |p| p.0.stages.len())
}

/// Render the plan as a JSON array of arrays of ids. The returned string
/// must be released with `sfc_string_free`.
///
/// # Safety
/// `plan` must be a live plan handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sfc_stage_plan_to_json(
    plan: *const SfcStagePlan,
    out: *mut *mut c_char,
) -> SfcStatus {
    if plan.is_null() || out.is_null() {
        return fail(SfcStatus::NullArgument, "plan or out pointer is null");
    }
    export_string((*plan).0.to_json(), out)
}

/// # Safety
/// `plan` must be null or a plan handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sfc_stage_plan_free(plan: *mut SfcStagePlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

/// Opaque handle: a compiled, priority-ordered flow table.
pub struct SfcFlowTable(Vec<FlowRule>);

/// Parse a policy document and compile it to a flow table handle.
///
/// # Safety
/// `text` must be a valid NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sfc_policy_compile(
    text: *const c_char,
    out: *mut *mut SfcFlowTable,
) -> SfcStatus {
    if out.is_null() {
        return fail(SfcStatus::NullArgument, "out pointer is null");
    }
    let text = match read_utf8(text) {
        Ok(t) => t,
        Err(status) => return status,
    };
    let set = match parse_policy(text) {
        Ok(s) => s,
        Err(e) => return fail(SfcStatus::ParseError, e.to_string()),
    };
    match compile_to_flow_table(&set) {
        Ok(table) => {
            *out = Box::into_raw(Box::new(SfcFlowTable(table)));
            SfcStatus::Ok
        }
        Err(e) => fail(SfcStatus::ParseError, e.to_string()),
    }
}

/// Number of rules in the table. Null yields 0.
///
/// # Safety
/// `table` must be null or a live flow-table handle.
#[no_mangle]
pub unsafe extern "C" fn sfc_flow_table_len(table: *const SfcFlowTable) -> usize {
    table.as_ref().map_or(0, |t| t.0.len())
}

/// Render the table as CSV (`priority,src,sport,dst,dport,proto,actions,origin`).
/// The returned string must be released with `sfc_string_free`.
///
/// # Safety
/// `table` must be a live flow-table handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sfc_flow_table_to_csv(
    table: *const SfcFlowTable,
    out: *mut *mut c_char,
) -> SfcStatus {
    if table.is_null() || out.is_null() {
        return fail(SfcStatus::NullArgument, "table or out pointer is null");
    }
    export_string(flow_table_to_csv(&(*table).0), out)
}

/// # Safety
/// `table` must be null or a flow-table handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sfc_flow_table_free(table: *mut SfcFlowTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

// ---------------------------------------------------------------------------
// Estimates and simulation
// ---------------------------------------------------------------------------

/// Analytic end-to-end latency of the chain at arrival rate `lambda`:
/// serial when `staged` is false, otherwise the staged plan with `epsilon`
/// merge overhead per stage.
///
/// # Safety
/// `chain` must be a live chain handle; `total_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sfc_chain_estimate(
    chain: *const SfcChain,
    lambda: f64,
    staged: bool,
    epsilon: f64,
    total_out: *mut f64,
) -> SfcStatus {
    if chain.is_null() || total_out.is_null() {
        return fail(SfcStatus::NullArgument, "chain or out pointer is null");
    }
    let chain = &(*chain).0;
    let estimate = if staged {
        match build_stage_plan(chain) {
            Ok(plan) => chain_latency_staged(&plan.with_merge_overhead(epsilon), chain, lambda),
            Err(e) => return fail(status_of_analysis(&e), e.to_string()),
        }
    } else {
        chain_latency_serial(chain, lambda)
    };
    match estimate {
        Ok(est) => {
            *total_out = est.total;
            SfcStatus::Ok
        }
        Err(e) => fail(status_of_queueing(&e), e.to_string()),
    }
}

/// Simulation settings for [`sfc_simulate_compare`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SfcSimConfig {
    pub seed: u64,
    /// Offered arrival rate, packets/sec.
    pub lambda: f64,
    /// Packets generated per run.
    pub horizon_packets: u64,
    /// Packets discarded before measuring.
    pub warmup: u64,
    /// Merge-barrier cost per stage, seconds.
    pub merge_overhead: f64,
    /// Let drop-capable stations remove packets.
    pub thinning: bool,
    /// Per-station drop probability when thinning.
    pub drop_probability: f64,
}

/// Aggregate results of a serial vs staged comparison.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SfcComparison {
    /// Mean end-to-end latency of the serial runs, seconds.
    pub serial_mean: f64,
    /// Mean end-to-end latency of the staged runs, seconds.
    pub nfp_mean: f64,
    /// Analytic serial-chain latency, seconds.
    pub theoretical_total: f64,
    pub gain_serial_over_nfp: f64,
    pub gain_theoretical_over_nfp: f64,
    /// Stages in the plan the staged runs executed.
    pub stage_count: u32,
}

/// Simulate the chain serial and staged over `replications` seeds and
/// report the averaged means, the analytic estimate, and both gains.
///
/// # Safety
/// `chain` must be a live chain handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sfc_simulate_compare(
    chain: *const SfcChain,
    cfg: SfcSimConfig,
    replications: u32,
    out: *mut SfcComparison,
) -> SfcStatus {
    if chain.is_null() || out.is_null() {
        return fail(SfcStatus::NullArgument, "chain or out pointer is null");
    }
    let config = SimConfig {
        seed: cfg.seed,
        lambda: cfg.lambda,
        horizon: Horizon::Packets(cfg.horizon_packets),
        warmup: cfg.warmup,
        merge_overhead: cfg.merge_overhead,
        thinning: cfg.thinning,
        drop_probability: cfg.drop_probability,
    };
    match compare_modes(&(*chain).0, &config, replications) {
        Ok(report) => {
            *out = SfcComparison {
                serial_mean: report.serial_mean,
                nfp_mean: report.nfp_mean,
                theoretical_total: report.theoretical.total,
                gain_serial_over_nfp: report.gain_serial_over_nfp,
                gain_theoretical_over_nfp: report.gain_theoretical_over_nfp,
                stage_count: report.plan.stages.len() as u32,
            };
            SfcStatus::Ok
        }
        Err(e) => fail(status_of_sim(&e), e.to_string()),
    }
}
