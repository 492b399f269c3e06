// SPDX-License-Identifier: Apache-2.0

//! Hazard-aware parallelization of virtual network function chains.
//!
//! The crate decides which VNFs in a service chain can safely execute in
//! parallel, predicts chain latency with an M/M/c queueing model, and
//! validates the predictions with a seeded discrete-event simulator.
//!
//! The pipeline, end to end:
//!
//! 1. [`policy`] parses a small security-policy DSL (firewall / IDS / NAT /
//!    VPN rules) and compiles each line to an abstract flow rule, with match
//!    overlap classification and table aggregation.
//! 2. [`analysis`] classifies ordered VNF pairs by read/write hazards on
//!    header and payload, packs a chain into parallel stages, and reorders
//!    chains under security and efficiency constraints.
//! 3. [`queueing`] evaluates the M/M/c equilibrium formulas per station and
//!    composes them into whole-chain latency estimates.
//! 4. [`sim`] runs packets through the chain serially or staged-parallel and
//!    reports latency statistics comparable to the analytic model.
//! 5. [`report`] ships a reference latency dataset and computes speedup
//!    ratios; the `sfcnfp` binary ties everything to the command line.

pub mod analysis;
pub mod policy;
pub mod queueing;
pub mod report;
pub mod sim;

pub use analysis::{
    build_stage_plan, classify_pair, nfp_action_rule, parallelizable, reorder_chain,
    AccessProfile, ActionOrder, Hazard, HazardKind, Region, StagePlan, VnfInstance, VnfKind,
};
pub use policy::{
    aggregate_rules, compile_to_flow_table, match_overlap, parse_policy, FlowRule, MatchPattern,
    OverlapRelation, PolicySet, RuleAction,
};
pub use queueing::{ChainEstimate, MmcMetrics, MmcParams};
pub use sim::{compare_modes, run_nfp, run_serial, validate_littles_law, LatencyStats, SimConfig};
