// SPDX-License-Identifier: Apache-2.0

//! Read/write hazard analysis between chained network functions.
//!
//! Each function declares what it does to the packet header and payload
//! (nothing, read, write, or both). For an ordered pair the per-region
//! hazard is one of RAR, WAR, RAW, WAW, or NONE; a pair may execute in
//! parallel when every region is RAR, WAR, or NONE. Stage planning packs a
//! chain greedily into parallel stages, and `reorder_chain` applies the two
//! ordering constraints that matter for security chains: payload readers
//! must see traffic before it is encrypted, and a blocker whose match is
//! covered by a monitor's match should run first so the monitor skips
//! traffic that would be dropped anyway.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{match_overlap, FlowRule, OverlapRelation, RuleAction};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("chain is empty")]
    EmptyChain,
    #[error("duplicate VNF id '{id}' in chain")]
    DuplicateId { id: String },
    #[error("chain spec line {line}: {reason}")]
    ChainSyntax { line: u32, reason: String },
    #[error("invalid VNF '{id}': {reason}")]
    InvalidInstance { id: String, reason: String },
    #[error("infeasible ordering constraints: {reason}")]
    InfeasibleOrder { reason: String },
    #[error("invalid stage plan JSON: {0}")]
    PlanJson(#[from] serde_json::Error),
}

// ---------------------------------------------------------------------------
// Access profiles
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeaderAccess {
    None,
    Read,
    ReadWrite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadAccess {
    None,
    Read,
    ReadWrite,
    Write,
}

/// What a function does to each packet region, plus whether it can drop
/// packets or encrypts the payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessProfile {
    pub header: HeaderAccess,
    pub payload: PayloadAccess,
    pub can_drop: bool,
    pub encrypts_payload: bool,
}

impl AccessProfile {
    pub fn new(
        header: HeaderAccess,
        payload: PayloadAccess,
        can_drop: bool,
        encrypts_payload: bool,
    ) -> Result<Self, String> {
        if encrypts_payload
            && !matches!(payload, PayloadAccess::Write | PayloadAccess::ReadWrite)
        {
            return Err("an encrypting function must write the payload".to_string());
        }
        Ok(AccessProfile {
            header,
            payload,
            can_drop,
            encrypts_payload,
        })
    }

    pub fn reads_payload(&self) -> bool {
        matches!(self.payload, PayloadAccess::Read | PayloadAccess::ReadWrite)
    }
}

/// The eight supported function kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VnfKind {
    Probe,
    Nat,
    Firewall,
    Proxy,
    Ids,
    Ips,
    LoadBalancer,
    Vpn,
}

pub const ALL_KINDS: [VnfKind; 8] = [
    VnfKind::Probe,
    VnfKind::Nat,
    VnfKind::Firewall,
    VnfKind::Proxy,
    VnfKind::Ids,
    VnfKind::Ips,
    VnfKind::LoadBalancer,
    VnfKind::Vpn,
];

impl VnfKind {
    pub fn from_token(s: &str) -> Option<VnfKind> {
        Some(match s {
            "probe" => VnfKind::Probe,
            "nat" => VnfKind::Nat,
            "firewall" => VnfKind::Firewall,
            "proxy" => VnfKind::Proxy,
            "ids" => VnfKind::Ids,
            "ips" => VnfKind::Ips,
            "lb" => VnfKind::LoadBalancer,
            "vpn" => VnfKind::Vpn,
            _ => return None,
        })
    }

    /// Built-in access profile for the kind.
    ///
    /// Probe reads the header; NAT, firewall, IPS, and the load balancer
    /// rewrite it; proxy, IDS, IPS, and the load balancer read the payload;
    /// firewall and IPS can drop; VPN rewrites the payload by encrypting it.
    pub fn profile(self) -> AccessProfile {
        use HeaderAccess as H;
        use PayloadAccess as P;
        let (header, payload, can_drop, encrypts) = match self {
            VnfKind::Probe => (H::Read, P::None, false, false),
            VnfKind::Nat => (H::ReadWrite, P::None, false, false),
            VnfKind::Firewall => (H::ReadWrite, P::None, true, false),
            VnfKind::Proxy => (H::Read, P::Read, false, false),
            VnfKind::Ids => (H::Read, P::Read, false, false),
            VnfKind::Ips => (H::ReadWrite, P::Read, true, false),
            VnfKind::LoadBalancer => (H::ReadWrite, P::Read, false, false),
            VnfKind::Vpn => (H::ReadWrite, P::Write, false, true),
        };
        AccessProfile {
            header,
            payload,
            can_drop,
            encrypts_payload: encrypts,
        }
    }
}

impl fmt::Display for VnfKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            VnfKind::Probe => "probe",
            VnfKind::Nat => "nat",
            VnfKind::Firewall => "firewall",
            VnfKind::Proxy => "proxy",
            VnfKind::Ids => "ids",
            VnfKind::Ips => "ips",
            VnfKind::LoadBalancer => "lb",
            VnfKind::Vpn => "vpn",
        };
        f.write_str(s)
    }
}

/// One function instance in a chain: identity, kind, access profile, and
/// its M/M/c service parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct VnfInstance {
    pub id: String,
    pub kind: VnfKind,
    pub profile: AccessProfile,
    /// Service rate per server, packets/sec.
    pub mu: f64,
    /// Parallel servers at this function.
    pub servers: u32,
}

impl VnfInstance {
    pub fn new(
        id: impl Into<String>,
        kind: VnfKind,
        mu: f64,
        servers: u32,
    ) -> Result<Self, AnalysisError> {
        let id = id.into();
        if !crate::queueing::positive_rate(mu) {
            return Err(AnalysisError::InvalidInstance {
                id,
                reason: format!("service rate mu={mu} must be > 0"),
            });
        }
        if servers < 1 {
            return Err(AnalysisError::InvalidInstance {
                id,
                reason: "server count c must be >= 1".to_string(),
            });
        }
        Ok(VnfInstance {
            id,
            kind,
            profile: kind.profile(),
            mu,
            servers,
        })
    }

    pub fn with_profile(mut self, profile: AccessProfile) -> Self {
        self.profile = profile;
        self
    }
}

/// Parse a chain spec document: one `id kind mu=<float> c=<int>` per line,
/// `#` comments and blank lines skipped.
pub fn parse_chain_spec(text: &str) -> Result<Vec<VnfInstance>, AnalysisError> {
    let mut chain = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx as u32 + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 4 {
            return Err(AnalysisError::ChainSyntax {
                line: line_no,
                reason: format!(
                    "expected 'id kind mu=<float> c=<int>', found {} token(s)",
                    toks.len()
                ),
            });
        }
        let kind = VnfKind::from_token(toks[1]).ok_or_else(|| AnalysisError::ChainSyntax {
            line: line_no,
            reason: format!("unknown VNF kind '{}'", toks[1]),
        })?;
        let mu = toks[2]
            .strip_prefix("mu=")
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| AnalysisError::ChainSyntax {
                line: line_no,
                reason: format!("expected mu=<float>, found '{}'", toks[2]),
            })?;
        let servers = toks[3]
            .strip_prefix("c=")
            .and_then(|v| v.parse::<u32>().ok())
            .ok_or_else(|| AnalysisError::ChainSyntax {
                line: line_no,
                reason: format!("expected c=<int>, found '{}'", toks[3]),
            })?;
        chain.push(VnfInstance::new(toks[0], kind, mu, servers)?);
    }
    if let Some(dup) = first_duplicate_id(&chain) {
        return Err(AnalysisError::DuplicateId { id: dup });
    }
    Ok(chain)
}

fn first_duplicate_id(chain: &[VnfInstance]) -> Option<String> {
    let mut seen = std::collections::HashSet::new();
    chain
        .iter()
        .find(|v| !seen.insert(v.id.as_str()))
        .map(|v| v.id.clone())
}

// ---------------------------------------------------------------------------
// Hazard classification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Header,
    Payload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HazardKind {
    Rar,
    War,
    Raw,
    Waw,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hazard {
    pub region: Region,
    pub kind: HazardKind,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum RegionMode {
    Untouched,
    ReadOnly,
    Writes,
}

fn header_mode(h: HeaderAccess) -> RegionMode {
    match h {
        HeaderAccess::None => RegionMode::Untouched,
        HeaderAccess::Read => RegionMode::ReadOnly,
        HeaderAccess::ReadWrite => RegionMode::Writes,
    }
}

fn payload_mode(p: PayloadAccess) -> RegionMode {
    match p {
        PayloadAccess::None => RegionMode::Untouched,
        PayloadAccess::Read => RegionMode::ReadOnly,
        PayloadAccess::ReadWrite | PayloadAccess::Write => RegionMode::Writes,
    }
}

fn hazard_kind(first: RegionMode, second: RegionMode) -> HazardKind {
    use RegionMode::*;
    match (first, second) {
        (Untouched, _) | (_, Untouched) => HazardKind::None,
        (ReadOnly, ReadOnly) => HazardKind::Rar,
        (ReadOnly, Writes) => HazardKind::War,
        (Writes, ReadOnly) => HazardKind::Raw,
        (Writes, Writes) => HazardKind::Waw,
    }
}

/// Per-region hazards of running `first` then `second`. Read/write on the
/// same side counts as write-capable.
pub fn classify_pair(first: &VnfInstance, second: &VnfInstance) -> [Hazard; 2] {
    [
        Hazard {
            region: Region::Header,
            kind: hazard_kind(
                header_mode(first.profile.header),
                header_mode(second.profile.header),
            ),
        },
        Hazard {
            region: Region::Payload,
            kind: hazard_kind(
                payload_mode(first.profile.payload),
                payload_mode(second.profile.payload),
            ),
        },
    ]
}

/// Can `second` run concurrently with `first` without changing what `first`
/// observes? True when every region hazard is RAR, WAR, or NONE: a later
/// writer never disturbs an earlier reader, but a reader may not follow a
/// writer into the same stage (it would see the unmodified copy).
pub fn parallelizable(first: &VnfInstance, second: &VnfInstance) -> bool {
    classify_pair(first, second)
        .iter()
        .all(|h| matches!(h.kind, HazardKind::Rar | HazardKind::War | HazardKind::None))
}

/// May the two functions execute in the same parallel stage? Each stage
/// member processes its own copy of the packet, so the pair only needs one
/// hazard-free ordering: write/write in any region is the sole blocker.
pub fn can_share_stage(a: &VnfInstance, b: &VnfInstance) -> bool {
    parallelizable(a, b) || parallelizable(b, a)
}

/// Ordering verdict for one pair of flow-rule actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionOrder {
    Parallel,
    Serial,
}

/// The action-pair rule: two actions may run in parallel when the first is
/// pure forwarding (`Forward`/`Mirror`). A packet-modifying first action
/// (`FlowMod`/`Encrypt`/`Drop`) forces serial order regardless of the
/// second.
pub fn nfp_action_rule(first: &RuleAction, second: &RuleAction) -> ActionOrder {
    let _ = second; // the verdict depends only on the first action's class
    if first.is_forward_class() {
        ActionOrder::Parallel
    } else {
        ActionOrder::Serial
    }
}

/// Profile-level parallelizability refined with compiled rule knowledge:
/// any pair of rules with overlapping matches must also pass the
/// action-pair rule. This is what serializes a dropper ahead of a function
/// that would forward the same traffic.
pub fn parallelizable_with_tables(
    first: &VnfInstance,
    second: &VnfInstance,
    first_table: &[FlowRule],
    second_table: &[FlowRule],
) -> bool {
    if !parallelizable(first, second) {
        return false;
    }
    for rf in first_table {
        for rs in second_table {
            if match_overlap(&rf.pattern, &rs.pattern) == OverlapRelation::Disjoint {
                continue;
            }
            for af in &rf.actions {
                for asec in &rs.actions {
                    if nfp_action_rule(af, asec) == ActionOrder::Serial {
                        return false;
                    }
                }
            }
        }
    }
    true
}

// ---------------------------------------------------------------------------
// Stage planning
// ---------------------------------------------------------------------------

/// An ordered sequence of stages; every function in a stage runs in
/// parallel on its own copy of the packet, and stages synchronize at a
/// merge barrier costing `merge_overhead` seconds.
///
/// The textual form is a JSON array of arrays of ids; the merge overhead
/// travels in configuration, not in the serialized plan.
#[derive(Debug, Clone, PartialEq)]
pub struct StagePlan {
    pub stages: Vec<Vec<String>>,
    pub merge_overhead: f64,
}

impl StagePlan {
    pub fn stage_of(&self, id: &str) -> Option<usize> {
        self.stages
            .iter()
            .position(|s| s.iter().any(|m| m == id))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.stages).expect("stage ids serialize")
    }

    pub fn from_json(text: &str) -> Result<StagePlan, AnalysisError> {
        let stages: Vec<Vec<String>> = serde_json::from_str(text)?;
        Ok(StagePlan {
            stages,
            merge_overhead: 0.0,
        })
    }

    pub fn with_merge_overhead(mut self, epsilon: f64) -> Self {
        self.merge_overhead = epsilon;
        self
    }
}

/// Pack a chain into parallel stages with a single left-to-right pass: each
/// function joins the newest stage if it can share it with every member,
/// otherwise it opens a new stage. The merge overhead defaults to 0.
pub fn build_stage_plan(chain: &[VnfInstance]) -> Result<StagePlan, AnalysisError> {
    if chain.is_empty() {
        return Err(AnalysisError::EmptyChain);
    }
    if let Some(dup) = first_duplicate_id(chain) {
        return Err(AnalysisError::DuplicateId { id: dup });
    }
    let mut stages: Vec<Vec<usize>> = Vec::new();
    for (i, vnf) in chain.iter().enumerate() {
        match stages.last_mut() {
            Some(last) if last.iter().all(|&m| can_share_stage(&chain[m], vnf)) => {
                last.push(i);
            }
            _ => stages.push(vec![i]),
        }
    }
    Ok(StagePlan {
        stages: stages
            .into_iter()
            .map(|s| s.into_iter().map(|i| chain[i].id.clone()).collect())
            .collect(),
        merge_overhead: 0.0,
    })
}

// ---------------------------------------------------------------------------
// Chain reordering
// ---------------------------------------------------------------------------

/// Compiled rules per VNF id, for reordering decisions that need match sets.
pub type RuleTables = HashMap<String, Vec<FlowRule>>;

fn is_passive_monitor(vnf: &VnfInstance, tables: &RuleTables) -> bool {
    if vnf.profile.can_drop {
        return false;
    }
    match tables.get(&vnf.id) {
        Some(rules) if !rules.is_empty() => rules
            .iter()
            .all(|r| r.actions.iter().all(RuleAction::is_forward_class)),
        _ => false,
    }
}

/// Every drop rule of `dropper` is contained in (or equal to) some rule
/// match of `monitor`.
fn drop_matches_covered(dropper: &[FlowRule], monitor: &[FlowRule]) -> bool {
    let drop_rules: Vec<&FlowRule> = dropper
        .iter()
        .filter(|r| r.actions.iter().any(|a| matches!(a, RuleAction::Drop)))
        .collect();
    if drop_rules.is_empty() {
        return false;
    }
    drop_rules.iter().all(|dr| {
        monitor.iter().any(|mr| {
            matches!(
                match_overlap(&mr.pattern, &dr.pattern),
                OverlapRelation::Equal | OverlapRelation::AContainsB
            )
        })
    })
}

/// Reorder a chain under two constraints, keeping everything else stable:
///
/// 1. every payload-reading function precedes every payload-encrypting one;
/// 2. a drop-capable function whose drop matches are covered by a passive
///    monitor's matches moves ahead of that monitor, so the monitor never
///    inspects traffic that is going to be dropped.
///
/// Conflicting constraints (a payload reader that must both precede and
/// follow an encryptor) are reported, never silently violated.
pub fn reorder_chain(
    chain: &[VnfInstance],
    tables: &RuleTables,
) -> Result<Vec<VnfInstance>, AnalysisError> {
    if chain.is_empty() {
        return Err(AnalysisError::EmptyChain);
    }
    let n = chain.len();
    let mut before: Vec<Vec<usize>> = vec![Vec::new(); n]; // edges i -> j: i precedes j
    let mut indegree = vec![0usize; n];
    let add_edge = |before: &mut Vec<Vec<usize>>, indegree: &mut Vec<usize>, i: usize, j: usize| {
        if !before[i].contains(&j) {
            before[i].push(j);
            indegree[j] += 1;
        }
    };

    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            // payload readers ahead of encryptors
            if chain[i].profile.reads_payload() && chain[j].profile.encrypts_payload {
                add_edge(&mut before, &mut indegree, i, j);
            }
            // covered droppers ahead of passive monitors
            if chain[i].profile.can_drop && is_passive_monitor(&chain[j], tables) {
                if let (Some(di), Some(mj)) = (tables.get(&chain[i].id), tables.get(&chain[j].id))
                {
                    if drop_matches_covered(di, mj) {
                        add_edge(&mut before, &mut indegree, i, j);
                    }
                }
            }
        }
    }

    // stable topological order: always emit the lowest original index ready
    let mut out = Vec::with_capacity(n);
    let mut emitted = vec![false; n];
    for _ in 0..n {
        let next = (0..n).find(|&i| !emitted[i] && indegree[i] == 0);
        let Some(next) = next else {
            let stuck: Vec<&str> = (0..n)
                .filter(|&i| !emitted[i])
                .map(|i| chain[i].id.as_str())
                .collect();
            return Err(AnalysisError::InfeasibleOrder {
                reason: format!(
                    "cyclic precedence among [{}] (a payload reader would have to both precede and follow an encryptor)",
                    stuck.join(", ")
                ),
            });
        };
        emitted[next] = true;
        for &j in &before[next] {
            indegree[j] -= 1;
        }
        out.push(chain[next].clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{compile_to_flow_table, parse_policy};

    fn vnf(id: &str, kind: VnfKind) -> VnfInstance {
        VnfInstance::new(id, kind, 1.0, 1).unwrap()
    }

    #[test]
    fn builtin_profiles_match_expected_access_modes() {
        use HeaderAccess as H;
        use PayloadAccess as P;
        let cases = [
            (VnfKind::Probe, H::Read, P::None, false),
            (VnfKind::Nat, H::ReadWrite, P::None, false),
            (VnfKind::Firewall, H::ReadWrite, P::None, true),
            (VnfKind::Proxy, H::Read, P::Read, false),
            (VnfKind::Ids, H::Read, P::Read, false),
            (VnfKind::Ips, H::ReadWrite, P::Read, true),
            (VnfKind::LoadBalancer, H::ReadWrite, P::Read, false),
        ];
        for (kind, h, p, drops) in cases {
            let prof = kind.profile();
            assert_eq!(prof.header, h, "{kind}");
            assert_eq!(prof.payload, p, "{kind}");
            assert_eq!(prof.can_drop, drops, "{kind}");
            assert!(!prof.encrypts_payload, "{kind}");
        }
        let vpn = VnfKind::Vpn.profile();
        assert!(vpn.encrypts_payload);
        assert_eq!(vpn.payload, P::Write);
    }

    #[test]
    fn encrypting_profile_must_write_payload() {
        assert!(AccessProfile::new(HeaderAccess::Read, PayloadAccess::Read, false, true).is_err());
        assert!(AccessProfile::new(HeaderAccess::Read, PayloadAccess::Write, false, true).is_ok());
    }

    #[test]
    fn probe_then_nat_is_header_war() {
        let h = classify_pair(&vnf("p", VnfKind::Probe), &vnf("n", VnfKind::Nat));
        assert_eq!(h[0].kind, HazardKind::War);
        assert_eq!(h[1].kind, HazardKind::None);
    }

    #[test]
    fn ids_then_firewall_is_header_war() {
        let h = classify_pair(&vnf("i", VnfKind::Ids), &vnf("f", VnfKind::Firewall));
        assert_eq!(h[0].kind, HazardKind::War);
        assert_eq!(h[1].kind, HazardKind::None);
        assert!(parallelizable(
            &vnf("i", VnfKind::Ids),
            &vnf("f", VnfKind::Firewall)
        ));
    }

    #[test]
    fn load_balancer_then_ips_is_header_waw() {
        let lb = vnf("l", VnfKind::LoadBalancer);
        let ips = vnf("s", VnfKind::Ips);
        let h = classify_pair(&lb, &ips);
        assert_eq!(h[0].kind, HazardKind::Waw);
        assert_eq!(h[1].kind, HazardKind::Rar);
        assert!(!parallelizable(&lb, &ips));
        assert!(!parallelizable(&ips, &lb));
        assert!(!can_share_stage(&lb, &ips));
    }

    #[test]
    fn swapping_arguments_swaps_war_and_raw() {
        for a in ALL_KINDS {
            for b in ALL_KINDS {
                let fa = vnf("a", a);
                let fb = vnf("b", b);
                let fwd = classify_pair(&fa, &fb);
                let rev = classify_pair(&fb, &fa);
                for (h1, h2) in fwd.iter().zip(rev.iter()) {
                    let expected = match h1.kind {
                        HazardKind::War => HazardKind::Raw,
                        HazardKind::Raw => HazardKind::War,
                        other => other,
                    };
                    assert_eq!(h2.kind, expected, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn probe_pairs_with_itself() {
        let a = vnf("a", VnfKind::Probe);
        let b = vnf("b", VnfKind::Probe);
        assert!(parallelizable(&a, &b));
        assert!(can_share_stage(&a, &b));
    }

    #[test]
    fn action_rule_matches_all_four_cases() {
        let fwd = RuleAction::Forward("next".to_string());
        let mirror = RuleAction::Mirror("ids".to_string());
        let flow_mod = RuleAction::FlowMod(vec![crate::policy::FieldRewrite::SrcPort(1)]);
        assert_eq!(nfp_action_rule(&fwd, &fwd), ActionOrder::Parallel);
        assert_eq!(nfp_action_rule(&fwd, &flow_mod), ActionOrder::Parallel);
        assert_eq!(nfp_action_rule(&mirror, &RuleAction::Drop), ActionOrder::Parallel);
        assert_eq!(nfp_action_rule(&flow_mod, &fwd), ActionOrder::Serial);
        assert_eq!(nfp_action_rule(&flow_mod, &flow_mod), ActionOrder::Serial);
        assert_eq!(nfp_action_rule(&RuleAction::Encrypt, &fwd), ActionOrder::Serial);
    }

    #[test]
    fn tables_serialize_dropper_before_forwarder() {
        // identical read-only profiles so only the rule tables differ: the
        // side holding a Drop on overlapping traffic must go first
        let blocker = vnf("blocker", VnfKind::Ids);
        let monitor = vnf("monitor", VnfKind::Ids);
        let drop_table =
            compile_to_flow_table(&parse_policy("firewall drop tcp EXT any -> 10.1.0.0/24 80").unwrap())
                .unwrap();
        let mirror_table =
            compile_to_flow_table(&parse_policy("ids alert any EXT any -> 10.1.0.0/24 any").unwrap())
                .unwrap();
        assert!(parallelizable_with_tables(
            &monitor,
            &blocker,
            &mirror_table,
            &drop_table
        ));
        assert!(!parallelizable_with_tables(
            &blocker,
            &monitor,
            &drop_table,
            &mirror_table
        ));
    }

    #[test]
    fn nat_firewall_ids_packs_into_two_stages() {
        let chain = [
            vnf("nat1", VnfKind::Nat),
            vnf("fw1", VnfKind::Firewall),
            vnf("ids1", VnfKind::Ids),
        ];
        let plan = build_stage_plan(&chain).unwrap();
        assert_eq!(
            plan.stages,
            vec![vec!["nat1".to_string()], vec!["fw1".to_string(), "ids1".to_string()]]
        );
    }

    #[test]
    fn singleton_chain_is_one_stage() {
        let plan = build_stage_plan(&[vnf("p", VnfKind::Probe)]).unwrap();
        assert_eq!(plan.stages, vec![vec!["p".to_string()]]);
    }

    #[test]
    fn waw_pair_needs_two_stages() {
        let plan = build_stage_plan(&[
            vnf("lb1", VnfKind::LoadBalancer),
            vnf("ips1", VnfKind::Ips),
        ])
        .unwrap();
        assert_eq!(plan.stages.len(), 2);
    }

    #[test]
    fn empty_chain_is_rejected() {
        assert!(matches!(
            build_stage_plan(&[]),
            Err(AnalysisError::EmptyChain)
        ));
    }

    #[test]
    fn plan_json_round_trips() {
        let plan = build_stage_plan(&[
            vnf("nat1", VnfKind::Nat),
            vnf("fw1", VnfKind::Firewall),
            vnf("ids1", VnfKind::Ids),
        ])
        .unwrap();
        let text = plan.to_json();
        let back = StagePlan::from_json(&text).unwrap();
        assert_eq!(back, plan);
        assert_eq!(back.to_json(), text);
    }

    fn table_for(policy: &str) -> Vec<FlowRule> {
        compile_to_flow_table(&parse_policy(policy).unwrap()).unwrap()
    }

    #[test]
    fn covered_firewall_moves_before_ids() {
        let chain = [vnf("ids1", VnfKind::Ids), vnf("fw1", VnfKind::Firewall)];
        let mut tables = RuleTables::new();
        tables.insert(
            "ids1".to_string(),
            table_for("ids alert any EXT any -> 10.1.0.0/24 any"),
        );
        tables.insert(
            "fw1".to_string(),
            table_for("firewall drop tcp EXT any -> 10.1.0.0/24 80"),
        );
        let out = reorder_chain(&chain, &tables).unwrap();
        let ids: Vec<&str> = out.iter().map(|v| v.id.as_str()).collect();
        assert_eq!(ids, vec!["fw1", "ids1"]);
    }

    #[test]
    fn payload_reader_moves_before_encryptor() {
        let chain = [vnf("vpn1", VnfKind::Vpn), vnf("ids1", VnfKind::Ids)];
        let out = reorder_chain(&chain, &RuleTables::new()).unwrap();
        let ids: Vec<&str> = out.iter().map(|v| v.id.as_str()).collect();
        assert_eq!(ids, vec!["ids1", "vpn1"]);
    }

    #[test]
    fn singleton_reorder_is_identity() {
        let chain = [vnf("p", VnfKind::Probe)];
        let out = reorder_chain(&chain, &RuleTables::new()).unwrap();
        assert_eq!(out[0].id, "p");
    }

    #[test]
    fn conflicting_reader_encryptors_are_infeasible() {
        // two functions that each read and encrypt the payload demand to
        // precede each other
        let both = AccessProfile::new(HeaderAccess::Read, PayloadAccess::ReadWrite, false, true)
            .unwrap();
        let chain = [
            vnf("a", VnfKind::Vpn).with_profile(both),
            vnf("b", VnfKind::Vpn).with_profile(both),
        ];
        assert!(matches!(
            reorder_chain(&chain, &RuleTables::new()),
            Err(AnalysisError::InfeasibleOrder { .. })
        ));
    }

    #[test]
    fn uncovered_dropper_stays_put() {
        // firewall drops traffic the monitor never inspects: no constraint
        let chain = [vnf("ids1", VnfKind::Ids), vnf("fw1", VnfKind::Firewall)];
        let mut tables = RuleTables::new();
        tables.insert(
            "ids1".to_string(),
            table_for("ids alert any 10.1.0.0/24 any -> 192.168.1.0/24 any"),
        );
        tables.insert(
            "fw1".to_string(),
            table_for("firewall drop tcp EXT any -> 10.1.0.0/24 80"),
        );
        let out = reorder_chain(&chain, &tables).unwrap();
        let ids: Vec<&str> = out.iter().map(|v| v.id.as_str()).collect();
        assert_eq!(ids, vec!["ids1", "fw1"]);
    }

    #[test]
    fn chain_spec_parses_and_validates() {
        let text = "# demo chain\nnat1 nat mu=1.0 c=2\nfw1 firewall mu=1.5 c=2\nids1 ids mu=2 c=1\n";
        let chain = parse_chain_spec(text).unwrap();
        assert_eq!(chain.len(), 3);
        assert_eq!(chain[1].kind, VnfKind::Firewall);
        assert_eq!(chain[1].mu, 1.5);
        assert_eq!(chain[2].servers, 1);

        assert!(matches!(
            parse_chain_spec("x nat mu=0 c=1"),
            Err(AnalysisError::InvalidInstance { .. })
        ));
        assert!(matches!(
            parse_chain_spec("x nat mu=1 c=1\nx ids mu=1 c=1"),
            Err(AnalysisError::DuplicateId { .. })
        ));
        assert!(matches!(
            parse_chain_spec("x whatkind mu=1 c=1"),
            Err(AnalysisError::ChainSyntax { .. })
        ));
    }
}
