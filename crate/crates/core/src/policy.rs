// SPDX-License-Identifier: Apache-2.0

//! Security-policy DSL and its compilation to abstract flow rules.
//!
//! One rule per line:
//!
//! ```text
//! <vnf-kind> <verb> <proto> <src> <sport> -> <dst> <dport> [msg "<text>"]
//! ```
//!
//! `vnf-kind` is one of `firewall ids nat vpn probe proxy ips lb`; verbs are
//! per kind (`drop`/`allow`, `alert`, `snat`/`dnat`, `tunnel`, `monitor`,
//! `relay`, `balance`). `#` starts a comment. `src`/`dst` accept an IPv4
//! CIDR, a bare address, or `any`; `src` additionally accepts the reserved
//! token `EXT`, meaning "outside every tenant prefix". Ports are `any`, a
//! single port, or `lo-hi`.
//!
//! Compiled rules use a five-dimension match (src/dst prefix, src/dst port,
//! protocol) plus an ordered action list. Flow tables serialize to CSV as
//! `priority,src,sport,dst,dport,proto,actions,origin`.

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::VnfKind;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("line {line}, col {col}: expected {expected}, found '{found}'")]
    Syntax {
        line: u32,
        col: u32,
        expected: String,
        found: String,
    },
    #[error("line {line}, col {col}: invalid CIDR '{text}': {reason}")]
    InvalidCidr {
        line: u32,
        col: u32,
        text: String,
        reason: String,
    },
    #[error("line {line}, col {col}: invalid port range '{text}' (expected 'any', a port, or lo-hi with 0 <= lo <= hi <= 65535)")]
    InvalidPortRange { line: u32, col: u32, text: String },
    #[error("line {line}, col {col}: unknown VNF kind '{token}'")]
    UnknownVnfKind { line: u32, col: u32, token: String },
    #[error("line {line}, col {col}: unknown verb '{verb}' for {kind} (expected one of: {allowed})")]
    UnknownVerb {
        line: u32,
        col: u32,
        kind: VnfKind,
        verb: String,
        allowed: String,
    },
    #[error("duplicate (priority, match) pair at priority {priority}: {pattern}")]
    DuplicateRule { priority: u32, pattern: String },
    #[error("invalid flow table CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid {what} '{text}' in flow table CSV")]
    CsvField { what: &'static str, text: String },
}

// ---------------------------------------------------------------------------
// Match dimensions
// ---------------------------------------------------------------------------

/// An IPv4 prefix in canonical form (host bits zero).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Ipv4Cidr {
    addr: u32,
    len: u8,
}

impl Ipv4Cidr {
    pub fn new(addr: Ipv4Addr, len: u8) -> Result<Self, String> {
        if len > 32 {
            return Err(format!("prefix length {len} out of range [0,32]"));
        }
        let bits = u32::from(addr);
        let mask = if len == 0 { 0 } else { u32::MAX << (32 - len) };
        if bits & !mask != 0 {
            return Err(format!("host bits set below /{len}"));
        }
        Ok(Ipv4Cidr { addr: bits, len })
    }

    pub fn address(&self) -> Ipv4Addr {
        Ipv4Addr::from(self.addr)
    }

    pub fn prefix_len(&self) -> u8 {
        self.len
    }

    /// Half-open address interval covered by the prefix.
    fn interval(&self) -> (u64, u64) {
        let size = 1u64 << (32 - self.len);
        (self.addr as u64, self.addr as u64 + size)
    }

    fn contains_addr(&self, addr: u32) -> bool {
        let (lo, hi) = self.interval();
        (addr as u64) >= lo && (addr as u64) < hi
    }

    /// The enclosing prefix one bit shorter, when `self` and `other` are the
    /// two halves of it.
    fn sibling_parent(&self, other: &Ipv4Cidr) -> Option<Ipv4Cidr> {
        if self.len != other.len || self.len == 0 {
            return None;
        }
        let bit = 1u32 << (32 - self.len);
        if self.addr ^ other.addr != bit {
            return None;
        }
        Some(Ipv4Cidr {
            addr: self.addr & !bit,
            len: self.len - 1,
        })
    }
}

impl FromStr for Ipv4Cidr {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (addr_part, len_part) = match s.split_once('/') {
            Some((a, l)) => (a, Some(l)),
            None => (s, None),
        };
        let addr: Ipv4Addr = addr_part
            .parse()
            .map_err(|_| format!("bad IPv4 address '{addr_part}'"))?;
        let len = match len_part {
            Some(l) => l
                .parse::<u8>()
                .map_err(|_| format!("bad prefix length '{l}'"))?,
            None => 32,
        };
        Ipv4Cidr::new(addr, len)
    }
}

impl fmt::Display for Ipv4Cidr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.address(), self.len)
    }
}

/// Source/destination address dimension of a match.
#[derive(Debug, Clone, PartialEq)]
pub enum PrefixMatch {
    Any,
    Cidr(Ipv4Cidr),
    /// Everything outside the listed prefixes. This is how the reserved
    /// `EXT` source token compiles; the prefixes are the tenant networks in
    /// force at compile time.
    External(Vec<Ipv4Cidr>),
}

impl PrefixMatch {
    fn interval_set(&self) -> IntervalSet {
        const END: u64 = 1 << 32;
        match self {
            PrefixMatch::Any => IntervalSet::full(END),
            PrefixMatch::Cidr(c) => {
                let (lo, hi) = c.interval();
                IntervalSet::from_range(lo, hi)
            }
            PrefixMatch::External(ps) => {
                IntervalSet::union_of(ps.iter().map(|p| p.interval())).complement(END)
            }
        }
    }

    fn matches(&self, addr: u32) -> bool {
        match self {
            PrefixMatch::Any => true,
            PrefixMatch::Cidr(c) => c.contains_addr(addr),
            PrefixMatch::External(ps) => !ps.iter().any(|p| p.contains_addr(addr)),
        }
    }
}

impl fmt::Display for PrefixMatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PrefixMatch::Any => write!(f, "any"),
            PrefixMatch::Cidr(c) => write!(f, "{c}"),
            PrefixMatch::External(_) => write!(f, "EXT"),
        }
    }
}

/// Inclusive port interval; the full range prints as `any`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PortRange {
    pub lo: u16,
    pub hi: u16,
}

impl PortRange {
    pub const ANY: PortRange = PortRange { lo: 0, hi: u16::MAX };

    pub fn new(lo: u16, hi: u16) -> Result<Self, String> {
        if lo > hi {
            return Err(format!("port range {lo}-{hi} is inverted"));
        }
        Ok(PortRange { lo, hi })
    }

    pub fn single(port: u16) -> Self {
        PortRange { lo: port, hi: port }
    }

    fn interval_set(&self) -> IntervalSet {
        IntervalSet::from_range(self.lo as u64, self.hi as u64 + 1)
    }

    fn matches(&self, port: u16) -> bool {
        self.lo <= port && port <= self.hi
    }

    /// Merge two ranges that touch end to end.
    fn merge_contiguous(&self, other: &PortRange) -> Option<PortRange> {
        if self.hi as u32 + 1 == other.lo as u32 {
            Some(PortRange { lo: self.lo, hi: other.hi })
        } else if other.hi as u32 + 1 == self.lo as u32 {
            Some(PortRange { lo: other.lo, hi: self.hi })
        } else {
            None
        }
    }
}

impl fmt::Display for PortRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == PortRange::ANY {
            write!(f, "any")
        } else if self.lo == self.hi {
            write!(f, "{}", self.lo)
        } else {
            write!(f, "{}-{}", self.lo, self.hi)
        }
    }
}

impl FromStr for PortRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "any" {
            return Ok(PortRange::ANY);
        }
        let parse_port = |t: &str| t.parse::<u16>().map_err(|_| format!("bad port '{t}'"));
        match s.split_once('-') {
            Some((lo, hi)) => PortRange::new(parse_port(lo)?, parse_port(hi)?),
            None => Ok(PortRange::single(parse_port(s)?)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Proto {
    Tcp,
    Udp,
    Icmp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProtoMatch {
    Any,
    Is(Proto),
}

impl ProtoMatch {
    fn interval_set(&self) -> IntervalSet {
        match self {
            ProtoMatch::Any => IntervalSet::full(3),
            ProtoMatch::Is(p) => {
                let v = *p as u64;
                IntervalSet::from_range(v, v + 1)
            }
        }
    }

    fn matches(&self, proto: Proto) -> bool {
        match self {
            ProtoMatch::Any => true,
            ProtoMatch::Is(p) => *p == proto,
        }
    }
}

impl fmt::Display for ProtoMatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProtoMatch::Any => write!(f, "any"),
            ProtoMatch::Is(Proto::Tcp) => write!(f, "tcp"),
            ProtoMatch::Is(Proto::Udp) => write!(f, "udp"),
            ProtoMatch::Is(Proto::Icmp) => write!(f, "icmp"),
        }
    }
}

impl FromStr for ProtoMatch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "any" => Ok(ProtoMatch::Any),
            "tcp" => Ok(ProtoMatch::Is(Proto::Tcp)),
            "udp" => Ok(ProtoMatch::Is(Proto::Udp)),
            "icmp" => Ok(ProtoMatch::Is(Proto::Icmp)),
            _ => Err(format!("unknown protocol '{s}'")),
        }
    }
}

/// Five-dimension packet match.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchPattern {
    pub src: PrefixMatch,
    pub dst: PrefixMatch,
    pub src_port: PortRange,
    pub dst_port: PortRange,
    pub proto: ProtoMatch,
}

impl MatchPattern {
    pub fn any() -> Self {
        MatchPattern {
            src: PrefixMatch::Any,
            dst: PrefixMatch::Any,
            src_port: PortRange::ANY,
            dst_port: PortRange::ANY,
            proto: ProtoMatch::Any,
        }
    }

    pub fn matches(&self, pkt: &Packet) -> bool {
        self.src.matches(pkt.src)
            && self.dst.matches(pkt.dst)
            && self.src_port.matches(pkt.src_port)
            && self.dst_port.matches(pkt.dst_port)
            && self.proto.matches(pkt.proto)
    }
}

impl fmt::Display for MatchPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} -> {} {} proto {}",
            self.src, self.src_port, self.dst, self.dst_port, self.proto
        )
    }
}

/// A concrete packet header, used for classification and test oracles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Packet {
    pub src: u32,
    pub dst: u32,
    pub src_port: u16,
    pub dst_port: u16,
    pub proto: Proto,
}

// ---------------------------------------------------------------------------
// Overlap classification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OverlapRelation {
    Disjoint,
    Equal,
    AContainsB,
    BContainsA,
    PartialOverlap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SetRelation {
    Disjoint,
    Equal,
    Superset,
    Subset,
    Partial,
}

/// Sorted, disjoint, half-open u64 intervals. Address and port dimensions
/// reduce to this so every set operation is an interval walk.
#[derive(Debug, Clone, PartialEq)]
struct IntervalSet {
    ranges: Vec<(u64, u64)>,
}

impl IntervalSet {
    fn full(end: u64) -> Self {
        IntervalSet {
            ranges: vec![(0, end)],
        }
    }

    fn from_range(lo: u64, hi: u64) -> Self {
        IntervalSet {
            ranges: if lo < hi { vec![(lo, hi)] } else { vec![] },
        }
    }

    fn union_of(iter: impl Iterator<Item = (u64, u64)>) -> Self {
        let mut ranges: Vec<(u64, u64)> = iter.filter(|(lo, hi)| lo < hi).collect();
        ranges.sort_unstable();
        let mut merged: Vec<(u64, u64)> = Vec::with_capacity(ranges.len());
        for (lo, hi) in ranges {
            match merged.last_mut() {
                Some((_, mhi)) if lo <= *mhi => *mhi = (*mhi).max(hi),
                _ => merged.push((lo, hi)),
            }
        }
        IntervalSet { ranges: merged }
    }

    fn complement(&self, end: u64) -> Self {
        let mut out = Vec::with_capacity(self.ranges.len() + 1);
        let mut cursor = 0;
        for &(lo, hi) in &self.ranges {
            if cursor < lo {
                out.push((cursor, lo));
            }
            cursor = hi;
        }
        if cursor < end {
            out.push((cursor, end));
        }
        IntervalSet { ranges: out }
    }

    fn intersects(&self, other: &IntervalSet) -> bool {
        let (mut i, mut j) = (0, 0);
        while i < self.ranges.len() && j < other.ranges.len() {
            let (alo, ahi) = self.ranges[i];
            let (blo, bhi) = other.ranges[j];
            if alo.max(blo) < ahi.min(bhi) {
                return true;
            }
            if ahi <= bhi {
                i += 1;
            } else {
                j += 1;
            }
        }
        false
    }

    /// Is every point of `self` inside `other`?
    fn subset_of(&self, other: &IntervalSet) -> bool {
        let mut j = 0;
        for &(lo, hi) in &self.ranges {
            while j < other.ranges.len() && other.ranges[j].1 <= lo {
                j += 1;
            }
            match other.ranges.get(j) {
                Some(&(blo, bhi)) if blo <= lo && hi <= bhi => {}
                _ => return false,
            }
        }
        true
    }

    fn relation(&self, other: &IntervalSet) -> SetRelation {
        if !self.intersects(other) {
            return SetRelation::Disjoint;
        }
        if self.ranges == other.ranges {
            return SetRelation::Equal;
        }
        if other.subset_of(self) {
            return SetRelation::Superset;
        }
        if self.subset_of(other) {
            return SetRelation::Subset;
        }
        SetRelation::Partial
    }
}

/// Classify how the packet sets matched by two patterns relate.
///
/// Computed dimension-wise: `Disjoint` as soon as one dimension has an empty
/// intersection, `Equal` only when every dimension is equal, containment when
/// every dimension of one side contains the other's, `PartialOverlap`
/// otherwise.
pub fn match_overlap(a: &MatchPattern, b: &MatchPattern) -> OverlapRelation {
    let dims = [
        (a.src.interval_set(), b.src.interval_set()),
        (a.dst.interval_set(), b.dst.interval_set()),
        (a.src_port.interval_set(), b.src_port.interval_set()),
        (a.dst_port.interval_set(), b.dst_port.interval_set()),
        (a.proto.interval_set(), b.proto.interval_set()),
    ];
    let mut saw_superset = false;
    let mut saw_subset = false;
    let mut saw_partial = false;
    for (da, db) in &dims {
        match da.relation(db) {
            SetRelation::Disjoint => return OverlapRelation::Disjoint,
            SetRelation::Partial => saw_partial = true,
            SetRelation::Superset => saw_superset = true,
            SetRelation::Subset => saw_subset = true,
            SetRelation::Equal => {}
        }
    }
    match (saw_partial, saw_superset, saw_subset) {
        (false, false, false) => OverlapRelation::Equal,
        (false, true, false) => OverlapRelation::AContainsB,
        (false, false, true) => OverlapRelation::BContainsA,
        _ => OverlapRelation::PartialOverlap,
    }
}

// ---------------------------------------------------------------------------
// Actions and rules
// ---------------------------------------------------------------------------

/// A single header-field rewrite carried by a FlowMod action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldRewrite {
    SrcIp(Ipv4Addr),
    DstIp(Ipv4Addr),
    SrcPort(u16),
    DstPort(u16),
}

impl fmt::Display for FieldRewrite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldRewrite::SrcIp(a) => write!(f, "src_ip={a}"),
            FieldRewrite::DstIp(a) => write!(f, "dst_ip={a}"),
            FieldRewrite::SrcPort(p) => write!(f, "src_port={p}"),
            FieldRewrite::DstPort(p) => write!(f, "dst_port={p}"),
        }
    }
}

impl FromStr for FieldRewrite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (field, value) = s
            .split_once('=')
            .ok_or_else(|| format!("bad rewrite '{s}'"))?;
        match field {
            "src_ip" => Ok(FieldRewrite::SrcIp(
                value.parse().map_err(|_| format!("bad address '{value}'"))?,
            )),
            "dst_ip" => Ok(FieldRewrite::DstIp(
                value.parse().map_err(|_| format!("bad address '{value}'"))?,
            )),
            "src_port" => Ok(FieldRewrite::SrcPort(
                value.parse().map_err(|_| format!("bad port '{value}'"))?,
            )),
            "dst_port" => Ok(FieldRewrite::DstPort(
                value.parse().map_err(|_| format!("bad port '{value}'"))?,
            )),
            _ => Err(format!("unknown rewrite field '{field}'")),
        }
    }
}

/// One flow-rule action. `Forward` and `Mirror` leave the packet header
/// alone; `FlowMod`, `Encrypt`, and `Drop` change the packet or its fate.
#[derive(Debug, Clone, PartialEq)]
pub enum RuleAction {
    Forward(String),
    Mirror(String),
    FlowMod(Vec<FieldRewrite>),
    Drop,
    Encrypt,
}

impl RuleAction {
    pub fn flow_mod(rewrites: Vec<FieldRewrite>) -> Result<Self, String> {
        if rewrites.is_empty() {
            return Err("FlowMod rewrite set must be non-empty".to_string());
        }
        Ok(RuleAction::FlowMod(rewrites))
    }

    /// Does the action leave the packet untouched (pure forwarding)?
    pub fn is_forward_class(&self) -> bool {
        matches!(self, RuleAction::Forward(_) | RuleAction::Mirror(_))
    }
}

impl fmt::Display for RuleAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleAction::Forward(p) => write!(f, "Forward({p})"),
            RuleAction::Mirror(p) => write!(f, "Mirror({p})"),
            RuleAction::Drop => write!(f, "Drop"),
            RuleAction::Encrypt => write!(f, "Encrypt"),
            RuleAction::FlowMod(rs) => {
                write!(f, "FlowMod(")?;
                for (i, r) in rs.iter().enumerate() {
                    if i > 0 {
                        write!(f, "&")?;
                    }
                    write!(f, "{r}")?;
                }
                write!(f, ")")
            }
        }
    }
}

impl FromStr for RuleAction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "Drop" {
            return Ok(RuleAction::Drop);
        }
        if s == "Encrypt" {
            return Ok(RuleAction::Encrypt);
        }
        let inner = |s: &str, name: &str| -> Result<String, String> {
            s.strip_prefix(name)
                .and_then(|r| r.strip_prefix('('))
                .and_then(|r| r.strip_suffix(')'))
                .map(str::to_string)
                .ok_or_else(|| format!("bad action '{s}'"))
        };
        if s.starts_with("Forward") {
            return Ok(RuleAction::Forward(inner(s, "Forward")?));
        }
        if s.starts_with("Mirror") {
            return Ok(RuleAction::Mirror(inner(s, "Mirror")?));
        }
        if s.starts_with("FlowMod") {
            let body = inner(s, "FlowMod")?;
            let rewrites = body
                .split('&')
                .map(FieldRewrite::from_str)
                .collect::<Result<Vec<_>, _>>()?;
            return RuleAction::flow_mod(rewrites);
        }
        Err(format!("unknown action '{s}'"))
    }
}

/// A prioritized match/action rule. Priority 0 means "assign automatically
/// when the table is built".
#[derive(Debug, Clone, PartialEq)]
pub struct FlowRule {
    pub priority: u32,
    pub pattern: MatchPattern,
    pub actions: Vec<RuleAction>,
    pub origin: String,
}

/// One accepted policy line together with its compiled rule.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEntry {
    pub kind: VnfKind,
    pub verb: String,
    pub raw: String,
    pub line: u32,
    pub msg: Option<String>,
    pub rule: FlowRule,
}

/// All rules of a policy document, in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PolicySet {
    pub entries: Vec<PolicyEntry>,
}

impl PolicySet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Render back to the normalized DSL form (one line per rule).
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let r = &e.rule;
            out.push_str(&format!(
                "{} {} {} {} {} -> {} {}",
                e.kind,
                e.verb,
                r.pattern.proto,
                r.pattern.src,
                r.pattern.src_port,
                r.pattern.dst,
                r.pattern.dst_port
            ));
            if let Some(msg) = &e.msg {
                out.push_str(&format!(" msg \"{msg}\""));
            }
            out.push('\n');
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Compiler configuration
// ---------------------------------------------------------------------------

/// Addresses and port names the compiler substitutes for tokens the DSL
/// leaves abstract: the tenant networks behind `EXT`, NAT rewrite targets,
/// the load-balancer backend, and mirror/forward port names.
#[derive(Debug, Clone)]
pub struct CompilerConfig {
    pub tenant_prefixes: Vec<Ipv4Cidr>,
    pub snat_address: Ipv4Addr,
    pub dnat_address: Ipv4Addr,
    pub lb_backend: Ipv4Addr,
    pub ids_mirror_port: String,
    pub probe_mirror_port: String,
    pub proxy_port: String,
    pub next_port: String,
}

impl Default for CompilerConfig {
    fn default() -> Self {
        CompilerConfig {
            tenant_prefixes: vec![
                "10.1.0.0/24".parse().expect("static prefix"),
                "192.168.1.0/24".parse().expect("static prefix"),
            ],
            snat_address: Ipv4Addr::new(203, 0, 113, 1),
            dnat_address: Ipv4Addr::new(10, 1, 0, 10),
            lb_backend: Ipv4Addr::new(10, 1, 0, 20),
            ids_mirror_port: "ids".to_string(),
            probe_mirror_port: "probe".to_string(),
            proxy_port: "proxy".to_string(),
            next_port: "next".to_string(),
        }
    }
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

#[derive(Debug)]
enum Token {
    Word(String),
    Quoted(String),
}

struct Tok {
    col: u32,
    token: Token,
}

fn tokenize_line(line: &str, line_no: u32) -> Result<Vec<Tok>, PolicyError> {
    let mut out = Vec::new();
    let mut chars = line.char_indices().peekable();
    while let Some(&(i, ch)) = chars.peek() {
        if ch.is_whitespace() {
            chars.next();
            continue;
        }
        if ch == '#' {
            break;
        }
        let col = i as u32 + 1;
        if ch == '"' {
            chars.next();
            let mut s = String::new();
            let mut closed = false;
            for (_, c) in chars.by_ref() {
                if c == '"' {
                    closed = true;
                    break;
                }
                s.push(c);
            }
            if !closed {
                return Err(PolicyError::Syntax {
                    line: line_no,
                    col,
                    expected: "closing '\"'".to_string(),
                    found: "end of line".to_string(),
                });
            }
            out.push(Tok {
                col,
                token: Token::Quoted(s),
            });
        } else {
            let mut s = String::new();
            while let Some(&(_, c)) = chars.peek() {
                if c.is_whitespace() || c == '"' || c == '#' {
                    break;
                }
                s.push(c);
                chars.next();
            }
            out.push(Tok {
                col,
                token: Token::Word(s),
            });
        }
    }
    Ok(out)
}

struct LineParser<'a> {
    toks: Vec<Tok>,
    pos: usize,
    line: u32,
    end_col: u32,
    config: &'a CompilerConfig,
}

impl<'a> LineParser<'a> {
    fn next_word(&mut self, expected: &str) -> Result<(u32, String), PolicyError> {
        match self.toks.get(self.pos) {
            Some(Tok {
                col,
                token: Token::Word(w),
            }) => {
                self.pos += 1;
                Ok((*col, w.clone()))
            }
            Some(Tok {
                col,
                token: Token::Quoted(q),
            }) => Err(PolicyError::Syntax {
                line: self.line,
                col: *col,
                expected: expected.to_string(),
                found: format!("\"{q}\""),
            }),
            None => Err(PolicyError::Syntax {
                line: self.line,
                col: self.end_col,
                expected: expected.to_string(),
                found: "end of line".to_string(),
            }),
        }
    }

    fn expect_word(&mut self, literal: &str) -> Result<(), PolicyError> {
        let (col, w) = self.next_word(&format!("'{literal}'"))?;
        if w != literal {
            return Err(PolicyError::Syntax {
                line: self.line,
                col,
                expected: format!("'{literal}'"),
                found: w,
            });
        }
        Ok(())
    }

    fn parse_prefix(&mut self, allow_ext: bool) -> Result<PrefixMatch, PolicyError> {
        let what = if allow_ext {
            "address ('any', 'EXT', or CIDR)"
        } else {
            "address ('any' or CIDR)"
        };
        let (col, w) = self.next_word(what)?;
        if w == "any" {
            return Ok(PrefixMatch::Any);
        }
        if w == "EXT" {
            if allow_ext {
                return Ok(PrefixMatch::External(self.config.tenant_prefixes.clone()));
            }
            return Err(PolicyError::Syntax {
                line: self.line,
                col,
                expected: "'EXT' is only valid as a source".to_string(),
                found: w,
            });
        }
        let cidr: Ipv4Cidr = w.parse().map_err(|reason| PolicyError::InvalidCidr {
            line: self.line,
            col,
            text: w.clone(),
            reason,
        })?;
        Ok(PrefixMatch::Cidr(cidr))
    }

    fn parse_ports(&mut self) -> Result<PortRange, PolicyError> {
        let (col, w) = self.next_word("port ('any', a port, or lo-hi)")?;
        w.parse().map_err(|_| PolicyError::InvalidPortRange {
            line: self.line,
            col,
            text: w,
        })
    }

    fn parse_proto(&mut self) -> Result<ProtoMatch, PolicyError> {
        let (col, w) = self.next_word("protocol (tcp, udp, icmp, any)")?;
        w.parse().map_err(|_| PolicyError::Syntax {
            line: self.line,
            col,
            expected: "protocol (tcp, udp, icmp, any)".to_string(),
            found: w,
        })
    }
}

fn allowed_verbs(kind: VnfKind) -> &'static [&'static str] {
    match kind {
        VnfKind::Firewall | VnfKind::Ips => &["drop", "allow"],
        VnfKind::Ids => &["alert"],
        VnfKind::Nat => &["snat", "dnat"],
        VnfKind::Vpn => &["tunnel"],
        VnfKind::Probe => &["monitor"],
        VnfKind::Proxy => &["relay"],
        VnfKind::LoadBalancer => &["balance"],
    }
}

fn actions_for(kind: VnfKind, verb: &str, config: &CompilerConfig) -> Vec<RuleAction> {
    let fwd = || RuleAction::Forward(config.next_port.clone());
    match (kind, verb) {
        (VnfKind::Firewall, "drop") | (VnfKind::Ips, "drop") => vec![RuleAction::Drop],
        (VnfKind::Firewall, "allow") | (VnfKind::Ips, "allow") => vec![fwd()],
        (VnfKind::Ids, "alert") => vec![
            RuleAction::Mirror(config.ids_mirror_port.clone()),
            fwd(),
        ],
        (VnfKind::Nat, "snat") => vec![
            RuleAction::FlowMod(vec![FieldRewrite::SrcIp(config.snat_address)]),
            fwd(),
        ],
        (VnfKind::Nat, "dnat") => vec![
            RuleAction::FlowMod(vec![FieldRewrite::DstIp(config.dnat_address)]),
            fwd(),
        ],
        (VnfKind::Vpn, "tunnel") => vec![RuleAction::Encrypt, fwd()],
        (VnfKind::Probe, "monitor") => vec![
            RuleAction::Mirror(config.probe_mirror_port.clone()),
            fwd(),
        ],
        (VnfKind::Proxy, "relay") => vec![RuleAction::Forward(config.proxy_port.clone())],
        (VnfKind::LoadBalancer, "balance") => vec![
            RuleAction::FlowMod(vec![FieldRewrite::DstIp(config.lb_backend)]),
            fwd(),
        ],
        _ => unreachable!("verb validated against allowed_verbs"),
    }
}

/// Parse a policy document with the default compiler configuration.
pub fn parse_policy(text: &str) -> Result<PolicySet, PolicyError> {
    parse_policy_with(text, &CompilerConfig::default())
}

/// Parse a policy document. Blank lines and `#` comments are skipped; every
/// accepted rule line yields exactly one compiled flow rule, in file order.
pub fn parse_policy_with(text: &str, config: &CompilerConfig) -> Result<PolicySet, PolicyError> {
    let mut entries = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx as u32 + 1;
        let toks = tokenize_line(raw_line, line_no)?;
        if toks.is_empty() {
            continue;
        }
        let end_col = raw_line.chars().count() as u32 + 1;
        let mut p = LineParser {
            toks,
            pos: 0,
            line: line_no,
            end_col,
            config,
        };

        let (kcol, kind_word) = p.next_word("VNF kind")?;
        let kind = VnfKind::from_token(&kind_word).ok_or(PolicyError::UnknownVnfKind {
            line: line_no,
            col: kcol,
            token: kind_word,
        })?;
        let (vcol, verb) = p.next_word("verb")?;
        if !allowed_verbs(kind).contains(&verb.as_str()) {
            return Err(PolicyError::UnknownVerb {
                line: line_no,
                col: vcol,
                kind,
                verb,
                allowed: allowed_verbs(kind).join(", "),
            });
        }
        let proto = p.parse_proto()?;
        let src = p.parse_prefix(true)?;
        let src_port = p.parse_ports()?;
        p.expect_word("->")?;
        let dst = p.parse_prefix(false)?;
        let dst_port = p.parse_ports()?;

        let msg = match p.toks.get(p.pos) {
            None => None,
            Some(_) => {
                p.expect_word("msg")?;
                match p.toks.get(p.pos) {
                    Some(Tok {
                        token: Token::Quoted(q),
                        ..
                    }) => {
                        let q = q.clone();
                        p.pos += 1;
                        Some(q)
                    }
                    Some(Tok { col, .. }) => {
                        return Err(PolicyError::Syntax {
                            line: line_no,
                            col: *col,
                            expected: "quoted message".to_string(),
                            found: "unquoted token".to_string(),
                        })
                    }
                    None => {
                        return Err(PolicyError::Syntax {
                            line: line_no,
                            col: end_col,
                            expected: "quoted message".to_string(),
                            found: "end of line".to_string(),
                        })
                    }
                }
            }
        };
        if let Some(Tok { col, .. }) = p.toks.get(p.pos) {
            return Err(PolicyError::Syntax {
                line: line_no,
                col: *col,
                expected: "end of line".to_string(),
                found: "extra token".to_string(),
            });
        }

        let rule = FlowRule {
            priority: 0,
            pattern: MatchPattern {
                src,
                dst,
                src_port,
                dst_port,
                proto,
            },
            actions: actions_for(kind, &verb, config),
            origin: kind.to_string(),
        };
        entries.push(PolicyEntry {
            kind,
            verb,
            raw: raw_line.trim().to_string(),
            line: line_no,
            msg,
            rule,
        });
    }
    Ok(PolicySet { entries })
}

// ---------------------------------------------------------------------------
// Flow tables
// ---------------------------------------------------------------------------

/// Build a flow table: auto-assign priorities by file order (earlier line =
/// higher, step 100), sort by descending priority, and reject duplicate
/// (priority, match) pairs. Rules carrying an explicit nonzero priority keep
/// it.
pub fn compile_to_flow_table(policy: &PolicySet) -> Result<Vec<FlowRule>, PolicyError> {
    let n = policy.entries.len();
    let mut rules: Vec<FlowRule> = policy
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let mut r = e.rule.clone();
            if r.priority == 0 {
                r.priority = ((n - i) * 100) as u32;
            }
            r
        })
        .collect();
    rules.sort_by_key(|r| std::cmp::Reverse(r.priority));
    for i in 0..rules.len() {
        for j in i + 1..rules.len() {
            if rules[i].priority != rules[j].priority {
                break;
            }
            if rules[i].pattern == rules[j].pattern {
                return Err(PolicyError::DuplicateRule {
                    priority: rules[i].priority,
                    pattern: rules[i].pattern.to_string(),
                });
            }
        }
    }
    Ok(rules)
}

/// The highest-priority rule matching `pkt`; equal priorities resolve by
/// table order. `table` must already be sorted by descending priority.
pub fn winning_rule<'a>(table: &'a [FlowRule], pkt: &Packet) -> Option<&'a FlowRule> {
    table.iter().find(|r| r.pattern.matches(pkt))
}

fn try_merge(a: &FlowRule, b: &FlowRule) -> Option<FlowRule> {
    if a.actions != b.actions {
        return None;
    }
    let pa = &a.pattern;
    let pb = &b.pattern;
    let mut diffs = 0;
    if pa.src != pb.src {
        diffs += 1;
    }
    if pa.dst != pb.dst {
        diffs += 1;
    }
    if pa.src_port != pb.src_port {
        diffs += 1;
    }
    if pa.dst_port != pb.dst_port {
        diffs += 1;
    }
    if pa.proto != pb.proto {
        diffs += 1;
    }
    if diffs > 1 {
        return None;
    }
    let mut merged = pa.clone();
    if diffs == 1 {
        if pa.src != pb.src {
            merged.src = PrefixMatch::Cidr(merge_prefix_dim(&pa.src, &pb.src)?);
        } else if pa.dst != pb.dst {
            merged.dst = PrefixMatch::Cidr(merge_prefix_dim(&pa.dst, &pb.dst)?);
        } else if pa.src_port != pb.src_port {
            merged.src_port = pa.src_port.merge_contiguous(&pb.src_port)?;
        } else if pa.dst_port != pb.dst_port {
            merged.dst_port = pa.dst_port.merge_contiguous(&pb.dst_port)?;
        } else {
            return None; // differing protocols never merge
        }
    }
    let origin = if a.origin == b.origin {
        a.origin.clone()
    } else {
        format!("{}+{}", a.origin, b.origin)
    };
    Some(FlowRule {
        priority: a.priority.max(b.priority),
        pattern: merged,
        actions: a.actions.clone(),
        origin,
    })
}

fn merge_prefix_dim(a: &PrefixMatch, b: &PrefixMatch) -> Option<Ipv4Cidr> {
    match (a, b) {
        (PrefixMatch::Cidr(ca), PrefixMatch::Cidr(cb)) => ca.sibling_parent(cb),
        _ => None,
    }
}

/// Merge adjacent rules with identical action lists whose matches differ in
/// at most one dimension that unions exactly (sibling prefixes or contiguous
/// port ranges). Repeats to a fixed point; the output classifies every
/// packet identically to the input.
pub fn aggregate_rules(table: &[FlowRule]) -> Vec<FlowRule> {
    let mut rules = table.to_vec();
    loop {
        let mut merged_any = false;
        let mut i = 0;
        while i + 1 < rules.len() {
            if let Some(m) = try_merge(&rules[i], &rules[i + 1]) {
                rules[i] = m;
                rules.remove(i + 1);
                merged_any = true;
            } else {
                i += 1;
            }
        }
        if !merged_any {
            break;
        }
    }
    rules
}

// ---------------------------------------------------------------------------
// CSV form
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct FlowRuleRow {
    priority: u32,
    src: String,
    sport: String,
    dst: String,
    dport: String,
    proto: String,
    actions: String,
    origin: String,
}

/// Serialize a flow table to CSV (`priority,src,sport,dst,dport,proto,actions,origin`).
pub fn flow_table_to_csv(table: &[FlowRule]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in table {
        let actions = r
            .actions
            .iter()
            .map(|a| a.to_string())
            .collect::<Vec<_>>()
            .join(";");
        w.serialize(FlowRuleRow {
            priority: r.priority,
            src: r.pattern.src.to_string(),
            sport: r.pattern.src_port.to_string(),
            dst: r.pattern.dst.to_string(),
            dport: r.pattern.dst_port.to_string(),
            proto: r.pattern.proto.to_string(),
            actions,
            origin: r.origin.clone(),
        })
        .expect("csv serialize");
    }
    String::from_utf8(w.into_inner().expect("csv flush")).expect("utf8")
}

/// Parse a flow table back from its CSV form. `EXT` cells resolve against
/// `config.tenant_prefixes`.
pub fn flow_table_from_csv(
    text: &str,
    config: &CompilerConfig,
) -> Result<Vec<FlowRule>, PolicyError> {
    let mut out = Vec::new();
    for row in csv::Reader::from_reader(text.as_bytes()).deserialize() {
        let row: FlowRuleRow = row?;
        let parse_prefix = |cell: &str, allow_ext: bool| -> Result<PrefixMatch, PolicyError> {
            if cell == "any" {
                Ok(PrefixMatch::Any)
            } else if cell == "EXT" && allow_ext {
                Ok(PrefixMatch::External(config.tenant_prefixes.clone()))
            } else {
                cell.parse::<Ipv4Cidr>().map(PrefixMatch::Cidr).map_err(|_| {
                    PolicyError::CsvField {
                        what: "prefix",
                        text: cell.to_string(),
                    }
                })
            }
        };
        let parse_ports = |cell: &str| -> Result<PortRange, PolicyError> {
            cell.parse().map_err(|_| PolicyError::CsvField {
                what: "port range",
                text: cell.to_string(),
            })
        };
        let actions = row
            .actions
            .split(';')
            .map(|s| {
                s.parse::<RuleAction>().map_err(|_| PolicyError::CsvField {
                    what: "action",
                    text: s.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        out.push(FlowRule {
            priority: row.priority,
            pattern: MatchPattern {
                src: parse_prefix(&row.src, true)?,
                dst: parse_prefix(&row.dst, false)?,
                src_port: parse_ports(&row.sport)?,
                dst_port: parse_ports(&row.dport)?,
                proto: row.proto.parse().map_err(|_| PolicyError::CsvField {
                    what: "protocol",
                    text: row.proto.clone(),
                })?,
            },
            actions,
            origin: row.origin,
        });
    }
    Ok(out)
}
