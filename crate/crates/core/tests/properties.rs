// SPDX-License-Identifier: Apache-2.0

//! Property tests: overlap classification against an exhaustive
//! small-universe oracle, aggregation semantics, and the queueing
//! identities on randomized stable parameter grids.

use std::net::Ipv4Addr;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use sfc_nfp::policy::{
    aggregate_rules, match_overlap, winning_rule, FlowRule, Ipv4Cidr, MatchPattern,
    OverlapRelation, Packet, PortRange, PrefixMatch, Proto, ProtoMatch, RuleAction,
};
use sfc_nfp::queueing::MmcParams;

fn cidr(addr: u32, len: u8) -> Ipv4Cidr {
    let mask = if len == 0 { 0 } else { u32::MAX << (32 - len) };
    Ipv4Cidr::new(Ipv4Addr::from(addr & mask), len).unwrap()
}

fn arb_prefix() -> impl Strategy<Value = PrefixMatch> {
    prop_oneof![
        Just(PrefixMatch::Any),
        (any::<u32>(), 0u8..=32).prop_map(|(a, l)| PrefixMatch::Cidr(cidr(a, l))),
        Just(PrefixMatch::External(vec![
            cidr(0x0A01_0000, 24),
            cidr(0xC0A8_0100, 24),
        ])),
    ]
}

fn arb_ports() -> impl Strategy<Value = PortRange> {
    (any::<u16>(), any::<u16>()).prop_map(|(a, b)| PortRange::new(a.min(b), a.max(b)).unwrap())
}

fn arb_proto() -> impl Strategy<Value = ProtoMatch> {
    prop_oneof![
        Just(ProtoMatch::Any),
        Just(ProtoMatch::Is(Proto::Tcp)),
        Just(ProtoMatch::Is(Proto::Udp)),
        Just(ProtoMatch::Is(Proto::Icmp)),
    ]
}

fn arb_pattern() -> impl Strategy<Value = MatchPattern> {
    (
        arb_prefix(),
        arb_prefix(),
        arb_ports(),
        arb_ports(),
        arb_proto(),
    )
        .prop_map(|(src, dst, src_port, dst_port, proto)| MatchPattern {
            src,
            dst,
            src_port,
            dst_port,
            proto,
        })
}

fn flipped(r: OverlapRelation) -> OverlapRelation {
    match r {
        OverlapRelation::AContainsB => OverlapRelation::BContainsA,
        OverlapRelation::BContainsA => OverlapRelation::AContainsB,
        other => other,
    }
}

proptest! {
    #[test]
    fn overlap_flips_under_argument_swap(a in arb_pattern(), b in arb_pattern()) {
        prop_assert_eq!(match_overlap(&b, &a), flipped(match_overlap(&a, &b)));
    }

    #[test]
    fn overlap_is_reflexively_equal(a in arb_pattern()) {
        prop_assert_eq!(match_overlap(&a, &a), OverlapRelation::Equal);
    }
}

/// Generalize every dimension of a pattern, yielding a superset match.
fn widen(p: &MatchPattern, rng: &mut ChaCha12Rng) -> MatchPattern {
    let widen_prefix = |pm: &PrefixMatch, rng: &mut ChaCha12Rng| match pm {
        PrefixMatch::Cidr(c) if c.prefix_len() > 0 && rng.gen_bool(0.5) => {
            let new_len = rng.gen_range(0..c.prefix_len());
            PrefixMatch::Cidr(cidr(u32::from(c.address()), new_len))
        }
        PrefixMatch::External(_) if rng.gen_bool(0.3) => PrefixMatch::Any,
        other => other.clone(),
    };
    MatchPattern {
        src: widen_prefix(&p.src, rng),
        dst: widen_prefix(&p.dst, rng),
        src_port: PortRange::new(
            p.src_port.lo.saturating_sub(rng.gen_range(0..100)),
            p.src_port.hi.saturating_add(rng.gen_range(0..100)),
        )
        .unwrap(),
        dst_port: PortRange::new(
            p.dst_port.lo.saturating_sub(rng.gen_range(0..100)),
            p.dst_port.hi.saturating_add(rng.gen_range(0..100)),
        )
        .unwrap(),
        proto: if rng.gen_bool(0.3) {
            ProtoMatch::Any
        } else {
            p.proto
        },
    }
}

#[test]
fn containment_is_transitive_along_widening_chains() {
    let mut rng = ChaCha12Rng::seed_from_u64(11);
    for _ in 0..500 {
        let inner = MatchPattern {
            src: PrefixMatch::Cidr(cidr(rng.gen(), rng.gen_range(8..=32))),
            dst: PrefixMatch::Cidr(cidr(rng.gen(), rng.gen_range(8..=32))),
            src_port: {
                let lo = rng.gen_range(1000..2000);
                PortRange::new(lo, lo + rng.gen_range(0..50)).unwrap()
            },
            dst_port: {
                let lo = rng.gen_range(1000..2000);
                PortRange::new(lo, lo + rng.gen_range(0..50)).unwrap()
            },
            proto: ProtoMatch::Is(Proto::Tcp),
        };
        let mid = widen(&inner, &mut rng);
        let outer = widen(&mid, &mut rng);
        for (big, small) in [(&mid, &inner), (&outer, &mid), (&outer, &inner)] {
            let rel = match_overlap(big, small);
            assert!(
                matches!(rel, OverlapRelation::Equal | OverlapRelation::AContainsB),
                "widened pattern does not contain the original: {rel:?}"
            );
        }
    }
}

// ---------------------------------------------------------------------------
// Small-universe oracle
// ---------------------------------------------------------------------------

const DST_BASE: u32 = 0x0A01_0000; // 10.1.0.0

/// Patterns confined to one /24 of destination space and 16 ports, so the
/// packet universe below exercises every distinction they can make.
fn small_pattern(rng: &mut ChaCha12Rng) -> MatchPattern {
    let dst = {
        let len = rng.gen_range(24..=32);
        let host = rng.gen_range(0u32..256);
        PrefixMatch::Cidr(cidr(DST_BASE | host, len))
    };
    let dst_port = if rng.gen_bool(0.3) {
        PortRange::ANY
    } else {
        let lo = rng.gen_range(0u16..16);
        PortRange::new(lo, rng.gen_range(lo..16)).unwrap()
    };
    let proto = match rng.gen_range(0..4) {
        0 => ProtoMatch::Any,
        1 => ProtoMatch::Is(Proto::Tcp),
        2 => ProtoMatch::Is(Proto::Udp),
        _ => ProtoMatch::Is(Proto::Icmp),
    };
    MatchPattern {
        src: PrefixMatch::Any,
        dst,
        src_port: PortRange::ANY,
        dst_port,
        proto,
    }
}

/// Every packet the small patterns can tell apart: the full destination /24
/// plus one outside address, ports 0..=15 plus one outside port, all protos.
fn universe() -> Vec<Packet> {
    let mut out = Vec::new();
    let mut dsts: Vec<u32> = (0..256).map(|h| DST_BASE | h).collect();
    dsts.push(0x0808_0808);
    for dst in dsts {
        for dst_port in 0..=16u16 {
            for proto in [Proto::Tcp, Proto::Udp, Proto::Icmp] {
                out.push(Packet {
                    src: 0,
                    dst,
                    src_port: 0,
                    dst_port,
                    proto,
                });
            }
        }
    }
    out
}

#[test]
fn overlap_matches_exhaustive_packet_oracle() {
    let mut rng = ChaCha12Rng::seed_from_u64(23);
    let universe = universe();
    for _ in 0..300 {
        let a = small_pattern(&mut rng);
        let b = small_pattern(&mut rng);
        let mut both = false;
        let mut only_a = false;
        let mut only_b = false;
        for pkt in &universe {
            match (a.matches(pkt), b.matches(pkt)) {
                (true, true) => both = true,
                (true, false) => only_a = true,
                (false, true) => only_b = true,
                (false, false) => {}
            }
        }
        let expected = if !both {
            OverlapRelation::Disjoint
        } else if !only_a && !only_b {
            OverlapRelation::Equal
        } else if !only_b {
            OverlapRelation::AContainsB
        } else if !only_a {
            OverlapRelation::BContainsA
        } else {
            OverlapRelation::PartialOverlap
        };
        assert_eq!(
            match_overlap(&a, &b),
            expected,
            "oracle disagrees for {a} vs {b}"
        );
    }
}

fn random_table(rng: &mut ChaCha12Rng, rules: usize) -> Vec<FlowRule> {
    let action_pool: [Vec<RuleAction>; 3] = [
        vec![RuleAction::Drop],
        vec![RuleAction::Forward("next".to_string())],
        vec![
            RuleAction::Mirror("ids".to_string()),
            RuleAction::Forward("next".to_string()),
        ],
    ];
    (0..rules)
        .map(|i| FlowRule {
            priority: ((rules - i) * 100) as u32,
            pattern: small_pattern(rng),
            actions: action_pool[rng.gen_range(0..action_pool.len())].clone(),
            origin: "firewall".to_string(),
        })
        .collect()
}

#[test]
fn aggregation_preserves_classification_of_every_packet() {
    let universe = universe();
    for seed in 0..5 {
        let mut rng = ChaCha12Rng::seed_from_u64(100 + seed);
        let table = random_table(&mut rng, 50);
        let aggregated = aggregate_rules(&table);
        assert!(aggregated.len() <= table.len());
        assert_eq!(aggregate_rules(&aggregated), aggregated, "not idempotent");
        for pkt in &universe {
            let before = winning_rule(&table, pkt).map(|r| r.actions.clone());
            let after = winning_rule(&aggregated, pkt).map(|r| r.actions.clone());
            assert_eq!(before, after, "packet {pkt:?} classified differently");
        }
    }
}

// ---------------------------------------------------------------------------
// Queueing identities on randomized stable grids
// ---------------------------------------------------------------------------

fn arb_stable_params() -> impl Strategy<Value = MmcParams> {
    (0.2f64..5.0, 0.02f64..0.95, 1u32..=16).prop_map(|(mu, rho, c)| {
        MmcParams::new(rho * c as f64 * mu, mu, c).unwrap()
    })
}

proptest! {
    #[test]
    fn mean_wait_forms_agree(params in arb_stable_params()) {
        let rho = params.utilization().unwrap();
        let c_mu = params.servers as f64 * params.mu;
        let pi_w = params.delay_probability().unwrap();
        let lq = params.mean_queue_length().unwrap();
        let direct = pi_w / (1.0 - rho) / c_mu;
        let via_queue = pi_w / c_mu + lq / c_mu;
        prop_assert!((direct - via_queue).abs() / direct.max(via_queue) < 1e-12);
        prop_assert!((params.mean_wait().unwrap() - direct).abs() <= f64::EPSILON * direct);
    }

    #[test]
    fn single_server_reduces_to_closed_forms(mu in 0.2f64..5.0, rho in 0.02f64..0.95) {
        let lambda = rho * mu;
        let p = MmcParams::new(lambda, mu, 1).unwrap();
        let rho = lambda / mu;
        let rel = |x: f64, y: f64| (x - y).abs() / y.abs();
        prop_assert!(rel(p.p0().unwrap(), 1.0 - rho) < 1e-12);
        prop_assert!(rel(p.delay_probability().unwrap(), rho) < 1e-12);
        prop_assert!(rel(p.mean_queue_length().unwrap(), rho * rho / (1.0 - rho)) < 1e-12);
        prop_assert!(rel(p.mean_wait().unwrap(), rho / (mu - lambda)) < 1e-12);
    }

    #[test]
    fn congestion_grows_with_arrivals(mu in 0.2f64..5.0, c in 1u32..=16,
                                      lo in 0.05f64..0.5, hi in 0.55f64..0.95) {
        let a = MmcParams::new(lo * c as f64 * mu, mu, c).unwrap();
        let b = MmcParams::new(hi * c as f64 * mu, mu, c).unwrap();
        prop_assert!(a.delay_probability().unwrap() < b.delay_probability().unwrap());
        prop_assert!(a.mean_wait().unwrap() < b.mean_wait().unwrap());
    }

    #[test]
    fn congestion_shrinks_with_servers(mu in 0.2f64..5.0, c in 1u32..=15, rho in 0.1f64..0.9) {
        let lambda = rho * c as f64 * mu;
        let small = MmcParams::new(lambda, mu, c).unwrap();
        let big = MmcParams::new(lambda, mu, c + 1).unwrap();
        prop_assert!(big.delay_probability().unwrap() < small.delay_probability().unwrap());
        prop_assert!(big.mean_wait().unwrap() < small.mean_wait().unwrap());
    }

    #[test]
    fn balance_holds_on_random_grid(params in arb_stable_params(), n in 1u64..200) {
        prop_assert!(params.balance_residual(n).unwrap() < 1e-10);
    }
}
