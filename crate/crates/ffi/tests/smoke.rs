// SPDX-License-Identifier: Apache-2.0

//! Exercises the C ABI from Rust: status codes, handle lifecycles, string
//! ownership, and determinism. Also syntax-checks the generated header
//! with a real C compiler when one is available.

use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::path::Path;
use std::ptr;

use sfc_nfp_ffi::*;

const CHAIN: &str = "nat1 nat mu=1.0 c=2\nfw1 firewall mu=1.0 c=2\nids1 ids mu=1.0 c=2\n";

fn c_string(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn take_string(ptr: *mut c_char) -> String {
    assert!(!ptr.is_null());
    let s = CStr::from_ptr(ptr).to_str().unwrap().to_string();
    sfc_string_free(ptr);
    s
}

unsafe fn last_error() -> String {
    CStr::from_ptr(sfc_last_error_message())
        .to_str()
        .unwrap()
        .to_string()
}

#[test]
fn metrics_round_trip_through_the_abi() {
    unsafe {
        let mut out = std::mem::zeroed::<SfcMmcMetrics>();
        assert_eq!(sfc_mmc_metrics(1.0, 2.0, 1, &mut out), SfcStatus::Ok);
        assert!((out.rho - 0.5).abs() < 1e-12);
        assert!((out.p0 - 0.5).abs() < 1e-12);
        assert!((out.mean_wait - 0.5).abs() < 1e-12);
    }
}

#[test]
fn metrics_error_paths() {
    unsafe {
        let mut out = std::mem::zeroed::<SfcMmcMetrics>();
        assert_eq!(sfc_mmc_metrics(2.0, 1.0, 1, &mut out), SfcStatus::Unstable);
        assert!(last_error().contains("rho"), "{}", last_error());
        assert_eq!(
            sfc_mmc_metrics(-1.0, 1.0, 1, &mut out),
            SfcStatus::InvalidArgument
        );
        assert_eq!(
            sfc_mmc_metrics(1.0, 2.0, 1, ptr::null_mut()),
            SfcStatus::NullArgument
        );
    }
}

#[test]
fn chain_and_plan_lifecycle() {
    unsafe {
        let text = c_string(CHAIN);
        let mut chain: *mut SfcChain = ptr::null_mut();
        assert_eq!(sfc_chain_parse(text.as_ptr(), &mut chain), SfcStatus::Ok);
        assert_eq!(sfc_chain_len(chain), 3);

        let mut plan: *mut SfcStagePlan = ptr::null_mut();
        assert_eq!(sfc_stage_plan_build(chain, &mut plan), SfcStatus::Ok);
        assert_eq!(sfc_stage_plan_stage_count(plan), 2);

        let mut json: *mut c_char = ptr::null_mut();
        assert_eq!(sfc_stage_plan_to_json(plan, &mut json), SfcStatus::Ok);
        assert_eq!(take_string(json), r#"[["nat1"],["fw1","ids1"]]"#);

        sfc_stage_plan_free(plan);
        sfc_chain_free(chain);
    }
}

#[test]
fn chain_parse_failures_set_the_error_message() {
    unsafe {
        let mut chain: *mut SfcChain = ptr::null_mut();
        let bad = c_string("x whatkind mu=1 c=1");
        assert_eq!(
            sfc_chain_parse(bad.as_ptr(), &mut chain),
            SfcStatus::ParseError
        );
        assert!(last_error().contains("line 1"), "{}", last_error());
        assert_eq!(
            sfc_chain_parse(ptr::null(), &mut chain),
            SfcStatus::NullArgument
        );
    }
}

#[test]
fn frees_tolerate_null() {
    unsafe {
        sfc_chain_free(ptr::null_mut());
        sfc_stage_plan_free(ptr::null_mut());
        sfc_flow_table_free(ptr::null_mut());
        sfc_string_free(ptr::null_mut());
    }
}

#[test]
fn policy_compiles_to_a_table_handle() {
    unsafe {
        let text = c_string(
            "ids alert any EXT any -> 10.1.0.0/24 any\nfirewall drop tcp EXT any -> 10.1.0.0/24 80\n",
        );
        let mut table: *mut SfcFlowTable = ptr::null_mut();
        assert_eq!(sfc_policy_compile(text.as_ptr(), &mut table), SfcStatus::Ok);
        assert_eq!(sfc_flow_table_len(table), 2);

        let mut csv: *mut c_char = ptr::null_mut();
        assert_eq!(sfc_flow_table_to_csv(table, &mut csv), SfcStatus::Ok);
        let csv = take_string(csv);
        assert!(csv.starts_with("priority,src,sport,dst,dport,proto,actions,origin\n"));
        sfc_flow_table_free(table);

        let bad = c_string("ids explode any any any -> any any");
        assert_eq!(
            sfc_policy_compile(bad.as_ptr(), &mut table),
            SfcStatus::ParseError
        );
    }
}

#[test]
fn estimates_and_instability() {
    unsafe {
        let text = c_string("a ids mu=2.0 c=1\n");
        let mut chain: *mut SfcChain = ptr::null_mut();
        assert_eq!(sfc_chain_parse(text.as_ptr(), &mut chain), SfcStatus::Ok);

        let mut total = 0.0f64;
        assert_eq!(
            sfc_chain_estimate(chain, 1.0, false, 0.0, &mut total),
            SfcStatus::Ok
        );
        assert!((total - 1.0).abs() < 1e-12);

        assert_eq!(
            sfc_chain_estimate(chain, 3.0, false, 0.0, &mut total),
            SfcStatus::Unstable
        );
        sfc_chain_free(chain);
    }
}

#[test]
fn simulation_compare_is_deterministic_through_the_abi() {
    unsafe {
        let text = c_string(CHAIN);
        let mut chain: *mut SfcChain = ptr::null_mut();
        assert_eq!(sfc_chain_parse(text.as_ptr(), &mut chain), SfcStatus::Ok);

        let cfg = SfcSimConfig {
            seed: 3,
            lambda: 1.2,
            horizon_packets: 30_000,
            warmup: 1_000,
            merge_overhead: 0.0,
            thinning: false,
            drop_probability: 0.0,
        };
        let mut a = std::mem::zeroed::<SfcComparison>();
        let mut b = std::mem::zeroed::<SfcComparison>();
        assert_eq!(sfc_simulate_compare(chain, cfg, 1, &mut a), SfcStatus::Ok);
        assert_eq!(sfc_simulate_compare(chain, cfg, 1, &mut b), SfcStatus::Ok);
        assert_eq!(a.serial_mean, b.serial_mean);
        assert_eq!(a.nfp_mean, b.nfp_mean);
        assert_eq!(a.stage_count, 2);
        assert!(a.serial_mean > 0.0 && a.nfp_mean > 0.0);
        assert!(a.gain_serial_over_nfp > 1.0);

        sfc_chain_free(chain);
    }
}

/// The generated header must stand alone under a C compiler. Skipped when
/// no compiler is on PATH.
#[test]
fn generated_header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/sfc_nfp.h");
    assert!(header.exists(), "header not generated at {header:?}");
    let text = std::fs::read_to_string(&header).unwrap();
    for symbol in [
        "sfc_mmc_metrics",
        "sfc_chain_parse",
        "sfc_stage_plan_build",
        "sfc_policy_compile",
        "sfc_simulate_compare",
        "SFC_STATUS_OK",
    ] {
        assert!(text.contains(symbol), "header missing {symbol}");
    }

    let compiler = ["cc", "gcc", "clang"].into_iter().find(|c| {
        std::process::Command::new(c)
            .arg("--version")
            .output()
            .is_ok()
    });
    let Some(compiler) = compiler else {
        eprintln!("no C compiler found; header syntax check skipped");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let main_c = dir.path().join("use_header.c");
    std::fs::write(
        &main_c,
        r#"
#include "sfc_nfp.h"
#include <stddef.h>

int check(void) {
    SfcMmcMetrics m;
    SfcStatus s = sfc_mmc_metrics(1.0, 2.0, 1, &m);
    if (s != SFC_STATUS_OK) return 1;
    SfcChain *chain = NULL;
    if (sfc_chain_parse("a ids mu=2.0 c=1\n", &chain) != SFC_STATUS_OK) return 1;
    double total = 0.0;
    sfc_chain_estimate(chain, 1.0, false, 0.0, &total);
    sfc_chain_free(chain);
    return 0;
}
"#,
    )
    .unwrap();
    let out = std::process::Command::new(compiler)
        .arg("-fsyntax-only")
        .arg("-I")
        .arg(header.parent().unwrap())
        .arg(&main_c)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "header failed C syntax check: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}
