// SPDX-License-Identifier: Apache-2.0

//! Command-line front end: compile policies, plan chains, evaluate the
//! queueing model, and run simulations. All results are CSV on stdout
//! (RFC 4180, LF line endings); diagnostics go to stderr.
//!
//! Exit codes: 0 success, 1 usage error, 2 input parse error, 3 infeasible
//! or unstable model.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use sfc_nfp::analysis::{
    build_stage_plan, parse_chain_spec, reorder_chain, AnalysisError, RuleTables, VnfInstance,
};
use sfc_nfp::policy::{
    aggregate_rules, compile_to_flow_table, flow_table_to_csv, parse_policy, PolicyError,
};
use sfc_nfp::queueing::{
    chain_latency_serial, chain_latency_staged, MmcParams, QueueingError,
};
use sfc_nfp::report::{compute_gains, load_fixture, sweep_rows_to_csv, SweepRow};
use sfc_nfp::sim::{
    compare_modes, parse_scenario, run_nfp, run_serial, validate_littles_law, SimError,
};

#[derive(Parser)]
#[command(
    name = "sfcnfp",
    about = "Service-chain parallelization: policy compiler, hazard-based stage planner, M/M/c estimates, and a seeded simulator",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compile a policy file to a flow table (CSV on stdout)
    Compile {
        /// Policy DSL file
        policy_file: PathBuf,
        /// Merge adjacent rules with identical actions where possible
        #[arg(long)]
        aggregate: bool,
    },
    /// Build the parallel-stage plan for a chain (JSON on stdout)
    Plan {
        /// Chain spec file (one `id kind mu=<float> c=<int>` per line)
        chain_file: PathBuf,
        /// Apply security/efficiency reordering before planning
        #[arg(long)]
        reorder: bool,
        /// Policy file supplying per-VNF rules for reordering decisions
        #[arg(long, requires = "reorder")]
        policy: Option<PathBuf>,
    },
    /// Evaluate M/M/c station metrics (CSV on stdout)
    Queue(QueueArgs),
    /// Analytic end-to-end latency of a chain (CSV on stdout)
    Estimate {
        chain_file: PathBuf,
        /// Offered arrival rate, packets/sec
        #[arg(long)]
        lambda: f64,
        /// Estimate the staged plan instead of the serial chain
        #[arg(long)]
        plan: bool,
        /// Merge overhead per stage, seconds
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
    },
    /// Simulate serial vs staged execution for a scenario (CSV on stdout)
    Simulate {
        scenario_file: PathBuf,
        /// Replications; run i uses seed + i
        #[arg(long, default_value_t = 1)]
        reps: u32,
    },
    /// Speedup table of the embedded reference dataset (CSV on stdout)
    Report {
        /// Use the embedded latency dataset
        #[arg(long, required = true)]
        fixture: bool,
    },
    /// Simulate a scenario over several network sizes (CSV on stdout)
    Sweep {
        scenario_file: PathBuf,
        /// Network sizes; offered load is size * base_rate
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<u32>,
        #[arg(long, default_value_t = 1)]
        reps: u32,
    },
}

#[derive(Args)]
struct QueueArgs {
    #[arg(long)]
    lambda: f64,
    #[arg(long)]
    mu: f64,
    #[arg(long)]
    c: u32,
}

/// Failures grouped by exit code.
enum AppError {
    /// Unreadable or unparseable input: exit 2.
    Input(String),
    /// Structurally sound input describing an infeasible or unstable model:
    /// exit 3.
    Model(String),
}

impl AppError {
    fn exit_code(&self) -> u8 {
        match self {
            AppError::Input(_) => 2,
            AppError::Model(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            AppError::Input(m) | AppError::Model(m) => m,
        }
    }
}

impl From<PolicyError> for AppError {
    fn from(e: PolicyError) -> Self {
        AppError::Input(e.to_string())
    }
}

impl From<AnalysisError> for AppError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::InfeasibleOrder { .. } => AppError::Model(e.to_string()),
            _ => AppError::Input(e.to_string()),
        }
    }
}

impl From<QueueingError> for AppError {
    fn from(e: QueueingError) -> Self {
        match e {
            QueueingError::InvalidParams { .. } => AppError::Input(e.to_string()),
            _ => AppError::Model(e.to_string()),
        }
    }
}

impl From<SimError> for AppError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Analysis(inner) => inner.into(),
            SimError::Queueing(inner) => inner.into(),
            _ => AppError::Input(e.to_string()),
        }
    }
}

fn read_file(path: &Path) -> Result<String, AppError> {
    std::fs::read_to_string(path)
        .map_err(|e| AppError::Input(format!("cannot read {}: {e}", path.display())))
}

fn load_chain(path: &Path) -> Result<Vec<VnfInstance>, AppError> {
    Ok(parse_chain_spec(&read_file(path)?)?)
}

/// Rules for each chain instance, joined by VNF kind: a policy line
/// compiled from kind `firewall` applies to every firewall in the chain.
fn tables_by_kind(chain: &[VnfInstance], policy_path: &Path) -> Result<RuleTables, AppError> {
    let table = compile_to_flow_table(&parse_policy(&read_file(policy_path)?)?)?;
    let mut tables = RuleTables::new();
    for vnf in chain {
        let kind = vnf.kind.to_string();
        let rules: Vec<_> = table.iter().filter(|r| r.origin == kind).cloned().collect();
        if !rules.is_empty() {
            tables.insert(vnf.id.clone(), rules);
        }
    }
    Ok(tables)
}

fn seed_override() -> Result<Option<u64>, AppError> {
    match std::env::var("SFC_SEED") {
        Ok(v) => v
            .parse::<u64>()
            .map(Some)
            .map_err(|_| AppError::Input(format!("SFC_SEED must be an integer, got '{v}'"))),
        Err(_) => Ok(None),
    }
}

fn resolve_chain_path(scenario_path: &Path, chain: &str) -> PathBuf {
    let p = Path::new(chain);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        scenario_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(p)
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::Compile {
            policy_file,
            aggregate,
        } => {
            let set = parse_policy(&read_file(&policy_file)?)?;
            let mut table = compile_to_flow_table(&set)?;
            if aggregate {
                table = aggregate_rules(&table);
            }
            print!("{}", flow_table_to_csv(&table));
        }
        Command::Plan {
            chain_file,
            reorder,
            policy,
        } => {
            let mut chain = load_chain(&chain_file)?;
            if reorder {
                let tables = match &policy {
                    Some(p) => tables_by_kind(&chain, p)?,
                    None => RuleTables::new(),
                };
                chain = reorder_chain(&chain, &tables)?;
            }
            let plan = build_stage_plan(&chain)?;
            println!("{}", plan.to_json());
        }
        Command::Queue(args) => {
            let params = MmcParams::new(args.lambda, args.mu, args.c)?;
            print!("{}", params.metrics()?.to_csv());
        }
        Command::Estimate {
            chain_file,
            lambda,
            plan,
            epsilon,
        } => {
            let chain = load_chain(&chain_file)?;
            let estimate = if plan {
                let stage_plan = build_stage_plan(&chain)?.with_merge_overhead(epsilon);
                chain_latency_staged(&stage_plan, &chain, lambda)?
            } else {
                chain_latency_serial(&chain, lambda)?
            };
            print!("{}", estimate.to_csv());
        }
        Command::Simulate {
            scenario_file,
            reps,
        } => {
            let scenario = parse_scenario(&read_file(&scenario_file)?)?;
            let chain = load_chain(&resolve_chain_path(&scenario_file, &scenario.chain))?;
            let mut cfg = scenario.config;
            if let Some(seed) = seed_override()? {
                cfg.seed = seed;
            }
            let report = compare_modes(&chain, &cfg, reps)?;
            print!("{}", report.to_csv());
            eprintln!(
                "serial/nfp gain: {:.4}; theoretical/nfp gain: {:.4}; plan: {}",
                report.gain_serial_over_nfp,
                report.gain_theoretical_over_nfp,
                report.plan.to_json()
            );
        }
        Command::Report { fixture: _ } => {
            let gains = compute_gains(&load_fixture().map_err(|e| AppError::Input(e.to_string()))?);
            print!("{}", gains.to_csv());
            let max = gains.max_serial_gain();
            eprintln!(
                "mean theoretical/nfp gain: {:.4}; max serial/nfp gain: {:.4} at cores={} size={}",
                gains.mean_theoretical_gain(),
                max.gain_serial_over_nfp,
                max.cores,
                max.network_size
            );
        }
        Command::Sweep {
            scenario_file,
            sizes,
            reps,
        } => {
            if reps < 1 {
                return Err(AppError::Input("--reps must be >= 1".to_string()));
            }
            let scenario = parse_scenario(&read_file(&scenario_file)?)?;
            let chain = load_chain(&resolve_chain_path(&scenario_file, &scenario.chain))?;
            let mut base_cfg = scenario.config;
            if let Some(seed) = seed_override()? {
                base_cfg.seed = seed;
            }
            let plan = build_stage_plan(&chain)?.with_merge_overhead(base_cfg.merge_overhead);
            let mut rows: Vec<SweepRow> = Vec::new();
            for &size in &sizes {
                let mut cfg = base_cfg.clone();
                cfg.lambda = size as f64 * scenario.base_node_rate;
                let push_runs = |mode: &str,
                                 rows: &mut Vec<SweepRow>|
                 -> Result<(), AppError> {
                    for i in 0..reps as u64 {
                        let mut run_cfg = cfg.clone();
                        run_cfg.seed = cfg.seed + i;
                        let stats = if mode == "serial" {
                            run_serial(&chain, &run_cfg)?
                        } else {
                            run_nfp(&plan, &chain, &run_cfg)?
                        };
                        rows.push(SweepRow {
                            network_size: size,
                            lambda: cfg.lambda,
                            mode: mode.to_string(),
                            seed: Some(run_cfg.seed),
                            count: Some(stats.count),
                            mean: stats.mean,
                            p50: Some(stats.p50),
                            p95: Some(stats.p95),
                            p99: Some(stats.p99),
                            littles_residual: validate_littles_law(&stats, cfg.lambda).ok(),
                        });
                    }
                    Ok(())
                };
                push_runs("serial", &mut rows)?;
                match chain_latency_serial(&chain, cfg.lambda) {
                    Ok(est) => rows.push(SweepRow {
                        network_size: size,
                        lambda: cfg.lambda,
                        mode: "theoretical".to_string(),
                        seed: None,
                        count: None,
                        mean: est.total,
                        p50: None,
                        p95: None,
                        p99: None,
                        littles_residual: None,
                    }),
                    Err(e) => eprintln!("size {size}: no analytic estimate: {e}"),
                }
                push_runs("nfp", &mut rows)?;
            }
            print!("{}", sweep_rows_to_csv(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
