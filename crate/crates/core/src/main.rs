//! Command-line front end: run scenarios, re-analyze stored traces, compare
//! traces, and exercise the built-in adversarial scenario catalogue.
//!
//! Exit codes: 0 success; 1 usage or configuration error; 2 a safety
//! violation was detected (by the run or in an analyzed trace); 3 a built-in
//! attack scenario did not meet its expected outcome.

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use finsim::block_tree::digest_hex;
use finsim::trace::TraceRecord;
use finsim::{analysis, attack_suite, engines, scenario, trace, SimError};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_OK: u8 = 0;
const EXIT_USAGE: u8 = 1;
const EXIT_SAFETY: u8 = 2;
const EXIT_ATTACK_MISMATCH: u8 = 3;

#[derive(Parser)]
#[command(
    name = "finsim",
    about = "Deterministic consensus-protocol simulator and trace analyzer",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute a scenario config, print its report, optionally save trace
    /// and report files.
    Run {
        /// Path to a flat `key = value` scenario config.
        config: PathBuf,
        /// Override the config's random seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the full trace (one `key=value` record per line) here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the report (the same `key = value` lines printed below)
        /// here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Recompute the report from a stored trace.
    Analyze {
        /// Path to a trace produced by `run --trace`.
        trace: PathBuf,
    },
    /// Compare two traces and report the first divergence.
    Diff {
        a: PathBuf,
        b: PathBuf,
    },
    /// Run every built-in attack scenario and check its expected outcome.
    AttackSuite {
        /// How many seeds to run each scenario under.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::from(EXIT_OK);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let outcome = match cli.cmd {
        Cmd::Run {
            config,
            seed,
            trace,
            report,
        } => cmd_run(&config, seed, trace.as_deref(), report.as_deref()),
        Cmd::Analyze { trace } => cmd_analyze(&trace),
        Cmd::Diff { a, b } => cmd_diff(&a, &b),
        Cmd::AttackSuite { seeds } => cmd_attack_suite(seeds),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(match err {
                SimError::PrefixViolation { .. } => EXIT_SAFETY,
                _ => EXIT_USAGE,
            })
        }
    }
}

fn cmd_run(
    config: &Path,
    seed: Option<u64>,
    trace_out: Option<&Path>,
    report_out: Option<&Path>,
) -> Result<u8, SimError> {
    let text = fs::read_to_string(config)?;
    let mut s = scenario::parse(&text)?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    let records = engines::run(&s)?;
    if let Some(path) = trace_out {
        fs::write(path, trace::render(&records))?;
    }
    report(&records, report_out)
}

fn cmd_analyze(path: &Path) -> Result<u8, SimError> {
    let text = fs::read_to_string(path)?;
    let records = trace::parse(&text)?;
    report(&records, None)
}

/// Print the `key = value` report plus a per-actor table; exit 2 on a
/// detected safety violation.
fn report(records: &[TraceRecord], report_out: Option<&Path>) -> Result<u8, SimError> {
    let summary = analysis::summarize(records)?;
    let rendered = summary.render();
    print!("{rendered}");
    print_table(records);
    if let Some(path) = report_out {
        fs::write(path, &rendered)?;
    }
    if summary.safety_violated() {
        eprintln!("safety violation detected");
        return Ok(EXIT_SAFETY);
    }
    Ok(EXIT_OK)
}

fn print_table(records: &[TraceRecord]) {
    let confirms = analysis::final_confirmations(records);
    if !confirms.is_empty() {
        let votes = analysis::final_votes(records);
        println!();
        println!("{:<10} {:<18} {:<18}", "validator", "last-vote", "last-confirmed");
        for (v, c) in &confirms {
            let vote = votes
                .get(v)
                .map(|d| digest_hex(*d))
                .unwrap_or_else(|| "-".to_string());
            println!("{:<10} {:<18} {:<18}", v, vote, digest_hex(*c));
        }
        return;
    }
    // Classical replication traces have replies instead of confirmations.
    let mut replies: std::collections::BTreeMap<u64, (usize, u64, u64)> = Default::default();
    for record in records {
        if let TraceRecord::Pbft {
            step: "reply",
            actor,
            seq,
            digest,
            ..
        } = record
        {
            let entry = replies.entry(*actor).or_insert((0, 0, 0));
            entry.0 += 1;
            entry.1 = *seq;
            entry.2 = *digest;
        }
    }
    if replies.is_empty() {
        return;
    }
    println!();
    println!("{:<10} {:<10} {:<10} {:<18}", "replica", "replies", "last-seq", "last-digest");
    for (actor, (count, seq, digest)) in &replies {
        println!(
            "{:<10} {:<10} {:<10} {:<18}",
            actor,
            count,
            seq,
            digest_hex(*digest)
        );
    }
}

fn cmd_diff(a: &Path, b: &Path) -> Result<u8, SimError> {
    let left = trace::parse(&fs::read_to_string(a)?)?;
    let right = trace::parse(&fs::read_to_string(b)?)?;
    match analysis::first_divergence(&left, &right) {
        None => {
            println!("traces identical ({} records)", left.len());
        }
        Some(d) => {
            println!("first divergence at line {}", d.line);
            println!("  left:  {}", d.left.as_deref().unwrap_or("<end of trace>"));
            println!("  right: {}", d.right.as_deref().unwrap_or("<end of trace>"));
        }
    }
    Ok(EXIT_OK)
}

fn cmd_attack_suite(seeds: u64) -> Result<u8, SimError> {
    if seeds == 0 {
        return Err(SimError::Config("seeds: need at least one seed".into()));
    }
    let seed_list: Vec<u64> = (0..seeds).collect();
    let reports = attack_suite::run_all(&seed_list)?;
    let mut mismatches = 0usize;
    for case in attack_suite::cases() {
        let case_reports: Vec<_> = reports.iter().filter(|r| r.name == case.name).collect();
        let failing: Vec<_> = case_reports.iter().filter(|r| !r.passed()).collect();
        if failing.is_empty() {
            println!("pass  {} ({} seeds)", case.name, case_reports.len());
        } else {
            mismatches += failing.len();
            println!("FAIL  {}", case.name);
            for report in &failing {
                for failure in &report.failures {
                    println!("      seed {}: {}", report.seed, failure);
                }
            }
        }
    }
    println!(
        "{} scenarios x {} seeds: {} mismatches",
        attack_suite::cases().len(),
        seeds,
        mismatches
    );
    if mismatches > 0 {
        return Ok(EXIT_ATTACK_MISMATCH);
    }
    Ok(EXIT_OK)
}
