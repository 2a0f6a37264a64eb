//! `hsa` command-line driver: run scenarios, compare and sweep traces, check
//! the solvers against their oracles, and serve a live session to a UI.

pub mod protocol;
pub mod serve;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use hsa_core::harness::compare::summarize;
use hsa_core::harness::{
    compare, read_trace_csv, run, sweep, write_trace, ControllerMode, InvariantReport, Scenario, Trace,
};
use hsa_core::oracle::{jcf_oracle_check, qp_oracle_check};
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] hsa_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("websocket: {0}")]
    WebSocket(#[from] tungstenite::Error),
    #[error("{0}")]
    Usage(String),
}

#[derive(Debug, Parser)]
#[command(name = "hsa", version, about = "Haptic shared autonomy simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario and write its trace.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the controller: scf, jcf, scf_passivity or scf_no_l2.
        #[arg(long)]
        mode: Option<String>,
        /// Override a tunable, e.g. `--set k_v=2`. Repeatable.
        #[arg(long = "set", value_name = "NAME=VALUE")]
        set: Vec<String>,
    },
    /// Summarize two traces and their differences.
    Compare { a: PathBuf, b: PathBuf },
    /// Run one scenario per parameter value, in parallel.
    Sweep {
        scenario: PathBuf,
        /// `name=v1,v2,...`
        #[arg(long)]
        param: String,
        /// Where to write one trace per value.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Stream a live run over a websocket.
    Serve {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Simulated seconds per wall-clock second.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
    },
    /// Check the closed-form JCF and the QP solver against slow oracles.
    OracleCheck {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Number of QP instances.
        #[arg(long, default_value_t = 500)]
        qp_n: usize,
    },
}

fn parse_assignment(s: &str) -> Result<(String, &str), CliError> {
    let (name, value) = s
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("expected NAME=VALUE, got {s:?}")))?;
    Ok((name.trim().to_owned(), value.trim()))
}

fn parse_number(s: &str) -> Result<f64, CliError> {
    s.parse()
        .map_err(|_| CliError::Usage(format!("not a number: {s:?}")))
}

/// `k_v=1,5` → ("k_v", [1, 5]).
pub fn parse_sweep(spec: &str) -> Result<(String, Vec<f64>), CliError> {
    let (name, list) = parse_assignment(spec)?;
    let values = list
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(parse_number)
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err(CliError::Usage(format!("no values in {spec:?}")));
    }
    Ok((name, values))
}

fn run_summary(sc: &Scenario, trace: &Trace) -> serde_json::Value {
    let inv = InvariantReport::from_rows(&trace.rows, sc.stability.e_max);
    json!({
        "scenario": sc.name,
        "mode": sc.mode().name(),
        "summary": summarize(&trace.rows),
        "invariants": {
            "min_h": inv.min_h.is_finite().then_some(inv.min_h),
            "min_ledger_margin": inv.min_ledger_margin,
            "tank_in_bounds": inv.tank_in_bounds,
            "fallback_steps": inv.fallback_steps,
            "beta_extra": inv.final_beta_extra,
        },
        "aborted": trace.abort,
    })
}

fn load_trace(path: &Path) -> Result<Vec<hsa_core::harness::TraceRow>, CliError> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok(read_trace_csv(std::io::BufReader::new(file))?)
}

/// Runs one command, writing its report to `out`. Returns whether the
/// command succeeded in the domain sense (run finished, oracles agree).
pub fn execute<W: Write>(cli: Cli, out: &mut W) -> Result<bool, CliError> {
    match cli.command {
        Command::Run {
            scenario,
            out: trace_path,
            mode,
            set,
        } => {
            let mut sc = Scenario::from_path(&scenario)?;
            if let Some(m) = mode {
                let m = ControllerMode::parse(&m)
                    .ok_or_else(|| CliError::Usage(format!("unknown mode {m:?}")))?;
                sc.set_mode(m);
            }
            for a in &set {
                let (name, value) = parse_assignment(a)?;
                sc.set_param(&name, parse_number(value)?)?;
            }
            let trace = run(&sc)?;
            write_trace(&trace_path, &trace)?;
            let mut report = run_summary(&sc, &trace);
            report["trace"] = json!(trace_path);
            writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
            Ok(trace.abort.is_none())
        }
        Command::Compare { a, b } => {
            let report = compare(&load_trace(&a)?, &load_trace(&b)?)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
            Ok(true)
        }
        Command::Sweep {
            scenario,
            param,
            out_dir,
        } => {
            let sc = Scenario::from_path(&scenario)?;
            let (name, values) = parse_sweep(&param)?;
            let results = sweep(&sc, &name, &values)?;
            if let Some(dir) = &out_dir {
                std::fs::create_dir_all(dir)?;
            }
            let mut reports = Vec::new();
            let mut ok = true;
            for (value, trace) in &results {
                let mut variant = sc.clone();
                variant.set_param(&name, *value)?;
                let mut report = run_summary(&variant, trace);
                report["param"] = json!(name);
                report["value"] = json!(value);
                if let Some(dir) = &out_dir {
                    let path = dir.join(format!("{}_{name}_{value}.csv", sc.name));
                    write_trace(&path, trace)?;
                    report["trace"] = json!(path);
                }
                ok &= trace.abort.is_none();
                reports.push(report);
            }
            writeln!(out, "{}", serde_json::to_string_pretty(&reports)?)?;
            Ok(ok)
        }
        Command::Serve {
            scenario,
            port,
            host,
            speed,
        } => {
            let sc = Scenario::from_path(&scenario)?;
            let opts = serve::ServeOptions {
                addr: format!("{host}:{port}"),
                speed,
                ..Default::default()
            };
            let handle = serve::start(&sc, &opts)?;
            writeln!(out, "listening on ws://{}", handle.local_addr())?;
            out.flush()?;
            handle.join();
            Ok(true)
        }
        Command::OracleCheck { n, seed, qp_n } => {
            let t0 = std::time::Instant::now();
            let jcf = jcf_oracle_check(n, seed)?;
            let jcf_secs = t0.elapsed().as_secs_f64();
            let qp = qp_oracle_check(qp_n, seed)?;
            let ok = jcf.passed() && qp.passed();
            let report = json!({
                "jcf": jcf,
                "jcf_seconds": jcf_secs,
                "qp": qp,
                "passed": ok,
            });
            writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
            Ok(ok)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_spec_parses() {
        assert_eq!(parse_sweep("k_v=1,5").unwrap(), ("k_v".into(), vec![1.0, 5.0]));
        assert_eq!(parse_sweep(" e_max = 0, 0.2 ").unwrap().1, vec![0.0, 0.2]);
        assert!(parse_sweep("k_v").is_err());
        assert!(parse_sweep("k_v=").is_err());
        assert!(parse_sweep("k_v=a").is_err());
    }

    #[test]
    fn cli_accepts_documented_verbs() {
        for args in [
            vec!["hsa", "run", "s.toml", "--out", "t.csv"],
            vec!["hsa", "compare", "a.csv", "b.csv"],
            vec!["hsa", "sweep", "s.toml", "--param", "k_v=1,5"],
            vec!["hsa", "serve", "--scenario", "s.toml", "--port", "9000"],
            vec!["hsa", "oracle-check", "--n", "200", "--seed", "7"],
        ] {
            Cli::try_parse_from(&args).unwrap_or_else(|e| panic!("{args:?}: {e}"));
        }
    }
}
