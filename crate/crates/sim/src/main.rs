use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use stratval_sim::events::EventLog;
use stratval_sim::scenario::ScenarioError;
use stratval_sim::{metrics, replay, verify, Scenario};

const EXIT_VIOLATION: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "stratval", version, about = "Seeded simulator for the strategy validation protocol")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario for one or more consecutive seeds.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Number of consecutive seeds starting at --seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
        /// Check ledger invariants after every operation and verify each log.
        #[arg(long)]
        check_invariants: bool,
    },
    /// Check an event log for consistency.
    Verify {
        #[arg(long)]
        log: PathBuf,
    },
    /// Print the metrics of one event log.
    Report {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Print balances and instance states at the end of an epoch.
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        until: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { scenario, seed, seeds, out, check_invariants } => run(&scenario, seed, seeds, &out, check_invariants),
        Command::Verify { log } => with_log(&log, |log| {
            let violations = verify::verify(&log);
            for v in &violations {
                println!("{v}");
            }
            if violations.is_empty() {
                println!("ok: {} records", log.records.len());
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(EXIT_VIOLATION))
            }
        }),
        Command::Report { log, format: Format::Csv } => with_log(&log, |log| {
            let mut out = std::io::stdout().lock();
            writeln!(out, "metric,value")?;
            for (name, value) in metrics::compute(&log) {
                writeln!(out, "{name},{value}")?;
            }
            Ok(ExitCode::SUCCESS)
        }),
        Command::Replay { log, until } => with_log(&log, |log| {
            let mut out = std::io::stdout().lock();
            for line in replay::replay_until(&log, until).lines() {
                writeln!(out, "{line}")?;
            }
            Ok(ExitCode::SUCCESS)
        }),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(EXIT_CONFIG)
    })
}

fn with_log(path: &Path, f: impl FnOnce(EventLog) -> anyhow::Result<ExitCode>) -> anyhow::Result<ExitCode> {
    let log = EventLog::read_path(path).with_context(|| format!("reading {}", path.display()))?;
    f(log)
}

fn run(path: &Path, seed: u64, seeds: u64, out: &Path, check_invariants: bool) -> anyhow::Result<ExitCode> {
    let scenario = match Scenario::load(path) {
        Ok(s) => s,
        Err(ScenarioError::Invalid(issues)) => {
            for issue in issues {
                eprintln!("config error: {issue}");
            }
            return Ok(ExitCode::from(EXIT_CONFIG));
        }
        Err(e) => {
            eprintln!("config error: {e}");
            return Ok(ExitCode::from(EXIT_CONFIG));
        }
    };
    for w in scenario.warnings() {
        eprintln!("warning: {w}");
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let seed_list: Vec<u64> = (0..seeds.max(1)).map(|k| seed.wrapping_add(k)).collect();
    let results: Vec<(u64, stratval_sim::RunOutput)> =
        seed_list.par_iter().map(|s| (*s, stratval_sim::run(&scenario, *s, check_invariants))).collect();

    let mut failed = false;
    let mut per_seed = Vec::new();
    let mut metrics_csv = String::from("seed,metric,value\n");
    for (s, output) in &results {
        let log_path = out.join(format!("events-{s}.jsonl"));
        let file = fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
        output.log.write_to(std::io::BufWriter::new(file))?;
        for (epoch, lines) in &output.snapshots {
            let snap = out.join(format!("snapshot-{s}-epoch-{epoch}.csv"));
            fs::write(&snap, lines.join("\n") + "\n").with_context(|| format!("writing {}", snap.display()))?;
        }
        if let Some(reason) = &output.aborted {
            eprintln!("seed {s}: invariant violation: {reason}");
            failed = true;
        }
        if check_invariants {
            for v in verify::verify(&output.log) {
                eprintln!("seed {s}: {v}");
                failed = true;
            }
        }
        let m = metrics::compute(&output.log);
        for (name, value) in &m {
            metrics_csv.push_str(&format!("{s},{name},{value}\n"));
        }
        per_seed.push(m);
    }
    fs::write(out.join("metrics.csv"), metrics_csv)?;
    let mut summary = String::from("metric,n,mean,std,min,max\n");
    for m in metrics::summarize(&per_seed) {
        summary.push_str(&format!("{},{},{},{},{},{}\n", m.metric, m.n, m.mean, m.std, m.min, m.max));
    }
    fs::write(out.join("summary.csv"), summary)?;
    println!("{} seed(s) written to {}", results.len(), out.display());
    Ok(if failed { ExitCode::from(EXIT_VIOLATION) } else { ExitCode::SUCCESS })
}
