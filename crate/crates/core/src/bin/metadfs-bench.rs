//! Command-line front end for the benchmark harness.
//!
//! Exit status: 0 on success, 2 on bad arguments or unmet preconditions, 42
//! when a `--crash-point` fires, 1 on any other failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use metadfs::bench::generator::{DEFAULT_PROBE_COUNT, DEFAULT_PROBE_KEY};
use metadfs::bench::soak::soak;
use metadfs::bench::{
    parse_crash_point, Bench, BenchConfig, BenchError, MetricsReport, WorkloadKind, WorkloadSpec, CRASH_EXIT_CODE,
};
use metadfs::fault::{CrashMode, FaultInjector};

#[derive(Parser)]
#[command(
    name = "metadfs-bench",
    version,
    about = "UserVisits workloads on a simulated write-once DFS"
)]
struct Cli {
    /// Directory holding the simulated DFS.
    #[arg(long, global = true, default_value = "metadfs-data")]
    root: PathBuf,
    /// TOML file with page_size, block_size, replication, post_commit_threshold, deferred, latency.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    out: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Create and populate the database.
    Gen {
        #[arg(long, default_value_t = 100_000)]
        tuples: u64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = DEFAULT_PROBE_KEY)]
        key: String,
        #[arg(long, default_value_t = DEFAULT_PROBE_COUNT)]
        probe_count: u64,
    },
    /// Run a workload with cold caches.
    Run {
        #[arg(long, value_parser = ["scan", "insert", "select", "update"])]
        workload: String,
        #[arg(long, default_value_t = 100_000)]
        limit: u64,
        #[arg(long, default_value_t = 10_000)]
        repeat: u64,
        #[arg(long, default_value = DEFAULT_PROBE_KEY)]
        key: String,
        #[arg(long, overrides_with = "no_index")]
        index: bool,
        #[arg(long = "no-index")]
        no_index: bool,
        /// Fault point to stop at, as `name` or `name:nth`.
        #[arg(long)]
        crash_point: Option<String>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Repeat the run this many times, one report each.
        #[arg(long, default_value_t = 1)]
        repeat_runs: u32,
    },
    /// Recover after a crash.
    Recover,
    /// Concurrent sessions on a scratch in-memory database.
    Soak {
        #[arg(long, default_value_t = 8)]
        sessions: usize,
        #[arg(long, default_value_t = 200)]
        txns: u64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

fn emit(out: Format, reports: &[MetricsReport]) {
    match out {
        Format::Json if reports.len() == 1 => println!("{}", reports[0].to_json()),
        Format::Json => println!("{}", serde_json::to_string_pretty(reports).unwrap()),
        Format::Csv => print!("{}", MetricsReport::to_csv(reports)),
    }
}

fn execute(cli: Cli) -> Result<(), BenchError> {
    let config = match &cli.config {
        Some(path) => BenchConfig::load(path)?,
        None => BenchConfig::default(),
    };
    if let Command::Soak { sessions, txns, seed } = cli.command {
        let report = soak(&config, sessions, txns, seed)?;
        println!("{}", serde_json::to_string_pretty(&report).unwrap());
        if report.lock_violations > 0 || report.read_anomalies > 0 || !report.serializable {
            return Err(BenchError::Precondition("soak found violations".into()));
        }
        return Ok(());
    }
    let faults = FaultInjector::new(CrashMode::ExitProcess(CRASH_EXIT_CODE));
    let bench = Bench::open_dir(&cli.root, config)?.with_faults(faults);
    match cli.command {
        Command::Gen {
            tuples,
            seed,
            key,
            probe_count,
        } => emit(cli.out, &[bench.generate(tuples, seed, &key, probe_count)?]),
        Command::Run {
            workload,
            limit,
            repeat,
            key,
            no_index,
            crash_point,
            seed,
            repeat_runs,
            ..
        } => {
            let spec = WorkloadSpec {
                kind: workload.parse::<WorkloadKind>()?,
                limit,
                repeat,
                probe_key: key,
                use_index: !no_index,
                crash_point: crash_point.as_deref().map(parse_crash_point).transpose()?,
                seed,
            };
            let reports = (0..repeat_runs.max(1))
                .map(|_| bench.run(&spec))
                .collect::<Result<Vec<_>, _>>()?;
            emit(cli.out, &reports);
        }
        Command::Recover => emit(cli.out, &[bench.recover()?]),
        Command::Soak { .. } => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
