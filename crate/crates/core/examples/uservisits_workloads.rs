//! The UserVisits table: generate, scan, indexed and unindexed select,
//! update, with per-workload counters.

use metadfs::bench::generator::DEFAULT_PROBE_KEY;
use metadfs::bench::{Bench, BenchConfig, WorkloadKind, WorkloadSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tuples = std::env::args().nth(1).map_or(Ok(20_000), |a| a.parse())?;
    let bench = Bench::in_memory(BenchConfig::default())?;
    let gen = bench.generate(tuples, 42, DEFAULT_PROBE_KEY, 70)?;
    println!("generated {tuples} tuples in {:.0} ms", gen.elapsed_ms);

    let mut runs = Vec::new();
    for (kind, use_index) in [
        (WorkloadKind::Scan, false),
        (WorkloadKind::Select, true),
        (WorkloadKind::Select, false),
        (WorkloadKind::Update, true),
        (WorkloadKind::Insert, false),
    ] {
        let mut spec = WorkloadSpec::new(kind);
        spec.use_index = use_index;
        spec.repeat = 1000;
        runs.push(bench.run(&spec)?);
    }
    print!("{}", metadfs::bench::MetricsReport::to_csv(&runs));
    Ok(())
}
