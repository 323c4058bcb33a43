//! Crashes at chosen points of a commit and the state restart recovers.

use std::sync::Arc;

use metadfs::dfs::{Dfs, DfsConfig};
use metadfs::fault::{FaultInjector, FAULT_POINTS};
use metadfs::meta::MetaDfs;
use metadfs::spdu::{RecoverablePages, SpduDfs, SpduDfsConfig};

const CONFIG: SpduDfsConfig = SpduDfsConfig {
    post_commit_threshold: 1,
    deferred: true,
};

fn run(point: &str) -> Result<(), Box<dyn std::error::Error>> {
    let meta = Arc::new(MetaDfs::new(Arc::new(Dfs::in_memory(DfsConfig::default())?), 4096)?);
    SpduDfs::create_files(&meta, "db/data", "db/log", 64)?;
    let faults = FaultInjector::default();
    let mut db = SpduDfs::open(Arc::clone(&meta), "db/data", "db/log", CONFIG, faults.clone())?;
    db.write_page(1, &vec![1; 4096])?;
    db.commit_transaction()?;
    for pageid in 0..20 {
        db.write_page(pageid, &vec![2; 4096])?;
    }
    faults.arm(point, 1);
    let crashed = db.commit_transaction().is_err();
    drop(db);

    let mut db = SpduDfs::open(meta, "db/data", "db/log", CONFIG, FaultInjector::default())?;
    let report = db.restart_system()?;
    println!(
        "{point:<26} crashed={crashed:<5} recovery={:<8} page 1 = {}",
        report.path(),
        db.read_page(1)?[0]
    );
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("{} registered fault points", FAULT_POINTS.len());
    for point in [
        "before_commit_marker",
        "after_commit_marker",
        "bpc_after_flag_set",
        "bpc_after_remake",
        "bpc_mid_truncate",
        "bpc_after_flag_clear",
    ] {
        run(point)?;
    }
    Ok(())
}
