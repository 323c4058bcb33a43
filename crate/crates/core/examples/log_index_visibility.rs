//! A second session sees committed pages by reading only log footers.

use std::sync::Arc;

use metadfs::dfs::{Dfs, DfsConfig};
use metadfs::fault::FaultInjector;
use metadfs::lock::{LockService, LockType};
use metadfs::meta::MetaDfs;
use metadfs::spdu::{RecoverablePages, SpduDfs, SpduDfsConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let meta = Arc::new(MetaDfs::new(Arc::new(Dfs::in_memory(DfsConfig::default())?), 4096)?);
    SpduDfs::create_files(&meta, "db/data", "db/log", 64)?;
    let open = || {
        SpduDfs::open(
            Arc::clone(&meta),
            "db/data",
            "db/log",
            SpduDfsConfig::default(),
            FaultInjector::default(),
        )
    };
    let (mut p1, mut p2) = (open()?, open()?);
    let locks = LockService::new();

    let w = locks.request_lock("db/data", LockType::Write, 1)?;
    p1.reconstruct_log_table_index()?;
    p1.write_page(5, &vec![5; 4096])?;
    p1.write_page(3, &vec![3; 4096])?;
    p1.commit_transaction()?;
    locks.release_lock("db/data", w)?;

    let r = locks.request_lock("db/data", LockType::Read, 2)?;
    let before = p2.log_file_stats();
    let mut index: Vec<_> = p2
        .reconstruct_log_table_index()?
        .iter()
        .map(|(p, s)| (*p, *s))
        .collect();
    index.sort_by_key(|(p, _)| *p);
    let cost = p2.log_file_stats().since(&before);
    for (pageid, slot) in index {
        println!("page {pageid} -> log block {}, slot {}", slot.block_id, slot.b_offset);
    }
    println!(
        "{} footer reads, {} whole-block reads",
        cost.range_reads, cost.block_reads
    );
    println!("P2 reads page 5 = {}", p2.read_page(5)?[0]);
    locks.release_lock("db/data", r)?;
    Ok(())
}
