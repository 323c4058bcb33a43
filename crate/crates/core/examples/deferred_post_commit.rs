//! Commits append log blocks; data blocks are remade only when the log
//! passes its threshold, once per dirtied block.

use std::sync::Arc;

use metadfs::dfs::{Dfs, DfsConfig};
use metadfs::fault::FaultInjector;
use metadfs::meta::MetaDfs;
use metadfs::spdu::{RecoverablePages, SpduDfs, SpduDfsConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let meta = Arc::new(MetaDfs::new(Arc::new(Dfs::in_memory(DfsConfig::default())?), 4096)?);
    SpduDfs::create_files(&meta, "db/data", "db/log", 256)?;
    let config = SpduDfsConfig {
        post_commit_threshold: 4,
        deferred: true,
    };
    let mut db = SpduDfs::open(Arc::clone(&meta), "db/data", "db/log", config, FaultInjector::default())?;

    for txn in 0..8u8 {
        for pageid in [3u64, 7, 1, 9, 40 + u64::from(txn)] {
            db.write_page(pageid, &vec![txn; 4096])?;
        }
        db.commit_transaction()?;
        println!(
            "txn {txn}: {} log data blocks, {} data remakes so far",
            db.log_block_count() - 1,
            db.data_file_stats().remakes
        );
    }
    db.batch_post_commit()?;
    let stats = db.stats();
    println!(
        "folded: {} post-commit runs, {} data blocks remade, {} log blocks written",
        stats.batch_post_commits, stats.data_blocks_remade, stats.blocks_flushed
    );
    println!("page 9 in the data file: {}", meta.read_page(db.data_file(), 9)?[0]);
    Ok(())
}
