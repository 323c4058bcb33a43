//! The in-place baseline: a log of page images, a master page flag and a
//! copy back into the data file at commit.

use metadfs::fault::FaultInjector;
use metadfs::spdu::{PageFile, RecoverablePages, SpduCore, LOG_PAGE_HEADER_BYTES};

const P: usize = 4096;

fn page(fill: u8) -> Vec<u8> {
    vec![fill; P]
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = PageFile::new(P);
    let log = PageFile::new(P + LOG_PAGE_HEADER_BYTES);
    let faults = FaultInjector::default();
    let mut db = SpduCore::create(data.clone(), log.clone(), 16, faults.clone())?;

    db.write_page(2, &page(1))?;
    db.write_page(9, &page(2))?;
    db.commit_transaction()?;
    println!(
        "after commit: page 2 = {}, log pages = {}",
        data.durable_image()[2][0],
        log.len()
    );

    db.write_page(2, &page(7))?;
    faults.arm("spdu_mid_copy", 1);
    let err = db.commit_transaction().unwrap_err();
    println!("power lost during the copy: {err}");
    drop(db);
    data.crash();
    log.crash();

    let mut db = SpduCore::open(data.clone(), log, FaultInjector::default())?;
    let report = db.restart_system()?;
    println!("restart path: {}, page 2 = {}", report.path(), db.read_page(2)?[0]);
    Ok(())
}
