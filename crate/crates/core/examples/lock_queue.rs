//! The FIFO read/write lock queue, including an upgrade and an upgrade
//! conflict.

use metadfs::lock::{audit, LockService, LockType};

fn show(svc: &LockService) {
    for n in svc.snapshot("db") {
        println!(
            "  #{} {:?} owner {} {:?} watching {:?}",
            n.lockid, n.lock_type, n.owner, n.state, n.watching
        );
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let svc = LockService::new();
    let r1 = svc.enqueue("db", LockType::Read, 1)?;
    let r2 = svc.enqueue("db", LockType::Read, 2)?;
    let up = svc.enqueue("db", LockType::Write, 1)?;
    println!("two readers, owner 1 asks to upgrade:");
    show(&svc);
    match svc.enqueue("db", LockType::Write, 2) {
        Err(e) => println!("owner 2 tries the same: {e}"),
        Ok(_) => println!("unexpected grant"),
    }

    let w3 = svc.enqueue("db", LockType::Write, 3)?;
    let r4 = svc.enqueue("db", LockType::Read, 4)?;
    println!("a writer and a late reader queue up:");
    show(&svc);

    svc.release_lock("db", r2)?;
    println!("owner 2 leaves, the upgrade is granted:");
    show(&svc);
    svc.release_lock("db", up)?;
    svc.release_lock("db", r1)?;
    println!("owner 1 leaves, the writer goes next:");
    show(&svc);
    svc.release_lock("db", w3)?;
    svc.release_lock("db", r4)?;
    println!("violations found by audit: {}", audit(&svc.snapshot("db")));
    Ok(())
}
