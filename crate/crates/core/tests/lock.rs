use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::{Arc, Barrier};
use std::thread;
use std::time::Duration;

use proptest::prelude::*;

use metadfs::lock::{LockError, LockNode, LockService, LockType, NodeState};

const DB: &str = "t/data";

/// Grant state the queue must show: a node is granted exactly when no
/// earlier node conflicts with it. A read conflicts with any earlier write;
/// a write with anything earlier except a read of its own owner.
fn expected_grant(queue: &[LockNode], i: usize) -> bool {
    let me = &queue[i];
    queue[..i].iter().all(|e| match me.lock_type {
        LockType::Read => e.lock_type == LockType::Read,
        LockType::Write => e.lock_type == LockType::Read && e.owner == me.owner,
    })
}

#[derive(Debug, Clone)]
enum Op {
    Request(u64, bool),
    Release(usize),
    Cancel(usize),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => (0u64..5, any::<bool>()).prop_map(|(o, w)| Op::Request(o, w)),
        2 => any::<usize>().prop_map(Op::Release),
        1 => any::<usize>().prop_map(Op::Cancel),
    ]
}

proptest! {
    #[test]
    fn queue_grants_follow_fifo_compatibility(ops in prop::collection::vec(op(), 1..120)) {
        let svc = LockService::new();
        for op in ops {
            let queue = svc.snapshot(DB);
            match op {
                Op::Request(owner, write) => {
                    let mode = if write { LockType::Write } else { LockType::Read };
                    match svc.enqueue(DB, mode, owner) {
                        Ok(_) | Err(LockError::UpgradeConflict { .. }) | Err(LockError::WouldSelfDeadlock { .. }) => {}
                        Err(e) => prop_assert!(false, "unexpected {e}"),
                    }
                }
                Op::Release(i) if !queue.is_empty() => {
                    let node = &queue[i % queue.len()];
                    let r = svc.release_lock(DB, node.lockid);
                    if node.state == NodeState::Granted {
                        prop_assert!(r.is_ok());
                    } else {
                        let not_granted = matches!(r, Err(LockError::NotGranted { .. }));
                        prop_assert!(not_granted, "released a waiting lock");
                    }
                }
                Op::Cancel(i) if !queue.is_empty() => svc.cancel(DB, queue[i % queue.len()].lockid),
                _ => {}
            }
            let queue = svc.snapshot(DB);
            prop_assert!(queue.windows(2).all(|w| w[0].lockid < w[1].lockid));
            for i in 0..queue.len() {
                let granted = queue[i].state == NodeState::Granted;
                prop_assert_eq!(granted, expected_grant(&queue, i), "node {:?} in {:?}", queue[i], queue);
            }
        }
    }
}

#[test]
fn writers_exclude_everyone() {
    let svc = Arc::new(LockService::new());
    let inside = Arc::new(AtomicI64::new(0));
    let handles: Vec<_> = (0..8u64)
        .map(|owner| {
            let svc = Arc::clone(&svc);
            let inside = Arc::clone(&inside);
            thread::spawn(move || {
                for i in 0..200 {
                    let write = (owner + i) % 3 == 0;
                    let mode = if write { LockType::Write } else { LockType::Read };
                    let id = svc.request_lock(DB, mode, owner).unwrap();
                    let delta = if write { 1000 } else { 1 };
                    let now = inside.fetch_add(delta, Ordering::SeqCst) + delta;
                    if write {
                        assert_eq!(now, 1000, "writer shared the database");
                    } else {
                        assert!(now < 1000, "reader ran beside a writer");
                    }
                    inside.fetch_sub(delta, Ordering::SeqCst);
                    svc.release_lock(DB, id).unwrap();
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    assert!(svc.snapshot(DB).is_empty());
}

#[test]
fn readers_share() {
    let svc = Arc::new(LockService::new());
    let barrier = Arc::new(Barrier::new(4));
    let handles: Vec<_> = (0..4u64)
        .map(|owner| {
            let svc = Arc::clone(&svc);
            let barrier = Arc::clone(&barrier);
            thread::spawn(move || {
                let id = svc.request_lock(DB, LockType::Read, owner).unwrap();
                // Every reader must hold its lock at once to get past here.
                barrier.wait();
                svc.release_lock(DB, id).unwrap();
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
}

#[test]
fn shutdown_wakes_waiters() {
    let svc = Arc::new(LockService::new());
    let held = svc.request_lock(DB, LockType::Write, 1).unwrap();
    let waiter = {
        let svc = Arc::clone(&svc);
        thread::spawn(move || svc.request_lock(DB, LockType::Read, 2))
    };
    while svc.snapshot(DB).len() < 2 {
        thread::sleep(Duration::from_millis(1));
    }
    svc.shutdown();
    assert_eq!(waiter.join().unwrap(), Err(LockError::ServiceShutdown));
    assert!(matches!(
        svc.enqueue(DB, LockType::Read, 3),
        Err(LockError::ServiceShutdown)
    ));
    let _ = held;
}

#[test]
fn upgrade_waits_for_other_readers() {
    let svc = LockService::new();
    let a = svc.enqueue(DB, LockType::Read, 1).unwrap();
    let b = svc.enqueue(DB, LockType::Read, 2).unwrap();
    let up = svc.enqueue(DB, LockType::Write, 1).unwrap();
    assert_eq!(svc.poll(DB, up).unwrap(), NodeState::Waiting);
    assert!(matches!(
        svc.enqueue(DB, LockType::Write, 2),
        Err(LockError::UpgradeConflict { .. })
    ));
    svc.release_lock(DB, b).unwrap();
    assert_eq!(svc.poll(DB, up).unwrap(), NodeState::Granted);
    svc.release_lock(DB, up).unwrap();
    svc.release_lock(DB, a).unwrap();
    assert!(svc.snapshot(DB).is_empty());
}

#[test]
fn databases_lock_independently() {
    let svc = LockService::new();
    svc.enqueue("a", LockType::Write, 1).unwrap();
    let b = svc.enqueue("b", LockType::Write, 2).unwrap();
    assert_eq!(svc.poll("b", b).unwrap(), NodeState::Granted);
}
