mod common;

use proptest::prelude::*;

use common::*;
use metadfs::fault::FaultInjector;
use metadfs::spdu::{RecoverablePages, SpduCore};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// A power failure between transactions keeps exactly the committed pages.
    #[test]
    fn committed_state_survives_power_loss(seed in any::<u64>(), ops in 10usize..300) {
        let (data, log, mut core) = spdu_core(32, FaultInjector::default());
        let mut oracle = MapOracle::new(P);
        for op in page_workload(seed, ops, 32, 10, 30) {
            match op {
                PageOp::Write(p, v) => {
                    let img = page_image(P, p, v);
                    core.write_page(p, &img).unwrap();
                    oracle.write(p, &img);
                }
                PageOp::Read(p) => prop_assert_eq!(core.read_page(p).unwrap(), oracle.read(p)),
                PageOp::Commit => {
                    core.commit_transaction().unwrap();
                    oracle.commit();
                }
                PageOp::Abort => {
                    core.abort_transaction().unwrap();
                    oracle.abort();
                }
            }
        }
        drop(core);
        data.crash();
        log.crash();
        let mut core = SpduCore::open(data, log, FaultInjector::default()).unwrap();
        core.restart_system().unwrap();
        for p in 0..32 {
            prop_assert_eq!(core.read_page(p).unwrap(), oracle.read_committed(p));
        }
    }
}

#[test]
fn commit_leaves_a_clean_log() {
    let (data, log, mut core) = spdu_core(8, FaultInjector::default());
    core.write_page(3, &page_image(P, 3, 1)).unwrap();
    core.write_page(3, &page_image(P, 3, 2)).unwrap();
    core.commit_transaction().unwrap();
    assert!(!core.master().unwrap().commit_flag);
    assert!(core.index().is_empty());
    assert_eq!(log.len(), 1);
    assert_eq!(data.durable_image()[3], page_image(P, 3, 2));
}

#[test]
fn crash_after_flag_set_redoes_on_restart() {
    let faults = FaultInjector::default();
    let (data, log, mut core) = spdu_core(8, faults.clone());
    core.write_page(5, &page_image(P, 5, 9)).unwrap();
    faults.arm("spdu_after_flag_set", 1);
    assert!(core.commit_transaction().unwrap_err().is_crash());
    drop(core);
    data.crash();
    log.crash();
    assert_eq!(data.durable_image()[5], vec![0; P]);
    let mut core = SpduCore::open(data.clone(), log, FaultInjector::default()).unwrap();
    let report = core.restart_system().unwrap();
    assert!(report.redo);
    assert_eq!(data.durable_image()[5], page_image(P, 5, 9));
}

#[test]
fn crash_before_log_sync_loses_the_transaction() {
    let faults = FaultInjector::default();
    let (data, log, mut core) = spdu_core(8, faults.clone());
    core.write_page(1, &page_image(P, 1, 1)).unwrap();
    core.commit_transaction().unwrap();
    core.write_page(1, &page_image(P, 1, 2)).unwrap();
    faults.arm("spdu_before_log_sync", 1);
    assert!(core.commit_transaction().is_err());
    drop(core);
    data.crash();
    log.crash();
    let mut core = SpduCore::open(data, log, FaultInjector::default()).unwrap();
    assert_eq!(core.restart_system().unwrap().path(), "clean");
    assert_eq!(core.read_page(1).unwrap(), page_image(P, 1, 1));
}
