//! Concurrent sessions over one database, checked for lock-rule violations
//! and for equivalence with a serial replay in write-lock grant order.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use chrono::Days;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::generator::base_date;
use super::{plan_pages, BenchConfig, BenchError};
use crate::dfs::Dfs;
use crate::engine::{Database, EngineError, Session, UserVisitsRecord};
use crate::fault::FaultInjector;
use crate::lock::{audit, LockError, LockService, LockType};
use crate::meta::MetaDfs;

const KEYS: &[&str] = &["10.0.0.1", "10.0.0.2", "10.0.0.3", "10.0.0.4", "10.0.0.5"];
const CODES: &[&str] = &["USA", "KOR", "ABC", "DEU"];

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SoakReport {
    pub sessions: usize,
    pub transactions: u64,
    pub commits: u64,
    pub aborts: u64,
    pub reads: u64,
    pub upgrade_conflicts: u64,
    /// Lock queue snapshots audited while sessions ran.
    pub audits: u64,
    pub lock_violations: u64,
    /// Readers that saw a record count disagreeing with their scan, or index
    /// and scan results that differ.
    pub read_anomalies: u64,
    /// Final table equals a serial replay of committed writes.
    pub serializable: bool,
}

#[derive(Debug, Clone)]
enum Op {
    Insert(UserVisitsRecord),
    Update { key: &'static str, code: &'static str },
}

fn soak_row(session: usize, txn: u64, j: u64, key: &str) -> UserVisitsRecord {
    UserVisitsRecord {
        source_ip: key.to_owned(),
        dest_url: format!("http://soak/{session}/{txn}/{j}"),
        visit_date: base_date() + Days::new(txn),
        ad_revenue: j as f32,
        user_agent: "soak".into(),
        country_code: "USA".into(),
        language_code: "en-US".into(),
        search_word: format!("s{session}"),
        duration: (session as i32) * 1_000_000 + (txn as i32) * 10 + j as i32,
    }
}

/// Committed write sets keyed by write-lock grant order.
type CommitLog = Vec<(u64, Vec<Op>)>;

#[derive(Default)]
struct Tally {
    transactions: AtomicU64,
    commits: AtomicU64,
    aborts: AtomicU64,
    reads: AtomicU64,
    upgrade_conflicts: AtomicU64,
    read_anomalies: AtomicU64,
}

fn bump(c: &AtomicU64) {
    c.fetch_add(1, Ordering::Relaxed);
}

struct Worker {
    id: usize,
    session: Session,
    rng: ChaCha8Rng,
    grants: Arc<AtomicU64>,
    log: Arc<Mutex<CommitLog>>,
    tally: Arc<Tally>,
}

impl Worker {
    fn read_txn(&mut self) -> Result<(), EngineError> {
        let s = &mut self.session;
        s.begin(LockType::Read)?;
        let rows = s.scan(u64::MAX)?;
        if rows.len() as u64 != s.record_count()? {
            bump(&self.tally.read_anomalies);
        }
        let key = KEYS[self.rng.gen_range(0..KEYS.len())];
        if s.select_by_key(key, true)? != s.select_by_key(key, false)? {
            bump(&self.tally.read_anomalies);
        }
        s.commit()?;
        bump(&self.tally.reads);
        Ok(())
    }

    fn write_txn(&mut self, txn: u64, upgrade: bool) -> Result<(), EngineError> {
        if upgrade {
            self.session.begin(LockType::Read)?;
            if let Err(e) = self.session.upgrade() {
                self.session.abort()?;
                if matches!(e, EngineError::Lock(LockError::UpgradeConflict { .. })) {
                    bump(&self.tally.upgrade_conflicts);
                    return Ok(());
                }
                return Err(e);
            }
        } else {
            self.session.begin(LockType::Write)?;
        }
        let grant = self.grants.fetch_add(1, Ordering::SeqCst);
        let mut ops = Vec::new();
        if self.rng.gen_bool(0.7) {
            for j in 0..self.rng.gen_range(1..=4) {
                let key = KEYS[self.rng.gen_range(0..KEYS.len())];
                let row = soak_row(self.id, txn, j, key);
                self.session.insert_record(&row)?;
                ops.push(Op::Insert(row));
            }
        } else {
            let key = KEYS[self.rng.gen_range(0..KEYS.len())];
            let code = CODES[self.rng.gen_range(0..CODES.len())];
            let use_index = self.rng.gen_bool(0.5);
            self.session.update_by_key(key, code, use_index)?;
            ops.push(Op::Update { key, code });
        }
        if self.rng.gen_bool(0.2) {
            self.session.abort()?;
            bump(&self.tally.aborts);
        } else {
            self.session.commit()?;
            self.log.lock().unwrap().push((grant, ops));
            bump(&self.tally.commits);
        }
        Ok(())
    }

    fn run(mut self, txns: u64) -> Result<(), EngineError> {
        for txn in 0..txns {
            bump(&self.tally.transactions);
            match self.rng.gen_range(0..10) {
                0..=4 => self.read_txn()?,
                5..=7 => self.write_txn(txn, false)?,
                _ => self.write_txn(txn, true)?,
            }
        }
        Ok(())
    }
}

/// Runs `sessions` threads of `txns` transactions each against a fresh
/// in-memory database.
pub fn soak(config: &BenchConfig, sessions: usize, txns: u64, seed: u64) -> Result<SoakReport, BenchError> {
    let dfs = Arc::new(Dfs::in_memory(config.dfs_config()).map_err(|e| BenchError::Config(e.to_string()))?);
    let meta = Arc::new(MetaDfs::new(dfs, config.page_size)?);
    let locks = Arc::new(LockService::new());
    let total_pages = plan_pages(&[], config.page_size, sessions as u64 * txns * 4);
    let (db, _) = Database::open(
        meta,
        Arc::clone(&locks),
        "soak",
        total_pages,
        config.engine_config(FaultInjector::default()),
    )?;

    let grants = Arc::new(AtomicU64::new(0));
    let log = Arc::new(Mutex::new(Vec::new()));
    let tally = Arc::new(Tally::default());
    let done = Arc::new(AtomicBool::new(false));

    let auditor = {
        let locks = Arc::clone(&locks);
        let done = Arc::clone(&done);
        let name = db.lock_name().to_owned();
        thread::spawn(move || {
            let (mut audits, mut violations) = (0u64, 0u64);
            while !done.load(Ordering::Relaxed) {
                violations += audit(&locks.snapshot(&name)) as u64;
                audits += 1;
                thread::yield_now();
            }
            (audits, violations)
        })
    };

    let mut handles = Vec::new();
    for id in 0..sessions {
        let worker = Worker {
            id,
            session: db.session()?,
            rng: ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(id as u64)),
            grants: Arc::clone(&grants),
            log: Arc::clone(&log),
            tally: Arc::clone(&tally),
        };
        handles.push(thread::spawn(move || worker.run(txns)));
    }
    let mut first_error = None;
    for h in handles {
        if let Err(e) = h.join().expect("soak worker panicked") {
            first_error.get_or_insert(e);
        }
    }
    done.store(true, Ordering::Relaxed);
    let (audits, lock_violations) = auditor.join().expect("auditor panicked");
    if let Some(e) = first_error {
        return Err(e.into());
    }

    let mut committed = std::mem::take(&mut *log.lock().unwrap());
    committed.sort_by_key(|(grant, _)| *grant);
    let mut oracle: Vec<UserVisitsRecord> = Vec::new();
    for (_, ops) in committed {
        for op in ops {
            match op {
                Op::Insert(row) => oracle.push(row),
                Op::Update { key, code } => oracle
                    .iter_mut()
                    .filter(|r| r.source_ip == key)
                    .for_each(|r| r.country_code = code.to_owned()),
            }
        }
    }
    let mut s = db.session()?;
    s.begin(LockType::Read)?;
    let mut actual: Vec<Vec<u8>> = s.scan(u64::MAX)?.iter().map(UserVisitsRecord::encode).collect();
    s.commit()?;
    let mut expected: Vec<Vec<u8>> = oracle.iter().map(UserVisitsRecord::encode).collect();
    actual.sort();
    expected.sort();

    Ok(SoakReport {
        sessions,
        transactions: tally.transactions.load(Ordering::Relaxed),
        commits: tally.commits.load(Ordering::Relaxed),
        aborts: tally.aborts.load(Ordering::Relaxed),
        reads: tally.reads.load(Ordering::Relaxed),
        upgrade_conflicts: tally.upgrade_conflicts.load(Ordering::Relaxed),
        audits,
        lock_violations,
        read_anomalies: tally.read_anomalies.load(Ordering::Relaxed),
        serializable: actual == expected,
    })
}
