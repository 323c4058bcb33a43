mod common;

use std::sync::Arc;

use chrono::NaiveDate;
use proptest::prelude::*;

use common::meta;
use metadfs::bench::soak::soak;
use metadfs::bench::BenchConfig;
use metadfs::engine::index::key_of;
use metadfs::engine::{Database, EngineConfig, EngineError, UserVisitsRecord, MAX_SEGMENTS};
use metadfs::fault::FaultInjector;
use metadfs::lock::{LockService, LockType};
use metadfs::meta::MetaDfs;
use metadfs::spdu::SpduDfsConfig;

const P: usize = 4096;
const B: usize = 64 * 1024;

fn row(i: u64, ip: &str, cc: &str) -> UserVisitsRecord {
    UserVisitsRecord {
        source_ip: ip.to_owned(),
        dest_url: format!("http://example.org/{i}"),
        visit_date: NaiveDate::from_ymd_opt(2001, 1, 1).unwrap() + chrono::Days::new(i % 1000),
        ad_revenue: i as f32 / 4.0,
        user_agent: "Mozilla/5.0".into(),
        country_code: cc.to_owned(),
        language_code: "en-US".into(),
        search_word: format!("w{i}"),
        duration: i as i32,
    }
}

fn open(meta: &Arc<MetaDfs>, config: EngineConfig) -> Database {
    Database::open(Arc::clone(meta), Arc::new(LockService::new()), "uv", 600, config)
        .unwrap()
        .0
}

fn table(db: &Database) -> Vec<Vec<u8>> {
    let mut s = db.session().unwrap();
    s.begin(LockType::Read).unwrap();
    let mut rows: Vec<Vec<u8>> = s.scan(u64::MAX).unwrap().iter().map(UserVisitsRecord::encode).collect();
    s.commit().unwrap();
    rows.sort();
    rows
}

fn encoded(rows: &[UserVisitsRecord]) -> Vec<Vec<u8>> {
    let mut v: Vec<Vec<u8>> = rows.iter().map(UserVisitsRecord::encode).collect();
    v.sort();
    v
}

#[test]
fn committed_rows_survive_reopen() {
    let meta = meta(P, B);
    let db = open(&meta, EngineConfig::default());
    let rows: Vec<_> = (0..500).map(|i| row(i, &format!("10.0.{}.1", i % 7), "US")).collect();
    let mut s = db.session().unwrap();
    s.begin(LockType::Write).unwrap();
    for r in &rows {
        s.insert_record(r).unwrap();
    }
    s.commit().unwrap();
    drop(s);
    drop(db);
    let db = open(&meta, EngineConfig::default());
    assert_eq!(table(&db), encoded(&rows));
}

#[test]
fn abort_discards_inserts_and_updates() {
    let meta = meta(P, B);
    let db = open(&meta, EngineConfig::default());
    let mut s = db.session().unwrap();
    s.begin(LockType::Write).unwrap();
    s.insert_record(&row(1, "1.1.1.1", "US")).unwrap();
    s.commit().unwrap();
    s.begin(LockType::Write).unwrap();
    s.insert_record(&row(2, "1.1.1.1", "US")).unwrap();
    assert_eq!(s.update_by_key("1.1.1.1", "KOR", true).unwrap(), 2);
    s.abort().unwrap();
    assert_eq!(table(&db), encoded(&[row(1, "1.1.1.1", "US")]));
}

#[test]
fn growing_updates_keep_rows_reachable() {
    let meta = meta(P, B);
    let db = open(&meta, EngineConfig::default());
    let mut rows: Vec<_> = (0..400)
        .map(|i| row(i, if i % 2 == 0 { "7.7.7.7" } else { "8.8.8.8" }, ""))
        .collect();
    let mut s = db.session().unwrap();
    s.begin(LockType::Write).unwrap();
    for r in &rows {
        s.insert_record(r).unwrap();
    }
    s.commit().unwrap();
    for (round, code) in ["A", "AB", "ABC"].into_iter().enumerate() {
        s.begin(LockType::Write).unwrap();
        assert_eq!(s.update_by_key("7.7.7.7", code, round % 2 == 0).unwrap(), 200);
        s.commit().unwrap();
        for r in rows.iter_mut().filter(|r| r.source_ip == "7.7.7.7") {
            r.country_code = code.into();
        }
    }
    assert_eq!(table(&db), encoded(&rows));
    s.begin(LockType::Read).unwrap();
    let by_index = s.select_by_key("7.7.7.7", true).unwrap();
    assert_eq!(
        encoded(&by_index),
        encoded(
            &rows[..]
                .iter()
                .filter(|r| r.source_ip == "7.7.7.7")
                .cloned()
                .collect::<Vec<_>>()
        )
    );
    assert_eq!(s.record_count().unwrap(), 400);
    s.commit().unwrap();
}

#[test]
fn index_matches_the_heap() {
    let meta = meta(P, B);
    let db = open(&meta, EngineConfig::default());
    let mut s = db.session().unwrap();
    for batch in 0..12u64 {
        s.begin(LockType::Write).unwrap();
        for i in 0..30 {
            s.insert_record(&row(batch * 100 + i, &format!("9.9.{}.{}", batch % 3, i % 5), "US"))
                .unwrap();
        }
        s.commit().unwrap();
    }
    s.begin(LockType::Read).unwrap();
    assert!(s.index_segments().unwrap() <= MAX_SEGMENTS);
    let entries = s.index_entries().unwrap();
    let mut from_heap: Vec<_> = s
        .scan_with_rids(u64::MAX)
        .unwrap()
        .into_iter()
        .map(|(rid, r)| (key_of(&r.source_ip), rid))
        .collect();
    from_heap.sort();
    let from_index: Vec<_> = entries.iter().map(|e| (e.key, e.rid)).collect();
    assert_eq!(from_index, from_heap);
    s.commit().unwrap();
}

#[test]
fn locks_gate_operations() {
    let meta = meta(P, B);
    let db = open(&meta, EngineConfig::default());
    let mut s = db.session().unwrap();
    assert!(matches!(s.scan(1), Err(EngineError::NoLock)));
    s.begin(LockType::Read).unwrap();
    assert!(matches!(
        s.insert_record(&row(0, "a", "US")),
        Err(EngineError::WriteLockRequired)
    ));
    assert!(matches!(s.begin(LockType::Read), Err(EngineError::LockHeld)));
    s.upgrade().unwrap();
    s.insert_record(&row(0, "a", "US")).unwrap();
    s.commit().unwrap();
    assert_eq!(s.lock_mode(), None);
}

#[test]
fn oversized_values_are_rejected() {
    let meta = meta(P, B);
    let db = open(&meta, EngineConfig::default());
    let mut s = db.session().unwrap();
    s.begin(LockType::Write).unwrap();
    let bad = row(0, "1.2.3.4", "TOOLONG");
    assert!(matches!(s.insert_record(&bad), Err(EngineError::ValueTooLong { .. })));
}

#[test]
fn full_database_is_reported() {
    let meta = meta(P, B);
    let (db, _) = Database::open(meta, Arc::new(LockService::new()), "small", 4, EngineConfig::default()).unwrap();
    let mut s = db.session().unwrap();
    s.begin(LockType::Write).unwrap();
    let err = (0..1000)
        .map(|i| s.insert_record(&row(i, "1.1.1.1", "US")))
        .find_map(Result::err);
    assert!(matches!(err, Some(EngineError::DatabaseFull(_))));
}

#[test]
fn writes_are_visible_to_later_sessions() {
    let meta = meta(P, B);
    let db = open(&meta, EngineConfig::default());
    let mut reader = db.session().unwrap();
    let mut writer = db.session().unwrap();
    writer.begin(LockType::Write).unwrap();
    writer.insert_record(&row(5, "5.5.5.5", "US")).unwrap();
    writer.commit().unwrap();
    reader.begin(LockType::Read).unwrap();
    assert_eq!(
        reader.select_by_key("5.5.5.5", true).unwrap(),
        vec![row(5, "5.5.5.5", "US")]
    );
    reader.commit().unwrap();
}

type Rows = Vec<Vec<u8>>;

/// Table contents after recovery, before the crashed commit and with it.
fn crash_then_recover(point: &str) -> (Rows, Rows, Rows) {
    let meta = meta(P, B);
    let faults = FaultInjector::default();
    let config = EngineConfig {
        spdu: SpduDfsConfig {
            post_commit_threshold: 2,
            deferred: true,
        },
        faults: faults.clone(),
        ..EngineConfig::default()
    };
    let db = open(&meta, config);
    let before: Vec<_> = (0..300).map(|i| row(i, "1.1.1.1", "US")).collect();
    let mut s = db.session().unwrap();
    s.begin(LockType::Write).unwrap();
    for r in &before {
        s.insert_record(r).unwrap();
    }
    s.commit().unwrap();
    let mut after = before.clone();
    after.extend((300..2000).map(|i| row(i, "2.2.2.2", "KOR")));
    s.begin(LockType::Write).unwrap();
    for r in &after[300..] {
        s.insert_record(r).unwrap();
    }
    faults.arm(point, 1);
    let err = s.commit().unwrap_err();
    assert!(err.is_crash(), "{err}");
    drop(s);
    drop(db);
    let db = open(&meta, EngineConfig::default());
    (table(&db), encoded(&before), encoded(&after))
}

#[test]
fn crash_before_the_marker_rolls_back() {
    let (got, before, _) = crash_then_recover("before_commit_marker");
    assert_eq!(got, before);
}

#[test]
fn crash_after_the_marker_keeps_the_commit() {
    for point in ["after_commit_marker", "bpc_after_remake", "bpc_mid_truncate"] {
        let (got, _, after) = crash_then_recover(point);
        assert_eq!(got, after, "{point}");
    }
}

#[test]
fn concurrent_sessions_serialize() {
    let config = BenchConfig {
        post_commit_threshold: 3,
        ..BenchConfig::default()
    };
    let report = soak(&config, 6, 40, 3).unwrap();
    assert_eq!(report.lock_violations, 0);
    assert_eq!(report.read_anomalies, 0);
    assert!(report.serializable);
    assert!(report.audits > 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn records_round_trip(
        ip in "[0-9.]{1,16}",
        url in "[ -~]{0,100}",
        days in 0u64..20000,
        revenue in any::<f32>().prop_filter("finite", |f| f.is_finite()),
        cc in "[A-Z]{0,3}",
        duration in any::<i32>(),
    ) {
        let r = UserVisitsRecord {
            source_ip: ip,
            dest_url: url,
            visit_date: NaiveDate::from_ymd_opt(1990, 1, 1).unwrap() + chrono::Days::new(days),
            ad_revenue: revenue,
            user_agent: "ua".into(),
            country_code: cc,
            language_code: "de".into(),
            search_word: String::new(),
            duration,
        };
        prop_assert_eq!(UserVisitsRecord::decode(&r.encode()).unwrap(), r);
    }
}
