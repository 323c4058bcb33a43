//! A one-table record store over the recovery layer.
//!
//! A [`Database`] is a data meta file plus a log meta file in a [`MetaDfs`],
//! and a lock queue in a shared [`LockService`]. Work happens in a
//! [`Session`]: [`begin`](Session::begin) takes the database lock and rebuilds
//! the session's log table index, tuple operations run over slotted heap
//! pages and a sourceIP index, and [`commit`](Session::commit) or
//! [`abort`](Session::abort) ends the transaction and releases the lock.
//!
//! Page 0 holds the [`catalog`]. Every page change, including index segments
//! and the catalog, goes through the session's [`SpduDfs`].

pub mod catalog;
pub mod index;
mod pool;
pub mod record;
pub mod slotted;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::fault::FaultInjector;
use crate::lock::{LockError, LockService, LockType, OwnerId};
use crate::meta::{MetaDfs, MetaError};
use crate::spdu::{RecoverablePages, RecoveryReport, SpduDfs, SpduDfsConfig, SpduDfsStats, SpduError};

use self::catalog::{Catalog, HEAP_START};
use self::index::{key_of, IndexEntry};
use self::pool::BufferPool;
pub use self::record::UserVisitsRecord;
use self::slotted::Cell;
pub use self::slotted::Rid;

/// Index segments kept before they are merged into one.
pub const MAX_SEGMENTS: usize = 4;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("{field} is {len} bytes, limit {max}")]
    ValueTooLong {
        field: &'static str,
        len: usize,
        max: usize,
    },
    #[error("record of {len} bytes does not fit a page (max {max})")]
    RecordTooLarge { len: usize, max: usize },
    #[error("database full: {0}")]
    DatabaseFull(String),
    #[error("operation needs a lock")]
    NoLock,
    #[error("operation needs the write lock")]
    WriteLockRequired,
    #[error("session already holds a lock")]
    LockHeld,
    #[error("corrupt page: {0}")]
    Corrupt(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Lock(#[from] LockError),
    #[error(transparent)]
    Storage(#[from] SpduError),
    #[error(transparent)]
    Meta(#[from] MetaError),
}

impl EngineError {
    pub fn is_crash(&self) -> bool {
        matches!(self, EngineError::Storage(e) if e.is_crash())
    }
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub spdu: SpduDfsConfig,
    /// Frames in each session's buffer pool.
    pub buffer_frames: usize,
    pub faults: FaultInjector,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            spdu: SpduDfsConfig::default(),
            buffer_frames: 256,
            faults: FaultInjector::default(),
        }
    }
}

#[derive(Debug)]
struct Shared {
    meta: Arc<MetaDfs>,
    locks: Arc<LockService>,
    name: String,
    data_name: String,
    log_name: String,
    config: EngineConfig,
    next_owner: AtomicU64,
}

/// Handle to one database; cheap to clone and share between threads.
#[derive(Debug, Clone)]
pub struct Database {
    shared: Arc<Shared>,
}

impl Database {
    /// Opens `name`, creating it with `total_pages` pages if it does not
    /// exist. An existing database is recovered first, under the write lock.
    pub fn open(
        meta: Arc<MetaDfs>,
        locks: Arc<LockService>,
        name: &str,
        total_pages: u64,
        config: EngineConfig,
    ) -> Result<(Self, RecoveryReport), EngineError> {
        let data_name = format!("{name}/data");
        let log_name = format!("{name}/log");
        if !meta.exists(&data_name) {
            if total_pages < 2 || total_pages > u64::from(u32::MAX) {
                return Err(EngineError::InvalidConfig(format!("{total_pages} pages")));
            }
            SpduDfs::create_files(&meta, &data_name, &log_name, total_pages)?;
        }
        let db = Self {
            shared: Arc::new(Shared {
                meta,
                locks,
                name: name.to_owned(),
                data_name,
                log_name,
                config,
                next_owner: AtomicU64::new(1),
            }),
        };
        let mut s = db.session()?;
        let lockid = db.locks().request_lock(db.lock_name(), LockType::Write, s.owner)?;
        let result = (|| {
            let report = s.spdu.restart_system()?;
            if !Catalog::is_formatted(&s.spdu.read_page(0)?) {
                let page = Catalog::fresh(s.spdu.num_pages()).encode(s.page_size())?;
                s.spdu.write_page(0, &page)?;
                s.spdu.commit_transaction()?;
            }
            Ok(report)
        })();
        db.locks().release_lock(db.lock_name(), lockid)?;
        result.map(|report| (db, report))
    }

    pub fn name(&self) -> &str {
        &self.shared.name
    }

    /// Key of this database in the lock service: the data file name.
    pub fn lock_name(&self) -> &str {
        &self.shared.data_name
    }

    pub fn meta(&self) -> &Arc<MetaDfs> {
        &self.shared.meta
    }

    pub fn locks(&self) -> &Arc<LockService> {
        &self.shared.locks
    }

    pub fn config(&self) -> &EngineConfig {
        &self.shared.config
    }

    pub fn session(&self) -> Result<Session, EngineError> {
        let spdu = SpduDfs::open(
            Arc::clone(&self.shared.meta),
            &self.shared.data_name,
            &self.shared.log_name,
            self.shared.config.spdu,
            self.shared.config.faults.clone(),
        )?;
        Ok(Session {
            db: self.clone(),
            owner: self.shared.next_owner.fetch_add(1, Ordering::Relaxed),
            spdu,
            pool: BufferPool::new(self.shared.config.buffer_frames),
            held: None,
            catalog: None,
            catalog_dirty: false,
            pending: Vec::new(),
            stats: SessionStats::default(),
        })
    }

    /// Runs batch post-commit over everything committed so far, under the
    /// write lock. Leaves the log holding only its master block.
    pub fn checkpoint(&self) -> Result<(), EngineError> {
        let mut s = self.session()?;
        s.begin(LockType::Write)?;
        let result = s.spdu.batch_post_commit();
        s.release();
        Ok(result?)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SessionStats {
    /// Pages fetched from the recovery layer (buffer pool misses).
    pub page_reads: u64,
    /// Pages handed to the recovery layer.
    pub page_writes: u64,
    pub records_returned: u64,
}

#[derive(Debug)]
struct Held {
    mode: LockType,
    lockids: Vec<u64>,
}

/// One thread of control working on a database.
#[derive(Debug)]
pub struct Session {
    db: Database,
    owner: OwnerId,
    spdu: SpduDfs,
    pool: BufferPool,
    held: Option<Held>,
    catalog: Option<Catalog>,
    catalog_dirty: bool,
    /// Index entries of this transaction's inserts, not yet in a segment.
    pending: Vec<IndexEntry>,
    stats: SessionStats,
}

impl Session {
    pub fn owner(&self) -> OwnerId {
        self.owner
    }

    pub fn stats(&self) -> SessionStats {
        self.stats
    }

    pub fn reset_stats(&mut self) {
        self.stats = SessionStats::default();
    }

    pub fn spdu(&self) -> &SpduDfs {
        &self.spdu
    }

    pub fn spdu_stats(&self) -> SpduDfsStats {
        self.spdu.stats()
    }

    pub fn lock_mode(&self) -> Option<LockType> {
        self.held.as_ref().map(|h| h.mode)
    }

    fn page_size(&self) -> usize {
        self.spdu.page_size()
    }

    /// Takes the database lock, rebuilds the log table index from the log
    /// footers and starts with a cold buffer pool.
    pub fn begin(&mut self, mode: LockType) -> Result<(), EngineError> {
        if self.held.is_some() {
            return Err(EngineError::LockHeld);
        }
        let lockid = self.db.locks().request_lock(self.db.lock_name(), mode, self.owner)?;
        self.held = Some(Held {
            mode,
            lockids: vec![lockid],
        });
        self.pool.clear();
        self.pending.clear();
        self.catalog_dirty = false;
        let loaded = (|| {
            self.spdu.reconstruct_log_table_index()?;
            Catalog::decode(&self.fetch(0)?)
        })();
        match loaded {
            Ok(c) => {
                self.catalog = Some(c);
                Ok(())
            }
            Err(e) => {
                self.release();
                Err(e)
            }
        }
    }

    /// Adds the write lock while keeping the read lock already held.
    pub fn upgrade(&mut self) -> Result<(), EngineError> {
        let held = self.held.as_ref().ok_or(EngineError::NoLock)?;
        if held.mode == LockType::Write {
            return Ok(());
        }
        let lockid = self
            .db
            .locks()
            .request_lock(self.db.lock_name(), LockType::Write, self.owner)?;
        let held = self.held.as_mut().unwrap();
        held.lockids.push(lockid);
        held.mode = LockType::Write;
        Ok(())
    }

    fn release(&mut self) {
        if let Some(held) = self.held.take() {
            for lockid in held.lockids.into_iter().rev() {
                self.db.locks().cancel(self.db.lock_name(), lockid);
            }
        }
        self.pool.clear();
        self.pending.clear();
        self.catalog = None;
        self.catalog_dirty = false;
    }

    fn require_lock(&self) -> Result<(), EngineError> {
        self.held.as_ref().map(|_| ()).ok_or(EngineError::NoLock)
    }

    fn require_write(&self) -> Result<(), EngineError> {
        match self.lock_mode() {
            Some(LockType::Write) => Ok(()),
            Some(LockType::Read) => Err(EngineError::WriteLockRequired),
            None => Err(EngineError::NoLock),
        }
    }

    fn catalog(&self) -> &Catalog {
        self.catalog.as_ref().expect("catalog loaded at begin")
    }

    fn catalog_mut(&mut self) -> &mut Catalog {
        self.catalog_dirty = true;
        self.catalog.as_mut().expect("catalog loaded at begin")
    }

    fn write_through(&mut self, pageid: u64, page: &[u8]) -> Result<(), EngineError> {
        self.stats.page_writes += 1;
        self.spdu.write_page(pageid, page)?;
        Ok(())
    }

    fn cache(&mut self, pageid: u64, page: Vec<u8>, dirty: bool) -> Result<(), EngineError> {
        if let Some((victim, data)) = self.pool.insert(pageid, page, dirty) {
            self.write_through(victim, &data)?;
        }
        Ok(())
    }

    fn fetch(&mut self, pageid: u64) -> Result<Vec<u8>, EngineError> {
        if let Some(page) = self.pool.get(pageid) {
            return Ok(page.to_vec());
        }
        self.stats.page_reads += 1;
        let page = self.spdu.read_page(pageid)?;
        self.cache(pageid, page.clone(), false)?;
        Ok(page)
    }

    fn modify<R>(&mut self, pageid: u64, f: impl FnOnce(&mut Vec<u8>) -> R) -> Result<R, EngineError> {
        if self.pool.get(pageid).is_none() {
            self.fetch(pageid)?;
        }
        Ok(f(self.pool.get_mut(pageid).unwrap()))
    }

    /// Puts a payload on the tail heap page, opening a new page if needed.
    fn place(&mut self, payload: &[u8]) -> Result<Rid, EngineError> {
        let heap_end = self.catalog().heap_end;
        if heap_end > HEAP_START {
            let tail = heap_end - 1;
            if slotted::fits(&self.fetch(tail)?, payload.len()) {
                let slot = self.modify(tail, |p| slotted::insert(p, payload))?.unwrap();
                return Ok(Rid {
                    pageid: tail as u32,
                    slot,
                });
            }
        }
        let pageid = self.catalog_mut().grow_heap()?;
        // A new heap page may hold stale bytes of a released index extent.
        let mut page = vec![0u8; self.page_size()];
        let slot = slotted::insert(&mut page, payload).expect("payload fits an empty page");
        self.cache(pageid, page, true)?;
        Ok(Rid {
            pageid: pageid as u32,
            slot,
        })
    }

    pub fn record_count(&self) -> Result<u64, EngineError> {
        self.require_lock()?;
        Ok(self.catalog().record_count)
    }

    /// Appends a record at the heap tail.
    pub fn insert_record(&mut self, record: &UserVisitsRecord) -> Result<Rid, EngineError> {
        self.require_write()?;
        record.validate()?;
        let payload = Cell::Record(&record.encode()).encode();
        let max = slotted::max_payload(self.page_size());
        if payload.len() > max {
            return Err(EngineError::RecordTooLarge {
                len: payload.len(),
                max,
            });
        }
        let rid = self.place(&payload)?;
        self.catalog_mut().record_count += 1;
        self.pending.push(IndexEntry {
            key: key_of(&record.source_ip),
            rid,
        });
        Ok(rid)
    }

    /// Up to `limit` records in heap order, with their record ids.
    pub fn scan_with_rids(&mut self, limit: u64) -> Result<Vec<(Rid, UserVisitsRecord)>, EngineError> {
        self.scan_filtered(limit, |_| true)
    }

    pub fn scan(&mut self, limit: u64) -> Result<Vec<UserVisitsRecord>, EngineError> {
        Ok(self.scan_with_rids(limit)?.into_iter().map(|(_, r)| r).collect())
    }

    fn scan_filtered(
        &mut self,
        limit: u64,
        keep: impl Fn(&UserVisitsRecord) -> bool,
    ) -> Result<Vec<(Rid, UserVisitsRecord)>, EngineError> {
        self.require_lock()?;
        let mut out = Vec::new();
        if limit == 0 {
            return Ok(out);
        }
        for pageid in HEAP_START..self.catalog().heap_end {
            let page = self.fetch(pageid)?;
            for slot in 0..slotted::slot_count(&page) as u16 {
                let (rid, bytes) = match slotted::cell(&page, slot)? {
                    Cell::Record(r) => (
                        Rid {
                            pageid: pageid as u32,
                            slot,
                        },
                        r,
                    ),
                    Cell::Moved { home, record } => (home, record),
                    Cell::Stub(_) | Cell::Dead => continue,
                };
                let record = UserVisitsRecord::decode(bytes)?;
                if keep(&record) {
                    out.push((rid, record));
                    if out.len() as u64 == limit {
                        self.stats.records_returned += limit;
                        return Ok(out);
                    }
                }
            }
        }
        self.stats.records_returned += out.len() as u64;
        Ok(out)
    }

    /// Reads the record whose home is `rid`, following a forwarding stub.
    fn read_record(&mut self, rid: Rid) -> Result<UserVisitsRecord, EngineError> {
        let page = self.fetch(u64::from(rid.pageid))?;
        let bytes = match slotted::cell(&page, rid.slot)? {
            Cell::Record(r) => r.to_vec(),
            Cell::Stub(at) => {
                let page = self.fetch(u64::from(at.pageid))?;
                match slotted::cell(&page, at.slot)? {
                    Cell::Moved { home, record } if home == rid => record.to_vec(),
                    other => return Err(EngineError::Corrupt(format!("stub {rid:?} points at {other:?}"))),
                }
            }
            other => return Err(EngineError::Corrupt(format!("index points at {other:?}"))),
        };
        UserVisitsRecord::decode(&bytes)
    }

    fn index_rids(&mut self, source_ip: &str) -> Result<Vec<Rid>, EngineError> {
        let key = key_of(source_ip);
        let page_size = self.page_size();
        let segments = self.catalog().segments.clone();
        let mut rids = Vec::new();
        for seg in &segments {
            rids.extend(index::search(seg, &key, page_size, |p| self.fetch(p))?);
        }
        rids.extend(self.pending.iter().filter(|e| e.key == key).map(|e| e.rid));
        rids.sort_unstable();
        Ok(rids)
    }

    fn lookup(&mut self, source_ip: &str, use_index: bool) -> Result<Vec<(Rid, UserVisitsRecord)>, EngineError> {
        self.require_lock()?;
        let mut hits = if use_index {
            let mut hits = Vec::new();
            for rid in self.index_rids(source_ip)? {
                hits.push((rid, self.read_record(rid)?));
            }
            self.stats.records_returned += hits.len() as u64;
            hits
        } else {
            self.scan_filtered(u64::MAX, |r| r.source_ip == source_ip)?
        };
        hits.sort_unstable_by_key(|(rid, _)| *rid);
        Ok(hits)
    }

    /// Records with the given sourceIP, in record id order.
    pub fn select_by_key(&mut self, source_ip: &str, use_index: bool) -> Result<Vec<UserVisitsRecord>, EngineError> {
        Ok(self.lookup(source_ip, use_index)?.into_iter().map(|(_, r)| r).collect())
    }

    /// Sets countryCode on every record with the given sourceIP.
    pub fn update_by_key(&mut self, source_ip: &str, country_code: &str, use_index: bool) -> Result<u64, EngineError> {
        self.require_write()?;
        record::check_len("countryCode", country_code, record::COUNTRY_CODE_MAX)?;
        let hits = self.lookup(source_ip, use_index)?;
        let updated = hits.len() as u64;
        for (rid, mut rec) in hits {
            rec.country_code = country_code.to_owned();
            self.rewrite(rid, &rec)?;
        }
        Ok(updated)
    }

    /// Stores a new version of the record whose home is `home`. A record that
    /// no longer fits its page moves to the heap tail and leaves a stub.
    fn rewrite(&mut self, home: Rid, record: &UserVisitsRecord) -> Result<(), EngineError> {
        let bytes = record.encode();
        let home_page = self.fetch(u64::from(home.pageid))?;
        let current = match slotted::cell(&home_page, home.slot)? {
            Cell::Record(_) => None,
            Cell::Stub(at) => Some(at),
            other => return Err(EngineError::Corrupt(format!("rewrite of {other:?}"))),
        };
        let (at, payload) = match current {
            None => (home, Cell::Record(&bytes).encode()),
            Some(at) => (at, Cell::Moved { home, record: &bytes }.encode()),
        };
        if self.modify(u64::from(at.pageid), |p| slotted::replace(p, at.slot, &payload))? {
            return Ok(());
        }
        let moved = Cell::Moved { home, record: &bytes }.encode();
        let new_rid = self.place(&moved)?;
        if current.is_some() {
            let dead = Cell::Dead.encode();
            self.modify(u64::from(at.pageid), |p| slotted::replace(p, at.slot, &dead))?;
        }
        let stub = Cell::Stub(new_rid).encode();
        self.modify(u64::from(home.pageid), |p| slotted::replace(p, home.slot, &stub))?;
        Ok(())
    }

    /// Every index entry visible to this transaction, sorted.
    pub fn index_entries(&mut self) -> Result<Vec<IndexEntry>, EngineError> {
        self.require_lock()?;
        let page_size = self.page_size();
        let segments = self.catalog().segments.clone();
        let mut all = self.pending.clone();
        for seg in &segments {
            all.extend(index::read_all(seg, page_size, |p| self.fetch(p))?);
        }
        all.sort_unstable();
        Ok(all)
    }

    /// Number of index segments in the catalog.
    pub fn index_segments(&self) -> Result<usize, EngineError> {
        self.require_lock()?;
        Ok(self.catalog().segments.len())
    }

    fn write_segment(&mut self, entries: &[IndexEntry]) -> Result<catalog::Segment, EngineError> {
        let page_size = self.page_size();
        let pages = index::encode_pages(entries, page_size);
        let start = self.catalog_mut().allocate(pages.len() as u64)?;
        for (i, page) in pages.iter().enumerate() {
            let pageid = start + i as u64;
            self.pool.remove(pageid);
            self.write_through(pageid, page)?;
        }
        Ok(catalog::Segment {
            start,
            pages: pages.len() as u64,
            entries: entries.len() as u64,
        })
    }

    /// Turns this transaction's index entries into a new segment, merging all
    /// segments into one when there would be too many.
    fn flush_index(&mut self) -> Result<(), EngineError> {
        if self.pending.is_empty() {
            return Ok(());
        }
        let mut entries = std::mem::take(&mut self.pending);
        let old = self.catalog().segments.clone();
        let merge = old.len() + 1 > MAX_SEGMENTS;
        if merge {
            let page_size = self.page_size();
            for seg in &old {
                entries.extend(index::read_all(seg, page_size, |p| self.fetch(p))?);
            }
        }
        entries.sort_unstable();
        let seg = self.write_segment(&entries)?;
        let catalog = self.catalog_mut();
        if merge {
            for s in &old {
                catalog.release(s.start, s.pages);
            }
            catalog.segments.clear();
        }
        catalog.segments.push(seg);
        Ok(())
    }

    /// Writes out all changes and commits them. The lock is released whether
    /// or not the commit succeeds. Under a read lock this only releases.
    pub fn commit(&mut self) -> Result<(), EngineError> {
        self.require_lock()?;
        let result = if self.lock_mode() == Some(LockType::Write) {
            self.commit_changes()
        } else {
            Ok(())
        };
        self.release();
        result
    }

    fn commit_changes(&mut self) -> Result<(), EngineError> {
        self.flush_index()?;
        if self.catalog_dirty {
            let page = self.catalog().encode(self.page_size())?;
            self.cache(0, page, true)?;
        }
        for (pageid, page) in self.pool.take_dirty() {
            self.write_through(pageid, &page)?;
        }
        self.spdu.commit_transaction()?;
        Ok(())
    }

    /// Discards this transaction's changes and releases the lock.
    pub fn abort(&mut self) -> Result<(), EngineError> {
        self.require_lock()?;
        let result = if self.lock_mode() == Some(LockType::Write) {
            self.pool.clear();
            self.spdu.abort_transaction().map_err(EngineError::from)
        } else {
            Ok(())
        };
        self.release();
        result
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        self.release();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dfs::{Dfs, DfsConfig};
    use chrono::NaiveDate;

    fn db(total_pages: u64) -> Database {
        let dfs = Dfs::in_memory(DfsConfig::default()).unwrap();
        let meta = Arc::new(MetaDfs::new(Arc::new(dfs), 4096).unwrap());
        Database::open(
            meta,
            Arc::new(LockService::new()),
            "uv",
            total_pages,
            EngineConfig::default(),
        )
        .unwrap()
        .0
    }

    fn rec(ip: &str, n: i32) -> UserVisitsRecord {
        UserVisitsRecord {
            source_ip: ip.into(),
            dest_url: format!("http://site{n}.example/page"),
            visit_date: NaiveDate::from_ymd_opt(2000, 1, 1).unwrap() + chrono::Days::new(n as u64),
            ad_revenue: n as f32 / 4.0,
            user_agent: "agent".into(),
            country_code: "USA".into(),
            language_code: "en-US".into(),
            search_word: "word".into(),
            duration: n,
        }
    }

    #[test]
    fn fresh_database_is_empty() {
        let db = db(64);
        let mut s = db.session().unwrap();
        s.begin(LockType::Read).unwrap();
        assert!(s.scan(10).unwrap().is_empty());
        assert_eq!(s.record_count().unwrap(), 0);
        s.commit().unwrap();
    }

    #[test]
    fn insert_commit_scan() {
        let db = db(64);
        let mut s = db.session().unwrap();
        s.begin(LockType::Write).unwrap();
        for n in 0..100 {
            s.insert_record(&rec(&format!("10.0.0.{}", n % 7), n)).unwrap();
        }
        s.commit().unwrap();
        assert!(db.locks().snapshot(db.lock_name()).is_empty());
        s.begin(LockType::Read).unwrap();
        let all = s.scan(u64::MAX).unwrap();
        assert_eq!(all.len(), 100);
        assert_eq!(all[42], rec("10.0.0.0", 42));
        assert_eq!(s.scan(1).unwrap(), vec![rec("10.0.0.0", 0)]);
        let by_index = s.select_by_key("10.0.0.3", true).unwrap();
        assert_eq!(by_index, s.select_by_key("10.0.0.3", false).unwrap());
        assert_eq!(by_index.len(), 14);
        s.commit().unwrap();
    }

    #[test]
    fn abort_discards_inserts() {
        let db = db(64);
        let mut s = db.session().unwrap();
        s.begin(LockType::Write).unwrap();
        s.insert_record(&rec("1.1.1.1", 1)).unwrap();
        s.commit().unwrap();
        s.begin(LockType::Write).unwrap();
        for n in 0..500 {
            s.insert_record(&rec("2.2.2.2", n)).unwrap();
        }
        s.abort().unwrap();
        s.begin(LockType::Read).unwrap();
        assert_eq!(s.scan(u64::MAX).unwrap().len(), 1);
        assert!(s.select_by_key("2.2.2.2", true).unwrap().is_empty());
    }

    #[test]
    fn update_moves_records_that_outgrow_their_page() {
        let db = db(64);
        let mut s = db.session().unwrap();
        s.begin(LockType::Write).unwrap();
        let mut short = rec("9.9.9.9", 1);
        short.country_code = "A".into();
        let n = 4096 / (short.encode().len() + 5);
        for i in 0..n as i32 {
            let mut r = short.clone();
            r.duration = i;
            s.insert_record(&r).unwrap();
        }
        s.commit().unwrap();
        s.begin(LockType::Write).unwrap();
        assert_eq!(s.update_by_key("9.9.9.9", "ABC", true).unwrap(), n as u64);
        assert_eq!(s.update_by_key("9.9.9.9", "XYZ", false).unwrap(), n as u64);
        s.commit().unwrap();
        s.begin(LockType::Read).unwrap();
        let rows = s.select_by_key("9.9.9.9", true).unwrap();
        assert_eq!(rows.len(), n);
        assert!(rows.iter().all(|r| r.country_code == "XYZ"));
        assert_eq!(rows, s.select_by_key("9.9.9.9", false).unwrap());
        let rids: Vec<Rid> = s
            .scan_with_rids(u64::MAX)
            .unwrap()
            .into_iter()
            .map(|(r, _)| r)
            .collect();
        let indexed: Vec<Rid> = s.index_entries().unwrap().into_iter().map(|e| e.rid).collect();
        let mut sorted = rids.clone();
        sorted.sort();
        assert_eq!(sorted, indexed);
    }

    #[test]
    fn update_errors_and_absent_keys() {
        let db = db(64);
        let mut s = db.session().unwrap();
        s.begin(LockType::Write).unwrap();
        s.insert_record(&rec("1.1.1.1", 1)).unwrap();
        assert!(matches!(
            s.update_by_key("1.1.1.1", "LONG", true),
            Err(EngineError::ValueTooLong { .. })
        ));
        s.commit().unwrap();
        s.begin(LockType::Write).unwrap();
        let before = s.stats().page_writes;
        assert_eq!(s.update_by_key("8.8.8.8", "ABC", true).unwrap(), 0);
        assert_eq!(s.stats().page_writes, before);
        s.abort().unwrap();
    }

    #[test]
    fn segments_merge() {
        let db = db(128);
        let mut s = db.session().unwrap();
        for round in 0..(MAX_SEGMENTS as i32 + 2) {
            s.begin(LockType::Write).unwrap();
            for n in 0..50 {
                s.insert_record(&rec(&format!("ip{}", n % 5), round * 100 + n)).unwrap();
            }
            s.commit().unwrap();
        }
        s.begin(LockType::Read).unwrap();
        assert!(s.index_segments().unwrap() <= MAX_SEGMENTS);
        assert_eq!(s.index_entries().unwrap().len(), 300);
        assert_eq!(s.select_by_key("ip3", true).unwrap().len(), 60);
    }

    #[test]
    fn full_database_reports() {
        let db = db(16);
        let mut s = db.session().unwrap();
        s.begin(LockType::Write).unwrap();
        let err = (0..10_000).try_for_each(|n| s.insert_record(&rec("1.2.3.4", n)).map(|_| ()));
        assert!(matches!(err, Err(EngineError::DatabaseFull(_))));
        s.abort().unwrap();
    }

    #[test]
    fn operations_need_locks() {
        let db = db(16);
        let mut s = db.session().unwrap();
        assert!(matches!(s.scan(1), Err(EngineError::NoLock)));
        s.begin(LockType::Read).unwrap();
        assert!(matches!(
            s.insert_record(&rec("a", 1)),
            Err(EngineError::WriteLockRequired)
        ));
        assert!(matches!(s.begin(LockType::Read), Err(EngineError::LockHeld)));
        s.upgrade().unwrap();
        s.insert_record(&rec("a", 1)).unwrap();
        s.commit().unwrap();
        assert!(db.locks().snapshot(db.lock_name()).is_empty());
    }
}
