//! Shadow-page deferred update over meta DFS files.
//!
//! Storage layout:
//!
//! - The data meta file is a flat page array; page `p` lives at
//!   `page_address(p)`.
//! - Block 0 of the log meta file is the master block. Its first page holds
//!   the [`MasterPage`]; flipping `commit_flag` costs one block remake.
//! - Every later log block holds up to `N - 1` page images in arrival order
//!   and a [`LogBlockFooter`] in its last page listing their pageids and the
//!   `commit_complete` marker.
//!
//! Updates collect in a one-block [`BlockUpdateBuffer`] and reach the log as
//! whole-block appends, either when the buffer fills (`commit_complete =
//! false`) or at commit (`commit_complete = true`; the append is the commit
//! point). Copying committed pages back to the data file is deferred until the
//! log grows past a threshold and then done block by block, one remake per
//! dirtied data block.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::format::{LogBlockFooter, MasterPage, MASTER_BYTES};
use super::{check_page, RecoverablePages, RecoveryReport, SpduError};
use crate::fault::FaultInjector;
use crate::meta::{MetaDfs, MetaDfsFile, MetaFileStats, PageAddress, PageConfig};

/// Index into the collected committed blocks, and slot within that block.
type LogPos = (usize, usize);

/// Position of a logged page: log block and slot within that block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LogSlot {
    pub block_id: u64,
    pub b_offset: u32,
}

/// Map from pageid to the newest durable logged copy.
pub type DfsLogTableIndex = HashMap<u64, LogSlot>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpduDfsConfig {
    /// Batch post-commit runs at commit once the log holds more than this
    /// many data blocks.
    pub post_commit_threshold: u64,
    /// When false, every commit runs batch post-commit immediately.
    pub deferred: bool,
}

impl Default for SpduDfsConfig {
    fn default() -> Self {
        Self {
            post_commit_threshold: 64,
            deferred: true,
        }
    }
}

/// Staging area for updated pages, exactly one DFS block in size. The last
/// page slot is reserved for the footer.
#[derive(Debug, Clone)]
pub struct BlockUpdateBuffer {
    bytes: Vec<u8>,
    pageids: Vec<u64>,
    slots: HashMap<u64, usize>,
    page_size: usize,
}

impl BlockUpdateBuffer {
    fn new(pages: PageConfig) -> Self {
        Self {
            bytes: vec![0; pages.block_size()],
            pageids: Vec::new(),
            slots: HashMap::new(),
            page_size: pages.page_size,
        }
    }

    pub fn capacity(&self) -> usize {
        self.bytes.len() / self.page_size - 1
    }

    pub fn len(&self) -> usize {
        self.pageids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pageids.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.len() == self.capacity()
    }

    /// Pageids in arrival order.
    pub fn pageids(&self) -> &[u64] {
        &self.pageids
    }

    fn slot(&self, i: usize) -> &[u8] {
        &self.bytes[i * self.page_size..(i + 1) * self.page_size]
    }

    pub fn get(&self, pageid: u64) -> Option<&[u8]> {
        self.slots.get(&pageid).map(|&i| self.slot(i))
    }

    /// Stores `page`, overwriting the buffered copy if there is one.
    fn put(&mut self, pageid: u64, page: &[u8]) {
        let i = match self.slots.get(&pageid) {
            Some(&i) => i,
            None => {
                debug_assert!(!self.is_full());
                let i = self.pageids.len();
                self.pageids.push(pageid);
                self.slots.insert(pageid, i);
                i
            }
        };
        self.bytes[i * self.page_size..(i + 1) * self.page_size].copy_from_slice(page);
    }

    /// Seals the buffer into a log block with its footer.
    fn seal(&mut self, commit_complete: bool) -> Vec<u8> {
        let footer_at = self.bytes.len() - self.page_size;
        let used = self.pageids.len() * self.page_size;
        self.bytes[used..footer_at].fill(0);
        LogBlockFooter {
            pageids: self.pageids.clone(),
            commit_complete,
        }
        .encode_into(&mut self.bytes[footer_at..]);
        self.bytes.clone()
    }

    fn clear(&mut self) {
        self.pageids.clear();
        self.slots.clear();
    }
}

/// Read-path and post-commit counters of one session.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SpduDfsStats {
    pub buffer_hits: u64,
    pub log_reads: u64,
    pub data_reads: u64,
    pub footer_reads: u64,
    pub blocks_flushed: u64,
    pub batch_post_commits: u64,
    pub data_blocks_remade: u64,
}

/// One session's view of a database stored as a data meta file plus a log
/// meta file. Each session owns its buffer and log table index; the files are
/// shared through the [`MetaDfs`].
#[derive(Debug)]
pub struct SpduDfs {
    meta: Arc<MetaDfs>,
    data: MetaDfsFile,
    log: MetaDfsFile,
    pages: PageConfig,
    num_pages: u64,
    index: DfsLogTableIndex,
    buffer: BlockUpdateBuffer,
    config: SpduDfsConfig,
    faults: FaultInjector,
    stats: SpduDfsStats,
}

impl SpduDfs {
    /// Checks that a footer page can list a full block of pageids.
    pub fn validate_geometry(pages: PageConfig) -> Result<(), SpduError> {
        let slots = pages.pages_per_block.saturating_sub(1);
        if slots == 0 {
            return Err(SpduError::InvalidConfig(
                "a log block needs at least one data slot besides the footer".into(),
            ));
        }
        if slots > LogBlockFooter::capacity(pages.page_size) {
            return Err(SpduError::InvalidConfig(format!(
                "footer of a {}-byte page lists at most {} pageids, blocks hold {slots}",
                pages.page_size,
                LogBlockFooter::capacity(pages.page_size)
            )));
        }
        if pages.page_size < MASTER_BYTES {
            return Err(SpduError::InvalidConfig("page too small for the master page".into()));
        }
        Ok(())
    }

    /// Creates a data meta file of `num_pages` zero pages (rounded up to whole
    /// blocks) and a log meta file holding only the master block.
    pub fn create_files(meta: &MetaDfs, data_name: &str, log_name: &str, num_pages: u64) -> Result<(), SpduError> {
        let pages = meta.pages();
        Self::validate_geometry(pages)?;
        let data = meta.create_meta(data_name)?;
        let zero = vec![0u8; pages.block_size()];
        for _ in 0..num_pages.div_ceil(pages.pages_per_block as u64) {
            meta.append_block(&data, &zero)?;
        }
        let log = meta.create_meta(log_name)?;
        meta.append_block(&log, &master_block(pages, false, 1))?;
        Ok(())
    }

    /// Attaches a session to existing files. The index starts empty: call
    /// [`reconstruct_log_table_index`](Self::reconstruct_log_table_index) when
    /// taking a lock, or [`restart_system`](Self::restart_system) after a crash.
    pub fn open(
        meta: Arc<MetaDfs>,
        data_name: &str,
        log_name: &str,
        config: SpduDfsConfig,
        faults: FaultInjector,
    ) -> Result<Self, SpduError> {
        let pages = meta.pages();
        Self::validate_geometry(pages)?;
        let data = meta.open_meta(data_name)?;
        let log = meta.open_meta(log_name)?;
        let num_pages = meta.block_count(&data) * pages.pages_per_block as u64;
        Ok(Self {
            buffer: BlockUpdateBuffer::new(pages),
            meta,
            data,
            log,
            pages,
            num_pages,
            index: DfsLogTableIndex::new(),
            config,
            faults,
            stats: SpduDfsStats::default(),
        })
    }

    pub fn config(&self) -> SpduDfsConfig {
        self.config
    }

    pub fn pages(&self) -> PageConfig {
        self.pages
    }

    pub fn index(&self) -> &DfsLogTableIndex {
        &self.index
    }

    pub fn buffer(&self) -> &BlockUpdateBuffer {
        &self.buffer
    }

    pub fn stats(&self) -> SpduDfsStats {
        self.stats
    }

    pub fn meta(&self) -> &Arc<MetaDfs> {
        &self.meta
    }

    pub fn data_file(&self) -> &MetaDfsFile {
        &self.data
    }

    pub fn log_file(&self) -> &MetaDfsFile {
        &self.log
    }

    pub fn data_file_stats(&self) -> MetaFileStats {
        self.meta.stats(&self.data)
    }

    pub fn log_file_stats(&self) -> MetaFileStats {
        self.meta.stats(&self.log)
    }

    /// Log length in blocks, master block included.
    pub fn log_block_count(&self) -> u64 {
        self.meta.block_count(&self.log)
    }

    fn slots_per_block(&self) -> usize {
        self.pages.pages_per_block - 1
    }

    pub fn master(&self) -> Result<MasterPage, SpduError> {
        let page = self.meta.read_page_at(
            &self.log,
            PageAddress {
                block_id: 0,
                page_offset: 0,
            },
        )?;
        MasterPage::decode(&page)
    }

    fn set_master(&self, commit_flag: bool, log_len: u64) -> Result<(), SpduError> {
        self.meta
            .overwrite_block(&self.log, 0, &master_block(self.pages, commit_flag, log_len))?;
        Ok(())
    }

    /// Reads only the footer page of log block `block_id`.
    pub fn read_footer(&mut self, block_id: u64) -> Result<LogBlockFooter, SpduError> {
        let p = self.pages.page_size;
        let page = self
            .meta
            .read_in_block(&self.log, block_id, (self.pages.pages_per_block - 1) * p, p)?;
        self.stats.footer_reads += 1;
        LogBlockFooter::decode(&page, self.slots_per_block())
    }

    /// Rebuilds this session's index from the footers of every log data block,
    /// oldest first, so later copies of a page replace earlier ones. Called at
    /// lock acquisition; never reads page images.
    pub fn reconstruct_log_table_index(&mut self) -> Result<&DfsLogTableIndex, SpduError> {
        self.index.clear();
        for block_id in 1..self.log_block_count() {
            let footer = self.read_footer(block_id)?;
            for (slot, pageid) in footer.pageids.into_iter().enumerate() {
                self.index.insert(
                    pageid,
                    LogSlot {
                        block_id,
                        b_offset: slot as u32,
                    },
                );
            }
        }
        Ok(&self.index)
    }

    /// Appends the buffer to the log as one block. An empty buffer is only
    /// written when `mark_commit` is set, as a footer-only commit marker.
    pub fn flush_buffer(&mut self, mark_commit: bool) -> Result<Option<u64>, SpduError> {
        if self.buffer.is_empty() && !mark_commit {
            return Ok(None);
        }
        if !mark_commit {
            self.faults.point("auto_flush_before_append")?;
        }
        let block = self.buffer.seal(mark_commit);
        let block_id = self.meta.append_block(&self.log, &block)?;
        self.faults.point(if mark_commit {
            "commit_flush_after_append"
        } else {
            "auto_flush_after_append"
        })?;
        for (slot, &pageid) in self.buffer.pageids().iter().enumerate() {
            self.index.insert(
                pageid,
                LogSlot {
                    block_id,
                    b_offset: slot as u32,
                },
            );
        }
        self.buffer.clear();
        self.stats.blocks_flushed += 1;
        Ok(Some(block_id))
    }

    /// Copies the newest committed version of every logged page into the data
    /// file, one remake per dirtied data block. Only the log prefix ending at
    /// the last `commit_complete` block is used. Idempotent. Returns the
    /// number of data blocks remade.
    pub fn apply_committed_log(&mut self) -> Result<u64, SpduError> {
        let log_len = self.log_block_count();
        let mut blocks = Vec::new();
        let mut committed_len = 1;
        for block_id in 1..log_len {
            let block = self.meta.read_block(&self.log, block_id)?;
            let footer_at = block.len() - self.pages.page_size;
            let footer = LogBlockFooter::decode(&block[footer_at..], self.slots_per_block())?;
            if footer.commit_complete {
                committed_len = block_id + 1;
            }
            blocks.push((block, footer));
        }
        blocks.truncate(committed_len as usize - 1);

        // Last update wins: later blocks overwrite earlier ones.
        let p = self.pages.page_size;
        let mut newest: BTreeMap<u64, LogPos> = BTreeMap::new();
        for (b, (_, footer)) in blocks.iter().enumerate() {
            for (slot, &pageid) in footer.pageids.iter().enumerate() {
                if pageid >= self.num_pages {
                    return Err(SpduError::Corrupt {
                        what: "log block footer",
                        detail: format!("pageid {pageid} outside database"),
                    });
                }
                newest.insert(pageid, (b, slot));
            }
        }
        self.faults.point("bpc_after_collect")?;

        // Sorted by pageid, so each data block's pages are contiguous.
        let mut groups: BTreeMap<u64, Vec<(u64, LogPos)>> = BTreeMap::new();
        for (pageid, src) in newest {
            let addr = self.pages.page_address(pageid);
            groups.entry(addr.block_id).or_default().push((addr.page_offset, src));
        }
        let mut remade = 0;
        for (block_id, patches) in groups {
            self.faults.point("bpc_before_remake")?;
            let mut target = self.meta.read_block(&self.data, block_id)?;
            for (page_offset, (b, slot)) in patches {
                let src = &blocks[b].0[slot * p..(slot + 1) * p];
                let at = page_offset as usize * p;
                target[at..at + p].copy_from_slice(src);
            }
            self.meta.overwrite_block(&self.data, block_id, &target)?;
            remade += 1;
            self.stats.data_blocks_remade += 1;
            self.faults.point("bpc_after_remake")?;
        }
        Ok(remade)
    }

    /// Deletes log blocks from the end down to the master block.
    fn truncate_log(&mut self) -> Result<(), SpduError> {
        self.faults.point("bpc_before_truncate")?;
        while self.log_block_count() > 1 {
            self.meta.remove_last_block(&self.log)?;
            self.faults.point("bpc_mid_truncate")?;
        }
        Ok(())
    }

    /// Deferred post-commit over every committed log block.
    ///
    /// The master records the log length together with `commit_flag = true`.
    /// Truncation starts only after every remake, so on restart a log shorter
    /// than the recorded length means the copy phase already completed.
    pub fn batch_post_commit(&mut self) -> Result<(), SpduError> {
        let log_len = self.log_block_count();
        if log_len <= 1 {
            return Ok(());
        }
        self.faults.point("bpc_before_flag_set")?;
        self.set_master(true, log_len)?;
        self.faults.point("bpc_after_flag_set")?;
        self.apply_committed_log()?;
        self.finish_post_commit()?;
        self.stats.batch_post_commits += 1;
        Ok(())
    }

    fn finish_post_commit(&mut self) -> Result<(), SpduError> {
        self.truncate_log()?;
        self.faults.point("bpc_before_flag_clear")?;
        self.set_master(false, 1)?;
        self.faults.point("bpc_after_flag_clear")?;
        self.index.clear();
        Ok(())
    }

    /// Deletes log blocks from the newest backwards until one with
    /// `commit_complete` set. Returns how many were deleted.
    fn drop_uncommitted_tail(&mut self, point: &'static str) -> Result<u64, SpduError> {
        let mut dropped = 0;
        loop {
            let count = self.log_block_count();
            if count <= 1 || self.read_footer(count - 1)?.commit_complete {
                return Ok(dropped);
            }
            self.meta.remove_last_block(&self.log)?;
            dropped += 1;
            self.faults.point(point)?;
        }
    }

    /// Recovery after a crash. With `commit_flag` set, post-commit is finished
    /// (redone if the copy phase may be incomplete); otherwise the log keeps its
    /// committed prefix and loses any uncommitted tail.
    pub fn restart_system(&mut self) -> Result<RecoveryReport, SpduError> {
        self.buffer.clear();
        self.index.clear();
        let mut report = RecoveryReport::default();
        if self.log_block_count() == 0 {
            // Crashed while creating the log: start it over.
            self.meta.append_block(&self.log, &master_block(self.pages, false, 1))?;
        }
        let master = self.master()?;
        if master.commit_flag {
            self.faults.point("restart_before_redo")?;
            if self.log_block_count() == master.log_len {
                self.apply_committed_log()?;
            }
            self.faults.point("restart_after_redo")?;
            self.finish_post_commit()?;
            report.redo = true;
        } else {
            report.rolled_back = self.drop_uncommitted_tail("restart_mid_rollback")?;
            report.retained = self.log_block_count() - 1;
        }
        self.reconstruct_log_table_index()?;
        Ok(report)
    }

    /// Whether a crash left work for [`restart_system`](Self::restart_system):
    /// a set `commit_flag` or an uncommitted log tail.
    pub fn needs_recovery(&mut self) -> Result<bool, SpduError> {
        let count = self.log_block_count();
        if count == 0 || self.master()?.commit_flag {
            return Ok(true);
        }
        Ok(count > 1 && !self.read_footer(count - 1)?.commit_complete)
    }

    /// Address-space lookup without touching the buffer or index.
    fn read_data_page(&mut self, pageid: u64) -> Result<Vec<u8>, SpduError> {
        self.stats.data_reads += 1;
        Ok(self.meta.read_page(&self.data, pageid)?)
    }
}

fn master_block(pages: PageConfig, commit_flag: bool, log_len: u64) -> Vec<u8> {
    let mut block = vec![0u8; pages.block_size()];
    MasterPage { commit_flag, log_len }.encode_into(&mut block[..pages.page_size]);
    block
}

impl RecoverablePages for SpduDfs {
    fn page_size(&self) -> usize {
        self.pages.page_size
    }

    fn num_pages(&self) -> u64 {
        self.num_pages
    }

    /// Buffer first, then the log via the index, then the data file.
    fn read_page(&mut self, pageid: u64) -> Result<Vec<u8>, SpduError> {
        if pageid >= self.num_pages {
            return Err(SpduError::OutOfRange {
                pageid,
                num_pages: self.num_pages,
            });
        }
        if let Some(page) = self.buffer.get(pageid) {
            self.stats.buffer_hits += 1;
            return Ok(page.to_vec());
        }
        match self.index.get(&pageid) {
            Some(slot) => {
                let addr = PageAddress {
                    block_id: slot.block_id,
                    page_offset: u64::from(slot.b_offset),
                };
                self.stats.log_reads += 1;
                Ok(self.meta.read_page_at(&self.log, addr)?)
            }
            None => self.read_data_page(pageid),
        }
    }

    /// A page already in the buffer is overwritten there; otherwise it takes
    /// the next slot, even if an older copy sits in a flushed log block. A
    /// full buffer is flushed immediately.
    fn write_page(&mut self, pageid: u64, page: &[u8]) -> Result<(), SpduError> {
        check_page(pageid, page, self.pages.page_size, self.num_pages)?;
        self.buffer.put(pageid, page);
        if self.buffer.is_full() {
            self.flush_buffer(false)?;
        }
        Ok(())
    }

    /// The durable append of the `commit_complete` block commits the
    /// transaction. Post-commit runs afterwards only when the log has grown
    /// past the threshold (or deferral is off).
    fn commit_transaction(&mut self) -> Result<(), SpduError> {
        self.faults.point("before_commit_marker")?;
        self.flush_buffer(true)?;
        self.faults.point("after_commit_marker")?;
        let data_blocks = self.log_block_count() - 1;
        if !self.config.deferred || data_blocks > self.config.post_commit_threshold {
            self.batch_post_commit()?;
        }
        Ok(())
    }

    fn abort_transaction(&mut self) -> Result<(), SpduError> {
        self.buffer.clear();
        self.drop_uncommitted_tail("abort_mid_truncate")?;
        self.reconstruct_log_table_index()?;
        Ok(())
    }
}
