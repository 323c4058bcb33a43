//! Baseline shadow-page deferred update over two flat page files.
//!
//! The log file holds the master page at position 0 and logged pages from
//! position 1 on; log offset `k` lives at position `k + 1`. Each logged page is
//! stored as a 16-byte header followed by the full page image, so a log slot
//! is `page_size + 16` bytes.

use std::collections::{BTreeMap, HashMap};

use super::format::{LogPageHeader, MasterPage, LOG_PAGE_HEADER_BYTES};
use super::page_file::PageFile;
use super::{check_page, RecoverablePages, RecoveryReport, SpduError};
use crate::fault::FaultInjector;

/// In-memory map from pageid to log offset.
pub type LogTableIndex = BTreeMap<u64, u64>;

#[derive(Debug, Clone)]
struct BufferFrame {
    content: Vec<u8>,
    dirty: bool,
    valid: bool,
}

#[derive(Debug)]
pub struct SpduCore {
    data: PageFile,
    log: PageFile,
    page_size: usize,
    num_pages: u64,
    index: LogTableIndex,
    frames: HashMap<u64, BufferFrame>,
    sequence: u32,
    faults: FaultInjector,
}

impl SpduCore {
    /// Initializes a database of `num_pages` zero pages and an empty log.
    pub fn create(data: PageFile, log: PageFile, num_pages: u64, faults: FaultInjector) -> Result<Self, SpduError> {
        let page_size = data.page_size();
        if log.page_size() != page_size + LOG_PAGE_HEADER_BYTES {
            return Err(SpduError::InvalidConfig(format!(
                "log slots must be {} bytes for {page_size}-byte pages",
                page_size + LOG_PAGE_HEADER_BYTES
            )));
        }
        let zero = vec![0u8; page_size];
        data.truncate(0);
        for i in 0..num_pages {
            data.write(i, &zero);
        }
        data.sync();
        log.truncate(0);
        let mut master = vec![0u8; log.page_size()];
        MasterPage {
            commit_flag: false,
            log_len: 0,
        }
        .encode_into(&mut master);
        log.write(0, &master);
        log.sync();
        Self::open(data, log, faults)
    }

    /// Attaches to existing files. Call [`restart_system`](Self::restart_system)
    /// before use when the previous process may have crashed.
    pub fn open(data: PageFile, log: PageFile, faults: FaultInjector) -> Result<Self, SpduError> {
        let page_size = data.page_size();
        let num_pages = data.len();
        let this = Self {
            data,
            log,
            page_size,
            num_pages,
            index: LogTableIndex::new(),
            frames: HashMap::new(),
            sequence: 0,
            faults,
        };
        this.master()?;
        Ok(this)
    }

    pub fn index(&self) -> &LogTableIndex {
        &self.index
    }

    pub fn master(&self) -> Result<MasterPage, SpduError> {
        let page = self.log.read(0).ok_or_else(|| SpduError::Corrupt {
            what: "log file",
            detail: "missing master page".into(),
        })?;
        MasterPage::decode(&page)
    }

    fn set_master(&mut self, commit_flag: bool, log_len: u64) {
        let mut page = vec![0u8; self.log.page_size()];
        MasterPage { commit_flag, log_len }.encode_into(&mut page);
        self.log.write(0, &page);
        self.log.sync();
    }

    fn read_log_slot(&self, offset: u64) -> Result<(LogPageHeader, Vec<u8>), SpduError> {
        let slot = self.log.read(offset + 1).ok_or_else(|| SpduError::Corrupt {
            what: "log file",
            detail: format!("offset {offset} past end"),
        })?;
        let (header, image) = LogPageHeader::open(&slot)?;
        Ok((header, image.to_vec()))
    }

    fn initialize_log(&mut self) {
        self.log.truncate(1);
        self.log.sync();
        self.index.clear();
        self.sequence = 0;
    }

    /// Copies every logged page to its home position in the data file and
    /// syncs the data file. Safe to repeat any number of times.
    pub fn post_commit(&mut self) -> Result<(), SpduError> {
        let mut by_offset: Vec<(u64, u64)> = self.index.iter().map(|(p, o)| (*o, *p)).collect();
        by_offset.sort_unstable();
        for (offset, pageid) in by_offset {
            let (header, image) = self.read_log_slot(offset)?;
            if header.pageid != pageid {
                return Err(SpduError::Corrupt {
                    what: "log table index",
                    detail: format!("offset {offset} holds page {} not {pageid}", header.pageid),
                });
            }
            self.data.write(pageid, &image);
            self.faults.point("spdu_mid_copy")?;
        }
        self.data.sync();
        self.faults.point("spdu_after_data_sync")?;
        Ok(())
    }

    /// Rebuilds the index from the durable log headers, for the first
    /// `log_len` log pages.
    fn rebuild_index(&mut self, log_len: u64) -> Result<(), SpduError> {
        self.index.clear();
        let mut newest: HashMap<u64, u32> = HashMap::new();
        for offset in 0..log_len {
            let (header, _) = self.read_log_slot(offset)?;
            if header.pageid >= self.num_pages {
                return Err(SpduError::Corrupt {
                    what: "log page",
                    detail: format!("pageid {} outside database", header.pageid),
                });
            }
            let seen = newest.entry(header.pageid).or_insert(header.sequence);
            if header.sequence >= *seen {
                *seen = header.sequence;
                self.index.insert(header.pageid, offset);
            }
        }
        Ok(())
    }

    pub fn restart_system(&mut self) -> Result<RecoveryReport, SpduError> {
        let master = self.master()?;
        let mut report = RecoveryReport::default();
        self.frames.clear();
        if master.commit_flag {
            self.rebuild_index(master.log_len)?;
            self.post_commit()?;
            self.set_master(false, 0);
            self.faults.point("spdu_restart_after_redo")?;
            report.redo = true;
        } else {
            report.rolled_back = self.log.len().saturating_sub(1);
        }
        self.initialize_log();
        Ok(report)
    }

    /// Durable contents of the data file.
    pub fn data_image(&self) -> Vec<Vec<u8>> {
        self.data.durable_image()
    }
}

impl RecoverablePages for SpduCore {
    fn page_size(&self) -> usize {
        self.page_size
    }

    fn num_pages(&self) -> u64 {
        self.num_pages
    }

    fn read_page(&mut self, pageid: u64) -> Result<Vec<u8>, SpduError> {
        if pageid >= self.num_pages {
            return Err(SpduError::OutOfRange {
                pageid,
                num_pages: self.num_pages,
            });
        }
        if let Some(frame) = self.frames.get(&pageid).filter(|f| f.valid) {
            return Ok(frame.content.clone());
        }
        let content = match self.index.get(&pageid) {
            Some(&offset) => self.read_log_slot(offset)?.1,
            None => self.data.read(pageid).expect("data file covers the address space"),
        };
        self.frames.insert(
            pageid,
            BufferFrame {
                content: content.clone(),
                dirty: false,
                valid: true,
            },
        );
        Ok(content)
    }

    fn write_page(&mut self, pageid: u64, page: &[u8]) -> Result<(), SpduError> {
        check_page(pageid, page, self.page_size, self.num_pages)?;
        self.sequence = self.sequence.wrapping_add(1);
        let slot = LogPageHeader {
            pageid,
            sequence: self.sequence,
        }
        .seal(page);
        match self.index.get(&pageid) {
            Some(&offset) => self.log.write(offset + 1, &slot),
            None => {
                let offset = self.index.len() as u64;
                self.log.write(offset + 1, &slot);
                self.index.insert(pageid, offset);
            }
        }
        self.frames.insert(
            pageid,
            BufferFrame {
                content: page.to_vec(),
                dirty: true,
                valid: true,
            },
        );
        Ok(())
    }

    fn commit_transaction(&mut self) -> Result<(), SpduError> {
        self.faults.point("spdu_before_log_sync")?;
        self.log.sync();
        self.faults.point("spdu_after_log_sync")?;
        let log_len = self.index.len() as u64;
        self.set_master(true, log_len);
        self.faults.point("spdu_after_flag_set")?;
        self.post_commit()?;
        self.set_master(false, 0);
        self.faults.point("spdu_after_flag_clear")?;
        self.initialize_log();
        for frame in self.frames.values_mut() {
            frame.dirty = false;
        }
        self.faults.point("spdu_after_log_reset")?;
        Ok(())
    }

    fn abort_transaction(&mut self) -> Result<(), SpduError> {
        for frame in self.frames.values_mut() {
            if frame.dirty {
                frame.valid = false;
            }
        }
        self.frames.retain(|_, f| f.valid);
        self.initialize_log();
        Ok(())
    }
}
