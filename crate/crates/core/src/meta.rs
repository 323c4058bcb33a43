//! The Meta DFS File Manager.
//!
//! A meta DFS file is an ordered set of one-block DFS files named
//! `<meta-name>/<8-digit ordinal>`. Because each constituent holds exactly one
//! block, the manager can offer append (create the next constituent) and
//! in-place overwrite (a *remake*: delete and recreate one constituent) on top
//! of a store that only supports write-once files.
//!
//! Pages are mapped statically onto blocks: with `N` pages per block, page
//! `pageid` lives in block `pageid / N` at page offset `pageid % N`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::Serialize;
use thiserror::Error;

use crate::dfs::{Dfs, DfsError, NodeId};

#[derive(Debug, Error)]
pub enum MetaError {
    #[error("meta file `{0}` already exists")]
    AlreadyExists(String),
    #[error("meta file `{0}` not found")]
    NotFound(String),
    #[error("block {block_id} out of range for `{name}` ({block_count} blocks)")]
    OutOfRange {
        name: String,
        block_id: u64,
        block_count: u64,
    },
    #[error("block content is {got} bytes, expected {expected}")]
    WrongBlockSize { expected: usize, got: usize },
    #[error("invalid page configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Dfs(#[from] DfsError),
}

/// Page geometry shared by every meta file of one manager.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PageConfig {
    pub page_size: usize,
    pub pages_per_block: usize,
}

impl PageConfig {
    /// Derives `pages_per_block` from the DFS block size. The block size must
    /// be an exact multiple of the page size.
    pub fn new(page_size: usize, block_size: usize) -> Result<Self, MetaError> {
        if page_size == 0 || !block_size.is_multiple_of(page_size) || block_size < page_size {
            return Err(MetaError::InvalidConfig(format!(
                "block size {block_size} is not a positive multiple of page size {page_size}"
            )));
        }
        Ok(Self {
            page_size,
            pages_per_block: block_size / page_size,
        })
    }

    pub fn block_size(&self) -> usize {
        self.page_size * self.pages_per_block
    }

    pub fn page_address(&self, pageid: u64) -> PageAddress {
        page_address(pageid, self.pages_per_block as u64)
    }
}

/// Location of a page inside a meta file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PageAddress {
    pub block_id: u64,
    pub page_offset: u64,
}

impl PageAddress {
    pub fn pageid(&self, pages_per_block: u64) -> u64 {
        self.block_id * pages_per_block + self.page_offset
    }
}

pub fn page_address(pageid: u64, pages_per_block: u64) -> PageAddress {
    PageAddress {
        block_id: pageid / pages_per_block,
        page_offset: pageid % pages_per_block,
    }
}

/// Handle to a registered meta file. Cheap to clone; carries no cached state,
/// so every session sees the current block count.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MetaDfsFile {
    name: String,
}

impl MetaDfsFile {
    pub fn name(&self) -> &str {
        &self.name
    }

    fn prefix(&self) -> &str {
        self.name.trim_end_matches('/')
    }

    /// DFS file name of constituent `block_id`.
    pub fn constituent(&self, block_id: u64) -> String {
        format!("{}/{:08}", self.prefix(), block_id)
    }
}

/// One row of the Meta DFS File Table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaDfsFileTableEntry {
    pub dfs_file_name: String,
    pub file_size: u64,
    pub num_blocks: u64,
    pub num_replicas: usize,
    pub block_positions: Vec<Vec<NodeId>>,
}

/// Per-meta-file I/O counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct MetaFileStats {
    pub appends: u64,
    pub remakes: u64,
    pub block_deletes: u64,
    /// Whole-block reads.
    pub block_reads: u64,
    /// Sub-block ranged reads (pages, footers).
    pub range_reads: u64,
    pub bytes_read: u64,
}

impl MetaFileStats {
    pub fn since(&self, earlier: &MetaFileStats) -> MetaFileStats {
        MetaFileStats {
            appends: self.appends - earlier.appends,
            remakes: self.remakes - earlier.remakes,
            block_deletes: self.block_deletes - earlier.block_deletes,
            block_reads: self.block_reads - earlier.block_reads,
            range_reads: self.range_reads - earlier.range_reads,
            bytes_read: self.bytes_read - earlier.bytes_read,
        }
    }
}

/// Manager for all meta files on one DFS.
///
/// Readers may run concurrently. Mutations of one meta file need external
/// mutual exclusion (the database write lock); the manager does not enforce it.
#[derive(Debug)]
pub struct MetaDfs {
    dfs: Arc<Dfs>,
    pages: PageConfig,
    stats: Mutex<HashMap<String, MetaFileStats>>,
}

impl MetaDfs {
    pub fn new(dfs: Arc<Dfs>, page_size: usize) -> Result<Self, MetaError> {
        let pages = PageConfig::new(page_size, dfs.block_size())?;
        Ok(Self {
            dfs,
            pages,
            stats: Mutex::new(HashMap::new()),
        })
    }

    pub fn dfs(&self) -> &Arc<Dfs> {
        &self.dfs
    }

    pub fn pages(&self) -> PageConfig {
        self.pages
    }

    pub fn block_size(&self) -> usize {
        self.pages.block_size()
    }

    fn bump(&self, file: &MetaDfsFile, f: impl FnOnce(&mut MetaFileStats)) {
        let mut stats = self.stats.lock().unwrap();
        f(stats.entry(file.name.clone()).or_default());
    }

    pub fn stats(&self, file: &MetaDfsFile) -> MetaFileStats {
        self.stats.lock().unwrap().get(&file.name).copied().unwrap_or_default()
    }

    pub fn create_meta(&self, name: &str) -> Result<MetaDfsFile, MetaError> {
        if !self.dfs.register_meta(name)? {
            return Err(MetaError::AlreadyExists(name.to_owned()));
        }
        Ok(MetaDfsFile { name: name.to_owned() })
    }

    pub fn open_meta(&self, name: &str) -> Result<MetaDfsFile, MetaError> {
        if !self.dfs.meta_registered(name) {
            return Err(MetaError::NotFound(name.to_owned()));
        }
        Ok(MetaDfsFile { name: name.to_owned() })
    }

    pub fn exists(&self, name: &str) -> bool {
        self.dfs.meta_registered(name)
    }

    pub fn list_meta(&self) -> Vec<String> {
        self.dfs.meta_names()
    }

    /// Number of constituent blocks. Constituents are always a contiguous run
    /// from ordinal 0, so the count is found by galloping over existence checks.
    pub fn block_count(&self, file: &MetaDfsFile) -> u64 {
        let exists = |ordinal: u64| self.dfs.exists(&file.constituent(ordinal));
        if !exists(0) {
            return 0;
        }
        let mut lo = 0u64; // exists
        let mut hi = 1u64;
        while exists(hi) {
            lo = hi;
            hi *= 2;
        }
        // invariant: exists(lo), !exists(hi)
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if exists(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    fn check_block(&self, content: &[u8]) -> Result<(), MetaError> {
        if content.len() != self.block_size() {
            return Err(MetaError::WrongBlockSize {
                expected: self.block_size(),
                got: content.len(),
            });
        }
        Ok(())
    }

    fn out_of_range(&self, file: &MetaDfsFile, block_id: u64) -> MetaError {
        MetaError::OutOfRange {
            name: file.name.clone(),
            block_id,
            block_count: self.block_count(file),
        }
    }

    /// Maps a DFS `NotFound` on a constituent to `OutOfRange` on the meta file.
    fn map_missing(&self, file: &MetaDfsFile, block_id: u64, err: DfsError) -> MetaError {
        match err {
            DfsError::NotFound(_) => self.out_of_range(file, block_id),
            other => MetaError::Dfs(other),
        }
    }

    /// Appends one block and returns its block id.
    pub fn append_block(&self, file: &MetaDfsFile, content: &[u8]) -> Result<u64, MetaError> {
        self.check_block(content)?;
        let block_id = self.block_count(file);
        self.dfs.create_file(&file.constituent(block_id), content)?;
        self.bump(file, |s| s.appends += 1);
        Ok(block_id)
    }

    /// Replaces block `block_id` through a DFS file remake.
    pub fn overwrite_block(&self, file: &MetaDfsFile, block_id: u64, content: &[u8]) -> Result<(), MetaError> {
        self.check_block(content)?;
        let name = file.constituent(block_id);
        self.dfs
            .delete_file(&name)
            .map_err(|e| self.map_missing(file, block_id, e))?;
        self.dfs.create_file(&name, content)?;
        self.bump(file, |s| s.remakes += 1);
        Ok(())
    }

    pub fn read_block(&self, file: &MetaDfsFile, block_id: u64) -> Result<Vec<u8>, MetaError> {
        let data = self
            .dfs
            .read_range(&file.constituent(block_id), 0, self.block_size() as u64)
            .map_err(|e| self.map_missing(file, block_id, e))?;
        self.bump(file, |s| {
            s.block_reads += 1;
            s.bytes_read += data.len() as u64;
        });
        Ok(data)
    }

    /// Ranged read inside one block.
    pub fn read_in_block(
        &self,
        file: &MetaDfsFile,
        block_id: u64,
        offset: usize,
        length: usize,
    ) -> Result<Vec<u8>, MetaError> {
        let data = self
            .dfs
            .read_range(&file.constituent(block_id), offset as u64, length as u64)
            .map_err(|e| self.map_missing(file, block_id, e))?;
        self.bump(file, |s| {
            s.range_reads += 1;
            s.bytes_read += data.len() as u64;
        });
        Ok(data)
    }

    /// Reads page `page_offset` of block `block_id`.
    pub fn read_page_at(&self, file: &MetaDfsFile, addr: PageAddress) -> Result<Vec<u8>, MetaError> {
        let p = self.pages.page_size;
        self.read_in_block(file, addr.block_id, addr.page_offset as usize * p, p)
    }

    pub fn read_page(&self, file: &MetaDfsFile, pageid: u64) -> Result<Vec<u8>, MetaError> {
        self.read_page_at(file, self.pages.page_address(pageid))
    }

    /// Deletes the highest-numbered block. Returns the new block count.
    pub fn remove_last_block(&self, file: &MetaDfsFile) -> Result<u64, MetaError> {
        let count = self.block_count(file);
        if count == 0 {
            return Err(self.out_of_range(file, 0));
        }
        self.dfs.delete_file(&file.constituent(count - 1))?;
        self.bump(file, |s| s.block_deletes += 1);
        Ok(count - 1)
    }

    /// Deletes every block with ordinal `>= block_id`, highest first.
    pub fn truncate_from(&self, file: &MetaDfsFile, block_id: u64) -> Result<(), MetaError> {
        let count = self.block_count(file);
        if block_id > count {
            return Err(MetaError::OutOfRange {
                name: file.name.clone(),
                block_id,
                block_count: count,
            });
        }
        for _ in block_id..count {
            self.remove_last_block(file)?;
        }
        Ok(())
    }

    pub fn delete_meta(&self, file: &MetaDfsFile) -> Result<(), MetaError> {
        if !self.dfs.meta_registered(&file.name) {
            return Err(MetaError::NotFound(file.name.clone()));
        }
        self.truncate_from(file, 0)?;
        self.dfs.unregister_meta(&file.name)?;
        Ok(())
    }

    /// Meta DFS File Table rows for every constituent of `file`.
    pub fn table(&self, file: &MetaDfsFile) -> Result<Vec<MetaDfsFileTableEntry>, MetaError> {
        (0..self.block_count(file))
            .map(|block_id| {
                let entry = self.dfs.file_entry(&file.constituent(block_id))?;
                Ok(MetaDfsFileTableEntry {
                    num_replicas: entry.block_locations.first().map_or(0, Vec::len),
                    dfs_file_name: entry.name,
                    file_size: entry.size_bytes,
                    num_blocks: entry.num_blocks,
                    block_positions: entry.block_locations,
                })
            })
            .collect()
    }
}
