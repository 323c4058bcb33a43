//! Oracles and fixtures shared by the integration tests and the acceptance
//! harness. Nothing here calls into the code under test for the values it
//! predicts.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use metadfs::dfs::{Dfs, DfsConfig};
use metadfs::fault::FaultInjector;
use metadfs::meta::MetaDfs;
use metadfs::spdu::{PageFile, SpduCore, SpduDfs, SpduDfsConfig, LOG_PAGE_HEADER_BYTES};

pub const P: usize = 4096;
pub const B: usize = 64 * 1024;
pub const N: u64 = (B / P) as u64;

/// Committed and in-flight page images of one database; unwritten pages
/// read as zeros.
#[derive(Debug, Clone, Default)]
pub struct MapOracle {
    pub committed: BTreeMap<u64, Vec<u8>>,
    pub pending: BTreeMap<u64, Vec<u8>>,
    pub page_size: usize,
}

impl MapOracle {
    pub fn new(page_size: usize) -> Self {
        Self {
            page_size,
            ..Self::default()
        }
    }

    pub fn write(&mut self, pageid: u64, page: &[u8]) {
        self.pending.insert(pageid, page.to_vec());
    }

    pub fn read(&self, pageid: u64) -> Vec<u8> {
        self.pending
            .get(&pageid)
            .or_else(|| self.committed.get(&pageid))
            .cloned()
            .unwrap_or_else(|| vec![0; self.page_size])
    }

    pub fn read_committed(&self, pageid: u64) -> Vec<u8> {
        self.committed
            .get(&pageid)
            .cloned()
            .unwrap_or_else(|| vec![0; self.page_size])
    }

    pub fn commit(&mut self) {
        let pending = std::mem::take(&mut self.pending);
        self.committed.extend(pending);
    }

    pub fn abort(&mut self) {
        self.pending.clear();
    }

    /// The state a commit of the in-flight transaction would produce.
    pub fn post_commit_view(&self) -> MapOracle {
        let mut o = self.clone();
        o.commit();
        o
    }
}

/// A page whose bytes depend on every argument, so stale or misplaced
/// copies never compare equal by accident.
pub fn page_image(page_size: usize, pageid: u64, version: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(pageid.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ version);
    let mut page = vec![0u8; page_size];
    rng.fill(&mut page[..]);
    page[..8].copy_from_slice(&pageid.to_le_bytes());
    page[8..16].copy_from_slice(&version.to_le_bytes());
    page
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PageOp {
    Write(u64, u64),
    Read(u64),
    Commit,
    Abort,
}

/// A seeded mix of page operations. `commit_every` and `abort_every` are
/// mean transaction lengths in operations.
pub fn page_workload(seed: u64, ops: usize, num_pages: u64, commit_every: u32, abort_every: u32) -> Vec<PageOp> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut version = 0;
    (0..ops)
        .map(|_| {
            if rng.gen_ratio(1, commit_every) {
                PageOp::Commit
            } else if rng.gen_ratio(1, abort_every) {
                PageOp::Abort
            } else if rng.gen_bool(0.65) {
                version += 1;
                PageOp::Write(rng.gen_range(0..num_pages), version)
            } else {
                PageOp::Read(rng.gen_range(0..num_pages))
            }
        })
        .collect()
}

pub fn dfs(block_size: usize, replication: usize, datanodes: usize) -> Arc<Dfs> {
    Arc::new(
        Dfs::in_memory(DfsConfig {
            block_size,
            replication,
            datanodes,
            ..DfsConfig::default()
        })
        .unwrap(),
    )
}

pub fn meta(page_size: usize, block_size: usize) -> Arc<MetaDfs> {
    Arc::new(MetaDfs::new(dfs(block_size, 3, 5), page_size).unwrap())
}

pub const DATA: &str = "db/data";
pub const LOG: &str = "db/log";

/// Fresh database files plus one session over them.
pub fn spdu_dfs(num_pages: u64, config: SpduDfsConfig, faults: FaultInjector) -> (Arc<MetaDfs>, SpduDfs) {
    let meta = meta(P, B);
    SpduDfs::create_files(&meta, DATA, LOG, num_pages).unwrap();
    let s = SpduDfs::open(Arc::clone(&meta), DATA, LOG, config, faults).unwrap();
    (meta, s)
}

pub fn reopen(meta: &Arc<MetaDfs>, config: SpduDfsConfig, faults: FaultInjector) -> SpduDfs {
    SpduDfs::open(Arc::clone(meta), DATA, LOG, config, faults).unwrap()
}

/// Baseline database over two page files; the files are returned so a test
/// can crash them and reopen.
pub fn spdu_core(num_pages: u64, faults: FaultInjector) -> (PageFile, PageFile, SpduCore) {
    let data = PageFile::new(P);
    let log = PageFile::new(P + LOG_PAGE_HEADER_BYTES);
    let core = SpduCore::create(data.clone(), log.clone(), num_pages, faults).unwrap();
    (data, log, core)
}

/// Block and in-block offset of a page, computed by counting rather than
/// division.
pub struct CountingAddresses {
    block: u64,
    offset: u64,
    per_block: u64,
}

impl CountingAddresses {
    pub fn new(per_block: u64) -> Self {
        Self {
            block: 0,
            offset: 0,
            per_block,
        }
    }
}

impl Iterator for CountingAddresses {
    type Item = (u64, u64);

    fn next(&mut self) -> Option<(u64, u64)> {
        let here = (self.block, self.offset);
        self.offset += 1;
        if self.offset == self.per_block {
            self.offset = 0;
            self.block += 1;
        }
        Some(here)
    }
}
