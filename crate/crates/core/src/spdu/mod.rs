//! Shadow-page deferred-update recovery.
//!
//! Two implementations share the [`RecoverablePages`] interface:
//!
//! - [`SpduCore`] is the baseline method over flat page files: every update
//!   goes to a separate log file, a log table index redirects reads to the
//!   newest logged copy, and commit copies logged pages back to their home
//!   positions under a durable `commit_flag`.
//! - [`SpduDfs`] runs the same idea over meta DFS files, with a one-block
//!   update buffer, block-granular post-commit, deferred post-commit across
//!   transactions and footer-based index reconstruction.
//!
//! Both are single-writer: callers hold the database write lock for every
//! mutating call.

mod core;
mod dfs;
mod format;
mod page_file;

use thiserror::Error;

use crate::fault::InjectedCrash;
use crate::meta::MetaError;

pub use self::core::{LogTableIndex, SpduCore};
pub use self::dfs::{BlockUpdateBuffer, DfsLogTableIndex, LogSlot, SpduDfs, SpduDfsConfig, SpduDfsStats};
pub use self::format::{LogBlockFooter, MasterPage, FOOTER_FIXED_BYTES, LOG_PAGE_HEADER_BYTES};
pub use self::page_file::{PageFile, PageFileStats};

#[derive(Debug, Error)]
pub enum SpduError {
    #[error(transparent)]
    Crash(#[from] InjectedCrash),
    #[error(transparent)]
    Meta(#[from] MetaError),
    #[error("page {pageid} outside database of {num_pages} pages")]
    OutOfRange { pageid: u64, num_pages: u64 },
    #[error("page image is {got} bytes, expected {expected}")]
    WrongPageSize { expected: usize, got: usize },
    #[error("corrupt {what}: {detail}")]
    Corrupt { what: &'static str, detail: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl SpduError {
    pub fn is_crash(&self) -> bool {
        matches!(self, SpduError::Crash(_))
    }
}

/// What `restart_system` found and did.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct RecoveryReport {
    /// `commit_flag` was set: post-commit processing was re-run to completion.
    pub redo: bool,
    /// Uncommitted log blocks (or pages) discarded.
    pub rolled_back: u64,
    /// Committed log blocks kept for later post-commit.
    pub retained: u64,
}

impl RecoveryReport {
    /// `"redo"`, `"rollback"` or `"clean"`.
    pub fn path(&self) -> &'static str {
        if self.redo || (self.rolled_back == 0 && self.retained > 0) {
            "redo"
        } else if self.rolled_back > 0 {
            "rollback"
        } else {
            "clean"
        }
    }
}

/// A transactional page array with deferred updates.
pub trait RecoverablePages {
    fn page_size(&self) -> usize;
    fn num_pages(&self) -> u64;
    fn read_page(&mut self, pageid: u64) -> Result<Vec<u8>, SpduError>;
    fn write_page(&mut self, pageid: u64, page: &[u8]) -> Result<(), SpduError>;
    fn commit_transaction(&mut self) -> Result<(), SpduError>;
    fn abort_transaction(&mut self) -> Result<(), SpduError>;
}

fn check_page(pageid: u64, page: &[u8], page_size: usize, num_pages: u64) -> Result<(), SpduError> {
    if pageid >= num_pages {
        return Err(SpduError::OutOfRange { pageid, num_pages });
    }
    if page.len() != page_size {
        return Err(SpduError::WrongPageSize {
            expected: page_size,
            got: page.len(),
        });
    }
    Ok(())
}
