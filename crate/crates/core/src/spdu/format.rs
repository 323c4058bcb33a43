//! Bit-exact on-storage records of the recovery layer. All integers are
//! little-endian; checksums are XXH3-64.
//!
//! ```text
//! master page (first page of the log)
//!   0..8    magic "MDFSLOG1"
//!   8       commit_flag (0 | 1)
//!   9..17   log length recorded when the flag was set (pages or blocks)
//!   17..25  checksum of bytes 0..17
//!
//! log block footer (last page of every log data block)
//!   0..4    page_count
//!   4       commit_complete (0 | 1)
//!   5..13   checksum of page_count ‖ commit_complete ‖ pageids
//!   13..    page_count × u64 pageid, in slot order
//!
//! baseline log page header (16 bytes before each logged page image)
//!   0..8    pageid
//!   8..12   sequence number
//!   12..16  low 32 bits of the checksum of bytes 0..12 ‖ page image
//! ```

use xxhash_rust::xxh3::{xxh3_64, Xxh3};

use super::SpduError;

const MASTER_MAGIC: &[u8; 8] = b"MDFSLOG1";
pub const MASTER_BYTES: usize = 25;
pub const FOOTER_FIXED_BYTES: usize = 13;
pub const LOG_PAGE_HEADER_BYTES: usize = 16;

fn u64_at(buf: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(buf[at..at + 8].try_into().unwrap())
}

fn u32_at(buf: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(buf[at..at + 4].try_into().unwrap())
}

fn flag(byte: u8, what: &'static str) -> Result<bool, SpduError> {
    match byte {
        0 => Ok(false),
        1 => Ok(true),
        other => Err(SpduError::Corrupt {
            what,
            detail: format!("flag byte {other:#x}"),
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MasterPage {
    pub commit_flag: bool,
    /// Log length captured together with the flag; restart uses it to tell a
    /// completed-but-untruncated post-commit from one that must be redone.
    pub log_len: u64,
}

impl MasterPage {
    pub fn encode_into(&self, page: &mut [u8]) {
        page[..MASTER_BYTES].fill(0);
        page[0..8].copy_from_slice(MASTER_MAGIC);
        page[8] = u8::from(self.commit_flag);
        page[9..17].copy_from_slice(&self.log_len.to_le_bytes());
        let sum = xxh3_64(&page[0..17]);
        page[17..25].copy_from_slice(&sum.to_le_bytes());
    }

    pub fn decode(page: &[u8]) -> Result<Self, SpduError> {
        if page.len() < MASTER_BYTES || &page[0..8] != MASTER_MAGIC {
            return Err(SpduError::Corrupt {
                what: "master page",
                detail: "bad magic".into(),
            });
        }
        if xxh3_64(&page[0..17]) != u64_at(page, 17) {
            return Err(SpduError::Corrupt {
                what: "master page",
                detail: "checksum mismatch".into(),
            });
        }
        Ok(Self {
            commit_flag: flag(page[8], "master page")?,
            log_len: u64_at(page, 9),
        })
    }
}

/// Page list and commit marker stored in the last page of each log block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogBlockFooter {
    pub pageids: Vec<u64>,
    pub commit_complete: bool,
}

impl LogBlockFooter {
    /// Largest page list a footer page of `page_size` bytes can hold.
    pub fn capacity(page_size: usize) -> usize {
        page_size.saturating_sub(FOOTER_FIXED_BYTES) / 8
    }

    fn checksum(count: u32, commit_complete: bool, ids: &[u8]) -> u64 {
        let mut h = Xxh3::new();
        h.update(&count.to_le_bytes());
        h.update(&[u8::from(commit_complete)]);
        h.update(ids);
        h.digest()
    }

    pub fn encode_into(&self, page: &mut [u8]) {
        assert!(self.pageids.len() <= Self::capacity(page.len()), "footer overflow");
        page.fill(0);
        let count = self.pageids.len() as u32;
        page[0..4].copy_from_slice(&count.to_le_bytes());
        page[4] = u8::from(self.commit_complete);
        let ids_end = FOOTER_FIXED_BYTES + 8 * self.pageids.len();
        for (i, id) in self.pageids.iter().enumerate() {
            let at = FOOTER_FIXED_BYTES + 8 * i;
            page[at..at + 8].copy_from_slice(&id.to_le_bytes());
        }
        let sum = Self::checksum(count, self.commit_complete, &page[FOOTER_FIXED_BYTES..ids_end]);
        page[5..13].copy_from_slice(&sum.to_le_bytes());
    }

    pub fn decode(page: &[u8], max_pages: usize) -> Result<Self, SpduError> {
        let corrupt = |detail: String| SpduError::Corrupt {
            what: "log block footer",
            detail,
        };
        let count = u32_at(page, 0);
        if count as usize > max_pages {
            return Err(corrupt(format!("page_count {count} exceeds {max_pages}")));
        }
        let commit_complete = flag(page[4], "log block footer")?;
        let ids_end = FOOTER_FIXED_BYTES + 8 * count as usize;
        let expected = Self::checksum(count, commit_complete, &page[FOOTER_FIXED_BYTES..ids_end]);
        if expected != u64_at(page, 5) {
            return Err(corrupt("checksum mismatch".into()));
        }
        let pageids = (0..count as usize)
            .map(|i| u64_at(page, FOOTER_FIXED_BYTES + 8 * i))
            .collect();
        Ok(Self {
            pageids,
            commit_complete,
        })
    }
}

/// Header prefixed to each page image in the baseline log file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LogPageHeader {
    pub pageid: u64,
    pub sequence: u32,
}

impl LogPageHeader {
    fn checksum(head: &[u8], image: &[u8]) -> u32 {
        let mut h = Xxh3::new();
        h.update(head);
        h.update(image);
        h.digest() as u32
    }

    /// Builds a log slot: header followed by the page image.
    pub fn seal(&self, image: &[u8]) -> Vec<u8> {
        let mut slot = Vec::with_capacity(LOG_PAGE_HEADER_BYTES + image.len());
        slot.extend_from_slice(&self.pageid.to_le_bytes());
        slot.extend_from_slice(&self.sequence.to_le_bytes());
        let sum = Self::checksum(&slot, image);
        slot.extend_from_slice(&sum.to_le_bytes());
        slot.extend_from_slice(image);
        slot
    }

    /// Splits and verifies a log slot.
    pub fn open(slot: &[u8]) -> Result<(Self, &[u8]), SpduError> {
        let (head, image) = slot.split_at(LOG_PAGE_HEADER_BYTES);
        if Self::checksum(&head[..12], image) != u32_at(head, 12) {
            return Err(SpduError::Corrupt {
                what: "log page",
                detail: format!("checksum mismatch for pageid {}", u64_at(head, 0)),
            });
        }
        Ok((
            Self {
                pageid: u64_at(head, 0),
                sequence: u32_at(head, 8),
            },
            image,
        ))
    }
}
