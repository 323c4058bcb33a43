//! Page 0 of the data file: heap extent, record count, index segments and
//! free space of the index area.
//!
//! The heap grows upwards from page 1; index segments are allocated
//! downwards from the top of the file, reusing freed extents first.
//!
//! ```text
//! 0..8    magic "UVCATLG1"
//! 8..16   heap_end (heap pages are 1..heap_end)
//! 16..24  record_count
//! 24..32  index_floor (lowest page owned by the index area)
//! 32..36  segment count S
//! 36..40  free extent count F
//! 40..    S × (start u64, pages u64, entries u64), then F × (start u64, len u64)
//! ```

use super::EngineError;

const MAGIC: &[u8; 8] = b"UVCATLG1";
const FIXED: usize = 40;
const SEGMENT_BYTES: usize = 24;
const EXTENT_BYTES: usize = 16;
pub const HEAP_START: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: u64,
    pub pages: u64,
    pub entries: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Catalog {
    pub heap_end: u64,
    pub record_count: u64,
    pub index_floor: u64,
    pub segments: Vec<Segment>,
    /// Free extents inside the index area, sorted and coalesced.
    pub free: Vec<(u64, u64)>,
}

fn u64_at(p: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(p[at..at + 8].try_into().unwrap())
}

fn u32_at(p: &[u8], at: usize) -> usize {
    u32::from_le_bytes(p[at..at + 4].try_into().unwrap()) as usize
}

impl Catalog {
    pub fn fresh(total_pages: u64) -> Self {
        Self {
            heap_end: HEAP_START,
            record_count: 0,
            index_floor: total_pages,
            segments: Vec::new(),
            free: Vec::new(),
        }
    }

    pub fn is_formatted(page: &[u8]) -> bool {
        &page[..8] == MAGIC
    }

    pub fn decode(page: &[u8]) -> Result<Self, EngineError> {
        if !Self::is_formatted(page) {
            return Err(EngineError::Corrupt("catalog magic".into()));
        }
        let (s, f) = (u32_at(page, 32), u32_at(page, 36));
        if FIXED + s * SEGMENT_BYTES + f * EXTENT_BYTES > page.len() {
            return Err(EngineError::Corrupt(format!("catalog lists {s} segments, {f} extents")));
        }
        let segments = (0..s)
            .map(|i| {
                let at = FIXED + i * SEGMENT_BYTES;
                Segment {
                    start: u64_at(page, at),
                    pages: u64_at(page, at + 8),
                    entries: u64_at(page, at + 16),
                }
            })
            .collect();
        let base = FIXED + s * SEGMENT_BYTES;
        let free = (0..f)
            .map(|i| {
                (
                    u64_at(page, base + i * EXTENT_BYTES),
                    u64_at(page, base + i * EXTENT_BYTES + 8),
                )
            })
            .collect();
        Ok(Self {
            heap_end: u64_at(page, 8),
            record_count: u64_at(page, 16),
            index_floor: u64_at(page, 24),
            segments,
            free,
        })
    }

    pub fn encode(&self, page_size: usize) -> Result<Vec<u8>, EngineError> {
        let need = FIXED + self.segments.len() * SEGMENT_BYTES + self.free.len() * EXTENT_BYTES;
        if need > page_size {
            return Err(EngineError::DatabaseFull("catalog page overflow".into()));
        }
        let mut page = vec![0u8; page_size];
        page[..8].copy_from_slice(MAGIC);
        page[8..16].copy_from_slice(&self.heap_end.to_le_bytes());
        page[16..24].copy_from_slice(&self.record_count.to_le_bytes());
        page[24..32].copy_from_slice(&self.index_floor.to_le_bytes());
        page[32..36].copy_from_slice(&(self.segments.len() as u32).to_le_bytes());
        page[36..40].copy_from_slice(&(self.free.len() as u32).to_le_bytes());
        let mut at = FIXED;
        for s in &self.segments {
            for v in [s.start, s.pages, s.entries] {
                page[at..at + 8].copy_from_slice(&v.to_le_bytes());
                at += 8;
            }
        }
        for &(start, len) in &self.free {
            page[at..at + 8].copy_from_slice(&start.to_le_bytes());
            page[at + 8..at + 16].copy_from_slice(&len.to_le_bytes());
            at += 16;
        }
        Ok(page)
    }

    /// Claims the next heap page.
    pub fn grow_heap(&mut self) -> Result<u64, EngineError> {
        if self.heap_end >= self.index_floor {
            return Err(EngineError::DatabaseFull(format!(
                "heap reached the index area at page {}",
                self.index_floor
            )));
        }
        self.heap_end += 1;
        Ok(self.heap_end - 1)
    }

    /// Allocates `pages` contiguous index pages.
    pub fn allocate(&mut self, pages: u64) -> Result<u64, EngineError> {
        if let Some(i) = self.free.iter().position(|&(_, len)| len >= pages) {
            let (start, len) = self.free[i];
            if len == pages {
                self.free.remove(i);
            } else {
                self.free[i] = (start + pages, len - pages);
            }
            return Ok(start);
        }
        if self.index_floor < self.heap_end + pages {
            return Err(EngineError::DatabaseFull(format!(
                "no room for a {pages}-page index segment"
            )));
        }
        self.index_floor -= pages;
        Ok(self.index_floor)
    }

    pub fn release(&mut self, start: u64, pages: u64) {
        self.free.push((start, pages));
        self.free.sort_unstable();
        let mut merged: Vec<(u64, u64)> = Vec::with_capacity(self.free.len());
        for &(s, l) in &self.free {
            match merged.last_mut() {
                Some(last) if last.0 + last.1 == s => last.1 += l,
                _ => merged.push((s, l)),
            }
        }
        if let Some(&(s, l)) = merged.first() {
            if s == self.index_floor {
                self.index_floor += l;
                merged.remove(0);
            }
        }
        self.free = merged;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut c = Catalog::fresh(100);
        c.heap_end = 7;
        c.record_count = 123;
        c.segments.push(Segment {
            start: 90,
            pages: 10,
            entries: 1700,
        });
        c.free.push((80, 5));
        let page = c.encode(4096).unwrap();
        assert!(Catalog::is_formatted(&page));
        assert_eq!(Catalog::decode(&page).unwrap(), c);
        assert!(!Catalog::is_formatted(&[0u8; 64]));
    }

    #[test]
    fn allocation_and_release() {
        let mut c = Catalog::fresh(20);
        assert_eq!(c.allocate(4).unwrap(), 16);
        assert_eq!(c.allocate(4).unwrap(), 12);
        c.release(16, 4);
        assert_eq!(c.free, vec![(16, 4)]);
        assert_eq!(c.allocate(2).unwrap(), 16);
        c.release(12, 4);
        assert_eq!(c.index_floor, 16);
        assert_eq!(c.free, vec![(18, 2)]);
        c.release(16, 2);
        assert_eq!(c.index_floor, 20);
        assert!(c.free.is_empty());
        c.heap_end = 17;
        assert!(matches!(c.allocate(4), Err(EngineError::DatabaseFull(_))));
        assert_eq!(c.grow_heap().unwrap(), 17);
        c.grow_heap().unwrap();
        c.grow_heap().unwrap();
        assert!(c.grow_heap().is_err());
    }
}
