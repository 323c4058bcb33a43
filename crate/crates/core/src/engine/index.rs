//! Secondary index on sourceIP as sorted immutable segments.
//!
//! A segment is a run of pages holding 24-byte entries in (key, rid) order:
//! key zero-padded to 16 bytes, pageid u32, slot u16, two bytes of padding.
//! Lookups binary-search each segment by page, then read forward.

use super::catalog::Segment;
use super::record::SOURCE_IP_MAX;
use super::slotted::Rid;
use super::EngineError;

pub const ENTRY_BYTES: usize = 24;

pub type Key = [u8; SOURCE_IP_MAX];

pub fn key_of(source_ip: &str) -> Key {
    let mut k = [0u8; SOURCE_IP_MAX];
    let b = source_ip.as_bytes();
    k[..b.len()].copy_from_slice(b);
    k
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IndexEntry {
    pub key: Key,
    pub rid: Rid,
}

pub fn entries_per_page(page_size: usize) -> usize {
    page_size / ENTRY_BYTES
}

pub fn pages_for(entries: usize, page_size: usize) -> u64 {
    entries.div_ceil(entries_per_page(page_size)) as u64
}

/// Lays sorted entries out over pages.
pub fn encode_pages(entries: &[IndexEntry], page_size: usize) -> Vec<Vec<u8>> {
    entries
        .chunks(entries_per_page(page_size))
        .map(|chunk| {
            let mut page = vec![0u8; page_size];
            for (i, e) in chunk.iter().enumerate() {
                let at = i * ENTRY_BYTES;
                page[at..at + 16].copy_from_slice(&e.key);
                page[at + 16..at + 20].copy_from_slice(&e.rid.pageid.to_le_bytes());
                page[at + 20..at + 22].copy_from_slice(&e.rid.slot.to_le_bytes());
            }
            page
        })
        .collect()
}

fn entry_at(page: &[u8], i: usize) -> IndexEntry {
    let at = i * ENTRY_BYTES;
    IndexEntry {
        key: page[at..at + 16].try_into().unwrap(),
        rid: Rid {
            pageid: u32::from_le_bytes(page[at + 16..at + 20].try_into().unwrap()),
            slot: u16::from_le_bytes(page[at + 20..at + 22].try_into().unwrap()),
        },
    }
}

fn count_on_page(seg: &Segment, page: u64, page_size: usize) -> usize {
    let per = entries_per_page(page_size) as u64;
    (seg.entries - page * per).min(per) as usize
}

/// Rids stored under `key`, in rid order.
pub fn search<F>(seg: &Segment, key: &Key, page_size: usize, mut fetch: F) -> Result<Vec<Rid>, EngineError>
where
    F: FnMut(u64) -> Result<Vec<u8>, EngineError>,
{
    // First page whose last key is >= key.
    let (mut lo, mut hi) = (0, seg.pages);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        let page = fetch(seg.start + mid)?;
        let last = entry_at(&page, count_on_page(seg, mid, page_size) - 1);
        if last.key < *key {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    let mut rids = Vec::new();
    for p in lo..seg.pages {
        let page = fetch(seg.start + p)?;
        for i in 0..count_on_page(seg, p, page_size) {
            let e = entry_at(&page, i);
            if e.key > *key {
                return Ok(rids);
            }
            if e.key == *key {
                rids.push(e.rid);
            }
        }
    }
    Ok(rids)
}

pub fn read_all<F>(seg: &Segment, page_size: usize, mut fetch: F) -> Result<Vec<IndexEntry>, EngineError>
where
    F: FnMut(u64) -> Result<Vec<u8>, EngineError>,
{
    let mut out = Vec::with_capacity(seg.entries as usize);
    for p in 0..seg.pages {
        let page = fetch(seg.start + p)?;
        out.extend((0..count_on_page(seg, p, page_size)).map(|i| entry_at(&page, i)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn entry(key: &str, pageid: u32, slot: u16) -> IndexEntry {
        IndexEntry {
            key: key_of(key),
            rid: Rid { pageid, slot },
        }
    }

    fn store(entries: &[IndexEntry], page_size: usize, start: u64) -> (Segment, HashMap<u64, Vec<u8>>) {
        let pages = encode_pages(entries, page_size);
        let seg = Segment {
            start,
            pages: pages.len() as u64,
            entries: entries.len() as u64,
        };
        let map = pages
            .into_iter()
            .enumerate()
            .map(|(i, p)| (start + i as u64, p))
            .collect();
        (seg, map)
    }

    #[test]
    fn entry_layout() {
        let pages = encode_pages(&[entry("1.2.3.4", 7, 3)], 48);
        assert_eq!(&pages[0][..7], b"1.2.3.4");
        assert_eq!(&pages[0][16..20], &7u32.to_le_bytes());
        assert_eq!(&pages[0][20..22], &3u16.to_le_bytes());
    }

    #[test]
    fn search_spans_pages() {
        // Two entries per page so a key run crosses page boundaries.
        let mut entries: Vec<IndexEntry> = (0..9).map(|i| entry("b", 10 + i, 0)).collect();
        entries.insert(0, entry("a", 1, 0));
        entries.push(entry("c", 2, 0));
        entries.sort();
        let (seg, map) = store(&entries, 48, 100);
        let mut reads = 0;
        let rids = search(&seg, &key_of("b"), 48, |p| {
            reads += 1;
            Ok(map[&p].clone())
        })
        .unwrap();
        assert_eq!(rids.len(), 9);
        assert!(rids.windows(2).all(|w| w[0] < w[1]));
        assert!(reads <= 3 + 6);
        for absent in ["0", "bb", "d"] {
            assert!(search(&seg, &key_of(absent), 48, |p| Ok(map[&p].clone()))
                .unwrap()
                .is_empty());
        }
        assert_eq!(read_all(&seg, 48, |p| Ok(map[&p].clone())).unwrap(), entries);
    }
}
