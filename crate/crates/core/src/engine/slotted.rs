//! Slotted heap pages.
//!
//! ```text
//! 0..2    slot count
//! 2..4    start of the payload area (0 stands for the page size)
//! 4..     slot directory, 4 bytes per slot: payload offset u16, length u16
//! ...     free space
//! ...end  payloads, growing downwards
//! ```
//!
//! An all-zero page is a valid empty page. Every payload starts with a kind
//! byte, see [`Cell`].

use super::EngineError;

const HEADER: usize = 4;
const SLOT: usize = 4;

const KIND_RECORD: u8 = 0;
const KIND_STUB: u8 = 1;
const KIND_MOVED: u8 = 2;
const KIND_DEAD: u8 = 3;

/// Record id: heap page and slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
pub struct Rid {
    pub pageid: u32,
    pub slot: u16,
}

/// Decoded slot payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Cell<'a> {
    /// A record stored at its home slot.
    Record(&'a [u8]),
    /// Home slot of a record that moved; points at its current slot.
    Stub(Rid),
    /// A record living away from its home slot.
    Moved {
        home: Rid,
        record: &'a [u8],
    },
    Dead,
}

impl Cell<'_> {
    pub fn encode(&self) -> Vec<u8> {
        match self {
            Cell::Record(r) => [&[KIND_RECORD][..], r].concat(),
            Cell::Stub(to) => {
                let mut v = vec![KIND_STUB];
                v.extend_from_slice(&to.pageid.to_le_bytes());
                v.extend_from_slice(&to.slot.to_le_bytes());
                v
            }
            Cell::Moved { home, record } => {
                let mut v = vec![KIND_MOVED];
                v.extend_from_slice(&home.pageid.to_le_bytes());
                v.extend_from_slice(&home.slot.to_le_bytes());
                v.extend_from_slice(record);
                v
            }
            Cell::Dead => vec![KIND_DEAD],
        }
    }
}

fn rid_at(b: &[u8]) -> Result<Rid, EngineError> {
    if b.len() < 6 {
        return Err(EngineError::Corrupt("short record pointer".into()));
    }
    Ok(Rid {
        pageid: u32::from_le_bytes(b[0..4].try_into().unwrap()),
        slot: u16::from_le_bytes(b[4..6].try_into().unwrap()),
    })
}

fn u16_at(page: &[u8], at: usize) -> usize {
    u16::from_le_bytes([page[at], page[at + 1]]) as usize
}

fn set_u16(page: &mut [u8], at: usize, v: usize) {
    page[at..at + 2].copy_from_slice(&(v as u16).to_le_bytes());
}

pub fn slot_count(page: &[u8]) -> usize {
    u16_at(page, 0)
}

fn free_end(page: &[u8]) -> usize {
    match u16_at(page, 2) {
        0 => page.len(),
        v => v,
    }
}

fn set_free_end(page: &mut [u8], v: usize) {
    set_u16(page, 2, if v == page.len() { 0 } else { v });
}

fn slot_entry(page: &[u8], slot: usize) -> (usize, usize) {
    let at = HEADER + SLOT * slot;
    (u16_at(page, at), u16_at(page, at + 2))
}

fn set_slot_entry(page: &mut [u8], slot: usize, offset: usize, len: usize) {
    let at = HEADER + SLOT * slot;
    set_u16(page, at, offset);
    set_u16(page, at + 2, len);
}

/// Largest payload an empty page accepts.
pub fn max_payload(page_size: usize) -> usize {
    page_size - HEADER - SLOT
}

fn contiguous_free(page: &[u8]) -> usize {
    free_end(page) - (HEADER + SLOT * slot_count(page))
}

fn live_bytes(page: &[u8]) -> usize {
    (0..slot_count(page)).map(|s| slot_entry(page, s).1).sum()
}

/// Free bytes after compaction.
pub fn free_space(page: &[u8]) -> usize {
    page.len() - HEADER - SLOT * slot_count(page) - live_bytes(page)
}

/// Raw payload of `slot`.
pub fn payload(page: &[u8], slot: u16) -> Result<&[u8], EngineError> {
    let slot = slot as usize;
    if slot >= slot_count(page) {
        return Err(EngineError::Corrupt(format!("slot {slot} beyond {}", slot_count(page))));
    }
    let (offset, len) = slot_entry(page, slot);
    page.get(offset..offset + len)
        .filter(|p| !p.is_empty())
        .ok_or_else(|| EngineError::Corrupt(format!("slot {slot} payload {offset}+{len}")))
}

pub fn cell(page: &[u8], slot: u16) -> Result<Cell<'_>, EngineError> {
    let p = payload(page, slot)?;
    match p[0] {
        KIND_RECORD => Ok(Cell::Record(&p[1..])),
        KIND_STUB => Ok(Cell::Stub(rid_at(&p[1..])?)),
        KIND_MOVED => Ok(Cell::Moved {
            home: rid_at(&p[1..])?,
            record: p.get(7..).unwrap_or_default(),
        }),
        KIND_DEAD => Ok(Cell::Dead),
        k => Err(EngineError::Corrupt(format!("slot kind {k}"))),
    }
}

/// Rewrites payloads back to back at the end of the page.
pub fn compact(page: &mut [u8]) {
    let count = slot_count(page);
    let payloads: Vec<Vec<u8>> = (0..count)
        .map(|s| {
            let (o, l) = slot_entry(page, s);
            page[o..o + l].to_vec()
        })
        .collect();
    let mut end = page.len();
    for (s, p) in payloads.iter().enumerate() {
        end -= p.len();
        page[end..end + p.len()].copy_from_slice(p);
        set_slot_entry(page, s, end, p.len());
    }
    let dir_end = HEADER + SLOT * count;
    page[dir_end..end].fill(0);
    set_free_end(page, end);
}

/// Whether a payload of `len` bytes can be inserted.
pub fn fits(page: &[u8], len: usize) -> bool {
    free_space(page) >= len + SLOT
}

/// Adds a payload in a new slot, compacting if that makes room.
pub fn insert(page: &mut [u8], payload: &[u8]) -> Option<u16> {
    if !fits(page, payload.len()) {
        return None;
    }
    if contiguous_free(page) < payload.len() + SLOT {
        compact(page);
    }
    let slot = slot_count(page);
    let end = free_end(page) - payload.len();
    page[end..end + payload.len()].copy_from_slice(payload);
    set_u16(page, 0, slot + 1);
    set_slot_entry(page, slot, end, payload.len());
    set_free_end(page, end);
    Some(slot as u16)
}

/// Replaces the payload of an existing slot. Returns false when the page
/// cannot hold the new payload even after compaction.
pub fn replace(page: &mut [u8], slot: u16, payload: &[u8]) -> bool {
    let s = slot as usize;
    let (offset, len) = slot_entry(page, s);
    if payload.len() <= len {
        page[offset..offset + payload.len()].copy_from_slice(payload);
        set_slot_entry(page, s, offset, payload.len());
        return true;
    }
    if free_space(page) + len < payload.len() {
        return false;
    }
    set_slot_entry(page, s, 0, 0);
    if contiguous_free(page) < payload.len() {
        compact(page);
    }
    let end = free_end(page) - payload.len();
    page[end..end + payload.len()].copy_from_slice(payload);
    set_slot_entry(page, s, end, payload.len());
    set_free_end(page, end);
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_page_is_empty() {
        let page = vec![0u8; 256];
        assert_eq!(slot_count(&page), 0);
        assert_eq!(free_space(&page), 252);
        assert_eq!(max_payload(256), 248);
    }

    #[test]
    fn insert_and_read_back() {
        let mut page = vec![0u8; 128];
        let a = insert(&mut page, &Cell::Record(b"alpha").encode()).unwrap();
        let b = insert(&mut page, &Cell::Stub(Rid { pageid: 9, slot: 2 }).encode()).unwrap();
        assert_eq!((a, b), (0, 1));
        assert_eq!(cell(&page, 0).unwrap(), Cell::Record(b"alpha"));
        assert_eq!(cell(&page, 1).unwrap(), Cell::Stub(Rid { pageid: 9, slot: 2 }));
        assert!(cell(&page, 2).is_err());
    }

    #[test]
    fn full_page_refuses() {
        let mut page = vec![0u8; 64];
        assert!(insert(&mut page, &[0u8; 56]).is_some());
        assert!(insert(&mut page, &[0u8; 1]).is_none());
    }

    #[test]
    fn replace_grows_through_compaction() {
        let mut page = vec![0u8; 64];
        insert(&mut page, &[0, 1, 1, 1, 1, 1, 1, 1, 1, 1]).unwrap();
        insert(&mut page, &[0, 2, 2, 2, 2, 2, 2, 2, 2, 2]).unwrap();
        assert!(replace(&mut page, 0, &[0, 3]));
        // 64 - 4 - 8 - 2 - 10 = 40 free, fragmented behind slot 0
        assert!(replace(&mut page, 1, &[0; 30]));
        assert_eq!(payload(&page, 0).unwrap(), &[0, 3]);
        assert_eq!(payload(&page, 1).unwrap(), &[0; 30][..]);
        assert!(!replace(&mut page, 0, &[0; 50]));
    }

    proptest! {
        /// Payload contents survive any sequence of inserts, replacements and
        /// compactions, and slots never overlap.
        #[test]
        fn slots_stay_disjoint(ops in prop::collection::vec((any::<bool>(), 1usize..60, any::<u8>()), 1..80)) {
            let mut page = vec![0u8; 512];
            let mut model: Vec<Vec<u8>> = Vec::new();
            for (is_insert, len, fill) in ops {
                let p = vec![fill; len];
                if is_insert || model.is_empty() {
                    if let Some(s) = insert(&mut page, &p) {
                        prop_assert_eq!(s as usize, model.len());
                        model.push(p);
                    } else {
                        prop_assert!(free_space(&page) < len + SLOT);
                    }
                } else {
                    let s = fill as usize % model.len();
                    if replace(&mut page, s as u16, &p) {
                        model[s] = p;
                    }
                }
                let mut spans: Vec<(usize, usize)> = (0..slot_count(&page)).map(|s| slot_entry(&page, s)).collect();
                spans.sort();
                for w in spans.windows(2) {
                    prop_assert!(w[0].0 + w[0].1 <= w[1].0);
                }
                prop_assert!(spans.first().is_none_or(|s| s.0 >= HEADER + SLOT * model.len()));
                for (s, want) in model.iter().enumerate() {
                    prop_assert_eq!(payload(&page, s as u16).unwrap(), &want[..]);
                }
                let used: usize = model.iter().map(Vec::len).sum();
                prop_assert_eq!(free_space(&page), 512 - HEADER - SLOT * model.len() - used);
            }
        }
    }
}
