use std::collections::BTreeSet;
use std::sync::{Arc, Mutex};

/// A flat array of fixed-size pages with an explicit durability barrier.
///
/// Writes land in a volatile image; [`sync`](Self::sync) makes the volatile
/// image durable and [`crash`](Self::crash) throws away everything written
/// since the last sync. The handle is shared: clones see the same file, so a
/// test can keep one clone across a simulated process crash.
#[derive(Debug, Clone)]
pub struct PageFile {
    inner: Arc<Mutex<Inner>>,
}

#[derive(Debug)]
struct Inner {
    page_size: usize,
    durable: Vec<Vec<u8>>,
    current: Vec<Vec<u8>>,
    dirty: BTreeSet<usize>,
    stats: PageFileStats,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PageFileStats {
    pub reads: u64,
    pub writes: u64,
    pub syncs: u64,
}

impl PageFile {
    pub fn new(page_size: usize) -> Self {
        Self {
            inner: Arc::new(Mutex::new(Inner {
                page_size,
                durable: Vec::new(),
                current: Vec::new(),
                dirty: BTreeSet::new(),
                stats: PageFileStats::default(),
            })),
        }
    }

    pub fn page_size(&self) -> usize {
        self.inner.lock().unwrap().page_size
    }

    /// Current (volatile) length in pages.
    pub fn len(&self) -> u64 {
        self.inner.lock().unwrap().current.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn read(&self, index: u64) -> Option<Vec<u8>> {
        let mut inner = self.inner.lock().unwrap();
        inner.stats.reads += 1;
        inner.current.get(index as usize).cloned()
    }

    /// Overwrites page `index`, or appends when `index == len()`.
    ///
    /// # Panics
    ///
    /// Panics on a gap (`index > len()`) or a wrong-sized page.
    pub fn write(&self, index: u64, page: &[u8]) {
        let mut inner = self.inner.lock().unwrap();
        assert_eq!(page.len(), inner.page_size, "page size mismatch");
        let index = index as usize;
        match index.cmp(&inner.current.len()) {
            std::cmp::Ordering::Less => inner.current[index].copy_from_slice(page),
            std::cmp::Ordering::Equal => inner.current.push(page.to_vec()),
            std::cmp::Ordering::Greater => panic!("write at {index} leaves a gap"),
        }
        inner.dirty.insert(index);
        inner.stats.writes += 1;
    }

    pub fn truncate(&self, len: u64) {
        let mut inner = self.inner.lock().unwrap();
        inner.current.truncate(len as usize);
        inner.dirty.retain(|i| *i < len as usize);
    }

    /// Durability barrier.
    pub fn sync(&self) {
        let mut inner = self.inner.lock().unwrap();
        let Inner {
            durable,
            current,
            dirty,
            stats,
            ..
        } = &mut *inner;
        durable.truncate(current.len());
        for &i in dirty.iter() {
            if i < durable.len() {
                durable[i].copy_from_slice(&current[i]);
            } else {
                debug_assert_eq!(i, durable.len());
                durable.push(current[i].clone());
            }
        }
        dirty.clear();
        stats.syncs += 1;
    }

    /// Simulated power loss: forget unsynced writes.
    pub fn crash(&self) {
        let mut inner = self.inner.lock().unwrap();
        let Inner {
            durable,
            current,
            dirty,
            ..
        } = &mut *inner;
        current.truncate(durable.len());
        for (i, page) in durable.iter().enumerate() {
            if i < current.len() {
                current[i].copy_from_slice(page);
            } else {
                current.push(page.clone());
            }
        }
        dirty.clear();
    }

    /// Durable contents, page by page.
    pub fn durable_image(&self) -> Vec<Vec<u8>> {
        self.inner.lock().unwrap().durable.clone()
    }

    pub fn stats(&self) -> PageFileStats {
        self.inner.lock().unwrap().stats
    }
}
