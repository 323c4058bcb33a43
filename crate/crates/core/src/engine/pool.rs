use std::collections::HashMap;

#[derive(Debug)]
struct Frame {
    data: Vec<u8>,
    dirty: bool,
    last_used: u64,
}

/// Per-session LRU page cache. Dirty frames are handed back on eviction so
/// the caller can write them through the recovery layer.
#[derive(Debug)]
pub struct BufferPool {
    capacity: usize,
    frames: HashMap<u64, Frame>,
    clock: u64,
}

impl BufferPool {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            frames: HashMap::new(),
            clock: 0,
        }
    }

    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    pub fn get(&mut self, pageid: u64) -> Option<&[u8]> {
        let now = self.tick();
        self.frames.get_mut(&pageid).map(|f| {
            f.last_used = now;
            &f.data[..]
        })
    }

    pub fn get_mut(&mut self, pageid: u64) -> Option<&mut Vec<u8>> {
        let now = self.tick();
        self.frames.get_mut(&pageid).map(|f| {
            f.last_used = now;
            f.dirty = true;
            &mut f.data
        })
    }

    /// Caches a page, returning an evicted dirty page if one had to go.
    pub fn insert(&mut self, pageid: u64, data: Vec<u8>, dirty: bool) -> Option<(u64, Vec<u8>)> {
        let now = self.tick();
        let mut evicted = None;
        if !self.frames.contains_key(&pageid) && self.frames.len() >= self.capacity {
            let victim = self
                .frames
                .iter()
                .min_by_key(|(_, f)| f.last_used)
                .map(|(&id, _)| id)
                .unwrap();
            let f = self.frames.remove(&victim).unwrap();
            if f.dirty {
                evicted = Some((victim, f.data));
            }
        }
        self.frames.insert(
            pageid,
            Frame {
                data,
                dirty,
                last_used: now,
            },
        );
        evicted
    }

    /// Dirty pages in pageid order; they stay cached, now clean.
    pub fn take_dirty(&mut self) -> Vec<(u64, Vec<u8>)> {
        let mut out: Vec<(u64, Vec<u8>)> = self
            .frames
            .iter_mut()
            .filter(|(_, f)| f.dirty)
            .map(|(&id, f)| {
                f.dirty = false;
                (id, f.data.clone())
            })
            .collect();
        out.sort_unstable_by_key(|(id, _)| *id);
        out
    }

    pub fn remove(&mut self, pageid: u64) {
        self.frames.remove(&pageid);
    }

    pub fn clear(&mut self) {
        self.frames.clear();
    }

    #[cfg(test)]
    fn len(&self) -> usize {
        self.frames.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evicts_least_recent_and_returns_dirty() {
        let mut pool = BufferPool::new(2);
        assert!(pool.insert(1, vec![1], true).is_none());
        assert!(pool.insert(2, vec![2], false).is_none());
        pool.get(1);
        assert!(pool.insert(3, vec![3], false).is_none());
        assert!(pool.get(2).is_none());
        pool.get(3);
        assert_eq!(pool.insert(4, vec![4], false), Some((1, vec![1])));
    }

    #[test]
    fn take_dirty_is_sorted_and_cleans() {
        let mut pool = BufferPool::new(8);
        pool.insert(9, vec![9], true);
        pool.insert(2, vec![2], false);
        pool.get_mut(2).unwrap()[0] = 20;
        assert_eq!(pool.take_dirty(), vec![(2, vec![20]), (9, vec![9])]);
        assert!(pool.take_dirty().is_empty());
        assert_eq!(pool.len(), 2);
    }
}
