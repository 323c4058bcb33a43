use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use bytes::Bytes;

use super::{encode_name, NodeId};

type BlockKey = (String, u64);

/// One storage node. Holds raw block bytes keyed by (file name, block ordinal).
///
/// In directory mode every block is written through to
/// `<root>/node_<id>/<encoded-name>.blk<ordinal>` and the in-memory map acts as
/// a cache that can be dropped for cold runs.
#[derive(Debug)]
pub(crate) struct DataNode {
    pub(crate) id: NodeId,
    alive: AtomicBool,
    blocks: Mutex<HashMap<BlockKey, Bytes>>,
    dir: Option<PathBuf>,
}

impl DataNode {
    pub(crate) fn new(id: NodeId, dir: Option<PathBuf>) -> io::Result<Self> {
        if let Some(dir) = &dir {
            fs::create_dir_all(dir)?;
        }
        Ok(Self {
            id,
            alive: AtomicBool::new(true),
            blocks: Mutex::new(HashMap::new()),
            dir,
        })
    }

    pub(crate) fn is_alive(&self) -> bool {
        self.alive.load(Ordering::SeqCst)
    }

    pub(crate) fn set_alive(&self, alive: bool) {
        self.alive.store(alive, Ordering::SeqCst);
    }

    fn block_path(&self, name: &str, ordinal: u64) -> Option<PathBuf> {
        self.dir
            .as_ref()
            .map(|dir| dir.join(format!("{}.blk{}", encode_name(name), ordinal)))
    }

    pub(crate) fn put(&self, name: &str, ordinal: u64, data: Bytes) -> io::Result<()> {
        if let Some(path) = self.block_path(name, ordinal) {
            fs::write(path, &data)?;
        }
        self.blocks.lock().unwrap().insert((name.to_owned(), ordinal), data);
        Ok(())
    }

    /// Returns the stored block, or `None` if this node has no copy.
    /// Callers check liveness first.
    pub(crate) fn get(&self, name: &str, ordinal: u64) -> io::Result<Option<Bytes>> {
        let key = (name.to_owned(), ordinal);
        if let Some(data) = self.blocks.lock().unwrap().get(&key) {
            return Ok(Some(data.clone()));
        }
        let Some(path) = self.block_path(name, ordinal) else {
            return Ok(None);
        };
        match fs::read(&path) {
            Ok(raw) => {
                let data = Bytes::from(raw);
                self.blocks.lock().unwrap().insert(key, data.clone());
                Ok(Some(data))
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub(crate) fn remove(&self, name: &str, ordinal: u64) -> io::Result<()> {
        self.blocks.lock().unwrap().remove(&(name.to_owned(), ordinal));
        if let Some(path) = self.block_path(name, ordinal) {
            match fs::remove_file(path) {
                Ok(()) => {}
                Err(e) if e.kind() == io::ErrorKind::NotFound => {}
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    /// Moves a block to a new key without touching its bytes.
    pub(crate) fn relabel(&self, old: &str, new: &str, ordinal: u64) -> io::Result<()> {
        if let (Some(from), Some(to)) = (self.block_path(old, ordinal), self.block_path(new, ordinal)) {
            match fs::rename(from, to) {
                Ok(()) => {}
                Err(e) if e.kind() == io::ErrorKind::NotFound => {}
                Err(e) => return Err(e),
            }
        }
        let mut blocks = self.blocks.lock().unwrap();
        if let Some(data) = blocks.remove(&(old.to_owned(), ordinal)) {
            blocks.insert((new.to_owned(), ordinal), data);
        }
        Ok(())
    }

    /// Drops every block whose key the NameNode no longer assigns to this node.
    /// Run when a node rejoins, standing in for a block report.
    pub(crate) fn retain(&self, keep: impl Fn(&str, u64) -> bool) -> io::Result<()> {
        let stale: Vec<BlockKey> = self
            .keys()?
            .into_iter()
            .filter(|(name, ordinal)| !keep(name, *ordinal))
            .collect();
        for (name, ordinal) in stale {
            self.remove(&name, ordinal)?;
        }
        Ok(())
    }

    fn keys(&self) -> io::Result<Vec<BlockKey>> {
        let mut keys: Vec<BlockKey> = self.blocks.lock().unwrap().keys().cloned().collect();
        if let Some(dir) = &self.dir {
            for entry in fs::read_dir(dir)? {
                let file_name = entry?.file_name();
                let Some(file_name) = file_name.to_str() else { continue };
                let Some((encoded, ordinal)) = file_name.rsplit_once(".blk") else {
                    continue;
                };
                let (Ok(name), Ok(ordinal)) = (super::decode_name(encoded), ordinal.parse()) else {
                    continue;
                };
                keys.push((name, ordinal));
            }
            keys.sort();
            keys.dedup();
        }
        Ok(keys)
    }

    pub(crate) fn drop_cache(&self) {
        if self.dir.is_some() {
            self.blocks.lock().unwrap().clear();
        }
    }
}
