//! In-process simulation of a write-once-read-many distributed file system.
//!
//! A [`Dfs`] owns one NameNode (file metadata and the Meta DFS File Table)
//! and a fixed set of DataNodes. Files are split into `block_size` blocks and
//! each block is placed on `replication` distinct live nodes. The client API is
//! the four classic calls (create, ranged read, rename, delete): existing bytes
//! can never be modified, only deleted and recreated.

mod datanode;
mod namenode;

use std::hash::Hasher;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;
use std::time::Duration;

use bytes::Bytes;
use percent_encoding::{percent_decode_str, utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use datanode::DataNode;
use namenode::NameNode;

pub type NodeId = u32;

/// Characters left readable in on-disk names.
const NAME_ESCAPES: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'_').remove(b'.');

pub(crate) fn encode_name(name: &str) -> String {
    utf8_percent_encode(name, NAME_ESCAPES).to_string()
}

pub(crate) fn decode_name(encoded: &str) -> Result<String, std::str::Utf8Error> {
    percent_decode_str(encoded).decode_utf8().map(|s| s.into_owned())
}

#[derive(Debug, Error)]
pub enum DfsError {
    #[error("file `{0}` already exists")]
    AlreadyExists(String),
    #[error("file `{0}` not found")]
    NotFound(String),
    #[error("range {offset}+{length} out of bounds for `{name}` ({size} bytes)")]
    OutOfRange {
        name: String,
        offset: u64,
        length: u64,
        size: u64,
    },
    #[error("need {needed} live DataNodes for placement, only {alive} alive")]
    InsufficientReplicaNodes { needed: usize, alive: usize },
    #[error("every replica of block {ordinal} of `{name}` is on a dead node")]
    AllReplicasDead { name: String, ordinal: u64 },
    #[error("unknown DataNode {0}")]
    UnknownNode(NodeId),
    #[error("invalid DFS configuration: {0}")]
    InvalidConfig(String),
    #[error("corrupt NameNode table at line {line}: {text:?}")]
    CorruptTable { line: usize, text: String },
    #[error("replica of block {ordinal} of `{name}` missing on node {node}")]
    MissingReplica { name: String, ordinal: u64, node: NodeId },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DfsConfig {
    pub block_size: usize,
    pub replication: usize,
    pub datanodes: usize,
    pub placement_seed: u64,
    /// Delay applied to every block read served by a DataNode.
    #[serde(with = "millis")]
    pub latency: Duration,
}

impl Default for DfsConfig {
    /// Desk-scale defaults: 64 KB blocks, three replicas over five nodes.
    fn default() -> Self {
        Self {
            block_size: 64 * 1024,
            replication: 3,
            datanodes: 5,
            placement_seed: 0,
            latency: Duration::ZERO,
        }
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

impl DfsConfig {
    pub fn validate(&self) -> Result<(), DfsError> {
        if self.block_size == 0 {
            return Err(DfsError::InvalidConfig("block_size must be positive".into()));
        }
        if self.replication == 0 {
            return Err(DfsError::InvalidConfig("replication must be at least 1".into()));
        }
        if self.datanodes < self.replication {
            return Err(DfsError::InvalidConfig(format!(
                "{} DataNodes cannot hold {} replicas",
                self.datanodes, self.replication
            )));
        }
        Ok(())
    }
}

/// NameNode record for one DFS file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DfsFileEntry {
    pub name: String,
    pub size_bytes: u64,
    pub num_blocks: u64,
    /// One set of DataNode ids per block, in placement order.
    pub block_locations: Vec<Vec<NodeId>>,
}

/// Point-in-time view of a DataNode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataNodeState {
    pub node_id: NodeId,
    pub alive: bool,
    pub blocks: Vec<(String, u64)>,
}

#[derive(Debug, Default)]
struct Counters {
    read_calls: AtomicU64,
    bytes_read: AtomicU64,
    files_created: AtomicU64,
    files_deleted: AtomicU64,
    bytes_written: AtomicU64,
}

/// Snapshot of the DFS traffic counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DfsStats {
    /// Block-level reads served by DataNodes.
    pub read_calls: u64,
    /// Bytes shipped to clients by reads (the network-byte counter).
    pub bytes_read: u64,
    pub files_created: u64,
    pub files_deleted: u64,
    /// Bytes written per replica set (counted once per block, not per replica).
    pub bytes_written: u64,
}

impl DfsStats {
    pub fn since(&self, earlier: &DfsStats) -> DfsStats {
        DfsStats {
            read_calls: self.read_calls - earlier.read_calls,
            bytes_read: self.bytes_read - earlier.bytes_read,
            files_created: self.files_created - earlier.files_created,
            files_deleted: self.files_deleted - earlier.files_deleted,
            bytes_written: self.bytes_written - earlier.bytes_written,
        }
    }
}

/// The simulated file system. Share it behind an `Arc`; all methods take `&self`.
#[derive(Debug)]
pub struct Dfs {
    config: DfsConfig,
    namenode: RwLock<NameNode>,
    datanodes: Vec<DataNode>,
    counters: Counters,
    root: Option<PathBuf>,
}

impl Dfs {
    /// A purely in-memory DFS.
    pub fn in_memory(config: DfsConfig) -> Result<Self, DfsError> {
        config.validate()?;
        let datanodes = (0..config.datanodes as NodeId)
            .map(|id| DataNode::new(id, None))
            .collect::<io::Result<_>>()?;
        Ok(Self {
            namenode: RwLock::new(NameNode::in_memory(config.replication)),
            config,
            datanodes,
            counters: Counters::default(),
            root: None,
        })
    }

    /// A DFS persisted under `root`: one directory per DataNode plus
    /// `namenode.tbl`. Reopening the same root restores every file.
    pub fn open_dir(root: impl AsRef<Path>, config: DfsConfig) -> Result<Self, DfsError> {
        config.validate()?;
        let root = root.as_ref().to_path_buf();
        std::fs::create_dir_all(&root)?;
        let datanodes = (0..config.datanodes as NodeId)
            .map(|id| DataNode::new(id, Some(root.join(format!("node_{id}")))))
            .collect::<io::Result<_>>()?;
        let namenode = NameNode::open(root.join("namenode.tbl"), config.replication)?;
        Ok(Self {
            namenode: RwLock::new(namenode),
            config,
            datanodes,
            counters: Counters::default(),
            root: Some(root),
        })
    }

    pub fn config(&self) -> &DfsConfig {
        &self.config
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn block_size(&self) -> usize {
        self.config.block_size
    }

    pub fn stats(&self) -> DfsStats {
        let c = &self.counters;
        DfsStats {
            read_calls: c.read_calls.load(Ordering::Relaxed),
            bytes_read: c.bytes_read.load(Ordering::Relaxed),
            files_created: c.files_created.load(Ordering::Relaxed),
            files_deleted: c.files_deleted.load(Ordering::Relaxed),
            bytes_written: c.bytes_written.load(Ordering::Relaxed),
        }
    }

    fn node(&self, id: NodeId) -> Result<&DataNode, DfsError> {
        self.datanodes.get(id as usize).ok_or(DfsError::UnknownNode(id))
    }

    fn alive_ids(&self) -> Vec<NodeId> {
        self.datanodes.iter().filter(|n| n.is_alive()).map(|n| n.id).collect()
    }

    /// Seeded placement of one block. Depends only on the seed, the file name,
    /// the block ordinal and the current set of live nodes.
    fn place(&self, alive: &[NodeId], name: &str, ordinal: u64) -> Vec<NodeId> {
        let mut hasher = Fnv64::default();
        hasher.write(name.as_bytes());
        hasher.write_u64(ordinal);
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.placement_seed ^ hasher.finish());
        alive
            .choose_multiple(&mut rng, self.config.replication)
            .copied()
            .collect()
    }

    /// Writes a new immutable file.
    pub fn create_file(&self, name: &str, content: &[u8]) -> Result<DfsFileEntry, DfsError> {
        let mut namenode = self.namenode.write().unwrap();
        if namenode.files.contains_key(name) {
            return Err(DfsError::AlreadyExists(name.to_owned()));
        }
        let alive = self.alive_ids();
        if alive.len() < self.config.replication {
            return Err(DfsError::InsufficientReplicaNodes {
                needed: self.config.replication,
                alive: alive.len(),
            });
        }
        let block_size = self.config.block_size;
        let mut block_locations = Vec::with_capacity(content.len().div_ceil(block_size));
        for (ordinal, chunk) in content.chunks(block_size).enumerate() {
            let ordinal = ordinal as u64;
            let holders = self.place(&alive, name, ordinal);
            let data = Bytes::copy_from_slice(chunk);
            for &id in &holders {
                self.datanodes[id as usize].put(name, ordinal, data.clone())?;
            }
            block_locations.push(holders);
        }
        let entry = DfsFileEntry {
            name: name.to_owned(),
            size_bytes: content.len() as u64,
            num_blocks: block_locations.len() as u64,
            block_locations,
        };
        namenode.files.insert(name.to_owned(), entry.clone());
        namenode.persist()?;
        self.counters.files_created.fetch_add(1, Ordering::Relaxed);
        self.counters
            .bytes_written
            .fetch_add(content.len() as u64, Ordering::Relaxed);
        Ok(entry)
    }

    /// Reads `length` bytes at `offset`, block by block, each from the first
    /// live replica holder.
    pub fn read_range(&self, name: &str, offset: u64, length: u64) -> Result<Vec<u8>, DfsError> {
        let namenode = self.namenode.read().unwrap();
        let entry = namenode
            .files
            .get(name)
            .ok_or_else(|| DfsError::NotFound(name.to_owned()))?;
        let end = offset
            .checked_add(length)
            .filter(|end| *end <= entry.size_bytes)
            .ok_or_else(|| DfsError::OutOfRange {
                name: name.to_owned(),
                offset,
                length,
                size: entry.size_bytes,
            })?;
        let block_size = self.config.block_size as u64;
        let mut out = Vec::with_capacity(length as usize);
        let mut pos = offset;
        while pos < end {
            let ordinal = pos / block_size;
            let within = (pos % block_size) as usize;
            let take = ((block_size - within as u64).min(end - pos)) as usize;
            let block = self.read_block(entry, ordinal)?;
            out.extend_from_slice(&block[within..within + take]);
            self.charge(take as u64);
            pos += take as u64;
        }
        Ok(out)
    }

    fn read_block(&self, entry: &DfsFileEntry, ordinal: u64) -> Result<Bytes, DfsError> {
        let holders = &entry.block_locations[ordinal as usize];
        for &id in holders {
            let node = &self.datanodes[id as usize];
            if !node.is_alive() {
                continue;
            }
            let data = node
                .get(&entry.name, ordinal)?
                .ok_or_else(|| DfsError::MissingReplica {
                    name: entry.name.clone(),
                    ordinal,
                    node: id,
                })?;
            if !self.config.latency.is_zero() {
                std::thread::sleep(self.config.latency);
            }
            self.counters.read_calls.fetch_add(1, Ordering::Relaxed);
            return Ok(data);
        }
        Err(DfsError::AllReplicasDead {
            name: entry.name.clone(),
            ordinal,
        })
    }

    /// Counts bytes handed to a client. Kept separate from `read_block` so a
    /// ranged read of a few bytes is not charged for the whole block.
    fn charge(&self, bytes: u64) {
        self.counters.bytes_read.fetch_add(bytes, Ordering::Relaxed);
    }

    pub fn delete_file(&self, name: &str) -> Result<(), DfsError> {
        let mut namenode = self.namenode.write().unwrap();
        let entry = namenode
            .files
            .remove(name)
            .ok_or_else(|| DfsError::NotFound(name.to_owned()))?;
        for (ordinal, holders) in entry.block_locations.iter().enumerate() {
            for &id in holders {
                let node = &self.datanodes[id as usize];
                // Dead nodes keep their stale copy until they rejoin.
                if node.is_alive() {
                    node.remove(name, ordinal as u64)?;
                }
            }
        }
        namenode.persist()?;
        self.counters.files_deleted.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    /// Metadata-only rename.
    pub fn rename_file(&self, old: &str, new: &str) -> Result<(), DfsError> {
        let mut namenode = self.namenode.write().unwrap();
        if !namenode.files.contains_key(old) {
            return Err(DfsError::NotFound(old.to_owned()));
        }
        if namenode.files.contains_key(new) {
            return Err(DfsError::AlreadyExists(new.to_owned()));
        }
        let mut entry = namenode.files.remove(old).expect("checked above");
        // DataNodes key blocks by file name, so live holders relabel their copies.
        for (ordinal, holders) in entry.block_locations.iter().enumerate() {
            for &id in holders {
                self.datanodes[id as usize].relabel(old, new, ordinal as u64)?;
            }
        }
        entry.name = new.to_owned();
        namenode.files.insert(new.to_owned(), entry);
        namenode.persist()?;
        Ok(())
    }

    /// Fault-injection control. Reviving a node drops any copies the NameNode
    /// no longer assigns to it.
    pub fn set_node_alive(&self, id: NodeId, alive: bool) -> Result<(), DfsError> {
        let node = self.node(id)?;
        if alive && !node.is_alive() {
            let namenode = self.namenode.read().unwrap();
            node.retain(|name, ordinal| {
                namenode.files.get(name).is_some_and(|entry| {
                    entry
                        .block_locations
                        .get(ordinal as usize)
                        .is_some_and(|holders| holders.contains(&id))
                })
            })?;
        }
        node.set_alive(alive);
        Ok(())
    }

    pub fn node_ids(&self) -> Vec<NodeId> {
        self.datanodes.iter().map(|n| n.id).collect()
    }

    pub fn node_state(&self, id: NodeId) -> Result<DataNodeState, DfsError> {
        let node = self.node(id)?;
        let namenode = self.namenode.read().unwrap();
        let blocks = namenode
            .files
            .values()
            .flat_map(|entry| {
                entry
                    .block_locations
                    .iter()
                    .enumerate()
                    .filter(|(_, holders)| holders.contains(&id))
                    .map(|(ordinal, _)| (entry.name.clone(), ordinal as u64))
            })
            .collect();
        Ok(DataNodeState {
            node_id: id,
            alive: node.is_alive(),
            blocks,
        })
    }

    pub fn file_entry(&self, name: &str) -> Result<DfsFileEntry, DfsError> {
        self.namenode
            .read()
            .unwrap()
            .files
            .get(name)
            .cloned()
            .ok_or_else(|| DfsError::NotFound(name.to_owned()))
    }

    pub fn exists(&self, name: &str) -> bool {
        self.namenode.read().unwrap().files.contains_key(name)
    }

    /// Every file whose name starts with `prefix`, in name order.
    pub fn list_prefix(&self, prefix: &str) -> Vec<DfsFileEntry> {
        self.namenode
            .read()
            .unwrap()
            .files
            .range(prefix.to_owned()..)
            .take_while(|(name, _)| name.starts_with(prefix))
            .map(|(_, entry)| entry.clone())
            .collect()
    }

    /// Raw replica contents of one block as held by every assigned node,
    /// dead or alive. For consistency checks.
    pub fn replicas(&self, name: &str, ordinal: u64) -> Result<Vec<(NodeId, Option<Bytes>)>, DfsError> {
        let entry = self.file_entry(name)?;
        let holders = entry
            .block_locations
            .get(ordinal as usize)
            .ok_or_else(|| DfsError::OutOfRange {
                name: name.to_owned(),
                offset: ordinal * self.config.block_size as u64,
                length: 0,
                size: entry.size_bytes,
            })?;
        holders
            .iter()
            .map(|&id| Ok((id, self.datanodes[id as usize].get(name, ordinal)?)))
            .collect()
    }

    /// Drops DataNode caches so the next reads come from backing storage.
    pub fn drop_caches(&self) {
        for node in &self.datanodes {
            node.drop_cache();
        }
    }

    // Meta DFS File Table registrations live with the NameNode metadata.

    pub(crate) fn register_meta(&self, name: &str) -> Result<bool, DfsError> {
        let mut namenode = self.namenode.write().unwrap();
        let inserted = namenode.meta_files.insert(name.to_owned());
        if inserted {
            namenode.persist()?;
        }
        Ok(inserted)
    }

    pub(crate) fn unregister_meta(&self, name: &str) -> Result<bool, DfsError> {
        let mut namenode = self.namenode.write().unwrap();
        let removed = namenode.meta_files.remove(name);
        if removed {
            namenode.persist()?;
        }
        Ok(removed)
    }

    pub(crate) fn meta_registered(&self, name: &str) -> bool {
        self.namenode.read().unwrap().meta_files.contains(name)
    }

    pub(crate) fn meta_names(&self) -> Vec<String> {
        self.namenode.read().unwrap().meta_files.iter().cloned().collect()
    }
}

/// FNV-1a, used only to mix file names into placement seeds. Stable across
/// platforms and releases, unlike `DefaultHasher`.
struct Fnv64(u64);

impl Default for Fnv64 {
    fn default() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }
}

impl Hasher for Fnv64 {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dfs(block_size: usize, replication: usize, datanodes: usize) -> Dfs {
        Dfs::in_memory(DfsConfig {
            block_size,
            replication,
            datanodes,
            ..DfsConfig::default()
        })
        .unwrap()
    }

    fn pattern(len: usize) -> Vec<u8> {
        (0..len).map(|i| (i * 31 % 251) as u8).collect()
    }

    #[test]
    fn create_splits_into_ceiling_blocks() {
        let dfs = dfs(64 * 1024, 3, 5);
        let entry = dfs.create_file("f", &pattern(130 * 1024)).unwrap();
        assert_eq!(entry.num_blocks, 3);
        let sizes: Vec<usize> = (0..3)
            .map(|b| dfs.replicas("f", b).unwrap()[0].1.as_ref().unwrap().len())
            .collect();
        assert_eq!(sizes, vec![64 * 1024, 64 * 1024, 2 * 1024]);
        for holders in &entry.block_locations {
            let mut sorted = holders.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), 3);
        }
    }

    #[test]
    fn write_once_rule() {
        let dfs = dfs(1024, 1, 1);
        dfs.create_file("f", b"x").unwrap();
        assert!(matches!(dfs.create_file("f", b"y"), Err(DfsError::AlreadyExists(_))));
    }

    #[test]
    fn placement_needs_enough_live_nodes() {
        let dfs = dfs(64 * 1024, 3, 3);
        dfs.set_node_alive(0, false).unwrap();
        assert!(matches!(
            dfs.create_file("f", &pattern(64 * 1024)),
            Err(DfsError::InsufficientReplicaNodes { needed: 3, alive: 2 })
        ));
    }

    #[test]
    fn ranged_reads_cross_blocks() {
        let dfs = dfs(64 * 1024, 3, 5);
        let data = pattern(130 * 1024);
        dfs.create_file("f", &data).unwrap();
        assert_eq!(dfs.read_range("f", 0, data.len() as u64).unwrap(), data);
        assert_eq!(dfs.read_range("f", 65540, 8).unwrap(), &data[65540..65548]);
        assert_eq!(dfs.read_range("f", 65530, 12).unwrap(), &data[65530..65542]);
        assert!(matches!(
            dfs.read_range("f", 130 * 1024 - 4, 8),
            Err(DfsError::OutOfRange { .. })
        ));
        assert!(matches!(dfs.read_range("g", 0, 1), Err(DfsError::NotFound(_))));
    }

    #[test]
    fn reads_survive_until_last_replica_dies() {
        let dfs = dfs(1024, 3, 5);
        let entry = dfs.create_file("f", &pattern(1024)).unwrap();
        let holders = entry.block_locations[0].clone();
        dfs.set_node_alive(holders[0], false).unwrap();
        dfs.set_node_alive(holders[1], false).unwrap();
        assert_eq!(dfs.read_range("f", 0, 1024).unwrap(), pattern(1024));
        dfs.set_node_alive(holders[2], false).unwrap();
        assert!(matches!(
            dfs.read_range("f", 0, 1),
            Err(DfsError::AllReplicasDead { ordinal: 0, .. })
        ));
        dfs.set_node_alive(holders[2], true).unwrap();
        assert_eq!(dfs.read_range("f", 0, 4).unwrap(), &pattern(1024)[..4]);
    }

    #[test]
    fn delete_then_recreate_is_a_remake() {
        let dfs = dfs(1024, 2, 3);
        dfs.create_file("f", b"old").unwrap();
        dfs.delete_file("f").unwrap();
        assert!(matches!(dfs.read_range("f", 0, 1), Err(DfsError::NotFound(_))));
        dfs.create_file("f", b"new").unwrap();
        assert_eq!(dfs.read_range("f", 0, 3).unwrap(), b"new");
        assert!(matches!(dfs.delete_file("nope"), Err(DfsError::NotFound(_))));
    }

    #[test]
    fn rename_is_metadata_only() {
        let dfs = dfs(4, 2, 3);
        dfs.create_file("a", b"abcdefghij").unwrap();
        let before = dfs.stats();
        dfs.rename_file("a", "b").unwrap();
        assert_eq!(dfs.stats().bytes_written, before.bytes_written);
        assert_eq!(dfs.read_range("b", 0, 10).unwrap(), b"abcdefghij");
        dfs.create_file("c", b"x").unwrap();
        assert!(matches!(dfs.rename_file("b", "c"), Err(DfsError::AlreadyExists(_))));
        assert!(matches!(dfs.rename_file("zz", "y"), Err(DfsError::NotFound(_))));
    }

    #[test]
    fn unknown_node_is_rejected() {
        let dfs = dfs(4, 1, 2);
        assert!(matches!(dfs.set_node_alive(9, false), Err(DfsError::UnknownNode(9))));
    }

    #[test]
    fn empty_file_has_no_blocks() {
        let dfs = dfs(4, 1, 1);
        let entry = dfs.create_file("e", b"").unwrap();
        assert_eq!(entry.num_blocks, 0);
        assert_eq!(dfs.read_range("e", 0, 0).unwrap(), Vec::<u8>::new());
    }

    #[test]
    fn name_encoding_round_trips() {
        for name in ["$(PATH)/data/00000001", "a b\tc", "plain-name_1.x", "ünï"] {
            assert_eq!(decode_name(&encode_name(name)).unwrap(), name);
            assert!(!encode_name(name).contains(['/', '\t', '@']));
        }
    }
}
