use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::PathBuf;

use super::{decode_name, encode_name, DfsError, DfsFileEntry, NodeId};

/// Marks Meta DFS File Table registrations inside `namenode.tbl`. Encoded names
/// never start with `@`, so these lines cannot collide with file records.
const META_TAG: &str = "@meta";

/// File metadata plus the Meta DFS File Table.
#[derive(Debug, Default)]
pub(crate) struct NameNode {
    pub(crate) files: BTreeMap<String, DfsFileEntry>,
    pub(crate) meta_files: BTreeSet<String>,
    replication: usize,
    table_path: Option<PathBuf>,
}

impl NameNode {
    pub(crate) fn in_memory(replication: usize) -> Self {
        Self {
            replication,
            ..Self::default()
        }
    }

    /// Opens (or creates) the table journaled at `path`.
    pub(crate) fn open(path: PathBuf, replication: usize) -> Result<Self, DfsError> {
        let mut node = Self {
            replication,
            table_path: Some(path.clone()),
            ..Self::default()
        };
        let text = match fs::read_to_string(&path) {
            Ok(text) => text,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(node),
            Err(e) => return Err(e.into()),
        };
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let bad = || DfsError::CorruptTable {
                line: lineno + 1,
                text: line.to_owned(),
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields[0] == META_TAG {
                let name = fields.get(1).ok_or_else(bad)?;
                node.meta_files.insert(decode_name(name).map_err(|_| bad())?);
                continue;
            }
            let [name, size, num_blocks, replication, locations] = fields[..] else {
                return Err(bad());
            };
            let name = decode_name(name).map_err(|_| bad())?;
            let size_bytes: u64 = size.parse().map_err(|_| bad())?;
            let num_blocks: u64 = num_blocks.parse().map_err(|_| bad())?;
            let replication: usize = replication.parse().map_err(|_| bad())?;
            let block_locations = parse_locations(locations).ok_or_else(bad)?;
            if block_locations.len() as u64 != num_blocks || block_locations.iter().any(|set| set.len() != replication)
            {
                return Err(bad());
            }
            node.files.insert(
                name.clone(),
                DfsFileEntry {
                    name,
                    size_bytes,
                    num_blocks,
                    block_locations,
                },
            );
        }
        Ok(node)
    }

    /// Rewrites the table atomically (temp file + rename).
    pub(crate) fn persist(&self) -> Result<(), DfsError> {
        let Some(path) = &self.table_path else {
            return Ok(());
        };
        let mut out = String::new();
        for name in &self.meta_files {
            out.push_str(META_TAG);
            out.push('\t');
            out.push_str(&encode_name(name));
            out.push('\n');
        }
        for entry in self.files.values() {
            let locations: Vec<String> = entry
                .block_locations
                .iter()
                .map(|set| set.iter().map(|id| id.to_string()).collect::<Vec<_>>().join(","))
                .collect();
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                encode_name(&entry.name),
                entry.size_bytes,
                entry.num_blocks,
                self.replication,
                locations.join(";")
            ));
        }
        let tmp = path.with_extension("tbl.tmp");
        fs::write(&tmp, out)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }
}

fn parse_locations(text: &str) -> Option<Vec<Vec<NodeId>>> {
    if text.is_empty() {
        return Some(Vec::new());
    }
    text.split(';')
        .map(|set| set.split(',').map(|id| id.parse().ok()).collect())
        .collect()
}
