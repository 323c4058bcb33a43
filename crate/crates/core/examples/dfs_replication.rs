//! Write-once files, replica placement and reads with dead DataNodes.

use metadfs::dfs::{Dfs, DfsConfig, DfsError};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dfs = Dfs::in_memory(DfsConfig {
        block_size: 1024,
        ..DfsConfig::default()
    })?;
    let content: Vec<u8> = (0..3000u32).map(|i| i as u8).collect();
    let entry = dfs.create_file("logs/today", &content)?;
    println!("{} bytes in {} blocks", entry.size_bytes, entry.num_blocks);
    for (i, nodes) in entry.block_locations.iter().enumerate() {
        println!("  block {i}: nodes {nodes:?}");
    }

    match dfs.create_file("logs/today", b"again") {
        Err(DfsError::AlreadyExists(name)) => println!("second create of {name} refused: files are write-once"),
        other => println!("unexpected: {other:?}"),
    }

    let holders = &entry.block_locations[0];
    for &node in &holders[..2] {
        dfs.set_node_alive(node, false)?;
    }
    let head = dfs.read_range("logs/today", 0, 16)?;
    println!("two replicas down, still read {:?}", &head[..4]);
    dfs.set_node_alive(holders[2], false)?;
    match dfs.read_range("logs/today", 0, 16) {
        Err(e) => println!("all replicas down: {e}"),
        Ok(_) => println!("unexpected read"),
    }
    for &node in holders {
        dfs.set_node_alive(node, true)?;
    }
    println!("traffic: {:?}", dfs.stats());
    Ok(())
}
