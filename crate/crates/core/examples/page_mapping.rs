//! How page ids map onto the one-block DFS files behind a meta file.

use std::sync::Arc;

use metadfs::dfs::{Dfs, DfsConfig};
use metadfs::meta::MetaDfs;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dfs = Arc::new(Dfs::in_memory(DfsConfig::default())?);
    let meta = MetaDfs::new(dfs, 4096)?;
    let pages = meta.pages();
    println!("{} byte pages, {} per block", pages.page_size, pages.pages_per_block);

    for pageid in [0u64, 15, 16, 1_000, 999_999] {
        let addr = pages.page_address(pageid);
        println!(
            "page {pageid:>7} -> block {:>6}, offset {:>2}",
            addr.block_id, addr.page_offset
        );
    }

    let file = meta.create_meta("demo/data")?;
    for b in 0..3u8 {
        let mut block = vec![0u8; meta.block_size()];
        for (i, page) in block.chunks_mut(pages.page_size).enumerate() {
            page[0] = b;
            page[1] = i as u8;
        }
        meta.append_block(&file, &block)?;
    }
    let page = meta.read_page(&file, 37)?;
    println!(
        "page 37 lives in {} at offset {}",
        file.constituent(page[0].into()),
        page[1]
    );
    for row in meta.table(&file)? {
        println!(
            "{:<20} {:>6} bytes on nodes {:?}",
            row.dfs_file_name, row.file_size, row.block_positions[0]
        );
    }
    Ok(())
}
