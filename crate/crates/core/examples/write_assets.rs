//! Regenerates the bundled asset tree from the in-code tables.
//!
//! Usage: `cargo run -p edge-carbon --example write_assets [root]`

use std::path::PathBuf;

fn main() -> edge_carbon::Result<()> {
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../assets"));
    let n = edge_carbon::assets::write_tree(&root)?;
    println!(
        "wrote {n} files under {}",
        edge_carbon::assets::versioned(&root).display()
    );
    Ok(())
}
