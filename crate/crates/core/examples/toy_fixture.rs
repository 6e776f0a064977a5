//! Write the toy model, tokenizer, SAEs, corpus and pipeline config.
//!
//! cargo run --example toy_fixture -- [DIR]

use std::path::PathBuf;

use featdesc::fixture::write_toy_fixture;

fn main() -> featdesc::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/toy"));
    let checksum = write_toy_fixture(&dir)?;
    println!("wrote {}", dir.display());
    println!("probe logits sha256: {checksum}");
    for entry in std::fs::read_dir(&dir).map_err(|e| featdesc::Error::io(&dir, e))? {
        let entry = entry.map_err(|e| featdesc::Error::io(&dir, e))?;
        let len = entry.metadata().map(|m| m.len()).unwrap_or(0);
        println!("  {:<28} {len:>8} bytes", entry.file_name().to_string_lossy());
    }
    Ok(())
}
