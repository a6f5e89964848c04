//! Load a panel CSV and describe its layout.
//!
//! ```text
//! cargo run --example validate_panel [-- path/to/panel.csv]
//! ```

use std::fs::File;

use memprof::load_panel;

fn main() -> memprof::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/data/toy_panel.csv").to_string());
    let panel = load_panel(File::open(&path)?)?;

    let (n, c) = panel.shape();
    println!("{path}: {n} instances x {c} checkpoints");
    println!("checkpoints: {:?}", panel.checkpoint_grid());
    for (group, rows) in panel.group_index().iter() {
        match group.step() {
            Some(g) => println!(
                "  treated at {g:>4}: {:>3} instances, baseline checkpoint {}",
                rows.len(),
                panel.baseline_checkpoint(g)?
            ),
            None => println!("  validation    : {:>3} instances", rows.len()),
        }
    }
    Ok(())
}
