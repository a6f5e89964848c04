//! Difference and difference-in-differences profiles of the toy panel.

use std::fs::File;

use memprof::{estimate_profile, load_panel, EstimatorKind};

fn main() -> memprof::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/toy_panel.csv");
    let panel = load_panel(File::open(path)?)?;
    let diff = estimate_profile(&panel, EstimatorKind::Diff)?;
    let did = estimate_profile(&panel, EstimatorKind::Did)?;

    println!(
        "{:>3} {:>3} {:>10} {:>10} {:>10}",
        "g", "c", "diff", "did", "pre-gap"
    );
    for (a, b) in diff.cells().iter().zip(did.cells()) {
        // The two estimators differ by the groups' gap at the baseline.
        println!(
            "{:>3} {:>3} {:>10.4} {:>10.4} {:>10.4}",
            a.g,
            a.c,
            a.estimate,
            b.estimate,
            a.estimate - b.estimate
        );
    }
    print!("\n{}", did.to_csv_string()?);
    Ok(())
}
