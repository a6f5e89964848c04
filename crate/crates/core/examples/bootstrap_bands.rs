//! Simultaneous confidence bands for a synthetic profile, with pointwise
//! bands for comparison and bootstrap-based persistent averages.

use memprof::inference::{bands_from_draws, bootstrap_draws, BandKind};
use memprof::profile::persistent_average_with_bands;
use memprof::synth::base_config;
use memprof::{
    apply_bands, estimate_profile, generate_panel, BootstrapConfig, EstimatorKind, SynthConfig,
};

fn main() -> memprof::Result<()> {
    let config = SynthConfig {
        n_per_group: 150,
        n_validation: 600,
        ..base_config()
    };
    let (panel, truth) = generate_panel(&config)?;
    let profile = estimate_profile(&panel, EstimatorKind::Did)?;

    let boot = BootstrapConfig::new(2000, 0.05, 7);
    let draws = bootstrap_draws(&panel, &profile, &boot)?;
    let bands = bands_from_draws(&draws, EstimatorKind::Did, &boot)?;
    let pointwise = BootstrapConfig {
        band: BandKind::Pointwise,
        ..boot
    };
    let pointwise_crit = bands_from_draws(&draws, EstimatorKind::Did, &pointwise)?.crit;
    println!(
        "critical value: simultaneous {:.3}, pointwise {:.3}",
        bands.crit, pointwise_crit
    );

    let masked = apply_bands(&profile, &bands)?;
    println!(
        "{:>3} {:>3} {:>9} {:>9} {:>7}  sig",
        "g", "c", "estimate", "truth", "se"
    );
    for (cell, tru) in masked.cells().iter().zip(truth.profile.cells()) {
        println!(
            "{:>3} {:>3} {:>9.4} {:>9.4} {:>7.4}  {}",
            cell.g,
            cell.c,
            cell.estimate,
            tru.estimate,
            cell.se.unwrap_or(f64::NAN),
            if cell.significant == Some(true) {
                "*"
            } else {
                ""
            }
        );
    }
    println!(
        "bands cover the truth: {}",
        bands.covers(&profile, &truth.profile)?
    );

    let persistent = persistent_average_with_bands(&profile, &draws, &boot)?;
    print!("\n{}", persistent.to_csv_string()?);
    Ok(())
}
