//! Render a banded profile as an SVG heatmap.
//!
//! ```text
//! cargo run --example heatmap_report [-- out.svg]
//! ```

use memprof::report::{render_heatmap, HeatmapOptions};
use memprof::synth::base_config;
use memprof::{
    apply_bands, estimate_profile, generate_panel, multiplier_bootstrap, BootstrapConfig,
    EstimatorKind, SynthConfig,
};

fn main() -> memprof::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "heatmap.svg".to_string());
    let config = SynthConfig {
        n_per_group: 100,
        n_validation: 400,
        treatment_grid: (1..=8).collect(),
        checkpoint_grid: (0..=12).collect(),
        ..base_config()
    };
    let (panel, _) = generate_panel(&config)?;
    let profile = estimate_profile(&panel, EstimatorKind::Did)?;
    let bands = multiplier_bootstrap(&panel, &profile, &BootstrapConfig::new(1000, 0.05, 3))?;
    let masked = apply_bands(&profile, &bands)?;

    let svg = render_heatmap(
        &masked,
        &HeatmapOptions {
            title: "Synthetic DID profile".to_string(),
            epoch_boundary: Some(8),
            mask_insignificant: true,
        },
    );
    std::fs::write(&out, svg)?;
    println!("{} cells written to {out}", masked.len());
    Ok(())
}
