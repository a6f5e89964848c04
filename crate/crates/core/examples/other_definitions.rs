//! The causal estimate next to the architectural and extractable notions
//! of memorisation for the same synthetic instance population.

use memprof::synth::{base_config, run_ensemble};
use memprof::{
    architectural_estimate, estimate_profile, extractable_estimate, generate_panel, EstimatorKind,
    SynthConfig,
};

fn main() -> memprof::Result<()> {
    let config = SynthConfig {
        n_per_group: 200,
        n_validation: 800,
        ..base_config()
    };
    let g = 2;
    let last = *config.checkpoint_grid.last().expect("non-empty grid");

    let (panel, _) = generate_panel(&config)?;
    let did = estimate_profile(&panel, EstimatorKind::Did)?;
    let causal = did.cell(g, last).expect("admissible").estimate;

    // Many independent runs with and without one instance from group g.
    let ensemble = run_ensemble(&config, g, 5000, 11)?;
    let architectural = architectural_estimate(&ensemble)?;

    let row = |label: &str, value: f64| println!("{label:<28}{value:.4}");
    row(
        &format!("true effect at ({g}, {last})"),
        config.effect_at(g, last),
    );
    row("causal (DID) estimate", causal);
    row("architectural estimate", architectural);

    // Extractable memorisation reads an observed rate as-is.
    for rate in [0.0, 0.12, 0.5] {
        row(
            &format!("extractable at rate {rate}"),
            extractable_estimate(rate)?,
        );
    }
    Ok(())
}
