//! Summary series of a profile and the correlation between two metrics.

use memprof::synth::{base_config, Family};
use memprof::{
    apply_bands, estimate_profile, generate_panel, instantaneous, multiplier_bootstrap,
    persistent_average, profile_correlation, residual, BootstrapConfig, CorrelationMode,
    EstimatorKind, SynthConfig,
};

fn main() -> memprof::Result<()> {
    let first = SynthConfig {
        n_per_group: 120,
        n_validation: 500,
        ..base_config()
    };
    // A second metric measured on other instances, with slower decay.
    let second = SynthConfig {
        effect: Family::ExponentialDecay {
            scale: 0.4,
            lambda: 4.0,
        },
        seed: 99,
        ..first.clone()
    };

    let mut profiles = Vec::new();
    for config in [&first, &second] {
        let (panel, _) = generate_panel(config)?;
        let profile = estimate_profile(&panel, EstimatorKind::Did)?;
        let bands = multiplier_bootstrap(&panel, &profile, &BootstrapConfig::new(1000, 0.05, 1))?;
        profiles.push(apply_bands(&profile, &bands)?);
    }
    let profile = &profiles[0];

    print!("{}", instantaneous(profile).to_csv_string()?);
    print!("{}", persistent_average(profile).to_csv_string()?);
    let last = *profile.checkpoint_steps().last().expect("non-empty");
    print!("{}", residual(profile, last)?.to_csv_string()?);

    let all = profile_correlation(&profiles[0], &profiles[1], CorrelationMode::AllCells)?;
    println!("correlation over all cells: {all:.3}");
    match profile_correlation(&profiles[0], &profiles[1], CorrelationMode::SignificantOnly) {
        Ok(r) => println!("correlation over jointly significant cells: {r:.3}"),
        Err(e) => println!("correlation over jointly significant cells: {e}"),
    }
    Ok(())
}
