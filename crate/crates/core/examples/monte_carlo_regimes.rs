//! Bias of both estimators across the built-in assumption regimes.

use memprof::synth::{monte_carlo, regime_suite};
use memprof::EstimatorKind;

fn main() -> memprof::Result<()> {
    let replications = 1000;
    for regime in regime_suite() {
        println!("regime ({}): {}", regime.name, regime.description);
        for kind in [EstimatorKind::Diff, EstimatorKind::Did] {
            let report = monte_carlo(&regime.config, kind, replications, None)?;
            let worst = report
                .cells
                .iter()
                .max_by(|a, b| a.z().abs().total_cmp(&b.z().abs()))
                .expect("non-empty");
            println!(
                "  {kind:>4}: expected {:?}; largest bias {:+.4} at ({}, {}) = {:+.1} mcse, \
                 closed form {:+.4}; var {:.5} vs predicted {:.5}",
                regime.expectation(kind),
                worst.bias,
                worst.g,
                worst.c,
                worst.z(),
                worst.expected_bias,
                worst.variance,
                worst.predicted_variance,
            );
        }
    }
    Ok(())
}
