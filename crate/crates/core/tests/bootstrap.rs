mod common;

use common::*;
use memprof::inference::{
    bands_from_draws, bootstrap_draws, influence_matrix, is_significant, BandKind, SeMethod,
};
use memprof::rng::CounterRng;
use memprof::synth::{base_config, Family};
use memprof::{
    apply_bands, estimate_profile, generate_panel, influence_values, multiplier_bootstrap,
    BootstrapConfig, EstimatorKind, Panel, SynthConfig, TreatmentStep, WeightFamily,
};
use rand_core::RngCore;

fn noisy_panel(seed: u64) -> Panel {
    let cfg = SynthConfig {
        n_per_group: 25,
        n_validation: 60,
        seed,
        ..base_config()
    };
    generate_panel(&cfg).unwrap().0
}

#[test]
fn influence_columns_are_centred() {
    let cfg = SynthConfig {
        n_per_group: 200,
        n_validation: 200,
        treatment_grid: vec![1, 2, 3, 4],
        checkpoint_grid: vec![0, 1, 2, 3, 4],
        seed: 99,
        ..base_config()
    };
    let (panel, _) = generate_panel(&cfg).unwrap();
    assert_eq!(panel.n_instances(), 1000);
    for kind in [EstimatorKind::Did, EstimatorKind::Diff] {
        for (g, c) in admissible(&panel) {
            let psi = influence_values(&panel, kind, g, c).unwrap();
            let mean = psi.iter().sum::<f64>() / psi.len() as f64;
            assert!(mean.abs() < 1e-10, "{kind} ({g},{c}) mean {mean}");
        }
    }
}

#[test]
fn influence_decomposes_the_estimate() {
    // estimate = mean_g ΔY - mean_∞ ΔY, recomputed from the rows the
    // influence function touches.
    let panel = noisy_panel(5);
    let profile = estimate_profile(&panel, EstimatorKind::Did).unwrap();
    let n = panel.n_instances() as f64;
    for cell in profile.cells() {
        let psi = influence_values(&panel, EstimatorKind::Did, cell.g, cell.c).unwrap();
        let b = naive_baseline(&panel, cell.g);
        let col = |s| {
            panel
                .checkpoint_grid()
                .iter()
                .position(|&x| x == s)
                .unwrap()
        };
        let (cc, cb) = (col(cell.c), col(b));
        let (mut sg, mut ng, mut sv, mut nv) = (0.0, 0.0, 0.0, 0.0);
        for (row, group) in panel.groups().iter().enumerate() {
            let d = panel.outcome(row, cc) - panel.outcome(row, cb);
            match group {
                TreatmentStep::Never => {
                    sv += d;
                    nv += 1.0;
                }
                TreatmentStep::At(g) if *g == cell.g => {
                    sg += d;
                    ng += 1.0;
                }
                _ => assert_eq!(psi[row], 0.0),
            }
        }
        assert!((sg / ng - sv / nv - cell.estimate).abs() < 1e-12);
        // ψ is (n/n_g)·residual, so Σψ² scales as expected.
        let ss: f64 = psi.iter().map(|v| v * v).sum();
        assert!(ss > 0.0 && ss.is_finite());
        assert!((psi.iter().sum::<f64>() / n).abs() < 1e-10);
    }
}

/// Bootstrap draws straight from the definition: (1/n) Σ_x V_x ψ(x), with
/// the same Rademacher bits the engine uses.
fn naive_draws(panel: &Panel, kind: EstimatorKind, seed: u64, draws: usize) -> Vec<Vec<f64>> {
    let profile = estimate_profile(panel, kind).unwrap();
    let psi = influence_matrix(panel, &profile).unwrap();
    let n = panel.n_instances();
    (0..draws as u64)
        .map(|b| {
            let mut rng = CounterRng::stream(seed, b);
            let mut bits = 0;
            let weights: Vec<f64> = (0..n)
                .map(|r| {
                    if r % 64 == 0 {
                        bits = rng.next_u64();
                    }
                    if (bits >> (r % 64)) & 1 == 1 {
                        1.0
                    } else {
                        -1.0
                    }
                })
                .collect();
            (0..profile.len())
                .map(|j| {
                    psi.column(j)
                        .iter()
                        .zip(&weights)
                        .map(|(p, v)| p * v)
                        .sum::<f64>()
                        / n as f64
                })
                .collect()
        })
        .collect()
}

#[test]
fn fast_bootstrap_matches_influence_definition() {
    for (seed, kind) in [
        (1, EstimatorKind::Did),
        (2, EstimatorKind::Diff),
        (3, EstimatorKind::Did),
    ] {
        let panel = noisy_panel(seed);
        let profile = estimate_profile(&panel, kind).unwrap();
        let cfg = BootstrapConfig::new(200, 0.05, 77 + seed);
        let fast = bootstrap_draws(&panel, &profile, &cfg).unwrap();
        let slow = naive_draws(&panel, kind, cfg.seed, cfg.draws);
        for (b, row) in slow.iter().enumerate() {
            for (x, y) in fast.draw(b).iter().zip(row) {
                assert!((x - y).abs() < 1e-12, "{x} vs {y}");
            }
        }
    }
}

#[test]
fn same_seed_same_bands() {
    let panel = noisy_panel(8);
    let profile = estimate_profile(&panel, EstimatorKind::Did).unwrap();
    let cfg = BootstrapConfig::new(1000, 0.05, 2024);
    let a = multiplier_bootstrap(&panel, &profile, &cfg).unwrap();
    let b = multiplier_bootstrap(&panel, &profile, &cfg).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    assert_eq!(a.crit.to_bits(), b.crit.to_bits());
    let c = multiplier_bootstrap(&panel, &profile, &BootstrapConfig { seed: 2025, ..cfg }).unwrap();
    assert_ne!(a.crit, c.crit);
}

#[test]
fn thread_count_does_not_change_bands() {
    let panel = noisy_panel(9);
    let profile = estimate_profile(&panel, EstimatorKind::Did).unwrap();
    let cfg = BootstrapConfig::new(500, 0.05, 1);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| multiplier_bootstrap(&panel, &profile, &cfg).unwrap())
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn bands_scale_with_outcomes() {
    let panel = noisy_panel(10);
    let cfg = BootstrapConfig::new(1000, 0.05, 5);
    let profile = estimate_profile(&panel, EstimatorKind::Did).unwrap();
    let bands = multiplier_bootstrap(&panel, &profile, &cfg).unwrap();
    let masked = apply_bands(&profile, &bands).unwrap();

    for a in [4.0, 3.7, 0.01] {
        let scaled = panel.map_outcomes(|_, _, y| a * y).unwrap();
        let sprofile = estimate_profile(&scaled, EstimatorKind::Did).unwrap();
        let sbands = multiplier_bootstrap(&scaled, &sprofile, &cfg).unwrap();
        let smasked = apply_bands(&sprofile, &sbands).unwrap();
        assert!((sbands.crit - bands.crit).abs() <= 1e-9 * bands.crit);
        for (x, y) in masked.cells().iter().zip(smasked.cells()) {
            assert!((y.estimate - a * x.estimate).abs() <= 1e-9 * (a * x.estimate).abs().max(1e-9));
            let (sx, sy) = (x.se.unwrap(), y.se.unwrap());
            assert!((sy - a * sx).abs() <= 1e-9 * a * sx);
            assert_eq!(x.significant, y.significant);
        }
    }
}

#[test]
fn simultaneous_crit_dominates_pointwise_quantile() {
    let z = 1.959_963_984_540_054;
    let mut dominated = 0;
    for seed in 0..100 {
        let panel = random_panel(1000 + seed, 150, 7);
        let profile = estimate_profile(&panel, EstimatorKind::Did).unwrap();
        let panel = if profile.len() >= 10 {
            panel
        } else {
            // Too few cells; fall back to a synthetic panel with 18 cells.
            noisy_panel(seed)
        };
        let profile = estimate_profile(&panel, EstimatorKind::Did).unwrap();
        assert!(profile.len() >= 10);
        let bands =
            multiplier_bootstrap(&panel, &profile, &BootstrapConfig::new(400, 0.05, seed)).unwrap();
        if bands.crit >= z {
            dominated += 1;
        }
    }
    assert!(dominated >= 95, "{dominated}/100");
}

#[test]
fn pointwise_bands_use_normal_quantile() {
    let panel = noisy_panel(12);
    let profile = estimate_profile(&panel, EstimatorKind::Did).unwrap();
    let cfg = BootstrapConfig {
        band: BandKind::Pointwise,
        ..BootstrapConfig::new(500, 0.05, 3)
    };
    let bands = multiplier_bootstrap(&panel, &profile, &cfg).unwrap();
    assert!((bands.crit - 1.959_963_984_540_054).abs() < 1e-9);
}

#[test]
fn se_methods_agree_roughly() {
    let panel = noisy_panel(13);
    let profile = estimate_profile(&panel, EstimatorKind::Did).unwrap();
    let iqr = BootstrapConfig::new(4000, 0.05, 3);
    let sd = BootstrapConfig {
        se_method: SeMethod::Sd,
        ..iqr
    };
    let draws = bootstrap_draws(&panel, &profile, &iqr).unwrap();
    let a = bands_from_draws(&draws, EstimatorKind::Did, &iqr).unwrap();
    let b = bands_from_draws(&draws, EstimatorKind::Did, &sd).unwrap();
    // Both estimate sqrt(Σψ²)/n.
    for ((x, y), cell) in a.cells.iter().zip(&b.cells).zip(profile.cells()) {
        let psi = influence_values(&panel, EstimatorKind::Did, cell.g, cell.c).unwrap();
        let n = psi.len() as f64;
        let analytic = psi.iter().map(|v| v * v).sum::<f64>().sqrt() / n;
        assert!(
            (x.se / analytic - 1.0).abs() < 0.1,
            "iqr {} vs {analytic}",
            x.se
        );
        assert!(
            (y.se / analytic - 1.0).abs() < 0.05,
            "sd {} vs {analytic}",
            y.se
        );
    }
}

#[test]
fn mammen_weights_give_similar_bands() {
    let panel = noisy_panel(14);
    let profile = estimate_profile(&panel, EstimatorKind::Did).unwrap();
    let rad = multiplier_bootstrap(&panel, &profile, &BootstrapConfig::new(2000, 0.05, 8)).unwrap();
    let mam = multiplier_bootstrap(
        &panel,
        &profile,
        &BootstrapConfig {
            weights: WeightFamily::Mammen,
            ..BootstrapConfig::new(2000, 0.05, 8)
        },
    )
    .unwrap();
    assert_eq!(mam.weight_family, WeightFamily::Mammen);
    for (x, y) in rad.cells.iter().zip(&mam.cells) {
        assert!((x.se / y.se - 1.0).abs() < 0.15);
    }
}

#[test]
fn significance_count_matches_recount() {
    let cfg = SynthConfig {
        effect: Family::ExponentialDecay {
            scale: 0.6,
            lambda: 1.5,
        },
        n_per_group: 60,
        n_validation: 200,
        seed: 31,
        ..base_config()
    };
    let (panel, _) = generate_panel(&cfg).unwrap();
    let profile = estimate_profile(&panel, EstimatorKind::Did).unwrap();
    let bands =
        multiplier_bootstrap(&panel, &profile, &BootstrapConfig::new(1000, 0.05, 4)).unwrap();
    let masked = apply_bands(&profile, &bands).unwrap();
    let flagged = masked
        .cells()
        .iter()
        .filter(|c| c.significant == Some(true))
        .count();
    let recount = profile
        .cells()
        .iter()
        .zip(&bands.cells)
        .filter(|(c, b)| b.se > 0.0 && c.estimate.abs() > bands.crit * b.se)
        .count();
    assert_eq!(flagged, recount);
    assert!(flagged > 0 && flagged < profile.len());
    for cell in masked.cells() {
        assert_eq!(
            cell.significant.unwrap(),
            is_significant(cell.estimate, cell.se.unwrap(), bands.crit)
        );
    }
}

#[test]
fn zero_se_cells_are_excluded_and_insignificant() {
    // Group 2's outcomes never change after its baseline, and neither do the
    // validation outcomes at checkpoints 1..; its cells have zero variance.
    let mut rng = Gen::new(3);
    let grid = vec![0u64, 1, 2, 3];
    let mut ids = Vec::new();
    let mut groups = Vec::new();
    let mut outcomes = Vec::new();
    for (k, g) in [
        TreatmentStep::At(1),
        TreatmentStep::At(2),
        TreatmentStep::Never,
    ]
    .into_iter()
    .enumerate()
    {
        for i in 0..30 {
            ids.push(format!("{k}_{i}"));
            groups.push(g);
            let level = rng.gauss();
            for &c in &grid {
                let noisy = g == TreatmentStep::At(1) && c >= 1;
                outcomes.push(level + if noisy { rng.gauss() } else { 0.0 });
            }
        }
    }
    let panel = Panel::new(grid, ids, groups, outcomes).unwrap();
    let profile = estimate_profile(&panel, EstimatorKind::Did).unwrap();
    let bands =
        multiplier_bootstrap(&panel, &profile, &BootstrapConfig::new(500, 0.05, 1)).unwrap();
    let masked = apply_bands(&profile, &bands).unwrap();
    for cell in masked.cells() {
        if cell.g == 2 {
            assert!(cell.se.unwrap() < 1e-12);
            assert_eq!(cell.significant, Some(false));
        } else {
            assert!(cell.se.unwrap() > 0.01);
        }
    }
    assert!(bands.crit.is_finite());
}
