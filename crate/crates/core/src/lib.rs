//! Counterfactual memorisation profiles from checkpoint panels.
//!
//! A panel records, for a sample of training instances and held-out
//! validation instances, a performance outcome at every model checkpoint.
//! Each training instance is tagged with the step at which its macro-batch
//! was trained on. From such a panel this crate estimates the memorisation
//! profile (the effect of training on a macro-batch at step `g` on the
//! model's performance at checkpoint `c >= g`) with difference or
//! difference-in-differences estimators, attaches simultaneous bootstrap
//! confidence bands, and summarises the profile as instantaneous,
//! persistent and residual series.
//!
//! [`synth`] generates panels with a known profile and controllable
//! assumption violations, and runs Monte Carlo checks of the estimators.
//!
//! ```
//! use memprof::{estimate_profile, generate_panel, synth, EstimatorKind};
//!
//! let config = synth::base_config();
//! let (panel, truth) = generate_panel(&config).unwrap();
//! let profile = estimate_profile(&panel, EstimatorKind::Did).unwrap();
//! assert_eq!(profile.len(), truth.profile.len());
//! ```

pub mod cli;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod panel;
pub mod profile;
pub mod report;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
pub use estimators::{
    architectural_estimate, did_estimate, diff_estimate, estimate_profile, extractable_estimate,
    EstimatorKind, MemorisationProfile, ProfileCell, RunEnsemble,
};
pub use inference::{
    apply_bands, influence_values, multiplier_bootstrap, BootstrapConfig, ConfidenceBands,
    WeightFamily,
};
pub use panel::{load_panel, CheckpointStep, Panel, TreatmentStep};
pub use profile::{
    instantaneous, persistent_average, profile_correlation, residual, CorrelationMode, Series,
    SeriesKind,
};
pub use synth::{generate_panel, monte_carlo, regime_suite, SynthConfig};
