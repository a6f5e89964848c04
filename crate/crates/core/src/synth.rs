//! Synthetic potential-outcomes panels with known memorisation, and the
//! Monte Carlo harness that checks the estimators against them.
//!
//! An instance `x` in group `G(x)` has outcome
//!
//! ```text
//! Y_c(x) = trend(c) + trend_gap·c·[G(x) trained] + validation_shift·[G(x) = inf]
//!        + α_x + (effect(G(x), c) + η_x)·[treatment applies at c] + ε_{x,c}
//! ```
//!
//! with `α_x ~ N(0, instance_sd²)`, `η_x ~ N(0, effect_sd²)` and
//! `ε_{x,c} ~ N(0, noise_sd²)`. Treatment applies at `c >= G(x)` and, with
//! anticipation `k`, also at the `k` grid checkpoints just before `G(x)`,
//! where the instantaneous effect `effect(g, g)` leaks.
//!
//! `trend_gap = 0` gives parallel trends, `anticipation = 0` gives no
//! anticipation, and `validation_shift = 0` keeps trained and validation
//! instances exchangeable.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    estimate_profile, EstimatorKind, MemorisationProfile, ProfileCell, RunEnsemble,
};
use crate::inference::{multiplier_bootstrap, BootstrapConfig};
use crate::panel::{Panel, TreatmentStep};
use crate::rng::{derive_seed, CounterRng};

/// Named parametric curve over a step offset `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    Constant { value: f64 },
    Linear { intercept: f64, slope: f64 },
    ExponentialDecay { scale: f64, lambda: f64 },
}

impl Family {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            Family::Constant { value } => value,
            Family::Linear { intercept, slope } => intercept + slope * t,
            Family::ExponentialDecay { scale, lambda } => scale * (-t / lambda).exp(),
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        let ok = match *self {
            Family::Constant { value } => value.is_finite(),
            Family::Linear { intercept, slope } => intercept.is_finite() && slope.is_finite(),
            Family::ExponentialDecay { scale, lambda } => {
                scale.is_finite() && lambda.is_finite() && lambda > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid {what} parameters: {self:?}"
            )))
        }
    }
}

fn zero_family() -> Family {
    Family::Constant { value: 0.0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_per_group: usize,
    pub n_validation: usize,
    pub treatment_grid: Vec<u64>,
    pub checkpoint_grid: Vec<u64>,
    /// Common trend as a function of the checkpoint step.
    #[serde(default = "zero_family")]
    pub trend: Family,
    /// Extra slope per step for trained groups only.
    #[serde(default)]
    pub trend_gap: f64,
    /// Level shift applied to validation instances only.
    #[serde(default)]
    pub validation_shift: f64,
    #[serde(default)]
    pub instance_sd: f64,
    pub noise_sd: f64,
    /// Per-instance effect heterogeneity.
    #[serde(default)]
    pub effect_sd: f64,
    #[serde(default)]
    pub anticipation: usize,
    /// Memorisation as a function of time since treatment `c - g`.
    pub effect: Family,
    pub seed: u64,
}

impl SynthConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_per_group == 0 || self.n_validation == 0 {
            return bad("group sizes must be positive".into());
        }
        if self.checkpoint_grid.is_empty() || self.treatment_grid.is_empty() {
            return Err(Error::InvalidGrid("grids must be non-empty".into()));
        }
        if self.checkpoint_grid.windows(2).any(|w| w[0] >= w[1])
            || self.treatment_grid.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::InvalidGrid(
                "grids must be strictly increasing".into(),
            ));
        }
        let last = *self.checkpoint_grid.last().expect("non-empty");
        for &g in &self.treatment_grid {
            if g == 0 {
                return Err(Error::InvalidGrid(
                    "treatment steps must be positive".into(),
                ));
            }
            if self.checkpoint_grid[0] >= g {
                return Err(Error::NoBaseline(g));
            }
            if g > last {
                return Err(Error::InvalidGrid(format!(
                    "treatment step {g} is after the last checkpoint {last}"
                )));
            }
        }
        for (name, sd) in [
            ("instance_sd", self.instance_sd),
            ("noise_sd", self.noise_sd),
            ("effect_sd", self.effect_sd),
        ] {
            if !(sd.is_finite() && sd >= 0.0) {
                return bad(format!("{name} must be finite and non-negative"));
            }
        }
        if !self.trend_gap.is_finite() || !self.validation_shift.is_finite() {
            return bad("trend_gap and validation_shift must be finite".into());
        }
        self.trend.validate("trend")?;
        self.effect.validate("effect")?;
        Ok(())
    }

    /// `σ² = instance_sd² + noise_sd²`.
    pub fn outcome_variance(&self) -> f64 {
        self.instance_sd.powi(2) + self.noise_sd.powi(2)
    }

    /// Correlation of an instance's untreated outcomes at two checkpoints.
    pub fn induced_correlation(&self) -> f64 {
        let total = self.outcome_variance();
        if total == 0.0 {
            0.0
        } else {
            self.instance_sd.powi(2) / total
        }
    }

    pub fn n_rows(&self) -> usize {
        self.treatment_grid.len() * self.n_per_group + self.n_validation
    }

    /// True memorisation of macro-batch `g` at checkpoint `c >= g`.
    pub fn effect_at(&self, g: u64, c: u64) -> f64 {
        self.effect.eval(c as f64 - g as f64)
    }

    /// Whether treatment at `g` affects outcomes at `c`, counting the
    /// anticipation leak.
    pub fn treatment_applies(&self, g: u64, c: u64) -> bool {
        if c >= g {
            return true;
        }
        let first = self.checkpoint_grid.partition_point(|&x| x < g);
        let leak_start = first.saturating_sub(self.anticipation);
        self.checkpoint_grid[leak_start..first].contains(&c)
    }

    /// Effect applied at `c` to an instance treated at `g`.
    fn applied_effect(&self, g: u64, c: u64) -> f64 {
        if c >= g {
            self.effect_at(g, c)
        } else if self.treatment_applies(g, c) {
            self.effect_at(g, g)
        } else {
            0.0
        }
    }

    /// Noise-free potential outcome at checkpoint `c` of an instance in group
    /// `membership` with fixed effect `fixed_effect`, had it been treated at
    /// `treatment`.
    pub fn potential_outcome(
        &self,
        membership: TreatmentStep,
        treatment: TreatmentStep,
        c: u64,
        fixed_effect: f64,
    ) -> f64 {
        let group_term = match membership {
            TreatmentStep::At(_) => self.trend_gap * c as f64,
            TreatmentStep::Never => self.validation_shift,
        };
        let effect = match treatment {
            TreatmentStep::At(g) => self.applied_effect(g, c),
            TreatmentStep::Never => 0.0,
        };
        self.trend.eval(c as f64) + group_term + fixed_effect + effect
    }

    /// Closed-form bias of an estimator at cell `(g, c)` under this regime.
    pub fn expected_bias(&self, kind: EstimatorKind, g: u64, c: u64) -> f64 {
        match kind {
            EstimatorKind::Diff => self.trend_gap * c as f64 - self.validation_shift,
            EstimatorKind::Did => {
                let first = self.checkpoint_grid.partition_point(|&x| x < g);
                let b = self.checkpoint_grid[first - 1];
                let leak = if self.treatment_applies(g, b) {
                    self.effect_at(g, g)
                } else {
                    0.0
                };
                self.trend_gap * (c - b) as f64 - leak
            }
        }
    }

    /// Sampling variance of an estimator at any cell of group `g`, assuming
    /// homogeneous effects: `σ²/n_g + σ²/n_∞` for the difference estimator and
    /// `2σ²(1-ρ)/n_g + 2σ²(1-ρ)/n_∞` for difference-in-differences.
    pub fn predicted_variance(&self, kind: EstimatorKind) -> f64 {
        let sigma2 = self.outcome_variance();
        let inv = 1.0 / self.n_per_group as f64 + 1.0 / self.n_validation as f64;
        match kind {
            EstimatorKind::Diff => sigma2 * inv,
            EstimatorKind::Did => 2.0 * sigma2 * (1.0 - self.induced_correlation()) * inv,
        }
    }

    pub fn regime(&self) -> RegimeFlags {
        RegimeFlags {
            exchangeable: self.validation_shift == 0.0,
            parallel_trends: self.trend_gap == 0.0,
            no_anticipation: self.anticipation == 0,
        }
    }

    fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegimeFlags {
    pub exchangeable: bool,
    pub parallel_trends: bool,
    pub no_anticipation: bool,
}

/// Ground truth implied by a config.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    pub profile: MemorisationProfile,
    pub regime: RegimeFlags,
}

pub fn truth(config: &SynthConfig) -> Result<SynthTruth> {
    config.validate()?;
    let mut cells = Vec::new();
    for &g in &config.treatment_grid {
        for &c in config.checkpoint_grid.iter().filter(|&&c| c >= g) {
            cells.push(ProfileCell::new(g, c, config.effect_at(g, c)));
        }
    }
    Ok(SynthTruth {
        profile: MemorisationProfile::from_cells(EstimatorKind::Did, "truth", cells)?,
        regime: config.regime(),
    })
}

#[inline]
fn normal(rng: &mut CounterRng) -> f64 {
    StandardNormal.sample(rng)
}

/// Draws a panel from `config`. Trained instances come first in treatment
/// order, then validation instances. Deterministic in the config.
pub fn generate_panel(config: &SynthConfig) -> Result<(Panel, SynthTruth)> {
    let truth = truth(config)?;
    let grid = &config.checkpoint_grid;
    let n = config.n_rows();
    let mut ids = Vec::with_capacity(n);
    let mut groups = Vec::with_capacity(n);
    for &g in &config.treatment_grid {
        for i in 0..config.n_per_group {
            ids.push(format!("g{g}_{i}"));
            groups.push(TreatmentStep::At(g));
        }
    }
    for i in 0..config.n_validation {
        ids.push(format!("v_{i}"));
        groups.push(TreatmentStep::Never);
    }

    // Noise-free part for each (group, checkpoint), shared by its members.
    let mean_row = |group: TreatmentStep| -> Vec<f64> {
        grid.iter()
            .map(|&c| config.potential_outcome(group, group, c, 0.0))
            .collect()
    };
    let applies_row = |group: TreatmentStep| -> Vec<bool> {
        grid.iter()
            .map(|&c| group.step().is_some_and(|g| config.treatment_applies(g, c)))
            .collect()
    };

    let mut rng = CounterRng::new(config.seed);
    let mut outcomes = Vec::with_capacity(n * grid.len());
    let mut cached: Option<(TreatmentStep, Vec<f64>, Vec<bool>)> = None;
    for &group in &groups {
        if cached.as_ref().is_none_or(|(g, _, _)| *g != group) {
            cached = Some((group, mean_row(group), applies_row(group)));
        }
        let (_, means, applies) = cached.as_ref().expect("filled above");
        let alpha = config.instance_sd * normal(&mut rng);
        let eta = config.effect_sd * normal(&mut rng);
        for (m, &on) in means.iter().zip(applies) {
            let eps = config.noise_sd * normal(&mut rng);
            outcomes.push(m + alpha + if on { eta } else { 0.0 } + eps);
        }
    }

    let panel = Panel::new(grid.clone(), ids, groups, outcomes)?;
    Ok((panel, truth))
}

/// Final-checkpoint outcomes of one instance from treatment group `g` over
/// independently trained runs with and without it. Run-to-run variation is
/// `noise_sd`; the instance's fixed effect is shared by all runs.
pub fn run_ensemble(config: &SynthConfig, g: u64, runs: usize, seed: u64) -> Result<RunEnsemble> {
    config.validate()?;
    if runs == 0 {
        return Err(Error::Config("need at least one run".into()));
    }
    let t = *config.checkpoint_grid.last().expect("validated");
    let mut rng = CounterRng::new(seed);
    let alpha = config.instance_sd * normal(&mut rng);
    let member = TreatmentStep::At(g);
    let mut draw = |treatment| {
        (0..runs)
            .map(|_| {
                config.potential_outcome(member, treatment, t, alpha)
                    + config.noise_sd * normal(&mut rng)
            })
            .collect::<Vec<f64>>()
    };
    let with_x = draw(TreatmentStep::At(g));
    let without_x = draw(TreatmentStep::Never);
    Ok(RunEnsemble { with_x, without_x })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloCell {
    pub g: u64,
    pub c: u64,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    pub variance: f64,
    pub predicted_variance: f64,
    /// Monte Carlo standard error of `mean`: `sqrt(variance / R)`.
    pub mcse: f64,
    pub expected_bias: f64,
}

impl MonteCarloCell {
    /// Bias in units of its Monte Carlo standard error.
    pub fn z(&self) -> f64 {
        if self.mcse == 0.0 {
            if self.bias == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.bias / self.mcse
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub estimator: EstimatorKind,
    pub replications: usize,
    pub regime: RegimeFlags,
    pub cells: Vec<MonteCarloCell>,
    /// Share of replications whose simultaneous bands covered the whole
    /// true profile.
    pub coverage: Option<f64>,
}

impl MonteCarloReport {
    pub fn max_abs_z(&self) -> f64 {
        self.cells.iter().map(|c| c.z().abs()).fold(0.0, f64::max)
    }

    /// Cells whose bias exceeds `threshold` Monte Carlo standard errors.
    pub fn biased_cells(&self, threshold: f64) -> Vec<&MonteCarloCell> {
        self.cells
            .iter()
            .filter(|c| c.z().abs() >= threshold)
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn summary(&self) -> String {
        let biased = self.biased_cells(4.0).len();
        let mut out = format!(
            "estimator {}, {} replications, {} cells, max |bias|/mcse = {:.3}\n",
            self.estimator,
            self.replications,
            self.cells.len(),
            self.max_abs_z()
        );
        if biased == 0 {
            out.push_str("all cells unbiased (|bias| < 4 mcse)\n");
        } else {
            out.push_str(&format!("{biased} cells biased (|bias| >= 4 mcse)\n"));
        }
        if let Some(cov) = self.coverage {
            out.push_str(&format!("simultaneous coverage {cov:.4}\n"));
        }
        out
    }
}

pub const MIN_REPLICATIONS: usize = 100;

/// Runs `replications` independent generate → estimate (→ bands) cycles.
/// Replication `r` uses seed `derive_seed(config.seed, r)` for the panel and
/// `derive_seed(bands.seed, r)` for the bootstrap, so results do not depend
/// on the thread schedule.
pub fn monte_carlo(
    config: &SynthConfig,
    kind: EstimatorKind,
    replications: usize,
    bands: Option<&BootstrapConfig>,
) -> Result<MonteCarloReport> {
    config.validate()?;
    if replications < MIN_REPLICATIONS {
        return Err(Error::Config(format!(
            "need at least {MIN_REPLICATIONS} replications, got {replications}"
        )));
    }
    if bands.is_some() && config.noise_sd == 0.0 {
        return Err(Error::Config(
            "bands requested for a noiseless configuration".into(),
        ));
    }
    let truth = truth(config)?;

    let runs: Vec<(Vec<f64>, Option<bool>)> = (0..replications as u64)
        .into_par_iter()
        .map(|r| -> Result<_> {
            let (panel, _) = generate_panel(&config.with_seed(derive_seed(config.seed, r)))?;
            let profile = estimate_profile(&panel, kind)?;
            let covered = match bands {
                Some(b) => {
                    let cfg = BootstrapConfig {
                        seed: derive_seed(b.seed, r),
                        ..*b
                    };
                    let ci = multiplier_bootstrap(&panel, &profile, &cfg)?;
                    Some(ci.covers(&profile, &truth.profile)?)
                }
                None => None,
            };
            Ok((profile.estimates(), covered))
        })
        .collect::<Result<_>>()?;

    let r = replications as f64;
    let predicted = config.predicted_variance(kind);
    let cells = truth
        .profile
        .cells()
        .iter()
        .enumerate()
        .map(|(j, cell)| {
            let mean = runs.iter().map(|(e, _)| e[j]).sum::<f64>() / r;
            let variance = runs.iter().map(|(e, _)| (e[j] - mean).powi(2)).sum::<f64>() / (r - 1.0);
            MonteCarloCell {
                g: cell.g,
                c: cell.c,
                truth: cell.estimate,
                mean,
                bias: mean - cell.estimate,
                variance,
                predicted_variance: predicted,
                mcse: (variance / r).sqrt(),
                expected_bias: config.expected_bias(kind, cell.g, cell.c),
            }
        })
        .collect();
    let coverage = bands.map(|_| runs.iter().filter(|(_, c)| *c == Some(true)).count() as f64 / r);

    Ok(MonteCarloReport {
        estimator: kind,
        replications,
        regime: truth.regime,
        cells,
        coverage,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    Unbiased,
    BiasedUp,
    BiasedDown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Regime {
    pub name: &'static str,
    pub description: &'static str,
    pub config: SynthConfig,
    pub diff: Expectation,
    pub did: Expectation,
}

impl Regime {
    pub fn expectation(&self, kind: EstimatorKind) -> Expectation {
        match kind {
            EstimatorKind::Diff => self.diff,
            EstimatorKind::Did => self.did,
        }
    }
}

/// Baseline regime shared by [`regime_suite`]: 4 macro-batches over
/// checkpoints 0..=6, decaying memorisation, ρ = 0.8.
pub fn base_config() -> SynthConfig {
    SynthConfig {
        n_per_group: 40,
        n_validation: 160,
        treatment_grid: vec![1, 2, 3, 4],
        checkpoint_grid: (0..=6).collect(),
        trend: Family::Linear {
            intercept: -3.0,
            slope: 0.1,
        },
        trend_gap: 0.0,
        validation_shift: 0.0,
        instance_sd: 1.0,
        noise_sd: 0.5,
        effect_sd: 0.0,
        anticipation: 0,
        effect: Family::ExponentialDecay {
            scale: 0.5,
            lambda: 2.0,
        },
        seed: 0x5EED_0001,
    }
}

/// The canonical regimes: (a) all assumptions hold, (b) validation shifted
/// (exchangeability broken, parallel trends intact), (c) trained groups on a
/// steeper trend, (d) one checkpoint of anticipation.
pub fn regime_suite() -> Vec<Regime> {
    let base = base_config();
    vec![
        Regime {
            name: "a",
            description: "all assumptions hold",
            config: base.clone(),
            diff: Expectation::Unbiased,
            did: Expectation::Unbiased,
        },
        Regime {
            name: "b",
            description: "validation instances shifted by +0.2; parallel trends hold",
            config: SynthConfig {
                validation_shift: 0.2,
                seed: 0x5EED_0002,
                ..base.clone()
            },
            diff: Expectation::BiasedDown,
            did: Expectation::Unbiased,
        },
        Regime {
            name: "c",
            description: "trained groups gain 0.05 per step over validation",
            config: SynthConfig {
                trend_gap: 0.05,
                seed: 0x5EED_0003,
                ..base.clone()
            },
            diff: Expectation::BiasedUp,
            did: Expectation::BiasedUp,
        },
        Regime {
            name: "d",
            description: "memorisation leaks one checkpoint before treatment",
            config: SynthConfig {
                anticipation: 1,
                seed: 0x5EED_0004,
                ..base
            },
            diff: Expectation::Unbiased,
            did: Expectation::BiasedDown,
        },
    ]
}
