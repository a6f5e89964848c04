//! Simultaneous confidence bands via the multiplier bootstrap.
//!
//! Each instance contributes an influence value to every profile cell. A
//! bootstrap draw perturbs those values with i.i.d. mean-zero, unit-variance
//! weights and averages them; the spread of the draws gives a per-cell
//! standard error, and the distribution of the largest studentised draw
//! across cells gives one critical value that holds for the whole profile
//! at once.
//!
//! Influence values are never materialised in the bootstrap itself. Within
//! a group they are centred outcome changes, so a draw reduces to weighted
//! sums of the group-centred outcome matrix per `(group, checkpoint)`,
//! which costs `O(n * C)` per draw instead of `O(n * cells)`.

use std::fmt;
use std::str::FromStr;

use rand_core::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::estimators::{estimate_profile, EstimatorKind, MemorisationProfile};
use crate::panel::{Panel, TreatmentStep};
use crate::rng::{self, CounterRng};

/// Standard errors below this are treated as zero: the cell is left out of
/// the sup statistic and never marked significant.
pub const SE_FLOOR: f64 = 1e-12;

/// `z_{0.75} - z_{0.25}` for the standard normal.
const NORMAL_IQR: f64 = 1.348_979_500_392_163_4;

pub const MIN_DRAWS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightFamily {
    /// ±1 with probability ½ each.
    Rademacher,
    /// Mammen's two-point distribution (third moment 1).
    Mammen,
}

impl FromStr for WeightFamily {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rademacher" => Ok(Self::Rademacher),
            "mammen" => Ok(Self::Mammen),
            other => Err(format!("unknown weight family `{other}`")),
        }
    }
}

impl fmt::Display for WeightFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Rademacher => "rademacher",
            Self::Mammen => "mammen",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeMethod {
    /// Interquartile range of the draws rescaled to a normal sd.
    Iqr,
    /// Plain standard deviation of the draws.
    Sd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandKind {
    /// One sup-t critical value for all cells.
    Simultaneous,
    /// Normal quantile `z_{1-alpha/2}` per cell.
    Pointwise,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapConfig {
    pub draws: usize,
    pub alpha: f64,
    pub seed: u64,
    pub weights: WeightFamily,
    pub se_method: SeMethod,
    pub band: BandKind,
}

impl BootstrapConfig {
    pub fn new(draws: usize, alpha: f64, seed: u64) -> Self {
        Self {
            draws,
            alpha,
            seed,
            weights: WeightFamily::Rademacher,
            se_method: SeMethod::Iqr,
            band: BandKind::Simultaneous,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Bootstrap(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.draws < MIN_DRAWS {
            return Err(Error::Bootstrap(format!(
                "need at least {MIN_DRAWS} draws, got {}",
                self.draws
            )));
        }
        if (self.draws as f64) * self.alpha < 5.0 {
            return Err(Error::Bootstrap(format!(
                "{} draws are too few for a {} tail quantile (need draws * alpha >= 5)",
                self.draws, self.alpha
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandCell {
    pub g: u64,
    pub c: u64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBands {
    pub alpha: f64,
    #[serde(rename = "B")]
    pub draws: usize,
    pub seed: u64,
    pub weight_family: WeightFamily,
    pub rng: String,
    pub estimator: EstimatorKind,
    pub se_method: SeMethod,
    pub band: BandKind,
    pub crit: f64,
    pub cells: Vec<BandCell>,
}

impl ConfidenceBands {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Whether every cell's band `estimate ± crit·se` contains `truth`.
    /// Cells with a zero standard error must match exactly (to 1e-9).
    pub fn covers(
        &self,
        profile: &MemorisationProfile,
        truth: &MemorisationProfile,
    ) -> Result<bool> {
        check_same_cells(profile, truth)?;
        if profile.len() != self.cells.len() {
            return Err(Error::CellMismatch("bands and profile differ".into()));
        }
        Ok(profile
            .cells()
            .iter()
            .zip(truth.cells())
            .zip(&self.cells)
            .all(|((est, tru), band)| {
                let err = (est.estimate - tru.estimate).abs();
                if band.se < SE_FLOOR {
                    err <= 1e-9
                } else {
                    err <= self.crit * band.se
                }
            }))
    }
}

/// Bootstrap draws of the centred estimator, `draws × cells`, draw-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapDraws {
    pub cells: Vec<(u64, u64)>,
    pub draws: usize,
    pub values: Vec<f64>,
}

impl BootstrapDraws {
    pub fn draw(&self, b: usize) -> &[f64] {
        let k = self.cells.len();
        &self.values[b * k..(b + 1) * k]
    }
}

/// Influence values of all instances for every cell, column-major (one
/// column of `n` values per cell). Dense; meant for small panels.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceMatrix {
    pub cells: Vec<(u64, u64)>,
    pub n: usize,
    pub values: Vec<f64>,
}

impl InfluenceMatrix {
    pub fn column(&self, j: usize) -> &[f64] {
        &self.values[j * self.n..(j + 1) * self.n]
    }
}

/// Influence value of each instance for cell `(g, c)`.
///
/// With `ΔY` the outcome change since the pre-treatment anchor (DID) or the
/// outcome level (DIFF), trained rows get `(n/n_g)(ΔY - mean_g ΔY)`,
/// validation rows get `-(n/n_∞)(ΔY - mean_∞ ΔY)` and all other rows 0.
pub fn influence_values(panel: &Panel, kind: EstimatorKind, g: u64, c: u64) -> Result<Vec<f64>> {
    let base = panel.baseline_checkpoint(g)?;
    let col_c = panel.column(c)?;
    if c < g {
        return Err(Error::Inadmissible { g, c });
    }
    let col_b = panel.column(base)?;
    let index = panel.group_index();
    let n = panel.n_instances();
    let delta = |row: usize| match kind {
        EstimatorKind::Did => panel.outcome(row, col_c) - panel.outcome(row, col_b),
        EstimatorKind::Diff => panel.outcome(row, col_c),
    };

    let mut psi = vec![0.0; n];
    for (group, sign) in [(TreatmentStep::At(g), 1.0), (TreatmentStep::Never, -1.0)] {
        let rows = index.rows(group);
        if rows.is_empty() {
            return Err(Error::EmptyGroup(group.to_string()));
        }
        let size = rows.len() as f64;
        let mean = rows.iter().map(|&r| delta(r)).sum::<f64>() / size;
        let scale = sign * n as f64 / size;
        for &r in rows {
            psi[r] = scale * (delta(r) - mean);
        }
    }
    Ok(psi)
}

pub fn influence_matrix(panel: &Panel, profile: &MemorisationProfile) -> Result<InfluenceMatrix> {
    let mut values = Vec::with_capacity(panel.n_instances() * profile.len());
    for cell in profile.cells() {
        values.extend(influence_values(panel, profile.kind(), cell.g, cell.c)?);
    }
    Ok(InfluenceMatrix {
        cells: profile.cells().iter().map(|x| x.key()).collect(),
        n: panel.n_instances(),
        values,
    })
}

#[derive(Debug, Clone, Copy)]
struct CellPlan {
    slot: usize,
    col: usize,
    base: Option<usize>,
}

/// Precomputed state shared by all bootstrap draws.
struct Kernel {
    width: usize,
    centered: Vec<f64>,
    row_slot: Vec<usize>,
    inv_size: Vec<f64>,
    never_slot: usize,
    plan: Vec<CellPlan>,
}

impl Kernel {
    fn new(panel: &Panel, profile: &MemorisationProfile) -> Result<Self> {
        let w = panel.n_checkpoints();
        let index = panel.group_index();
        let slots: Vec<TreatmentStep> = index.groups().collect();
        let mut row_slot = vec![0; panel.n_instances()];
        let mut centered = panel.outcomes().to_vec();
        let mut inv_size = Vec::with_capacity(slots.len());
        for (slot, (_, rows)) in index.iter().enumerate() {
            let mut mean = vec![0.0; w];
            for &r in rows {
                row_slot[r] = slot;
                for (m, y) in mean.iter_mut().zip(panel.row(r)) {
                    *m += y;
                }
            }
            let size = rows.len() as f64;
            mean.iter_mut().for_each(|m| *m /= size);
            for &r in rows {
                for (y, m) in centered[r * w..(r + 1) * w].iter_mut().zip(&mean) {
                    *y -= m;
                }
            }
            inv_size.push(1.0 / size);
        }
        let never_slot = slots.len() - 1;
        debug_assert!(slots[never_slot].is_never());

        let mut plan = Vec::with_capacity(profile.len());
        for cell in profile.cells() {
            let slot = slots
                .binary_search(&TreatmentStep::At(cell.g))
                .map_err(|_| Error::UnknownTreatment(cell.g))?;
            let col = panel.column(cell.c)?;
            let base = match profile.kind() {
                EstimatorKind::Did => Some(panel.column(panel.baseline_checkpoint(cell.g)?)?),
                EstimatorKind::Diff => None,
            };
            plan.push(CellPlan { slot, col, base });
        }
        Ok(Self {
            width: w,
            centered,
            row_slot,
            inv_size,
            never_slot,
            plan,
        })
    }

    /// Analytic sd of each cell's draw: `sqrt(Σ ψ²) / n`.
    fn analytic_sd(&self) -> Vec<f64> {
        let slots = self.inv_size.len();
        let w = self.width;
        // Σ over rows of (Ỹ_c - Ỹ_b)² per slot is needed per cell; collect
        // row lists per slot once.
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); slots];
        for (r, &s) in self.row_slot.iter().enumerate() {
            members[s].push(r);
        }
        let ss = |slot: usize, col: usize, base: Option<usize>| -> f64 {
            members[slot]
                .iter()
                .map(|&r| {
                    let row = &self.centered[r * w..(r + 1) * w];
                    let d = row[col] - base.map_or(0.0, |b| row[b]);
                    d * d
                })
                .sum()
        };
        self.plan
            .iter()
            .map(|p| {
                let ig = self.inv_size[p.slot];
                let iv = self.inv_size[self.never_slot];
                (ss(p.slot, p.col, p.base) * ig * ig + ss(self.never_slot, p.col, p.base) * iv * iv)
                    .sqrt()
            })
            .collect()
    }

    fn draw(&self, weights: WeightFamily, seed: u64, b: u64) -> Vec<f64> {
        let w = self.width;
        let n = self.row_slot.len();
        let mut rng = CounterRng::stream(seed, b);
        let mut sums = vec![0.0; self.inv_size.len() * w];
        let mut bits = 0u64;
        for r in 0..n {
            let v = match weights {
                WeightFamily::Rademacher => {
                    if r % 64 == 0 {
                        bits = rng.next_u64();
                    }
                    if (bits >> (r % 64)) & 1 == 1 {
                        1.0
                    } else {
                        -1.0
                    }
                }
                WeightFamily::Mammen => mammen(rng.next_f64()),
            };
            let slot = self.row_slot[r];
            let acc = &mut sums[slot * w..(slot + 1) * w];
            for (a, y) in acc.iter_mut().zip(&self.centered[r * w..(r + 1) * w]) {
                *a += v * y;
            }
        }
        let never = &sums[self.never_slot * w..(self.never_slot + 1) * w];
        let iv = self.inv_size[self.never_slot];
        self.plan
            .iter()
            .map(|p| {
                let own = &sums[p.slot * w..(p.slot + 1) * w];
                let ig = self.inv_size[p.slot];
                match p.base {
                    Some(b) => (own[p.col] - own[b]) * ig - (never[p.col] - never[b]) * iv,
                    None => own[p.col] * ig - never[p.col] * iv,
                }
            })
            .collect()
    }
}

#[inline]
fn mammen(u: f64) -> f64 {
    let s5 = 5f64.sqrt();
    let p = (s5 + 1.0) / (2.0 * s5);
    if u < p {
        -(s5 - 1.0) / 2.0
    } else {
        (s5 + 1.0) / 2.0
    }
}

fn check_same_cells(a: &MemorisationProfile, b: &MemorisationProfile) -> Result<()> {
    if a.len() != b.len()
        || a.cells()
            .iter()
            .zip(b.cells())
            .any(|(x, y)| x.key() != y.key())
    {
        return Err(Error::CellMismatch(
            "profiles cover different (g, c) cells".into(),
        ));
    }
    Ok(())
}

/// Checks that `profile` has exactly the admissible cells of `panel`.
fn check_profile_matches_panel(panel: &Panel, profile: &MemorisationProfile) -> Result<()> {
    let expected = estimate_profile(panel, profile.kind())?;
    check_same_cells(&expected, profile)
}

/// Raw bootstrap draws of every profile cell.
pub fn bootstrap_draws(
    panel: &Panel,
    profile: &MemorisationProfile,
    config: &BootstrapConfig,
) -> Result<BootstrapDraws> {
    config.validate()?;
    check_profile_matches_panel(panel, profile)?;
    let kernel = Kernel::new(panel, profile)?;
    if kernel.analytic_sd().iter().all(|&sd| sd < SE_FLOOR) {
        return Err(Error::Degenerate);
    }
    let per_draw: Vec<Vec<f64>> = (0..config.draws as u64)
        .into_par_iter()
        .map(|b| kernel.draw(config.weights, config.seed, b))
        .collect();
    Ok(BootstrapDraws {
        cells: profile.cells().iter().map(|x| x.key()).collect(),
        draws: config.draws,
        values: per_draw.concat(),
    })
}

/// Empirical quantile by inverting the empirical CDF: the `ceil(p·n)`-th
/// order statistic of `sorted`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let k = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

/// Standard errors per column and the critical value of a set of draws.
pub fn summarize_draws(
    values: &[f64],
    n_cols: usize,
    alpha: f64,
    se_method: SeMethod,
    band: BandKind,
) -> Result<(Vec<f64>, f64)> {
    let draws = values.len() / n_cols;
    let mut column = vec![0.0; draws];
    let se: Vec<f64> = (0..n_cols)
        .map(|j| {
            for (b, v) in column.iter_mut().enumerate() {
                *v = values[b * n_cols + j];
            }
            match se_method {
                SeMethod::Iqr => {
                    column.sort_unstable_by(f64::total_cmp);
                    (quantile_sorted(&column, 0.75) - quantile_sorted(&column, 0.25)) / NORMAL_IQR
                }
                SeMethod::Sd => {
                    let m = column.iter().sum::<f64>() / draws as f64;
                    (column.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (draws - 1) as f64)
                        .sqrt()
                }
            }
        })
        .collect();

    let usable: Vec<usize> = (0..n_cols).filter(|&j| se[j] >= SE_FLOOR).collect();
    if usable.is_empty() {
        return Err(Error::Degenerate);
    }
    let crit = match band {
        BandKind::Pointwise => {
            let normal = Normal::standard();
            normal.inverse_cdf(1.0 - alpha / 2.0)
        }
        BandKind::Simultaneous => {
            let mut sup: Vec<f64> = (0..draws)
                .map(|b| {
                    let row = &values[b * n_cols..(b + 1) * n_cols];
                    usable
                        .iter()
                        .map(|&j| row[j].abs() / se[j])
                        .fold(0.0, f64::max)
                })
                .collect();
            sup.sort_unstable_by(f64::total_cmp);
            quantile_sorted(&sup, 1.0 - alpha)
        }
    };
    Ok((se, crit))
}

pub fn bands_from_draws(
    draws: &BootstrapDraws,
    kind: EstimatorKind,
    config: &BootstrapConfig,
) -> Result<ConfidenceBands> {
    let (se, crit) = summarize_draws(
        &draws.values,
        draws.cells.len(),
        config.alpha,
        config.se_method,
        config.band,
    )?;
    Ok(ConfidenceBands {
        alpha: config.alpha,
        draws: config.draws,
        seed: config.seed,
        weight_family: config.weights,
        rng: rng::ALGORITHM.to_string(),
        estimator: kind,
        se_method: config.se_method,
        band: config.band,
        crit,
        cells: draws
            .cells
            .iter()
            .zip(se)
            .map(|(&(g, c), se)| BandCell { g, c, se })
            .collect(),
    })
}

/// Confidence bands for `profile`, which must have been estimated from
/// `panel`. Deterministic in `(panel, profile, config)`.
pub fn multiplier_bootstrap(
    panel: &Panel,
    profile: &MemorisationProfile,
    config: &BootstrapConfig,
) -> Result<ConfidenceBands> {
    let draws = bootstrap_draws(panel, profile, config)?;
    bands_from_draws(&draws, profile.kind(), config)
}

/// Copies standard errors into the profile and marks cells whose estimate
/// exceeds `crit · se` in absolute value as significant.
pub fn apply_bands(
    profile: &MemorisationProfile,
    bands: &ConfidenceBands,
) -> Result<MemorisationProfile> {
    if profile.len() != bands.cells.len()
        || profile
            .cells()
            .iter()
            .zip(&bands.cells)
            .any(|(p, b)| p.key() != (b.g, b.c))
    {
        return Err(Error::CellMismatch(
            "bands were computed for other cells".into(),
        ));
    }
    let mut out = profile.clone();
    for (cell, band) in out.cells_mut().iter_mut().zip(&bands.cells) {
        cell.se = Some(band.se);
        cell.significant = Some(is_significant(cell.estimate, band.se, bands.crit));
    }
    Ok(out)
}

pub fn is_significant(estimate: f64, se: f64, crit: f64) -> bool {
    se >= SE_FLOOR && estimate.abs() > crit * se
}
