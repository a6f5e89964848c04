//! Point estimators of counterfactual memorisation.
//!
//! The difference estimator compares a trained macro-batch with the
//! validation group at the same checkpoint. The difference-in-differences
//! estimator compares their changes since the checkpoint preceding
//! treatment, which removes common trends and per-instance fixed effects.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{format_f64, CheckpointStep, Panel, TreatmentStep};

pub const PROFILE_HEADER: [&str; 5] = ["g", "c", "estimate", "se", "significant"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Diff,
    Did,
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimatorKind::Diff => "diff",
            EstimatorKind::Did => "did",
        })
    }
}

impl FromStr for EstimatorKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "diff" => Ok(EstimatorKind::Diff),
            "did" => Ok(EstimatorKind::Did),
            other => Err(format!(
                "unknown estimator `{other}` (expected diff or did)"
            )),
        }
    }
}

/// One entry of a memorisation profile. `c >= g` always holds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileCell {
    pub g: u64,
    pub c: CheckpointStep,
    pub estimate: f64,
    pub se: Option<f64>,
    pub significant: Option<bool>,
}

impl ProfileCell {
    pub fn new(g: u64, c: CheckpointStep, estimate: f64) -> Self {
        Self {
            g,
            c,
            estimate,
            se: None,
            significant: None,
        }
    }

    pub fn key(&self) -> (u64, u64) {
        (self.g, self.c)
    }
}

/// Upper-triangular matrix of memorisation estimates over treatment step
/// `g` (rows) and checkpoint `c >= g` (columns). Cells are kept sorted by
/// `(g, c)`; cells with `c < g` are absent rather than stored as zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct MemorisationProfile {
    kind: EstimatorKind,
    metric_name: String,
    cells: Vec<ProfileCell>,
}

impl MemorisationProfile {
    /// Validates and sorts `cells`. Every `(g, c)` with `c >= g` over the
    /// observed steps must appear exactly once.
    pub fn from_cells(
        kind: EstimatorKind,
        metric_name: impl Into<String>,
        mut cells: Vec<ProfileCell>,
    ) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::CellMismatch("profile has no cells".into()));
        }
        for cell in &cells {
            if cell.c < cell.g {
                return Err(Error::Inadmissible {
                    g: cell.g,
                    c: cell.c,
                });
            }
            if cell.significant.is_some() && cell.se.is_none() {
                return Err(Error::CellMismatch(format!(
                    "cell ({}, {}) has a significance flag but no se",
                    cell.g, cell.c
                )));
            }
        }
        cells.sort_by_key(ProfileCell::key);
        if let Some(w) = cells.windows(2).find(|w| w[0].key() == w[1].key()) {
            return Err(Error::CellMismatch(format!(
                "duplicate cell ({}, {})",
                w[0].g, w[0].c
            )));
        }
        let profile = Self {
            kind,
            metric_name: metric_name.into(),
            cells,
        };
        let checkpoints = profile.checkpoint_steps();
        for g in profile.treatment_steps() {
            let expected = checkpoints.iter().filter(|&&c| c >= g).count();
            let found = profile.row(g).count();
            if expected != found {
                return Err(Error::CellMismatch(format!(
                    "row g={g} has {found} cells, expected {expected}"
                )));
            }
        }
        Ok(profile)
    }

    pub fn kind(&self) -> EstimatorKind {
        self.kind
    }

    pub fn metric_name(&self) -> &str {
        &self.metric_name
    }

    pub fn cells(&self) -> &[ProfileCell] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell(&self, g: u64, c: CheckpointStep) -> Option<&ProfileCell> {
        self.cells
            .binary_search_by_key(&(g, c), ProfileCell::key)
            .ok()
            .map(|i| &self.cells[i])
    }

    /// Cells of treatment step `g`, in checkpoint order.
    pub fn row(&self, g: u64) -> impl Iterator<Item = &ProfileCell> {
        let start = self.cells.partition_point(|x| x.g < g);
        self.cells[start..].iter().take_while(move |x| x.g == g)
    }

    pub fn treatment_steps(&self) -> Vec<u64> {
        let mut out: Vec<u64> = self.cells.iter().map(|x| x.g).collect();
        out.dedup();
        out
    }

    pub fn checkpoint_steps(&self) -> Vec<u64> {
        let mut out: Vec<u64> = self.cells.iter().map(|x| x.c).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn estimates(&self) -> Vec<f64> {
        self.cells.iter().map(|x| x.estimate).collect()
    }

    pub fn has_bands(&self) -> bool {
        self.cells.iter().all(|x| x.se.is_some())
    }

    /// Same cells with new estimates (e.g. for perturbation tests).
    pub fn with_estimates(&self, estimates: &[f64]) -> Result<Self> {
        if estimates.len() != self.cells.len() {
            return Err(Error::Shape(format!(
                "{} estimates for {} cells",
                estimates.len(),
                self.cells.len()
            )));
        }
        let mut out = self.clone();
        for (cell, &e) in out.cells.iter_mut().zip(estimates) {
            cell.estimate = e;
        }
        Ok(out)
    }

    pub(crate) fn cells_mut(&mut self) -> &mut [ProfileCell] {
        &mut self.cells
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        out.write_record(PROFILE_HEADER)?;
        for cell in &self.cells {
            out.write_record([
                cell.g.to_string(),
                cell.c.to_string(),
                format_f64(cell.estimate),
                cell.se.map(format_f64).unwrap_or_default(),
                cell.significant.map(|s| s.to_string()).unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    /// Reads a profile CSV (`g,c,estimate,se,significant`). The file does not
    /// record which estimator produced it, so the caller supplies `kind`.
    pub fn read_csv<R: Read>(
        source: R,
        kind: EstimatorKind,
        metric_name: impl Into<String>,
    ) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(source);
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if header != PROFILE_HEADER {
            return Err(Error::BadHeader {
                expected: PROFILE_HEADER.join(","),
                found: header.join(","),
            });
        }
        let mut cells = Vec::new();
        for record in reader.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let bad = |message: String| Error::Parse { line, message };
            if record.len() != 5 {
                return Err(bad(format!("expected 5 fields, found {}", record.len())));
            }
            let g: u64 = record[0]
                .parse()
                .map_err(|_| bad(format!("bad g `{}`", &record[0])))?;
            let c: u64 = record[1]
                .parse()
                .map_err(|_| bad(format!("bad c `{}`", &record[1])))?;
            let estimate: f64 = record[2]
                .parse()
                .map_err(|_| bad(format!("bad estimate `{}`", &record[2])))?;
            let se = match &record[3] {
                "" => None,
                s => Some(
                    s.parse::<f64>()
                        .ok()
                        .filter(|v| *v >= 0.0)
                        .ok_or_else(|| bad(format!("bad se `{s}`")))?,
                ),
            };
            let significant = match &record[4] {
                "" => None,
                s => Some(
                    s.parse::<bool>()
                        .map_err(|_| bad(format!("bad significant flag `{s}`")))?,
                ),
            };
            if !estimate.is_finite() {
                return Err(bad("non-finite estimate".into()));
            }
            cells.push(ProfileCell {
                g,
                c,
                estimate,
                se,
                significant,
            });
        }
        if cells.is_empty() {
            return Err(Error::NoRecords);
        }
        Self::from_cells(kind, metric_name, cells)
    }
}

fn check_admissible(panel: &Panel, g: u64, c: CheckpointStep) -> Result<()> {
    panel.baseline_checkpoint(g)?;
    panel.column(c)?;
    if c < g {
        return Err(Error::Inadmissible { g, c });
    }
    Ok(())
}

/// Trained-group mean minus validation mean at checkpoint `c`.
pub fn diff_estimate(panel: &Panel, g: u64, c: CheckpointStep) -> Result<f64> {
    check_admissible(panel, g, c)?;
    Ok(panel.group_mean(TreatmentStep::At(g), c)? - panel.group_mean(TreatmentStep::Never, c)?)
}

/// Change in the trained group since the pre-treatment anchor minus the
/// same change in the validation group.
pub fn did_estimate(panel: &Panel, g: u64, c: CheckpointStep) -> Result<f64> {
    check_admissible(panel, g, c)?;
    let b = panel.baseline_checkpoint(g)?;
    let trained =
        panel.group_mean(TreatmentStep::At(g), c)? - panel.group_mean(TreatmentStep::At(g), b)?;
    let untrained =
        panel.group_mean(TreatmentStep::Never, c)? - panel.group_mean(TreatmentStep::Never, b)?;
    Ok(trained - untrained)
}

/// Number of admissible `(g, c)` cells for the given grids.
pub fn admissible_cell_count(treatments: &[u64], checkpoints: &[u64]) -> usize {
    treatments
        .iter()
        .map(|&g| checkpoints.len() - checkpoints.partition_point(|&c| c < g))
        .sum()
}

/// Estimates every admissible cell of the panel with the chosen estimator.
pub fn estimate_profile(panel: &Panel, kind: EstimatorKind) -> Result<MemorisationProfile> {
    estimate_profile_with_metric(panel, kind, "outcome")
}

pub fn estimate_profile_with_metric(
    panel: &Panel,
    kind: EstimatorKind,
    metric_name: &str,
) -> Result<MemorisationProfile> {
    let (groups, means) = panel.group_means();
    let w = panel.n_checkpoints();
    let grid = panel.checkpoint_grid();
    let never_row = groups
        .iter()
        .position(|g| g.is_never())
        .ok_or(Error::NoValidation)?;
    let never = &means[never_row * w..(never_row + 1) * w];

    let mut cells = Vec::with_capacity(admissible_cell_count(panel.treatment_grid(), grid));
    for (i, group) in groups.iter().enumerate() {
        let Some(g) = group.step() else { continue };
        let trained = &means[i * w..(i + 1) * w];
        let first = grid.partition_point(|&c| c < g);
        let base = first - 1;
        for col in first..w {
            let estimate = match kind {
                EstimatorKind::Diff => trained[col] - never[col],
                EstimatorKind::Did => (trained[col] - trained[base]) - (never[col] - never[base]),
            };
            cells.push(ProfileCell::new(g, grid[col], estimate));
        }
    }
    MemorisationProfile::from_cells(kind, metric_name, cells)
}

/// Extractable memorisation: the observed extractability rate, taking the
/// counterfactual rate to be zero.
pub fn extractable_estimate(outcome: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&outcome) {
        return Err(Error::OutcomeOutOfRange(outcome));
    }
    Ok(outcome)
}

/// Final-checkpoint outcomes of an instance across independently trained
/// runs that did and did not include it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEnsemble {
    pub with_x: Vec<f64>,
    pub without_x: Vec<f64>,
}

/// Architectural memorisation: mean outcome over runs trained with the
/// instance minus the mean over runs trained without it.
pub fn architectural_estimate(ensemble: &RunEnsemble) -> Result<f64> {
    if ensemble.with_x.is_empty() {
        return Err(Error::EmptyEnsemble("with_x"));
    }
    if ensemble.without_x.is_empty() {
        return Err(Error::EmptyEnsemble("without_x"));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(mean(&ensemble.with_x) - mean(&ensemble.without_x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::load_panel;

    fn panel(rows: &[(&str, TreatmentStep, &[f64])], grid: &[u64]) -> Panel {
        Panel::new(
            grid.to_vec(),
            rows.iter().map(|r| r.0.to_string()).collect(),
            rows.iter().map(|r| r.1).collect(),
            rows.iter().flat_map(|r| r.2.iter().copied()).collect(),
        )
        .unwrap()
    }

    const T1: TreatmentStep = TreatmentStep::At(1);
    const NV: TreatmentStep = TreatmentStep::Never;

    #[test]
    fn diff_hand_arithmetic() {
        let p = panel(
            &[
                ("a", T1, &[0.0, -2.0]),
                ("b", T1, &[0.0, -4.0]),
                ("u", NV, &[0.0, -3.0]),
                ("v", NV, &[0.0, -5.0]),
            ],
            &[0, 1],
        );
        assert_eq!(diff_estimate(&p, 1, 1).unwrap(), 1.0);
    }

    #[test]
    fn diff_symmetric_groups_is_zero() {
        let p = panel(
            &[
                ("a", T1, &[1.0, -2.0]),
                ("b", T1, &[2.0, -4.0]),
                ("u", NV, &[1.0, -2.0]),
                ("v", NV, &[2.0, -4.0]),
            ],
            &[0, 1],
        );
        assert_eq!(diff_estimate(&p, 1, 1).unwrap(), 0.0);
        assert_eq!(did_estimate(&p, 1, 1).unwrap(), 0.0);
    }

    #[test]
    fn did_hand_arithmetic() {
        let p = panel(
            &[
                ("a", T1, &[-5.0, -4.0]),
                ("b", T1, &[-6.0, -5.5]),
                ("u", NV, &[-5.0, -4.8]),
                ("v", NV, &[-7.0, -6.8]),
            ],
            &[0, 1],
        );
        let est = did_estimate(&p, 1, 1).unwrap();
        assert!((est - 0.55).abs() < 1e-12, "{est}");
    }

    #[test]
    fn structural_zero_region_is_an_error() {
        let p = panel(
            &[
                ("a", TreatmentStep::At(2), &[0.0, 1.0, 2.0]),
                ("u", NV, &[0.0, 0.0, 0.0]),
            ],
            &[0, 1, 2],
        );
        assert!(matches!(
            diff_estimate(&p, 2, 1),
            Err(Error::Inadmissible { g: 2, c: 1 })
        ));
        assert!(matches!(
            did_estimate(&p, 2, 0),
            Err(Error::Inadmissible { .. })
        ));
        assert!(matches!(
            did_estimate(&p, 3, 2),
            Err(Error::UnknownTreatment(3))
        ));
        assert!(matches!(
            did_estimate(&p, 2, 5),
            Err(Error::UnknownCheckpoint(5))
        ));
    }

    #[test]
    fn profile_counts_admissible_cells() {
        // K = 3 treatment steps, C = 4 checkpoints.
        let grid = [0, 1, 2, 3];
        let rows: Vec<(String, TreatmentStep, Vec<f64>)> = [1, 2, 3]
            .iter()
            .map(|&g| (format!("t{g}"), TreatmentStep::At(g), vec![0.0; 4]))
            .chain(std::iter::once(("v".to_string(), NV, vec![0.0; 4])))
            .collect();
        let p = Panel::new(
            grid.to_vec(),
            rows.iter().map(|r| r.0.clone()).collect(),
            rows.iter().map(|r| r.1).collect(),
            rows.iter().flat_map(|r| r.2.clone()).collect(),
        )
        .unwrap();
        let prof = estimate_profile(&p, EstimatorKind::Did).unwrap();
        assert_eq!(prof.len(), 3 + 2 + 1);
        assert_eq!(prof.len(), admissible_cell_count(&[1, 2, 3], &grid));
        assert!(prof.cells().iter().all(|x| x.c >= x.g && x.se.is_none()));
    }

    #[test]
    fn profile_matches_cellwise_estimators() {
        let text = "instance_id,group,checkpoint,outcome
a,1,0,0.5\na,1,1,1.25\na,1,2,2\nb,2,0,-1\nb,2,1,3\nb,2,2,0.75
c,2,0,4\nc,2,1,1\nc,2,2,1.5\nv,inf,0,0.1\nv,inf,1,0.2\nv,inf,2,0.4
w,inf,0,-0.3\nw,inf,1,0.9\nw,inf,2,0.8\n";
        let p = load_panel(text.as_bytes()).unwrap();
        for kind in [EstimatorKind::Diff, EstimatorKind::Did] {
            let prof = estimate_profile(&p, kind).unwrap();
            for cell in prof.cells() {
                let direct = match kind {
                    EstimatorKind::Diff => diff_estimate(&p, cell.g, cell.c).unwrap(),
                    EstimatorKind::Did => did_estimate(&p, cell.g, cell.c).unwrap(),
                };
                assert!((direct - cell.estimate).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn profile_csv_round_trip() {
        let mut cells = vec![
            ProfileCell::new(1, 1, 0.1),
            ProfileCell::new(1, 2, -0.25),
            ProfileCell::new(2, 2, 1.0 / 3.0),
        ];
        cells[0].se = Some(0.05);
        cells[0].significant = Some(true);
        let prof = MemorisationProfile::from_cells(EstimatorKind::Did, "loglik", cells).unwrap();
        let text = prof.to_csv_string().unwrap();
        assert!(text.starts_with("g,c,estimate,se,significant\n1,1,0.1,0.05,true\n1,2,-0.25,,\n"));
        let back =
            MemorisationProfile::read_csv(text.as_bytes(), EstimatorKind::Did, "loglik").unwrap();
        assert_eq!(back, prof);
    }

    #[test]
    fn profile_rejects_bad_cells() {
        let below = vec![ProfileCell::new(2, 1, 0.0)];
        assert!(matches!(
            MemorisationProfile::from_cells(EstimatorKind::Did, "m", below),
            Err(Error::Inadmissible { .. })
        ));
        let dup = vec![ProfileCell::new(1, 1, 0.0), ProfileCell::new(1, 1, 0.0)];
        assert!(MemorisationProfile::from_cells(EstimatorKind::Did, "m", dup).is_err());
        let gap = vec![
            ProfileCell::new(1, 1, 0.0),
            ProfileCell::new(1, 3, 0.0),
            ProfileCell::new(2, 2, 0.0),
            ProfileCell::new(2, 3, 0.0),
        ];
        assert!(MemorisationProfile::from_cells(EstimatorKind::Did, "m", gap).is_err());
    }

    #[test]
    fn extractable_is_identity_on_unit_interval() {
        assert_eq!(extractable_estimate(1.0).unwrap(), 1.0);
        assert_eq!(extractable_estimate(0.0).unwrap(), 0.0);
        assert_eq!(extractable_estimate(0.25).unwrap(), 0.25);
        assert!(extractable_estimate(1.5).is_err());
        assert!(extractable_estimate(-0.1).is_err());
        assert!(extractable_estimate(f64::NAN).is_err());
    }

    #[test]
    fn architectural_hand_arithmetic() {
        let e = RunEnsemble {
            with_x: vec![1.0, 3.0],
            without_x: vec![0.0, 2.0],
        };
        assert_eq!(architectural_estimate(&e).unwrap(), 1.0);
        let same = RunEnsemble {
            with_x: vec![0.3, -1.0, 2.0],
            without_x: vec![0.3, -1.0, 2.0],
        };
        assert_eq!(architectural_estimate(&same).unwrap(), 0.0);
        let empty = RunEnsemble {
            with_x: vec![],
            without_x: vec![1.0],
        };
        assert!(matches!(
            architectural_estimate(&empty),
            Err(Error::EmptyEnsemble("with_x"))
        ));
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("DID".parse::<EstimatorKind>().unwrap(), EstimatorKind::Did);
        assert_eq!(
            "diff".parse::<EstimatorKind>().unwrap(),
            EstimatorKind::Diff
        );
        assert!("dif".parse::<EstimatorKind>().is_err());
    }
}
