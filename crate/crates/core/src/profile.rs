//! Views of a memorisation profile: the diagonal (instantaneous), averages
//! by time since treatment (persistent), the final column (residual), and
//! correlation between two profiles.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::estimators::MemorisationProfile;
use crate::inference::{is_significant, summarize_draws, BootstrapConfig, BootstrapDraws};
use crate::panel::format_f64;

pub const SERIES_HEADER: [&str; 6] = ["kind", "index", "value", "se", "significant", "n_cells"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SeriesKind {
    Instantaneous,
    PersistentAvg,
    Residual,
}

impl fmt::Display for SeriesKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SeriesKind::Instantaneous => "instantaneous",
            SeriesKind::PersistentAvg => "persistent_avg",
            SeriesKind::Residual => "residual",
        })
    }
}

impl FromStr for SeriesKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "instantaneous" => Ok(Self::Instantaneous),
            "persistent" | "persistent_avg" => Ok(Self::PersistentAvg),
            "residual" => Ok(Self::Residual),
            other => Err(format!(
                "unknown mode `{other}` (expected instantaneous, persistent or residual)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesPoint {
    /// `g` for instantaneous and residual series, `c - g` for persistent.
    pub index: u64,
    pub value: f64,
    pub se: Option<f64>,
    pub significant: Option<bool>,
    pub n_cells: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub kind: SeriesKind,
    pub points: Vec<SeriesPoint>,
}

impl Series {
    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.value).collect()
    }

    pub fn indices(&self) -> Vec<u64> {
        self.points.iter().map(|p| p.index).collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        out.write_record(SERIES_HEADER)?;
        for p in &self.points {
            out.write_record([
                self.kind.to_string(),
                p.index.to_string(),
                format_f64(p.value),
                p.se.map(format_f64).unwrap_or_default(),
                p.significant.map(|s| s.to_string()).unwrap_or_default(),
                p.n_cells.to_string(),
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
}

/// Diagonal cells `(g, g)` in treatment order. Treatment steps that are not
/// themselves checkpoints have no diagonal cell and are skipped.
pub fn instantaneous(profile: &MemorisationProfile) -> Series {
    let points = profile
        .cells()
        .iter()
        .filter(|x| x.c == x.g)
        .map(|x| SeriesPoint {
            index: x.g,
            value: x.estimate,
            se: x.se,
            significant: x.significant,
            n_cells: 1,
        })
        .collect();
    Series {
        kind: SeriesKind::Instantaneous,
        points,
    }
}

fn event_time_groups(profile: &MemorisationProfile) -> BTreeMap<u64, Vec<usize>> {
    let mut by_event: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, x) in profile.cells().iter().enumerate() {
        by_event.entry(x.c - x.g).or_default().push(i);
    }
    by_event
}

/// Mean estimate over all cells sharing the same time since treatment.
/// Standard errors are not carried over from cells; see
/// [`persistent_average_with_bands`].
pub fn persistent_average(profile: &MemorisationProfile) -> Series {
    let cells = profile.cells();
    let points = event_time_groups(profile)
        .into_iter()
        .map(|(e, members)| SeriesPoint {
            index: e,
            value: members.iter().map(|&i| cells[i].estimate).sum::<f64>() / members.len() as f64,
            se: None,
            significant: None,
            n_cells: members.len(),
        })
        .collect();
    Series {
        kind: SeriesKind::PersistentAvg,
        points,
    }
}

/// Persistent averages with standard errors and significance computed from
/// bootstrap draws of the averages themselves.
pub fn persistent_average_with_bands(
    profile: &MemorisationProfile,
    draws: &BootstrapDraws,
    config: &BootstrapConfig,
) -> Result<Series> {
    if draws.cells.len() != profile.len()
        || draws
            .cells
            .iter()
            .zip(profile.cells())
            .any(|(k, x)| *k != x.key())
    {
        return Err(Error::CellMismatch(
            "draws were computed for other cells".into(),
        ));
    }
    let groups: Vec<Vec<usize>> = event_time_groups(profile).into_values().collect();
    let k = groups.len();
    let mut agg = Vec::with_capacity(draws.draws * k);
    for b in 0..draws.draws {
        let row = draws.draw(b);
        agg.extend(
            groups
                .iter()
                .map(|m| m.iter().map(|&i| row[i]).sum::<f64>() / m.len() as f64),
        );
    }
    let (se, crit) = summarize_draws(&agg, k, config.alpha, config.se_method, config.band)?;
    let mut series = persistent_average(profile);
    for (p, se) in series.points.iter_mut().zip(se) {
        p.se = Some(se);
        p.significant = Some(is_significant(p.value, se, crit));
    }
    Ok(series)
}

/// Column of cells `(g, t)` over all treatment steps.
pub fn residual(profile: &MemorisationProfile, t: u64) -> Result<Series> {
    if !profile.checkpoint_steps().contains(&t) {
        return Err(Error::UnknownCheckpoint(t));
    }
    if let Some(&g) = profile.treatment_steps().iter().find(|&&g| g > t) {
        return Err(Error::Inadmissible { g, c: t });
    }
    let points = profile
        .cells()
        .iter()
        .filter(|x| x.c == t)
        .map(|x| SeriesPoint {
            index: x.g,
            value: x.estimate,
            se: x.se,
            significant: x.significant,
            n_cells: 1,
        })
        .collect();
    Ok(Series {
        kind: SeriesKind::Residual,
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrelationMode {
    AllCells,
    /// Only cells flagged significant in both profiles.
    SignificantOnly,
}

impl fmt::Display for CorrelationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorrelationMode::AllCells => "all_cells",
            CorrelationMode::SignificantOnly => "significant_only",
        })
    }
}

/// Pearson correlation between paired cell estimates of two profiles.
pub fn profile_correlation(
    a: &MemorisationProfile,
    b: &MemorisationProfile,
    mode: CorrelationMode,
) -> Result<f64> {
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
    let mut xs = Vec::with_capacity(a.len());
    let mut ys = Vec::with_capacity(a.len());
    for (x, y) in a.cells().iter().zip(b.cells()) {
        let keep = match mode {
            CorrelationMode::AllCells => true,
            CorrelationMode::SignificantOnly => match (x.significant, y.significant) {
                (Some(p), Some(q)) => p && q,
                _ => {
                    return Err(Error::CellMismatch(
                        "significance-filtered correlation needs banded profiles".into(),
                    ))
                }
            },
        };
        if keep {
            xs.push(x.estimate);
            ys.push(y.estimate);
        }
    }
    pearson(&xs, &ys)
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if xs.len() < 2 || sxx == 0.0 {
        return Err(Error::ZeroVariance("first profile"));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance("second profile"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{EstimatorKind, ProfileCell};

    /// 3 treatment steps over checkpoints {0..=3}: cells (1,1..3), (2,2..3), (3,3).
    fn toy() -> MemorisationProfile {
        let cells = vec![
            ProfileCell::new(1, 1, 0.5),
            ProfileCell::new(1, 2, 0.25),
            ProfileCell::new(1, 3, 0.125),
            ProfileCell::new(2, 2, 0.7),
            ProfileCell::new(2, 3, 0.3),
            ProfileCell::new(3, 3, 0.9),
        ];
        MemorisationProfile::from_cells(EstimatorKind::Did, "m", cells).unwrap()
    }

    #[test]
    fn instantaneous_is_the_diagonal() {
        let s = instantaneous(&toy());
        assert_eq!(s.indices(), [1, 2, 3]);
        assert_eq!(s.values(), [0.5, 0.7, 0.9]);
        assert!(s.points.iter().all(|p| p.se.is_none()));
    }

    #[test]
    fn persistent_groups_by_event_time() {
        let s = persistent_average(&toy());
        assert_eq!(s.indices(), [0, 1, 2]);
        assert!((s.points[0].value - 0.7).abs() < 1e-12);
        assert!((s.points[1].value - 0.275).abs() < 1e-12);
        assert_eq!(s.points[2].value, 0.125);
        let counts: usize = s.points.iter().map(|p| p.n_cells).sum();
        assert_eq!(counts, toy().len());
    }

    #[test]
    fn single_row_persistent_equals_row() {
        let cells = vec![
            ProfileCell::new(2, 2, 1.5),
            ProfileCell::new(2, 3, -0.5),
            ProfileCell::new(2, 5, 0.25),
        ];
        let p = MemorisationProfile::from_cells(EstimatorKind::Did, "m", cells).unwrap();
        let s = persistent_average(&p);
        assert_eq!(s.indices(), [0, 1, 3]);
        assert_eq!(s.values(), [1.5, -0.5, 0.25]);
    }

    #[test]
    fn residual_column() {
        let s = residual(&toy(), 3).unwrap();
        assert_eq!(s.indices(), [1, 2, 3]);
        assert_eq!(s.values(), [0.125, 0.3, 0.9]);
        assert!(matches!(
            residual(&toy(), 2),
            Err(Error::Inadmissible { g: 3, c: 2 })
        ));
        assert!(matches!(
            residual(&toy(), 9),
            Err(Error::UnknownCheckpoint(9))
        ));
    }

    #[test]
    fn correlation_basics() {
        let p = toy();
        let neg = p
            .with_estimates(&p.estimates().iter().map(|v| -v).collect::<Vec<_>>())
            .unwrap();
        assert!(
            (profile_correlation(&p, &p, CorrelationMode::AllCells).unwrap() - 1.0).abs() < 1e-15
        );
        assert!(
            (profile_correlation(&p, &neg, CorrelationMode::AllCells).unwrap() + 1.0).abs() < 1e-15
        );
        let flat = p.with_estimates(&[1.0; 6]).unwrap();
        assert!(matches!(
            profile_correlation(&p, &flat, CorrelationMode::AllCells),
            Err(Error::ZeroVariance(_))
        ));
        assert!(profile_correlation(&p, &p, CorrelationMode::SignificantOnly).is_err());
    }

    #[test]
    fn significant_only_filters_cells() {
        let mut a = toy();
        for (i, cell) in a.cells_mut().iter_mut().enumerate() {
            cell.se = Some(0.1);
            cell.significant = Some(i != 2);
        }
        let mut b = a.clone();
        // Break the pairing on the non-significant cell only.
        b.cells_mut()[2].estimate = 100.0;
        let all = profile_correlation(&a, &b, CorrelationMode::AllCells).unwrap();
        let sig = profile_correlation(&a, &b, CorrelationMode::SignificantOnly).unwrap();
        assert!(all < 0.99);
        assert!((sig - 1.0).abs() < 1e-12);
    }

    #[test]
    fn series_csv_layout() {
        let text = persistent_average(&toy()).to_csv_string().unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next(),
            Some("kind,index,value,se,significant,n_cells")
        );
        assert!(lines.next().unwrap().starts_with("persistent_avg,0,0.7"));
    }

    #[test]
    fn mode_parsing() {
        assert_eq!(
            "persistent".parse::<SeriesKind>().unwrap(),
            SeriesKind::PersistentAvg
        );
        assert!("diagonal".parse::<SeriesKind>().is_err());
    }
}
