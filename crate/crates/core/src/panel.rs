//! Balanced panel of per-instance outcomes over a checkpoint grid.
//!
//! Each instance carries the step at which its macro-batch entered training
//! (or [`TreatmentStep::Never`] for held-out validation instances) and one
//! outcome per checkpoint. Outcomes are stored row-major, one row per
//! instance, one column per checkpoint.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use crate::error::{Error, Result};

/// Training step at which a model checkpoint was taken.
pub type CheckpointStep = u64;

pub const PANEL_HEADER: [&str; 4] = ["instance_id", "group", "checkpoint", "outcome"];

/// Step at which an instance was trained on. `Never` sorts after every step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TreatmentStep {
    At(u64),
    Never,
}

impl TreatmentStep {
    pub fn step(self) -> Option<u64> {
        match self {
            TreatmentStep::At(g) => Some(g),
            TreatmentStep::Never => None,
        }
    }

    pub fn is_never(self) -> bool {
        matches!(self, TreatmentStep::Never)
    }
}

impl fmt::Display for TreatmentStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TreatmentStep::At(g) => write!(f, "{g}"),
            TreatmentStep::Never => f.write_str("inf"),
        }
    }
}

impl FromStr for TreatmentStep {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("inf") {
            return Ok(TreatmentStep::Never);
        }
        match s.parse::<u64>() {
            Ok(0) => Err("group must be a positive integer or `inf`, found 0".into()),
            Ok(g) => Ok(TreatmentStep::At(g)),
            Err(_) => Err(format!(
                "group must be a positive integer or `inf`, found `{s}`"
            )),
        }
    }
}

/// Row indices of each group's members.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupIndex {
    members: BTreeMap<TreatmentStep, Vec<usize>>,
}

impl GroupIndex {
    fn build(groups: &[TreatmentStep]) -> Self {
        let mut members: BTreeMap<TreatmentStep, Vec<usize>> = BTreeMap::new();
        for (row, g) in groups.iter().enumerate() {
            members.entry(*g).or_default().push(row);
        }
        Self { members }
    }

    pub fn rows(&self, group: TreatmentStep) -> &[usize] {
        self.members.get(&group).map_or(&[], Vec::as_slice)
    }

    pub fn size(&self, group: TreatmentStep) -> usize {
        self.rows(group).len()
    }

    /// Groups in ascending order, `Never` last.
    pub fn groups(&self) -> impl Iterator<Item = TreatmentStep> + '_ {
        self.members.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (TreatmentStep, &[usize])> {
        self.members.iter().map(|(g, rows)| (*g, rows.as_slice()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    checkpoints: Vec<CheckpointStep>,
    treatments: Vec<u64>,
    instance_ids: Vec<String>,
    groups: Vec<TreatmentStep>,
    outcomes: Vec<f64>,
    index: GroupIndex,
}

impl Panel {
    /// Builds a validated panel. `outcomes` is row-major with one row per
    /// instance and one column per entry of `checkpoints`. The treatment grid
    /// is the sorted set of integer groups present.
    pub fn new(
        checkpoints: Vec<CheckpointStep>,
        instance_ids: Vec<String>,
        groups: Vec<TreatmentStep>,
        outcomes: Vec<f64>,
    ) -> Result<Self> {
        if checkpoints.is_empty() {
            return Err(Error::InvalidGrid("empty checkpoint grid".into()));
        }
        if checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidGrid(
                "checkpoint grid must be strictly increasing".into(),
            ));
        }
        if instance_ids.len() != groups.len() {
            return Err(Error::Shape(format!(
                "{} instance ids but {} groups",
                instance_ids.len(),
                groups.len()
            )));
        }
        if outcomes.len() != instance_ids.len() * checkpoints.len() {
            return Err(Error::Shape(format!(
                "expected {}x{} outcomes, found {}",
                instance_ids.len(),
                checkpoints.len(),
                outcomes.len()
            )));
        }
        if instance_ids.is_empty() {
            return Err(Error::NoRecords);
        }
        let mut seen = HashMap::with_capacity(instance_ids.len());
        for id in &instance_ids {
            if seen.insert(id.as_str(), ()).is_some() {
                return Err(Error::DuplicateInstance(id.clone()));
            }
        }
        let width = checkpoints.len();
        for (i, v) in outcomes.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteOutcome {
                    instance: instance_ids[i / width].clone(),
                    checkpoint: checkpoints[i % width],
                });
            }
        }
        if groups.iter().any(|g| matches!(g, TreatmentStep::At(0))) {
            return Err(Error::InvalidGrid(
                "treatment steps must be positive".into(),
            ));
        }

        let index = GroupIndex::build(&groups);
        if index.size(TreatmentStep::Never) == 0 {
            return Err(Error::NoValidation);
        }
        let treatments: Vec<u64> = index.groups().filter_map(TreatmentStep::step).collect();
        for &g in &treatments {
            if checkpoints[0] >= g {
                return Err(Error::NoBaseline(g));
            }
        }

        Ok(Self {
            checkpoints,
            treatments,
            instance_ids,
            groups,
            outcomes,
            index,
        })
    }

    pub fn checkpoint_grid(&self) -> &[CheckpointStep] {
        &self.checkpoints
    }

    pub fn treatment_grid(&self) -> &[u64] {
        &self.treatments
    }

    pub fn instance_ids(&self) -> &[String] {
        &self.instance_ids
    }

    pub fn groups(&self) -> &[TreatmentStep] {
        &self.groups
    }

    pub fn group_index(&self) -> &GroupIndex {
        &self.index
    }

    pub fn n_instances(&self) -> usize {
        self.instance_ids.len()
    }

    pub fn n_checkpoints(&self) -> usize {
        self.checkpoints.len()
    }

    /// `(rows, columns)` of the outcome matrix.
    pub fn shape(&self) -> (usize, usize) {
        (self.n_instances(), self.n_checkpoints())
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let w = self.n_checkpoints();
        &self.outcomes[row * w..(row + 1) * w]
    }

    pub fn outcome(&self, row: usize, col: usize) -> f64 {
        self.outcomes[row * self.n_checkpoints() + col]
    }

    /// Column of checkpoint `c` in the grid.
    pub fn column(&self, c: CheckpointStep) -> Result<usize> {
        self.checkpoints
            .binary_search(&c)
            .map_err(|_| Error::UnknownCheckpoint(c))
    }

    /// Copy of this panel with each outcome replaced by `f(row, col, y)`.
    pub fn map_outcomes(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> Result<Self> {
        let w = self.n_checkpoints();
        let outcomes = self
            .outcomes
            .iter()
            .enumerate()
            .map(|(i, &y)| f(i / w, i % w, y))
            .collect();
        Panel::new(
            self.checkpoints.clone(),
            self.instance_ids.clone(),
            self.groups.clone(),
            outcomes,
        )
    }

    fn check_treatment(&self, g: u64) -> Result<()> {
        self.treatments
            .binary_search(&g)
            .map(|_| ())
            .map_err(|_| Error::UnknownTreatment(g))
    }

    /// Largest grid checkpoint strictly before `g`: the pre-treatment anchor.
    pub fn baseline_checkpoint(&self, g: u64) -> Result<CheckpointStep> {
        self.check_treatment(g)?;
        let pos = self.checkpoints.partition_point(|&c| c < g);
        if pos == 0 {
            return Err(Error::NoBaseline(g));
        }
        Ok(self.checkpoints[pos - 1])
    }

    /// Mean outcome at checkpoint `c` over the members of `group`.
    pub fn group_mean(&self, group: TreatmentStep, c: CheckpointStep) -> Result<f64> {
        let col = self.column(c)?;
        self.group_mean_at(group, col)
    }

    pub(crate) fn group_mean_at(&self, group: TreatmentStep, col: usize) -> Result<f64> {
        let rows = self.index.rows(group);
        if rows.is_empty() {
            return Err(Error::EmptyGroup(group.to_string()));
        }
        let w = self.n_checkpoints();
        let sum: f64 = rows.iter().map(|&r| self.outcomes[r * w + col]).sum();
        Ok(sum / rows.len() as f64)
    }

    /// Means of every group at every checkpoint: `(groups, row-major matrix)`.
    pub(crate) fn group_means(&self) -> (Vec<TreatmentStep>, Vec<f64>) {
        let w = self.n_checkpoints();
        let mut groups = Vec::new();
        let mut means = Vec::new();
        for (g, rows) in self.index.iter() {
            groups.push(g);
            let mut acc = vec![0.0; w];
            for &r in rows {
                for (a, y) in acc.iter_mut().zip(self.row(r)) {
                    *a += y;
                }
            }
            let n = rows.len() as f64;
            means.extend(acc.into_iter().map(|s| s / n));
        }
        (groups, means)
    }

    /// Writes the panel as long-format CSV, instances in panel order and
    /// checkpoints in grid order.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        out.write_record(PANEL_HEADER)?;
        for (row, id) in self.instance_ids.iter().enumerate() {
            let group = self.groups[row].to_string();
            for (col, c) in self.checkpoints.iter().enumerate() {
                out.write_record([
                    id.as_str(),
                    group.as_str(),
                    &c.to_string(),
                    &format_f64(self.outcome(row, col)),
                ])?;
            }
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

/// Shortest decimal rendering that parses back to the same `f64`.
pub(crate) fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Reads a long-format panel CSV (`instance_id,group,checkpoint,outcome`).
///
/// Rows may come in any order. Grids are inferred from the distinct values
/// observed; every instance must have exactly one outcome per checkpoint.
pub fn load_panel<R: Read>(source: R) -> Result<Panel> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(source);
    let mut records = reader.records();

    let header = match records.next() {
        None => return Err(Error::NoRecords),
        Some(h) => h?,
    };
    let found: Vec<&str> = header.iter().collect();
    if found.len() != PANEL_HEADER.len()
        || found
            .iter()
            .zip(PANEL_HEADER)
            .any(|(a, b)| !a.trim_start_matches('\u{feff}').eq(b))
    {
        return Err(Error::BadHeader {
            expected: PANEL_HEADER.join(","),
            found: found.join(","),
        });
    }

    let mut ids: Vec<String> = Vec::new();
    let mut groups: Vec<TreatmentStep> = Vec::new();
    let mut by_id: HashMap<String, usize> = HashMap::new();
    let mut cells: Vec<(usize, u64, f64)> = Vec::new();
    let mut checkpoints: Vec<u64> = Vec::new();

    for record in records {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 4 {
            return Err(Error::Parse {
                line,
                message: format!("expected 4 fields, found {}", record.len()),
            });
        }
        let id = &record[0];
        if id.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty instance_id".into(),
            });
        }
        let group: TreatmentStep = record[1]
            .parse()
            .map_err(|message| Error::Parse { line, message })?;
        let checkpoint: u64 = record[2].parse().map_err(|_| Error::Parse {
            line,
            message: format!(
                "checkpoint must be a non-negative integer, found `{}`",
                &record[2]
            ),
        })?;
        let outcome: f64 = record[3].parse().map_err(|_| Error::Parse {
            line,
            message: format!("outcome must be a decimal number, found `{}`", &record[3]),
        })?;
        if !outcome.is_finite() {
            return Err(Error::NonFiniteOutcome {
                instance: id.to_string(),
                checkpoint,
            });
        }
        let row = match by_id.get(id) {
            Some(&row) => {
                if groups[row] != group {
                    return Err(Error::ConflictingGroup {
                        instance: id.to_string(),
                        first: groups[row].to_string(),
                        second: group.to_string(),
                    });
                }
                row
            }
            None => {
                let row = ids.len();
                by_id.insert(id.to_string(), row);
                ids.push(id.to_string());
                groups.push(group);
                row
            }
        };
        cells.push((row, checkpoint, outcome));
        checkpoints.push(checkpoint);
    }
    if ids.is_empty() {
        return Err(Error::NoRecords);
    }

    checkpoints.sort_unstable();
    checkpoints.dedup();
    let width = checkpoints.len();
    let mut outcomes = vec![f64::NAN; ids.len() * width];
    let mut filled = vec![false; ids.len() * width];
    for (row, c, y) in cells {
        let col = checkpoints
            .binary_search(&c)
            .expect("checkpoint collected above");
        let at = row * width + col;
        if filled[at] {
            return Err(Error::DuplicateCell {
                instance: ids[row].clone(),
                checkpoint: c,
            });
        }
        filled[at] = true;
        outcomes[at] = y;
    }
    if let Some(at) = filled.iter().position(|f| !f) {
        return Err(Error::Unbalanced {
            instance: ids[at / width].clone(),
            checkpoint: checkpoints[at % width],
        });
    }

    Panel::new(checkpoints, ids, groups, outcomes)
}
