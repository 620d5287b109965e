//! Confusion matrices and the label spaces used for relabeling.
//!
//! The confusion matrix counts samples per (weak label, teacher prediction)
//! pair. A [`SplLabelSpace`] maps each of its cells to a pseudo-label class
//! (or to discard), according to one of four strategies:
//!
//! - `spl`: every cell is its own class, giving `n * n` classes.
//! - `spl-m`: keep all diagonal cells plus the most populated off-diagonal
//!   cells up to a budget of `k * n` classes; the rest merge into the
//!   diagonal class of their row.
//! - `spl-d`: like `spl-m`, but the unselected cells are discarded.
//! - `spl-b`: per-row agree/disagree, giving `2 * n` classes.
//!
//! Three baseline relabelers (`weak-label`, `teacher-pred`,
//! `agreement-filter`) keep the original `n`-class space and are handled by
//! [`relabel_baseline`] without building a label space.

use std::fmt;
use std::io::{BufRead, Write};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::record::{ClassCount, ClipRecord};

/// Errors from confusion-matrix construction and relabeling.
#[derive(Debug, Error)]
pub enum RelabelError {
    /// Ratios over an all-zero matrix are undefined.
    #[error("confusion matrix has no samples")]
    EmptyMatrix,
    /// A label does not fit the declared class count.
    #[error("clip {clip_id}: label {label} out of range for {n} classes")]
    LabelOutOfRange {
        clip_id: String,
        label: usize,
        n: usize,
    },
    /// The operation needs teacher predictions that are absent.
    #[error("clip {clip_id} has no teacher prediction")]
    MissingTeacherPred { clip_id: String },
    /// `spl-m` and `spl-d` need a class budget.
    #[error("strategy {kind} requires a class budget k")]
    BudgetRequired { kind: StrategyKind },
    /// Budgets below 2 would select no off-diagonal cells.
    #[error("class budget k must be at least 2, got {k}")]
    BudgetTooSmall { k: usize },
    /// `k * n` classes cannot exceed the `n * n` cells available.
    #[error("class budget k={k} exceeds class count n={n}")]
    BudgetTooLarge { k: usize, n: usize },
    /// Only `spl-m` and `spl-d` take a budget.
    #[error("strategy {kind} does not take a class budget")]
    BudgetNotApplicable { kind: StrategyKind },
    /// Baselines have no reduced label space to build.
    #[error("strategy {kind} is a baseline without a label space")]
    NotASplStrategy { kind: StrategyKind },
    /// SPL strategies cannot be run through the baseline relabeler.
    #[error("strategy {kind} is not a baseline relabeler")]
    NotABaseline { kind: StrategyKind },
    /// Two matrices with different class counts cannot be combined.
    #[error("confusion matrix shape mismatch: {a} vs {b} classes")]
    ShapeMismatch { a: usize, b: usize },
    /// A malformed confusion CSV, reported with its 1-based line number.
    #[error("csv line {line}: {message}")]
    CsvParse { line: usize, message: String },
    /// A deserialized label space that violates its own invariants.
    #[error("invalid label space: {0}")]
    InvalidLabelSpace(String),
    /// Underlying reader or writer failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    /// Class-count validation failure.
    #[error(transparent)]
    Record(#[from] crate::record::RecordError),
}

/// Sample counts indexed by (weak label row, teacher prediction column).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawConfusion")]
pub struct ConfusionMatrix {
    n: ClassCount,
    counts: Vec<Vec<u64>>,
}

#[derive(Deserialize)]
struct RawConfusion {
    n: ClassCount,
    counts: Vec<Vec<u64>>,
}

impl TryFrom<RawConfusion> for ConfusionMatrix {
    type Error = RelabelError;

    fn try_from(raw: RawConfusion) -> Result<Self, Self::Error> {
        let n = raw.n.get();
        if raw.counts.len() != n || raw.counts.iter().any(|row| row.len() != n) {
            return Err(RelabelError::InvalidLabelSpace(format!(
                "confusion counts must form an {n}x{n} matrix"
            )));
        }
        Ok(Self {
            n: raw.n,
            counts: raw.counts,
        })
    }
}

impl ConfusionMatrix {
    /// An all-zero matrix over `n` classes.
    #[must_use]
    pub fn zeros(n: ClassCount) -> Self {
        Self {
            n,
            counts: vec![vec![0; n.get()]; n.get()],
        }
    }

    /// Tallies (row, column) pairs, rejecting out-of-range indices.
    pub fn from_pairs<I>(pairs: I, n: ClassCount) -> Result<Self, RelabelError>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut m = Self::zeros(n);
        for (i, (row, col)) in pairs.into_iter().enumerate() {
            let label = if row >= n.get() {
                Some(row)
            } else if col >= n.get() {
                Some(col)
            } else {
                None
            };
            if let Some(label) = label {
                return Err(RelabelError::LabelOutOfRange {
                    clip_id: format!("pair #{i}"),
                    label,
                    n: n.get(),
                });
            }
            m.counts[row][col] += 1;
        }
        Ok(m)
    }

    /// Tallies records by (weak label, teacher prediction).
    ///
    /// Every record must carry a teacher prediction.
    pub fn from_records(records: &[ClipRecord], n: ClassCount) -> Result<Self, RelabelError> {
        let mut m = Self::zeros(n);
        for record in records {
            let teacher = record
                .teacher_pred
                .ok_or_else(|| RelabelError::MissingTeacherPred {
                    clip_id: record.clip_id.clone(),
                })?;
            for label in [record.weak_label, teacher] {
                if label >= n.get() {
                    return Err(RelabelError::LabelOutOfRange {
                        clip_id: record.clip_id.clone(),
                        label,
                        n: n.get(),
                    });
                }
            }
            m.counts[record.weak_label][teacher] += 1;
        }
        Ok(m)
    }

    /// The class count `n`.
    #[must_use]
    pub fn n(&self) -> ClassCount {
        self.n
    }

    /// Count in one cell.
    #[must_use]
    pub fn count(&self, row: usize, col: usize) -> u64 {
        self.counts[row][col]
    }

    /// Borrow of the raw row-major counts.
    #[must_use]
    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    /// Sum over all cells.
    #[must_use]
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Sum over the diagonal (samples where teacher agrees with weak label).
    #[must_use]
    pub fn trace(&self) -> u64 {
        (0..self.n.get()).map(|i| self.counts[i][i]).sum()
    }

    /// Adds another matrix's counts into this one. Shapes must match.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), RelabelError> {
        if self.n != other.n {
            return Err(RelabelError::ShapeMismatch {
                a: self.n.get(),
                b: other.n.get(),
            });
        }
        for (mine, theirs) in self.counts.iter_mut().zip(&other.counts) {
            for (m, t) in mine.iter_mut().zip(theirs) {
                *m += *t;
            }
        }
        Ok(())
    }

    /// Fraction of samples off the diagonal; errors on an empty matrix.
    pub fn noise_ratio(&self) -> Result<f64, RelabelError> {
        let total = self.total();
        if total == 0 {
            return Err(RelabelError::EmptyMatrix);
        }
        Ok((total - self.trace()) as f64 / total as f64)
    }

    /// Writes the matrix as CSV: a header of column class ids, then one row
    /// per weak-label class, each prefixed with its class id.
    pub fn write_csv<W: Write>(&self, mut writer: W) -> Result<(), RelabelError> {
        let n = self.n.get();
        let header: Vec<String> = (0..n).map(|c| c.to_string()).collect();
        writeln!(writer, ",{}", header.join(","))?;
        for (row, counts) in self.counts.iter().enumerate() {
            let cells: Vec<String> = counts.iter().map(|c| c.to_string()).collect();
            writeln!(writer, "{row},{}", cells.join(","))?;
        }
        writer.flush()?;
        Ok(())
    }

    /// Parses the CSV form produced by [`Self::write_csv`].
    pub fn read_csv<R: BufRead>(reader: R) -> Result<Self, RelabelError> {
        let parse_err = |line: usize, message: String| RelabelError::CsvParse { line, message };
        let mut lines = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if !line.trim().is_empty() {
                lines.push(line);
            }
        }
        let header = lines
            .first()
            .ok_or_else(|| parse_err(1, "empty confusion csv".into()))?;
        let mut fields = header.split(',');
        let corner = fields.next().unwrap_or_default();
        if !corner.is_empty() {
            return Err(parse_err(1, format!("expected empty corner cell, got {corner:?}")));
        }
        let cols: Vec<&str> = fields.collect();
        let n = ClassCount::new(cols.len())?;
        for (i, col) in cols.iter().enumerate() {
            if col.trim().parse::<usize>().map_err(|e| parse_err(1, e.to_string()))? != i {
                return Err(parse_err(1, format!("expected column id {i}, got {col:?}")));
            }
        }
        if lines.len() != n.get() + 1 {
            return Err(parse_err(
                lines.len(),
                format!("expected {} data rows, got {}", n.get(), lines.len() - 1),
            ));
        }
        let mut counts = Vec::with_capacity(n.get());
        for (r, line) in lines[1..].iter().enumerate() {
            let lineno = r + 2;
            let mut fields = line.split(',');
            let row_id = fields
                .next()
                .ok_or_else(|| parse_err(lineno, "missing row id".into()))?;
            if row_id.trim().parse::<usize>().map_err(|e| parse_err(lineno, e.to_string()))? != r {
                return Err(parse_err(lineno, format!("expected row id {r}, got {row_id:?}")));
            }
            let row: Vec<u64> = fields
                .map(|f| f.trim().parse::<u64>().map_err(|e| parse_err(lineno, e.to_string())))
                .collect::<Result<_, _>>()?;
            if row.len() != n.get() {
                return Err(parse_err(
                    lineno,
                    format!("expected {} cells, got {}", n.get(), row.len()),
                ));
            }
            counts.push(row);
        }
        Ok(Self { n, counts })
    }
}

/// The relabeling strategies and baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    /// Every (weak, teacher) cell is its own class.
    Spl,
    /// Budgeted cells kept, the rest merged into their row diagonal.
    SplM,
    /// Budgeted cells kept, the rest discarded.
    SplD,
    /// Per-row agree/disagree classes.
    SplB,
    /// Baseline: keep the weak label.
    WeakLabel,
    /// Baseline: use the teacher prediction.
    TeacherPred,
    /// Baseline: keep the weak label, drop clips the teacher disputes.
    AgreementFilter,
}

impl StrategyKind {
    /// All strategies, in reporting order.
    pub const ALL: [StrategyKind; 7] = [
        StrategyKind::Spl,
        StrategyKind::SplM,
        StrategyKind::SplD,
        StrategyKind::SplB,
        StrategyKind::WeakLabel,
        StrategyKind::TeacherPred,
        StrategyKind::AgreementFilter,
    ];

    /// The kebab-case name used in files and on the command line.
    #[must_use]
    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Spl => "spl",
            StrategyKind::SplM => "spl-m",
            StrategyKind::SplD => "spl-d",
            StrategyKind::SplB => "spl-b",
            StrategyKind::WeakLabel => "weak-label",
            StrategyKind::TeacherPred => "teacher-pred",
            StrategyKind::AgreementFilter => "agreement-filter",
        }
    }

    /// Whether this kind relabels through an [`SplLabelSpace`].
    #[must_use]
    pub fn uses_label_space(self) -> bool {
        matches!(
            self,
            StrategyKind::Spl | StrategyKind::SplM | StrategyKind::SplD | StrategyKind::SplB
        )
    }

    /// Whether this kind needs a class budget `k`.
    #[must_use]
    pub fn takes_budget(self) -> bool {
        matches!(self, StrategyKind::SplM | StrategyKind::SplD)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A strategy plus its class budget, where applicable.
///
/// `k` scales the reduced label spaces: `spl-m` and `spl-d` keep `k * n`
/// classes. Other kinds must leave it unset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

impl StrategyConfig {
    /// A strategy without a budget.
    #[must_use]
    pub fn new(kind: StrategyKind) -> Self {
        Self { kind, k: None }
    }

    /// A budgeted strategy.
    #[must_use]
    pub fn with_budget(kind: StrategyKind, k: usize) -> Self {
        Self { kind, k: Some(k) }
    }

    /// Checks the budget rules against a class count.
    pub fn validate(&self, n: ClassCount) -> Result<(), RelabelError> {
        if self.kind.takes_budget() {
            let k = self.k.ok_or(RelabelError::BudgetRequired { kind: self.kind })?;
            if k < 2 {
                return Err(RelabelError::BudgetTooSmall { k });
            }
            if k > n.get() {
                return Err(RelabelError::BudgetTooLarge { k, n: n.get() });
            }
        } else if self.k.is_some() {
            return Err(RelabelError::BudgetNotApplicable { kind: self.kind });
        }
        Ok(())
    }

    /// Human-readable label, e.g. `spl-m(k=4)`.
    #[must_use]
    pub fn label(&self) -> String {
        match self.k {
            Some(k) => format!("{}(k={k})", self.kind),
            None => self.kind.to_string(),
        }
    }
}

/// Where a confusion cell's samples end up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellAssignment {
    /// Relabel to this pseudo-label class id.
    Class(usize),
    /// Drop the samples.
    Discard,
}

impl Serialize for CellAssignment {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            CellAssignment::Class(id) => serializer.serialize_u64(*id as u64),
            CellAssignment::Discard => serializer.serialize_str("discard"),
        }
    }
}

impl<'de> Deserialize<'de> for CellAssignment {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Id(u64),
            Tag(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Id(id) => Ok(CellAssignment::Class(id as usize)),
            Raw::Tag(tag) if tag == "discard" => Ok(CellAssignment::Discard),
            Raw::Tag(tag) => Err(D::Error::custom(format!(
                "cell class must be an id or \"discard\", got {tag:?}"
            ))),
        }
    }
}

/// Combined class id for a (weak, teacher) pair under the full `spl`
/// strategy: `n * weak + teacher`.
#[must_use]
pub fn spl_class_id(weak: usize, teacher: usize, n: ClassCount) -> usize {
    debug_assert!(weak < n.get() && teacher < n.get());
    n.get() * weak + teacher
}

/// Inverse of [`spl_class_id`]: recovers the (weak, teacher) pair.
#[must_use]
pub fn spl_class_pair(id: usize, n: ClassCount) -> (usize, usize) {
    debug_assert!(id < n.get() * n.get());
    (id / n.get(), id % n.get())
}

/// A complete mapping from confusion cells to pseudo-label classes.
///
/// Invariants, enforced at construction and on deserialization:
/// - every diagonal cell `(w, w)` maps to class `w` (under the full `spl`
///   strategy, to its combined id `n*w + w`);
/// - class ids are dense in `0..num_classes`;
/// - `spl` yields `n*n` classes, `spl-b` yields `2n`, and `spl-m`/`spl-d`
///   yield exactly `k*n`;
/// - only `spl-d` may discard cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LabelSpaceFile", into = "LabelSpaceFile")]
pub struct SplLabelSpace {
    strategy: StrategyConfig,
    n: ClassCount,
    num_classes: usize,
    /// Row-major `n * n` cell assignments.
    assignments: Vec<CellAssignment>,
    /// Row-major source confusion counts.
    cell_counts: Vec<u64>,
    /// Samples covered ratio: selected-cell samples over total samples.
    scr: f64,
}

impl SplLabelSpace {
    /// Builds the label space for an SPL strategy from a confusion matrix.
    ///
    /// Baseline kinds are rejected; use [`relabel_baseline`] for those. An
    /// all-zero matrix is allowed (budget ties then fall back to cell
    /// position) and reports an `scr` of 1.0.
    pub fn build(confusion: &ConfusionMatrix, strategy: StrategyConfig) -> Result<Self, RelabelError> {
        if !strategy.kind.uses_label_space() {
            return Err(RelabelError::NotASplStrategy { kind: strategy.kind });
        }
        strategy.validate(confusion.n())?;
        let n = confusion.n();
        let nn = n.get();
        let cell_counts: Vec<u64> = confusion.counts().iter().flatten().copied().collect();

        let mut assignments = vec![CellAssignment::Discard; nn * nn];
        for w in 0..nn {
            assignments[w * nn + w] = CellAssignment::Class(w);
        }

        let num_classes = match strategy.kind {
            StrategyKind::Spl => {
                for w in 0..nn {
                    for t in 0..nn {
                        assignments[w * nn + t] = CellAssignment::Class(spl_class_id(w, t, n));
                    }
                }
                nn * nn
            }
            StrategyKind::SplB => {
                for w in 0..nn {
                    for t in 0..nn {
                        if w != t {
                            assignments[w * nn + t] = CellAssignment::Class(nn + w);
                        }
                    }
                }
                2 * nn
            }
            StrategyKind::SplM | StrategyKind::SplD => {
                let k = strategy.k.expect("validated above");
                // Rank off-diagonal cells by count, largest first; ties go to
                // the earlier (row, col) position.
                let mut off_diag: Vec<(usize, usize)> = (0..nn)
                    .flat_map(|w| (0..nn).map(move |t| (w, t)))
                    .filter(|&(w, t)| w != t)
                    .collect();
                off_diag.sort_by(|&(r1, c1), &(r2, c2)| {
                    cell_counts[r2 * nn + c2]
                        .cmp(&cell_counts[r1 * nn + c1])
                        .then(r1.cmp(&r2))
                        .then(c1.cmp(&c2))
                });
                let selected = (k - 1) * nn;
                for (rank, &(w, t)) in off_diag[..selected].iter().enumerate() {
                    assignments[w * nn + t] = CellAssignment::Class(nn + rank);
                }
                if strategy.kind == StrategyKind::SplM {
                    for &(w, t) in &off_diag[selected..] {
                        assignments[w * nn + t] = CellAssignment::Class(w);
                    }
                }
                k * nn
            }
            _ => unreachable!("baselines rejected above"),
        };

        let scr = samples_covered_ratio(strategy.kind, &assignments, &cell_counts, nn);
        Ok(Self {
            strategy,
            n,
            num_classes,
            assignments,
            cell_counts,
            scr,
        })
    }

    /// The strategy this space was built for.
    #[must_use]
    pub fn strategy(&self) -> StrategyConfig {
        self.strategy
    }

    /// The original class count.
    #[must_use]
    pub fn n(&self) -> ClassCount {
        self.n
    }

    /// Size of the pseudo-label space.
    #[must_use]
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Samples covered ratio: selected-cell samples over total samples.
    ///
    /// For `spl` and `spl-b` every cell is selected, so this is 1.0. For the
    /// budgeted kinds it counts the budgeted cells only — under `spl-m`
    /// merged samples still train, but outside their own cell.
    #[must_use]
    pub fn scr(&self) -> f64 {
        self.scr
    }

    /// Assignment of one confusion cell.
    #[must_use]
    pub fn assignment(&self, weak: usize, teacher: usize) -> CellAssignment {
        self.assignments[weak * self.n.get() + teacher]
    }

    /// Source confusion count of one cell.
    #[must_use]
    pub fn cell_count(&self, weak: usize, teacher: usize) -> u64 {
        self.cell_counts[weak * self.n.get() + teacher]
    }

    /// Samples per pseudo-label class, after merging.
    #[must_use]
    pub fn class_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.num_classes];
        for (assignment, &count) in self.assignments.iter().zip(&self.cell_counts) {
            if let CellAssignment::Class(id) = assignment {
                counts[*id] += count;
            }
        }
        counts
    }

    /// Total samples dropped by discarded cells.
    #[must_use]
    pub fn discarded_count(&self) -> u64 {
        self.assignments
            .iter()
            .zip(&self.cell_counts)
            .filter(|(a, _)| matches!(a, CellAssignment::Discard))
            .map(|(_, &count)| count)
            .sum()
    }

    /// Total samples in the source confusion matrix.
    #[must_use]
    pub fn total_count(&self) -> u64 {
        self.cell_counts.iter().sum()
    }
}

/// Fraction of samples in budget-selected cells.
///
/// Selected means: diagonal cells, plus off-diagonal cells holding a class
/// id of their own (`>= n`). An empty matrix covers everything vacuously.
fn samples_covered_ratio(
    kind: StrategyKind,
    assignments: &[CellAssignment],
    cell_counts: &[u64],
    n: usize,
) -> f64 {
    if !kind.takes_budget() {
        return 1.0;
    }
    let total: u64 = cell_counts.iter().sum();
    if total == 0 {
        return 1.0;
    }
    let selected: u64 = assignments
        .iter()
        .enumerate()
        .filter(|(idx, a)| {
            let (w, t) = (idx / n, idx % n);
            matches!(a, CellAssignment::Class(id) if w == t || *id >= n)
        })
        .map(|(idx, _)| cell_counts[idx])
        .sum();
    selected as f64 / total as f64
}

/// On-disk form of a label space: the cells spelled out one by one.
#[derive(Serialize, Deserialize)]
struct LabelSpaceFile {
    strategy: StrategyConfig,
    n: ClassCount,
    num_classes: usize,
    scr: f64,
    cells: Vec<CellFile>,
}

#[derive(Serialize, Deserialize)]
struct CellFile {
    row: usize,
    col: usize,
    class: CellAssignment,
    count: u64,
}

impl From<SplLabelSpace> for LabelSpaceFile {
    fn from(space: SplLabelSpace) -> Self {
        let n = space.n.get();
        let cells = (0..n * n)
            .map(|idx| CellFile {
                row: idx / n,
                col: idx % n,
                class: space.assignments[idx],
                count: space.cell_counts[idx],
            })
            .collect();
        Self {
            strategy: space.strategy,
            n: space.n,
            num_classes: space.num_classes,
            scr: space.scr,
            cells,
        }
    }
}

impl TryFrom<LabelSpaceFile> for SplLabelSpace {
    type Error = RelabelError;

    fn try_from(file: LabelSpaceFile) -> Result<Self, Self::Error> {
        let invalid = |msg: String| RelabelError::InvalidLabelSpace(msg);
        let n = file.n.get();
        file.strategy
            .validate(file.n)
            .map_err(|e| invalid(e.to_string()))?;
        if !file.strategy.kind.uses_label_space() {
            return Err(invalid(format!("{} has no label space", file.strategy.kind)));
        }
        let expected_classes = match file.strategy.kind {
            StrategyKind::Spl => n * n,
            StrategyKind::SplB => 2 * n,
            StrategyKind::SplM | StrategyKind::SplD => file.strategy.k.unwrap() * n,
            _ => unreachable!(),
        };
        if file.num_classes != expected_classes {
            return Err(invalid(format!(
                "{} over {n} classes must have {expected_classes} classes, file says {}",
                file.strategy.label(),
                file.num_classes
            )));
        }
        if file.cells.len() != n * n {
            return Err(invalid(format!(
                "expected {} cells, file has {}",
                n * n,
                file.cells.len()
            )));
        }
        let mut assignments = vec![None; n * n];
        let mut cell_counts = vec![0u64; n * n];
        for cell in &file.cells {
            if cell.row >= n || cell.col >= n {
                return Err(invalid(format!(
                    "cell ({}, {}) out of range for n={n}",
                    cell.row, cell.col
                )));
            }
            let idx = cell.row * n + cell.col;
            if assignments[idx].is_some() {
                return Err(invalid(format!("duplicate cell ({}, {})", cell.row, cell.col)));
            }
            if let CellAssignment::Class(id) = cell.class {
                if id >= file.num_classes {
                    return Err(invalid(format!(
                        "cell ({}, {}) assigned class {id}, beyond {} classes",
                        cell.row, cell.col, file.num_classes
                    )));
                }
            }
            if cell.class == CellAssignment::Discard && file.strategy.kind != StrategyKind::SplD {
                return Err(invalid(format!(
                    "{} may not discard cells",
                    file.strategy.kind
                )));
            }
            if cell.row == cell.col {
                // The full strategy keeps its combined ids on the diagonal;
                // the reduced strategies all pin (w, w) to class w.
                let expected = match file.strategy.kind {
                    StrategyKind::Spl => spl_class_id(cell.row, cell.row, file.n),
                    _ => cell.row,
                };
                if cell.class != CellAssignment::Class(expected) {
                    return Err(invalid(format!(
                        "diagonal cell ({0}, {0}) must map to class {expected}",
                        cell.row
                    )));
                }
            }
            assignments[idx] = Some(cell.class);
            cell_counts[idx] = cell.count;
        }
        let assignments: Vec<CellAssignment> = assignments
            .into_iter()
            .enumerate()
            .map(|(idx, a)| a.ok_or_else(|| invalid(format!("missing cell ({}, {})", idx / n, idx % n))))
            .collect::<Result<_, _>>()?;
        let mut seen = vec![false; file.num_classes];
        for assignment in &assignments {
            if let CellAssignment::Class(id) = assignment {
                seen[*id] = true;
            }
        }
        if let Some(missing) = seen.iter().position(|used| !used) {
            return Err(invalid(format!("class {missing} is assigned to no cell")));
        }
        let recomputed = samples_covered_ratio(file.strategy.kind, &assignments, &cell_counts, n);
        if (recomputed - file.scr).abs() > 1e-9 {
            return Err(invalid(format!(
                "scr {} does not match cell counts (expected {recomputed})",
                file.scr
            )));
        }
        Ok(Self {
            strategy: file.strategy,
            n: file.n,
            num_classes: file.num_classes,
            assignments,
            cell_counts,
            // Keep the stored value so round trips are byte-stable.
            scr: file.scr,
        })
    }
}

/// Relabels records through a label space.
///
/// Discarded cells drop their records; the rest keep their input order and
/// gain a `pseudo_label`. Every record needs a teacher prediction.
pub fn relabel(records: &[ClipRecord], space: &SplLabelSpace) -> Result<Vec<ClipRecord>, RelabelError> {
    let n = space.n().get();
    let mut out = Vec::with_capacity(records.len());
    for record in records {
        let teacher = record
            .teacher_pred
            .ok_or_else(|| RelabelError::MissingTeacherPred {
                clip_id: record.clip_id.clone(),
            })?;
        for label in [record.weak_label, teacher] {
            if label >= n {
                return Err(RelabelError::LabelOutOfRange {
                    clip_id: record.clip_id.clone(),
                    label,
                    n,
                });
            }
        }
        match space.assignment(record.weak_label, teacher) {
            CellAssignment::Class(id) => {
                let mut record = record.clone();
                record.pseudo_label = Some(id);
                out.push(record);
            }
            CellAssignment::Discard => {}
        }
    }
    Ok(out)
}

/// Relabels records with one of the baseline strategies.
///
/// `weak-label` works without teacher predictions; the other baselines need
/// them. `agreement-filter` drops records where the teacher disagrees.
pub fn relabel_baseline(
    records: &[ClipRecord],
    kind: StrategyKind,
    n: ClassCount,
) -> Result<Vec<ClipRecord>, RelabelError> {
    if kind.uses_label_space() {
        return Err(RelabelError::NotABaseline { kind });
    }
    let check = |record: &ClipRecord, label: usize| -> Result<usize, RelabelError> {
        if label >= n.get() {
            return Err(RelabelError::LabelOutOfRange {
                clip_id: record.clip_id.clone(),
                label,
                n: n.get(),
            });
        }
        Ok(label)
    };
    let teacher_of = |record: &ClipRecord| -> Result<usize, RelabelError> {
        let teacher = record
            .teacher_pred
            .ok_or_else(|| RelabelError::MissingTeacherPred {
                clip_id: record.clip_id.clone(),
            })?;
        check(record, teacher)
    };
    let mut out = Vec::with_capacity(records.len());
    for record in records {
        let weak = check(record, record.weak_label)?;
        let pseudo = match kind {
            StrategyKind::WeakLabel => Some(weak),
            StrategyKind::TeacherPred => Some(teacher_of(record)?),
            StrategyKind::AgreementFilter => {
                let teacher = teacher_of(record)?;
                (teacher == weak).then_some(weak)
            }
            _ => unreachable!("label-space kinds rejected above"),
        };
        if let Some(pseudo) = pseudo {
            let mut record = record.clone();
            record.pseudo_label = Some(pseudo);
            out.push(record);
        }
    }
    Ok(out)
}

/// One point of a budget sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScrPoint {
    pub k: usize,
    pub num_classes: usize,
    pub scr: f64,
}

/// Samples-covered ratio for each budget in `budgets`, under one budgeted
/// strategy kind.
pub fn scr_curve(
    confusion: &ConfusionMatrix,
    kind: StrategyKind,
    budgets: &[usize],
) -> Result<Vec<ScrPoint>, RelabelError> {
    budgets
        .iter()
        .map(|&k| {
            let space = SplLabelSpace::build(confusion, StrategyConfig::with_budget(kind, k))?;
            Ok(ScrPoint {
                k,
                num_classes: space.num_classes(),
                scr: space.scr(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(v: usize) -> ClassCount {
        ClassCount::new(v).unwrap()
    }

    fn record(clip_id: &str, weak: usize, teacher: Option<usize>) -> ClipRecord {
        ClipRecord {
            clip_id: clip_id.into(),
            video_id: format!("{clip_id}-video"),
            weak_label: weak,
            features: vec![0.0],
            true_label: None,
            teacher_pred: teacher,
            pseudo_label: None,
        }
    }

    fn matrix(counts: &[&[u64]]) -> ConfusionMatrix {
        let mut pairs = Vec::new();
        for (r, row) in counts.iter().enumerate() {
            for (c, &count) in row.iter().enumerate() {
                for _ in 0..count {
                    pairs.push((r, c));
                }
            }
        }
        ConfusionMatrix::from_pairs(pairs, n(counts.len())).unwrap()
    }

    /// N=3 worked example used across the strategy tests.
    ///
    /// Off-diagonal cells by descending count, position-tiebroken:
    /// (2,0)=5, (0,1)=3, (1,2)=2, (0,2)=1, (1,0)=0, (2,1)=0.
    fn worked_matrix() -> ConfusionMatrix {
        matrix(&[&[10, 3, 1], &[0, 8, 2], &[5, 0, 9]])
    }

    #[test]
    fn from_records_counts_weak_by_teacher() {
        let records = vec![
            record("a", 0, Some(0)),
            record("b", 0, Some(1)),
            record("c", 1, Some(1)),
            record("d", 1, Some(1)),
        ];
        let m = ConfusionMatrix::from_records(&records, n(2)).unwrap();
        assert_eq!(m.counts(), &[vec![1, 1], vec![0, 2]]);
        assert_eq!(m.total(), 4);
        assert_eq!(m.trace(), 3);
        assert!((m.noise_ratio().unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn from_records_requires_teacher_and_range() {
        let missing = vec![record("a", 0, None)];
        assert!(matches!(
            ConfusionMatrix::from_records(&missing, n(2)),
            Err(RelabelError::MissingTeacherPred { .. })
        ));
        let out_of_range = vec![record("a", 2, Some(0))];
        assert!(matches!(
            ConfusionMatrix::from_records(&out_of_range, n(2)),
            Err(RelabelError::LabelOutOfRange { label: 2, .. })
        ));
    }

    #[test]
    fn noise_ratio_extremes() {
        assert_eq!(matrix(&[&[4, 0], &[0, 9]]).noise_ratio().unwrap(), 0.0);
        assert_eq!(matrix(&[&[0, 3], &[5, 0]]).noise_ratio().unwrap(), 1.0);
        assert!((matrix(&[&[7, 1], &[0, 0]]).noise_ratio().unwrap() - 0.125).abs() < 1e-15);
        assert!(matches!(
            ConfusionMatrix::zeros(n(2)).noise_ratio(),
            Err(RelabelError::EmptyMatrix)
        ));
    }

    #[test]
    fn merge_adds_counts_and_checks_shape() {
        let mut a = matrix(&[&[1, 1], &[0, 2]]);
        let b = matrix(&[&[0, 0], &[1, 0]]);
        a.merge(&b).unwrap();
        assert_eq!(a.counts(), &[vec![1, 1], vec![1, 2]]);
        let c = matrix(&[&[1, 0, 0], &[0, 1, 0], &[0, 0, 1]]);
        assert!(matches!(a.merge(&c), Err(RelabelError::ShapeMismatch { a: 2, b: 3 })));
    }

    #[test]
    fn csv_round_trip_matches_hand_written_form() {
        let m = worked_matrix();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let expected = ",0,1,2\n0,10,3,1\n1,0,8,2\n2,5,0,9\n";
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), expected);
        let back = ConfusionMatrix::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn csv_rejects_malformed_input() {
        for (input, what) in [
            ("", "empty"),
            ("x,0,1\n0,1,2\n1,3,4\n", "corner"),
            (",0,2\n0,1,2\n1,3,4\n", "column ids"),
            (",0,1\n0,1,2\n", "row count"),
            (",0,1\n0,1,2\n2,3,4\n", "row ids"),
            (",0,1\n0,1\n1,3,4\n", "cell count"),
            (",0,1\n0,1,-2\n1,3,4\n", "negative count"),
        ] {
            let result = ConfusionMatrix::read_csv(input.as_bytes());
            assert!(result.is_err(), "csv with bad {what} should fail");
        }
    }

    #[test]
    fn spl_class_id_matches_row_major_layout() {
        assert_eq!(spl_class_id(6, 7, n(10)), 67);
        assert_eq!(spl_class_id(2, 2, n(4)), 10);
        assert_eq!(spl_class_pair(67, n(10)), (6, 7));
    }

    #[test]
    fn spl_class_id_is_a_bijection_for_all_small_n() {
        for classes in 2..=32 {
            let nn = n(classes);
            let mut seen = vec![false; classes * classes];
            for w in 0..classes {
                for t in 0..classes {
                    let id = spl_class_id(w, t, nn);
                    assert!(!seen[id], "id {id} hit twice at n={classes}");
                    seen[id] = true;
                    assert_eq!(spl_class_pair(id, nn), (w, t));
                }
            }
            assert!(seen.iter().all(|&s| s));
        }
    }

    #[test]
    fn full_space_is_the_row_major_bijection() {
        let space = SplLabelSpace::build(&worked_matrix(), StrategyConfig::new(StrategyKind::Spl)).unwrap();
        assert_eq!(space.num_classes(), 9);
        assert_eq!(space.scr(), 1.0);
        for w in 0..3 {
            for t in 0..3 {
                assert_eq!(space.assignment(w, t), CellAssignment::Class(3 * w + t));
            }
        }
        assert_eq!(space.class_counts(), vec![10, 3, 1, 0, 8, 2, 5, 0, 9]);
    }

    #[test]
    fn binary_space_groups_disagreement_by_row() {
        let space = SplLabelSpace::build(&worked_matrix(), StrategyConfig::new(StrategyKind::SplB)).unwrap();
        assert_eq!(space.num_classes(), 6);
        assert_eq!(space.scr(), 1.0);
        for w in 0..3 {
            assert_eq!(space.assignment(w, w), CellAssignment::Class(w));
            for t in 0..3 {
                if t != w {
                    assert_eq!(space.assignment(w, t), CellAssignment::Class(3 + w));
                }
            }
        }
        assert_eq!(space.class_counts(), vec![10, 8, 9, 4, 2, 5]);
    }

    #[test]
    fn merge_space_keeps_top_cells_and_merges_the_rest() {
        let strategy = StrategyConfig::with_budget(StrategyKind::SplM, 2);
        let space = SplLabelSpace::build(&worked_matrix(), strategy).unwrap();
        assert_eq!(space.num_classes(), 6);
        // Top three off-diagonal cells, in descending-count order.
        assert_eq!(space.assignment(2, 0), CellAssignment::Class(3));
        assert_eq!(space.assignment(0, 1), CellAssignment::Class(4));
        assert_eq!(space.assignment(1, 2), CellAssignment::Class(5));
        // Unselected cells merge into their row diagonal.
        assert_eq!(space.assignment(0, 2), CellAssignment::Class(0));
        assert_eq!(space.assignment(1, 0), CellAssignment::Class(1));
        assert_eq!(space.assignment(2, 1), CellAssignment::Class(2));
        assert_eq!(space.class_counts(), vec![11, 8, 9, 5, 3, 2]);
        assert_eq!(space.discarded_count(), 0);
        assert!((space.scr() - 37.0 / 38.0).abs() < 1e-15);
    }

    #[test]
    fn discard_space_drops_unselected_cells() {
        let strategy = StrategyConfig::with_budget(StrategyKind::SplD, 2);
        let space = SplLabelSpace::build(&worked_matrix(), strategy).unwrap();
        assert_eq!(space.num_classes(), 6);
        assert_eq!(space.assignment(0, 2), CellAssignment::Discard);
        assert_eq!(space.assignment(1, 0), CellAssignment::Discard);
        assert_eq!(space.assignment(2, 1), CellAssignment::Discard);
        assert_eq!(space.class_counts(), vec![10, 8, 9, 5, 3, 2]);
        assert_eq!(space.discarded_count(), 1);
        assert!((space.scr() - 37.0 / 38.0).abs() < 1e-15);
    }

    #[test]
    fn budget_equal_to_n_selects_every_cell() {
        let m = worked_matrix();
        let full = SplLabelSpace::build(&m, StrategyConfig::new(StrategyKind::Spl)).unwrap();
        let discard = SplLabelSpace::build(&m, StrategyConfig::with_budget(StrategyKind::SplD, 3)).unwrap();
        assert_eq!(discard.num_classes(), full.num_classes());
        assert_eq!(discard.scr(), 1.0);
        assert_eq!(discard.discarded_count(), 0);
        // Same partition of cells into classes, possibly different ids.
        for w in 0..3 {
            for t in 0..3 {
                assert!(matches!(discard.assignment(w, t), CellAssignment::Class(_)));
            }
        }
    }

    #[test]
    fn budget_rules_are_enforced() {
        let m = worked_matrix();
        let err = SplLabelSpace::build(&m, StrategyConfig::new(StrategyKind::SplM)).unwrap_err();
        assert!(matches!(err, RelabelError::BudgetRequired { .. }));
        let err = SplLabelSpace::build(&m, StrategyConfig::with_budget(StrategyKind::SplD, 1)).unwrap_err();
        assert!(matches!(err, RelabelError::BudgetTooSmall { k: 1 }));
        let err = SplLabelSpace::build(&m, StrategyConfig::with_budget(StrategyKind::SplD, 4)).unwrap_err();
        assert!(matches!(err, RelabelError::BudgetTooLarge { k: 4, n: 3 }));
        let err = SplLabelSpace::build(&m, StrategyConfig::with_budget(StrategyKind::Spl, 2)).unwrap_err();
        assert!(matches!(err, RelabelError::BudgetNotApplicable { .. }));
        let err = SplLabelSpace::build(&m, StrategyConfig::new(StrategyKind::WeakLabel)).unwrap_err();
        assert!(matches!(err, RelabelError::NotASplStrategy { .. }));
    }

    #[test]
    fn relabel_assigns_cells_and_skips_discards() {
        let space = SplLabelSpace::build(
            &worked_matrix(),
            StrategyConfig::with_budget(StrategyKind::SplD, 2),
        )
        .unwrap();
        let records = vec![
            record("keep-diag", 1, Some(1)),     // cell (1,1) -> class 1
            record("keep-selected", 2, Some(0)), // cell (2,0) -> class 3
            record("dropped", 0, Some(2)),       // cell (0,2) -> discard
            record("keep-last", 0, Some(1)),     // cell (0,1) -> class 4
        ];
        let out = relabel(&records, &space).unwrap();
        let ids: Vec<&str> = out.iter().map(|r| r.clip_id.as_str()).collect();
        assert_eq!(ids, ["keep-diag", "keep-selected", "keep-last"]);
        let pseudo: Vec<usize> = out.iter().map(|r| r.pseudo_label.unwrap()).collect();
        assert_eq!(pseudo, [1, 3, 4]);
        // Inputs are untouched apart from the new pseudo-label.
        assert_eq!(out[0].weak_label, 1);
        assert_eq!(out[0].teacher_pred, Some(1));
    }

    #[test]
    fn relabel_requires_teacher_predictions() {
        let space = SplLabelSpace::build(&worked_matrix(), StrategyConfig::new(StrategyKind::Spl)).unwrap();
        let err = relabel(&[record("a", 0, None)], &space).unwrap_err();
        assert!(matches!(err, RelabelError::MissingTeacherPred { .. }));
    }

    #[test]
    fn baseline_weak_label_works_without_teacher() {
        let records = vec![record("a", 2, None), record("b", 0, Some(1))];
        let out = relabel_baseline(&records, StrategyKind::WeakLabel, n(3)).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].pseudo_label, Some(2));
        assert_eq!(out[1].pseudo_label, Some(0));
    }

    #[test]
    fn baseline_teacher_pred_uses_teacher() {
        let records = vec![record("a", 2, Some(1))];
        let out = relabel_baseline(&records, StrategyKind::TeacherPred, n(3)).unwrap();
        assert_eq!(out[0].pseudo_label, Some(1));
        let err = relabel_baseline(&[record("b", 0, None)], StrategyKind::TeacherPred, n(3));
        assert!(matches!(err, Err(RelabelError::MissingTeacherPred { .. })));
    }

    #[test]
    fn baseline_agreement_filter_drops_disputed_clips() {
        let records = vec![
            record("agree", 1, Some(1)),
            record("disagree", 1, Some(2)),
            record("agree2", 0, Some(0)),
        ];
        let out = relabel_baseline(&records, StrategyKind::AgreementFilter, n(3)).unwrap();
        let ids: Vec<&str> = out.iter().map(|r| r.clip_id.as_str()).collect();
        assert_eq!(ids, ["agree", "agree2"]);
        assert_eq!(out[0].pseudo_label, Some(1));
    }

    #[test]
    fn baseline_rejects_label_space_kinds() {
        let err = relabel_baseline(&[], StrategyKind::SplB, n(3)).unwrap_err();
        assert!(matches!(err, RelabelError::NotABaseline { .. }));
    }

    #[test]
    fn scr_curve_is_monotonic_and_hits_one_at_full_budget() {
        let m = worked_matrix();
        let points = scr_curve(&m, StrategyKind::SplD, &[2, 3]).unwrap();
        assert_eq!(points.len(), 2);
        assert_eq!(points[0].num_classes, 6);
        assert!((points[0].scr - 37.0 / 38.0).abs() < 1e-15);
        assert_eq!(points[1].scr, 1.0);
        assert!(scr_curve(&m, StrategyKind::Spl, &[2]).is_err());
    }

    #[test]
    fn strategy_names_round_trip_through_serde() {
        for kind in StrategyKind::ALL {
            let json = serde_json::to_string(&kind).unwrap();
            assert_eq!(json, format!("\"{}\"", kind.as_str()));
            let back: StrategyKind = serde_json::from_str(&json).unwrap();
            assert_eq!(back, kind);
        }
    }

    #[test]
    fn label_space_serde_round_trip_is_byte_stable() {
        for strategy in [
            StrategyConfig::new(StrategyKind::Spl),
            StrategyConfig::new(StrategyKind::SplB),
            StrategyConfig::with_budget(StrategyKind::SplM, 2),
            StrategyConfig::with_budget(StrategyKind::SplD, 2),
        ] {
            let space = SplLabelSpace::build(&worked_matrix(), strategy).unwrap();
            let json = serde_json::to_string(&space).unwrap();
            let back: SplLabelSpace = serde_json::from_str(&json).unwrap();
            assert_eq!(back, space, "round trip for {}", strategy.label());
            assert_eq!(serde_json::to_string(&back).unwrap(), json);
        }
    }

    #[test]
    fn label_space_file_spells_out_discards() {
        let space = SplLabelSpace::build(
            &worked_matrix(),
            StrategyConfig::with_budget(StrategyKind::SplD, 2),
        )
        .unwrap();
        let json = serde_json::to_string(&space).unwrap();
        assert!(json.contains("\"class\":\"discard\""));
        assert!(json.contains("\"strategy\":{\"kind\":\"spl-d\",\"k\":2}"));
    }

    #[test]
    fn label_space_deserialization_rejects_violations() {
        let space = SplLabelSpace::build(
            &worked_matrix(),
            StrategyConfig::with_budget(StrategyKind::SplM, 2),
        )
        .unwrap();
        let mut value: serde_json::Value = serde_json::to_value(&space).unwrap();

        // Tampered class count.
        value["num_classes"] = 7.into();
        assert!(serde_json::from_value::<SplLabelSpace>(value.clone()).is_err());
        value["num_classes"] = 6.into();

        // A diagonal cell must keep its own id.
        let cells = value["cells"].as_array().unwrap().clone();
        let diag = cells
            .iter()
            .position(|c| c["row"] == 1 && c["col"] == 1)
            .unwrap();
        value["cells"][diag]["class"] = 5.into();
        assert!(serde_json::from_value::<SplLabelSpace>(value.clone()).is_err());
        value["cells"][diag]["class"] = 1.into();

        // spl-m may not discard.
        value["cells"][0]["class"] = "discard".into();
        assert!(serde_json::from_value::<SplLabelSpace>(value.clone()).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_matrix() -> impl Strategy<Value = ConfusionMatrix> {
            (2usize..=8).prop_flat_map(|classes| {
                proptest::collection::vec(0u64..50, classes * classes).prop_map(move |flat| {
                    let counts: Vec<Vec<u64>> = flat.chunks(classes).map(<[u64]>::to_vec).collect();
                    let rows: Vec<&[u64]> = counts.iter().map(Vec::as_slice).collect();
                    super::matrix(&rows)
                })
            })
        }

        proptest! {
            #[test]
            fn full_space_contracts(m in arb_matrix()) {
                let nn = m.n().get();
                let space = SplLabelSpace::build(&m, StrategyConfig::new(StrategyKind::Spl)).unwrap();
                prop_assert_eq!(space.num_classes(), nn * nn);
                prop_assert_eq!(space.scr(), 1.0);
                let mut seen = vec![false; nn * nn];
                for w in 0..nn {
                    for t in 0..nn {
                        match space.assignment(w, t) {
                            CellAssignment::Class(id) => {
                                prop_assert!(!seen[id]);
                                seen[id] = true;
                            }
                            CellAssignment::Discard => prop_assert!(false, "full space discards nothing"),
                        }
                    }
                }
                let total: u64 = space.class_counts().iter().sum();
                prop_assert_eq!(total, m.total());
            }

            #[test]
            fn budgeted_space_contracts(m in arb_matrix(), k_seed in 0usize..100) {
                let nn = m.n().get();
                let k = 2 + k_seed % (nn - 1); // k in 2..=n
                for kind in [StrategyKind::SplM, StrategyKind::SplD] {
                    let space = SplLabelSpace::build(&m, StrategyConfig::with_budget(kind, k)).unwrap();
                    prop_assert_eq!(space.num_classes(), k * nn);
                    prop_assert!((0.0..=1.0).contains(&space.scr()));

                    let mut discards = 0usize;
                    let mut off_diag_ids = Vec::new();
                    for w in 0..nn {
                        prop_assert_eq!(space.assignment(w, w), CellAssignment::Class(w));
                        for t in 0..nn {
                            match space.assignment(w, t) {
                                CellAssignment::Class(id) => {
                                    prop_assert!(id < space.num_classes());
                                    if id >= nn {
                                        off_diag_ids.push((id, space.cell_count(w, t), w, t));
                                    } else if w != t {
                                        // Merged cells go to their own row's diagonal.
                                        prop_assert_eq!(kind, StrategyKind::SplM);
                                        prop_assert_eq!(id, w);
                                    }
                                }
                                CellAssignment::Discard => {
                                    prop_assert_eq!(kind, StrategyKind::SplD);
                                    discards += 1;
                                }
                            }
                        }
                    }
                    // Exactly (k-1)*n off-diagonal cells own a class id, and the
                    // ids n.. are dense and ordered by descending count.
                    off_diag_ids.sort_by_key(|&(id, ..)| id);
                    prop_assert_eq!(off_diag_ids.len(), (k - 1) * nn);
                    for (i, &(id, count, r, c)) in off_diag_ids.iter().enumerate() {
                        prop_assert_eq!(id, nn + i);
                        if i > 0 {
                            let (_, prev_count, pr, pc) = off_diag_ids[i - 1];
                            prop_assert!(
                                prev_count > count || (prev_count == count && (pr, pc) < (r, c)),
                                "budget ranking out of order at id {}", id
                            );
                        }
                    }
                    if kind == StrategyKind::SplD {
                        prop_assert_eq!(discards, nn * nn - k * nn);
                        let kept: u64 = space.class_counts().iter().sum();
                        prop_assert_eq!(kept + space.discarded_count(), m.total());
                        if m.total() > 0 {
                            let rounded = (space.scr() * m.total() as f64).round() as u64;
                            prop_assert_eq!(rounded, kept);
                        }
                    } else {
                        prop_assert_eq!(discards, 0);
                        let total: u64 = space.class_counts().iter().sum();
                        prop_assert_eq!(total, m.total());
                    }
                }
            }

            #[test]
            fn scr_grows_with_budget(m in arb_matrix()) {
                let nn = m.n().get();
                let budgets: Vec<usize> = (2..=nn).collect();
                let points = scr_curve(&m, StrategyKind::SplD, &budgets).unwrap();
                for pair in points.windows(2) {
                    prop_assert!(pair[1].scr >= pair[0].scr - 1e-15);
                }
                prop_assert_eq!(points.last().unwrap().scr, 1.0);
            }

            #[test]
            fn binary_space_contracts(m in arb_matrix()) {
                let nn = m.n().get();
                let space = SplLabelSpace::build(&m, StrategyConfig::new(StrategyKind::SplB)).unwrap();
                prop_assert_eq!(space.num_classes(), 2 * nn);
                let counts = space.class_counts();
                for w in 0..nn {
                    prop_assert_eq!(space.assignment(w, w), CellAssignment::Class(w));
                    prop_assert_eq!(counts[w], m.count(w, w));
                    let row_total: u64 = (0..nn).map(|t| m.count(w, t)).sum();
                    prop_assert_eq!(counts[nn + w], row_total - m.count(w, w));
                }
            }

            #[test]
            fn label_space_round_trips_for_random_matrices(m in arb_matrix(), k_seed in 0usize..100) {
                let nn = m.n().get();
                let k = 2 + k_seed % (nn - 1);
                for strategy in [
                    StrategyConfig::new(StrategyKind::Spl),
                    StrategyConfig::new(StrategyKind::SplB),
                    StrategyConfig::with_budget(StrategyKind::SplM, k),
                    StrategyConfig::with_budget(StrategyKind::SplD, k),
                ] {
                    let space = SplLabelSpace::build(&m, strategy).unwrap();
                    let json = serde_json::to_string(&space).unwrap();
                    let back: SplLabelSpace = serde_json::from_str(&json).unwrap();
                    prop_assert_eq!(&back, &space);
                }
            }
        }
    }
}
