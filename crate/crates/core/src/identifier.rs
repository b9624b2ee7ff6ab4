//! Identity assignment over a whole segment.
//!
//! The segment is cut into intervals over which the set of live tracklets is
//! constant. Every real tracklet takes exactly one column (an animal or the
//! outlier), and every (interval, animal) pair is covered by exactly one live
//! tracklet, the interval's hidden tracklet standing in when no real one is
//! assigned.
//!
//! Because a hidden row is fully determined by the real choices, its weights
//! fold into the real rows: taking animal `j` for tracklet `i` gains `w[i][j]`
//! and gives up the hidden weight of `j` on every interval `i` spans. The
//! solver walks intervals in time order keeping, for each assignment of the
//! tracklets still open, only the best partial solution (later constraints
//! only see open tracklets), and prunes partial solutions whose optimistic
//! completion cannot reach the incumbent.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::dataset::{IdentifiedFrame, LocalisationTrace};
use crate::error::{Error, Result};
use crate::tracker::{Frame, Tracklet};
use crate::weights::{Column, WeightModel};

/// Frames `start..=end` over which the live tracklet set does not change.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub index: usize,
    pub start: Frame,
    pub end: Frame,
    /// Indices into the tracklet list, ascending.
    pub active: Vec<usize>,
}

impl Interval {
    pub fn frames(&self) -> RangeInclusive<Frame> {
        self.start..=self.end
    }

    pub fn len(&self) -> usize {
        (self.end - self.start) as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Splits `segment` at every tracklet birth and at the frame after every
/// death. Frames with no live tracklet still form (empty) intervals.
pub fn decompose_intervals(tracklets: &[Tracklet], segment: RangeInclusive<Frame>) -> Result<Vec<Interval>> {
    let (first, last) = (*segment.start(), *segment.end());
    if first > last {
        return Err(Error::Data(format!("empty segment {first}..={last}")));
    }
    let mut cuts = vec![first];
    for t in tracklets {
        if t.is_empty() {
            return Err(Error::Data(format!("tracklet {} has no frames", t.id)));
        }
        if t.first_frame() < first || t.last_frame() > last {
            return Err(Error::Data(format!(
                "tracklet {} spans {}..={}, outside segment {first}..={last}",
                t.id,
                t.first_frame(),
                t.last_frame()
            )));
        }
        cuts.push(t.first_frame());
        if t.last_frame() < last {
            cuts.push(t.last_frame() + 1);
        }
    }
    cuts.sort_unstable();
    cuts.dedup();
    let mut out = Vec::with_capacity(cuts.len());
    for (k, &start) in cuts.iter().enumerate() {
        let end = cuts.get(k + 1).map_or(last, |&n| n - 1);
        let active = tracklets
            .iter()
            .enumerate()
            .filter(|(_, t)| t.first_frame() <= start && t.last_frame() >= start)
            .map(|(i, _)| i)
            .collect();
        out.push(Interval {
            index: k,
            start,
            end,
            active,
        });
    }
    Ok(out)
}

/// Weighted assignment problem with `I` real rows, `T` hidden rows and
/// `J + 1` columns, the last being the outlier. `-inf` marks a forbidden cell.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentificationProblem {
    identities: usize,
    intervals: usize,
    /// First and last interval of each real row.
    spans: Vec<(usize, usize)>,
    weights: Vec<f64>,
}

impl IdentificationProblem {
    /// `weights` is row-major with `spans.len() + intervals` rows and
    /// `identities + 1` columns. Hidden rows are forced to `-inf` in the
    /// outlier column.
    pub fn new(identities: usize, intervals: usize, spans: Vec<(usize, usize)>, mut weights: Vec<f64>) -> Result<Self> {
        if identities == 0 || identities > 64 {
            return Err(Error::Domain(format!("identity count {identities} outside 1..=64")));
        }
        if intervals == 0 {
            return Err(Error::Domain("problem has no intervals".into()));
        }
        let rows = spans.len() + intervals;
        let cols = identities + 1;
        if weights.len() != rows * cols {
            return Err(Error::Domain(format!(
                "weight matrix has {} entries, expected {rows}x{cols}",
                weights.len()
            )));
        }
        for (i, &(a, b)) in spans.iter().enumerate() {
            if a > b || b >= intervals {
                return Err(Error::Domain(format!("row {i} spans intervals {a}..={b} of {intervals}")));
            }
        }
        if let Some(k) = weights.iter().position(|w| w.is_nan() || *w == f64::INFINITY) {
            return Err(Error::Domain(format!("weight at row {}, column {} is {}", k / cols, k % cols, weights[k])));
        }
        for t in 0..intervals {
            weights[(spans.len() + t) * cols + identities] = f64::NEG_INFINITY;
        }
        Ok(IdentificationProblem {
            identities,
            intervals,
            spans,
            weights,
        })
    }

    pub fn identities(&self) -> usize {
        self.identities
    }

    pub fn interval_count(&self) -> usize {
        self.intervals
    }

    pub fn real_count(&self) -> usize {
        self.spans.len()
    }

    pub fn rows(&self) -> usize {
        self.spans.len() + self.intervals
    }

    pub fn cols(&self) -> usize {
        self.identities + 1
    }

    pub fn outlier_col(&self) -> usize {
        self.identities
    }

    pub fn hidden_row(&self, interval: usize) -> usize {
        self.spans.len() + interval
    }

    pub fn span(&self, row: usize) -> (usize, usize) {
        self.spans[row]
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.cols() + col]
    }

    pub fn is_forbidden(&self, row: usize, col: usize) -> bool {
        self.weight(row, col) == f64::NEG_INFINITY
    }

    /// Real rows live at interval `t`, ascending.
    pub fn active_rows(&self, t: usize) -> Vec<usize> {
        (0..self.spans.len())
            .filter(|&i| self.spans[i].0 <= t && t <= self.spans[i].1)
            .collect()
    }
}

/// Fills the weight matrix from the fitted model. Row `i < I` is
/// `tracklets[i]`, row `I + t` is the hidden tracklet of `intervals[t]`.
pub fn build_problem(
    tracklets: &[Tracklet],
    intervals: &[Interval],
    model: &WeightModel,
    trace: &LocalisationTrace,
    identities: usize,
) -> Result<IdentificationProblem> {
    if identities > trace.identities() {
        return Err(Error::Data(format!(
            "{identities} identities requested but the trace has {}",
            trace.identities()
        )));
    }
    let interval_of = |f: Frame| -> Result<usize> {
        let k = intervals.partition_point(|iv| iv.start <= f);
        if k == 0 || intervals[k - 1].end < f {
            return Err(Error::Data(format!("frame {f} lies outside every interval")));
        }
        Ok(k - 1)
    };
    let cols = identities + 1;
    let mut spans = Vec::with_capacity(tracklets.len());
    let mut weights = Vec::with_capacity((tracklets.len() + intervals.len()) * cols);
    for t in tracklets {
        spans.push((interval_of(t.first_frame())?, interval_of(t.last_frame())?));
        for j in 0..identities {
            weights.push(model.tracklet_weight(t, Column::Identity(j), trace)?);
        }
        weights.push(model.tracklet_weight(t, Column::Outlier, trace)?);
    }
    for iv in intervals {
        for j in 0..identities {
            weights.push(model.hidden_tracklet_weight(iv.frames(), j, trace)?);
        }
        weights.push(f64::NEG_INFINITY);
    }
    IdentificationProblem::new(identities, intervals.len(), spans, weights)
}

/// Binary (I+T) x (J+1) assignment.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AssignmentMatrix {
    rows: usize,
    cols: usize,
    cells: Vec<bool>,
}

impl AssignmentMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        AssignmentMatrix {
            rows,
            cols,
            cells: vec![false; rows * cols],
        }
    }

    /// Builds the unique matrix implied by the real rows' columns: hidden
    /// row `t` takes every animal no live real row took at `t`.
    pub fn from_real_columns(p: &IdentificationProblem, columns: &[usize]) -> Result<Self> {
        if columns.len() != p.real_count() {
            return Err(Error::Domain(format!(
                "{} columns for {} real rows",
                columns.len(),
                p.real_count()
            )));
        }
        let mut a = AssignmentMatrix::zeros(p.rows(), p.cols());
        for (i, &c) in columns.iter().enumerate() {
            if c >= p.cols() {
                return Err(Error::Domain(format!("column {c} out of range")));
            }
            a.set(i, c, true);
        }
        for t in 0..p.interval_count() {
            let live = p.active_rows(t);
            for j in 0..p.identities() {
                if !live.iter().any(|&i| columns[i] == j) {
                    a.set(p.hidden_row(t), j, true);
                }
            }
        }
        Ok(a)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.cells[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.cells[r * self.cols + c] = v;
    }

    /// The column of a row holding exactly one 1.
    pub fn column_of(&self, r: usize) -> Option<usize> {
        let mut hit = None;
        for c in 0..self.cols {
            if self.get(r, c) {
                if hit.is_some() {
                    return None;
                }
                hit = Some(c);
            }
        }
        hit
    }

    /// `sum w_ij a_ij`.
    pub fn objective(&self, p: &IdentificationProblem) -> f64 {
        let mut total = 0.0;
        for r in 0..self.rows {
            for c in 0..self.cols {
                if self.get(r, c) {
                    total += p.weight(r, c);
                }
            }
        }
        total
    }
}

/// The constraint an assignment (or a whole problem) cannot satisfy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Constraint {
    /// A real row must take exactly one column.
    RowSum { row: usize },
    /// Exactly one live tracklet must take identity `identity` over `interval`.
    Cover { interval: usize, identity: usize },
    /// Hidden tracklets cannot be outliers.
    HiddenOutlier { interval: usize },
    /// A forbidden cell was used.
    Forbidden { row: usize, col: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Infeasibility {
    pub constraint: Constraint,
    pub detail: String,
}

impl fmt::Display for Infeasibility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.constraint {
            Constraint::RowSum { row } => write!(f, "row {row} cannot take exactly one column")?,
            Constraint::Cover { interval, identity } => {
                write!(f, "identity {} cannot be covered exactly once in interval {interval}", identity + 1)?
            }
            Constraint::HiddenOutlier { interval } => {
                write!(f, "hidden tracklet of interval {interval} assigned to the outlier")?
            }
            Constraint::Forbidden { row, col } => write!(f, "forbidden cell ({row}, {col}) is used")?,
        }
        if !self.detail.is_empty() {
            write!(f, ": {}", self.detail)?;
        }
        Ok(())
    }
}

fn infeasible(constraint: Constraint, detail: impl Into<String>) -> Infeasibility {
    Infeasibility {
        constraint,
        detail: detail.into(),
    }
}

/// Checks row sums, cover sums, hidden-outlier exclusion and forbidden cells.
pub fn validate(p: &IdentificationProblem, a: &AssignmentMatrix) -> std::result::Result<(), Infeasibility> {
    if a.rows() != p.rows() || a.cols() != p.cols() {
        return Err(infeasible(
            Constraint::RowSum { row: 0 },
            format!("matrix is {}x{}, problem is {}x{}", a.rows(), a.cols(), p.rows(), p.cols()),
        ));
    }
    for i in 0..p.real_count() {
        let n = (0..p.cols()).filter(|&c| a.get(i, c)).count();
        if n != 1 {
            return Err(infeasible(Constraint::RowSum { row: i }, format!("row sum is {n}")));
        }
    }
    for t in 0..p.interval_count() {
        let h = p.hidden_row(t);
        if a.get(h, p.outlier_col()) {
            return Err(infeasible(Constraint::HiddenOutlier { interval: t }, ""));
        }
        let live = p.active_rows(t);
        for j in 0..p.identities() {
            let n = live.iter().filter(|&&i| a.get(i, j)).count() + a.get(h, j) as usize;
            if n != 1 {
                return Err(infeasible(
                    Constraint::Cover { interval: t, identity: j },
                    format!("covered {n} times"),
                ));
            }
        }
    }
    for r in 0..p.rows() {
        for c in 0..p.cols() {
            if a.get(r, c) && p.is_forbidden(r, c) {
                return Err(infeasible(Constraint::Forbidden { row: r, col: c }, ""));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Drop partial solutions whose optimistic completion is below the incumbent.
    pub prune: bool,
    /// Record one bound sample per interval.
    pub trace_bounds: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            prune: true,
            trace_bounds: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundSample {
    pub interval: usize,
    pub frontier: usize,
    pub upper_bound: f64,
    pub incumbent: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SolveStats {
    /// Partial solutions generated.
    pub nodes: u64,
    pub pruned: u64,
    /// Partial solutions discarded because another with the same open set scored at least as well.
    pub dominated: u64,
    pub peak_frontier: usize,
    /// Objective of the greedy warm start, if it found a feasible solution.
    pub warm_start: Option<f64>,
    pub bound_trace: Vec<BoundSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub assignment: AssignmentMatrix,
    /// Column of each real row.
    pub columns: Vec<usize>,
    pub objective: f64,
    pub stats: SolveStats,
}

pub fn solve(p: &IdentificationProblem) -> Result<Solution> {
    solve_with(p, &SolverOptions::default())
}

/// Problem with hidden weights folded into the real rows.
struct Folded {
    cols: usize,
    identities: usize,
    effective: Vec<f64>,
    constant: f64,
    /// Animals that some real row must take, per interval.
    must_cover: Vec<u64>,
    starters: Vec<Vec<usize>>,
    /// Sum over rows starting at or after `t` of their best effective weight.
    suffix_best: Vec<f64>,
    ends: Vec<usize>,
}

fn fold(p: &IdentificationProblem) -> std::result::Result<Folded, Infeasibility> {
    let (cols, jn, tn) = (p.cols(), p.identities(), p.interval_count());
    let mut must_cover = vec![0u64; tn];
    let mut constant = 0.0;
    for (t, mask) in must_cover.iter_mut().enumerate() {
        for j in 0..jn {
            let h = p.weight(p.hidden_row(t), j);
            if h == f64::NEG_INFINITY {
                *mask |= 1 << j;
            } else {
                constant += h;
            }
        }
    }
    let mut effective = vec![f64::NEG_INFINITY; p.real_count() * cols];
    let mut starters = vec![Vec::new(); tn];
    let mut best = vec![f64::NEG_INFINITY; p.real_count()];
    let mut ends = Vec::with_capacity(p.real_count());
    for i in 0..p.real_count() {
        let (a, b) = p.span(i);
        starters[a].push(i);
        ends.push(b);
        for c in 0..cols {
            let w = p.weight(i, c);
            if w == f64::NEG_INFINITY {
                continue;
            }
            let mut e = w;
            if c < jn {
                for t in a..=b {
                    let h = p.weight(p.hidden_row(t), c);
                    if h != f64::NEG_INFINITY {
                        e -= h;
                    }
                }
            }
            effective[i * cols + c] = e;
            best[i] = best[i].max(e);
        }
        if best[i] == f64::NEG_INFINITY {
            return Err(infeasible(Constraint::RowSum { row: i }, "every column is forbidden"));
        }
    }
    for (t, &mask) in must_cover.iter().enumerate() {
        for j in (0..jn).filter(|j| mask & (1 << j) != 0) {
            if !p.active_rows(t).iter().any(|&i| !p.is_forbidden(i, j)) {
                return Err(infeasible(
                    Constraint::Cover { interval: t, identity: j },
                    "the hidden tracklet is forbidden and no live tracklet may take this identity",
                ));
            }
        }
    }
    let mut suffix_best = vec![0.0; tn + 1];
    for t in (0..tn).rev() {
        suffix_best[t] = suffix_best[t + 1] + starters[t].iter().map(|&i| best[i]).sum::<f64>();
    }
    Ok(Folded {
        cols,
        identities: jn,
        effective,
        constant,
        must_cover,
        starters,
        suffix_best,
        ends,
    })
}

const ROOT: usize = usize::MAX;

struct Node {
    parent: usize,
    choices: Vec<(usize, u8)>,
}

/// Open rows and their columns, sorted by row.
type FrontierKey = Vec<(usize, u8)>;

struct Search<'a> {
    f: &'a Folded,
    nodes: Vec<Node>,
    stats: SolveStats,
}

impl Search<'_> {
    fn columns(&self, mut node: usize, rows: usize) -> Vec<u8> {
        let mut out = vec![u8::MAX; rows];
        while node != ROOT {
            for &(i, c) in &self.nodes[node].choices {
                out[i] = c;
            }
            node = self.nodes[node].parent;
        }
        out
    }

    /// Runs the interval sweep. `beam` keeps only the best partial solution
    /// per interval (the warm start); pruning uses `incumbent`.
    fn run(&mut self, rows: usize, beam: bool, incumbent: f64, opts: &SolverOptions) -> std::result::Result<(f64, usize), usize> {
        let f = self.f;
        let tol = 1e-9 * (1.0 + incumbent.abs());
        let mut frontier: BTreeMap<FrontierKey, (f64, usize)> = BTreeMap::new();
        frontier.insert(Vec::new(), (0.0, ROOT));
        for t in 0..f.must_cover.len() {
            let mut next: BTreeMap<FrontierKey, (f64, usize)> = BTreeMap::new();
            for (key, &(value, node)) in &frontier {
                let used = key
                    .iter()
                    .filter(|&&(_, c)| (c as usize) < f.identities)
                    .fold(0u64, |m, &(_, c)| m | 1 << c);
                let mut choice = Vec::with_capacity(f.starters[t].len());
                self.extend(t, key, value, node, used, 0, 0.0, &mut choice, &mut next, incumbent, tol, rows, opts);
            }
            if next.is_empty() {
                return Err(t);
            }
            if beam {
                let best = next
                    .iter()
                    .max_by(|a, b| a.1 .0.partial_cmp(&b.1 .0).unwrap_or(Ordering::Equal).then_with(|| b.0.cmp(a.0)))
                    .map(|(k, v)| (k.clone(), *v))
                    .expect("non-empty");
                next.clear();
                next.insert(best.0, best.1);
            }
            self.stats.peak_frontier = self.stats.peak_frontier.max(next.len());
            if opts.trace_bounds && !beam {
                let ub = next
                    .values()
                    .map(|&(v, _)| v + f.suffix_best[t + 1] + f.constant)
                    .fold(f64::NEG_INFINITY, f64::max);
                self.stats.bound_trace.push(BoundSample {
                    interval: t,
                    frontier: next.len(),
                    upper_bound: ub,
                    incumbent,
                });
            }
            frontier = next;
        }
        let &(value, node) = frontier.get(&Vec::new()).expect("every row closes by the last interval");
        Ok((value + f.constant, node))
    }

    #[allow(clippy::too_many_arguments)]
    fn extend(
        &mut self,
        t: usize,
        key: &FrontierKey,
        value: f64,
        parent: usize,
        used: u64,
        k: usize,
        gained: f64,
        choice: &mut Vec<(usize, u8)>,
        next: &mut BTreeMap<FrontierKey, (f64, usize)>,
        incumbent: f64,
        tol: f64,
        rows: usize,
        opts: &SolverOptions,
    ) {
        let f = self.f;
        let starters = &f.starters[t];
        if k == starters.len() {
            if f.must_cover[t] & !used != 0 {
                return;
            }
            let total = value + gained;
            self.stats.nodes += 1;
            if opts.prune && total + f.suffix_best[t + 1] + f.constant < incumbent - tol {
                self.stats.pruned += 1;
                return;
            }
            let mut open: FrontierKey = key
                .iter()
                .chain(choice.iter())
                .copied()
                .filter(|&(i, _)| f.ends[i] > t)
                .collect();
            open.sort_unstable();
            match next.get(&open) {
                Some(&(existing, node)) => {
                    let better = match total.partial_cmp(&existing).unwrap_or(Ordering::Equal) {
                        Ordering::Greater => true,
                        Ordering::Less => false,
                        Ordering::Equal => {
                            // Lexicographically smaller column vector wins ties.
                            let mine = {
                                let mut c = self.columns(parent, rows);
                                for &(i, col) in choice.iter() {
                                    c[i] = col;
                                }
                                c
                            };
                            mine < self.columns(node, rows)
                        }
                    };
                    self.stats.dominated += 1;
                    if better {
                        self.nodes[node] = Node {
                            parent,
                            choices: choice.clone(),
                        };
                        next.insert(open, (total, node));
                    }
                }
                None => {
                    self.nodes.push(Node {
                        parent,
                        choices: choice.clone(),
                    });
                    next.insert(open, (total, self.nodes.len() - 1));
                }
            }
            return;
        }
        let i = starters[k];
        for c in 0..f.cols {
            let e = f.effective[i * f.cols + c];
            if e == f64::NEG_INFINITY {
                continue;
            }
            let mut mask = used;
            if c < f.identities {
                if used & (1 << c) != 0 {
                    continue;
                }
                mask |= 1 << c;
            }
            choice.push((i, c as u8));
            self.extend(t, key, value, parent, mask, k + 1, gained + e, choice, next, incumbent, tol, rows, opts);
            choice.pop();
        }
    }
}

/// Exact maximiser of `sum w_ij a_ij` subject to the assignment constraints.
/// Ties go to the lexicographically smallest column vector of the real rows.
pub fn solve_with(p: &IdentificationProblem, opts: &SolverOptions) -> Result<Solution> {
    if p.identities() + 1 > u8::MAX as usize {
        return Err(Error::Domain("too many identities".into()));
    }
    let folded = fold(p).map_err(Error::Infeasible)?;
    let rows = p.real_count();
    let mut search = Search {
        f: &folded,
        nodes: Vec::new(),
        stats: SolveStats::default(),
    };
    let incumbent = if opts.prune {
        match search.run(rows, true, f64::NEG_INFINITY, opts) {
            Ok((v, _)) => {
                search.stats.warm_start = Some(v);
                v
            }
            Err(_) => f64::NEG_INFINITY,
        }
    } else {
        f64::NEG_INFINITY
    };
    search.nodes.clear();
    let warm = search.stats.warm_start;
    search.stats = SolveStats {
        warm_start: warm,
        ..SolveStats::default()
    };
    let (_, node) = search.run(rows, false, incumbent, opts).map_err(|t| {
        Error::Infeasible(infeasible(
            Constraint::Cover {
                interval: t,
                identity: (0..p.identities())
                    .find(|j| folded.must_cover[t] & (1 << j) != 0)
                    .unwrap_or(0),
            },
            "no joint choice of live tracklets covers the identities that cannot be hidden",
        ))
    })?;
    let columns: Vec<usize> = search.columns(node, rows).into_iter().map(|c| c as usize).collect();
    let assignment = AssignmentMatrix::from_real_columns(p, &columns)?;
    if let Err(e) = validate(p, &assignment) {
        return Err(Error::Numerical(format!("solver produced an invalid assignment: {e}")));
    }
    let objective = assignment.objective(p);
    Ok(Solution {
        assignment,
        columns,
        objective,
        stats: search.stats,
    })
}

/// One entry per frame of the segment: the raw box of the real tracklet
/// holding identity `j` there, or `None` when the hidden tracklet does.
pub fn emit_identified(
    p: &IdentificationProblem,
    a: &AssignmentMatrix,
    tracklets: &[Tracklet],
    intervals: &[Interval],
) -> Result<Vec<IdentifiedFrame>> {
    if tracklets.len() != p.real_count() || intervals.len() != p.interval_count() {
        return Err(Error::Data("tracklets or intervals do not match the problem".into()));
    }
    validate(p, a).map_err(Error::Infeasible)?;
    let mut out = Vec::new();
    for iv in intervals {
        let owners: Vec<Option<usize>> = (0..p.identities())
            .map(|j| iv.active.iter().copied().find(|&i| a.get(i, j)))
            .collect();
        for f in iv.frames() {
            let mut boxes = Vec::with_capacity(p.identities());
            for owner in &owners {
                boxes.push(match owner {
                    Some(i) => Some(*tracklets[*i].box_at(f).ok_or_else(|| {
                        Error::Data(format!("tracklet {} has no box at frame {f}", tracklets[*i].id))
                    })?),
                    None => None,
                });
            }
            out.push(IdentifiedFrame { frame: f, boxes });
        }
    }
    Ok(out)
}

/// Everything produced by identifying one segment.
#[derive(Debug, Clone)]
pub struct Identification {
    pub intervals: Vec<Interval>,
    pub problem: IdentificationProblem,
    pub solution: Solution,
    pub frames: Vec<IdentifiedFrame>,
}

pub fn identify(
    tracklets: &[Tracklet],
    segment: RangeInclusive<Frame>,
    model: &WeightModel,
    trace: &LocalisationTrace,
    identities: usize,
    opts: &SolverOptions,
) -> Result<Identification> {
    let intervals = decompose_intervals(tracklets, segment)?;
    let problem = build_problem(tracklets, &intervals, model, trace, identities)?;
    let solution = solve_with(&problem, opts)?;
    let frames = emit_identified(&problem, &solution.assignment, tracklets, &intervals)?;
    Ok(Identification {
        intervals,
        problem,
        solution,
        frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundingBox;
    use crate::tracker::FrameBox;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const NEG: f64 = f64::NEG_INFINITY;

    fn tracklet(id: u64, frames: RangeInclusive<Frame>) -> Tracklet {
        Tracklet {
            id,
            frames: frames
                .map(|f| FrameBox {
                    frame: f,
                    bbox: BoundingBox::new(100.0 + id as f64, 50.0 + f as f64, 20.0, 10.0).unwrap(),
                })
                .collect(),
        }
    }

    fn bounds(ivs: &[Interval]) -> Vec<(Frame, Frame)> {
        ivs.iter().map(|iv| (iv.start, iv.end)).collect()
    }

    #[test]
    fn single_tracklet_single_interval() {
        let ivs = decompose_intervals(&[tracklet(1, 1..=10)], 1..=10).unwrap();
        assert_eq!(bounds(&ivs), vec![(1, 10)]);
        assert_eq!(ivs[0].active, vec![0]);
    }

    #[test]
    fn overlapping_tracklets_split_at_events() {
        let ivs = decompose_intervals(&[tracklet(1, 1..=5), tracklet(2, 4..=8)], 1..=8).unwrap();
        assert_eq!(bounds(&ivs), vec![(1, 3), (4, 5), (6, 8)]);
        assert_eq!(ivs[0].active, vec![0]);
        assert_eq!(ivs[1].active, vec![0, 1]);
        assert_eq!(ivs[2].active, vec![1]);
    }

    #[test]
    fn empty_segment_is_one_hidden_interval() {
        let ivs = decompose_intervals(&[], 1..=5).unwrap();
        assert_eq!(bounds(&ivs), vec![(1, 5)]);
        assert!(ivs[0].active.is_empty());
    }

    #[test]
    fn gaps_and_tails_get_empty_intervals() {
        let ivs = decompose_intervals(&[tracklet(1, 3..=4)], 0..=9).unwrap();
        assert_eq!(bounds(&ivs), vec![(0, 2), (3, 4), (5, 9)]);
        assert!(decompose_intervals(&[tracklet(1, 3..=12)], 0..=9).is_err());
    }

    #[test]
    fn problem_shapes() {
        let p = IdentificationProblem::new(1, 1, vec![(0, 0)], vec![-1.0, -5.0, -3.0, 7.0]).unwrap();
        assert_eq!((p.rows(), p.cols()), (2, 2));
        assert!(p.is_forbidden(1, 1));

        let p = IdentificationProblem::new(3, 2, vec![(0, 0), (0, 1), (1, 1)], vec![0.0; 20]).unwrap();
        assert_eq!((p.rows(), p.cols()), (5, 4));
        assert!(IdentificationProblem::new(3, 2, vec![(0, 2)], vec![0.0; 12]).is_err());
        assert!(IdentificationProblem::new(1, 1, vec![], vec![f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn smallest_instance_prefers_the_animal() {
        let p = IdentificationProblem::new(1, 1, vec![(0, 0)], vec![-1.0, -5.0, -3.0, NEG]).unwrap();
        let s = solve(&p).unwrap();
        assert_eq!(s.columns, vec![0]);
        assert_eq!(s.objective, -1.0);
        assert!(!s.assignment.get(1, 0));
    }

    #[test]
    fn two_overlapping_tracklets_one_animal() {
        // Feasible: (A->0, B->out), (A->out, B->0), (both out, hidden covers).
        let p = IdentificationProblem::new(
            1,
            1,
            vec![(0, 0), (0, 0)],
            vec![-2.0, -4.0, -1.0, -6.0, -9.0, NEG],
        )
        .unwrap();
        let s = solve(&p).unwrap();
        let totals = [-2.0 + -6.0, -4.0 + -1.0, -4.0 + -6.0 + -9.0];
        assert_eq!(s.objective, totals.iter().copied().fold(NEG, f64::max));
        assert_eq!(s.columns, vec![1, 0]);
    }

    #[test]
    fn hidden_row_may_cover_several_identities() {
        let p = IdentificationProblem::new(2, 1, vec![(0, 0)], vec![-10.0, -10.0, -1.0, -0.5, -0.5, NEG]).unwrap();
        let s = solve(&p).unwrap();
        assert_eq!(s.columns, vec![2]);
        assert!(s.assignment.get(1, 0) && s.assignment.get(1, 1));
        assert!(validate(&p, &s.assignment).is_ok());
    }

    #[test]
    fn infeasibility_names_the_constraint() {
        let p = IdentificationProblem::new(1, 1, vec![(0, 0)], vec![NEG, NEG, -1.0, NEG]).unwrap();
        match solve(&p) {
            Err(Error::Infeasible(i)) => assert_eq!(i.constraint, Constraint::RowSum { row: 0 }),
            other => panic!("{other:?}"),
        }
        // Identity 1 cannot be hidden and nobody may take it.
        let p = IdentificationProblem::new(2, 1, vec![(0, 0)], vec![-1.0, NEG, -1.0, -1.0, NEG, NEG]).unwrap();
        match solve(&p) {
            Err(Error::Infeasible(i)) => assert_eq!(i.constraint, Constraint::Cover { interval: 0, identity: 1 }),
            other => panic!("{other:?}"),
        }
        // Both identities must be covered but only one live tracklet exists.
        let p = IdentificationProblem::new(2, 1, vec![(0, 0)], vec![-1.0, -1.0, -1.0, NEG, NEG, NEG]).unwrap();
        assert!(matches!(solve(&p), Err(Error::Infeasible(_))));
    }

    #[test]
    fn validator_rejects_each_violation() {
        let p = IdentificationProblem::new(1, 1, vec![(0, 0)], vec![-1.0, -5.0, -3.0, NEG]).unwrap();
        let mut a = AssignmentMatrix::from_real_columns(&p, &[0]).unwrap();
        assert!(validate(&p, &a).is_ok());
        a.set(0, 1, true);
        assert_eq!(validate(&p, &a).unwrap_err().constraint, Constraint::RowSum { row: 0 });
        let mut a = AssignmentMatrix::from_real_columns(&p, &[0]).unwrap();
        a.set(1, 0, true);
        assert_eq!(
            validate(&p, &a).unwrap_err().constraint,
            Constraint::Cover { interval: 0, identity: 0 }
        );
        let mut a = AssignmentMatrix::from_real_columns(&p, &[1]).unwrap();
        a.set(1, 1, true);
        assert_eq!(validate(&p, &a).unwrap_err().constraint, Constraint::HiddenOutlier { interval: 0 });
    }

    /// Brute force straight from the constraints: every real column choice,
    /// and for each (interval, identity) every hidden bit.
    fn enumerate(p: &IdentificationProblem) -> Option<f64> {
        let (n, cols) = (p.real_count(), p.cols());
        let mut best: Option<f64> = None;
        let mut choice = vec![0usize; n];
        loop {
            let mut total = 0.0;
            let mut ok = true;
            for (i, &c) in choice.iter().enumerate() {
                total += p.weight(i, c);
            }
            'cover: for t in 0..p.interval_count() {
                for j in 0..p.identities() {
                    let real = (0..n)
                        .filter(|&i| choice[i] == j && p.span(i).0 <= t && t <= p.span(i).1)
                        .count();
                    let mut found = false;
                    for hidden in [0usize, 1] {
                        if real + hidden == 1 {
                            found = true;
                            if hidden == 1 {
                                total += p.weight(p.hidden_row(t), j);
                            }
                        }
                    }
                    if !found {
                        ok = false;
                        break 'cover;
                    }
                }
            }
            if ok && total > NEG {
                best = Some(best.map_or(total, |b: f64| b.max(total)));
            }
            let mut k = 0;
            while k < n {
                choice[k] += 1;
                if choice[k] < cols {
                    break;
                }
                choice[k] = 0;
                k += 1;
            }
            if k == n {
                return best;
            }
        }
    }

    fn random_problem(rng: &mut ChaCha8Rng) -> IdentificationProblem {
        let t = rng.random_range(1..=4);
        let i = rng.random_range(0..=6);
        let j = rng.random_range(1..=3);
        let spans = (0..i)
            .map(|_| {
                let a = rng.random_range(0..t);
                (a, rng.random_range(a..t))
            })
            .collect();
        let weights = (0..(i + t) * (j + 1))
            .map(|_| {
                if rng.random_bool(0.1) {
                    NEG
                } else {
                    -(rng.random_range(0..20) as f64)
                }
            })
            .collect();
        IdentificationProblem::new(j, t, spans, weights).unwrap()
    }

    #[test]
    fn matches_enumeration_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let p = random_problem(&mut rng);
            match (solve(&p), enumerate(&p)) {
                (Ok(s), Some(best)) => {
                    assert_eq!(s.objective, best, "{p:?}");
                    assert!(validate(&p, &s.assignment).is_ok());
                }
                (Err(Error::Infeasible(_)), None) => {}
                (s, e) => panic!("solver {s:?} vs enumeration {e:?} on {p:?}"),
            }
            let unpruned = solve_with(&p, &SolverOptions { prune: false, trace_bounds: true });
            assert_eq!(unpruned.ok().map(|s| s.objective), enumerate(&p));
        }
    }

    #[test]
    fn deterministic_tie_break() {
        let p = IdentificationProblem::new(2, 1, vec![(0, 0), (0, 0)], vec![-1.0; 9]).unwrap();
        let a = solve(&p).unwrap();
        let b = solve(&p).unwrap();
        assert_eq!(a.columns, b.columns);
        assert_eq!(a.columns, vec![0, 1]);
    }

    #[test]
    fn emitted_frames_are_unique_per_identity() {
        let ts = vec![tracklet(1, 0..=4), tracklet(2, 2..=7), tracklet(3, 6..=9)];
        let ivs = decompose_intervals(&ts, 0..=9).unwrap();
        let spans = ts
            .iter()
            .map(|t| {
                let first = ivs.iter().position(|iv| iv.start == t.first_frame()).unwrap();
                let last = ivs.iter().position(|iv| iv.end == t.last_frame()).unwrap();
                (first, last)
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let weights = (0..(3 + ivs.len()) * 3).map(|_| -(rng.random_range(0..10) as f64)).collect();
        let p = IdentificationProblem::new(2, ivs.len(), spans, weights).unwrap();
        let s = solve(&p).unwrap();
        let frames = emit_identified(&p, &s.assignment, &ts, &ivs).unwrap();
        assert_eq!(frames.len(), 10);
        for (f, fr) in frames.iter().enumerate() {
            assert_eq!(fr.frame, f as Frame);
            assert_eq!(fr.boxes.len(), 2);
            let real: Vec<_> = fr.boxes.iter().flatten().collect();
            for (x, a) in real.iter().enumerate() {
                for b in &real[x + 1..] {
                    assert_ne!(a, b, "one box emitted for two identities");
                }
            }
        }
        for (i, &c) in s.columns.iter().enumerate() {
            if c < 2 {
                for fb in &ts[i].frames {
                    assert_eq!(frames[fb.frame as usize].boxes[c], Some(fb.bbox));
                }
            }
        }
    }

    proptest! {
        #[test]
        fn raising_a_chosen_weight_keeps_it(seed in 0u64..10_000, bump in 0.0f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_problem(&mut rng);
            if let Ok(s) = solve(&p) {
                if p.real_count() > 0 {
                    let i = seed as usize % p.real_count();
                    let c = s.columns[i];
                    let mut w: Vec<f64> = (0..p.rows() * p.cols()).map(|k| p.weight(k / p.cols(), k % p.cols())).collect();
                    w[i * p.cols() + c] += bump;
                    let spans = (0..p.real_count()).map(|r| p.span(r)).collect();
                    let q = IdentificationProblem::new(p.identities(), p.interval_count(), spans, w).unwrap();
                    let s2 = solve(&q).unwrap();
                    prop_assert_eq!(s2.columns[i], c);
                }
            }
        }
    }
}
