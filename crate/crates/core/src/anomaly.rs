//! Inflation filters over a decomposition.
//!
//! A cell is a candidate when its inflation dominates its expected latency
//! (`S / L > tau`), or when its inflation alone is large on a path between
//! continents, where expected latency is already high and the ratio rarely
//! crosses `tau`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{CellState, LatencyMatrix};
use crate::rpca::{self, Decomposition, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbsoluteScope {
    /// Only cells whose row and column sit on different continents.
    CrossContinent,
    AllCells,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub tau: f64,
    /// Candidates below this inflation are kept but marked `below_floor`.
    pub severity_floor_ms: f64,
    pub cross_continent_abs_ms: f64,
    /// Lower clamp on the ratio denominator.
    pub expected_floor_ms: f64,
    pub absolute_scope: AbsoluteScope,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            severity_floor_ms: 10.0,
            cross_continent_abs_ms: 30.0,
            expected_floor_ms: 0.1,
            absolute_scope: AbsoluteScope::CrossContinent,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64, ok: bool| {
            if v.is_finite() && ok {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("{name} out of range: {v}")))
            }
        };
        check("tau", self.tau, self.tau > 0.0)?;
        check("severity_floor_ms", self.severity_floor_ms, self.severity_floor_ms >= 0.0)?;
        check("cross_continent_abs_ms", self.cross_continent_abs_ms, self.cross_continent_abs_ms > 0.0)?;
        check("expected_floor_ms", self.expected_floor_ms, self.expected_floor_ms > 0.0)
    }

    /// `S / max(L, expected_floor_ms)`.
    pub fn ratio(&self, expected_ms: f64, inflation_ms: f64) -> f64 {
        inflation_ms / expected_ms.max(self.expected_floor_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Ratio,
    Absolute,
}

impl FilterKind {
    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Ratio => "ratio",
            FilterKind::Absolute => "absolute",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyCandidate {
    pub row: usize,
    pub col: usize,
    pub row_id: String,
    pub col_id: String,
    /// `X(i, j)` as ingested (or interpolated).
    pub measured_ms: f64,
    /// `L(i, j)`.
    pub expected_ms: f64,
    /// `S(i, j)`.
    pub inflation_ms: f64,
    pub ratio: f64,
    /// Filters that flagged the cell; sorted, never empty.
    pub filters: Vec<FilterKind>,
    pub interpolated: bool,
    pub below_floor: bool,
    /// 1-based position after ranking; 0 before.
    pub severity_rank: usize,
}

impl AnomalyCandidate {
    pub fn cell(&self) -> (usize, usize) {
        (self.row, self.col)
    }
}

fn check_shapes(d: &Decomposition, x: &LatencyMatrix) -> Result<()> {
    if d.low_rank.shape() != x.shape() || d.sparse.shape() != x.shape() {
        return Err(Error::InvalidInput(format!(
            "decomposition is {:?} but the matrix is {:?}",
            d.low_rank.shape(),
            x.shape()
        )));
    }
    Ok(())
}

fn candidate(d: &Decomposition, x: &LatencyMatrix, cfg: &FilterConfig, i: usize, j: usize, kind: FilterKind) -> AnomalyCandidate {
    let expected = d.low_rank[(i, j)];
    let inflation = d.sparse[(i, j)];
    AnomalyCandidate {
        row: i,
        col: j,
        row_id: x.rows()[i].id.clone(),
        col_id: x.cols()[j].id.clone(),
        measured_ms: x.values()[(i, j)],
        expected_ms: expected,
        inflation_ms: inflation,
        ratio: cfg.ratio(expected, inflation),
        filters: vec![kind],
        interpolated: x.state(i, j) == CellState::Interpolated,
        below_floor: inflation < cfg.severity_floor_ms,
        severity_rank: 0,
    }
}

fn usable_cells(x: &LatencyMatrix) -> impl Iterator<Item = (usize, usize)> + '_ {
    let (m, n) = x.shape();
    (0..m)
        .flat_map(move |i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| x.state(i, j).has_value())
}

/// Cells with positive inflation and `S / max(L, floor) > tau`. Missing
/// cells are never flagged.
pub fn ratio_filter(d: &Decomposition, x: &LatencyMatrix, cfg: &FilterConfig) -> Result<Vec<AnomalyCandidate>> {
    cfg.validate()?;
    check_shapes(d, x)?;
    Ok(usable_cells(x)
        .filter(|&(i, j)| {
            let s = d.sparse[(i, j)];
            s > 0.0 && cfg.ratio(d.low_rank[(i, j)], s) > cfg.tau
        })
        .map(|(i, j)| candidate(d, x, cfg, i, j, FilterKind::Ratio))
        .collect())
}

/// Cells whose inflation exceeds `cross_continent_abs_ms`, restricted to
/// cross-continent paths unless the scope is `AllCells`.
///
/// In cross-continent scope every row and column holding a cell above the
/// threshold needs a tag; the error lists the ids that lack one.
pub fn absolute_filter(d: &Decomposition, x: &LatencyMatrix, cfg: &FilterConfig) -> Result<Vec<AnomalyCandidate>> {
    cfg.validate()?;
    check_shapes(d, x)?;
    let over: Vec<(usize, usize)> = usable_cells(x)
        .filter(|&(i, j)| d.sparse[(i, j)] > cfg.cross_continent_abs_ms)
        .collect();
    let continent = |l: &crate::tags::AxisLabel| l.tag.as_ref().map(|t| t.continent);
    if cfg.absolute_scope == AbsoluteScope::CrossContinent {
        let rows: BTreeSet<usize> = over.iter().map(|c| c.0).collect();
        let cols: BTreeSet<usize> = over.iter().map(|c| c.1).collect();
        let untagged: Vec<String> = rows
            .iter()
            .map(|&i| &x.rows()[i])
            .chain(cols.iter().map(|&j| &x.cols()[j]))
            .filter(|l| l.tag.is_none())
            .map(|l| l.id.clone())
            .collect();
        if !untagged.is_empty() {
            return Err(Error::MissingTags(untagged));
        }
    }
    Ok(over
        .into_iter()
        .filter(|&(i, j)| match cfg.absolute_scope {
            AbsoluteScope::AllCells => true,
            AbsoluteScope::CrossContinent => continent(&x.rows()[i]) != continent(&x.cols()[j]),
        })
        .map(|(i, j)| candidate(d, x, cfg, i, j, FilterKind::Absolute))
        .collect())
}

fn severity_order(a: &AnomalyCandidate, b: &AnomalyCandidate) -> Ordering {
    b.inflation_ms
        .total_cmp(&a.inflation_ms)
        .then_with(|| b.ratio.total_cmp(&a.ratio))
        .then_with(|| a.row_id.cmp(&b.row_id))
        .then_with(|| a.col_id.cmp(&b.col_id))
        .then_with(|| (a.row, a.col).cmp(&(b.row, b.col)))
}

/// Orders by inflation, then ratio (both descending), then ids, and assigns
/// `severity_rank` 1..=k. Nothing is dropped.
pub fn rank_candidates(mut candidates: Vec<AnomalyCandidate>, cfg: &FilterConfig) -> Vec<AnomalyCandidate> {
    candidates.sort_by(severity_order);
    for (k, c) in candidates.iter_mut().enumerate() {
        c.severity_rank = k + 1;
        c.below_floor = c.inflation_ms < cfg.severity_floor_ms;
    }
    candidates
}

/// Union of both filters with one entry per cell, ranked.
pub fn filter_decomposition(d: &Decomposition, x: &LatencyMatrix, cfg: &FilterConfig) -> Result<Vec<AnomalyCandidate>> {
    let mut merged: BTreeMap<(usize, usize), AnomalyCandidate> = BTreeMap::new();
    for c in ratio_filter(d, x, cfg)?.into_iter().chain(absolute_filter(d, x, cfg)?) {
        merged
            .entry(c.cell())
            .and_modify(|kept| {
                kept.filters.extend(&c.filters);
                kept.filters.sort();
                kept.filters.dedup();
            })
            .or_insert(c);
    }
    Ok(rank_candidates(merged.into_values().collect(), cfg))
}

#[derive(Debug, Clone)]
pub struct Detection {
    pub candidates: Vec<AnomalyCandidate>,
    pub decomposition: Decomposition,
}

/// Decomposes `x` and runs both filters. Missing cells should be
/// interpolated beforehand; any that remain enter the solver as zero and are
/// never reported.
pub fn detect(x: &LatencyMatrix, solver: &SolverOptions, cfg: &FilterConfig) -> Result<Detection> {
    cfg.validate()?;
    let decomposition = rpca::decompose_matrix(x, solver)?;
    let candidates = filter_decomposition(&decomposition, x, cfg)?;
    Ok(Detection {
        candidates,
        decomposition,
    })
}
