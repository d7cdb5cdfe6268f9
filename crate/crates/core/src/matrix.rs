//! Latency matrices: construction from measurements, donor-group
//! interpolation of missing cells, and CSV exchange.
//!
//! Every cell carries one of three states. `Observed` cells hold measured
//! RTTs, `Interpolated` cells hold values copied from a donor group, and
//! `Missing` cells hold a 0.0 sentinel that is never read as data.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::net::Ipv4Addr;

use ipnet::Ipv4Net;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measurement::MeasurementRecord;
use crate::prefix::PrefixTable;
use crate::tags::{AxisLabel, DestinationTags, EndpointTag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellState {
    Observed,
    Interpolated,
    Missing,
}

impl CellState {
    pub fn code(self) -> char {
        match self {
            CellState::Observed => 'O',
            CellState::Interpolated => 'I',
            CellState::Missing => 'M',
        }
    }

    pub fn from_code(code: &str) -> Result<Self> {
        match code.trim() {
            "O" => Ok(CellState::Observed),
            "I" => Ok(CellState::Interpolated),
            "M" => Ok(CellState::Missing),
            other => Err(Error::Format(format!("unknown mask code {other:?}"))),
        }
    }

    /// Observed or interpolated: the cell holds a usable value.
    pub fn has_value(self) -> bool {
        self != CellState::Missing
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Ip,
    Prefix,
}

/// Dense RTT matrix (ms) with per-cell provenance and row/column labels.
///
/// Rows are sources, columns are destinations.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyMatrix {
    values: DMatrix<f64>,
    cells: DMatrix<CellState>,
    rows: Vec<AxisLabel>,
    cols: Vec<AxisLabel>,
    level: Level,
}

impl LatencyMatrix {
    pub fn new(
        mut values: DMatrix<f64>,
        cells: DMatrix<CellState>,
        rows: Vec<AxisLabel>,
        cols: Vec<AxisLabel>,
        level: Level,
    ) -> Result<Self> {
        if values.shape() != cells.shape() {
            return Err(Error::InvalidInput(format!(
                "values are {:?} but mask is {:?}",
                values.shape(),
                cells.shape()
            )));
        }
        if values.shape() != (rows.len(), cols.len()) {
            return Err(Error::InvalidInput(format!(
                "values are {:?} but there are {} row and {} column labels",
                values.shape(),
                rows.len(),
                cols.len()
            )));
        }
        for (v, state) in values.iter_mut().zip(cells.iter()) {
            if !state.has_value() {
                *v = 0.0;
            } else if !v.is_finite() {
                return Err(Error::InvalidInput("non-finite value in an observed cell".into()));
            }
        }
        Ok(Self {
            values,
            cells,
            rows,
            cols,
            level,
        })
    }

    /// A fully observed matrix.
    pub fn from_dense(
        values: DMatrix<f64>,
        rows: Vec<AxisLabel>,
        cols: Vec<AxisLabel>,
        level: Level,
    ) -> Result<Self> {
        let cells = DMatrix::from_element(values.nrows(), values.ncols(), CellState::Observed);
        Self::new(values, cells, rows, cols, level)
    }

    /// A fully observed matrix with generated labels `r0..`, `c0..` and no tags.
    pub fn unlabeled(values: DMatrix<f64>) -> Result<Self> {
        let rows = (0..values.nrows()).map(|i| AxisLabel::new(format!("r{i}"), None)).collect();
        let cols = (0..values.ncols()).map(|j| AxisLabel::new(format!("c{j}"), None)).collect();
        Self::from_dense(values, rows, cols, Level::Prefix)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn cells(&self) -> &DMatrix<CellState> {
        &self.cells
    }

    pub fn state(&self, row: usize, col: usize) -> CellState {
        self.cells[(row, col)]
    }

    /// The cell value unless the cell is missing.
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.cells[(row, col)].has_value().then(|| self.values[(row, col)])
    }

    pub fn rows(&self) -> &[AxisLabel] {
        &self.rows
    }

    pub fn cols(&self) -> &[AxisLabel] {
        &self.cols
    }

    pub fn row_tags(&self) -> Vec<Option<&EndpointTag>> {
        self.rows.iter().map(|l| l.tag.as_ref()).collect()
    }

    pub fn col_tags(&self) -> Vec<Option<&EndpointTag>> {
        self.cols.iter().map(|l| l.tag.as_ref()).collect()
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn count(&self, state: CellState) -> usize {
        self.cells.iter().filter(|&&s| s == state).count()
    }

    pub fn missing_fraction(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.count(CellState::Missing) as f64 / self.values.len() as f64
        }
    }

    /// Fails unless every usable cell is finite and non-negative.
    pub fn check_values(&self) -> Result<()> {
        let bad = self
            .values
            .iter()
            .zip(self.cells.iter())
            .any(|(&v, s)| s.has_value() && !(v.is_finite() && v >= 0.0));
        if bad {
            Err(Error::InvalidInput("latency values must be finite and non-negative".into()))
        } else {
            Ok(())
        }
    }

    /// Copies out the given rows and columns, in the given order.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> LatencyMatrix {
        let values = DMatrix::from_fn(rows.len(), cols.len(), |i, j| self.values[(rows[i], cols[j])]);
        let cells = DMatrix::from_fn(rows.len(), cols.len(), |i, j| self.cells[(rows[i], cols[j])]);
        LatencyMatrix {
            values,
            cells,
            rows: rows.iter().map(|&i| self.rows[i].clone()).collect(),
            cols: cols.iter().map(|&j| self.cols[j].clone()).collect(),
            level: self.level,
        }
    }

    /// Attaches tags by id. Labels without a match keep their current tag.
    pub fn apply_tags(&mut self, sources: &BTreeMap<String, EndpointTag>, destinations: &DestinationTags) {
        for row in &mut self.rows {
            if let Some(tag) = sources.get(&row.id) {
                row.tag = Some(tag.clone());
            }
        }
        for col in &mut self.cols {
            if let Some(tag) = destinations.get(&col.id) {
                col.tag = Some(tag.clone());
            }
        }
    }
}

fn complete_rtt(record: &MeasurementRecord) -> Option<f64> {
    record.rtt_ms.filter(|_| record.complete)
}

fn build(
    cells: BTreeMap<(String, usize), f64>,
    col_ids: Vec<String>,
    sources: &BTreeMap<String, EndpointTag>,
    destinations: &DestinationTags,
    level: Level,
) -> Result<LatencyMatrix> {
    let row_ids: Vec<String> = cells
        .keys()
        .map(|(s, _)| s.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let row_index: HashMap<&str, usize> =
        row_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut values = DMatrix::zeros(row_ids.len(), col_ids.len());
    let mut states = DMatrix::from_element(row_ids.len(), col_ids.len(), CellState::Missing);
    for ((source, col), rtt) in &cells {
        let i = row_index[source.as_str()];
        values[(i, *col)] = *rtt;
        states[(i, *col)] = CellState::Observed;
    }
    let rows = row_ids
        .into_iter()
        .map(|id| {
            let tag = sources.get(&id).cloned();
            AxisLabel::new(id, tag)
        })
        .collect();
    let cols = col_ids
        .into_iter()
        .map(|id| {
            let tag = destinations.get(&id).cloned();
            AxisLabel::new(id, tag)
        })
        .collect();
    LatencyMatrix::new(values, states, rows, cols, level)
}

/// Builds the IP-level matrix for one prefix: one column per destination IP
/// whose longest match is `prefix`, one row per source with at least one
/// measurement to those IPs.
///
/// `records` should already be collapsed; if several complete records remain
/// for a cell the minimum is used.
pub fn build_ip_matrix(
    records: &[MeasurementRecord],
    prefix: Ipv4Net,
    table: &PrefixTable,
    sources: &BTreeMap<String, EndpointTag>,
    destinations: &DestinationTags,
) -> Result<LatencyMatrix> {
    let prefix = prefix.trunc();
    let maps_here = |ip: Ipv4Addr| table.lookup(ip).is_some_and(|e| e.prefix == prefix);

    let ips: Vec<Ipv4Addr> = records
        .iter()
        .filter(|r| complete_rtt(r).is_some() && maps_here(r.destination_ip))
        .map(|r| r.destination_ip)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if ips.is_empty() {
        return Err(Error::EmptyMatrix(format!("no measured IPs map to {prefix}")));
    }
    let col_index: HashMap<Ipv4Addr, usize> = ips.iter().enumerate().map(|(j, ip)| (*ip, j)).collect();

    let mut cells: BTreeMap<(String, usize), f64> = BTreeMap::new();
    for record in records {
        let (Some(rtt), Some(&j)) = (complete_rtt(record), col_index.get(&record.destination_ip)) else {
            continue;
        };
        let slot = cells.entry((record.source_id.clone(), j)).or_insert(rtt);
        *slot = slot.min(rtt);
    }
    build(
        cells,
        ips.iter().map(|ip| ip.to_string()).collect(),
        sources,
        destinations,
        Level::Ip,
    )
}

/// Builds the prefix-level matrix.
///
/// Columns are prefixes with at least `min_ips` distinct measured IPs mapped
/// to them. A cell holds the minimum RTT from the source to any IP of the
/// prefix, or is missing when the source measured none of them. Rows are the
/// sources with at least one observed cell.
pub fn aggregate_to_prefix(
    records: &[MeasurementRecord],
    table: &PrefixTable,
    sources: &BTreeMap<String, EndpointTag>,
    destinations: &DestinationTags,
    min_ips: usize,
) -> Result<LatencyMatrix> {
    if min_ips == 0 {
        return Err(Error::InvalidInput("min_ips must be at least 1".into()));
    }
    let mut ips_per_prefix: BTreeMap<Ipv4Net, BTreeSet<Ipv4Addr>> = BTreeMap::new();
    let mut mapped = Vec::new();
    for record in records {
        let Some(rtt) = complete_rtt(record) else { continue };
        let Some(entry) = table.lookup(record.destination_ip) else { continue };
        ips_per_prefix
            .entry(entry.prefix)
            .or_default()
            .insert(record.destination_ip);
        mapped.push((record.source_id.as_str(), entry.prefix, rtt));
    }
    let qualifying: Vec<Ipv4Net> = ips_per_prefix
        .into_iter()
        .filter(|(_, ips)| ips.len() >= min_ips)
        .map(|(p, _)| p)
        .collect();
    let col_index: HashMap<Ipv4Net, usize> =
        qualifying.iter().enumerate().map(|(j, p)| (*p, j)).collect();

    let mut cells: BTreeMap<(String, usize), f64> = BTreeMap::new();
    for (source, prefix, rtt) in mapped {
        if let Some(&j) = col_index.get(&prefix) {
            let slot = cells.entry((source.to_string(), j)).or_insert(rtt);
            *slot = slot.min(rtt);
        }
    }
    build(
        cells,
        qualifying.iter().map(|p| p.to_string()).collect(),
        sources,
        destinations,
        Level::Prefix,
    )
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct InterpolationReport {
    pub missing_before: usize,
    pub filled: usize,
    /// `(row id, column id)` of cells that had no donor.
    pub unfilled: Vec<(String, String)>,
    pub missing_fraction_before: f64,
    pub missing_fraction_after: f64,
}

/// Fills missing cells from (AS, city) donor groups.
///
/// A missing cell `(i, j)` takes the minimum observed value over all cells
/// `(i', j')` where row `i'` shares row `i`'s (AS, city) and column `j'`
/// shares column `j`'s (AS, city). Row `i` itself is part of its own donor
/// group. Only observed cells donate. Cells without a donor, or whose row or
/// column is untagged, stay missing and are listed in the report.
pub fn interpolate_missing(x: &LatencyMatrix) -> (LatencyMatrix, InterpolationReport) {
    let (m, n) = x.shape();
    let row_keys: Vec<Option<(u32, &str)>> = x.rows.iter().map(|l| l.tag.as_ref().map(EndpointTag::as_city)).collect();
    let col_keys: Vec<Option<(u32, &str)>> = x.cols.iter().map(|l| l.tag.as_ref().map(EndpointTag::as_city)).collect();

    type CityKey<'a> = (u32, &'a str);
    let mut donor_min: HashMap<(CityKey, CityKey), f64> = HashMap::new();
    for i in 0..m {
        let Some(rk) = row_keys[i] else { continue };
        for j in 0..n {
            let Some(ck) = col_keys[j] else { continue };
            if x.cells[(i, j)] != CellState::Observed {
                continue;
            }
            let v = x.values[(i, j)];
            donor_min
                .entry((rk, ck))
                .and_modify(|best| *best = best.min(v))
                .or_insert(v);
        }
    }

    let mut out = x.clone();
    let mut report = InterpolationReport {
        missing_before: x.count(CellState::Missing),
        missing_fraction_before: x.missing_fraction(),
        ..Default::default()
    };
    for i in 0..m {
        for j in 0..n {
            if x.cells[(i, j)] != CellState::Missing {
                continue;
            }
            let donor = row_keys[i]
                .zip(col_keys[j])
                .and_then(|key| donor_min.get(&key));
            match donor {
                Some(&v) => {
                    out.values[(i, j)] = v;
                    out.cells[(i, j)] = CellState::Interpolated;
                    report.filled += 1;
                }
                None => report
                    .unfilled
                    .push((x.rows[i].id.clone(), x.cols[j].id.clone())),
            }
        }
    }
    report.missing_fraction_after = out.missing_fraction();
    (out, report)
}

/// Writes a value grid: a header row of column ids and a leading column of
/// row ids. `None` cells are written as empty fields.
pub fn write_grid<W: Write>(
    writer: W,
    row_ids: &[&str],
    col_ids: &[&str],
    cell: impl Fn(usize, usize) -> Option<String>,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["row_id"];
    header.extend_from_slice(col_ids);
    wtr.write_record(&header)?;
    for (i, id) in row_ids.iter().enumerate() {
        let mut record = vec![id.to_string()];
        record.extend((0..col_ids.len()).map(|j| cell(i, j).unwrap_or_default()));
        wtr.write_record(&record)?;
    }
    wtr.flush()?;
    Ok(())
}

impl LatencyMatrix {
    fn ids(labels: &[AxisLabel]) -> Vec<&str> {
        labels.iter().map(|l| l.id.as_str()).collect()
    }

    /// Values grid; missing cells are empty fields.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_grid(writer, &Self::ids(&self.rows), &Self::ids(&self.cols), |i, j| {
            self.get(i, j).map(|v| v.to_string())
        })
    }

    /// Companion `.mask.csv` grid of `O`/`I`/`M` codes.
    pub fn write_mask_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_grid(writer, &Self::ids(&self.rows), &Self::ids(&self.cols), |i, j| {
            Some(self.cells[(i, j)].code().to_string())
        })
    }

    /// Writes `other` (same shape, e.g. `L` or `S`) using this matrix's labels.
    pub fn write_dense_csv<W: Write>(&self, writer: W, other: &DMatrix<f64>) -> Result<()> {
        if other.shape() != self.shape() {
            return Err(Error::InvalidInput("shape mismatch on export".into()));
        }
        write_grid(writer, &Self::ids(&self.rows), &Self::ids(&self.cols), |i, j| {
            Some(other[(i, j)].to_string())
        })
    }

    /// Reads a values grid and an optional mask grid.
    ///
    /// Without a mask, empty fields are missing and everything else is
    /// observed. The level is `Ip` when every column id is an IPv4 address.
    pub fn read_csv<R: Read, M: Read>(values: R, mask: Option<M>) -> Result<LatencyMatrix> {
        let grid = Grid::read(values)?;
        let (m, n) = (grid.row_ids.len(), grid.col_ids.len());
        let mut cells = DMatrix::from_fn(m, n, |i, j| {
            if grid.cells[i * n + j].is_some() {
                CellState::Observed
            } else {
                CellState::Missing
            }
        });
        if let Some(mask) = mask {
            let mask = Grid::read_raw(mask)?;
            if mask.row_ids != grid.row_ids || mask.col_ids != grid.col_ids {
                return Err(Error::Format("mask labels do not match the matrix".into()));
            }
            for i in 0..m {
                for j in 0..n {
                    let state = CellState::from_code(&mask.cells[i * n + j])?;
                    if state.has_value() && grid.cells[i * n + j].is_none() {
                        return Err(Error::Format(format!(
                            "cell ({}, {}) is marked {} but has no value",
                            grid.row_ids[i],
                            grid.col_ids[j],
                            state.code()
                        )));
                    }
                    cells[(i, j)] = state;
                }
            }
        }
        let values = DMatrix::from_fn(m, n, |i, j| grid.cells[i * n + j].unwrap_or(0.0));
        let level = if n > 0 && grid.col_ids.iter().all(|c| c.parse::<Ipv4Addr>().is_ok()) {
            Level::Ip
        } else {
            Level::Prefix
        };
        let rows = grid.row_ids.into_iter().map(|id| AxisLabel::new(id, None)).collect();
        let cols = grid.col_ids.into_iter().map(|id| AxisLabel::new(id, None)).collect();
        LatencyMatrix::new(values, cells, rows, cols, level)
    }
}

/// A parsed CSV grid.
#[derive(Debug, Clone)]
pub struct Grid<T> {
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
    /// Row-major cells.
    pub cells: Vec<T>,
}

impl Grid<String> {
    pub fn read_raw<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.is_empty() {
            return Err(Error::Format("empty grid header".into()));
        }
        let col_ids: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let mut row_ids = Vec::new();
        let mut cells = Vec::new();
        for record in rdr.records() {
            let record = record?;
            row_ids.push(record[0].to_string());
            cells.extend(record.iter().skip(1).map(str::to_string));
        }
        Ok(Self {
            row_ids,
            col_ids,
            cells,
        })
    }
}

impl Grid<Option<f64>> {
    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let raw = Grid::read_raw(reader)?;
        let cells = raw
            .cells
            .iter()
            .enumerate()
            .map(|(k, s)| {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse::<f64>().map(Some).map_err(|_| {
                        let n = raw.col_ids.len().max(1);
                        Error::Format(format!(
                            "cell ({}, {}): cannot parse {s:?}",
                            raw.row_ids[k / n],
                            raw.col_ids[k % n]
                        ))
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            row_ids: raw.row_ids,
            col_ids: raw.col_ids,
            cells,
        })
    }

    /// Dense matrix with `None` replaced by 0.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.col_ids.len();
        DMatrix::from_fn(self.row_ids.len(), n, |i, j| self.cells[i * n + j].unwrap_or(0.0))
    }
}
