use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};

use chrono::NaiveDate;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::cluster::ClusterPartition;
use super::route::{project_event, RoadSegment};
use crate::error::{Error, Result};
use crate::geo::LngLat;
use crate::ingest::Journey;
use crate::stop::StopCase;

/// An inferred stop, attributed to the first point of its GPS pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopEvent {
    pub coach_id: String,
    pub day: NaiveDate,
    pub t: f64,
    pub position: LngLat,
    pub dwell: f64,
    pub case: StopCase,
}

impl StopEvent {
    pub fn column(&self) -> ColumnKey {
        ColumnKey {
            coach_id: self.coach_id.clone(),
            day: self.day,
        }
    }
}

/// One matrix column: a coach on a local calendar day.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ColumnKey {
    pub coach_id: String,
    pub day: NaiveDate,
}

impl fmt::Display for ColumnKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.coach_id, self.day.format("%Y-%m-%d"))
    }
}

impl std::str::FromStr for ColumnKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (coach, day) = s
            .rsplit_once('@')
            .ok_or_else(|| Error::Parse(format!("column key {s:?} is not coach@YYYY-MM-DD")))?;
        let day = NaiveDate::parse_from_str(day, "%Y-%m-%d").map_err(|e| Error::Parse(format!("column key {s:?}: {e}")))?;
        Ok(ColumnKey {
            coach_id: coach.to_string(),
            day,
        })
    }
}

/// Sorted, de-duplicated coach-day keys of a set of journeys.
pub fn column_keys(journeys: &[Journey]) -> Vec<ColumnKey> {
    journeys
        .iter()
        .map(|j| ColumnKey {
            coach_id: j.coach_id.clone(),
            day: j.day,
        })
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Distributes a dwell between segment `i` and its successor by the distance
/// `to_end` from the stop to the end of segment `i`. The successor share of
/// the last segment folds back into it; zero shares are omitted.
pub fn smooth_split(dwell: f64, i: usize, to_end: f64, seg_len: f64, segment_count: usize) -> Vec<(usize, f64)> {
    let own = to_end / seg_len * dwell;
    let next = (seg_len - to_end) / seg_len * dwell;
    let mut shares = Vec::with_capacity(2);
    if i + 1 >= segment_count {
        if own + next != 0.0 {
            shares.push((i, own + next));
        }
    } else {
        if own != 0.0 {
            shares.push((i, own));
        }
        if next != 0.0 {
            shares.push((i + 1, next));
        }
    }
    shares
}

/// A smoothed piece of a stop event, ready for accumulation.
#[derive(Debug, Clone, PartialEq)]
pub struct DurationShare {
    pub segment: usize,
    pub column: ColumnKey,
    pub seconds: f64,
}

/// Stop-duration matrix: segments by coach-days, seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct DurationMatrix {
    pub values: DMatrix<f64>,
    pub row_ids: Vec<usize>,
    pub col_keys: Vec<ColumnKey>,
}

impl DurationMatrix {
    pub fn new(values: DMatrix<f64>, row_ids: Vec<usize>, col_keys: Vec<ColumnKey>) -> Result<Self> {
        if values.nrows() != row_ids.len() || values.ncols() != col_keys.len() {
            return Err(Error::Contract(format!(
                "matrix is {}x{} but has {} row ids and {} column keys",
                values.nrows(),
                values.ncols(),
                row_ids.len(),
                col_keys.len()
            )));
        }
        if values.iter().any(|&x| !(x.is_finite() && x >= 0.0)) {
            return Err(Error::Contract("duration matrix entries must be finite and >= 0".into()));
        }
        Ok(Self { values, row_ids, col_keys })
    }

    pub fn zeros(row_ids: Vec<usize>, col_keys: Vec<ColumnKey>) -> Self {
        Self {
            values: DMatrix::zeros(row_ids.len(), col_keys.len()),
            row_ids,
            col_keys,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    pub fn total(&self) -> f64 {
        self.values.sum()
    }

    /// Delimiter-separated text with a header of column keys and a leading
    /// column of segment ids. Values carry 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "segment_id")?;
        for k in &self.col_keys {
            write!(out, ",{k}")?;
        }
        writeln!(out)?;
        for (r, id) in self.row_ids.iter().enumerate() {
            write!(out, "{id}")?;
            for c in 0..self.values.ncols() {
                write!(out, ",{:.16e}", self.values[(r, c)])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty matrix file".into()))??;
        let mut cols = header.trim_end().split(',');
        if cols.next() != Some("segment_id") {
            return Err(Error::Parse("matrix header must start with segment_id".into()));
        }
        let col_keys = cols.map(str::parse).collect::<Result<Vec<ColumnKey>>>()?;
        let mut row_ids = Vec::new();
        let mut data = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.trim_end().split(',');
            let bad = |what: &str| Error::Parse(format!("matrix row {}: {what}", n + 1));
            let id = fields.next().and_then(|f| f.parse().ok()).ok_or_else(|| bad("bad segment id"))?;
            let row = fields.map(|f| f.parse::<f64>().map_err(|_| bad("bad value"))).collect::<Result<Vec<_>>>()?;
            if row.len() != col_keys.len() {
                return Err(bad("wrong number of values"));
            }
            row_ids.push(id);
            data.extend(row);
        }
        let values = DMatrix::from_row_slice(row_ids.len(), col_keys.len(), &data);
        Self::new(values, row_ids, col_keys)
    }
}

/// Sums shares into a matrix with one row per segment and the given columns.
pub fn assemble_matrix(shares: &[DurationShare], segment_ids: &[usize], column_keys: &[ColumnKey]) -> Result<DurationMatrix> {
    let row_of: HashMap<usize, usize> = segment_ids.iter().enumerate().map(|(r, &id)| (id, r)).collect();
    let col_of: HashMap<&ColumnKey, usize> = column_keys.iter().enumerate().map(|(c, k)| (k, c)).collect();
    let mut m = DurationMatrix::zeros(segment_ids.to_vec(), column_keys.to_vec());
    for s in shares {
        let r = *row_of
            .get(&s.segment)
            .ok_or_else(|| Error::Contract(format!("share references unknown segment {}", s.segment)))?;
        let c = *col_of
            .get(&s.column)
            .ok_or_else(|| Error::Contract(format!("share references unknown column {}", s.column)))?;
        m.values[(r, c)] += s.seconds;
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssemblyConfig {
    pub off_route_m: f64,
    /// When set, momentary touches enter the matrix with this many seconds.
    pub touch_epsilon_s: Option<f64>,
}

impl Default for AssemblyConfig {
    fn default() -> Self {
        Self {
            off_route_m: 500.0,
            touch_epsilon_s: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AssemblyReport {
    pub accepted: usize,
    pub dropped_zero: usize,
    pub dropped_off_route: usize,
    pub accepted_seconds: f64,
}

/// Projects, smooths and accumulates stop events onto the segment grid.
pub fn build_matrix(
    events: &[StopEvent],
    segments: &[RoadSegment],
    seg_len: f64,
    columns: &[ColumnKey],
    config: &AssemblyConfig,
) -> Result<(DurationMatrix, AssemblyReport)> {
    let mut report = AssemblyReport::default();
    let mut shares = Vec::new();
    for e in events {
        let dwell = if e.dwell > 0.0 {
            e.dwell
        } else if let Some(eps) = config.touch_epsilon_s.filter(|_| e.case == StopCase::Case1Touch) {
            eps
        } else {
            report.dropped_zero += 1;
            continue;
        };
        let Some(p) = project_event(e.position, segments, config.off_route_m) else {
            report.dropped_off_route += 1;
            continue;
        };
        report.accepted += 1;
        report.accepted_seconds += dwell;
        let column = e.column();
        for (i, seconds) in smooth_split(dwell, p.index, p.to_end.min(seg_len), seg_len, segments.len()) {
            shares.push(DurationShare {
                segment: segments[i].id,
                column: column.clone(),
                seconds,
            });
        }
    }
    let ids: Vec<usize> = segments.iter().map(|s| s.id).collect();
    Ok((assemble_matrix(&shares, &ids, columns)?, report))
}

/// One sub-matrix per cluster holding that cluster's rows in their original
/// order; every column is kept.
pub fn partition_matrix(r: &DurationMatrix, partition: &ClusterPartition) -> Result<Vec<DurationMatrix>> {
    if partition.assignment.len() != r.values.nrows() {
        return Err(Error::Contract(format!(
            "partition covers {} rows, matrix has {}",
            partition.assignment.len(),
            r.values.nrows()
        )));
    }
    Ok((0..partition.cluster_count())
        .map(|c| {
            let rows: Vec<usize> = (0..r.values.nrows()).filter(|&i| partition.assignment[i] == c).collect();
            DurationMatrix {
                values: r.values.select_rows(rows.iter()),
                row_ids: rows.iter().map(|&i| r.row_ids[i]).collect(),
                col_keys: r.col_keys.clone(),
            }
        })
        .collect())
}

/// Reassembles row blocks into the row order given by `row_ids`.
pub fn merge_rows(parts: &[DurationMatrix], row_ids: &[usize]) -> Result<DurationMatrix> {
    let cols = parts.first().map(|p| p.col_keys.clone()).unwrap_or_default();
    let mut out = DurationMatrix::zeros(row_ids.to_vec(), cols);
    let target: HashMap<usize, usize> = row_ids.iter().enumerate().map(|(r, &id)| (id, r)).collect();
    let mut filled = vec![false; row_ids.len()];
    for p in parts {
        if p.col_keys != out.col_keys {
            return Err(Error::Contract("parts disagree on columns".into()));
        }
        for (i, id) in p.row_ids.iter().enumerate() {
            let r = *target.get(id).ok_or_else(|| Error::Contract(format!("unknown row id {id}")))?;
            out.values.set_row(r, &p.values.row(i));
            filled[r] = true;
        }
    }
    if filled.iter().any(|f| !f) {
        return Err(Error::Contract("parts do not cover every row".into()));
    }
    Ok(out)
}
