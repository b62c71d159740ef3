//! Raw GPS record parsing, cleaning, and journey splitting.

use std::collections::{BTreeMap, HashSet};
use std::io::Read;

use chrono::{DateTime, FixedOffset, NaiveDate, NaiveDateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::LngLat;

pub const KMH_PER_MS: f64 = 3.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineState {
    Start,
    Off,
}

impl EngineState {
    pub fn as_str(self) -> &'static str {
        match self {
            EngineState::Start => "start",
            EngineState::Off => "off",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "start" | "on" | "1" => Some(EngineState::Start),
            "off" | "0" => Some(EngineState::Off),
            _ => None,
        }
    }
}

/// One line of a GPS feed, as transmitted. Decimal counts are taken from the
/// source text since the parsed float cannot recover trailing zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub coach_id: String,
    pub t: f64,
    pub lng: f64,
    pub lat: f64,
    /// km/h
    pub v: f64,
    pub of: EngineState,
    pub lng_decimals: u32,
    pub lat_decimals: u32,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpsPoint {
    pub coach_id: String,
    pub t: f64,
    pub pos: LngLat,
    /// m/s
    pub v: f64,
    pub of: EngineState,
    /// Fewest decimals carried by either coordinate in the source text.
    pub decimals: u32,
}

impl GpsPoint {
    pub fn speed_kmh(&self) -> f64 {
        self.v * KMH_PER_MS
    }
}

/// A maximal run of one coach's points with bounded sampling gaps.
#[derive(Debug, Clone, PartialEq)]
pub struct Journey {
    pub coach_id: String,
    pub day: NaiveDate,
    pub points: Vec<GpsPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Column {
    CoachId,
    T,
    Lng,
    Lat,
    V,
    Of,
}

impl Column {
    fn from_name(name: &str) -> Result<Self> {
        Ok(match name.trim() {
            "coach_id" => Column::CoachId,
            "t" => Column::T,
            "lng" => Column::Lng,
            "lat" => Column::Lat,
            "v" => Column::V,
            "of" => Column::Of,
            other => return Err(Error::Config(format!("unknown column name {other:?}"))),
        })
    }
}

/// Column order and delimiter of a record file.
#[derive(Debug, Clone, PartialEq)]
pub struct FormatDescriptor {
    columns: Vec<Column>,
    delimiter: u8,
    has_header: bool,
}

impl Default for FormatDescriptor {
    fn default() -> Self {
        Self {
            columns: vec![Column::CoachId, Column::T, Column::Lng, Column::Lat, Column::V, Column::Of],
            delimiter: b',',
            has_header: true,
        }
    }
}

impl FormatDescriptor {
    /// `columns` is a comma-separated list drawn from
    /// `coach_id, t, lng, lat, v, of`; every name must appear exactly once.
    pub fn new(columns: &str, delimiter: u8, has_header: bool) -> Result<Self> {
        let columns = columns.split(',').map(Column::from_name).collect::<Result<Vec<_>>>()?;
        let unique: HashSet<_> = columns.iter().collect();
        if unique.len() != columns.len() || columns.len() != 6 {
            return Err(Error::Config(
                "format descriptor must name each of coach_id,t,lng,lat,v,of exactly once".into(),
            ));
        }
        Ok(Self { columns, delimiter, has_header })
    }

    fn index_of(&self, c: Column) -> usize {
        self.columns.iter().position(|&x| x == c).expect("validated descriptor")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub reason: String,
}

fn decimals_of(text: &str) -> u32 {
    match text.trim().split_once('.') {
        Some((_, frac)) => frac.chars().take_while(|c| c.is_ascii_digit()).count() as u32,
        None => 0,
    }
}

/// Epoch seconds or ISO-8601. Timestamps without an offset are read as UTC.
pub fn parse_timestamp(text: &str) -> Option<f64> {
    let s = text.trim();
    if let Ok(x) = s.parse::<f64>() {
        return x.is_finite().then_some(x);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp() as f64 + f64::from(dt.timestamp_subsec_nanos()) * 1e-9);
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(ndt) = NaiveDateTime::parse_from_str(s, fmt) {
            let dt = Utc.from_utc_datetime(&ndt);
            return Some(dt.timestamp() as f64 + f64::from(dt.timestamp_subsec_nanos()) * 1e-9);
        }
    }
    None
}

fn parse_line(fields: &csv::StringRecord, fmt: &FormatDescriptor, line: usize) -> Result<RawRecord, String> {
    if fields.len() != fmt.columns.len() {
        return Err(format!("expected {} fields, found {}", fmt.columns.len(), fields.len()));
    }
    let get = |c: Column| fields.get(fmt.index_of(c)).unwrap_or("").trim();

    let coach_id = get(Column::CoachId);
    if coach_id.is_empty() {
        return Err("empty coach_id".into());
    }
    let t = parse_timestamp(get(Column::T)).ok_or_else(|| format!("bad timestamp {:?}", get(Column::T)))?;
    let number = |c: Column, what: &str| -> Result<f64, String> {
        get(c)
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| format!("bad {what} {:?}", get(c)))
    };
    let lng = number(Column::Lng, "longitude")?;
    let lat = number(Column::Lat, "latitude")?;
    if !(-180.0..=180.0).contains(&lng) {
        return Err(format!("longitude {lng} out of range"));
    }
    if !(-90.0..=90.0).contains(&lat) {
        return Err(format!("latitude {lat} out of range"));
    }
    let v = number(Column::V, "speed")?;
    let of = EngineState::parse(get(Column::Of)).ok_or_else(|| format!("bad engine state {:?}", get(Column::Of)))?;

    Ok(RawRecord {
        coach_id: coach_id.to_string(),
        t,
        lng,
        lat,
        v,
        of,
        lng_decimals: decimals_of(get(Column::Lng)),
        lat_decimals: decimals_of(get(Column::Lat)),
        line,
    })
}

/// Reads delimiter-separated records. Malformed lines are reported, not fatal;
/// only an unreadable stream aborts.
pub fn parse_records<R: Read>(reader: R, fmt: &FormatDescriptor) -> Result<(Vec<RawRecord>, Vec<ParseError>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(fmt.delimiter)
        .has_headers(fmt.has_header)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut records = Vec::new();
    let mut errors = Vec::new();
    for item in rdr.records() {
        match item {
            Ok(fields) => {
                let line = fields.position().map_or(0, |p| p.line() as usize);
                if fields.iter().all(|f| f.is_empty()) {
                    continue;
                }
                match parse_line(&fields, fmt, line) {
                    Ok(r) => records.push(r),
                    Err(reason) => errors.push(ParseError { line, reason }),
                }
            }
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line() as usize);
                match e.into_kind() {
                    csv::ErrorKind::Io(io) => return Err(Error::Io(io)),
                    other => errors.push(ParseError {
                        line,
                        reason: format!("{other:?}"),
                    }),
                }
            }
        }
    }
    Ok((records, errors))
}

/// Spatial filter applied during cleaning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Area {
    #[default]
    Any,
    Box {
        min_lng: f64,
        min_lat: f64,
        max_lng: f64,
        max_lat: f64,
    },
    /// Vertices as `[lng, lat]`; the ring is closed implicitly.
    Polygon { vertices: Vec<[f64; 2]> },
}

fn ring(vertices: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut v = vertices.to_vec();
    if v.len() > 1 && v.first() == v.last() {
        v.pop();
    }
    v
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

fn segments_intersect(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

impl Area {
    pub fn validate(&self) -> Result<()> {
        match self {
            Area::Any => Ok(()),
            Area::Box { min_lng, min_lat, max_lng, max_lat } => {
                if min_lng < max_lng && min_lat < max_lat {
                    Ok(())
                } else {
                    Err(Error::Config("area box must have min < max on both axes".into()))
                }
            }
            Area::Polygon { vertices } => {
                let v = ring(vertices);
                let n = v.len();
                if n < 3 {
                    return Err(Error::Config("polygon needs at least 3 vertices".into()));
                }
                for i in 0..n {
                    for j in (i + 1)..n {
                        let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                        if adjacent {
                            continue;
                        }
                        if segments_intersect(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]) {
                            return Err(Error::Config(format!("polygon edges {i} and {j} intersect")));
                        }
                    }
                }
                Ok(())
            }
        }
    }

    pub fn contains(&self, p: LngLat) -> bool {
        match self {
            Area::Any => true,
            Area::Box { min_lng, min_lat, max_lng, max_lat } => {
                (*min_lng..=*max_lng).contains(&p.lng) && (*min_lat..=*max_lat).contains(&p.lat)
            }
            Area::Polygon { vertices } => {
                // even-odd ray casting
                let v = ring(vertices);
                let mut inside = false;
                let mut j = v.len() - 1;
                for i in 0..v.len() {
                    let (xi, yi) = (v[i][0], v[i][1]);
                    let (xj, yj) = (v[j][0], v[j][1]);
                    if (yi > p.lat) != (yj > p.lat) && p.lng < (xj - xi) * (p.lat - yi) / (yj - yi) + xi {
                        inside = !inside;
                    }
                    j = i;
                }
                inside
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleaningConfig {
    pub area: Area,
    pub max_speed_kmh: f64,
    pub min_decimals: u32,
    /// Largest gap between consecutive points of one journey, seconds.
    pub max_gap_s: f64,
    /// Offset of the local calendar used to assign journey days.
    pub utc_offset_hours: i32,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        Self {
            area: Area::Any,
            max_speed_kmh: 120.0,
            min_decimals: 6,
            max_gap_s: 120.0,
            utc_offset_hours: 8,
        }
    }
}

impl CleaningConfig {
    pub fn validate(&self) -> Result<()> {
        self.area.validate()?;
        if !(self.max_speed_kmh > 0.0) {
            return Err(Error::Config("max speed must be > 0".into()));
        }
        if !(self.max_gap_s > 0.0) {
            return Err(Error::Config("max gap must be > 0".into()));
        }
        if self.utc_offset_hours.abs() > 14 {
            return Err(Error::Config("utc offset must be within +-14 h".into()));
        }
        Ok(())
    }

    pub fn max_speed_ms(&self) -> f64 {
        self.max_speed_kmh / KMH_PER_MS
    }

    pub fn local_offset(&self) -> FixedOffset {
        FixedOffset::east_opt(self.utc_offset_hours * 3600).expect("validated offset")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub parsed: usize,
    pub rejected_area: usize,
    pub rejected_speed: usize,
    pub rejected_precision: usize,
    pub rejected_duplicate: usize,
}

impl CleaningReport {
    pub fn kept(&self) -> usize {
        self.parsed - self.rejected_area - self.rejected_speed - self.rejected_precision - self.rejected_duplicate
    }
}

impl From<&RawRecord> for GpsPoint {
    fn from(r: &RawRecord) -> Self {
        GpsPoint {
            coach_id: r.coach_id.clone(),
            t: r.t,
            pos: LngLat::new(r.lng, r.lat),
            v: r.v / KMH_PER_MS,
            of: r.of,
            decimals: r.lng_decimals.min(r.lat_decimals),
        }
    }
}

/// Applies the area, speed and precision rules and collapses duplicate
/// `(coach, t)` pairs, keeping the first. Input order is preserved.
pub fn clean(records: &[RawRecord], config: &CleaningConfig) -> (Vec<GpsPoint>, CleaningReport) {
    let points: Vec<GpsPoint> = records.iter().map(GpsPoint::from).collect();
    clean_points(points, config)
}

/// Same rules as [`clean`], over already converted points.
pub fn clean_points(points: Vec<GpsPoint>, config: &CleaningConfig) -> (Vec<GpsPoint>, CleaningReport) {
    let mut report = CleaningReport {
        parsed: points.len(),
        ..Default::default()
    };
    let max_v = config.max_speed_ms();
    let mut seen = HashSet::new();
    let mut kept = Vec::with_capacity(points.len());
    for p in points {
        if !config.area.contains(p.pos) {
            report.rejected_area += 1;
        } else if !(p.v >= 0.0 && p.v <= max_v) {
            report.rejected_speed += 1;
        } else if p.decimals < config.min_decimals {
            report.rejected_precision += 1;
        } else if !seen.insert((p.coach_id.clone(), p.t.to_bits())) {
            report.rejected_duplicate += 1;
        } else {
            kept.push(p);
        }
    }
    (kept, report)
}

/// Groups points by coach, each group stably sorted by time.
pub fn group_by_coach(points: Vec<GpsPoint>) -> BTreeMap<String, Vec<GpsPoint>> {
    let mut groups: BTreeMap<String, Vec<GpsPoint>> = BTreeMap::new();
    for p in points {
        groups.entry(p.coach_id.clone()).or_default().push(p);
    }
    for g in groups.values_mut() {
        g.sort_by(|a, b| a.t.total_cmp(&b.t));
    }
    groups
}

pub fn local_day(t: f64, offset: FixedOffset) -> NaiveDate {
    let secs = t.floor() as i64;
    let utc = DateTime::from_timestamp(secs, 0).unwrap_or(DateTime::UNIX_EPOCH);
    utc.with_timezone(&offset).date_naive()
}

/// Splits one coach's time-sorted points at every gap that is not in
/// `(0, max_gap_s]`. Runs of fewer than two points are dropped.
pub fn split_journeys(points: &[GpsPoint], max_gap_s: f64, offset: FixedOffset) -> Result<Vec<Journey>> {
    if let Some(first) = points.first() {
        if let Some(other) = points.iter().find(|p| p.coach_id != first.coach_id) {
            return Err(Error::Contract(format!(
                "split_journeys got points of coaches {} and {}",
                first.coach_id, other.coach_id
            )));
        }
    }
    if let Some(w) = points.windows(2).find(|w| !(w[1].t > w[0].t)) {
        return Err(Error::Contract(format!("points not strictly increasing in time at t = {}", w[1].t)));
    }

    let mut journeys = Vec::new();
    let mut start = 0;
    for i in 1..=points.len() {
        let boundary = i == points.len() || points[i].t - points[i - 1].t > max_gap_s;
        if boundary {
            if i - start >= 2 {
                let run = points[start..i].to_vec();
                journeys.push(Journey {
                    coach_id: run[0].coach_id.clone(),
                    day: local_day(run[0].t, offset),
                    points: run,
                });
            }
            start = i;
        }
    }
    Ok(journeys)
}
