use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{haversine, project_onto_chord, LngLat};
use crate::ingest::Journey;

/// A travel line with cumulative arclength at every vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutePolyline {
    vertices: Vec<LngLat>,
    arclength: Vec<f64>,
}

impl RoutePolyline {
    pub fn new(vertices: Vec<LngLat>) -> Result<Self> {
        if vertices.len() < 2 {
            return Err(Error::Config("route polyline needs at least 2 vertices".into()));
        }
        let mut arclength = Vec::with_capacity(vertices.len());
        arclength.push(0.0);
        for w in vertices.windows(2) {
            let step = haversine(w[0], w[1]);
            if !(step > 0.0) {
                return Err(Error::Config(format!(
                    "route polyline has repeated vertex at ({}, {})",
                    w[1].lng, w[1].lat
                )));
            }
            arclength.push(arclength.last().unwrap() + step);
        }
        Ok(Self { vertices, arclength })
    }

    /// Reads one `lng,lat` pair per line; blank lines and `#` comments are skipped.
    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut vertices = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            let s = line.trim();
            if s.is_empty() || s.starts_with('#') {
                continue;
            }
            let parsed = s.split_once(',').and_then(|(a, b)| {
                let lng = a.trim().parse::<f64>().ok()?;
                let lat = b.trim().parse::<f64>().ok()?;
                (lng.is_finite() && lat.is_finite()).then_some(LngLat::new(lng, lat))
            });
            match parsed {
                Some(p) => vertices.push(p),
                None => return Err(Error::Parse(format!("route line {}: expected \"lng,lat\"", n + 1))),
            }
        }
        Self::new(vertices)
    }

    pub fn write(&self) -> String {
        self.vertices.iter().map(|p| format!("{},{}\n", p.lng, p.lat)).collect()
    }

    /// A polyline traced from one journey's points, in time order, skipping
    /// points within `min_spacing_m` of the previous vertex.
    pub fn from_journey(journey: &Journey, min_spacing_m: f64) -> Result<Self> {
        let mut vertices: Vec<LngLat> = Vec::new();
        for p in &journey.points {
            match vertices.last() {
                Some(&last) if haversine(last, p.pos) <= min_spacing_m => {}
                _ => vertices.push(p.pos),
            }
        }
        Self::new(vertices)
    }

    pub fn vertices(&self) -> &[LngLat] {
        &self.vertices
    }

    pub fn length(&self) -> f64 {
        *self.arclength.last().unwrap()
    }

    /// Position at arclength `s`, clamped to the ends, interpolated linearly
    /// in lng/lat within the containing edge.
    pub fn point_at(&self, s: f64) -> LngLat {
        if s <= 0.0 {
            return self.vertices[0];
        }
        if s >= self.length() {
            return *self.vertices.last().unwrap();
        }
        let k = self.arclength.partition_point(|&a| a <= s).max(1);
        let (s0, s1) = (self.arclength[k - 1], self.arclength[k]);
        self.vertices[k - 1].lerp(self.vertices[k], (s - s0) / (s1 - s0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadSegment {
    pub id: usize,
    pub start: LngLat,
    pub end: LngLat,
    /// Arclength of the slice, meters.
    pub length: f64,
}

impl RoadSegment {
    pub fn midpoint(&self) -> LngLat {
        self.start.lerp(self.end, 0.5)
    }
}

/// Cuts the polyline into consecutive arclength slices of `seg_len` meters;
/// the last slice keeps the remainder.
pub fn segment_route(route: &RoutePolyline, seg_len: f64) -> Result<Vec<RoadSegment>> {
    if !(seg_len > 0.0) || !seg_len.is_finite() {
        return Err(Error::Config(format!("segment length must be > 0, got {seg_len}")));
    }
    let total = route.length();
    // absorb floating-point dust so an exact multiple does not leave a sliver
    let count = ((total / seg_len) - 1e-9).ceil().max(1.0) as usize;
    Ok((0..count)
        .map(|k| {
            let s0 = k as f64 * seg_len;
            let s1 = if k + 1 == count { total } else { (k + 1) as f64 * seg_len };
            RoadSegment {
                id: k,
                start: route.point_at(s0),
                end: route.point_at(s1),
                length: s1 - s0,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub index: usize,
    /// Along-segment distance from the projected point to the segment end.
    pub to_end: f64,
    /// Perpendicular distance from the position to the segment chord.
    pub offset: f64,
}

/// Nearest segment by clamped perpendicular projection onto each chord.
/// Returns `None` when the nearest chord is farther than `max_offset_m`.
pub fn project_event(position: LngLat, segments: &[RoadSegment], max_offset_m: f64) -> Option<Projection> {
    let mut best: Option<Projection> = None;
    for (index, seg) in segments.iter().enumerate() {
        let (frac, offset) = project_onto_chord(position, seg.start, seg.end);
        // ties (shared endpoints) go to the lower index
        if best.is_none_or(|b| offset < b.offset - 1e-9) {
            best = Some(Projection {
                index,
                to_end: (1.0 - frac) * seg.length,
                offset,
            });
        }
    }
    best.filter(|b| b.offset <= max_offset_m)
}
