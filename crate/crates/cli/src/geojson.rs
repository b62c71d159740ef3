use serde_json::{json, Value};
use stopscan_core::grid::RoadSegment;
use stopscan_core::pipeline::rank_segments;
use stopscan_core::{Error, Result};

/// FeatureCollection with one LineString per segment, in segment order.
/// Rank 1 is the highest score; ties go to the lower segment id.
pub fn emit_geojson(scores: &[f64], segments: &[RoadSegment]) -> Result<Value> {
    if scores.len() != segments.len() {
        return Err(Error::Contract(format!(
            "{} scores for {} segments",
            scores.len(),
            segments.len()
        )));
    }
    let mut rank = vec![0; scores.len()];
    for (r, i) in rank_segments(scores).into_iter().enumerate() {
        rank[i] = r + 1;
    }
    let features: Vec<Value> = segments
        .iter()
        .zip(scores)
        .zip(&rank)
        .map(|((s, &score), &rank)| {
            json!({
                "type": "Feature",
                "geometry": {
                    "type": "LineString",
                    "coordinates": [[s.start.lng, s.start.lat], [s.end.lng, s.end.lat]],
                },
                "properties": { "segment_id": s.id, "score": score, "rank": rank },
            })
        })
        .collect();
    Ok(json!({ "type": "FeatureCollection", "features": features }))
}
