//! Spherical-earth helpers shared by the ingest, grid and synth modules.

use serde::{Deserialize, Serialize};

/// Mean earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// A WGS84 position in degrees, longitude first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LngLat {
    pub lng: f64,
    pub lat: f64,
}

impl LngLat {
    pub const fn new(lng: f64, lat: f64) -> Self {
        Self { lng, lat }
    }

    /// Linear interpolation in degree space.
    pub fn lerp(self, other: LngLat, frac: f64) -> LngLat {
        LngLat {
            lng: self.lng + (other.lng - self.lng) * frac,
            lat: self.lat + (other.lat - self.lat) * frac,
        }
    }
}

/// Great-circle distance in meters.
pub fn haversine(a: LngLat, b: LngLat) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = (b.lat - a.lat).to_radians();
    let dlambda = (b.lng - a.lng).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Equirectangular tangent-plane projection around an origin. Accurate to well
/// under a meter over the few-kilometer extents a single segment spans.
#[derive(Debug, Clone, Copy)]
pub struct LocalFrame {
    origin: LngLat,
    cos_lat: f64,
}

impl LocalFrame {
    pub fn new(origin: LngLat) -> Self {
        Self {
            origin,
            cos_lat: origin.lat.to_radians().cos(),
        }
    }

    /// Meters east/north of the origin.
    pub fn to_xy(&self, p: LngLat) -> (f64, f64) {
        let x = (p.lng - self.origin.lng).to_radians() * EARTH_RADIUS_M * self.cos_lat;
        let y = (p.lat - self.origin.lat).to_radians() * EARTH_RADIUS_M;
        (x, y)
    }

    pub fn from_xy(&self, x: f64, y: f64) -> LngLat {
        LngLat {
            lng: self.origin.lng + (x / (EARTH_RADIUS_M * self.cos_lat)).to_degrees(),
            lat: self.origin.lat + (y / EARTH_RADIUS_M).to_degrees(),
        }
    }
}

/// Projection of `p` onto the chord `a -> b`: returns the clamped fraction along
/// the chord and the distance from `p` to the projected point, both in the
/// local frame of `p`.
pub fn project_onto_chord(p: LngLat, a: LngLat, b: LngLat) -> (f64, f64) {
    let frame = LocalFrame::new(p);
    let (ax, ay) = frame.to_xy(a);
    let (bx, by) = frame.to_xy(b);
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let frac = if len2 > 0.0 {
        ((-ax * dx - ay * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (ax + frac * dx, ay + frac * dy);
    (frac, (qx * qx + qy * qy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn law_of_cosines(a: LngLat, b: LngLat) -> f64 {
        let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
        let dl = (b.lng - a.lng).to_radians();
        let c = p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos();
        EARTH_RADIUS_M * c.clamp(-1.0, 1.0).acos()
    }

    #[test]
    fn identity_is_zero() {
        let a = LngLat::new(116.321456, 39.901234);
        assert_eq!(haversine(a, a), 0.0);
    }

    #[test]
    fn thousandth_degree_on_equator() {
        let a = LngLat::new(0.0, 0.0);
        let b = LngLat::new(0.001, 0.0);
        // R * 0.001 deg in radians, also what the cosine-law oracle gives.
        let expected = 111.194_926_644_558_73;
        assert!((law_of_cosines(a, b) - expected).abs() < 1e-3);
        assert!((haversine(a, b) - expected).abs() < 0.01);
    }

    #[test]
    fn local_frame_round_trip() {
        let o = LngLat::new(116.3, 39.9);
        let f = LocalFrame::new(o);
        let p = LngLat::new(116.31, 39.91);
        let (x, y) = f.to_xy(p);
        let q = f.from_xy(x, y);
        assert!((q.lng - p.lng).abs() < 1e-12 && (q.lat - p.lat).abs() < 1e-12);
        assert!((x.hypot(y) - haversine(o, p)).abs() < 1.0);
    }

    #[test]
    fn chord_projection_clamps() {
        let a = LngLat::new(116.0, 40.0);
        let b = LngLat::new(116.01, 40.0);
        let (f, d) = project_onto_chord(a, a, b);
        assert_eq!(f, 0.0);
        assert!(d < 1e-9);
        let beyond = LngLat::new(116.02, 40.0);
        let (f, d) = project_onto_chord(beyond, a, b);
        assert_eq!(f, 1.0);
        assert!((d - haversine(b, beyond)).abs() < 0.5);
    }

    fn coord() -> impl Strategy<Value = LngLat> {
        (115.0f64..118.0, 39.0f64..41.5).prop_map(|(lng, lat)| LngLat::new(lng, lat))
    }

    proptest! {
        #[test]
        fn symmetric_and_non_negative(a in coord(), b in coord()) {
            let d = haversine(a, b);
            prop_assert!(d >= 0.0);
            prop_assert_eq!(d, haversine(b, a));
        }

        #[test]
        fn triangle_inequality(a in coord(), b in coord(), c in coord()) {
            let ab = haversine(a, b);
            let bc = haversine(b, c);
            let ac = haversine(a, c);
            prop_assert!(ac <= (ab + bc) * (1.0 + 1e-6) + 1e-9);
        }
    }
}
