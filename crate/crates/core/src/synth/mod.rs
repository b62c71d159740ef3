//! Labelled synthetic data: 1 Hz coach trajectories with injected stops, and
//! planted low-rank plus sparse matrices.

mod planted;

pub use planted::{plant_matrix, PlantConfig, PlantedMatrix, Spike};

use std::io::Write;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{LngLat, LocalFrame};
use crate::grid::RoutePolyline;
use crate::ingest::{EngineState, GpsPoint, KMH_PER_MS};

/// Speed below which a 1 Hz sample counts as stationary.
pub const STOPPED_SPEED_MS: f64 = 0.1;
/// Upper bound on the magnitude of simulated acceleration.
pub const MAX_ACCEL_MS2: f64 = 1.5;
/// Stop sites closer than this cannot be simulated as separate stops.
pub const MIN_STOP_SPACING_M: f64 = 10.0;

/// Integer-second dwell drawn uniformly from `[min_s, max_s]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DwellRange {
    pub min_s: u32,
    pub max_s: u32,
}

impl DwellRange {
    pub const fn new(min_s: u32, max_s: u32) -> Self {
        Self { min_s, max_s }
    }
}

/// A place where a coach may stop, with the chance it does so on a journey.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopSite {
    pub position_m: f64,
    pub dwell: DwellRange,
    pub probability: f64,
}

/// Cruise speed from `from_m` onward, until the next band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedBand {
    pub from_m: f64,
    pub speed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteSpec {
    pub vertices: Vec<LngLat>,
    pub bands: Vec<SpeedBand>,
    #[serde(default)]
    pub stations: Vec<StopSite>,
    #[serde(default)]
    pub signals: Vec<StopSite>,
    #[serde(default = "default_accel")]
    pub accel_ms2: f64,
}

fn default_accel() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectionPlan {
    pub injections: Vec<StopSite>,
    #[serde(default)]
    pub seed: u64,
}

/// How journeys map onto coaches and days.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub n_coaches: usize,
    /// Epoch seconds of local midnight on the first day.
    pub first_day_epoch: f64,
    /// Seconds after local midnight at which the first coach departs.
    pub departure_s: f64,
    /// Departure offset between consecutive coaches on one day.
    pub headway_s: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            n_coaches: 4,
            // 2017-01-02 00:00 at UTC+8
            first_day_epoch: 1_483_286_400.0,
            departure_s: 8.0 * 3600.0,
            headway_s: 600.0,
        }
    }
}

impl Schedule {
    pub fn coach_id(&self, journey: usize) -> String {
        format!("C{:02}", journey % self.n_coaches + 1)
    }

    pub fn start_epoch(&self, journey: usize) -> f64 {
        let day = (journey / self.n_coaches) as f64;
        let slot = (journey % self.n_coaches) as f64;
        self.first_day_epoch + day * 86_400.0 + self.departure_s + slot * self.headway_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopKind {
    Station,
    Signal,
    Injected,
}

/// A ground-truth rest, in seconds relative to the trajectory start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopInterval {
    pub start: f64,
    pub end: f64,
    pub position_m: f64,
    pub kind: StopKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FineSample {
    pub t: f64,
    pub s: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FineTrajectory {
    pub coach_id: String,
    pub start_epoch: f64,
    /// One sample per second starting at `t = 0`.
    pub samples: Vec<FineSample>,
    pub stops: Vec<StopInterval>,
}

impl FineTrajectory {
    pub fn duration(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t)
    }
}

struct Site {
    position_m: f64,
    dwell: DwellRange,
    probability: f64,
    kind: StopKind,
}

fn check_site(site: &StopSite, length: f64, kind: StopKind) -> Result<()> {
    let p = site.position_m;
    if !(p > 0.0 && p < length) {
        return Err(Error::Generation(format!("{kind:?} stop at {p} m is not on the route (0, {length})")));
    }
    if !(0.0..=1.0).contains(&site.probability) {
        return Err(Error::Generation(format!("stop probability {} outside [0, 1]", site.probability)));
    }
    if site.dwell.min_s > site.dwell.max_s {
        return Err(Error::Generation(format!("dwell range {:?} is empty", site.dwell)));
    }
    Ok(())
}

fn collect_sites(route: &RouteSpec, plan: &InjectionPlan, length: f64) -> Result<Vec<Site>> {
    let groups = [
        (&route.stations, StopKind::Station),
        (&route.signals, StopKind::Signal),
        (&plan.injections, StopKind::Injected),
    ];
    let mut sites = Vec::new();
    for (list, kind) in groups {
        for s in list.iter() {
            check_site(s, length, kind)?;
            sites.push(Site { position_m: s.position_m, dwell: s.dwell, probability: s.probability, kind });
        }
    }
    sites.sort_by(|a, b| a.position_m.total_cmp(&b.position_m));
    for w in sites.windows(2) {
        if w[1].position_m - w[0].position_m < MIN_STOP_SPACING_M {
            return Err(Error::Generation(format!(
                "stops at {} m and {} m overlap",
                w[0].position_m, w[1].position_m
            )));
        }
    }
    Ok(sites)
}

fn validate_route(route: &RouteSpec) -> Result<RoutePolyline> {
    let polyline = RoutePolyline::new(route.vertices.clone()).map_err(|e| Error::Generation(e.to_string()))?;
    if !(route.accel_ms2 > 0.0 && route.accel_ms2 <= MAX_ACCEL_MS2) {
        return Err(Error::Generation(format!(
            "acceleration {} m/s^2 outside (0, {MAX_ACCEL_MS2}]",
            route.accel_ms2
        )));
    }
    if route.bands.is_empty() || route.bands[0].from_m > 0.0 {
        return Err(Error::Generation("speed bands must start at 0 m".into()));
    }
    if route.bands.iter().any(|b| !(b.speed_ms > 0.0) || !b.speed_ms.is_finite()) {
        return Err(Error::Generation("cruise speeds must be positive".into()));
    }
    if route.bands.windows(2).any(|w| w[1].from_m <= w[0].from_m) {
        return Err(Error::Generation("speed bands must be strictly ordered".into()));
    }
    Ok(polyline)
}

impl RouteSpec {
    pub fn polyline(&self) -> Result<RoutePolyline> {
        validate_route(self)
    }

    fn cruise_at(&self, s: f64) -> f64 {
        let k = self.bands.partition_point(|b| b.from_m <= s).max(1);
        self.bands[k - 1].speed_ms
    }

    /// A gently bending route of about 32 km heading north-west, with three
    /// stations and a dozen signals.
    pub fn demo() -> Self {
        let origin = LngLat::new(116.30, 39.90);
        let frame = LocalFrame::new(origin);
        let (mut x, mut y) = (0.0, 0.0);
        let mut vertices = vec![origin];
        for k in 0..16 {
            let heading = 2.3 + 0.25 * (k as f64 * 0.7).sin();
            x += 2000.0 * heading.cos();
            y += 2000.0 * heading.sin();
            vertices.push(frame.from_xy(x, y));
        }
        let station = |p: f64| StopSite { position_m: p, dwell: DwellRange::new(90, 120), probability: 1.0 };
        let signal = |p: f64| StopSite { position_m: p, dwell: DwellRange::new(10, 40), probability: 0.4 };
        Self {
            vertices,
            bands: vec![
                SpeedBand { from_m: 0.0, speed_ms: 16.0 },
                SpeedBand { from_m: 4_000.0, speed_ms: 25.0 },
                SpeedBand { from_m: 28_000.0, speed_ms: 16.0 },
            ],
            stations: [8_050.0, 16_050.0, 24_050.0].map(station).to_vec(),
            signals: [
                1_130.0, 2_270.0, 3_410.0, 5_530.0, 10_690.0, 13_370.0, 18_910.0, 21_430.0, 26_590.0, 28_850.0,
                30_170.0, 31_230.0,
            ]
            .map(signal)
            .to_vec(),
            accel_ms2: 1.0,
        }
    }
}

impl InjectionPlan {
    /// `count` injections at the centres of distinct random segments of
    /// length `seg_len`, avoiding segments within `clearance_m` of any
    /// station or signal.
    pub fn random_segments(
        route: &RouteSpec,
        count: usize,
        seg_len: f64,
        clearance_m: f64,
        dwell: DwellRange,
        probability: f64,
        seed: u64,
    ) -> Result<Self> {
        let length = validate_route(route)?.length();
        let n_segments = (length / seg_len).floor() as usize;
        let others: Vec<f64> = route.stations.iter().chain(&route.signals).map(|s| s.position_m).collect();
        let eligible: Vec<usize> = (1..n_segments.saturating_sub(1))
            .filter(|&k| {
                let c = (k as f64 + 0.5) * seg_len;
                others.iter().all(|&p| (p - c).abs() >= clearance_m)
            })
            .collect();
        if eligible.len() < count {
            return Err(Error::Generation(format!(
                "only {} segments are clear of scheduled stops, {count} injections requested",
                eligible.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picks: Vec<usize> = sample(&mut rng, eligible.len(), count).into_iter().map(|i| eligible[i]).collect();
        picks.sort_unstable();
        Ok(Self {
            injections: picks
                .into_iter()
                .map(|k| StopSite { position_m: (k as f64 + 0.5) * seg_len, dwell, probability })
                .collect(),
            seed,
        })
    }
}

/// Integer speed knots for a rest-to-rest leg of `length` meters: a linear
/// ramp up over `n_a` seconds, `n_c` seconds of cruise, and a mirrored ramp
/// down. The leg covers exactly `v * (n_a + n_c)` meters.
fn leg_profile(length: f64, cruise: f64, accel: f64) -> Vec<f64> {
    let mut steps = (length / cruise).ceil().max(1.0) as usize;
    let (v, n_a) = loop {
        let v = length / steps as f64;
        let n_a = ((v / accel) - 1e-9).ceil().max(1.0) as usize;
        if n_a <= steps {
            break (v, n_a);
        }
        steps += 1;
    };
    let n_c = steps - n_a;
    let mut knots = Vec::with_capacity(2 * n_a + n_c);
    knots.extend((1..=n_a).map(|k| v * k as f64 / n_a as f64));
    knots.extend(std::iter::repeat_n(v, n_c));
    knots.extend((1..=n_a).map(|k| v * (n_a - k) as f64 / n_a as f64));
    knots
}

fn simulate_one(
    route: &RouteSpec,
    length: f64,
    sites: &[Site],
    coach_id: String,
    start_epoch: f64,
    rng: &mut ChaCha8Rng,
) -> FineTrajectory {
    let mut samples = vec![FineSample { t: 0.0, s: 0.0, v: 0.0 }];
    let mut stops = Vec::new();
    let mut from = 0.0;
    let chosen = sites.iter().filter(|site| rng.random::<f64>() < site.probability);
    let chosen: Vec<&Site> = chosen.collect();

    let mut targets: Vec<Option<&Site>> = chosen.into_iter().map(Some).collect();
    targets.push(None);
    for target in targets {
        let to = target.map_or(length, |s| s.position_m);
        let leg = to - from;
        let cruise = route.cruise_at(from + 0.5 * leg);
        for v in leg_profile(leg, cruise, route.accel_ms2) {
            let prev = *samples.last().unwrap();
            samples.push(FineSample { t: prev.t + 1.0, s: prev.s + 0.5 * (prev.v + v), v });
        }
        if let Some(site) = target {
            let dwell = rng.random_range(site.dwell.min_s..=site.dwell.max_s);
            let start = samples.last().unwrap().t;
            let s = samples.last().unwrap().s;
            for _ in 0..dwell {
                let t = samples.last().unwrap().t + 1.0;
                samples.push(FineSample { t, s, v: 0.0 });
            }
            stops.push(StopInterval { start, end: start + dwell as f64, position_m: site.position_m, kind: site.kind });
        }
        from = to;
    }
    FineTrajectory { coach_id, start_epoch, samples, stops }
}

fn journey_rng(seed: u64, journey: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(journey as u64);
    rng
}

/// Simulates `n_journeys` runs of the whole route. Journey `j` draws from its
/// own stream of the seeded generator, so output does not depend on how
/// journeys are scheduled across threads.
pub fn simulate_fine(
    route: &RouteSpec,
    plan: &InjectionPlan,
    schedule: &Schedule,
    n_journeys: usize,
    seed: u64,
) -> Result<Vec<FineTrajectory>> {
    let polyline = validate_route(route)?;
    if schedule.n_coaches == 0 {
        return Err(Error::Generation("schedule needs at least one coach".into()));
    }
    let length = polyline.length();
    let sites = collect_sites(route, plan, length)?;
    Ok((0..n_journeys)
        .map(|j| {
            let mut rng = journey_rng(seed, j);
            simulate_one(route, length, &sites, schedule.coach_id(j), schedule.start_epoch(j), &mut rng)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DownsampleConfig {
    pub period_s: u32,
    /// Standard deviation of isotropic coordinate noise, meters.
    pub noise_sigma_m: f64,
    pub seed: u64,
}

impl Default for DownsampleConfig {
    fn default() -> Self {
        Self { period_s: 30, noise_sigma_m: 0.0, seed: 0 }
    }
}

/// Samples the trajectory every `period_s` seconds from its start.
pub fn downsample(fine: &FineTrajectory, route: &RoutePolyline, cfg: &DownsampleConfig) -> Result<Vec<GpsPoint>> {
    if cfg.period_s == 0 {
        return Err(Error::Config("downsample period must be at least 1 s".into()));
    }
    let noise = if cfg.noise_sigma_m > 0.0 {
        Some(Normal::new(0.0, cfg.noise_sigma_m).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(fine
        .samples
        .iter()
        .step_by(cfg.period_s as usize)
        .map(|sample| {
            let mut pos = route.point_at(sample.s);
            if let Some(n) = &noise {
                let frame = LocalFrame::new(pos);
                pos = frame.from_xy(n.sample(&mut rng), n.sample(&mut rng));
            }
            GpsPoint {
                coach_id: fine.coach_id.clone(),
                t: fine.start_epoch + sample.t,
                pos,
                v: sample.v,
                of: EngineState::Start,
                decimals: 7,
            }
        })
        .collect())
}

/// Seconds inside `[t_a, t_b]` (relative to the trajectory start) spent below
/// the stopped-speed threshold, counting unit steps whose both ends are slow.
pub fn oracle_stop_duration(fine: &FineTrajectory, t_a: f64, t_b: f64) -> f64 {
    let first = t_a.max(0.0).ceil() as usize;
    let last = t_b.min(fine.duration()).floor() as usize;
    (first..last)
        .filter(|&k| fine.samples[k].v < STOPPED_SPEED_MS && fine.samples[k + 1].v < STOPPED_SPEED_MS)
        .count() as f64
}

/// Writes points as `coach_id,t,lng,lat,v,of` records with speed in km/h.
pub fn write_records<W: Write>(points: &[GpsPoint], mut out: W) -> Result<()> {
    writeln!(out, "coach_id,t,lng,lat,v,of")?;
    for p in points {
        writeln!(
            out,
            "{},{},{:.7},{:.7},{:.4},{}",
            p.coach_id,
            p.t,
            p.pos.lng,
            p.pos.lat,
            p.v * KMH_PER_MS,
            p.of.as_str()
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthStop {
    pub coach_id: String,
    pub start: f64,
    pub end: f64,
    pub kind: StopKind,
    pub position_m: f64,
    pub position: LngLat,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub stops: Vec<TruthStop>,
    pub injected_segment_ids: Vec<usize>,
    pub injected_spots: Vec<LngLat>,
    pub spikes: Vec<Spike>,
}

/// Ground truth for simulated trajectories, with injected positions mapped to
/// segment ids for slices of `seg_len` meters.
pub fn ground_truth(
    route: &RoutePolyline,
    plan: &InjectionPlan,
    trajectories: &[FineTrajectory],
    seg_len: f64,
) -> GroundTruth {
    let last_segment = ((route.length() / seg_len) - 1e-9).ceil().max(1.0) as usize - 1;
    let stops = trajectories
        .iter()
        .flat_map(|tr| {
            tr.stops.iter().map(|s| TruthStop {
                coach_id: tr.coach_id.clone(),
                start: tr.start_epoch + s.start,
                end: tr.start_epoch + s.end,
                kind: s.kind,
                position_m: s.position_m,
                position: route.point_at(s.position_m),
            })
        })
        .collect();
    let mut injected_segment_ids: Vec<usize> = plan
        .injections
        .iter()
        .map(|s| ((s.position_m / seg_len).floor() as usize).min(last_segment))
        .collect();
    injected_segment_ids.sort_unstable();
    injected_segment_ids.dedup();
    GroundTruth {
        stops,
        injected_segment_ids,
        injected_spots: plan.injections.iter().map(|s| route.point_at(s.position_m)).collect(),
        spikes: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight_route(stations: Vec<StopSite>) -> RouteSpec {
        let frame = LocalFrame::new(LngLat::new(116.0, 40.0));
        RouteSpec {
            vertices: vec![frame.from_xy(0.0, 0.0), frame.from_xy(0.0, 5_000.0)],
            bands: vec![SpeedBand { from_m: 0.0, speed_ms: 20.0 }],
            stations,
            signals: vec![],
            accel_ms2: 1.0,
        }
    }

    fn site(p: f64, lo: u32, hi: u32) -> StopSite {
        StopSite { position_m: p, dwell: DwellRange::new(lo, hi), probability: 1.0 }
    }

    #[test]
    fn leg_covers_exact_distance() {
        for (len, cruise, a) in [(1000.0, 20.0, 1.0), (7.0, 25.0, 1.5), (12345.6, 27.0, 0.8), (0.5, 10.0, 1.0)] {
            let knots = leg_profile(len, cruise, a);
            let mut prev = 0.0;
            let mut dist = 0.0;
            for &v in &knots {
                assert!((v - prev).abs() <= a + 1e-12);
                assert!(v <= cruise + 1e-12);
                dist += 0.5 * (prev + v);
                prev = v;
            }
            assert_eq!(*knots.last().unwrap(), 0.0);
            assert!((dist - len).abs() < 1e-9 * len.max(1.0));
        }
    }

    #[test]
    fn trajectory_invariants() {
        let route = RouteSpec::demo();
        let plan = InjectionPlan { injections: vec![site(6_100.0, 60, 120)], seed: 0 };
        let trs = simulate_fine(&route, &plan, &Schedule::default(), 3, 7).unwrap();
        let length = route.polyline().unwrap().length();
        for tr in &trs {
            let mut integrated = 0.0;
            for w in tr.samples.windows(2) {
                assert_eq!(w[1].t - w[0].t, 1.0);
                assert!(w[1].v >= 0.0 && w[1].s >= w[0].s);
                assert!((w[1].v - w[0].v).abs() <= MAX_ACCEL_MS2);
                integrated += 0.5 * (w[0].v + w[1].v);
                assert!((w[1].s - integrated).abs() < 1e-9 * integrated.max(1.0));
            }
            assert!((tr.samples.last().unwrap().s - length).abs() < 1e-6);
            let kinds: Vec<StopKind> = tr.stops.iter().map(|s| s.kind).collect();
            assert_eq!(kinds.iter().filter(|k| **k == StopKind::Station).count(), 3);
            assert!(kinds.contains(&StopKind::Injected));
            for stop in &tr.stops {
                assert_eq!(oracle_stop_duration(tr, stop.start, stop.end), stop.end - stop.start);
            }
        }
    }

    #[test]
    fn zero_injections_only_scheduled_stops() {
        let trs = simulate_fine(&RouteSpec::demo(), &InjectionPlan::default(), &Schedule::default(), 4, 1).unwrap();
        assert!(trs.iter().flat_map(|t| &t.stops).all(|s| s.kind != StopKind::Injected));
    }

    #[test]
    fn deterministic_for_seed() {
        let route = RouteSpec::demo();
        let a = simulate_fine(&route, &InjectionPlan::default(), &Schedule::default(), 3, 11).unwrap();
        let b = simulate_fine(&route, &InjectionPlan::default(), &Schedule::default(), 3, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn overlapping_stops_rejected() {
        let route = straight_route(vec![site(1000.0, 10, 20), site(1005.0, 10, 20)]);
        let err = simulate_fine(&route, &InjectionPlan::default(), &Schedule::default(), 1, 0).unwrap_err();
        assert!(matches!(err, Error::Generation(_)));
        let off = straight_route(vec![site(6000.0, 10, 20)]);
        assert!(simulate_fine(&off, &InjectionPlan::default(), &Schedule::default(), 1, 0).is_err());
        let mut steep = straight_route(vec![]);
        steep.accel_ms2 = 2.0;
        assert!(simulate_fine(&steep, &InjectionPlan::default(), &Schedule::default(), 1, 0).is_err());
    }

    fn fixed_trajectory(duration: usize, rest: (usize, usize)) -> FineTrajectory {
        let samples = (0..=duration)
            .map(|k| FineSample {
                t: k as f64,
                s: k as f64,
                v: if (rest.0..=rest.1).contains(&k) { 0.0 } else { 10.0 },
            })
            .collect();
        FineTrajectory { coach_id: "X".into(), start_epoch: 0.0, samples, stops: vec![] }
    }

    #[test]
    fn oracle_examples() {
        let tr = fixed_trajectory(300, (100, 120));
        assert_eq!(oracle_stop_duration(&tr, 100.0, 120.0), 20.0);
        assert_eq!(oracle_stop_duration(&tr, 0.0, 90.0), 0.0);
        assert_eq!(oracle_stop_duration(&tr, 110.0, 140.0), 10.0);
    }

    #[test]
    fn downsample_counts_and_identity() {
        let route = straight_route(vec![]);
        let poly = route.polyline().unwrap();
        let tr = FineTrajectory { start_epoch: 1000.0, ..fixed_trajectory(300, (100, 120)) };
        let pts = downsample(&tr, &poly, &DownsampleConfig::default()).unwrap();
        assert_eq!(pts.len(), 11);
        assert_eq!(pts.iter().map(|p| p.t).collect::<Vec<_>>(), (0..=10).map(|k| 1000.0 + 30.0 * k as f64).collect::<Vec<_>>());
        let every = downsample(&tr, &poly, &DownsampleConfig { period_s: 1, ..Default::default() }).unwrap();
        assert_eq!(every.len(), tr.samples.len());
        for (p, s) in every.iter().zip(&tr.samples) {
            assert_eq!(p.v, s.v);
            assert_eq!(p.pos, poly.point_at(s.s));
        }
        assert!(downsample(&tr, &poly, &DownsampleConfig { period_s: 0, ..Default::default() }).is_err());
    }

    #[test]
    fn noisy_downsample_stays_close() {
        let poly = straight_route(vec![]).polyline().unwrap();
        let tr = fixed_trajectory(300, (100, 120));
        let cfg = DownsampleConfig { period_s: 30, noise_sigma_m: 5.0, seed: 3 };
        let pts = downsample(&tr, &poly, &cfg).unwrap();
        let clean = downsample(&tr, &poly, &DownsampleConfig::default()).unwrap();
        for (a, b) in pts.iter().zip(&clean) {
            let d = crate::geo::haversine(a.pos, b.pos);
            assert!(d > 0.0 && d < 40.0);
        }
    }

    #[test]
    fn records_round_trip_through_ingest() {
        let poly = straight_route(vec![]).polyline().unwrap();
        let tr = FineTrajectory { coach_id: "C01".into(), start_epoch: 1_483_315_200.0, ..fixed_trajectory(300, (100, 120)) };
        let pts = downsample(&tr, &poly, &DownsampleConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_records(&pts, &mut buf).unwrap();
        let (records, errors) = crate::ingest::parse_records(&buf[..], &Default::default()).unwrap();
        assert!(errors.is_empty());
        assert_eq!(records.len(), pts.len());
        let (cleaned, report) = crate::ingest::clean(&records, &Default::default());
        assert_eq!(report.kept(), pts.len());
        for (a, b) in cleaned.iter().zip(&pts) {
            assert!(crate::geo::haversine(a.pos, b.pos) < 0.05);
            assert!((a.v - b.v).abs() < 1e-4);
        }
    }

    #[test]
    fn random_injections_avoid_scheduled_stops() {
        let route = RouteSpec::demo();
        for seed in 0..10 {
            let plan = InjectionPlan::random_segments(&route, 3, 200.0, 400.0, DwellRange::new(60, 180), 0.5, seed).unwrap();
            assert_eq!(plan.injections.len(), 3);
            let trs = simulate_fine(&route, &plan, &Schedule::default(), 2, seed).unwrap();
            let truth = ground_truth(&route.polyline().unwrap(), &plan, &trs, 200.0);
            assert_eq!(truth.injected_segment_ids.len(), 3);
        }
    }
}
