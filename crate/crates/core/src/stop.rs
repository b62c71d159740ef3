//! Stop inference between consecutive low-frequency GPS samples.
//!
//! Between two samples the speed is assumed to follow a single linear dip:
//! decelerate from `v_i`, optionally rest, accelerate to `v_next`. Two
//! detectors are provided. [`DetectorMode::Literal`] follows the published
//! decision procedure exactly, including its degenerate speeding-up bound,
//! which is identically zero. [`DetectorMode::Physical`] replaces both dwell
//! bounds with `T - 2d / min(v_i, v_next)`, which is a sound lower bound on
//! the rest time of any single-dip profile.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::haversine;
use crate::grid::StopEvent;
use crate::ingest::Journey;

/// Speeds in m/s, distance in meters, interval in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityPair {
    pub v_i: f64,
    pub v_next: f64,
    pub d: f64,
    pub interval: f64,
}

impl VelocityPair {
    pub fn new(v_i: f64, v_next: f64, d: f64, interval: f64) -> Result<Self> {
        let ok = v_i >= 0.0 && v_next >= 0.0 && d >= 0.0 && interval > 0.0;
        let finite = v_i.is_finite() && v_next.is_finite() && d.is_finite() && interval.is_finite();
        if !(ok && finite) {
            return Err(Error::Contract(format!(
                "invalid velocity pair v_i={v_i} v_next={v_next} d={d} T={interval}"
            )));
        }
        Ok(Self { v_i, v_next, d, interval })
    }

    /// The nominal 30 s sampling interval.
    pub fn nominal(v_i: f64, v_next: f64, d: f64) -> Result<Self> {
        Self::new(v_i, v_next, d, 30.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorMode {
    #[default]
    Literal,
    Physical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopCase {
    Case1Touch,
    Case2Slowing,
    Case2Speeding,
    None,
}

impl StopCase {
    pub fn as_str(self) -> &'static str {
        match self {
            StopCase::Case1Touch => "case1_touch",
            StopCase::Case2Slowing => "case2_slowing",
            StopCase::Case2Speeding => "case2_speeding",
            StopCase::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopVerdict {
    pub stopped: bool,
    pub dwell: f64,
    pub case: StopCase,
}

impl StopVerdict {
    fn no() -> Self {
        Self {
            stopped: false,
            dwell: 0.0,
            case: StopCase::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub mode: DetectorMode,
    /// Additionally require the touch time to fall inside the interval for
    /// the momentary-touch case.
    pub strict_feasibility: bool,
}

/// Time at which a zero-minimum linear profile touches zero speed:
/// `(2d - T v_next) / (v_i - v_next)`. Not range-checked.
pub fn touch_time(pair: &VelocityPair) -> Result<f64> {
    let denom = pair.v_i - pair.v_next;
    if denom == 0.0 {
        return Err(Error::DegenerateProfile(pair.v_i));
    }
    Ok((2.0 * pair.d - pair.interval * pair.v_next) / denom)
}

pub fn case1_holds(pair: &VelocityPair, strict: bool) -> Result<bool> {
    let t = touch_time(pair)?;
    Ok(t > 0.0 && (!strict || t <= pair.interval))
}

/// `T - 2d / v_i`, the published slowing-down bound.
pub fn bound_slowing(pair: &VelocityPair) -> Result<f64> {
    if pair.v_i == 0.0 {
        return Err(Error::ZeroSpeedPair);
    }
    Ok(pair.interval - 2.0 * pair.d / pair.v_i)
}

/// The published speeding-up bound with the unobserved minimum speed dropped.
/// Evaluated term by term as written; it telescopes to zero for every valid
/// input and must stay that way.
pub fn bound_speeding_literal(pair: &VelocityPair) -> f64 {
    let VelocityPair { v_i, v_next, d, interval } = *pair;
    (v_i / v_next - 1.0) * (2.0 * d - interval * v_next) / (v_i - v_next) + interval - 2.0 * d / v_next
}

/// `T - 2d / v_min` with `v_min` the smallest strictly positive endpoint speed.
pub fn bound_physical(pair: &VelocityPair) -> Result<f64> {
    let v_min = [pair.v_i, pair.v_next]
        .into_iter()
        .filter(|&v| v > 0.0)
        .min_by(f64::total_cmp);
    match v_min {
        Some(v) => Ok(pair.interval - 2.0 * pair.d / v),
        None if pair.d == 0.0 => Ok(pair.interval),
        None => Err(Error::MotionWithoutSpeed(pair.d)),
    }
}

fn stationary(pair: &VelocityPair) -> Result<StopVerdict> {
    if pair.d == 0.0 {
        Ok(StopVerdict {
            stopped: true,
            dwell: pair.interval,
            case: StopCase::Case2Slowing,
        })
    } else {
        Err(Error::MotionWithoutSpeed(pair.d))
    }
}

pub fn detect_stop(pair: &VelocityPair, config: &DetectorConfig) -> Result<StopVerdict> {
    let equal = pair.v_i == pair.v_next;
    match config.mode {
        DetectorMode::Literal => {
            if !equal && case1_holds(pair, config.strict_feasibility)? {
                return Ok(StopVerdict {
                    stopped: true,
                    dwell: 0.0,
                    case: StopCase::Case1Touch,
                });
            }
            let (bound, case) = if pair.v_next > pair.v_i {
                (bound_speeding_literal(pair), StopCase::Case2Speeding)
            } else if pair.v_i == 0.0 {
                return stationary(pair);
            } else {
                (bound_slowing(pair)?, StopCase::Case2Slowing)
            };
            if bound > 0.0 {
                Ok(StopVerdict {
                    stopped: true,
                    dwell: bound.min(pair.interval),
                    case,
                })
            } else {
                Ok(StopVerdict::no())
            }
        }
        DetectorMode::Physical => {
            if !equal {
                let t = touch_time(pair)?;
                if t > 0.0 && t <= pair.interval {
                    return Ok(StopVerdict {
                        stopped: true,
                        dwell: 0.0,
                        case: StopCase::Case1Touch,
                    });
                }
            }
            let bound = bound_physical(pair)?;
            if bound > 0.0 {
                let case = if pair.v_next > pair.v_i {
                    StopCase::Case2Speeding
                } else {
                    StopCase::Case2Slowing
                };
                Ok(StopVerdict {
                    stopped: true,
                    dwell: bound.clamp(0.0, pair.interval),
                    case,
                })
            } else {
                Ok(StopVerdict::no())
            }
        }
    }
}

/// Every intermediate quantity of the detector for one pair, for debugging.
#[derive(Debug, Clone, Serialize)]
pub struct PairDiagnostics {
    pub v_i: f64,
    pub v_next: f64,
    pub d: f64,
    pub interval: f64,
    pub touch_time: Option<f64>,
    pub case1_literal: Option<bool>,
    pub case1_strict: Option<bool>,
    pub bound_slowing: Option<f64>,
    pub bound_speeding_literal: Option<f64>,
    pub bound_physical: Option<f64>,
    pub verdict: Option<StopVerdict>,
    pub error: Option<String>,
}

pub fn diagnose(pair: &VelocityPair, config: &DetectorConfig) -> PairDiagnostics {
    let verdict = detect_stop(pair, config);
    PairDiagnostics {
        v_i: pair.v_i,
        v_next: pair.v_next,
        d: pair.d,
        interval: pair.interval,
        touch_time: touch_time(pair).ok(),
        case1_literal: case1_holds(pair, false).ok(),
        case1_strict: case1_holds(pair, true).ok(),
        bound_slowing: bound_slowing(pair).ok(),
        bound_speeding_literal: (pair.v_next > 0.0).then(|| bound_speeding_literal(pair)),
        bound_physical: bound_physical(pair).ok(),
        error: verdict.as_ref().err().map(ToString::to_string),
        verdict: verdict.ok(),
    }
}

/// Which consecutive pairs of a journey are eligible for stop inference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairFilter {
    pub min_interval_s: f64,
    pub max_interval_s: f64,
    /// Pairs whose straight-line average speed exceeds this are GPS glitches.
    pub max_avg_speed_ms: f64,
}

impl Default for PairFilter {
    fn default() -> Self {
        Self {
            min_interval_s: 15.0,
            max_interval_s: 120.0,
            max_avg_speed_ms: 120.0 / 3.6,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionCounts {
    pub pairs: usize,
    pub skipped_interval: usize,
    pub skipped_glitch: usize,
    pub skipped_motionless: usize,
    pub stops: usize,
    pub touches: usize,
}

/// Runs the detector over every eligible pair of every journey. Stopped pairs
/// become events located at the pair's first point; momentary touches are
/// kept with zero dwell and filtered at matrix assembly.
pub fn extract_stop_events(
    journeys: &[Journey],
    config: &DetectorConfig,
    filter: &PairFilter,
) -> (Vec<StopEvent>, DetectionCounts) {
    let mut events = Vec::new();
    let mut counts = DetectionCounts::default();
    for j in journeys {
        for w in j.points.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            counts.pairs += 1;
            let interval = b.t - a.t;
            if interval < filter.min_interval_s || interval > filter.max_interval_s {
                counts.skipped_interval += 1;
                continue;
            }
            let d = haversine(a.pos, b.pos);
            if d / interval > filter.max_avg_speed_ms {
                counts.skipped_glitch += 1;
                continue;
            }
            let verdict = VelocityPair::new(a.v, b.v, d, interval).and_then(|p| detect_stop(&p, config));
            match verdict {
                Ok(v) if v.stopped => {
                    if v.case == StopCase::Case1Touch {
                        counts.touches += 1;
                    } else {
                        counts.stops += 1;
                    }
                    events.push(StopEvent {
                        coach_id: j.coach_id.clone(),
                        day: j.day,
                        t: a.t,
                        position: a.pos,
                        dwell: v.dwell,
                        case: v.case,
                    });
                }
                Ok(_) => {}
                Err(_) => counts.skipped_motionless += 1,
            }
        }
    }
    (events, counts)
}

/// Stop events from zero instantaneous speed alone: each eligible pair whose
/// first point reports speed 0 contributes its whole interval.
pub fn zero_speed_events(journeys: &[Journey], filter: &PairFilter) -> Vec<StopEvent> {
    let mut events = Vec::new();
    for j in journeys {
        for w in j.points.windows(2) {
            let interval = w[1].t - w[0].t;
            if w[0].v == 0.0 && interval >= filter.min_interval_s && interval <= filter.max_interval_s {
                events.push(StopEvent {
                    coach_id: j.coach_id.clone(),
                    day: j.day,
                    t: w[0].t,
                    position: w[0].pos,
                    dwell: interval,
                    case: StopCase::None,
                });
            }
        }
    }
    events
}
