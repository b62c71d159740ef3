//! End-to-end composition of the stages, from cleaned points to segment
//! scores, shared by the command line and the acceptance tests.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admm::{solve, DecompositionResult, SolverParams};
use crate::error::{Error, Result};
use crate::grid::{
    affinity_propagation, build_matrix, column_keys, contiguous_runs, merge_rows, partition_matrix, segment_route,
    ApParams, AssemblyConfig, AssemblyReport, ClusterPartition, DurationMatrix, RoadSegment, RoutePolyline, StopEvent,
};
use crate::ingest::{clean_points, group_by_coach, split_journeys, CleaningConfig, CleaningReport, GpsPoint, Journey};
use crate::scoring::{indicator_scores, BaselineMode, Indicator};
use crate::stop::{extract_stop_events, zero_speed_events, DetectionCounts, DetectorConfig, PairFilter};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    pub enabled: bool,
    /// Re-cut clusters into runs of consecutive segments.
    pub contiguous: bool,
    pub ap: ApParams,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self { enabled: false, contiguous: false, ap: ApParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineParams {
    pub segment_length_m: f64,
    pub cleaning: CleaningConfig,
    pub detector: DetectorConfig,
    pub pairs: PairFilter,
    pub assembly: AssemblyConfig,
    pub clustering: ClusteringConfig,
    pub solver: SolverParams,
    pub indicator: Indicator,
    pub k: usize,
    pub baseline: BaselineMode,
    pub parallel: bool,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            segment_length_m: 200.0,
            cleaning: CleaningConfig::default(),
            detector: DetectorConfig::default(),
            pairs: PairFilter::default(),
            assembly: AssemblyConfig::default(),
            clustering: ClusteringConfig::default(),
            solver: SolverParams::default(),
            indicator: Indicator::default(),
            k: 2,
            baseline: BaselineMode::default(),
            parallel: true,
        }
    }
}

/// Cleans, groups by coach and splits into journeys.
pub fn prepare_journeys(points: Vec<GpsPoint>, cleaning: &CleaningConfig) -> Result<(Vec<Journey>, CleaningReport)> {
    cleaning.validate()?;
    let (kept, report) = clean_points(points, cleaning);
    let mut journeys = Vec::new();
    for (_, pts) in group_by_coach(kept) {
        journeys.extend(split_journeys(&pts, cleaning.max_gap_s, cleaning.local_offset())?);
    }
    Ok((journeys, report))
}

/// Affinity propagation over segment midpoints, or one cluster when disabled
/// or when there are too few segments to cluster.
pub fn cluster_segments(segments: &[RoadSegment], cfg: &ClusteringConfig) -> Result<ClusterPartition> {
    if !cfg.enabled || segments.len() < 2 {
        return Ok(ClusterPartition::single(segments.len()));
    }
    let mids: Vec<_> = segments.iter().map(RoadSegment::midpoint).collect();
    let p = affinity_propagation(&mids, &cfg.ap)?;
    if !p.converged {
        log::warn!("affinity propagation did not converge in {} iterations", cfg.ap.max_iter);
    }
    Ok(if cfg.contiguous { contiguous_runs(&p) } else { p })
}

/// Per-cluster decomposition results, merged back into full-size matrices.
#[derive(Debug, Clone)]
pub struct PartitionedDecomposition {
    pub e: DurationMatrix,
    pub theta: DurationMatrix,
    pub mask: DurationMatrix,
    pub w: DurationMatrix,
    /// One result per cluster, in cluster order, with matrices dropped.
    pub clusters: Vec<ClusterSolve>,
}

#[derive(Debug, Clone)]
pub struct ClusterSolve {
    pub cluster: usize,
    pub rows: usize,
    pub result: DecompositionResult,
}

impl PartitionedDecomposition {
    pub fn converged(&self) -> bool {
        self.clusters.iter().all(|c| c.result.converged)
    }
}

/// Solves each cluster's sub-matrix independently and merges the pieces in
/// the original row order. The result does not depend on `parallel`.
pub fn solve_partitioned(
    r: &DurationMatrix,
    partition: &ClusterPartition,
    params: &SolverParams,
    parallel: bool,
) -> Result<PartitionedDecomposition> {
    let parts = partition_matrix(r, partition)?;
    let run = |(c, part): (usize, &DurationMatrix)| {
        solve(&part.values, params)
            .map_err(|e| Error::Numeric(format!("cluster {c}: {e}")))
            .map(|res| (c, res))
    };
    let solved: Vec<(usize, DecompositionResult)> = if parallel {
        parts.par_iter().enumerate().map(run).collect::<Result<_>>()?
    } else {
        parts.iter().enumerate().map(run).collect::<Result<_>>()?
    };
    let pick = |f: fn(&DecompositionResult) -> &DMatrix<f64>| -> Result<DurationMatrix> {
        let pieces: Vec<DurationMatrix> = parts
            .iter()
            .zip(&solved)
            .map(|(p, (_, res))| DurationMatrix {
                values: f(res).clone(),
                row_ids: p.row_ids.clone(),
                col_keys: p.col_keys.clone(),
            })
            .collect();
        merge_rows(&pieces, &r.row_ids)
    };
    Ok(PartitionedDecomposition {
        e: pick(|d| &d.e)?,
        theta: pick(|d| &d.theta)?,
        mask: pick(|d| &d.mask)?,
        w: pick(|d| &d.w)?,
        clusters: solved
            .into_iter()
            .zip(&parts)
            .map(|((cluster, result), p)| ClusterSolve { cluster, rows: p.row_ids.len(), result })
            .collect(),
    })
}

/// Matrix whose rows are scored under a baseline, with the decomposition
/// when one was run.
#[derive(Debug, Clone)]
pub struct BaselineOutput {
    pub scoring: DurationMatrix,
    pub decomposition: Option<PartitionedDecomposition>,
}

pub fn decompose_baseline(
    mode: BaselineMode,
    r: &DurationMatrix,
    r_uis: &DurationMatrix,
    partition: &ClusterPartition,
    solver: &SolverParams,
    parallel: bool,
) -> Result<BaselineOutput> {
    let (input, params) = match mode {
        BaselineMode::Wsa => return Ok(BaselineOutput { scoring: r.clone(), decomposition: None }),
        BaselineMode::Full => (r, *solver),
        BaselineMode::Wst => (r, SolverParams { beta: 0.0, ..*solver }),
        BaselineMode::Uis => (r_uis, *solver),
    };
    let d = solve_partitioned(input, partition, &params, parallel)?;
    Ok(BaselineOutput { scoring: d.e.clone(), decomposition: Some(d) })
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub journeys: usize,
    pub cleaning: CleaningReport,
    pub detection: DetectionCounts,
    pub assembly: AssemblyReport,
    pub segments: Vec<RoadSegment>,
    pub events: Vec<StopEvent>,
    pub r: DurationMatrix,
    pub r_uis: DurationMatrix,
    pub partition: ClusterPartition,
    pub baseline: BaselineOutput,
    pub scores: Vec<f64>,
}

/// Runs every stage on raw points along `route`.
pub fn run_pipeline(points: Vec<GpsPoint>, route: &RoutePolyline, params: &PipelineParams) -> Result<PipelineOutput> {
    let (journeys, cleaning) = prepare_journeys(points, &params.cleaning)?;
    let segments = segment_route(route, params.segment_length_m)?;
    let columns = column_keys(&journeys);
    let (events, detection) = extract_stop_events(&journeys, &params.detector, &params.pairs);
    let (r, assembly) = build_matrix(&events, &segments, params.segment_length_m, &columns, &params.assembly)?;
    let uis_events = zero_speed_events(&journeys, &params.pairs);
    let (r_uis, _) = build_matrix(&uis_events, &segments, params.segment_length_m, &columns, &params.assembly)?;
    let partition = cluster_segments(&segments, &params.clustering)?;
    let baseline = decompose_baseline(params.baseline, &r, &r_uis, &partition, &params.solver, params.parallel)?;
    let scores = indicator_scores(&baseline.scoring.values, params.indicator, params.k)?;
    Ok(PipelineOutput {
        journeys: journeys.len(),
        cleaning,
        detection,
        assembly,
        segments,
        events,
        r,
        r_uis,
        partition,
        baseline,
        scores,
    })
}

/// Segment indices ordered by descending score, ties by ascending index.
pub fn rank_segments(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{LngLat, LocalFrame};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(seed: u64) -> DurationMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = DMatrix::from_fn(30, 6, |_, _| if rng.random_bool(0.3) { rng.random_range(0.0..100.0) } else { 0.0 });
        let day = chrono::NaiveDate::from_ymd_opt(2017, 1, 2).unwrap();
        let keys = (0..6).map(|c| crate::grid::ColumnKey { coach_id: format!("C{c}"), day }).collect();
        DurationMatrix::new(values, (0..30).collect(), keys).unwrap()
    }

    #[test]
    fn partitioned_solve_matches_per_cluster_serial_solve() {
        let r = random_matrix(1);
        let assignment: Vec<usize> = (0..30).map(|i| (i * 7) % 4).collect();
        let partition = ClusterPartition::from_assignment(assignment.clone(), vec![0, 1, 2, 3], true);
        let params = SolverParams::default();
        let par = solve_partitioned(&r, &partition, &params, true).unwrap();
        let ser = solve_partitioned(&r, &partition, &params, false).unwrap();
        assert_eq!(par.e.values, ser.e.values);
        for c in 0..4 {
            let rows = partition.members(c);
            let direct = solve(&r.values.select_rows(rows.iter()), &params).unwrap();
            for (k, &i) in rows.iter().enumerate() {
                assert_eq!(par.e.values.row(i), direct.e.row(k));
            }
        }
    }

    #[test]
    fn single_cluster_equals_plain_solve() {
        let r = random_matrix(2);
        let params = SolverParams::default();
        let d = solve_partitioned(&r, &ClusterPartition::single(30), &params, true).unwrap();
        assert_eq!(d.e.values, solve(&r.values, &params).unwrap().e);
    }

    #[test]
    fn wsa_scores_the_raw_matrix() {
        let r = random_matrix(3);
        let out = decompose_baseline(BaselineMode::Wsa, &r, &r, &ClusterPartition::single(30), &SolverParams::default(), false)
            .unwrap();
        assert_eq!(out.scoring, r);
        assert!(out.decomposition.is_none());
    }

    #[test]
    fn ranking_breaks_ties_by_index() {
        assert_eq!(rank_segments(&[1.0, 3.0, 3.0, 0.0]), vec![1, 2, 0, 3]);
    }

    #[test]
    fn clustering_disabled_gives_one_cluster() {
        let frame = LocalFrame::new(LngLat::new(116.0, 40.0));
        let route = RoutePolyline::new(vec![frame.from_xy(0.0, 0.0), frame.from_xy(0.0, 2000.0)]).unwrap();
        let segs = segment_route(&route, 200.0).unwrap();
        let p = cluster_segments(&segs, &ClusteringConfig::default()).unwrap();
        assert_eq!(p.cluster_count(), 1);
        let p = cluster_segments(&segs, &ClusteringConfig { enabled: true, ..Default::default() }).unwrap();
        assert_eq!(p.assignment.len(), 10);
    }
}
