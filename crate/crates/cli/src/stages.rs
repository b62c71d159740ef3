use std::fmt;
use std::fs::File;
use std::io::{BufReader, Cursor};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use stopscan_core::geo::LngLat;
use stopscan_core::grid::{
    build_matrix, column_keys, segment_route, AssemblyReport, ColumnKey, DurationMatrix, RoadSegment, RoutePolyline,
    StopEvent,
};
use stopscan_core::ingest::{
    clean_points, group_by_coach, parse_records, split_journeys, CleaningReport, FormatDescriptor, GpsPoint, Journey,
    KMH_PER_MS,
};
use stopscan_core::pipeline::{cluster_segments, decompose_baseline};
use stopscan_core::scoring::{ast, evaluate, label_segments, mst, tat, BaselineMode, Indicator, MetricReport};
use stopscan_core::stop::{extract_stop_events, zero_speed_events, DetectionCounts, DetectorMode, StopCase};
use stopscan_core::synth::{downsample, ground_truth, simulate_fine, write_records, DownsampleConfig, GroundTruth, InjectionPlan, RouteSpec};

use crate::artifacts::{write_file, RunDir};
use crate::geojson::emit_geojson;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Synth,
    Ingest,
    Detect,
    Matrix,
    Solve,
    Score,
    Eval,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Ingest => "ingest",
            Stage::Detect => "detect",
            Stage::Matrix => "matrix",
            Stage::Solve => "solve",
            Stage::Score => "score",
            Stage::Eval => "eval",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const POINTS: &str = "points.csv";
pub const CLEANING_REPORT: &str = "cleaning_report.json";
pub const COLUMNS: &str = "columns.txt";
pub const EVENTS: &str = "events.csv";
pub const EVENTS_UIS: &str = "events_uis.csv";
pub const DETECTION: &str = "detection.json";
pub const SEGMENTS: &str = "segments.csv";
pub const MATRIX: &str = "matrix.csv";
pub const MATRIX_UIS: &str = "matrix_uis.csv";
pub const ASSEMBLY: &str = "assembly.json";
pub const SCORING_MATRIX: &str = "scoring_matrix.csv";
pub const THETA: &str = "theta.csv";
pub const MASK: &str = "mask.csv";
pub const TRACE: &str = "trace.csv";
pub const PARTITION: &str = "partition.json";
pub const SOLVE: &str = "solve.json";
pub const SCORES: &str = "scores.csv";
pub const GEOJSON: &str = "scores.geojson";
pub const METRICS: &str = "metrics.json";
pub const SWEEP: &str = "sweep.csv";
pub const TRUTH: &str = "truth.json";

/// Runs one stage, tagging any failure with the stage name.
pub fn run_stage<T>(stage: Stage, f: impl FnOnce() -> Result<T>) -> Result<T> {
    log::info!("stage {stage}");
    f().with_context(|| format!("stage {stage} failed"))
}

fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| anyhow!("{e}"))?)?)
}

fn csv_rows(text: &str, header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let found: Vec<&str> = r.headers()?.iter().collect();
    if found != header {
        bail!("expected columns {header:?}, found {found:?}");
    }
    Ok(r.records().collect::<Result<_, _>>()?)
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T> {
    let s = rec.get(i).ok_or_else(|| anyhow!("missing field {i}"))?;
    s.parse().map_err(|_| anyhow!("bad field {s:?} at line {}", rec.position().map_or(0, |p| p.line())))
}

fn read_route(path: &Path) -> Result<RoutePolyline> {
    let f = File::open(path).with_context(|| format!("opening route {}", path.display()))?;
    Ok(RoutePolyline::read(BufReader::new(f))?)
}

fn route_segments(run: &RunDir) -> Result<Vec<RoadSegment>> {
    let route = read_route(&run.config.paths.route)?;
    Ok(segment_route(&route, run.config.pipeline.segment_length_m)?)
}

fn read_matrix(run: &RunDir, name: &str) -> Result<DurationMatrix> {
    Ok(DurationMatrix::read_csv(Cursor::new(run.read_text(name)?)).with_context(|| format!("parsing {name}"))?)
}

fn matrix_text(m: &DurationMatrix) -> Result<String> {
    let mut buf = Vec::new();
    m.write_csv(&mut buf)?;
    Ok(String::from_utf8(buf)?)
}

// ---- synth

#[derive(Debug, Clone, Serialize)]
pub struct SynthSummary {
    pub journeys: usize,
    pub points: usize,
    pub injected_segment_ids: Vec<usize>,
}

/// Writes a simulated GPS feed, the demo route and its ground truth to the
/// configured input paths.
pub fn synth(run: &RunDir) -> Result<SynthSummary> {
    let cfg = &run.config;
    let s = &cfg.synth;
    let seg_len = cfg.pipeline.segment_length_m;
    let spec = RouteSpec::demo();
    let plan = InjectionPlan::random_segments(
        &spec,
        s.injections,
        seg_len,
        s.clearance_m,
        s.injection_dwell,
        s.injection_probability,
        cfg.seed,
    )?;
    let route = spec.polyline()?;
    let trajectories = simulate_fine(&spec, &plan, &s.schedule, s.journeys, cfg.seed)?;
    let down = DownsampleConfig { period_s: s.period_s, noise_sigma_m: s.noise_sigma_m, seed: cfg.seed };
    let mut points = Vec::new();
    for tr in &trajectories {
        points.extend(downsample(tr, &route, &down)?);
    }
    let mut gps = Vec::new();
    write_records(&points, &mut gps)?;
    write_file(&cfg.paths.gps, &gps)?;
    write_file(&cfg.paths.route, route.write().as_bytes())?;
    let truth = ground_truth(&route, &plan, &trajectories, seg_len);
    let summary = SynthSummary {
        journeys: trajectories.len(),
        points: points.len(),
        injected_segment_ids: truth.injected_segment_ids.clone(),
    };
    match &cfg.paths.truth {
        Some(p) => {
            let stamped = crate::artifacts::Stamped { config_hash: run.hash.clone(), seed: cfg.seed, body: &truth };
            write_file(p, format!("{}\n", serde_json::to_string_pretty(&stamped)?).as_bytes())?;
        }
        None => run.write_json(TRUTH, &truth)?,
    }
    run.record(Stage::Synth.name(), &[TRUTH])?;
    Ok(summary)
}

// ---- ingest

#[derive(Debug, Clone, Serialize)]
pub struct IngestReport {
    pub lines_rejected: usize,
    pub parse_errors: Vec<String>,
    pub cleaning: CleaningReport,
    pub kept: usize,
}

/// Up to this many parse errors are listed in the report.
const MAX_LISTED_ERRORS: usize = 50;

fn write_points(points: &[GpsPoint]) -> String {
    let mut out = String::from("coach_id,t,lng,lat,v,of\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.coach_id,
            p.t,
            p.pos.lng,
            p.pos.lat,
            p.v * KMH_PER_MS,
            p.of.as_str()
        ));
    }
    out
}

pub fn ingest(run: &RunDir) -> Result<IngestReport> {
    let cfg = &run.config;
    let fmt = cfg.input.descriptor()?;
    let path = &cfg.paths.gps;
    let f = File::open(path).with_context(|| format!("opening GPS input {}", path.display()))?;
    let (records, errors) = parse_records(BufReader::new(f), &fmt)?;
    let points: Vec<GpsPoint> = records.iter().map(GpsPoint::from).collect();
    let (kept, cleaning) = clean_points(points, &cfg.pipeline.cleaning);
    let kept: Vec<GpsPoint> = group_by_coach(kept).into_values().flatten().collect();
    run.write_text(POINTS, &write_points(&kept))?;
    let report = IngestReport {
        lines_rejected: errors.len(),
        parse_errors: errors
            .iter()
            .take(MAX_LISTED_ERRORS)
            .map(|e| format!("line {}: {}", e.line, e.reason))
            .collect(),
        cleaning,
        kept: kept.len(),
    };
    run.write_json(CLEANING_REPORT, &report)?;
    run.record(Stage::Ingest.name(), &[POINTS, CLEANING_REPORT])?;
    Ok(report)
}

// ---- detect

#[derive(Debug, Clone, Serialize)]
pub struct DetectReport {
    pub mode: DetectorMode,
    pub journeys: usize,
    pub columns: usize,
    pub counts: DetectionCounts,
    pub uis_events: usize,
}

fn read_journeys(run: &RunDir) -> Result<Vec<Journey>> {
    let text = run.read_text(POINTS)?;
    let (records, errors) = parse_records(text.as_bytes(), &FormatDescriptor::default())?;
    if let Some(e) = errors.first() {
        bail!("{POINTS} line {}: {}", e.line, e.reason);
    }
    let cleaning = &run.config.pipeline.cleaning;
    let mut journeys = Vec::new();
    for (_, pts) in group_by_coach(records.iter().map(GpsPoint::from).collect()) {
        journeys.extend(split_journeys(&pts, cleaning.max_gap_s, cleaning.local_offset())?);
    }
    Ok(journeys)
}

const EVENT_HEADER: [&str; 7] = ["coach_id", "day", "t", "lng", "lat", "dwell", "case"];

fn events_text(events: &[StopEvent]) -> Result<String> {
    csv_text(
        &EVENT_HEADER,
        events.iter().map(|e| {
            vec![
                e.coach_id.clone(),
                e.day.format("%Y-%m-%d").to_string(),
                e.t.to_string(),
                e.position.lng.to_string(),
                e.position.lat.to_string(),
                e.dwell.to_string(),
                e.case.as_str().to_string(),
            ]
        }),
    )
}

fn parse_case(s: &str) -> Result<StopCase> {
    [StopCase::Case1Touch, StopCase::Case2Slowing, StopCase::Case2Speeding, StopCase::None]
        .into_iter()
        .find(|c| c.as_str() == s)
        .ok_or_else(|| anyhow!("unknown stop case {s:?}"))
}

fn read_events(run: &RunDir, name: &str) -> Result<Vec<StopEvent>> {
    let text = run.read_text(name)?;
    csv_rows(&text, &EVENT_HEADER)
        .and_then(|rows| {
            rows.iter()
                .map(|r| {
                    Ok(StopEvent {
                        coach_id: field(r, 0)?,
                        day: field(r, 1)?,
                        t: field(r, 2)?,
                        position: LngLat::new(field(r, 3)?, field(r, 4)?),
                        dwell: field(r, 5)?,
                        case: parse_case(r.get(6).unwrap_or_default())?,
                    })
                })
                .collect()
        })
        .with_context(|| format!("parsing {name}"))
}

fn read_columns(run: &RunDir) -> Result<Vec<ColumnKey>> {
    run.read_text(COLUMNS)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(l.trim().parse::<ColumnKey>()?))
        .collect()
}

pub fn detect(run: &RunDir) -> Result<DetectReport> {
    let p = &run.config.pipeline;
    let journeys = read_journeys(run)?;
    let columns = column_keys(&journeys);
    run.write_text(COLUMNS, &columns.iter().map(|c| format!("{c}\n")).collect::<String>())?;
    let (events, counts) = extract_stop_events(&journeys, &p.detector, &p.pairs);
    run.write_text(EVENTS, &events_text(&events)?)?;
    let uis = zero_speed_events(&journeys, &p.pairs);
    run.write_text(EVENTS_UIS, &events_text(&uis)?)?;
    let report = DetectReport {
        mode: p.detector.mode,
        journeys: journeys.len(),
        columns: columns.len(),
        counts,
        uis_events: uis.len(),
    };
    run.write_json(DETECTION, &report)?;
    run.record(Stage::Detect.name(), &[COLUMNS, EVENTS, EVENTS_UIS, DETECTION])?;
    Ok(report)
}

// ---- matrix

#[derive(Debug, Clone, Serialize)]
pub struct MatrixReport {
    pub rows: usize,
    pub cols: usize,
    pub total_seconds: f64,
    pub assembly: AssemblyReport,
    pub uis_assembly: AssemblyReport,
}

const SEGMENT_HEADER: [&str; 6] = ["segment_id", "start_lng", "start_lat", "end_lng", "end_lat", "length_m"];

pub fn matrix(run: &RunDir) -> Result<MatrixReport> {
    let p = &run.config.pipeline;
    let segments = route_segments(run)?;
    let columns = read_columns(run)?;
    let seg_text = csv_text(
        &SEGMENT_HEADER,
        segments.iter().map(|s| {
            vec![
                s.id.to_string(),
                s.start.lng.to_string(),
                s.start.lat.to_string(),
                s.end.lng.to_string(),
                s.end.lat.to_string(),
                s.length.to_string(),
            ]
        }),
    )?;
    run.write_text(SEGMENTS, &seg_text)?;
    let events = read_events(run, EVENTS)?;
    let (r, assembly) = build_matrix(&events, &segments, p.segment_length_m, &columns, &p.assembly)?;
    run.write_text(MATRIX, &matrix_text(&r)?)?;
    let uis = read_events(run, EVENTS_UIS)?;
    let (r_uis, uis_assembly) = build_matrix(&uis, &segments, p.segment_length_m, &columns, &p.assembly)?;
    run.write_text(MATRIX_UIS, &matrix_text(&r_uis)?)?;
    let (rows, cols) = r.shape();
    let report = MatrixReport { rows, cols, total_seconds: r.total(), assembly, uis_assembly };
    run.write_json(ASSEMBLY, &report)?;
    run.record(Stage::Matrix.name(), &[SEGMENTS, MATRIX, MATRIX_UIS, ASSEMBLY])?;
    Ok(report)
}

// ---- solve

#[derive(Debug, Clone, Serialize)]
pub struct ClusterSummary {
    pub cluster: usize,
    pub rows: usize,
    pub iterations: usize,
    pub converged: bool,
    pub initial_objective: f64,
    pub final_objective: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub baseline: BaselineMode,
    pub clusters: Vec<ClusterSummary>,
    pub converged: bool,
}

const TRACE_HEADER: [&str; 7] = ["cluster", "iter", "objective", "res1", "res2", "res3", "rho"];

pub fn solve(run: &RunDir) -> Result<SolveReport> {
    let p = &run.config.pipeline;
    let segments = route_segments(run)?;
    let r = read_matrix(run, MATRIX)?;
    let r_uis = read_matrix(run, MATRIX_UIS)?;
    let partition = cluster_segments(&segments, &p.clustering)?;
    run.write_json(PARTITION, &partition)?;
    let out = decompose_baseline(p.baseline, &r, &r_uis, &partition, &p.solver, p.parallel)?;
    run.write_text(SCORING_MATRIX, &matrix_text(&out.scoring)?)?;
    let mut files = vec![PARTITION, SCORING_MATRIX];
    let mut clusters = Vec::new();
    if let Some(d) = &out.decomposition {
        run.write_text(THETA, &matrix_text(&d.theta)?)?;
        run.write_text(MASK, &matrix_text(&d.mask)?)?;
        let trace = csv_text(
            &TRACE_HEADER,
            d.clusters.iter().flat_map(|c| {
                c.result.trace.iter().map(move |t| {
                    vec![
                        c.cluster.to_string(),
                        t.iter.to_string(),
                        format!("{:.16e}", t.objective),
                        format!("{:.16e}", t.res1),
                        format!("{:.16e}", t.res2),
                        format!("{:.16e}", t.res3),
                        format!("{:.16e}", t.rho),
                    ]
                })
            }),
        )?;
        run.write_text(TRACE, &trace)?;
        files.extend([THETA, MASK, TRACE]);
        for c in &d.clusters {
            if !c.result.converged {
                log::warn!("cluster {} stopped at max_iter without converging", c.cluster);
            }
            clusters.push(ClusterSummary {
                cluster: c.cluster,
                rows: c.rows,
                iterations: c.result.iterations,
                converged: c.result.converged,
                initial_objective: c.result.initial_objective,
                final_objective: c.result.trace.last().map(|t| t.objective),
            });
        }
    }
    let report = SolveReport {
        baseline: p.baseline,
        converged: clusters.iter().all(|c| c.converged),
        clusters,
    };
    run.write_json(SOLVE, &report)?;
    files.push(SOLVE);
    run.record(Stage::Solve.name(), &files)?;
    Ok(report)
}

// ---- score

/// Scores of every indicator for each segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentScores {
    pub segments: Vec<RoadSegment>,
    pub ast: Vec<f64>,
    pub mst: Vec<f64>,
    pub tat: Vec<f64>,
}

impl SegmentScores {
    pub fn select(&self, indicator: Indicator) -> &[f64] {
        match indicator {
            Indicator::Ast => &self.ast,
            Indicator::Mst => &self.mst,
            Indicator::Tat => &self.tat,
        }
    }
}

pub const SCORE_HEADER: [&str; 8] = ["segment_id", "start_lng", "start_lat", "end_lng", "end_lat", "ast", "mst", "tat_k"];

pub fn score(run: &RunDir) -> Result<SegmentScores> {
    let p = &run.config.pipeline;
    let segments = route_segments(run)?;
    let e = read_matrix(run, SCORING_MATRIX)?;
    let ids: Vec<usize> = segments.iter().map(|s| s.id).collect();
    if e.row_ids != ids {
        bail!("{SCORING_MATRIX} rows do not match the route's {} segments", ids.len());
    }
    let scores = SegmentScores {
        ast: ast(&e.values),
        mst: mst(&e.values),
        tat: tat(&e.values, p.k)?,
        segments,
    };
    let text = csv_text(
        &SCORE_HEADER,
        scores.segments.iter().enumerate().map(|(i, s)| {
            vec![
                s.id.to_string(),
                s.start.lng.to_string(),
                s.start.lat.to_string(),
                s.end.lng.to_string(),
                s.end.lat.to_string(),
                scores.ast[i].to_string(),
                scores.mst[i].to_string(),
                scores.tat[i].to_string(),
            ]
        }),
    )?;
    run.write_text(SCORES, &text)?;
    let geo = emit_geojson(scores.select(p.indicator), &scores.segments)?;
    run.write_text(GEOJSON, &format!("{}\n", serde_json::to_string(&geo)?))?;
    run.record(Stage::Score.name(), &[SCORES, GEOJSON])?;
    Ok(scores)
}

/// Reads the chosen indicator column of a scores file.
pub fn read_scores(text: &str, indicator: Indicator) -> Result<Vec<f64>> {
    let col = match indicator {
        Indicator::Ast => 5,
        Indicator::Mst => 6,
        Indicator::Tat => 7,
    };
    csv_rows(text, &SCORE_HEADER)?.iter().map(|r| field(r, col)).collect()
}

// ---- eval

#[derive(Debug, Clone, Serialize)]
pub struct Metrics {
    pub indicator: Indicator,
    pub k: usize,
    pub baseline: BaselineMode,
    pub label_radius_m: f64,
    #[serde(flatten)]
    pub report: MetricReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub beta: f64,
    pub ap: f64,
    pub auc: f64,
}

/// Ground-truth spots from a synth truth JSON, or `lng,lat` lines with an
/// optional header.
pub fn read_spots(path: &Path) -> Result<Vec<LngLat>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading ground truth {}", path.display()))?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        let truth: GroundTruth = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        return Ok(truth.injected_spots);
    }
    let mut spots = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let s = line.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        let parsed = s
            .split_once(',')
            .and_then(|(a, b)| Some(LngLat::new(a.trim().parse().ok()?, b.trim().parse().ok()?)));
        match parsed {
            Some(p) => spots.push(p),
            None if n == 0 => {}
            None => bail!("{} line {}: expected \"lng,lat\"", path.display(), n + 1),
        }
    }
    Ok(spots)
}

fn truth_path(run: &RunDir) -> std::path::PathBuf {
    run.config.paths.truth.clone().unwrap_or_else(|| run.path(TRUTH))
}

/// The λ and β values of the sweep grid.
pub fn sweep_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

pub fn eval(run: &RunDir, sweep: bool) -> Result<(Metrics, Option<Vec<SweepPoint>>)> {
    let p = &run.config.pipeline;
    let segments = route_segments(run)?;
    let spots = read_spots(&truth_path(run))?;
    let labels = label_segments(&spots, &segments, run.config.eval.label_radius_m)?;
    let scores = read_scores(&run.read_text(SCORES)?, p.indicator)?;
    let metrics = Metrics {
        indicator: p.indicator,
        k: p.k,
        baseline: p.baseline,
        label_radius_m: run.config.eval.label_radius_m,
        report: evaluate(&scores, &labels)?,
    };
    run.write_json(METRICS, &metrics)?;
    let mut files = vec![METRICS];
    let mut grid_points = None;
    if sweep {
        let r = read_matrix(run, MATRIX)?;
        let r_uis = read_matrix(run, MATRIX_UIS)?;
        let partition = cluster_segments(&segments, &p.clustering)?;
        let mut points = Vec::new();
        for &lambda in &sweep_grid() {
            for &beta in &sweep_grid() {
                let solver = stopscan_core::admm::SolverParams { lambda, beta, ..p.solver };
                let out = decompose_baseline(p.baseline, &r, &r_uis, &partition, &solver, p.parallel)?;
                let s = stopscan_core::scoring::indicator_scores(&out.scoring.values, p.indicator, p.k)?;
                let m = evaluate(&s, &labels)?;
                points.push(SweepPoint { lambda, beta, ap: m.ap, auc: m.auc });
            }
        }
        let text = csv_text(
            &["lambda", "beta", "ap", "auc"],
            points
                .iter()
                .map(|q| vec![q.lambda.to_string(), q.beta.to_string(), q.ap.to_string(), q.auc.to_string()]),
        )?;
        run.write_text(SWEEP, &text)?;
        files.push(SWEEP);
        grid_points = Some(points);
    }
    run.record(Stage::Eval.name(), &files)?;
    Ok((metrics, grid_points))
}

/// Every stage from raw GPS to scores, then evaluation when ground truth is
/// available.
pub fn run_all(run: &RunDir) -> Result<Option<Metrics>> {
    run_stage(Stage::Ingest, || ingest(run))?;
    run_stage(Stage::Detect, || detect(run))?;
    run_stage(Stage::Matrix, || matrix(run))?;
    run_stage(Stage::Solve, || solve(run))?;
    run_stage(Stage::Score, || score(run))?;
    if run.config.paths.truth.is_some() || run.path(TRUTH).exists() {
        let (m, _) = run_stage(Stage::Eval, || eval(run, false))?;
        Ok(Some(m))
    } else {
        log::info!("no ground truth configured; skipping eval");
        Ok(None)
    }
}
