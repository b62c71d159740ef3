//! Per-segment anomaly indicators, baselines, and ranking metrics.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::admm::{solve, SolverParams};
use crate::error::{Error, Result};
use crate::geo::{project_onto_chord, LngLat};
use crate::grid::RoadSegment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Indicator {
    /// Row sum.
    #[default]
    Ast,
    /// Row maximum.
    Mst,
    /// Mean of the k largest entries of the row.
    Tat,
}

/// Sum of abnormal stop durations per segment.
pub fn ast(e: &DMatrix<f64>) -> Vec<f64> {
    e.row_iter().map(|r| r.sum()).collect()
}

pub fn mst(e: &DMatrix<f64>) -> Vec<f64> {
    e.row_iter()
        .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .map(|x| if x.is_finite() { x } else { 0.0 })
        .collect()
}

/// Mean of the `k` largest entries per row; all entries when `k` exceeds the
/// row length.
pub fn tat(e: &DMatrix<f64>, k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::Config("TAT@k needs k >= 1".into()));
    }
    Ok(e.row_iter()
        .map(|r| {
            let mut v: Vec<f64> = r.iter().copied().collect();
            v.sort_by(|a, b| b.total_cmp(a));
            v.truncate(k);
            if v.is_empty() {
                0.0
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        })
        .collect())
}

pub fn indicator_scores(e: &DMatrix<f64>, indicator: Indicator, k: usize) -> Result<Vec<f64>> {
    match indicator {
        Indicator::Ast => Ok(ast(e)),
        Indicator::Mst => Ok(mst(e)),
        Indicator::Tat => tat(e, k),
    }
}

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Contract("scores contain NaN".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    Ok((pos, labels.len() - pos))
}

/// Probability that a random positive outranks a random negative, ties
/// counting one half. Computed from mid-ranks.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_inputs(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("ROC AUC needs both positive and negative labels"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their mean
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Order used to report sweeps: descending score, then ascending index.
fn sweep_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// One operating point per distinct score, predicting positive for every
/// score at or above the threshold.
fn sweep(scores: &[f64], labels: &[bool]) -> Vec<(f64, usize, usize)> {
    let order = sweep_order(scores);
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (n, &k) in order.iter().enumerate() {
        if labels[k] {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_tie = n + 1 == order.len() || scores[order[n + 1]] != scores[k];
        if last_of_tie {
            points.push((scores[k], tp, fp));
        }
    }
    points
}

pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<PrPoint>> {
    let (pos, _) = check_inputs(scores, labels)?;
    if pos == 0 {
        return Err(Error::UndefinedMetric("precision-recall needs at least one positive"));
    }
    Ok(sweep(scores, labels)
        .into_iter()
        .map(|(threshold, tp, fp)| PrPoint {
            threshold,
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / pos as f64,
        })
        .collect())
}

pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<RocPoint>> {
    let (pos, neg) = check_inputs(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("ROC needs both positive and negative labels"));
    }
    let mut curve = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    curve.extend(sweep(scores, labels).into_iter().map(|(threshold, tp, fp)| RocPoint {
        threshold,
        fpr: fp as f64 / neg as f64,
        tpr: tp as f64 / pos as f64,
    }));
    Ok(curve)
}

/// Step-rule area under the precision-recall curve:
/// `sum_k (recall_k - recall_{k-1}) precision_k` over distinct thresholds.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let curve = pr_curve(scores, labels)?;
    let mut prev = 0.0;
    let mut ap = 0.0;
    for p in curve {
        ap += (p.recall - prev) * p.precision;
        prev = p.recall;
    }
    Ok(ap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ap: f64,
    pub auc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub pr_curve: Vec<PrPoint>,
    pub roc_curve: Vec<RocPoint>,
}

pub fn evaluate(scores: &[f64], labels: &[bool]) -> Result<MetricReport> {
    let (n_pos, n_neg) = check_inputs(scores, labels)?;
    Ok(MetricReport {
        ap: average_precision(scores, labels)?,
        auc: roc_auc(scores, labels)?,
        n_pos,
        n_neg,
        pr_curve: pr_curve(scores, labels)?,
        roc_curve: roc_curve(scores, labels)?,
    })
}

/// A segment is positive when some ground-truth spot lies within `radius_m`
/// of its chord, or projects onto it as the nearest segment.
pub fn label_segments(spots: &[LngLat], segments: &[RoadSegment], radius_m: f64) -> Result<Vec<bool>> {
    if !(radius_m > 0.0) {
        return Err(Error::Config("label radius must be > 0".into()));
    }
    let mut labels = vec![false; segments.len()];
    for &spot in spots {
        let mut nearest: Option<(usize, f64)> = None;
        for (i, seg) in segments.iter().enumerate() {
            let (_, dist) = project_onto_chord(spot, seg.start, seg.end);
            if dist <= radius_m {
                labels[i] = true;
            }
            if nearest.is_none_or(|(_, d)| dist < d - 1e-9) {
                nearest = Some((i, dist));
            }
        }
        if let Some((i, _)) = nearest {
            labels[i] = true;
        }
    }
    Ok(labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    /// The full decomposition.
    #[default]
    Full,
    /// Decomposition without the group-sparse term.
    Wst,
    /// Indicator applied to `R` directly.
    Wsa,
    /// Full decomposition of the matrix built from zero-speed samples only.
    Uis,
}

/// Scores rows of `r` under one of the comparison strategies. Returns the
/// scoring matrix alongside the scores: `E` for the decomposing modes, `R`
/// itself for WSA.
pub fn run_baseline(
    mode: BaselineMode,
    r: &DMatrix<f64>,
    r_uis: Option<&DMatrix<f64>>,
    params: &SolverParams,
    indicator: Indicator,
    k: usize,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let e = match mode {
        BaselineMode::Full => solve(r, params)?.e,
        BaselineMode::Wst => solve(r, &SolverParams { beta: 0.0, ..*params })?.e,
        BaselineMode::Wsa => r.clone(),
        BaselineMode::Uis => {
            let ru = r_uis.ok_or_else(|| Error::Config("UIS baseline needs the zero-speed matrix".into()))?;
            solve(ru, params)?.e
        }
    };
    Ok((indicator_scores(&e, indicator, k)?, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{segment_route, RoutePolyline};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn row(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, v.len(), v)
    }

    #[test]
    fn indicator_examples() {
        assert_eq!(ast(&row(&[1.0, 2.0, 3.0])), vec![6.0]);
        assert_eq!(ast(&DMatrix::zeros(3, 2)), vec![0.0; 3]);
        assert_eq!(mst(&row(&[1.0, 5.0, 3.0])), vec![5.0]);
        assert_eq!(mst(&row(&[2.0, 2.0, 2.0])), vec![2.0]);
        assert_eq!(tat(&row(&[5.0, 1.0, 3.0]), 2).unwrap(), vec![4.0]);
        assert_eq!(tat(&row(&[5.0, 1.0, 3.0]), 7).unwrap(), vec![3.0]);
        assert!(matches!(tat(&row(&[1.0]), 0), Err(Error::Config(_))));
    }

    #[test]
    fn indicator_orderings() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let e = DMatrix::from_fn(8, 6, |_, _| if rng.random_bool(0.5) { rng.random_range(0.0..10.0) } else { 0.0 });
            let (a, m, t1) = (ast(&e), mst(&e), tat(&e, 1).unwrap());
            let t3 = tat(&e, 3).unwrap();
            for i in 0..8 {
                assert_eq!(m[i], t1[i]);
                assert!(m[i] <= a[i] + 1e-12);
                assert!(t3[i] * 3.0 <= a[i] + 1e-9);
            }
        }
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.2, 0.8], &[true, false]).unwrap(), 0.0);
        assert_eq!(roc_auc(&[0.5, 0.5], &[true, false]).unwrap(), 0.5);
        assert!(matches!(roc_auc(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedMetric(_))));
        assert!(roc_auc(&[0.1], &[true, false]).is_err());
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
        assert_eq!(average_precision(&[0.9, 0.1], &[false, true]).unwrap(), 0.5);
        assert!(matches!(average_precision(&[0.3], &[false]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn auc_complement_and_monotone_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let n = rng.random_range(2..80);
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
            labels[0] = true;
            labels[1] = false;
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            let auc = roc_auc(&scores, &labels).unwrap();
            assert!((auc + roc_auc(&neg, &labels).unwrap() - 1.0).abs() < 1e-12);
            let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() + 7.0).collect();
            assert!((auc - roc_auc(&warped, &labels).unwrap()).abs() < 1e-12);
            let ap = average_precision(&scores, &labels).unwrap();
            assert!((ap - average_precision(&warped, &labels).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn curves_are_monotone() {
        let scores = [0.9, 0.9, 0.5, 0.4, 0.4, 0.1];
        let labels = [true, false, true, false, true, false];
        let rep = evaluate(&scores, &labels).unwrap();
        assert_eq!((rep.n_pos, rep.n_neg), (3, 3));
        for w in rep.roc_curve.windows(2) {
            assert!(w[1].threshold < w[0].threshold);
            assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
        }
        for w in rep.pr_curve.windows(2) {
            assert!(w[1].recall >= w[0].recall);
        }
        let last = rep.roc_curve.last().unwrap();
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
    }

    #[test]
    fn labels_from_spots() {
        let route = RoutePolyline::new(vec![LngLat::new(116.0, 40.0), LngLat::new(116.02, 40.0)]).unwrap();
        let segs = segment_route(&route, 200.0).unwrap();
        let l = label_segments(&[segs[3].midpoint()], &segs, 60.0).unwrap();
        assert_eq!(l.iter().filter(|&&x| x).count(), 1);
        assert!(l[3]);
        // at the default radius a midpoint sits on the edge of both neighbors
        let l = label_segments(&[segs[3].midpoint()], &segs, 100.0).unwrap();
        assert!(l[3] && !l[1] && !l[5]);

        let l = label_segments(&[segs[3].end], &segs, 100.0).unwrap();
        assert!(l[3] && l[4]);
        assert_eq!(l.iter().filter(|&&x| x).count(), 2);

        assert!(label_segments(&[], &segs, 100.0).unwrap().iter().all(|&x| !x));
        assert!(label_segments(&[], &segs, 0.0).is_err());
    }

    #[test]
    fn baselines() {
        let r = DMatrix::from_fn(6, 4, |i, j| (i + j) as f64);
        let (s, e) = run_baseline(BaselineMode::Wsa, &r, None, &SolverParams::default(), Indicator::Ast, 2).unwrap();
        assert_eq!(s, ast(&r));
        assert_eq!(e, r);
        let (s, _) = run_baseline(BaselineMode::Wsa, &DMatrix::zeros(3, 3), None, &SolverParams::default(), Indicator::Ast, 2).unwrap();
        assert_eq!(s, vec![0.0; 3]);
        assert!(matches!(
            run_baseline(BaselineMode::Uis, &r, None, &SolverParams::default(), Indicator::Ast, 2),
            Err(Error::Config(_))
        ));
        let (s, _) = run_baseline(BaselineMode::Wst, &r, None, &SolverParams::default(), Indicator::Ast, 2).unwrap();
        assert_eq!(s.len(), 6);
        assert!(s.iter().all(|&x| x >= 0.0));
    }
}
