//! Affinity propagation over segment midpoints, used to split the segment
//! axis into independent sub-problems.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{haversine, LngLat};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preference {
    Median,
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApParams {
    pub damping: f64,
    pub preference: Preference,
    pub max_iter: usize,
    /// Iterations the exemplar set must stay unchanged to declare convergence.
    pub convergence_iter: usize,
}

impl Default for ApParams {
    fn default() -> Self {
        Self {
            damping: 0.9,
            preference: Preference::Median,
            max_iter: 1000,
            convergence_iter: 15,
        }
    }
}

/// Cluster id per point plus one exemplar per cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterPartition {
    pub assignment: Vec<usize>,
    pub exemplars: Vec<usize>,
    pub converged: bool,
}

impl ClusterPartition {
    pub fn from_assignment(assignment: Vec<usize>, exemplars: Vec<usize>, converged: bool) -> Self {
        Self {
            assignment,
            exemplars,
            converged,
        }
    }

    pub fn single(n: usize) -> Self {
        Self::from_assignment(vec![0; n], vec![0], true)
    }

    pub fn cluster_count(&self) -> usize {
        self.exemplars.len()
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == cluster).collect()
    }
}

/// Negative squared great-circle distance with the preference on the diagonal.
pub fn similarity_matrix(points: &[LngLat], preference: Preference) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut s = vec![vec![0.0; n]; n];
    let mut off = Vec::with_capacity(n * n.saturating_sub(1));
    for i in 0..n {
        for k in 0..n {
            if i != k {
                let d = haversine(points[i], points[k]);
                s[i][k] = -d * d;
                off.push(s[i][k]);
            }
        }
    }
    let pref = match preference {
        Preference::Value(v) => v,
        Preference::Median => median(&mut off),
    };
    for (i, row) in s.iter_mut().enumerate() {
        row[i] = pref;
    }
    s
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

pub fn affinity_propagation(points: &[LngLat], params: &ApParams) -> Result<ClusterPartition> {
    if points.len() < 2 {
        return Err(Error::Config("affinity propagation needs at least 2 points".into()));
    }
    if !(0.5..1.0).contains(&params.damping) {
        return Err(Error::Config(format!("damping {} outside [0.5, 1)", params.damping)));
    }
    let s = similarity_matrix(points, params.preference);
    Ok(propagate(&s, params))
}

/// Message passing on a precomputed similarity matrix.
pub fn propagate(s: &[Vec<f64>], params: &ApParams) -> ClusterPartition {
    let n = s.len();
    let lam = params.damping;
    let mut r = vec![vec![0.0; n]; n];
    let mut a = vec![vec![0.0; n]; n];
    let mut last: Vec<usize> = Vec::new();
    let mut stable = 0;
    let mut converged = false;

    for _ in 0..params.max_iter {
        // responsibilities
        for i in 0..n {
            let (mut first, mut second, mut arg) = (f64::NEG_INFINITY, f64::NEG_INFINITY, 0);
            for k in 0..n {
                let v = a[i][k] + s[i][k];
                if v > first {
                    second = first;
                    first = v;
                    arg = k;
                } else if v > second {
                    second = v;
                }
            }
            for k in 0..n {
                let competitor = if k == arg { second } else { first };
                r[i][k] = lam * r[i][k] + (1.0 - lam) * (s[i][k] - competitor);
            }
        }
        // availabilities
        for k in 0..n {
            let col: f64 = (0..n).map(|i| if i == k { r[k][k] } else { r[i][k].max(0.0) }).sum();
            for i in 0..n {
                let own = if i == k { r[k][k] } else { r[i][k].max(0.0) };
                let fresh = if i == k { col - r[k][k] } else { (col - own).min(0.0) };
                a[i][k] = lam * a[i][k] + (1.0 - lam) * fresh;
            }
        }

        let exemplars: Vec<usize> = (0..n).filter(|&k| a[k][k] + r[k][k] > 0.0).collect();
        if !exemplars.is_empty() && exemplars == last {
            stable += 1;
            if stable >= params.convergence_iter {
                converged = true;
                break;
            }
        } else {
            stable = 1;
            last = exemplars;
        }
    }

    if !converged {
        warn!("affinity propagation did not converge in {} iterations", params.max_iter);
    }
    let exemplars = if last.is_empty() {
        // nothing crossed zero: fall back to the single strongest candidate
        let best = (0..n).max_by(|&x, &y| (a[x][x] + r[x][x]).total_cmp(&(a[y][y] + r[y][y]))).unwrap_or(0);
        vec![best]
    } else {
        last
    };
    assign(s, exemplars, converged)
}

fn assign(s: &[Vec<f64>], exemplars: Vec<usize>, converged: bool) -> ClusterPartition {
    let assignment = (0..s.len())
        .map(|i| {
            if let Some(c) = exemplars.iter().position(|&e| e == i) {
                return c;
            }
            let mut best = 0;
            for (c, &e) in exemplars.iter().enumerate() {
                if s[i][e] > s[i][exemplars[best]] {
                    best = c;
                }
            }
            best
        })
        .collect();
    ClusterPartition::from_assignment(assignment, exemplars, converged)
}

/// Re-cuts a partition of route-ordered points into maximal runs of equal
/// labels, so every cluster is a contiguous stretch of road. Runs that lost
/// their exemplar take their middle member instead.
pub fn contiguous_runs(partition: &ClusterPartition) -> ClusterPartition {
    let n = partition.assignment.len();
    let mut assignment = vec![0; n];
    let mut exemplars = Vec::new();
    let mut start = 0;
    for i in 1..=n {
        if i == n || partition.assignment[i] != partition.assignment[start] {
            let id = exemplars.len();
            assignment[start..i].iter_mut().for_each(|a| *a = id);
            let original = partition.exemplars[partition.assignment[start]];
            let exemplar = if (start..i).contains(&original) {
                original
            } else {
                start + (i - start) / 2
            };
            exemplars.push(exemplar);
            start = i;
        }
    }
    ClusterPartition::from_assignment(assignment, exemplars, partition.converged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::LocalFrame;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Textbook message passing with explicit sums over all competitors.
    fn reference_exemplars(s: &[Vec<f64>], lam: f64, max_iter: usize, conv: usize) -> Vec<usize> {
        let n = s.len();
        let mut r = vec![vec![0.0; n]; n];
        let mut a = vec![vec![0.0; n]; n];
        let mut history: Vec<Vec<usize>> = Vec::new();
        for _ in 0..max_iter {
            let mut r_new = vec![vec![0.0; n]; n];
            for i in 0..n {
                for k in 0..n {
                    let mut m = f64::NEG_INFINITY;
                    for kk in 0..n {
                        if kk != k {
                            m = m.max(a[i][kk] + s[i][kk]);
                        }
                    }
                    r_new[i][k] = s[i][k] - m;
                }
            }
            for i in 0..n {
                for k in 0..n {
                    r[i][k] = lam * r[i][k] + (1.0 - lam) * r_new[i][k];
                }
            }
            let mut a_new = vec![vec![0.0; n]; n];
            for i in 0..n {
                for k in 0..n {
                    if i == k {
                        a_new[k][k] = (0..n).filter(|&ii| ii != k).map(|ii| r[ii][k].max(0.0)).sum();
                    } else {
                        let sum: f64 = (0..n).filter(|&ii| ii != i && ii != k).map(|ii| r[ii][k].max(0.0)).sum();
                        a_new[i][k] = (r[k][k] + sum).min(0.0);
                    }
                }
            }
            for i in 0..n {
                for k in 0..n {
                    a[i][k] = lam * a[i][k] + (1.0 - lam) * a_new[i][k];
                }
            }
            let ex: Vec<usize> = (0..n).filter(|&k| a[k][k] + r[k][k] > 0.0).collect();
            history.push(ex.clone());
            if history.len() >= conv && !ex.is_empty() && history[history.len() - conv..].iter().all(|h| *h == ex) {
                break;
            }
        }
        history.pop().unwrap_or_default()
    }

    fn blob(center: LngLat, n: usize, radius: f64, rng: &mut ChaCha8Rng) -> Vec<LngLat> {
        let f = LocalFrame::new(center);
        (0..n)
            .map(|_| f.from_xy(rng.random_range(-radius..radius), rng.random_range(-radius..radius)))
            .collect()
    }

    #[test]
    fn two_separated_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pts = blob(LngLat::new(116.0, 40.0), 10, 50.0, &mut rng);
        let f = LocalFrame::new(LngLat::new(116.0, 40.0));
        pts.extend(blob(f.from_xy(10_000.0, 0.0), 10, 50.0, &mut rng));
        let p = affinity_propagation(&pts, &ApParams::default()).unwrap();
        assert!(p.converged);
        assert_eq!(p.cluster_count(), 2);
        assert!(p.assignment[..10].iter().all(|&c| c == p.assignment[0]));
        assert!(p.assignment[10..].iter().all(|&c| c == p.assignment[10]));
        assert_ne!(p.assignment[0], p.assignment[10]);
    }

    #[test]
    fn dominant_preference_makes_singletons() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts = blob(LngLat::new(116.0, 40.0), 12, 500.0, &mut rng);
        let params = ApParams {
            preference: Preference::Value(1e9),
            ..Default::default()
        };
        let p = affinity_propagation(&pts, &params).unwrap();
        assert_eq!(p.cluster_count(), 12);
        assert_eq!(p.exemplars, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn matches_reference_message_passing() {
        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let pts = blob(LngLat::new(116.2, 40.1), 50, 5000.0, &mut rng);
            let params = ApParams::default();
            let s = similarity_matrix(&pts, params.preference);
            let expected = reference_exemplars(&s, params.damping, params.max_iter, params.convergence_iter);
            let p = affinity_propagation(&pts, &params).unwrap();
            assert!(p.converged);
            assert_eq!(p.exemplars, expected, "seed {seed}");
        }
    }

    #[test]
    fn assignment_is_argmax_to_exemplar() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts = blob(LngLat::new(116.2, 40.1), 40, 3000.0, &mut rng);
        let params = ApParams::default();
        let p = affinity_propagation(&pts, &params).unwrap();
        let s = similarity_matrix(&pts, params.preference);
        for (c, &e) in p.exemplars.iter().enumerate() {
            assert_eq!(p.assignment[e], c);
        }
        for i in 0..pts.len() {
            if p.exemplars.contains(&i) {
                continue;
            }
            let mine = s[i][p.exemplars[p.assignment[i]]];
            assert!(p.exemplars.iter().all(|&e| s[i][e] <= mine));
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(affinity_propagation(&[LngLat::new(0.0, 0.0)], &ApParams::default()).is_err());
        let pts = [LngLat::new(0.0, 0.0), LngLat::new(0.1, 0.0)];
        let params = ApParams { damping: 1.0, ..Default::default() };
        assert!(affinity_propagation(&pts, &params).is_err());
    }

    #[test]
    fn contiguity_repair() {
        let p = ClusterPartition::from_assignment(vec![0, 0, 1, 1, 0, 0, 0], vec![1, 3], true);
        let q = contiguous_runs(&p);
        assert_eq!(q.assignment, vec![0, 0, 1, 1, 2, 2, 2]);
        assert_eq!(q.exemplars, vec![1, 3, 5]);
        for (c, &e) in q.exemplars.iter().enumerate() {
            assert_eq!(q.assignment[e], c);
        }
    }
}
