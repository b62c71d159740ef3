use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shrinkage toward zero by `alpha`.
#[inline]
pub fn soft_threshold(x: f64, alpha: f64) -> f64 {
    if x > alpha {
        x - alpha
    } else if x < -alpha {
        x + alpha
    } else {
        0.0
    }
}

pub fn soft_threshold_matrix(m: &DMatrix<f64>, alpha: f64) -> DMatrix<f64> {
    m.map(|x| soft_threshold(x, alpha))
}

/// Singular value decomposition by one-sided Jacobi rotations. Returns the
/// rotated columns `C V` (column `j` is `sigma_j u_j`) and `V`, for `C` with at
/// least as many rows as columns.
fn jacobi_svd(c: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (m, n) = c.shape();
    debug_assert!(m >= n);
    let mut a = c.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let tol = f64::EPSILON * m as f64;
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dot(&a.column(q));
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                rotate(&mut a, p, q, cs, sn);
                rotate(&mut v, p, q, cs, sn);
            }
        }
        if !rotated {
            break;
        }
    }
    (a, v)
}

fn rotate(m: &mut DMatrix<f64>, p: usize, q: usize, cs: f64, sn: f64) {
    for i in 0..m.nrows() {
        let (x, y) = (m[(i, p)], m[(i, q)]);
        m[(i, p)] = cs * x - sn * y;
        m[(i, q)] = sn * x + cs * y;
    }
}

/// Singular values in no particular order.
pub fn singular_values(c: &DMatrix<f64>) -> Vec<f64> {
    if c.is_empty() {
        return Vec::new();
    }
    let tall = if c.nrows() >= c.ncols() { c.clone() } else { c.transpose() };
    let (a, _) = jacobi_svd(&tall);
    a.column_iter().map(|col| col.norm()).collect()
}

/// Singular value thresholding: `U max(S - tau, 0) V^T`, the proximal map of
/// `tau * nuclear norm`.
pub fn svt(c: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
    if c.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("svt input has non-finite entries".into()));
    }
    if c.is_empty() {
        return Ok(c.clone());
    }
    let wide = c.nrows() < c.ncols();
    let tall = if wide { c.transpose() } else { c.clone() };
    let (mut a, v) = jacobi_svd(&tall);
    for mut col in a.column_iter_mut() {
        let sigma = col.norm();
        let f = if sigma > tau { (sigma - tau) / sigma } else { 0.0 };
        col.scale_mut(f);
    }
    let out = a * v.transpose();
    Ok(if wide { out.transpose() } else { out })
}

pub fn nuclear_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).iter().sum()
}

pub fn l1_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|x| x.abs()).sum()
}

/// Which slices of W form the groups of the L2,1 penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupAxis {
    /// One group per road segment (matrix row).
    #[default]
    Rows,
    /// One group per coach-day (matrix column).
    Columns,
}

pub fn group_norm(m: &DMatrix<f64>, axis: GroupAxis) -> f64 {
    match axis {
        GroupAxis::Rows => m.row_iter().map(|r| r.norm()).sum(),
        GroupAxis::Columns => m.column_iter().map(|c| c.norm()).sum(),
    }
}

/// Block soft thresholding: each group `g` becomes `g (|g| - alpha) / |g|`
/// when `|g| > alpha`, else zero.
pub fn group_shrink(q: &DMatrix<f64>, alpha: f64, axis: GroupAxis) -> DMatrix<f64> {
    let mut out = q.clone();
    let scale = |norm: f64| if norm > alpha { (norm - alpha) / norm } else { 0.0 };
    match axis {
        GroupAxis::Rows => {
            for mut row in out.row_iter_mut() {
                let f = scale(row.norm());
                row.scale_mut(f);
            }
        }
        GroupAxis::Columns => {
            for mut col in out.column_iter_mut() {
                let f = scale(col.norm());
                col.scale_mut(f);
            }
        }
    }
    out
}
