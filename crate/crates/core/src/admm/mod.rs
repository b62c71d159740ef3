//! Masked low-rank plus sparse plus group-sparse decomposition of a
//! stop-duration matrix `R`:
//!
//! ```text
//! min  |Theta|_* + lambda |E|_1 + beta |W|_2,1
//! s.t. R = R.I + E,  Theta = R.I,  E = W,  E >= 0,  0 <= I <= 1
//! ```
//!
//! solved by ADMM with a geometrically growing penalty. `I` is the relaxed
//! normal-stop mask, `E` the abnormal stop durations.

pub mod prox;

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use prox::{group_norm, group_shrink, l1_norm, nuclear_norm, singular_values, soft_threshold, soft_threshold_matrix, svt, GroupAxis};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverParams {
    pub lambda: f64,
    pub beta: f64,
    pub rho0: f64,
    pub mu: f64,
    pub rho_max: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub group_axis: GroupAxis,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            beta: 0.1,
            rho0: 1.0,
            mu: 1.2,
            rho_max: 1e6,
            tol: 1e-6,
            max_iter: 200,
            group_axis: GroupAxis::Rows,
        }
    }
}

impl SolverParams {
    /// Zero weights are accepted: `beta = 0` is the no-group-term ablation and
    /// the hyper-parameter sweep starts at 0.
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.lambda >= 0.0 && self.lambda.is_finite(), "lambda must be >= 0"),
            (self.beta >= 0.0 && self.beta.is_finite(), "beta must be >= 0"),
            (self.rho0 > 0.0, "rho0 must be > 0"),
            (self.mu > 1.0, "mu must be > 1"),
            (self.rho_max >= self.rho0, "rho_max must be >= rho0"),
            (self.tol > 0.0, "tol must be > 0"),
            (self.max_iter > 0, "max_iter must be > 0"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::Config((*msg).into())),
            None => Ok(()),
        }
    }
}

/// Primal variables, multipliers and penalty between iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub mask: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub theta: DMatrix<f64>,
    pub y1: DMatrix<f64>,
    pub y2: DMatrix<f64>,
    pub y3: DMatrix<f64>,
    pub rho: f64,
}

impl SolverState {
    /// Every stop presumed normal: `I = 1`, `E = W = 0`, `Theta = R`, `Y = 0`.
    pub fn initial(r: &DMatrix<f64>, rho0: f64) -> Self {
        let (m, n) = r.shape();
        let zeros = DMatrix::zeros(m, n);
        Self {
            mask: DMatrix::from_element(m, n, 1.0),
            e: zeros.clone(),
            w: zeros.clone(),
            theta: r.clone(),
            y1: zeros.clone(),
            y2: zeros.clone(),
            y3: zeros,
            rho: rho0,
        }
    }

    fn masked(&self, r: &DMatrix<f64>) -> DMatrix<f64> {
        r.component_mul(&self.mask)
    }
}

/// `E = max(S_{lambda/2rho}((R + W + Y1/rho + Y3/rho - R.I) / 2), 0)`.
pub fn update_e(state: &SolverState, r: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let rho = state.rho;
    let arg = (r + &state.w + &state.y1 / rho + &state.y3 / rho - state.masked(r)) * 0.5;
    arg.map(|x| soft_threshold(x, lambda / (2.0 * rho)).max(0.0))
}

/// `Theta = svt(R.I - Y2/rho, 1/rho)`.
pub fn update_theta(state: &SolverState, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    svt(&(state.masked(r) - &state.y2 / state.rho), 1.0 / state.rho)
}

/// `I = (rho R + rho Theta - rho E + Y1 + Y2) / (2 rho R)` elementwise, with
/// `I = 1` where `R = 0`, clipped to `[0, 1]`.
pub fn update_mask(state: &SolverState, r: &DMatrix<f64>) -> DMatrix<f64> {
    let rho = state.rho;
    DMatrix::from_fn(r.nrows(), r.ncols(), |i, j| {
        let rij = r[(i, j)];
        if rij > 0.0 {
            let num = rho * rij + rho * state.theta[(i, j)] - rho * state.e[(i, j)] + state.y1[(i, j)] + state.y2[(i, j)];
            (num / (2.0 * rho * rij)).clamp(0.0, 1.0)
        } else {
            1.0
        }
    })
}

/// Group shrinkage of `Q = E - Y3/rho` at `alpha = beta/rho`.
pub fn update_w(state: &SolverState, beta: f64, axis: GroupAxis) -> DMatrix<f64> {
    let q = &state.e - &state.y3 / state.rho;
    group_shrink(&q, beta / state.rho, axis)
}

/// Dual ascent on the three equality constraints.
pub fn update_multipliers(state: &SolverState, r: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let rho = state.rho;
    let ri = state.masked(r);
    let y1 = &state.y1 + (r - &ri - &state.e) * rho;
    let y2 = &state.y2 + (&state.theta - &ri) * rho;
    let y3 = &state.y3 + (&state.w - &state.e) * rho;
    (y1, y2, y3)
}

/// Frobenius norms of `R - R.I - E`, `Theta - R.I` and `W - E`.
pub fn residuals(state: &SolverState, r: &DMatrix<f64>) -> [f64; 3] {
    let ri = state.masked(r);
    [
        (r - &ri - &state.e).norm(),
        (&state.theta - &ri).norm(),
        (&state.w - &state.e).norm(),
    ]
}

pub fn objective(state: &SolverState, params: &SolverParams) -> f64 {
    nuclear_norm(&state.theta) + params.lambda * l1_norm(&state.e) + params.beta * group_norm(&state.w, params.group_axis)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub objective: f64,
    /// Relative residuals, scaled by `max(1, |R|_F)`.
    pub res1: f64,
    pub res2: f64,
    pub res3: f64,
    /// Penalty used during this iteration.
    pub rho: f64,
}

impl IterationRecord {
    pub fn max_residual(&self) -> f64 {
        self.res1.max(self.res2).max(self.res3)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionResult {
    pub mask: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub theta: DMatrix<f64>,
    /// Objective at the starting point, before the first iteration.
    pub initial_objective: f64,
    pub trace: Vec<IterationRecord>,
    pub converged: bool,
    pub iterations: usize,
}

/// Runs ADMM from [`SolverState::initial`]: E, Theta, I, W, multipliers,
/// then `rho <- min(rho mu, rho_max)`, until every relative residual is below
/// `tol` or `max_iter` is reached.
pub fn solve(r: &DMatrix<f64>, params: &SolverParams) -> Result<DecompositionResult> {
    params.validate()?;
    if r.iter().any(|&x| !(x.is_finite() && x >= 0.0)) {
        return Err(Error::Contract("R must be finite and non-negative".into()));
    }
    let scale = r.norm().max(1.0);
    let mut state = SolverState::initial(r, params.rho0);
    let initial_objective = objective(&state, params);
    let mut trace = Vec::new();
    let mut converged = false;

    for iter in 1..=params.max_iter {
        state.e = update_e(&state, r, params.lambda);
        state.theta = update_theta(&state, r).map_err(|e| diverged(iter, &trace, e))?;
        state.mask = update_mask(&state, r);
        state.w = update_w(&state, params.beta, params.group_axis);
        let (y1, y2, y3) = update_multipliers(&state, r);
        state.y1 = y1;
        state.y2 = y2;
        state.y3 = y3;

        let [r1, r2, r3] = residuals(&state, r);
        let record = IterationRecord {
            iter,
            objective: objective(&state, params),
            res1: r1 / scale,
            res2: r2 / scale,
            res3: r3 / scale,
            rho: state.rho,
        };
        if !(record.objective.is_finite() && record.max_residual().is_finite()) {
            return Err(diverged(iter, &trace, Error::Numeric("non-finite objective or residual".into())));
        }
        trace.push(record);
        if record.max_residual() < params.tol {
            converged = true;
            break;
        }
        state.rho = (state.rho * params.mu).min(params.rho_max);
    }

    Ok(DecompositionResult {
        iterations: trace.len(),
        initial_objective,
        mask: state.mask,
        e: state.e,
        w: state.w,
        theta: state.theta,
        trace,
        converged,
    })
}

fn diverged(iter: usize, trace: &[IterationRecord], cause: Error) -> Error {
    let last = trace
        .last()
        .map(|t| format!("; last good iteration {}: objective {:e}, residuals {:e} {:e} {:e}, rho {:e}", t.iter, t.objective, t.res1, t.res2, t.res3, t.rho))
        .unwrap_or_default();
    Error::Numeric(format!("solver aborted at iteration {iter}: {cause}{last}"))
}

/// One line per iteration: `iter,objective,res1,res2,res3,rho`.
pub fn write_trace<W: Write>(trace: &[IterationRecord], mut out: W) -> Result<()> {
    writeln!(out, "iter,objective,res1,res2,res3,rho")?;
    for t in trace {
        writeln!(out, "{},{:e},{:e},{:e},{:e},{:e}", t.iter, t.objective, t.res1, t.res2, t.res3, t.rho)?;
    }
    Ok(())
}
