use nalgebra::{DMatrix, DVector};

use crate::error::FitError;
use crate::linalg;

pub const MAX_ITER: usize = 50;
pub const SCORE_TOL: f64 = 1e-8;
/// Newton steps at convergence must also be this small. Under separation or
/// a monotone likelihood the score vanishes while the step stays O(1).
pub const STEP_TOL: f64 = 1e-6;
/// Largest admissible |coefficient × column SD| before the fit is declared
/// divergent.
pub const DIVERGENCE: f64 = 30.0;
const MAX_HALVINGS: usize = 40;

pub(crate) struct Evaluation {
    pub loglik: f64,
    pub score: DVector<f64>,
    pub information: DMatrix<f64>,
}

pub(crate) struct Outcome {
    pub beta: DVector<f64>,
    pub information: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
}

fn diverged(beta: &DVector<f64>, scales: &[f64]) -> bool {
    beta.iter().zip(scales).any(|(b, s)| !b.is_finite() || (b * if *s > 0.0 { *s } else { 1.0 }).abs() > DIVERGENCE)
}

/// Newton-Raphson ascent with step halving. `eval` returns the
/// log-likelihood, score and observed information at a point.
///
/// A singular information matrix at the starting point is a rank error;
/// one that appears later is treated as divergence.
pub(crate) fn maximize(
    start: DVector<f64>,
    scales: &[f64],
    eval: impl Fn(&DVector<f64>) -> Evaluation,
) -> Result<Outcome, FitError> {
    let mut beta = start;
    let mut cur = eval(&beta);
    if !cur.loglik.is_finite() {
        return Err(FitError::NonFinite);
    }
    let mut iterations = 0;
    loop {
        let step = match linalg::chol_solve(&cur.information, &cur.score) {
            Ok(s) => s,
            Err(e) if iterations == 0 => return Err(e),
            Err(_) => break,
        };
        if cur.score.norm() < SCORE_TOL && step.norm() < STEP_TOL * (1.0 + beta.norm()) {
            return Ok(Outcome { beta, information: cur.information, converged: true, iterations });
        }
        if iterations == MAX_ITER {
            break;
        }
        iterations += 1;
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand = &beta + &step * t;
            let next = eval(&cand);
            if next.loglik.is_finite() && next.loglik >= cur.loglik - 1e-12 * (1.0 + cur.loglik.abs()) {
                accepted = Some((cand, next));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, next)) = accepted else { break };
        beta = cand;
        cur = next;
        if diverged(&beta, scales) {
            break;
        }
    }
    Ok(Outcome { beta, information: cur.information, converged: false, iterations })
}
