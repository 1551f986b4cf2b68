//! Elastic-net regression via cyclic coordinate descent with
//! soft-thresholding.
//!
//! Minimizes, per output column,
//!   (1/2n)·‖y − Xβ − b‖² + λ·α·‖β‖₁ + (λ·(1−α)/2)·‖β‖²
//! with an unpenalized intercept b handled by centering.

use super::linalg::Mat;
use super::PredictorError;

pub const CONVERGENCE_TOL: f64 = 1e-6;
pub const MAX_SWEEPS: usize = 10_000;

/// Coefficients for one multi-output elastic-net fit.
#[derive(Debug, Clone, PartialEq)]
pub struct ElasticNetFit {
    /// cols(X) × cols(Y) coefficient matrix.
    pub coefs: Mat,
    /// Per-output intercept (all zeros when fit without intercept).
    pub intercepts: Vec<f64>,
    /// False if any output hit the sweep cap before converging.
    pub converged: bool,
}

pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Fits each output column independently by cyclic coordinate descent.
///
/// With `fit_intercept`, X's columns and y are centered first and the
/// intercept is recovered as ȳ − x̄ᵀβ, so constant feature columns (e.g. the
/// bias term of a polynomial expansion) carry no penalty weight.
pub fn fit(
    x: &Mat,
    y: &Mat,
    lambda: f64,
    alpha: f64,
    fit_intercept: bool,
) -> Result<ElasticNetFit, PredictorError> {
    if x.rows == 0 || x.cols == 0 {
        return Err(PredictorError::FitError("elastic net needs data".into()));
    }
    if x.rows != y.rows {
        return Err(PredictorError::FitError(format!(
            "X has {} rows but Y has {}",
            x.rows, y.rows
        )));
    }
    if !(lambda >= 0.0) || !(0.0..=1.0).contains(&alpha) {
        return Err(PredictorError::FitError(format!(
            "require λ ≥ 0 and α ∈ [0,1], got λ={lambda}, α={alpha}"
        )));
    }
    let n = x.rows;
    let d = x.cols;
    let m = y.cols;

    let x_mean: Vec<f64> = if fit_intercept {
        (0..d).map(|j| (0..n).map(|i| x.at(i, j)).sum::<f64>() / n as f64).collect()
    } else {
        vec![0.0; d]
    };
    // Centered design matrix, column-major for the coordinate sweeps.
    let mut cols: Vec<Vec<f64>> = vec![vec![0.0; n]; d];
    for j in 0..d {
        for i in 0..n {
            cols[j][i] = x.at(i, j) - x_mean[j];
        }
    }
    let col_sq_mean: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>() / n as f64)
        .collect();

    let mut coefs = Mat::zeros(d, m);
    let mut intercepts = vec![0.0; m];
    let mut converged = true;
    let l1 = lambda * alpha;
    let l2 = lambda * (1.0 - alpha);

    for out in 0..m {
        let y_mean = if fit_intercept {
            (0..n).map(|i| y.at(i, out)).sum::<f64>() / n as f64
        } else {
            0.0
        };
        let yc: Vec<f64> = (0..n).map(|i| y.at(i, out) - y_mean).collect();
        let mut beta = vec![0.0; d];
        let mut residual = yc.clone();

        let objective = |beta: &[f64], residual: &[f64]| -> f64 {
            let sse: f64 = residual.iter().map(|r| r * r).sum();
            let l1_term: f64 = beta.iter().map(|b| b.abs()).sum();
            let l2_term: f64 = beta.iter().map(|b| b * b).sum();
            sse / (2.0 * n as f64) + l1 * l1_term + 0.5 * l2 * l2_term
        };
        let mut prev_obj = objective(&beta, &residual);
        let mut done = false;

        for _sweep in 0..MAX_SWEEPS {
            let mut max_delta = 0.0f64;
            for j in 0..d {
                if col_sq_mean[j] == 0.0 {
                    continue;
                }
                let old = beta[j];
                // ⟨x_j, r + x_j·old⟩ / n
                let mut rho = 0.0;
                for i in 0..n {
                    rho += cols[j][i] * residual[i];
                }
                rho = rho / n as f64 + col_sq_mean[j] * old;
                let new = soft_threshold(rho, l1) / (col_sq_mean[j] + l2);
                if new != old {
                    let delta = new - old;
                    for i in 0..n {
                        residual[i] -= delta * cols[j][i];
                    }
                    beta[j] = new;
                    max_delta = max_delta.max(delta.abs());
                }
            }
            // Each exact coordinate minimization can only lower the
            // objective; allow only floating-point slack.
            let obj = objective(&beta, &residual);
            assert!(
                obj <= prev_obj + 1e-10 * prev_obj.abs().max(1.0),
                "elastic-net objective rose from {prev_obj} to {obj}"
            );
            prev_obj = obj;
            if max_delta < CONVERGENCE_TOL {
                done = true;
                break;
            }
        }
        if !done {
            converged = false;
        }
        for j in 0..d {
            *coefs.at_mut(j, out) = beta[j];
        }
        if fit_intercept {
            intercepts[out] = y_mean - x_mean.iter().zip(&beta).map(|(m, b)| m * b).sum::<f64>();
        }
    }
    Ok(ElasticNetFit { coefs, intercepts, converged })
}
