//! Linearity and frequency-response fitting: ordinary least squares for
//! the amplitude sweep, damped Gauss-Newton for the loss-model response.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A fitted parameter with its variance estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitParameter {
    pub name: String,
    pub value: f64,
    pub variance: f64,
}

/// Outcome of a least-squares fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub parameters: Vec<FitParameter>,
    /// Euclidean norm of the residual vector, data units.
    pub residual_norm: f64,
    pub iterations: usize,
}

impl FitResult {
    pub fn parameter(&self, name: &str) -> Option<&FitParameter> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.parameter(name).map(|p| p.value)
    }
}

/// Ordinary least squares for y = slope*x + intercept, with parameter
/// variances from the residual scatter.
pub fn fit_line(points: &[(f64, f64)]) -> Result<FitResult> {
    if points.len() < 2 {
        return Err(Error::data("line fit needs at least two points"));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::data("degenerate line fit: all x values equal"));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = points
        .iter()
        .map(|p| (p.1 - slope * p.0 - intercept).powi(2))
        .sum();
    // Residual variance; zero when the fit is exactly determined.
    let s2 = if points.len() > 2 {
        ssr / (n - 2.0)
    } else {
        0.0
    };
    let var_slope = s2 / sxx;
    let var_intercept = s2 * (1.0 / n + mx * mx / sxx);
    Ok(FitResult {
        parameters: vec![
            FitParameter {
                name: "slope".into(),
                value: slope,
                variance: var_slope,
            },
            FitParameter {
                name: "intercept".into(),
                value: intercept,
                variance: var_intercept,
            },
        ],
        residual_norm: ssr.sqrt(),
        iterations: 1,
    })
}

/// Frequency-response model classes for the ratio-error data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResponseModel {
    /// delta(f) = eps_h + eps_e * f — frequency-flat term plus a linear
    /// eddy-type rise.
    RatioErrorAffine,
    /// delta(f) = scale * (1 - h) / sqrt(1 + (f/f_e)^2) with fixed unit
    /// scale — the flux-transfer attenuation shape. Parameters (h, f_e).
    TransferAttenuation,
    /// Degenerate single-parameter case: constant level (eps_e fixed 0).
    ConstantLevel,
}

impl ResponseModel {
    pub fn parameter_names(&self) -> &'static [&'static str] {
        match self {
            ResponseModel::RatioErrorAffine => &["eps_h", "eps_e"],
            ResponseModel::TransferAttenuation => &["h", "f_e"],
            ResponseModel::ConstantLevel => &["eps_h"],
        }
    }

    fn eval(&self, f: f64, p: &[f64]) -> f64 {
        match self {
            ResponseModel::RatioErrorAffine => p[0] + p[1] * f,
            ResponseModel::TransferAttenuation => {
                let r = f / p[1];
                (1.0 - p[0]) / (1.0 + r * r).sqrt()
            }
            ResponseModel::ConstantLevel => p[0],
        }
    }

    fn jacobian_row(&self, f: f64, p: &[f64], row: &mut [f64]) {
        match self {
            ResponseModel::RatioErrorAffine => {
                row[0] = 1.0;
                row[1] = f;
            }
            ResponseModel::TransferAttenuation => {
                let r = f / p[1];
                let den = (1.0 + r * r).sqrt();
                row[0] = -1.0 / den;
                row[1] = (1.0 - p[0]) * r * r / (p[1] * den * den * den);
            }
            ResponseModel::ConstantLevel => {
                row[0] = 1.0;
            }
        }
    }

    fn initial_guess(&self, points: &[(f64, f64)]) -> Vec<f64> {
        let mean_y = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
        match self {
            ResponseModel::RatioErrorAffine => {
                // Seed from a crude line fit so Gauss-Newton starts close.
                fit_line(points)
                    .map(|r| vec![r.value("intercept").unwrap(), r.value("slope").unwrap()])
                    .unwrap_or(vec![mean_y, 0.0])
            }
            ResponseModel::TransferAttenuation => {
                let f_max = points.iter().map(|p| p.0).fold(0.0, f64::max);
                vec![0.0, (f_max / 2.0).max(1.0)]
            }
            ResponseModel::ConstantLevel => vec![mean_y],
        }
    }
}

const MAX_ITERATIONS: usize = 100;
const STEP_TOLERANCE: f64 = 1e-10;

/// Nonlinear least squares on (f, delta) points: Gauss-Newton with
/// Levenberg damping, converged when the relative step drops below
/// 1e-10 or after 100 iterations (then an error carrying the last
/// iterate).
pub fn fit_frequency_response(points: &[(f64, f64)], model: ResponseModel) -> Result<FitResult> {
    let names = model.parameter_names();
    let np = names.len();
    if points.len() < np + 1 {
        return Err(Error::data(format!(
            "need at least {} points for a {np}-parameter fit",
            np + 1
        )));
    }
    if points.iter().any(|p| p.0 < 0.0) {
        return Err(Error::data("frequencies must be non-negative"));
    }

    let mut params = model.initial_guess(points);
    let mut lambda = 1e-3;
    let mut ssr = sum_sq_residuals(points, model, &params);
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=MAX_ITERATIONS {
        iterations = iter;
        // Normal equations (J^T J + lambda diag(J^T J)) step = J^T r.
        let (jtj, jtr) = normal_equations(points, model, &params);
        let mut step = None;
        for _ in 0..12 {
            let mut damped = jtj.clone();
            for i in 0..np {
                damped[i][i] += lambda * jtj[i][i].max(1e-300);
            }
            if let Some(delta) = solve_small(&damped, &jtr) {
                let trial: Vec<f64> = params.iter().zip(&delta).map(|(p, d)| p + d).collect();
                let trial_ssr = sum_sq_residuals(points, model, &trial);
                if trial_ssr.is_finite() && trial_ssr <= ssr {
                    step = Some((trial, trial_ssr, delta));
                    break;
                }
            }
            lambda *= 10.0;
        }
        let Some((trial, trial_ssr, delta)) = step else {
            break; // damping exhausted; report non-convergence below
        };
        lambda = (lambda / 10.0).max(1e-12);
        let rel_step = delta
            .iter()
            .zip(&trial)
            .map(|(d, p)| (d / p.abs().max(1e-300)).abs())
            .fold(0.0, f64::max);
        params = trial;
        ssr = trial_ssr;
        if rel_step < STEP_TOLERANCE {
            converged = true;
            break;
        }
    }

    if !converged {
        return Err(Error::NonConvergence {
            iterations,
            residual_norm: ssr.sqrt(),
            last_parameters: params,
        });
    }

    // Parameter covariance from the Gauss-Newton approximation:
    // s^2 (J^T J)^-1 with s^2 the residual variance.
    let dof = points.len().saturating_sub(np);
    let s2 = if dof > 0 { ssr / dof as f64 } else { 0.0 };
    let (jtj, _) = normal_equations(points, model, &params);
    let variances = invert_diag(&jtj).map(|d| d.iter().map(|v| v * s2).collect::<Vec<_>>());
    let parameters = names
        .iter()
        .enumerate()
        .map(|(i, name)| FitParameter {
            name: (*name).into(),
            value: params[i],
            variance: variances.as_ref().map_or(f64::NAN, |v| v[i]),
        })
        .collect();
    Ok(FitResult {
        parameters,
        residual_norm: ssr.sqrt(),
        iterations,
    })
}

fn sum_sq_residuals(points: &[(f64, f64)], model: ResponseModel, p: &[f64]) -> f64 {
    points
        .iter()
        .map(|&(f, y)| (y - model.eval(f, p)).powi(2))
        .sum()
}

type SmallMatrix = Vec<Vec<f64>>;

fn normal_equations(
    points: &[(f64, f64)],
    model: ResponseModel,
    p: &[f64],
) -> (SmallMatrix, Vec<f64>) {
    let np = p.len();
    let mut jtj = vec![vec![0.0; np]; np];
    let mut jtr = vec![0.0; np];
    let mut row = vec![0.0; np];
    for &(f, y) in points {
        model.jacobian_row(f, p, &mut row);
        let r = y - model.eval(f, p);
        for i in 0..np {
            jtr[i] += row[i] * r;
            for j in 0..np {
                jtj[i][j] += row[i] * row[j];
            }
        }
    }
    (jtj, jtr)
}

/// Gaussian elimination with partial pivoting; fine at 1-2 parameters.
fn solve_small(a: &SmallMatrix, b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(row, &rhs)| {
            let mut r = row.clone();
            r.push(rhs);
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap()
        })?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        for row in col + 1..n {
            let factor = m[row][col] / m[col][col];
            for k in col..=n {
                m[row][k] -= factor * m[col][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = m[row][n];
        for k in row + 1..n {
            acc -= m[row][k] * x[k];
        }
        x[row] = acc / m[row][row];
    }
    Some(x)
}

/// Diagonal of the inverse of a small symmetric matrix.
fn invert_diag(a: &SmallMatrix) -> Option<Vec<f64>> {
    let n = a.len();
    let mut diag = Vec::with_capacity(n);
    for i in 0..n {
        let mut unit = vec![0.0; n];
        unit[i] = 1.0;
        diag.push(solve_small(a, &unit)?[i]);
    }
    Some(diag)
}
