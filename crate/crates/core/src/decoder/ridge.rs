use nalgebra::{Cholesky, DMatrix};

use super::DecoderError;
use crate::eeg::Standardization;

/// `f(R) = standardize(R) β`.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    /// D × P
    pub beta: DMatrix<f64>,
    pub lambda: f64,
    /// Applied to inputs before `beta`, when present.
    pub train_stats: Option<Standardization>,
}

fn check(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<(), DecoderError> {
    if x.nrows() != y.nrows() {
        return Err(DecoderError::ShapeMismatch(format!("X has {} rows, Y has {}", x.nrows(), y.nrows())));
    }
    if x.nrows() < 2 {
        return Err(DecoderError::TooFewRows(x.nrows()));
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(DecoderError::Config(format!("lambda must be positive, got {lambda}")));
    }
    Ok(())
}

fn solve_spd(mut a: DMatrix<f64>, lambda: f64, b: &DMatrix<f64>) -> Result<DMatrix<f64>, DecoderError> {
    for i in 0..a.nrows() {
        a[(i, i)] += lambda;
    }
    let chol = Cholesky::new(a).ok_or(DecoderError::Singular(lambda))?;
    let sol = chol.solve(b);
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(DecoderError::Singular(lambda));
    }
    Ok(sol)
}

/// `β = (XᵀX + λI)⁻¹ XᵀY`
pub fn fit_ridge_primal(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<RidgeModel, DecoderError> {
    check(x, y, lambda)?;
    let beta = solve_spd(x.tr_mul(x), lambda, &x.tr_mul(y))?;
    Ok(RidgeModel {
        beta,
        lambda,
        train_stats: None,
    })
}

/// `β = Xᵀ (XXᵀ + λI)⁻¹ Y`
pub fn fit_ridge_dual(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<RidgeModel, DecoderError> {
    check(x, y, lambda)?;
    let alpha = solve_spd(x * x.transpose(), lambda, y)?;
    Ok(RidgeModel {
        beta: x.tr_mul(&alpha),
        lambda,
        train_stats: None,
    })
}

/// Minimizes `‖Xβ − Y‖² + λ‖β‖²`, through the n × n dual system when
/// there are fewer rows than features.
pub fn fit_ridge(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<RidgeModel, DecoderError> {
    if x.nrows() < x.ncols() {
        fit_ridge_dual(x, y, lambda)
    } else {
        fit_ridge_primal(x, y, lambda)
    }
}

/// Z-scores `x` with its own statistics, fits, and keeps the statistics
/// for [`predict`].
pub fn fit_ridge_standardized(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<RidgeModel, DecoderError> {
    let stats = Standardization::fit(x);
    let mut model = fit_ridge(&stats.apply(x)?, y, lambda)?;
    model.train_stats = Some(stats);
    Ok(model)
}

pub fn predict(model: &RidgeModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>, DecoderError> {
    if x.ncols() != model.beta.nrows() {
        return Err(DecoderError::ShapeMismatch(format!("X has {} columns, model expects {}", x.ncols(), model.beta.nrows())));
    }
    Ok(match &model.train_stats {
        Some(stats) => stats.apply(x)? * &model.beta,
        None => x * &model.beta,
    })
}
