//! Random walk and direct-projection AR(1) / VAR(1) benchmarks.
//!
//! A direct `h`-step model regresses `beta_t` on `[1, beta_{t-h}]` and
//! forecasts `beta_{t+h} = c + G beta_t` without iterating one-step fits.

use std::ops::Range;

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::split::pairs_within;
use crate::nelson_siegel::FactorSeries;

pub const MIN_AR_PAIRS: usize = 10;
pub const MIN_VAR_PAIRS: usize = 15;

/// Least squares `x b = y` by Householder QR; errors on numerical rank loss.
pub(crate) fn ols(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = x.ncols();
    let qr = x.clone().qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..p).map(|i| r[(i, i)].abs()).collect();
    let max = diag.iter().copied().fold(0.0, f64::max);
    if max == 0.0 || diag.iter().any(|d| *d <= 1e-12 * max) {
        return Err(Error::RankDeficient(format!("regression design has |R| diagonal {diag:?}")));
    }
    let qty = qr.q().transpose() * y;
    r.solve_upper_triangular(&qty)
        .ok_or_else(|| Error::RankDeficient("triangular solve failed".into()))
}

/// `beta_hat_{t+h} = beta_t` at each origin.
pub fn forecast_rw(series: &FactorSeries, origins: &[usize]) -> Result<Vec<[f64; 3]>> {
    origins
        .iter()
        .map(|&t| {
            series
                .beta
                .get(t)
                .copied()
                .ok_or_else(|| Error::invalid(format!("origin {t} outside a series of {}", series.len())))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ar1Fit {
    pub intercept: f64,
    pub coef: f64,
}

impl Ar1Fit {
    pub fn predict(&self, current: f64) -> f64 {
        self.intercept + self.coef * current
    }
}

/// Regresses `y_t` on `[1, y_{t-h}]` over pairs inside `fit`.
pub fn fit_ar1_direct(series: &[f64], h: usize, fit: Range<usize>) -> Result<Ar1Fit> {
    let fit = fit.start..fit.end.min(series.len());
    let origins = pairs_within(&fit, h, 1, 1);
    if origins.len() < MIN_AR_PAIRS {
        return Err(Error::InsufficientData(format!(
            "AR(1) needs {MIN_AR_PAIRS} pairs, {} available",
            origins.len()
        )));
    }
    let xs: Vec<f64> = origins.iter().map(|&s| series[s]).collect();
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
    if var <= 1e-24 * mean.abs().max(1.0).powi(2) {
        return Err(Error::ZeroVariance("AR(1) regressor is constant".into()));
    }
    let x = DMatrix::from_fn(origins.len(), 2, |i, j| if j == 0 { 1.0 } else { xs[i] });
    let y = DMatrix::from_fn(origins.len(), 1, |i, _| series[origins[i] + h]);
    let b = ols(&x, &y)?;
    Ok(Ar1Fit {
        intercept: b[(0, 0)],
        coef: b[(1, 0)],
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Var1Fit {
    pub intercept: Vector3<f64>,
    pub coef: Matrix3<f64>,
}

impl Var1Fit {
    pub fn predict(&self, current: [f64; 3]) -> [f64; 3] {
        let v = self.intercept + self.coef * Vector3::from(current);
        [v[0], v[1], v[2]]
    }
}

/// Multivariate regression of `beta_t` on `[1, beta_{t-h}]` over pairs
/// inside `fit`.
pub fn fit_var1_direct(series: &[[f64; 3]], h: usize, fit: Range<usize>) -> Result<Var1Fit> {
    let fit = fit.start..fit.end.min(series.len());
    let origins = pairs_within(&fit, h, 1, 1);
    if origins.len() < MIN_VAR_PAIRS {
        return Err(Error::InsufficientData(format!(
            "VAR(1) needs {MIN_VAR_PAIRS} pairs, {} available",
            origins.len()
        )));
    }
    let x = DMatrix::from_fn(origins.len(), 4, |i, j| if j == 0 { 1.0 } else { series[origins[i]][j - 1] });
    let y = DMatrix::from_fn(origins.len(), 3, |i, j| series[origins[i] + h][j]);
    let b = ols(&x, &y).map_err(|e| match e {
        Error::RankDeficient(m) => Error::RankDeficient(format!("VAR(1) regressors are collinear: {m}")),
        e => e,
    })?;
    Ok(Var1Fit {
        intercept: Vector3::new(b[(0, 0)], b[(0, 1)], b[(0, 2)]),
        coef: Matrix3::from_fn(|i, j| b[(j + 1, i)]),
    })
}
