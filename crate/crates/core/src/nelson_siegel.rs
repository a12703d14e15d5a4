//! Nelson-Siegel loadings, cross-sectional factor fits and curve
//! reconstruction.
//!
//! A curve with decay `lambda` (per day) is
//!
//! ```text
//! p(tau) = b0 + b1 * (1 - e^{-lambda tau}) / (lambda tau)
//!             + b2 * ((1 - e^{-lambda tau}) / (lambda tau) - e^{-lambda tau})
//! ```
//!
//! For a fixed decay the curve is linear in the three factors, so each date's
//! fit is an ordinary least-squares problem solved by Householder QR.

use std::io::{Read, Write};

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::MaturityPanel;

/// Below this `lambda * tau` the loadings use their Taylor expansion.
const SERIES_THRESHOLD: f64 = 1e-8;

/// Level, slope and curvature loadings at one maturity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Loadings {
    pub lambda: f64,
    pub tau: f64,
    pub level: f64,
    pub slope: f64,
    pub curvature: f64,
}

impl Loadings {
    pub fn as_array(&self) -> [f64; 3] {
        [self.level, self.slope, self.curvature]
    }
}

fn slope_curvature(x: f64) -> (f64, f64) {
    if x < SERIES_THRESHOLD {
        (1.0 - x / 2.0 + x * x / 6.0, x / 2.0 - x * x / 3.0)
    } else {
        let e = (-x).exp();
        let s = -(-x).exp_m1() / x;
        (s, s - e)
    }
}

pub fn loadings(lambda: f64, tau: f64) -> Result<Loadings> {
    if !(lambda > 0.0 && lambda.is_finite()) || !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::invalid(format!("loadings need lambda > 0 and tau > 0, got {lambda}, {tau}")));
    }
    let (slope, curvature) = slope_curvature(lambda * tau);
    Ok(Loadings {
        lambda,
        tau,
        level: 1.0,
        slope,
        curvature,
    })
}

/// `x = lambda * tau` at which the curvature loading peaks, the root of
/// `x e^{-x} - (1 - e^{-x}) + x^2 e^{-x} = 0`. About 1.7933, so the peak
/// lies well beyond `1/lambda`.
pub fn curvature_peak_x() -> f64 {
    let g = |x: f64| x * (-x).exp() + (-x).exp_m1() + x * x * (-x).exp();
    let (mut lo, mut hi) = (1.0_f64, 3.0_f64);
    while hi - lo > 1e-15 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Maturity in days at which the curvature loading is largest.
pub fn curvature_peak_maturity(lambda: f64) -> f64 {
    curvature_peak_x() / lambda
}

/// `beta . loadings(lambda, tau)` at every maturity.
pub fn reconstruct_curve(beta: [f64; 3], lambda: f64, maturities: &[u32]) -> Vec<f64> {
    maturities
        .iter()
        .map(|&m| {
            let (s, c) = slope_curvature(lambda * m as f64);
            beta[0] + beta[1] * s + beta[2] * c
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossSectionFit {
    pub beta: [f64; 3],
    pub sse: f64,
}

/// Factorised design matrix `[1, slope, curvature]` for one decay and grid.
/// Reusable across every date of a panel.
#[derive(Debug, Clone)]
pub struct NsDesign {
    lambda: f64,
    x: DMatrix<f64>,
    qt: DMatrix<f64>,
    r: Matrix3<f64>,
}

impl NsDesign {
    pub fn new(lambda: f64, maturities: &[u32]) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
        }
        if maturities.len() < 3 {
            return Err(Error::RankDeficient(format!("{} maturities cannot identify 3 factors", maturities.len())));
        }
        let n = maturities.len();
        let mut x = DMatrix::<f64>::zeros(n, 3);
        for (i, &m) in maturities.iter().enumerate() {
            if m == 0 {
                return Err(Error::invalid("maturities must be positive"));
            }
            let (s, c) = slope_curvature(lambda * m as f64);
            x[(i, 0)] = 1.0;
            x[(i, 1)] = s;
            x[(i, 2)] = c;
        }
        let qr = x.clone().qr();
        let r_full = qr.r();
        let diag: Vec<f64> = (0..3).map(|i| r_full[(i, i)].abs()).collect();
        let max = diag.iter().copied().fold(0.0, f64::max);
        if diag.iter().any(|d| *d <= 1e-10 * max) {
            return Err(Error::RankDeficient(format!("design at lambda={lambda} has |R| diagonal {diag:?}")));
        }
        let r = Matrix3::from_fn(|i, j| r_full[(i, j)]);
        let qt = qr.q().transpose();
        Ok(Self { lambda, x, qt, r })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn fit(&self, prices: &[f64]) -> Result<CrossSectionFit> {
        if prices.len() != self.x.nrows() {
            return Err(Error::invalid(format!("{} prices for {} maturities", prices.len(), self.x.nrows())));
        }
        let y = DVector::from_column_slice(prices);
        let qty = &self.qt * &y;
        let rhs = Vector3::new(qty[0], qty[1], qty[2]);
        let beta = self
            .r
            .solve_upper_triangular(&rhs)
            .ok_or_else(|| Error::RankDeficient("triangular solve failed".into()))?;
        let beta = [beta[0], beta[1], beta[2]];
        let sse = self
            .x
            .row_iter()
            .zip(prices)
            .map(|(row, p)| {
                let r = p - (beta[0] * row[0] + beta[1] * row[1] + beta[2] * row[2]);
                r * r
            })
            .sum();
        Ok(CrossSectionFit { beta, sse })
    }
}

/// Least-squares factors for one cross-section.
pub fn fit_cross_section(prices: &[f64], maturities: &[u32], lambda: f64) -> Result<CrossSectionFit> {
    NsDesign::new(lambda, maturities)?.fit(prices)
}

/// Per-date level, slope and curvature under one fixed decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSeries {
    pub dates: Vec<NaiveDate>,
    pub beta: Vec<[f64; 3]>,
    pub lambda_star: f64,
    /// Residual sum of squares of each date's fit, USD squared.
    pub sse: Vec<f64>,
}

impl FactorSeries {
    pub fn new(dates: Vec<NaiveDate>, beta: Vec<[f64; 3]>, lambda_star: f64, sse: Vec<f64>) -> Result<Self> {
        if beta.len() != dates.len() || sse.len() != dates.len() {
            return Err(Error::invalid("factor series lengths differ"));
        }
        if !(lambda_star > 0.0) {
            return Err(Error::invalid("lambda_star must be positive"));
        }
        Ok(Self {
            dates,
            beta,
            lambda_star,
            sse,
        })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// One factor as a plain series (0 = level, 1 = slope, 2 = curvature).
    pub fn factor(&self, i: usize) -> Vec<f64> {
        self.beta.iter().map(|b| b[i]).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["date", "beta0", "beta1", "beta2", "sse"])?;
        for ((d, b), s) in self.dates.iter().zip(&self.beta).zip(&self.sse) {
            out.write_record([
                d.to_string(),
                b[0].to_string(),
                b[1].to_string(),
                b[2].to_string(),
                s.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, lambda_star: f64) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let (mut dates, mut beta, mut sse) = (Vec::new(), Vec::new(), Vec::new());
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| Error::MalformedRow {
                line: i + 2,
                message: format!("bad {what}"),
            };
            let num = |k: usize| rec.get(k).and_then(|s| s.parse::<f64>().ok());
            dates.push(
                NaiveDate::parse_from_str(rec.get(0).unwrap_or(""), "%Y-%m-%d").map_err(|_| bad("date"))?,
            );
            beta.push([
                num(1).ok_or_else(|| bad("beta0"))?,
                num(2).ok_or_else(|| bad("beta1"))?,
                num(3).ok_or_else(|| bad("beta2"))?,
            ]);
            sse.push(num(4).ok_or_else(|| bad("sse"))?);
        }
        Self::new(dates, beta, lambda_star, sse)
    }
}

/// Fits every row of the panel at `lambda_star`.
pub fn extract_factors(panel: &MaturityPanel, lambda_star: f64) -> Result<FactorSeries> {
    let design = NsDesign::new(lambda_star, panel.maturities())?;
    let fits: Vec<CrossSectionFit> = (0..panel.n_dates())
        .into_par_iter()
        .map(|t| design.fit(panel.row(t)).map_err(|e| e.at(panel.dates()[t])))
        .collect::<Result<_>>()?;
    FactorSeries::new(
        panel.dates().to_vec(),
        fits.iter().map(|f| f.beta).collect(),
        lambda_star,
        fits.iter().map(|f| f.sse).collect(),
    )
}
