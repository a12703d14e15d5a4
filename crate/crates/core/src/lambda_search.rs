//! Decay parameter search.
//!
//! For a fixed decay the factor fit is linear, so the total squared error of
//! the best fit is an exact one-dimensional profile in lambda. The profile is
//! scanned on a log-spaced grid and the best cell refined by golden-section
//! search.

use std::io::Write;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nelson_siegel::NsDesign;
use crate::panel::MaturityPanel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaDomain {
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl Default for LambdaDomain {
    /// `1/lambda` between 30 and 1000 days.
    fn default() -> Self {
        Self::from_inverse_days(30.0, 1000.0)
    }
}

impl LambdaDomain {
    /// Domain whose `1/lambda` lies in `[lo, hi]` days.
    pub fn from_inverse_days(lo: f64, hi: f64) -> Self {
        Self {
            lambda_min: 1.0 / hi,
            lambda_max: 1.0 / lo,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda_min > 0.0 && self.lambda_max.is_finite() && self.lambda_min < self.lambda_max) {
            return Err(Error::invalid(format!(
                "degenerate lambda domain [{}, {}]",
                self.lambda_min, self.lambda_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub grid_points: usize,
    /// Relative width at which golden-section refinement stops.
    pub rel_tol: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            grid_points: 200,
            rel_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaSearchResult {
    pub lambda_star: f64,
    pub total_sse: f64,
    /// Every evaluated `(lambda, total SSE)`, sorted by lambda.
    pub profile: Vec<(f64, f64)>,
}

impl LambdaSearchResult {
    pub fn write_profile_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["lambda", "total_sse"])?;
        for (l, s) in &self.profile {
            out.write_record([l.to_string(), s.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Total SSE of the best factor fits of `rows` at one decay.
fn profile_sse<'a>(lambda: f64, maturities: &[u32], rows: impl Iterator<Item = &'a [f64]>) -> Result<f64> {
    let design = NsDesign::new(lambda, maturities)?;
    rows.map(|r| design.fit(r).map(|f| f.sse)).sum()
}

fn log_grid(domain: &LambdaDomain, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![(domain.lambda_min * domain.lambda_max).sqrt()];
    }
    let (a, b) = (domain.lambda_min.ln(), domain.lambda_max.ln());
    (0..n)
        .map(|i| {
            if i == n - 1 {
                domain.lambda_max
            } else {
                (a + (b - a) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

/// Minimises a unimodal function on `[lo, hi]`, recording every evaluation.
pub fn golden_section<F>(mut f: F, mut lo: f64, mut hi: f64, rel_tol: f64, evals: &mut Vec<(f64, f64)>) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    evals.push((c, fc));
    evals.push((d, fd));
    while (hi - lo) > rel_tol * 0.5 * (hi + lo).abs() {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c)?;
            evals.push((c, fc));
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d)?;
            evals.push((d, fd));
        }
    }
    Ok(if fc <= fd { c } else { d })
}

fn search<F>(objective: F, domain: &LambdaDomain, opts: &SearchOptions) -> Result<(f64, f64, Vec<(f64, f64)>)>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    domain.validate()?;
    if opts.grid_points == 0 {
        return Err(Error::invalid("lambda grid needs at least one point"));
    }
    let grid = log_grid(domain, opts.grid_points);
    let mut profile: Vec<(f64, f64)> = grid
        .par_iter()
        .map(|&l| objective(l).map(|s| (l, s)))
        .collect::<Result<_>>()?;
    let best = profile
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .map(|(i, _)| i)
        .expect("non-empty grid");
    if grid.len() > 1 {
        let lo = grid[best.saturating_sub(1)];
        let hi = grid[(best + 1).min(grid.len() - 1)];
        golden_section(&objective, lo, hi, opts.rel_tol, &mut profile)?;
    }
    profile.sort_by(|a, b| a.0.total_cmp(&b.0));
    profile.dedup_by(|a, b| a.0 == b.0);
    let (lambda_star, total_sse) = profile
        .iter()
        .copied()
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)))
        .expect("non-empty profile");
    Ok((lambda_star, total_sse, profile))
}

/// Single decay minimising the squared error summed over all panel dates.
pub fn search_lambda_global(
    panel: &MaturityPanel,
    domain: &LambdaDomain,
    opts: &SearchOptions,
) -> Result<LambdaSearchResult> {
    if panel.is_empty() {
        return Err(Error::InsufficientData("lambda search on an empty panel".into()));
    }
    let (lambda_star, total_sse, profile) =
        search(|l| profile_sse(l, panel.maturities(), panel.rows()), domain, opts)?;
    Ok(LambdaSearchResult {
        lambda_star,
        total_sse,
        profile,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DateLambda {
    pub date: NaiveDate,
    pub lambda: f64,
    pub sse: f64,
    /// False when the cross-section does not depend on lambda (flat curve).
    pub identified: bool,
}

/// Unconstrained per-date optimum of the decay. Diagnostic only.
pub fn search_lambda_per_date(
    panel: &MaturityPanel,
    domain: &LambdaDomain,
    opts: &SearchOptions,
) -> Result<Vec<DateLambda>> {
    if panel.is_empty() {
        return Err(Error::InsufficientData("lambda search on an empty panel".into()));
    }
    domain.validate()?;
    (0..panel.n_dates())
        .into_par_iter()
        .map(|t| {
            let row = panel.row(t);
            let date = panel.dates()[t];
            let (lambda, sse, profile) = search(
                |l| profile_sse(l, panel.maturities(), std::iter::once(row)),
                domain,
                opts,
            )
            .map_err(|e| e.at(date))?;
            let max = profile.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
            let energy: f64 = row.iter().map(|p| p * p).sum();
            if max - sse <= 1e-12 * energy.max(1.0) {
                let sse = profile_sse(domain.lambda_min, panel.maturities(), std::iter::once(row))?;
                return Ok(DateLambda {
                    date,
                    lambda: domain.lambda_min,
                    sse,
                    identified: false,
                });
            }
            Ok(DateLambda {
                date,
                lambda,
                sse,
                identified: true,
            })
        })
        .collect()
}

pub fn write_per_date_csv<W: Write>(rows: &[DateLambda], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["date", "lambda", "sse", "identified"])?;
    for r in rows {
        out.write_record([r.date.to_string(), r.lambda.to_string(), r.sse.to_string(), r.identified.to_string()])?;
    }
    out.flush()?;
    Ok(())
}
