//! Factor paths and price panels with known ground truth.
//!
//! All randomness comes from `rng::job_rng(seed, ...)`, with separate
//! streams for the factor innovations, start values and price noise.

use chrono::{Datelike, Months, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::calendar::{expiry_date, TradingCalendar};
use crate::error::{Error, Result};
use crate::forecast::network::{param_count, Activation, Mlp};
use crate::nelson_siegel::{reconstruct_curve, FactorSeries};
use crate::panel::{MaturityPanel, Provenance};
use crate::quotes::{ContractCode, FuturesQuote};
use crate::rng::{job_rng, standard_normal, uniform};

const NOISE_STREAM: u64 = 1;
const START_STREAM: u64 = 2;
const PRICE_STREAM: u64 = 3;

/// Law of motion of `beta_t`. Innovations with `noise_std` are added to
/// every kind except `constant` and `linear_trend`, where they are added to
/// the deterministic path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FactorProcess {
    Constant {
        beta: [f64; 3],
    },
    LinearTrend {
        start: [f64; 3],
        slope: [f64; 3],
    },
    /// `beta_i,t = c_i + g_i beta_i,t-1`.
    Ar1 {
        intercept: [f64; 3],
        coef: [f64; 3],
        start: [f64; 3],
    },
    /// `beta_t = c + G beta_t-1`, `coef` row-major.
    Var1 {
        intercept: [f64; 3],
        coef: [[f64; 3]; 3],
        start: [f64; 3],
    },
    /// `u_t = r u_t-1 (1 - u_t-1)` per factor, observed as
    /// `beta = center + scale (u - 0.5)`. Start values are drawn uniformly
    /// from (0.1, 0.9); noise is added in `beta` units and the state is kept
    /// inside (0, 1).
    LogisticMap {
        r: [f64; 3],
        center: [f64; 3],
        scale: [f64; 3],
    },
    /// `beta_i,t = net_i(beta_i,t-1)` with per-factor network weights in
    /// the layout of `forecast::network::Mlp`.
    TeacherNetwork {
        hidden: usize,
        activation: Activation,
        weights: [Vec<f64>; 3],
        start: [f64; 3],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorProcessSpec {
    #[serde(flatten)]
    pub process: FactorProcess,
    pub noise_std: [f64; 3],
    pub len: usize,
    pub seed: u64,
    /// Decay attached to the generated series.
    pub lambda: f64,
    /// First month of the path; dates are last weekdays of consecutive months.
    pub start_month: NaiveDate,
}

impl FactorProcessSpec {
    pub fn new(process: FactorProcess, len: usize, seed: u64) -> Self {
        Self {
            process,
            noise_std: [0.0; 3],
            len,
            seed,
            lambda: 0.0058,
            start_month: NaiveDate::from_ymd_opt(1990, 1, 1).expect("valid date"),
        }
    }

    pub fn with_noise(mut self, noise_std: [f64; 3]) -> Self {
        self.noise_std = noise_std;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.len < 2 {
            return bad(format!("path length {} is below 2", self.len));
        }
        if self.noise_std.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("noise_std must be finite and non-negative".into());
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be positive".into());
        }
        match &self.process {
            FactorProcess::LogisticMap { r, scale, .. } => {
                if r.iter().any(|r| !(0.0..=4.0).contains(r)) {
                    return bad("logistic map r must lie in [0, 4]".into());
                }
                if scale.iter().any(|s| !s.is_finite()) {
                    return bad("logistic map scale must be finite".into());
                }
            }
            FactorProcess::TeacherNetwork { hidden, weights, .. } => {
                if *hidden == 0 {
                    return bad("teacher network needs at least one hidden unit".into());
                }
                let p = param_count(1, *hidden);
                if weights.iter().any(|w| w.len() != p) {
                    return bad(format!("teacher weights must have {p} entries per factor"));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Last weekday of each of `n` consecutive months from `start`'s month.
pub fn month_end_weekdays(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let first = start.with_day(1).expect("day 1 exists");
    (0..n)
        .map(|i| {
            let next = first + Months::new(i as u32 + 1);
            let mut d = next.pred_opt().expect("in range");
            while d.weekday().number_from_monday() > 5 {
                d = d.pred_opt().expect("in range");
            }
            d
        })
        .collect()
}

/// A generated path together with the specification that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedFactors {
    pub series: FactorSeries,
    pub spec: FactorProcessSpec,
}

pub fn generate_factors(spec: &FactorProcessSpec) -> Result<GeneratedFactors> {
    spec.validate()?;
    let n = spec.len;
    let mut noise_rng = job_rng(spec.seed, &[NOISE_STREAM]);
    let mut eps = |i: usize| spec.noise_std[i] * standard_normal(&mut noise_rng);
    let mut beta: Vec<[f64; 3]> = Vec::with_capacity(n);

    match &spec.process {
        FactorProcess::Constant { beta: b } => {
            for _ in 0..n {
                beta.push(std::array::from_fn(|i| b[i] + eps(i)));
            }
        }
        FactorProcess::LinearTrend { start, slope } => {
            for t in 0..n {
                beta.push(std::array::from_fn(|i| start[i] + slope[i] * t as f64 + eps(i)));
            }
        }
        FactorProcess::Ar1 { intercept, coef, start } => {
            beta.push(*start);
            for t in 1..n {
                let prev = beta[t - 1];
                beta.push(std::array::from_fn(|i| intercept[i] + coef[i] * prev[i] + eps(i)));
            }
        }
        FactorProcess::Var1 { intercept, coef, start } => {
            beta.push(*start);
            for t in 1..n {
                let prev = beta[t - 1];
                beta.push(std::array::from_fn(|i| {
                    intercept[i] + (0..3).map(|j| coef[i][j] * prev[j]).sum::<f64>() + eps(i)
                }));
            }
        }
        FactorProcess::LogisticMap { r, center, scale } => {
            let mut start_rng = job_rng(spec.seed, &[START_STREAM]);
            let mut u: [f64; 3] = std::array::from_fn(|_| uniform(&mut start_rng, 0.1, 0.9));
            for t in 0..n {
                if t > 0 {
                    for i in 0..3 {
                        let shock = if scale[i] != 0.0 { eps(i) / scale[i] } else { 0.0 };
                        u[i] = (r[i] * u[i] * (1.0 - u[i]) + shock).clamp(1e-9, 1.0 - 1e-9);
                    }
                }
                beta.push(std::array::from_fn(|i| center[i] + scale[i] * (u[i] - 0.5)));
            }
        }
        FactorProcess::TeacherNetwork {
            hidden,
            activation,
            weights,
            start,
        } => {
            let mlp = Mlp {
                inputs: 1,
                hidden: *hidden,
                activation: *activation,
            };
            beta.push(*start);
            for t in 1..n {
                let prev = beta[t - 1];
                beta.push(std::array::from_fn(|i| mlp.output(&weights[i], &[prev[i]]) + eps(i)));
            }
        }
    }

    if let Some(t) = beta.iter().position(|b| b.iter().any(|v| !v.is_finite())) {
        return Err(Error::Config(format!("factor path diverges at step {t}")));
    }
    let dates = month_end_weekdays(spec.start_month, n);
    let series = FactorSeries::new(dates, beta, spec.lambda, vec![0.0; n])?;
    Ok(GeneratedFactors {
        series,
        spec: spec.clone(),
    })
}

/// Curves `reconstruct_curve(beta_t, lambda)` on `grid`, plus i.i.d.
/// normal noise of `noise_std`. Every cell is flagged observed.
pub fn generate_panel(factors: &FactorSeries, lambda: f64, grid: &[u32], noise_std: f64, seed: u64) -> Result<MaturityPanel> {
    if !(lambda > 0.0) {
        return Err(Error::invalid("lambda must be positive"));
    }
    let mut rng = job_rng(seed, &[PRICE_STREAM]);
    let mut prices = Vec::with_capacity(factors.len() * grid.len());
    for b in &factors.beta {
        for p in reconstruct_curve(*b, lambda, grid) {
            let noise = if noise_std > 0.0 { noise_std * standard_normal(&mut rng) } else { 0.0 };
            prices.push(p + noise);
        }
    }
    let provenance = vec![Provenance::Observed; prices.len()];
    MaturityPanel::new(factors.dates.clone(), grid.to_vec(), prices, provenance)
}

/// Settlement quotes for the next `contracts` delivery months on every
/// factor date, priced off the curve at each contract's trading-day
/// maturity. Contracts already expired on a date are skipped.
pub fn generate_quotes(
    factors: &FactorSeries,
    lambda: f64,
    product: &str,
    contracts: u32,
    calendar: &TradingCalendar,
) -> Result<Vec<FuturesQuote>> {
    let mut out = Vec::new();
    for (t, date) in factors.dates.iter().enumerate() {
        let base = date.with_day(1).expect("day 1 exists");
        for k in 1..=contracts + 1 {
            let delivery = base + Months::new(k);
            let expiry = expiry_date(delivery.month(), delivery.year(), calendar)?;
            if expiry < *date {
                continue;
            }
            let tau = calendar.trading_days_between(*date, expiry);
            if tau == 0 {
                continue;
            }
            let price = reconstruct_curve(factors.beta[t], lambda, &[tau])[0];
            out.push(FuturesQuote {
                contract: ContractCode {
                    product: product.to_string(),
                    delivery_month: delivery.month(),
                    delivery_year: delivery.year(),
                },
                observation_date: *date,
                settle: price,
                expiry: None,
                tau: None,
            });
        }
    }
    Ok(out)
}

/// The chaotic two-unit hump map used by the demo and the tests:
/// `x -> 1.1 (L(10x - 2.5) - L(10x - 7.5))` with `L` the logistic function.
pub fn hump_map_weights() -> Vec<f64> {
    vec![-2.5, 10.0, -7.5, 10.0, 0.0, 1.1, -1.1]
}

/// Logistic-map factors around typical crude-oil curve levels.
pub fn logistic_map_process() -> FactorProcess {
    FactorProcess::LogisticMap {
        r: [3.8, 3.7, 3.6],
        center: [70.0, -4.0, 2.0],
        scale: [40.0, 8.0, 6.0],
    }
}
