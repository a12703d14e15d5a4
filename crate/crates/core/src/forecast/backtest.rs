use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::ftdnn::{select_ftdnn_scored, train_ftdnn, CandidateScore};
use crate::forecast::linear::{fit_ar1_direct, fit_var1_direct, forecast_rw};
use crate::forecast::network::{NetworkConfig, TrainedNetwork, MAX_HIDDEN};
use crate::forecast::split::BacktestSplit;
use crate::nelson_siegel::{reconstruct_curve, FactorSeries};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelId {
    #[serde(rename = "FTDNN")]
    Ftdnn,
    #[serde(rename = "AR1")]
    Ar1,
    #[serde(rename = "VAR1")]
    Var1,
    #[serde(rename = "RW")]
    Rw,
}

impl ModelId {
    pub const ALL: [ModelId; 4] = [ModelId::Ftdnn, ModelId::Ar1, ModelId::Var1, ModelId::Rw];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelId::Ftdnn => "FTDNN",
            ModelId::Ar1 => "AR1",
            ModelId::Var1 => "VAR1",
            ModelId::Rw => "RW",
        }
    }

    fn stream(self) -> u64 {
        match self {
            ModelId::Ftdnn => 1,
            ModelId::Ar1 => 2,
            ModelId::Var1 => 3,
            ModelId::Rw => 4,
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "FTDNN" => Ok(ModelId::Ftdnn),
            "AR1" | "AR" => Ok(ModelId::Ar1),
            "VAR1" | "VAR" => Ok(ModelId::Var1),
            "RW" => Ok(ModelId::Rw),
            _ => Err(Error::Config(format!("unknown model `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefitPolicy {
    /// Estimate once on the training range.
    #[default]
    Fixed,
    /// Re-estimate at every origin on the most recent window of the same length.
    Rolling,
}

impl FromStr for RefitPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fixed" => Ok(RefitPolicy::Fixed),
            "rolling" => Ok(RefitPolicy::Rolling),
            _ => Err(Error::Config(format!("unknown refit policy `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestOptions {
    pub models: Vec<ModelId>,
    /// Panel steps.
    pub horizons: Vec<usize>,
    pub split: BacktestSplit,
    /// Template for every network; width, horizon and seed are overwritten.
    pub network: NetworkConfig,
    pub hidden_candidates: Vec<usize>,
    pub restarts: usize,
    pub seed: u64,
    pub refit: RefitPolicy,
    pub maturities: Vec<u32>,
}

impl BacktestOptions {
    pub fn new(split: BacktestSplit, maturities: Vec<u32>) -> Self {
        Self {
            models: ModelId::ALL.to_vec(),
            horizons: vec![1, 3, 6, 12],
            split,
            network: NetworkConfig::default(),
            hidden_candidates: (1..=MAX_HIDDEN).collect(),
            restarts: 10,
            seed: 0,
            refit: RefitPolicy::Fixed,
            maturities,
        }
    }
}

/// One model's forecasts at one horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRun {
    pub model: ModelId,
    pub horizon: usize,
    pub origins: Vec<usize>,
    pub origin_dates: Vec<NaiveDate>,
    pub target_dates: Vec<NaiveDate>,
    pub beta_hat: Vec<[f64; 3]>,
    pub lambda_star: f64,
    pub maturities: Vec<u32>,
    pub curves_hat: Vec<Vec<f64>>,
    /// FTDNN only: the level, slope and curvature networks.
    pub networks: Vec<TrainedNetwork>,
    pub selection: Vec<Vec<CandidateScore>>,
}

impl ForecastRun {
    fn assemble(
        model: ModelId,
        horizon: usize,
        factors: &FactorSeries,
        origins: Vec<usize>,
        beta_hat: Vec<[f64; 3]>,
        maturities: &[u32],
    ) -> Self {
        let curves_hat = beta_hat
            .iter()
            .map(|b| reconstruct_curve(*b, factors.lambda_star, maturities))
            .collect();
        Self {
            model,
            horizon,
            origin_dates: origins.iter().map(|&t| factors.dates[t]).collect(),
            target_dates: origins.iter().map(|&t| factors.dates[t + horizon]).collect(),
            origins,
            beta_hat,
            lambda_star: factors.lambda_star,
            maturities: maturities.to_vec(),
            curves_hat,
            networks: Vec::new(),
            selection: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelFailure {
    pub model: ModelId,
    pub horizon: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BacktestResult {
    pub runs: Vec<ForecastRun>,
    pub failures: Vec<ModelFailure>,
}

/// Test-range origins `t` whose target `t + h` is inside the sample.
pub fn test_origins(split: &BacktestSplit, n: usize, h: usize) -> Vec<usize> {
    split.test.clone().filter(|t| t + h < n).collect()
}

fn rolling_window(t: usize, len: usize) -> std::ops::Range<usize> {
    t + 1 - len.min(t + 1)..t + 1
}

fn run_linear(
    model: ModelId,
    factors: &FactorSeries,
    h: usize,
    origins: &[usize],
    opts: &BacktestOptions,
) -> Result<Vec<[f64; 3]>> {
    let train_len = opts.split.train.len();
    match (model, opts.refit) {
        (ModelId::Rw, _) => forecast_rw(factors, origins),
        (ModelId::Ar1, RefitPolicy::Fixed) => {
            let fits = (0..3)
                .map(|i| fit_ar1_direct(&factors.factor(i), h, opts.split.train.clone()))
                .collect::<Result<Vec<_>>>()?;
            Ok(origins
                .iter()
                .map(|&t| std::array::from_fn(|i| fits[i].predict(factors.beta[t][i])))
                .collect())
        }
        (ModelId::Ar1, RefitPolicy::Rolling) => {
            let series: Vec<Vec<f64>> = (0..3).map(|i| factors.factor(i)).collect();
            origins
                .iter()
                .map(|&t| {
                    let mut out = [0.0; 3];
                    for i in 0..3 {
                        out[i] = fit_ar1_direct(&series[i], h, rolling_window(t, train_len))?.predict(series[i][t]);
                    }
                    Ok(out)
                })
                .collect()
        }
        (ModelId::Var1, RefitPolicy::Fixed) => {
            let fit = fit_var1_direct(&factors.beta, h, opts.split.train.clone())?;
            Ok(origins.iter().map(|&t| fit.predict(factors.beta[t])).collect())
        }
        (ModelId::Var1, RefitPolicy::Rolling) => origins
            .iter()
            .map(|&t| Ok(fit_var1_direct(&factors.beta, h, rolling_window(t, train_len))?.predict(factors.beta[t])))
            .collect(),
        (ModelId::Ftdnn, _) => unreachable!("networks are handled separately"),
    }
}

fn restart_seeds(opts: &BacktestOptions, h: usize, factor: usize) -> Vec<u64> {
    (0..opts.restarts.max(1) as u64)
        .map(|r| derive_seed(opts.seed, &[ModelId::Ftdnn.stream(), h as u64, factor as u64, r]))
        .collect()
}

type NetworkOutcome = (Vec<f64>, Vec<TrainedNetwork>, Vec<CandidateScore>);

fn run_network_factor(factors: &FactorSeries, h: usize, factor: usize, origins: &[usize], opts: &BacktestOptions) -> Result<NetworkOutcome> {
    let series = factors.factor(factor);
    let base = NetworkConfig { horizon: h, ..opts.network };
    let seeds = restart_seeds(opts, h, factor);
    let (net, scores) = select_ftdnn_scored(&series, &opts.hidden_candidates, &opts.split, &base, &seeds)?;
    match opts.refit {
        RefitPolicy::Fixed => {
            let preds = origins.iter().map(|&t| net.forecast(&series, t)).collect::<Result<Vec<_>>>()?;
            Ok((preds, vec![net], scores))
        }
        RefitPolicy::Rolling => {
            // Same width and seed, retrained on the latest window split in the
            // original train : validation proportion.
            let (n_tr, n_va) = (opts.split.train.len(), opts.split.validation.len());
            let mut preds = Vec::with_capacity(origins.len());
            let mut last = net.clone();
            for &t in origins {
                let start = (t + 1).saturating_sub(n_tr + n_va);
                let window = &series[start..t + 1];
                let n_train = n_tr.min(window.len());
                let local = BacktestSplit {
                    train: 0..n_train,
                    validation: n_train..window.len(),
                    test: window.len()..window.len(),
                };
                let refit = train_ftdnn(window, &net.config, &local)?;
                preds.push(refit.forecast(window, t - start)?);
                last = refit;
            }
            Ok((preds, vec![last], scores))
        }
    }
}

fn run_network(factors: &FactorSeries, h: usize, origins: &[usize], opts: &BacktestOptions) -> Result<ForecastRun> {
    let per_factor: Vec<Result<NetworkOutcome>> =
        (0..3).into_par_iter().map(|i| run_network_factor(factors, h, i, origins, opts)).collect();
    let mut preds = Vec::with_capacity(3);
    let mut networks = Vec::with_capacity(3);
    let mut selection = Vec::with_capacity(3);
    for (i, r) in per_factor.into_iter().enumerate() {
        let (p, n, s) = r.map_err(|e| Error::Training(format!("factor beta{i}: {e}")))?;
        preds.push(p);
        networks.extend(n);
        selection.push(s);
    }
    let beta_hat = (0..origins.len()).map(|o| [preds[0][o], preds[1][o], preds[2][o]]).collect();
    let mut run = ForecastRun::assemble(ModelId::Ftdnn, h, factors, origins.to_vec(), beta_hat, &opts.maturities);
    run.networks = networks;
    run.selection = selection;
    Ok(run)
}

/// Fits every model at every horizon and forecasts each test origin. A model
/// that fails at a horizon is reported in `failures`; the rest still run.
pub fn run_backtest(factors: &FactorSeries, opts: &BacktestOptions) -> Result<BacktestResult> {
    if opts.split.len() != factors.len() {
        return Err(Error::invalid(format!(
            "split covers {} dates but the factor series has {}",
            opts.split.len(),
            factors.len()
        )));
    }
    if opts.models.is_empty() || opts.horizons.is_empty() {
        return Err(Error::Config("at least one model and one horizon are required".into()));
    }
    if opts.horizons.contains(&0) {
        return Err(Error::Config("horizons must be positive".into()));
    }
    if opts.maturities.is_empty() {
        return Err(Error::Config("no maturities to reconstruct".into()));
    }
    let mut models = opts.models.clone();
    models.sort();
    models.dedup();
    let mut horizons = opts.horizons.clone();
    horizons.sort_unstable();
    horizons.dedup();

    let jobs: Vec<(ModelId, usize)> = models.iter().flat_map(|&m| horizons.iter().map(move |&h| (m, h))).collect();
    let outcomes: Vec<Result<ForecastRun>> = jobs
        .par_iter()
        .map(|&(model, h)| {
            let origins = test_origins(&opts.split, factors.len(), h);
            if origins.is_empty() {
                return Err(Error::InsufficientData(format!("no test origin has a target {h} steps ahead")));
            }
            match model {
                ModelId::Ftdnn => run_network(factors, h, &origins, opts),
                _ => {
                    let beta_hat = run_linear(model, factors, h, &origins, opts)?;
                    Ok(ForecastRun::assemble(model, h, factors, origins, beta_hat, &opts.maturities))
                }
            }
        })
        .collect();

    let mut result = BacktestResult::default();
    for ((model, horizon), r) in jobs.into_iter().zip(outcomes) {
        match r {
            Ok(run) => result.runs.push(run),
            Err(e) => {
                log::warn!("{model} at horizon {horizon} failed: {e}");
                result.failures.push(ModelFailure {
                    model,
                    horizon,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(result)
}

/// `model,horizon,origin_date,target_date,beta0_hat,beta1_hat,beta2_hat`
pub fn write_forecasts_csv<W: Write>(runs: &[ForecastRun], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["model", "horizon", "origin_date", "target_date", "beta0_hat", "beta1_hat", "beta2_hat"])?;
    for run in runs {
        for o in 0..run.origins.len() {
            let b = run.beta_hat[o];
            out.write_record([
                run.model.to_string(),
                run.horizon.to_string(),
                run.origin_dates[o].to_string(),
                run.target_dates[o].to_string(),
                b[0].to_string(),
                b[1].to_string(),
                b[2].to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// `model,horizon,origin_date,maturity,price_hat`
pub fn write_curves_csv<W: Write>(runs: &[ForecastRun], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["model", "horizon", "origin_date", "maturity", "price_hat"])?;
    for run in runs {
        for (o, curve) in run.curves_hat.iter().enumerate() {
            for (m, p) in run.maturities.iter().zip(curve) {
                out.write_record([
                    run.model.to_string(),
                    run.horizon.to_string(),
                    run.origin_dates[o].to_string(),
                    m.to_string(),
                    p.to_string(),
                ])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct ForecastRow {
    model: String,
    horizon: usize,
    origin_date: NaiveDate,
    target_date: NaiveDate,
    beta0_hat: f64,
    beta1_hat: f64,
    beta2_hat: f64,
}

/// Reads a factor-forecast file back into runs and rebuilds each curve
/// from the factors, so the reconstruction invariant holds by construction.
/// Origins are re-indexed against `factors`.
pub fn read_forecasts_csv<R: Read>(r: R, factors: &FactorSeries, maturities: &[u32]) -> Result<Vec<ForecastRun>> {
    let mut reader = csv::Reader::from_reader(r);
    let mut grouped: Vec<((ModelId, usize), Vec<ForecastRow>)> = Vec::new();
    for (i, row) in reader.deserialize::<ForecastRow>().enumerate() {
        let row = row.map_err(|e| Error::MalformedRow {
            line: i + 2,
            message: e.to_string(),
        })?;
        let key = (row.model.parse::<ModelId>()?, row.horizon);
        match grouped.iter_mut().find(|(k, _)| *k == key) {
            Some((_, rows)) => rows.push(row),
            None => grouped.push((key, vec![row])),
        }
    }
    grouped
        .into_iter()
        .map(|((model, horizon), rows)| {
            let mut origins = Vec::with_capacity(rows.len());
            let mut beta_hat = Vec::with_capacity(rows.len());
            for row in rows {
                let t = factors
                    .dates
                    .binary_search(&row.origin_date)
                    .map_err(|_| Error::Misaligned(format!("{model} origin {} is not a factor date", row.origin_date)))?;
                if factors.dates.get(t + horizon) != Some(&row.target_date) {
                    return Err(Error::Misaligned(format!(
                        "{model} h={horizon}: target {} is not {horizon} steps after {}",
                        row.target_date, row.origin_date
                    )));
                }
                origins.push(t);
                beta_hat.push([row.beta0_hat, row.beta1_hat, row.beta2_hat]);
            }
            Ok(ForecastRun::assemble(model, horizon, factors, origins, beta_hat, maturities))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{job_rng, standard_normal};
    use nalgebra::{Matrix3, Vector3};

    fn monthly_dates(n: usize) -> Vec<NaiveDate> {
        let mut d = Vec::with_capacity(n);
        let (mut y, mut m) = (1990, 1);
        for _ in 0..n {
            let next = if m == 12 { (y + 1, 1) } else { (y, m + 1) };
            d.push(NaiveDate::from_ymd_opt(next.0, next.1, 1).unwrap().pred_opt().unwrap());
            (y, m) = next;
        }
        d
    }

    fn var_factors(n: usize, seed: u64) -> FactorSeries {
        let c = Vector3::new(8.0, -0.5, 0.4);
        let g = Matrix3::new(0.9, 0.05, 0.0, 0.1, 0.7, 0.0, 0.0, -0.1, 0.6);
        let mut rng = job_rng(seed, &[]);
        let mut x = Vector3::new(80.0, -3.0, 1.0);
        let mut beta = Vec::with_capacity(n);
        for _ in 0..n {
            beta.push([x[0], x[1], x[2]]);
            let e = Vector3::new(standard_normal(&mut rng), standard_normal(&mut rng), standard_normal(&mut rng));
            x = c + g * x + e;
        }
        FactorSeries::new(monthly_dates(n), beta, 0.0058, vec![0.0; n]).unwrap()
    }

    fn options(n: usize, models: Vec<ModelId>) -> BacktestOptions {
        let mut o = BacktestOptions::new(BacktestSplit::default_for(n).unwrap(), vec![30, 90, 360, 720]);
        o.models = models;
        o.hidden_candidates = vec![1, 2];
        o.restarts = 2;
        o
    }

    fn rmse(run: &ForecastRun, f: &FactorSeries) -> f64 {
        let mut s = 0.0;
        for (o, &t) in run.origins.iter().enumerate() {
            let truth = reconstruct_curve(f.beta[t + run.horizon], f.lambda_star, &run.maturities);
            s += truth.iter().zip(&run.curves_hat[o]).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        (s / (run.origins.len() * run.maturities.len()) as f64).sqrt()
    }

    #[test]
    fn random_walk_reproduces_origin_curve() {
        let f = var_factors(100, 1);
        let res = run_backtest(&f, &options(100, vec![ModelId::Rw])).unwrap();
        assert_eq!(res.runs.len(), 4);
        for run in &res.runs {
            assert_eq!(run.origins, test_origins(&BacktestSplit::default_for(100).unwrap(), 100, run.horizon));
            for (o, &t) in run.origins.iter().enumerate() {
                assert_eq!(run.curves_hat[o], reconstruct_curve(f.beta[t], f.lambda_star, &run.maturities));
            }
        }
    }

    #[test]
    fn origins_respect_horizon() {
        let s = BacktestSplit::default_for(100).unwrap();
        assert_eq!(test_origins(&s, 100, 12), (80..88).collect::<Vec<_>>());
        assert_eq!(test_origins(&s, 100, 1).len(), 19);
    }

    #[test]
    fn var_beats_random_walk_on_var_data() {
        let mut wins = 0;
        for seed in 0..10 {
            let f = var_factors(289, seed);
            let mut o = options(289, vec![ModelId::Var1, ModelId::Rw]);
            o.horizons = vec![1];
            let res = run_backtest(&f, &o).unwrap();
            let var = res.runs.iter().find(|r| r.model == ModelId::Var1).unwrap();
            let rw = res.runs.iter().find(|r| r.model == ModelId::Rw).unwrap();
            if rmse(var, &f) < rmse(rw, &f) {
                wins += 1;
            }
        }
        assert!(wins >= 8, "VAR won {wins}/10");
    }

    #[test]
    fn failures_do_not_abort_other_models() {
        // A constant slope factor breaks the VAR and AR fits but not RW.
        let mut f = var_factors(120, 2);
        for b in f.beta.iter_mut() {
            b[1] = -1.0;
        }
        let res = run_backtest(&f, &options(120, vec![ModelId::Var1, ModelId::Rw, ModelId::Ar1])).unwrap();
        assert!(res.runs.iter().all(|r| r.model == ModelId::Rw));
        assert_eq!(res.failures.len(), 8);
    }

    #[test]
    fn curves_match_reconstruction_and_files_round_trip() {
        let f = var_factors(120, 3);
        let mut o = options(120, ModelId::ALL.to_vec());
        o.horizons = vec![1, 3];
        let res = run_backtest(&f, &o).unwrap();
        assert!(res.failures.is_empty(), "{:?}", res.failures);
        for run in &res.runs {
            for (b, c) in run.beta_hat.iter().zip(&run.curves_hat) {
                assert_eq!(*c, reconstruct_curve(*b, run.lambda_star, &run.maturities));
            }
        }
        let ftdnn = res.runs.iter().find(|r| r.model == ModelId::Ftdnn).unwrap();
        assert_eq!(ftdnn.networks.len(), 3);

        let mut buf = Vec::new();
        write_forecasts_csv(&res.runs, &mut buf).unwrap();
        let back = read_forecasts_csv(buf.as_slice(), &f, &o.maturities).unwrap();
        assert_eq!(back.len(), res.runs.len());
        for (a, b) in back.iter().zip(&res.runs) {
            assert_eq!((a.model, a.horizon, &a.origins), (b.model, b.horizon, &b.origins));
            assert_eq!(a.beta_hat, b.beta_hat);
            assert_eq!(a.curves_hat, b.curves_hat);
        }
        let mut curves = Vec::new();
        write_curves_csv(&res.runs, &mut curves).unwrap();
        let lines = String::from_utf8(curves).unwrap().lines().count();
        let expected: usize = res.runs.iter().map(|r| r.origins.len() * 4).sum();
        assert_eq!(lines, expected + 1);
    }

    #[test]
    fn backtest_is_deterministic() {
        let f = var_factors(120, 4);
        let mut o = options(120, vec![ModelId::Ftdnn, ModelId::Ar1]);
        o.horizons = vec![1, 6];
        let a = run_backtest(&f, &o).unwrap();
        let b = run_backtest(&f, &o).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rolling_refit_runs() {
        let f = var_factors(120, 5);
        let mut o = options(120, vec![ModelId::Ftdnn, ModelId::Ar1, ModelId::Var1]);
        o.horizons = vec![1];
        o.hidden_candidates = vec![2];
        o.restarts = 1;
        o.refit = RefitPolicy::Rolling;
        let rolled = run_backtest(&f, &o).unwrap();
        assert!(rolled.failures.is_empty(), "{:?}", rolled.failures);
        o.refit = RefitPolicy::Fixed;
        let fixed = run_backtest(&f, &o).unwrap();
        let ar = |r: &BacktestResult| r.runs.iter().find(|x| x.model == ModelId::Ar1).unwrap().beta_hat.clone();
        assert_ne!(ar(&rolled), ar(&fixed));
        // The first rolling window ends at the first origin, later than the
        // training range, so the estimates must differ but stay close.
        let d = ar(&rolled)[0][0] - ar(&fixed)[0][0];
        assert!(d.abs() < 10.0);
    }

    #[test]
    fn misaligned_forecast_file_is_rejected() {
        let f = var_factors(60, 6);
        let text = "model,horizon,origin_date,target_date,beta0_hat,beta1_hat,beta2_hat\nRW,1,1990-01-31,1990-03-31,1,2,3\n";
        assert!(matches!(read_forecasts_csv(text.as_bytes(), &f, &[30]), Err(Error::Misaligned(_))));
    }
}
