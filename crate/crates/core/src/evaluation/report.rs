use std::collections::BTreeMap;
use std::io::Write;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::losses::{mae, mme, over_under_shares, rmse, LossKind, MmeMode};
use crate::evaluation::mcs::{mcs, McsConfig, McsResult};
use crate::forecast::{ForecastRun, ModelId};
use crate::nelson_siegel::FactorSeries;
use crate::panel::MaturityPanel;
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationConfig {
    pub mcs: McsConfig,
    pub benchmark: ModelId,
    /// Use an expected block length of `h` steps at horizon `h` instead of
    /// `mcs.block_length`.
    pub horizon_scaled_blocks: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            mcs: McsConfig::default(),
            benchmark: ModelId::Rw,
            horizon_scaled_blocks: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub model: ModelId,
    pub horizon: usize,
    pub maturity: u32,
    pub n: usize,
    pub rmse: f64,
    pub mae: f64,
    pub mme_o: f64,
    pub mme_u: f64,
    pub share_over: f64,
    pub share_under: f64,
}

/// Price forecast errors `forecast - actual` per (model, horizon, maturity),
/// aligned on a common origin set per horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTensor {
    pub models: Vec<ModelId>,
    pub horizons: Vec<usize>,
    pub maturities: Vec<u32>,
    pub origins: BTreeMap<usize, Vec<NaiveDate>>,
    pub errors: BTreeMap<(ModelId, usize, u32), Vec<f64>>,
    pub stats: Vec<CellStats>,
}

impl LossTensor {
    pub fn errors(&self, model: ModelId, horizon: usize, maturity: u32) -> Option<&[f64]> {
        self.errors.get(&(model, horizon, maturity)).map(|v| v.as_slice())
    }

    pub fn stat(&self, model: ModelId, horizon: usize, maturity: u32) -> Option<&CellStats> {
        self.stats
            .iter()
            .find(|s| s.model == model && s.horizon == horizon && s.maturity == maturity)
    }

    /// Per-origin loss averaged over maturities.
    fn average_loss(&self, model: ModelId, horizon: usize, kind: LossKind) -> Vec<f64> {
        let n = self.origins[&horizon].len();
        let mut out = vec![0.0; n];
        for &m in &self.maturities {
            for (o, e) in self.errors[&(model, horizon, m)].iter().enumerate() {
                out[o] += kind.pointwise(*e);
            }
        }
        out.iter().map(|v| v / self.maturities.len() as f64).collect()
    }
}

pub fn build_loss_tensor(runs: &[ForecastRun], panel: &MaturityPanel) -> Result<LossTensor> {
    if runs.is_empty() {
        return Err(Error::InsufficientData("no forecast runs to evaluate".into()));
    }
    let maturities = runs[0].maturities.clone();
    let cols: Vec<usize> = maturities
        .iter()
        .map(|m| {
            panel
                .maturities()
                .iter()
                .position(|x| x == m)
                .ok_or_else(|| Error::Misaligned(format!("maturity {m} is not on the panel grid")))
        })
        .collect::<Result<_>>()?;

    let mut models: Vec<ModelId> = runs.iter().map(|r| r.model).collect();
    models.sort();
    models.dedup();
    let mut horizons: Vec<usize> = runs.iter().map(|r| r.horizon).collect();
    horizons.sort_unstable();
    horizons.dedup();

    let mut origins: BTreeMap<usize, Vec<NaiveDate>> = BTreeMap::new();
    let mut errors = BTreeMap::new();
    let mut seen = BTreeMap::new();
    for run in runs {
        if run.maturities != maturities {
            return Err(Error::Misaligned(format!("{} h={} uses a different maturity grid", run.model, run.horizon)));
        }
        if seen.insert((run.model, run.horizon), ()).is_some() {
            return Err(Error::Misaligned(format!("duplicate run for {} h={}", run.model, run.horizon)));
        }
        if run.origin_dates.is_empty() {
            return Err(Error::InsufficientData(format!("{} h={} has no forecasts", run.model, run.horizon)));
        }
        match origins.get(&run.horizon) {
            Some(o) if *o != run.origin_dates => {
                return Err(Error::Misaligned(format!(
                    "{} h={} forecasts from a different set of origins",
                    run.model, run.horizon
                )))
            }
            Some(_) => {}
            None => {
                origins.insert(run.horizon, run.origin_dates.clone());
            }
        }
        let rows: Vec<usize> = run
            .target_dates
            .iter()
            .map(|d| {
                panel
                    .date_index(*d)
                    .ok_or_else(|| Error::Misaligned(format!("target date {d} is not in the panel")))
            })
            .collect::<Result<_>>()?;
        for (j, &m) in maturities.iter().enumerate() {
            let e: Vec<f64> = rows
                .iter()
                .enumerate()
                .map(|(o, &t)| run.curves_hat[o][j] - panel.price(t, cols[j]))
                .collect();
            errors.insert((run.model, run.horizon, m), e);
        }
    }
    for &h in &horizons {
        for &m in &models {
            if !seen.contains_key(&(m, h)) {
                return Err(Error::Misaligned(format!("{m} has no run at horizon {h}")));
            }
        }
    }

    let mut stats = Vec::with_capacity(errors.len());
    for (&(model, horizon, maturity), e) in &errors {
        let (share_over, share_under) = over_under_shares(e)?;
        stats.push(CellStats {
            model,
            horizon,
            maturity,
            n: e.len(),
            rmse: rmse(e)?,
            mae: mae(e)?,
            mme_o: mme(e, MmeMode::O)?,
            mme_u: mme(e, MmeMode::U)?,
            share_over,
            share_under,
        });
    }
    Ok(LossTensor {
        models,
        horizons,
        maturities,
        origins,
        errors,
        stats,
    })
}

/// Which loss an MCS was run on; `maturity == None` means averaged over maturities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsEntry {
    pub loss: LossKind,
    pub horizon: usize,
    pub maturity: Option<u32>,
    #[serde(flatten)]
    pub result: McsResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvgRmseRow {
    pub model: ModelId,
    pub horizon: usize,
    pub avg_rmse: f64,
    pub in_mcs: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub model: ModelId,
    pub horizon: usize,
    pub maturity: u32,
    pub value: f64,
    pub ratio: f64,
    pub in_mcs: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymmetryRow {
    pub model: ModelId,
    pub horizon: usize,
    pub maturity: u32,
    pub mme: f64,
    pub share_over: f64,
    pub share_under: f64,
    pub in_mcs: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub config: EvaluationConfig,
    pub tensor: LossTensor,
    pub avg_rmse: Vec<AvgRmseRow>,
    pub rmse_ratio: Vec<RatioRow>,
    pub mae_ratio: Vec<RatioRow>,
    pub mme_o: Vec<AsymmetryRow>,
    pub mme_u: Vec<AsymmetryRow>,
    pub mcs: Vec<McsEntry>,
}

fn loss_stream(kind: LossKind) -> u64 {
    match kind {
        LossKind::Squared => 1,
        LossKind::Absolute => 2,
        LossKind::MmeO => 3,
        LossKind::MmeU => 4,
    }
}

/// Loss tables with benchmark ratios and MCS membership at every cell.
pub fn build_report(runs: &[ForecastRun], panel: &MaturityPanel, config: &EvaluationConfig) -> Result<Report> {
    config.mcs.validate()?;
    let tensor = build_loss_tensor(runs, panel)?;
    if !tensor.models.contains(&config.benchmark) {
        return Err(Error::Config(format!("benchmark model {} has no forecasts", config.benchmark)));
    }
    let names: Vec<String> = tensor.models.iter().map(|m| m.to_string()).collect();

    // (loss, horizon, maturity) jobs; maturity None is the cross-maturity average.
    let mut jobs: Vec<(LossKind, usize, Option<u32>)> = Vec::new();
    for &h in &tensor.horizons {
        jobs.push((LossKind::Squared, h, None));
        for kind in LossKind::ALL {
            for &m in &tensor.maturities {
                jobs.push((kind, h, Some(m)));
            }
        }
    }
    let entries: Vec<Result<McsEntry>> = jobs
        .par_iter()
        .map(|&(kind, h, maturity)| {
            let losses: Vec<Vec<f64>> = tensor
                .models
                .iter()
                .map(|&model| match maturity {
                    Some(m) => kind.series(&tensor.errors[&(model, h, m)]),
                    None => tensor.average_loss(model, h, kind),
                })
                .collect();
            let mut cfg = config.mcs;
            cfg.seed = derive_seed(config.mcs.seed, &[loss_stream(kind), h as u64, maturity.map_or(0, |m| m as u64 + 1)]);
            if config.horizon_scaled_blocks {
                cfg.block_length = h.max(1) as f64;
            }
            Ok(McsEntry {
                loss: kind,
                horizon: h,
                maturity,
                result: mcs(&names, &losses, &cfg)?,
            })
        })
        .collect();
    let mcs_entries: Vec<McsEntry> = entries.into_iter().collect::<Result<_>>()?;
    let find = |kind: LossKind, h: usize, m: Option<u32>| {
        mcs_entries
            .iter()
            .find(|e| e.loss == kind && e.horizon == h && e.maturity == m)
            .expect("every cell has an MCS")
    };

    let mut avg_rmse = Vec::new();
    let mut rmse_ratio = Vec::new();
    let mut mae_ratio = Vec::new();
    let mut mme_o = Vec::new();
    let mut mme_u = Vec::new();
    for &h in &tensor.horizons {
        let avg = find(LossKind::Squared, h, None);
        for &model in &tensor.models {
            let mean_rmse = tensor
                .maturities
                .iter()
                .map(|&m| tensor.stat(model, h, m).expect("cell").rmse)
                .sum::<f64>()
                / tensor.maturities.len() as f64;
            avg_rmse.push(AvgRmseRow {
                model,
                horizon: h,
                avg_rmse: mean_rmse,
                in_mcs: avg.result.contains(model.as_str()),
            });
        }
        for &m in &tensor.maturities {
            let bench = tensor.stat(config.benchmark, h, m).expect("benchmark cell");
            for &model in &tensor.models {
                let s = tensor.stat(model, h, m).expect("cell");
                let name = model.as_str();
                rmse_ratio.push(RatioRow {
                    model,
                    horizon: h,
                    maturity: m,
                    value: s.rmse,
                    ratio: s.rmse / bench.rmse,
                    in_mcs: find(LossKind::Squared, h, Some(m)).result.contains(name),
                });
                mae_ratio.push(RatioRow {
                    model,
                    horizon: h,
                    maturity: m,
                    value: s.mae,
                    ratio: s.mae / bench.mae,
                    in_mcs: find(LossKind::Absolute, h, Some(m)).result.contains(name),
                });
                mme_o.push(AsymmetryRow {
                    model,
                    horizon: h,
                    maturity: m,
                    mme: s.mme_o,
                    share_over: s.share_over,
                    share_under: s.share_under,
                    in_mcs: find(LossKind::MmeO, h, Some(m)).result.contains(name),
                });
                mme_u.push(AsymmetryRow {
                    model,
                    horizon: h,
                    maturity: m,
                    mme: s.mme_u,
                    share_over: s.share_over,
                    share_under: s.share_under,
                    in_mcs: find(LossKind::MmeU, h, Some(m)).result.contains(name),
                });
            }
        }
    }
    Ok(Report {
        config: *config,
        tensor,
        avg_rmse,
        rmse_ratio,
        mae_ratio,
        mme_o,
        mme_u,
        mcs: mcs_entries,
    })
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    benchmark: ModelId,
    alpha: f64,
    replications: usize,
    block_length: f64,
    horizon_scaled_blocks: bool,
    seed: u64,
    statistic: String,
    models: &'a [ModelId],
    horizons: &'a [usize],
    maturities: &'a [u32],
    origins: &'a BTreeMap<usize, Vec<NaiveDate>>,
    avg_rmse: &'a [AvgRmseRow],
    mcs: &'a [McsEntry],
}

impl Report {
    fn write_ratio<W: Write>(rows: &[RatioRow], value: &str, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["model", "horizon", "maturity", value, "ratio", "in_mcs"])?;
        for r in rows {
            out.write_record([
                r.model.to_string(),
                r.horizon.to_string(),
                r.maturity.to_string(),
                r.value.to_string(),
                r.ratio.to_string(),
                r.in_mcs.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    fn write_asymmetry<W: Write>(rows: &[AsymmetryRow], value: &str, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["model", "horizon", "maturity", value, "share_over", "share_under", "in_mcs"])?;
        for r in rows {
            out.write_record([
                r.model.to_string(),
                r.horizon.to_string(),
                r.maturity.to_string(),
                r.mme.to_string(),
                r.share_over.to_string(),
                r.share_under.to_string(),
                r.in_mcs.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// `model,horizon,avg_rmse,in_mcs`
    pub fn write_avg_rmse<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["model", "horizon", "avg_rmse", "in_mcs"])?;
        for r in &self.avg_rmse {
            out.write_record([r.model.to_string(), r.horizon.to_string(), r.avg_rmse.to_string(), r.in_mcs.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_rmse_ratio<W: Write>(&self, w: W) -> Result<()> {
        Self::write_ratio(&self.rmse_ratio, "rmse", w)
    }

    pub fn write_mae_ratio<W: Write>(&self, w: W) -> Result<()> {
        Self::write_ratio(&self.mae_ratio, "mae", w)
    }

    pub fn write_mme_o<W: Write>(&self, w: W) -> Result<()> {
        Self::write_asymmetry(&self.mme_o, "mme_o", w)
    }

    pub fn write_mme_u<W: Write>(&self, w: W) -> Result<()> {
        Self::write_asymmetry(&self.mme_u, "mme_u", w)
    }

    /// Long format `model,horizon,maturity,rmse,mae,mme_o,mme_u`.
    pub fn write_loss_curves<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["model", "horizon", "maturity", "rmse", "mae", "mme_o", "mme_u"])?;
        for s in &self.tensor.stats {
            out.write_record([
                s.model.to_string(),
                s.horizon.to_string(),
                s.maturity.to_string(),
                s.rmse.to_string(),
                s.mae.to_string(),
                s.mme_o.to_string(),
                s.mme_u.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> Result<String> {
        let c = &self.config;
        let s = Summary {
            benchmark: c.benchmark,
            alpha: c.mcs.alpha,
            replications: c.mcs.replications,
            block_length: c.mcs.block_length,
            horizon_scaled_blocks: c.horizon_scaled_blocks,
            seed: c.mcs.seed,
            statistic: c.mcs.statistic.to_string(),
            models: &self.tensor.models,
            horizons: &self.tensor.horizons,
            maturities: &self.tensor.maturities,
            origins: &self.tensor.origins,
            avg_rmse: &self.avg_rmse,
            mcs: &self.mcs,
        };
        Ok(serde_json::to_string_pretty(&s)?)
    }
}

/// Long format `date,maturity,price,provenance`.
pub fn write_surface_long<W: Write>(panel: &MaturityPanel, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["date", "maturity", "price", "provenance"])?;
    for (t, d) in panel.dates().iter().enumerate() {
        let flags = panel.provenance_row(t);
        for (j, m) in panel.maturities().iter().enumerate() {
            out.write_record([
                d.to_string(),
                m.to_string(),
                panel.price(t, j).to_string(),
                flags[j].code().to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Long format `date,factor,value`.
pub fn write_factors_long<W: Write>(factors: &FactorSeries, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["date", "factor", "value"])?;
    for (d, b) in factors.dates.iter().zip(&factors.beta) {
        for (i, v) in b.iter().enumerate() {
            out.write_record([d.to_string(), format!("beta{i}"), v.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecast::{run_backtest, BacktestOptions, BacktestSplit};
    use crate::synthetic::{generate_factors, generate_panel, FactorProcess, FactorProcessSpec};

    fn setup(models: Vec<ModelId>) -> (FactorSeries, MaturityPanel, Vec<ForecastRun>) {
        let spec = FactorProcessSpec::new(
            FactorProcess::Ar1 {
                intercept: [7.0, -0.3, 0.2],
                coef: [0.9, 0.8, 0.6],
                start: [70.0, -2.0, 1.0],
            },
            120,
            5,
        )
        .with_noise([2.0, 0.5, 0.5]);
        let f = generate_factors(&spec).unwrap().series;
        let grid = vec![30, 180, 360, 720];
        let panel = generate_panel(&f, f.lambda_star, &grid, 0.0, 0).unwrap();
        let mut o = BacktestOptions::new(BacktestSplit::default_for(f.len()).unwrap(), grid);
        o.models = models;
        o.horizons = vec![1, 3];
        o.hidden_candidates = vec![1, 2];
        o.restarts = 2;
        let runs = run_backtest(&f, &o).unwrap().runs;
        (f, panel, runs)
    }

    fn quick() -> EvaluationConfig {
        EvaluationConfig {
            mcs: McsConfig { replications: 300, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn benchmark_ratio_is_one() {
        let (_, panel, runs) = setup(vec![ModelId::Rw, ModelId::Ar1, ModelId::Var1]);
        let r = build_report(&runs, &panel, &quick()).unwrap();
        for row in r.rmse_ratio.iter().chain(&r.mae_ratio).filter(|r| r.model == ModelId::Rw) {
            assert_eq!(row.ratio, 1.0);
        }
        for row in &r.rmse_ratio {
            let bench = r.tensor.stat(ModelId::Rw, row.horizon, row.maturity).unwrap().rmse;
            assert_eq!(row.ratio < 1.0, row.value < bench);
        }
        for s in &r.tensor.stats {
            assert!(s.rmse >= s.mae);
        }
        assert_eq!(r.avg_rmse.len(), 3 * 2);
        assert_eq!(r.rmse_ratio.len(), 3 * 2 * 4);
        assert_eq!(r.mcs.len(), 2 * (1 + 4 * 4));
        for e in &r.mcs {
            assert!(!e.result.surviving.is_empty());
        }
    }

    #[test]
    fn errors_are_forecast_minus_actual() {
        let (f, panel, runs) = setup(vec![ModelId::Rw]);
        let t = build_loss_tensor(&runs, &panel).unwrap();
        let run = &runs[0];
        let e = t.errors(ModelId::Rw, run.horizon, 30).unwrap();
        let o = 0;
        let target = run.origins[o] + run.horizon;
        let actual = crate::nelson_siegel::reconstruct_curve(f.beta[target], f.lambda_star, &[30])[0];
        assert!((e[o] - (run.curves_hat[o][0] - actual)).abs() < 1e-9);
    }

    #[test]
    fn single_model_report_is_trivially_full() {
        let (_, panel, runs) = setup(vec![ModelId::Rw]);
        let r = build_report(&runs, &panel, &quick()).unwrap();
        assert!(r.mcs.iter().all(|e| e.result.p_values == vec![1.0]));
        assert!(r.rmse_ratio.iter().all(|row| row.in_mcs));
    }

    #[test]
    fn misaligned_inputs_are_rejected() {
        let (_, panel, mut runs) = setup(vec![ModelId::Rw, ModelId::Ar1]);
        let k = runs.iter().position(|r| r.model == ModelId::Ar1).unwrap();
        runs[k].origin_dates.pop();
        runs[k].target_dates.pop();
        runs[k].curves_hat.pop();
        assert!(matches!(build_loss_tensor(&runs, &panel), Err(Error::Misaligned(_))));

        let (_, panel, runs) = setup(vec![ModelId::Ar1]);
        assert!(matches!(build_report(&runs, &panel, &quick()), Err(Error::Config(_))));
    }

    #[test]
    fn bundle_is_deterministic() {
        let (f, panel, runs) = setup(vec![ModelId::Rw, ModelId::Ar1]);
        let render = || {
            let r = build_report(&runs, &panel, &quick()).unwrap();
            let mut buf = Vec::new();
            r.write_avg_rmse(&mut buf).unwrap();
            r.write_rmse_ratio(&mut buf).unwrap();
            r.write_mae_ratio(&mut buf).unwrap();
            r.write_mme_o(&mut buf).unwrap();
            r.write_mme_u(&mut buf).unwrap();
            r.write_loss_curves(&mut buf).unwrap();
            write_surface_long(&panel, &mut buf).unwrap();
            write_factors_long(&f, &mut buf).unwrap();
            buf.extend(r.summary_json().unwrap().into_bytes());
            buf
        };
        let a = render();
        assert_eq!(a, render());
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("model,horizon,avg_rmse,in_mcs\n"));
    }
}
