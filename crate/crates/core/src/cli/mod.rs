//! The `oilcurve` command line.
//!
//! Every command resolves one [`RunConfig`] (defaults, then `--config`, then
//! `--set key=value`, then dedicated flags), runs its stages and writes the
//! outputs plus `manifest.json` into `--out`. Exit codes: 0 success, 2 bad
//! configuration or arguments, 1 any other failure.

pub mod config;
pub mod output;

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub use config::{parse_override, RunConfig};
pub use output::{Manifest, Staging};

use crate::calendar::TradingCalendar;
use crate::error::{Error, Result};
use crate::evaluation::{build_report, write_factors_long, write_surface_long, McsStatistic};
use crate::forecast::{
    read_forecasts_csv, run_backtest, write_curves_csv, write_forecasts_csv, BacktestOptions, BacktestResult,
    BacktestSplit, ForecastRun, ModelId, RefitPolicy,
};
use crate::lambda_search::{search_lambda_global, search_lambda_per_date, write_per_date_csv, LambdaSearchResult};
use crate::nelson_siegel::{curvature_peak_maturity, extract_factors, FactorSeries};
use crate::panel::{build_panel, MaturityPanel};
use crate::quotes::{attach_maturity, parse_quotes, write_quotes_csv};
use crate::rng::{job_rng, standard_normal};
use crate::synthetic::{generate_factors, generate_quotes, FactorProcessSpec};

use output::InputDigest;

#[derive(Debug, Parser)]
#[command(name = "oilcurve", version, about = "Crude oil futures curves: panels, Nelson-Siegel factors, forecasts and model confidence sets")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory, replaced atomically on success.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Override any configuration key, e.g. `--set forecast.network.max_epochs=200`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Quotes to a constant-maturity panel.
    Ingest(IngestArgs),
    /// Panel to decay search and factor series.
    Fit(FitArgs),
    /// Factor series to out-of-sample forecasts.
    Forecast(ForecastArgs),
    /// Forecasts and panel to loss tables and model confidence sets.
    Evaluate(EvaluateArgs),
    /// Synthetic quotes through every stage.
    Demo(DemoArgs),
    /// Real quotes through every stage.
    Report(ReportArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Fit(_) => "fit",
            Command::Forecast(_) => "forecast",
            Command::Evaluate(_) => "evaluate",
            Command::Demo(_) => "demo",
            Command::Report(_) => "report",
        }
    }
}

#[derive(Debug, Args, Default)]
pub struct QuoteArgs {
    #[arg(long, value_name = "CSV")]
    pub quotes: Option<PathBuf>,
    /// One ISO date per line.
    #[arg(long, value_name = "FILE")]
    pub holidays: Option<PathBuf>,
    /// fail, drop, flat or linear.
    #[arg(long)]
    pub extrapolation: Option<String>,
    /// trading_days or calendar_days.
    #[arg(long)]
    pub day_count: Option<String>,
}

#[derive(Debug, Args, Default)]
pub struct IngestArgs {
    #[command(flatten)]
    pub quotes: QuoteArgs,
}

#[derive(Debug, Args, Default)]
pub struct FitArgs {
    #[arg(long, value_name = "CSV")]
    pub panel: Option<PathBuf>,
    #[arg(long, value_name = "CSV")]
    pub provenance: Option<PathBuf>,
    /// Use this decay instead of searching.
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct ModelArgs {
    /// Comma separated: FTDNN,AR1,VAR1,RW.
    #[arg(long, value_delimiter = ',')]
    pub models: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub horizons: Vec<usize>,
    /// Hidden widths searched, e.g. `1,2,3`.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Vec<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
    /// fixed or rolling.
    #[arg(long)]
    pub refit: Option<String>,
    /// logistic, tanh or identity.
    #[arg(long)]
    pub activation: Option<String>,
}

#[derive(Debug, Args, Default)]
pub struct EvalArgs {
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Bootstrap replications.
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long)]
    pub block_length: Option<f64>,
    /// range or max.
    #[arg(long)]
    pub statistic: Option<String>,
    #[arg(long)]
    pub benchmark: Option<String>,
}

#[derive(Debug, Args, Default)]
pub struct ForecastArgs {
    #[arg(long, value_name = "CSV")]
    pub factors: Option<PathBuf>,
    /// `fit.json` from `fit`.
    #[arg(long, value_name = "JSON")]
    pub fit: Option<PathBuf>,
    #[command(flatten)]
    pub models: ModelArgs,
}

#[derive(Debug, Args, Default)]
pub struct EvaluateArgs {
    #[arg(long, value_name = "CSV")]
    pub panel: Option<PathBuf>,
    #[arg(long, value_name = "CSV")]
    pub provenance: Option<PathBuf>,
    #[arg(long, value_name = "CSV")]
    pub factors: Option<PathBuf>,
    #[arg(long, value_name = "JSON")]
    pub fit: Option<PathBuf>,
    #[arg(long, value_name = "CSV")]
    pub forecasts: Option<PathBuf>,
    #[command(flatten)]
    pub eval: EvalArgs,
}

#[derive(Debug, Args, Default)]
pub struct DemoArgs {
    /// Number of monthly dates.
    #[arg(long)]
    pub length: Option<usize>,
    #[command(flatten)]
    pub models: ModelArgs,
    #[command(flatten)]
    pub eval: EvalArgs,
}

#[derive(Debug, Args, Default)]
pub struct ReportArgs {
    #[command(flatten)]
    pub quotes: QuoteArgs,
    #[command(flatten)]
    pub models: ModelArgs,
    #[command(flatten)]
    pub eval: EvalArgs,
}

type Overrides = Vec<(String, toml::Value)>;

fn value<T: Serialize>(v: T) -> Result<toml::Value> {
    toml::Value::try_from(v).map_err(|e| Error::Config(e.to_string()))
}

fn push<T: Serialize>(o: &mut Overrides, key: &str, v: Option<T>) -> Result<()> {
    if let Some(v) = v {
        o.push((key.to_string(), value(v)?));
    }
    Ok(())
}

fn path(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.to_string_lossy().into_owned())
}

fn parsed<T: FromStr<Err = Error>>(s: &Option<String>) -> Result<Option<T>> {
    s.as_deref().map(T::from_str).transpose()
}

fn nonempty<T: Clone>(v: &[T]) -> Option<Vec<T>> {
    (!v.is_empty()).then(|| v.to_vec())
}

impl QuoteArgs {
    fn overrides(&self, o: &mut Overrides) -> Result<()> {
        push(o, "input.quotes", path(&self.quotes))?;
        push(o, "input.holidays", path(&self.holidays))?;
        push(o, "panel.extrapolation", parsed::<crate::panel::ExtrapolationPolicy>(&self.extrapolation)?)?;
        push(o, "data.day_count", parsed::<crate::quotes::DayCount>(&self.day_count)?)
    }
}

impl ModelArgs {
    fn overrides(&self, o: &mut Overrides, hidden_key: &str, restarts_key: &str) -> Result<()> {
        let models = self
            .models
            .iter()
            .map(|m| ModelId::from_str(m.trim()))
            .collect::<Result<Vec<_>>>()?;
        push(o, "forecast.models", nonempty(&models))?;
        push(o, "forecast.horizons", nonempty(&self.horizons))?;
        push(o, hidden_key, nonempty(&self.hidden))?;
        push(o, restarts_key, self.restarts)?;
        push(o, "forecast.refit", parsed::<RefitPolicy>(&self.refit)?)?;
        push(o, "forecast.network.activation", parsed::<crate::forecast::Activation>(&self.activation)?)
    }
}

impl EvalArgs {
    fn overrides(&self, o: &mut Overrides) -> Result<()> {
        push(o, "evaluation.alpha", self.alpha)?;
        push(o, "evaluation.replications", self.replications)?;
        push(o, "evaluation.block_length", self.block_length)?;
        push(o, "evaluation.statistic", parsed::<McsStatistic>(&self.statistic)?)?;
        push(o, "evaluation.benchmark", parsed::<ModelId>(&self.benchmark)?)
    }
}

impl Cli {
    /// Resolves the configuration: file, then `--set`, then flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut o: Overrides = self.set.iter().map(|s| parse_override(s)).collect::<Result<_>>()?;
        push(&mut o, "seed", self.seed)?;
        push(&mut o, "threads", self.threads)?;
        push(&mut o, "out", path(&self.out))?;
        match &self.command {
            Command::Ingest(a) => a.quotes.overrides(&mut o)?,
            Command::Fit(a) => {
                push(&mut o, "input.panel", path(&a.panel))?;
                push(&mut o, "input.provenance", path(&a.provenance))?;
                push(&mut o, "lambda.fixed", a.lambda)?;
            }
            Command::Forecast(a) => {
                push(&mut o, "input.factors", path(&a.factors))?;
                push(&mut o, "input.fit", path(&a.fit))?;
                a.models.overrides(&mut o, "forecast.hidden_candidates", "forecast.restarts")?;
            }
            Command::Evaluate(a) => {
                push(&mut o, "input.panel", path(&a.panel))?;
                push(&mut o, "input.provenance", path(&a.provenance))?;
                push(&mut o, "input.factors", path(&a.factors))?;
                push(&mut o, "input.fit", path(&a.fit))?;
                push(&mut o, "input.forecasts", path(&a.forecasts))?;
                a.eval.overrides(&mut o)?;
            }
            Command::Demo(a) => {
                push(&mut o, "demo.length", a.length)?;
                a.models.overrides(&mut o, "demo.hidden_candidates", "demo.restarts")?;
                a.eval.overrides(&mut o)?;
            }
            Command::Report(a) => {
                a.quotes.overrides(&mut o)?;
                a.models.overrides(&mut o, "forecast.hidden_candidates", "forecast.restarts")?;
                a.eval.overrides(&mut o)?;
            }
        }
        let cfg = RunConfig::load(self.config.as_deref(), &o)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        _ => 1,
    }
}

/// Runs a parsed command and returns the output directory.
pub fn execute(cli: &Cli) -> Result<PathBuf> {
    let cfg = cli.resolve()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        let mut run = Run::new(cli.command.name(), cfg)?;
        match &cli.command {
            Command::Ingest(_) => {
                run.ingest()?;
            }
            Command::Fit(_) => {
                let panel = run.load_panel()?;
                run.fit(&panel)?;
            }
            Command::Forecast(_) => {
                let (factors, fit) = run.load_factors()?;
                run.forecast(&factors, &fit.maturities, false)?;
            }
            Command::Evaluate(_) => {
                let panel = run.load_panel()?;
                let (factors, fit) = run.load_factors()?;
                let key = "forecasts";
                let p = run.cfg.require(key, &run.cfg.input.forecasts)?;
                let bytes = run.read_input(key, &p)?;
                let runs = read_forecasts_csv(bytes.as_slice(), &factors, &fit.maturities)?;
                run.evaluate(&panel, &factors, &runs, None)?;
            }
            Command::Demo(_) => run.demo()?,
            Command::Report(_) => {
                let panel = run.ingest()?;
                let (factors, search) = run.fit(&panel)?;
                let result = run.forecast(&factors, panel.maturities(), false)?;
                run.evaluate(&panel, &factors, &result.runs, search.as_ref())?;
            }
        }
        run.finish()
    })
}

/// Output of the decay search, written as `fit.json`.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct FitSummary {
    pub lambda_star: f64,
    pub inverse_lambda: f64,
    /// Maturity where the curvature loading peaks, about `1.79 / lambda`.
    pub curvature_peak: f64,
    pub total_sse: f64,
    pub fixed: bool,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub n_dates: usize,
    pub maturities: Vec<u32>,
}

#[derive(Debug, Serialize)]
struct RunSummary<'a> {
    model: ModelId,
    horizon: usize,
    n_forecasts: usize,
    first_target: Option<chrono::NaiveDate>,
    last_target: Option<chrono::NaiveDate>,
    selection: &'a [Vec<crate::forecast::CandidateScore>],
}

#[derive(Debug, Serialize)]
struct BacktestSummary<'a> {
    n_dates: usize,
    lambda_star: f64,
    split: &'a BacktestSplit,
    refit: RefitPolicy,
    runs: Vec<RunSummary<'a>>,
    failures: &'a [crate::forecast::ModelFailure],
}

struct Run {
    command: &'static str,
    cfg: RunConfig,
    staging: Staging,
    inputs: BTreeMap<String, InputDigest>,
    warnings: BTreeSet<String>,
}

impl Run {
    fn new(command: &'static str, cfg: RunConfig) -> Result<Self> {
        let staging = Staging::new(&cfg.out)?;
        Ok(Self {
            command,
            cfg,
            staging,
            inputs: BTreeMap::new(),
            warnings: BTreeSet::new(),
        })
    }

    fn warn(&mut self, msg: String) {
        log::warn!("{msg}");
        self.warnings.insert(msg);
    }

    fn read_input(&mut self, role: &str, p: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
        self.inputs.insert(
            role.to_string(),
            InputDigest {
                path: p.to_path_buf(),
                sha256: output::sha256_hex(&bytes),
            },
        );
        Ok(bytes)
    }

    fn finish(self) -> Result<PathBuf> {
        let mut m = Manifest::new(self.command, self.cfg.seed, self.cfg.digest()?);
        m.inputs = self.inputs;
        m.warnings = self.warnings.into_iter().collect();
        self.staging.commit(m)
    }

    fn calendar(&mut self) -> Result<TradingCalendar> {
        match self.cfg.input.holidays.clone() {
            Some(p) => {
                let p = self.cfg.require("holidays", &Some(p))?;
                let text = String::from_utf8(self.read_input("holidays", &p)?)
                    .map_err(|_| Error::invalid("holiday file is not UTF-8"))?;
                Ok(TradingCalendar::weekends_only().with_holidays(TradingCalendar::parse_holidays(&text)?))
            }
            None => Ok(TradingCalendar::weekends_only()),
        }
    }

    fn ingest(&mut self) -> Result<MaturityPanel> {
        let p = self.cfg.require("quotes", &self.cfg.input.quotes)?;
        let bytes = self.read_input("quotes", &p)?;
        let cal = self.calendar()?;
        self.ingest_bytes(&bytes, &cal)
    }

    fn ingest_bytes(&mut self, quotes: &[u8], cal: &TradingCalendar) -> Result<MaturityPanel> {
        let parsed = parse_quotes(quotes, &self.cfg.data.quote_format())?;
        let n_quotes = parsed.quotes.len();
        let matured = attach_maturity(parsed.quotes, cal, self.cfg.data.day_count)?;
        let (panel, report) = build_panel(&matured.quotes, &self.cfg.panel_options())?;
        if panel.is_empty() {
            return Err(Error::InsufficientData("no date survived panel construction".into()));
        }
        if !report.dropped.is_empty() {
            self.warn(format!("{} dates dropped while building the panel", report.dropped.len()));
        }
        self.staging.write_with("panel.csv", |w| panel.write_csv(w))?;
        self.staging.write_with("provenance.csv", |w| panel.write_provenance_csv(w))?;
        let text = format!(
            "quotes parsed: {n_quotes}\nmissing settles skipped: {}\nexpired quotes dropped: {}\npanel dates: {}\n{report}\n",
            parsed.skipped_missing,
            matured.dropped_expired,
            panel.n_dates()
        );
        self.staging.write("panel_report.txt", text.as_bytes())?;
        Ok(panel)
    }

    fn load_panel(&mut self) -> Result<MaturityPanel> {
        let p = self.cfg.require("panel", &self.cfg.input.panel)?;
        let prices = self.read_input("panel", &p)?;
        let provenance = match self.cfg.input.provenance.clone() {
            Some(q) => {
                let q = self.cfg.require("provenance", &Some(q))?;
                Some(self.read_input("provenance", &q)?)
            }
            None => None,
        };
        MaturityPanel::read_csv(prices.as_slice(), provenance.as_deref())
    }

    fn load_factors(&mut self) -> Result<(FactorSeries, FitSummary)> {
        let f = self.cfg.require("fit", &self.cfg.input.fit)?;
        let fit: FitSummary = serde_json::from_slice(&self.read_input("fit", &f)?)?;
        let p = self.cfg.require("factors", &self.cfg.input.factors)?;
        let bytes = self.read_input("factors", &p)?;
        Ok((FactorSeries::read_csv(bytes.as_slice(), fit.lambda_star)?, fit))
    }

    fn fit(&mut self, panel: &MaturityPanel) -> Result<(FactorSeries, Option<LambdaSearchResult>)> {
        let l = self.cfg.lambda.clone();
        let domain = l.domain();
        let (lambda_star, search) = match l.fixed {
            Some(v) => (v, None),
            None => {
                let s = search_lambda_global(panel, &domain, &l.search())?;
                self.staging.write_with("lambda_profile.csv", |w| s.write_profile_csv(w))?;
                (s.lambda_star, Some(s))
            }
        };
        if l.per_date {
            let rows = search_lambda_per_date(panel, &domain, &l.search())?;
            self.staging.write_with("lambda_per_date.csv", |w| write_per_date_csv(&rows, w))?;
        }
        let factors = extract_factors(panel, lambda_star)?;
        self.staging.write_with("factors.csv", |w| factors.write_csv(w))?;
        let summary = FitSummary {
            lambda_star,
            inverse_lambda: 1.0 / lambda_star,
            curvature_peak: curvature_peak_maturity(lambda_star),
            total_sse: factors.sse.iter().sum(),
            fixed: l.fixed.is_some(),
            lambda_min: domain.lambda_min,
            lambda_max: domain.lambda_max,
            n_dates: factors.len(),
            maturities: panel.maturities().to_vec(),
        };
        self.staging.write_json("fit.json", &summary)?;
        Ok((factors, search))
    }

    fn forecast(&mut self, factors: &FactorSeries, maturities: &[u32], demo: bool) -> Result<BacktestResult> {
        let s = self.cfg.split;
        let split = BacktestSplit::proportional(factors.len(), s.train, s.validation)?;
        let f = self.cfg.forecast.clone();
        let (hidden, restarts) = if demo {
            (self.cfg.demo.hidden_candidates.clone(), self.cfg.demo.restarts)
        } else {
            (f.hidden_candidates.clone(), f.restarts)
        };
        let opts = BacktestOptions {
            models: f.models.clone(),
            horizons: f.horizons.clone(),
            split: split.clone(),
            network: f.network,
            hidden_candidates: hidden,
            restarts,
            seed: self.cfg.seed,
            refit: f.refit,
            maturities: maturities.to_vec(),
        };
        let result = run_backtest(factors, &opts)?;
        for fail in &result.failures {
            self.warn(format!("{} at h={} failed: {}", fail.model, fail.horizon, fail.message));
        }
        if result.runs.is_empty() {
            return Err(Error::Training("every model failed at every horizon".into()));
        }
        self.staging.write_with("forecasts.csv", |w| write_forecasts_csv(&result.runs, w))?;
        self.staging.write_with("curves.csv", |w| write_curves_csv(&result.runs, w))?;
        for r in &result.runs {
            for (i, net) in r.networks.iter().enumerate() {
                let mut text = net.to_json()?;
                text.push('\n');
                self.staging.write(&format!("networks/ftdnn_h{}_beta{i}.json", r.horizon), text.as_bytes())?;
            }
        }
        let summary = BacktestSummary {
            n_dates: factors.len(),
            lambda_star: factors.lambda_star,
            split: &split,
            refit: f.refit,
            runs: result
                .runs
                .iter()
                .map(|r| RunSummary {
                    model: r.model,
                    horizon: r.horizon,
                    n_forecasts: r.origins.len(),
                    first_target: r.target_dates.first().copied(),
                    last_target: r.target_dates.last().copied(),
                    selection: &r.selection,
                })
                .collect(),
            failures: &result.failures,
        };
        self.staging.write_json("backtest.json", &summary)?;
        Ok(result)
    }

    fn evaluate(
        &mut self,
        panel: &MaturityPanel,
        factors: &FactorSeries,
        runs: &[ForecastRun],
        search: Option<&LambdaSearchResult>,
    ) -> Result<()> {
        let mut config = self.cfg.evaluation_config();
        if !runs.iter().any(|r| r.model == config.benchmark) {
            let first = runs
                .iter()
                .map(|r| r.model)
                .min()
                .ok_or_else(|| Error::InsufficientData("no forecasts to evaluate".into()))?;
            self.warn(format!(
                "benchmark {} has no forecasts; ratios are relative to {first}",
                config.benchmark
            ));
            config.benchmark = first;
        }
        let report = build_report(runs, panel, &config)?;
        for w in report.mcs.iter().flat_map(|e| e.result.warnings.iter()) {
            self.warnings.insert(w.clone());
        }
        let s = &mut self.staging;
        s.write_with("avg_rmse.csv", |w| report.write_avg_rmse(w))?;
        s.write_with("rmse_ratio.csv", |w| report.write_rmse_ratio(w))?;
        s.write_with("mae_ratio.csv", |w| report.write_mae_ratio(w))?;
        s.write_with("mme_o.csv", |w| report.write_mme_o(w))?;
        s.write_with("mme_u.csv", |w| report.write_mme_u(w))?;
        let mut summary = report.summary_json()?;
        summary.push('\n');
        s.write("summary.json", summary.as_bytes())?;
        s.write_with("plot/surface.csv", |w| write_surface_long(panel, w))?;
        s.write_with("plot/factors.csv", |w| write_factors_long(factors, w))?;
        s.write_with("plot/loss_curves.csv", |w| report.write_loss_curves(w))?;
        if let Some(search) = search {
            s.write_with("plot/lambda_profile.csv", |w| search.write_profile_csv(w))?;
        }
        Ok(())
    }

    fn demo(&mut self) -> Result<()> {
        let d = self.cfg.demo.clone();
        let spec = FactorProcessSpec::new(d.process.clone(), d.length, self.cfg.seed)
            .with_noise(d.factor_noise)
            .with_lambda(d.lambda);
        let truth = generate_factors(&spec)?.series;
        let cal = self.calendar()?;
        let mut quotes = generate_quotes(&truth, d.lambda, "CL", d.contracts, &cal)?;
        if d.price_noise > 0.0 {
            let mut rng = job_rng(self.cfg.seed, &[0xD0, 1]);
            for q in &mut quotes {
                q.settle += d.price_noise * standard_normal(&mut rng);
            }
        }
        let mut bytes = Vec::new();
        write_quotes_csv(&quotes, &mut bytes)?;
        self.staging.write("quotes.csv", &bytes)?;
        self.staging.write_with("truth_factors.csv", |w| truth.write_csv(w))?;

        let panel = self.ingest_bytes(&bytes, &cal)?;
        let (factors, search) = self.fit(&panel)?;
        let result = self.forecast(&factors, panel.maturities(), true)?;
        self.evaluate(&panel, &factors, &result.runs, search.as_ref())
    }
}
