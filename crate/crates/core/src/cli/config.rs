//! Run configuration: one TOML document, every key overridable from the
//! command line as `--set section.key=value`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evaluation::{EvaluationConfig, McsConfig, McsStatistic};
use crate::forecast::network::MAX_HIDDEN;
use crate::forecast::{ModelId, NetworkConfig, RefitPolicy};
use crate::lambda_search::{LambdaDomain, SearchOptions};
use crate::panel::{default_grid, ExtrapolationPolicy, PanelOptions};
use crate::quotes::{DateFormat, DayCount, QuoteFormat};
use crate::rng::derive_seed;
use crate::spline::Boundary;
use crate::synthetic::{logistic_map_process, FactorProcess};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub out: PathBuf,
    pub input: InputConfig,
    pub data: DataConfig,
    pub panel: PanelConfig,
    pub lambda: LambdaConfig,
    pub split: SplitConfig,
    pub forecast: ForecastConfig,
    pub evaluation: EvaluationSection,
    pub demo: DemoConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 0,
            out: PathBuf::from("out"),
            input: InputConfig::default(),
            data: DataConfig::default(),
            panel: PanelConfig::default(),
            lambda: LambdaConfig::default(),
            split: SplitConfig::default(),
            forecast: ForecastConfig::default(),
            evaluation: EvaluationSection::default(),
            demo: DemoConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub quotes: Option<PathBuf>,
    pub holidays: Option<PathBuf>,
    pub panel: Option<PathBuf>,
    pub provenance: Option<PathBuf>,
    pub factors: Option<PathBuf>,
    /// `fit.json` written by `fit`, source of the decay.
    pub fit: Option<PathBuf>,
    pub forecasts: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub date_column: String,
    pub contract_column: String,
    pub settle_column: String,
    pub date_format: DateFormat,
    pub day_count: DayCount,
    pub month_end: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        let f = QuoteFormat::default();
        Self {
            date_column: f.date_column,
            contract_column: f.contract_column,
            settle_column: f.settle_column,
            date_format: f.date_format,
            day_count: DayCount::TradingDays,
            month_end: true,
        }
    }
}

impl DataConfig {
    pub fn quote_format(&self) -> QuoteFormat {
        QuoteFormat {
            date_column: self.date_column.clone(),
            contract_column: self.contract_column.clone(),
            settle_column: self.settle_column.clone(),
            date_format: self.date_format,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PanelConfig {
    pub grid: Vec<u32>,
    pub extrapolation: ExtrapolationPolicy,
    pub spline: Boundary,
    pub duplicate_tolerance: f64,
    pub overshoot_tolerance: f64,
}

impl Default for PanelConfig {
    fn default() -> Self {
        let o = PanelOptions::default();
        Self {
            grid: default_grid(),
            extrapolation: o.extrapolation,
            spline: o.boundary,
            duplicate_tolerance: o.duplicate_tolerance,
            overshoot_tolerance: o.overshoot_tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LambdaConfig {
    /// Bounds on `1/lambda` in days.
    pub min_inverse_days: f64,
    pub max_inverse_days: f64,
    pub grid_points: usize,
    pub rel_tol: f64,
    /// Skip the search and use this decay.
    pub fixed: Option<f64>,
    pub per_date: bool,
}

impl Default for LambdaConfig {
    fn default() -> Self {
        let s = SearchOptions::default();
        Self {
            min_inverse_days: 30.0,
            max_inverse_days: 1000.0,
            grid_points: s.grid_points,
            rel_tol: s.rel_tol,
            fixed: None,
            per_date: true,
        }
    }
}

impl LambdaConfig {
    pub fn domain(&self) -> LambdaDomain {
        LambdaDomain::from_inverse_days(self.min_inverse_days, self.max_inverse_days)
    }

    pub fn search(&self) -> SearchOptions {
        SearchOptions {
            grid_points: self.grid_points,
            rel_tol: self.rel_tol,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train: 0.6,
            validation: 0.2,
            test: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastConfig {
    pub models: Vec<ModelId>,
    /// Panel steps (months on a month-end panel).
    pub horizons: Vec<usize>,
    pub hidden_candidates: Vec<usize>,
    pub restarts: usize,
    pub refit: RefitPolicy,
    pub network: NetworkConfig,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            models: ModelId::ALL.to_vec(),
            horizons: vec![1, 3, 6, 12],
            hidden_candidates: (1..=MAX_HIDDEN).collect(),
            restarts: 10,
            refit: RefitPolicy::Fixed,
            network: NetworkConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub alpha: f64,
    pub replications: usize,
    pub block_length: f64,
    pub horizon_scaled_blocks: bool,
    pub statistic: McsStatistic,
    pub benchmark: ModelId,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        let m = McsConfig::default();
        Self {
            alpha: m.alpha,
            replications: m.replications,
            block_length: m.block_length,
            horizon_scaled_blocks: false,
            statistic: m.statistic,
            benchmark: ModelId::Rw,
        }
    }
}

/// Synthetic run used by `demo`. Its network search is narrower than the
/// default so that a demo finishes in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    pub process: FactorProcess,
    pub length: usize,
    pub factor_noise: [f64; 3],
    pub price_noise: f64,
    pub lambda: f64,
    /// Delivery months quoted on every date.
    pub contracts: u32,
    pub hidden_candidates: Vec<usize>,
    pub restarts: usize,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            process: logistic_map_process(),
            length: 240,
            factor_noise: [0.5, 0.1, 0.1],
            price_noise: 0.0,
            lambda: 0.0058,
            contracts: 36,
            hidden_candidates: (1..=6).collect(),
            restarts: 3,
        }
    }
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl RunConfig {
    /// Parses a TOML document after applying `overrides` (`a.b.c`, value).
    pub fn from_toml(text: &str, overrides: &[(String, toml::Value)]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| config_error(format!("config file: {e}")))?;
        for (key, value) in overrides {
            set_path(&mut table, key, value.clone())?;
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| config_error(e.to_string()))
    }

    pub fn load(path: Option<&Path>, overrides: &[(String, toml::Value)]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| config_error(format!("cannot read {}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.split;
        if !(s.train > 0.0 && s.validation >= 0.0 && s.test > 0.0) {
            return Err(config_error("split proportions must be positive (validation may be 0)"));
        }
        if (s.train + s.validation + s.test - 1.0).abs() > 1e-9 {
            return Err(config_error(format!(
                "split proportions sum to {}, not 1",
                s.train + s.validation + s.test
            )));
        }
        let g = &self.panel.grid;
        if g.is_empty() || g[0] == 0 || g.windows(2).any(|w| w[1] <= w[0]) {
            return Err(config_error("panel.grid must be positive and strictly increasing"));
        }
        if !(self.panel.duplicate_tolerance >= 0.0 && self.panel.overshoot_tolerance >= 0.0) {
            return Err(config_error("panel tolerances must be non-negative"));
        }
        let l = &self.lambda;
        if !(l.min_inverse_days > 0.0 && l.min_inverse_days < l.max_inverse_days && l.max_inverse_days.is_finite()) {
            return Err(config_error("lambda inverse-day bounds must satisfy 0 < min < max"));
        }
        if l.grid_points < 2 || !(l.rel_tol > 0.0) {
            return Err(config_error("lambda search needs at least 2 grid points and a positive tolerance"));
        }
        if let Some(f) = l.fixed {
            if !(f > 0.0 && f.is_finite()) {
                return Err(config_error("lambda.fixed must be positive"));
            }
        }
        let f = &self.forecast;
        if f.models.is_empty() || f.horizons.is_empty() || f.horizons.contains(&0) {
            return Err(config_error("forecast needs models and positive horizons"));
        }
        for k in f.hidden_candidates.iter().chain(&self.demo.hidden_candidates) {
            if !(1..=MAX_HIDDEN).contains(k) {
                return Err(config_error(format!("hidden width {k} outside 1..={MAX_HIDDEN}")));
            }
        }
        if f.hidden_candidates.is_empty() || self.demo.hidden_candidates.is_empty() {
            return Err(config_error("hidden_candidates must not be empty"));
        }
        if f.restarts == 0 || self.demo.restarts == 0 {
            return Err(config_error("restarts must be positive"));
        }
        NetworkConfig {
            hidden_neurons: 1,
            ..f.network
        }
        .validate()?;
        self.evaluation_config().mcs.validate()?;
        if self.demo.length < 30 || self.demo.contracts < 4 || !(self.demo.lambda > 0.0) || !(self.demo.price_noise >= 0.0) {
            return Err(config_error("demo needs length >= 30, contracts >= 4, positive lambda, non-negative noise"));
        }
        Ok(())
    }

    /// Requires `path` to be set and to exist.
    pub fn require(&self, key: &str, path: &Option<PathBuf>) -> Result<PathBuf> {
        let p = path
            .clone()
            .ok_or_else(|| config_error(format!("input.{key} is required (set it in the config or pass --{key})")))?;
        if !p.exists() {
            return Err(config_error(format!("input.{key}: {} does not exist", p.display())));
        }
        Ok(p)
    }

    pub fn panel_options(&self) -> PanelOptions {
        PanelOptions {
            grid: self.panel.grid.clone(),
            extrapolation: self.panel.extrapolation,
            boundary: self.panel.spline,
            month_end: self.data.month_end,
            duplicate_tolerance: self.panel.duplicate_tolerance,
            overshoot_tolerance: self.panel.overshoot_tolerance,
        }
    }

    pub fn evaluation_config(&self) -> EvaluationConfig {
        let e = &self.evaluation;
        EvaluationConfig {
            mcs: McsConfig {
                alpha: e.alpha,
                replications: e.replications,
                block_length: e.block_length,
                seed: derive_seed(self.seed, &[0xE7A1]),
                statistic: e.statistic,
            },
            benchmark: e.benchmark,
            horizon_scaled_blocks: e.horizon_scaled_blocks,
        }
    }

    /// SHA-256 of the canonical JSON form, ignoring settings that cannot
    /// change results (output location and thread count).
    pub fn digest(&self) -> Result<String> {
        let mut c = self.clone();
        c.out = PathBuf::new();
        c.threads = 0;
        let json = serde_json::to_vec(&c)?;
        Ok(hex::encode(Sha256::digest(&json)))
    }
}

/// Parses `key=value`; the value is read as a TOML literal, falling back
/// to a bare string.
pub fn parse_override(s: &str) -> Result<(String, toml::Value)> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| config_error(format!("override `{s}` is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(config_error(format!("override `{s}` has an empty key")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields one part");
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| config_error(format!("`{p}` in `{key}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_toml(&text, &[]).unwrap(), c);
        assert_eq!(RunConfig::from_toml("", &[]).unwrap(), c);
    }

    #[test]
    fn overrides_win_over_the_file() {
        let text = "seed = 3\n[split]\ntrain = 0.5\nvalidation = 0.25\ntest = 0.25\n";
        let o = vec![
            parse_override("seed=9").unwrap(),
            parse_override("forecast.network.max_epochs=40").unwrap(),
            parse_override("evaluation.benchmark=AR1").unwrap(),
            parse_override("forecast.horizons=[1, 2]").unwrap(),
        ];
        let c = RunConfig::from_toml(text, &o).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.split.train, 0.5);
        assert_eq!(c.forecast.network.max_epochs, 40);
        assert_eq!(c.evaluation.benchmark, ModelId::Ar1);
        assert_eq!(c.forecast.horizons, vec![1, 2]);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(RunConfig::from_toml("nonsense = 1", &[]).is_err());
        let bad_split = RunConfig {
            split: SplitConfig {
                train: 0.6,
                validation: 0.3,
                test: 0.3,
            },
            ..Default::default()
        };
        assert!(matches!(bad_split.validate(), Err(Error::Config(_))));
        let mut c = RunConfig::default();
        c.forecast.hidden_candidates = vec![0];
        assert!(c.validate().is_err());
        assert!(c.require("quotes", &Some(PathBuf::from("/definitely/missing.csv"))).is_err());
        assert!(parse_override("novalue").is_err());
    }

    #[test]
    fn digest_ignores_output_location() {
        let a = RunConfig::default();
        let b = RunConfig {
            out: PathBuf::from("elsewhere"),
            threads: 3,
            ..Default::default()
        };
        assert_eq!(a.digest().unwrap(), b.digest().unwrap());
        let c = RunConfig { seed: 1, ..Default::default() };
        assert_ne!(a.digest().unwrap(), c.digest().unwrap());
    }
}
