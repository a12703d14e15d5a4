use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::lm::{self, Dataset};
use crate::forecast::network::{taps_at, Affine, NetworkConfig, StopReason, TrainedNetwork, TrainingDiagnostics};
use crate::forecast::split::{pairs_targeting, pairs_within, BacktestSplit};
use crate::rng::job_rng;

pub const MIN_TRAIN_TARGETS: usize = 30;

/// Hannan-Quinn criterion `ln(SSE/N) + k ln(ln N) / N`.
pub fn hqic(sse: f64, n: usize, k: usize) -> f64 {
    let n = n as f64;
    (sse.max(f64::MIN_POSITIVE) / n).ln() + k as f64 * n.ln().ln() / n
}

fn dataset(series: &[f64], origins: &[usize], cfg: &NetworkConfig, input: &Affine, output: &Affine) -> Dataset {
    let mut d = Dataset { width: cfg.input_lags, ..Default::default() };
    for &s in origins {
        let taps = taps_at(series, s, cfg.input_lags, cfg.delay).expect("origin has taps");
        d.inputs.extend(taps.iter().map(|v| input.normalize(*v)));
        d.targets.push(output.normalize(series[s + cfg.horizon]));
    }
    d
}

/// Trains one network mapping tapped values of `series` to the value
/// `horizon` steps ahead. Training pairs lie entirely inside the training
/// range; validation pairs are those whose target falls in the validation
/// range. Inputs are standardized with training-range moments of the series,
/// targets with the moments of the training targets.
pub fn train_ftdnn(series: &[f64], config: &NetworkConfig, split: &BacktestSplit) -> Result<TrainedNetwork> {
    config.validate()?;
    if split.len() > series.len() {
        return Err(Error::invalid(format!("split covers {} dates, series has {}", split.len(), series.len())));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("series contains non-finite values"));
    }
    let (lags, delay, h) = (config.input_lags, config.delay, config.horizon);
    let train_origins = pairs_within(&split.train, h, lags, delay);
    if train_origins.len() < MIN_TRAIN_TARGETS {
        return Err(Error::InsufficientData(format!(
            "{} training targets, at least {MIN_TRAIN_TARGETS} required",
            train_origins.len()
        )));
    }
    let val_origins = pairs_targeting(&split.validation, h, lags, delay);

    let input_norm = Affine::standardize(&series[split.train.clone()])?;
    let targets: Vec<f64> = train_origins.iter().map(|s| series[s + h]).collect();
    let output_norm = Affine::standardize(&targets)?;

    let train_set = dataset(series, &train_origins, config, &input_norm, &output_norm);
    let val_set = dataset(series, &val_origins, config, &input_norm, &output_norm);

    let mlp = config.mlp();
    let init = mlp.initial_weights(&mut job_rng(config.seed, &[]));
    let out = lm::train(&mlp, init, &train_set, &val_set, config);
    if !out.train_sse.is_finite() {
        return Err(Error::Training("training SSE diverged".into()));
    }
    if out.stop == StopReason::MaxEpochs {
        log::warn!(
            "network k={} h={} seed={} stopped at the epoch limit {}",
            config.hidden_neurons,
            h,
            config.seed,
            config.max_epochs
        );
    }
    let s2 = output_norm.scale * output_norm.scale;
    Ok(TrainedNetwork {
        config: *config,
        weights: out.weights,
        input_norm,
        output_norm,
        diagnostics: TrainingDiagnostics {
            train_sse: out.train_sse * s2,
            validation_sse: out.validation_sse.map(|v| v * s2),
            n_train: train_set.len(),
            n_validation: val_set.len(),
            epochs: out.epochs,
            converged: out.stop != StopReason::MaxEpochs,
            stop: out.stop,
            hqic: None,
            sse_history: out.sse_history,
        },
    })
}

/// Per-candidate outcome of `select_ftdnn`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub hidden_neurons: usize,
    pub n_params: usize,
    pub seed: Option<u64>,
    pub sse: Option<f64>,
    pub n: usize,
    pub hqic: Option<f64>,
    pub error: Option<String>,
}

fn selection_key(net: &TrainedNetwork) -> f64 {
    net.diagnostics.validation_sse.unwrap_or(net.diagnostics.train_sse)
}

/// Trains every candidate width once per seed, keeps the restart with the
/// lowest validation SSE, then picks the width minimizing HQIC on the
/// combined training and validation residuals. Equal HQIC favors the
/// smaller width.
pub fn select_ftdnn_scored(
    series: &[f64],
    candidates: &[usize],
    split: &BacktestSplit,
    base: &NetworkConfig,
    seeds: &[u64],
) -> Result<(TrainedNetwork, Vec<CandidateScore>)> {
    if candidates.is_empty() || seeds.is_empty() {
        return Err(Error::Config("candidate widths and seeds must be non-empty".into()));
    }
    let mut widths = candidates.to_vec();
    widths.sort_unstable();
    widths.dedup();

    let jobs: Vec<(usize, u64)> = widths.iter().flat_map(|&k| seeds.iter().map(move |&s| (k, s))).collect();
    let trained: Vec<Result<TrainedNetwork>> = jobs
        .par_iter()
        .map(|&(k, seed)| {
            let cfg = NetworkConfig { hidden_neurons: k, seed, ..*base };
            train_ftdnn(series, &cfg, split)
        })
        .collect();

    let mut best: Option<(f64, TrainedNetwork)> = None;
    let mut scores = Vec::with_capacity(widths.len());
    for (wi, &k) in widths.iter().enumerate() {
        let runs = &trained[wi * seeds.len()..(wi + 1) * seeds.len()];
        let mut winner: Option<&TrainedNetwork> = None;
        let mut last_error = None;
        for r in runs {
            match r {
                Ok(net) => {
                    if winner.is_none_or(|w| selection_key(net) < selection_key(w)) {
                        winner = Some(net);
                    }
                }
                Err(e) => last_error = Some(e.to_string()),
            }
        }
        let n_params = crate::forecast::network::param_count(base.input_lags, k);
        match winner {
            Some(net) => {
                let d = &net.diagnostics;
                let sse = d.train_sse + d.validation_sse.unwrap_or(0.0);
                let n = d.n_train + d.n_validation;
                let score = hqic(sse, n, n_params);
                scores.push(CandidateScore {
                    hidden_neurons: k,
                    n_params,
                    seed: Some(net.config.seed),
                    sse: Some(sse),
                    n,
                    hqic: Some(score),
                    error: None,
                });
                if best.as_ref().is_none_or(|(b, _)| score < *b) {
                    let mut chosen = net.clone();
                    chosen.diagnostics.hqic = Some(score);
                    best = Some((score, chosen));
                }
            }
            None => scores.push(CandidateScore {
                hidden_neurons: k,
                n_params,
                seed: None,
                sse: None,
                n: 0,
                hqic: None,
                error: last_error,
            }),
        }
    }
    match best {
        Some((_, net)) => Ok((net, scores)),
        None => Err(Error::Training(format!(
            "no candidate width trained: {}",
            scores.iter().filter_map(|s| s.error.as_deref()).next().unwrap_or("unknown error")
        ))),
    }
}

pub fn select_ftdnn(
    series: &[f64],
    candidates: &[usize],
    split: &BacktestSplit,
    base: &NetworkConfig,
    seeds: &[u64],
) -> Result<TrainedNetwork> {
    select_ftdnn_scored(series, candidates, split, base, seeds).map(|(n, _)| n)
}
