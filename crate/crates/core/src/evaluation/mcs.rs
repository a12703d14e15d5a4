//! Model Confidence Set of Hansen, Lunde and Nason.
//!
//! Loss differentials are studentized with bootstrap variances and the
//! null distribution of the test statistic comes from the same stationary
//! bootstrap resamples. Resampled model means are computed once and reused
//! in every elimination round.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::bootstrap::stationary_indices;
use crate::rng::job_rng;

pub const RECOMMENDED_MIN_REPLICATIONS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McsStatistic {
    /// `T_R = max_ij |d_ij| / se(d_ij)`.
    #[default]
    Range,
    /// `T_max = max_i d_i. / se(d_i.)`, deviations from the set average.
    Max,
}

impl fmt::Display for McsStatistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            McsStatistic::Range => "range",
            McsStatistic::Max => "max",
        })
    }
}

impl FromStr for McsStatistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "range" | "t_r" | "tr" => Ok(McsStatistic::Range),
            "max" | "t_max" | "tmax" => Ok(McsStatistic::Max),
            _ => Err(Error::Config(format!("unknown MCS statistic `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McsConfig {
    pub alpha: f64,
    pub replications: usize,
    pub block_length: f64,
    pub seed: u64,
    pub statistic: McsStatistic,
}

impl Default for McsConfig {
    fn default() -> Self {
        Self {
            alpha: 0.10,
            replications: 2000,
            block_length: 20.0,
            seed: 0,
            statistic: McsStatistic::Range,
        }
    }
}

impl McsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha {} must lie in (0, 1)", self.alpha)));
        }
        if self.replications == 0 {
            return Err(Error::Config("bootstrap replications must be positive".into()));
        }
        if !(self.block_length >= 1.0 && self.block_length.is_finite()) {
            return Err(Error::Config(format!("block length {} is below 1", self.block_length)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsResult {
    pub models: Vec<String>,
    /// MCS p-value per model, in the order of `models`.
    pub p_values: Vec<f64>,
    /// Models with `p >= alpha`.
    pub surviving: Vec<String>,
    /// Elimination order; equivalent models are eliminated together.
    pub eliminated: Vec<String>,
    pub alpha: f64,
    pub replications: usize,
    pub block_length: f64,
    pub seed: u64,
    pub statistic: McsStatistic,
    pub warnings: Vec<String>,
}

impl McsResult {
    pub fn p_value(&self, model: &str) -> Option<f64> {
        self.models.iter().position(|m| m == model).map(|i| self.p_values[i])
    }

    pub fn contains(&self, model: &str) -> bool {
        self.surviving.iter().any(|m| m == model)
    }
}

/// Differences whose bootstrap variance is this small relative to the loss
/// scale are treated as exactly zero.
const ZERO_VARIANCE_REL: f64 = 1e-24;

fn studentize(d: f64, var: f64, scale2: f64) -> f64 {
    if var > ZERO_VARIANCE_REL * scale2 {
        d / var.sqrt()
    } else if d.abs() > 1e-12 * scale2.sqrt() {
        d.signum() * f64::INFINITY
    } else {
        0.0
    }
}

/// Runs the MCS on aligned loss series (one per model, larger is worse).
pub fn mcs(names: &[String], losses: &[Vec<f64>], cfg: &McsConfig) -> Result<McsResult> {
    cfg.validate()?;
    if names.len() != losses.len() {
        return Err(Error::invalid("one loss series per model is required"));
    }
    if losses.is_empty() {
        return Err(Error::InsufficientData("MCS needs at least one model".into()));
    }
    let n = losses[0].len();
    if n == 0 || losses.iter().any(|l| l.len() != n) {
        return Err(Error::Misaligned("loss series must be non-empty and of equal length".into()));
    }
    if losses.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("loss series contain non-finite values"));
    }

    let mut warnings = Vec::new();
    if cfg.replications < RECOMMENDED_MIN_REPLICATIONS {
        let w = format!(
            "{} bootstrap replications is below the recommended {RECOMMENDED_MIN_REPLICATIONS}",
            cfg.replications
        );
        log::warn!("{w}");
        warnings.push(w);
    }

    // Bit-identical series form one class represented by its first member.
    let mut class_of = vec![usize::MAX; losses.len()];
    let mut reps: Vec<usize> = Vec::new();
    for i in 0..losses.len() {
        if let Some(c) = reps.iter().position(|&r| losses[r] == losses[i]) {
            class_of[i] = c;
        } else {
            class_of[i] = reps.len();
            reps.push(i);
        }
    }
    let m = reps.len();
    if m < losses.len() {
        warnings.push(format!("{} models share identical losses and are treated as one", losses.len() - m + 1));
    }

    let mean = |l: &[f64]| l.iter().sum::<f64>() / l.len() as f64;
    let means: Vec<f64> = reps.iter().map(|&r| mean(&losses[r])).collect();
    let scale2 = reps
        .iter()
        .flat_map(|&r| losses[r].iter())
        .map(|v| v * v)
        .sum::<f64>()
        / (m * n) as f64
        / n as f64;
    let scale2 = scale2.max(f64::MIN_POSITIVE);

    // boot[b * m + i]: class i's mean under resample b.
    let boot: Vec<f64> = (0..cfg.replications)
        .into_par_iter()
        .flat_map_iter(|b| {
            let mut rng = job_rng(cfg.seed, &[b as u64]);
            let mut idx = Vec::with_capacity(n);
            stationary_indices(&mut rng, n, cfg.block_length, &mut idx);
            reps.iter()
                .map(|&r| idx.iter().map(|&t| losses[r][t]).sum::<f64>() / n as f64)
                .collect::<Vec<_>>()
        })
        .collect();
    let bmean = |b: usize, i: usize| boot[b * m + i];
    let reps_b = cfg.replications;

    let mut alive: Vec<usize> = (0..m).collect();
    let mut class_p = vec![1.0; m];
    let mut order = Vec::with_capacity(m);
    let mut running = 0.0f64;

    while alive.len() > 1 {
        let k = alive.len();
        let (stat, boot_stats, worst) = match cfg.statistic {
            McsStatistic::Range => {
                let mut stat = 0.0f64;
                let mut boot_stats = vec![0.0f64; reps_b];
                // Per model: max over j of studentized d_ij.
                let mut deficit = vec![f64::NEG_INFINITY; k];
                for a in 0..k {
                    for c in a + 1..k {
                        let (i, j) = (alive[a], alive[c]);
                        let d = means[i] - means[j];
                        let var = (0..reps_b)
                            .map(|b| (bmean(b, i) - bmean(b, j) - d).powi(2))
                            .sum::<f64>()
                            / reps_b as f64;
                        let t = studentize(d, var, scale2);
                        stat = stat.max(t.abs());
                        deficit[a] = deficit[a].max(t);
                        deficit[c] = deficit[c].max(-t);
                        if var > ZERO_VARIANCE_REL * scale2 {
                            let se = var.sqrt();
                            for (b, s) in boot_stats.iter_mut().enumerate() {
                                let tb = ((bmean(b, i) - bmean(b, j) - d) / se).abs();
                                if tb > *s {
                                    *s = tb;
                                }
                            }
                        }
                    }
                }
                let worst = argmax(&deficit);
                (stat, boot_stats, worst)
            }
            McsStatistic::Max => {
                let avg = alive.iter().map(|&i| means[i]).sum::<f64>() / k as f64;
                let bavg: Vec<f64> = (0..reps_b)
                    .map(|b| alive.iter().map(|&i| bmean(b, i)).sum::<f64>() / k as f64)
                    .collect();
                let mut ts = vec![0.0; k];
                let mut boot_stats = vec![f64::NEG_INFINITY; reps_b];
                for (a, &i) in alive.iter().enumerate() {
                    let d = means[i] - avg;
                    let var = (0..reps_b)
                        .map(|b| (bmean(b, i) - bavg[b] - d).powi(2))
                        .sum::<f64>()
                        / reps_b as f64;
                    ts[a] = studentize(d, var, scale2);
                    let se = var.sqrt();
                    for (b, s) in boot_stats.iter_mut().enumerate() {
                        let tb = if var > ZERO_VARIANCE_REL * scale2 {
                            (bmean(b, i) - bavg[b] - d) / se
                        } else {
                            0.0
                        };
                        if tb > *s {
                            *s = tb;
                        }
                    }
                }
                let worst = argmax(&ts);
                (ts[worst], boot_stats, worst)
            }
        };
        let p = if stat == 0.0 {
            1.0
        } else {
            boot_stats.iter().filter(|s| **s >= stat).count() as f64 / reps_b as f64
        };
        running = running.max(p);
        let gone = alive.remove(worst);
        class_p[gone] = running;
        order.push(gone);
    }
    class_p[alive[0]] = 1.0;

    let p_values: Vec<f64> = class_of.iter().map(|&c| class_p[c]).collect();
    let surviving = names
        .iter()
        .zip(&p_values)
        .filter(|(_, p)| **p >= cfg.alpha)
        .map(|(n, _)| n.clone())
        .collect();
    let eliminated = order
        .iter()
        .flat_map(|&c| names.iter().zip(&class_of).filter(move |(_, k)| **k == c).map(|(n, _)| n.clone()))
        .collect();
    Ok(McsResult {
        models: names.to_vec(),
        p_values,
        surviving,
        eliminated,
        alpha: cfg.alpha,
        replications: cfg.replications,
        block_length: cfg.block_length,
        seed: cfg.seed,
        statistic: cfg.statistic,
        warnings,
    })
}

/// First index of the largest value.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{job_rng, standard_normal};

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("m{i}")).collect()
    }

    fn iid(n: usize, seed: u64, shift: f64) -> Vec<f64> {
        let mut rng = job_rng(seed, &[]);
        (0..n).map(|_| 10.0 + shift + standard_normal(&mut rng)).collect()
    }

    #[test]
    fn identical_losses_all_survive() {
        let l = iid(80, 1, 0.0);
        let r = mcs(&names(3), &[l.clone(), l.clone(), l], &McsConfig::default()).unwrap();
        assert_eq!(r.p_values, vec![1.0; 3]);
        assert_eq!(r.surviving.len(), 3);
    }

    #[test]
    fn single_model_survives_trivially() {
        let r = mcs(&names(1), &[iid(30, 1, 0.0)], &McsConfig::default()).unwrap();
        assert_eq!(r.p_values, vec![1.0]);
        assert_eq!(r.surviving, names(1));
    }

    #[test]
    fn dominated_model_is_eliminated() {
        for statistic in [McsStatistic::Range, McsStatistic::Max] {
            let cfg = McsConfig { statistic, ..Default::default() };
            let r = mcs(&names(2), &[iid(100, 2, 0.0), iid(100, 3, 5.0)], &cfg).unwrap();
            assert!(r.p_values[1] < 0.01, "{statistic}: {:?}", r.p_values);
            assert_eq!(r.p_values[0], 1.0);
            assert_eq!(r.surviving, vec!["m0".to_string()]);
        }
    }

    #[test]
    fn constant_offset_is_infinitely_significant() {
        let a = iid(50, 4, 0.0);
        let b: Vec<f64> = a.iter().map(|x| x + 0.5).collect();
        let r = mcs(&names(2), &[b, a], &McsConfig::default()).unwrap();
        assert_eq!(r.p_values, vec![0.0, 1.0]);
    }

    #[test]
    fn p_values_are_monotone_in_elimination_order() {
        let losses: Vec<Vec<f64>> = (0..5).map(|i| iid(60, 10 + i, 0.15 * i as f64)).collect();
        let r = mcs(&names(5), &losses, &McsConfig { replications: 500, ..Default::default() }).unwrap();
        let ps: Vec<f64> = r.eliminated.iter().map(|m| r.p_value(m).unwrap()).collect();
        assert!(ps.windows(2).all(|w| w[0] <= w[1]), "{ps:?}");
        assert!(!r.surviving.is_empty());
        assert!(!r.warnings.is_empty());
    }

    #[test]
    fn survivors_invariant_to_positive_affine_rescaling() {
        let losses: Vec<Vec<f64>> = (0..4).map(|i| iid(70, 20 + i, 0.2 * i as f64)).collect();
        let scaled: Vec<Vec<f64>> = losses.iter().map(|l| l.iter().map(|x| 3.0 * x + 7.0).collect()).collect();
        let cfg = McsConfig { replications: 1000, ..Default::default() };
        let a = mcs(&names(4), &losses, &cfg).unwrap();
        let b = mcs(&names(4), &scaled, &cfg).unwrap();
        assert_eq!(a.surviving, b.surviving);
        for (x, y) in a.p_values.iter().zip(&b.p_values) {
            assert!((x - y).abs() <= 2.0 / cfg.replications as f64);
        }
    }

    #[test]
    fn reproducible_with_fixed_seed() {
        let losses: Vec<Vec<f64>> = (0..3).map(|i| iid(40, 30 + i, 0.1 * i as f64)).collect();
        let cfg = McsConfig { seed: 99, ..Default::default() };
        assert_eq!(mcs(&names(3), &losses, &cfg).unwrap(), mcs(&names(3), &losses, &cfg).unwrap());
    }

    #[test]
    fn equivalent_models_share_a_p_value() {
        let good = iid(60, 40, 0.0);
        let bad = iid(60, 41, 4.0);
        let r = mcs(&names(3), &[bad.clone(), good, bad], &McsConfig::default()).unwrap();
        assert_eq!(r.p_values[0], r.p_values[2]);
        assert!(r.p_values[0] < 0.01);
        assert_eq!(r.eliminated, vec!["m0".to_string(), "m2".to_string()]);
    }

    #[test]
    fn input_errors() {
        let cfg = McsConfig::default();
        assert!(mcs(&names(2), &[vec![1.0; 3], vec![1.0; 4]], &cfg).is_err());
        assert!(mcs(&names(0), &[], &cfg).is_err());
        assert!(mcs(&names(2), &[vec![1.0; 3]], &cfg).is_err());
        assert!(mcs(&names(1), &[vec![1.0]], &McsConfig { alpha: 1.5, ..cfg }).is_err());
    }
}
