use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn non_empty(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::InsufficientData("loss of an empty error series".into()));
    }
    Ok(errors.len() as f64)
}

pub fn rmse(errors: &[f64]) -> Result<f64> {
    let n = non_empty(errors)?;
    Ok((errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt())
}

pub fn mae(errors: &[f64]) -> Result<f64> {
    let n = non_empty(errors)?;
    Ok(errors.iter().map(|e| e.abs()).sum::<f64>() / n)
}

/// Which side of the forecast gets the square-root weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MmeMode {
    /// Over-predictions (`e > 0`) enter as `sqrt|e|`, under-predictions as `|e|`.
    O,
    /// Under-predictions enter as `sqrt|e|`, over-predictions as `|e|`.
    U,
}

/// Mean mixed error with errors `e = forecast - actual`. Zero errors add
/// nothing but still count in the divisor.
pub fn mme(errors: &[f64], mode: MmeMode) -> Result<f64> {
    let n = non_empty(errors)?;
    let kind = match mode {
        MmeMode::O => LossKind::MmeO,
        MmeMode::U => LossKind::MmeU,
    };
    Ok(errors.iter().map(|e| kind.pointwise(*e)).sum::<f64>() / n)
}

/// Fractions of strictly positive and strictly negative errors.
pub fn over_under_shares(errors: &[f64]) -> Result<(f64, f64)> {
    let n = non_empty(errors)?;
    let over = errors.iter().filter(|e| **e > 0.0).count() as f64;
    let under = errors.iter().filter(|e| **e < 0.0).count() as f64;
    Ok((over / n, under / n))
}

/// Per-observation losses whose means give MSE, MAE and the two MMEs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Squared,
    Absolute,
    MmeO,
    MmeU,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::Squared, LossKind::Absolute, LossKind::MmeO, LossKind::MmeU];

    pub fn pointwise(self, e: f64) -> f64 {
        match self {
            LossKind::Squared => e * e,
            LossKind::Absolute => e.abs(),
            LossKind::MmeO if e > 0.0 => e.sqrt(),
            LossKind::MmeU if e < 0.0 => (-e).sqrt(),
            LossKind::MmeO | LossKind::MmeU => e.abs(),
        }
    }

    pub fn series(self, errors: &[f64]) -> Vec<f64> {
        errors.iter().map(|e| self.pointwise(*e)).collect()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Squared => "squared",
            LossKind::Absolute => "absolute",
            LossKind::MmeO => "mme_o",
            LossKind::MmeU => "mme_u",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown loss `{s}`")))
    }
}
