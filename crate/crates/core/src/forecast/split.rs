use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Contiguous train / validation / test ranges over a series' dates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BacktestSplit {
    pub train: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
}

impl BacktestSplit {
    pub fn new(train: Range<usize>, validation: Range<usize>, test: Range<usize>) -> Result<Self> {
        if train.start != 0 || train.end != validation.start || validation.end != test.start {
            return Err(Error::invalid(format!(
                "split ranges must be contiguous from 0: {train:?} {validation:?} {test:?}"
            )));
        }
        if train.is_empty() || test.is_empty() || validation.end < validation.start || test.end < test.start {
            return Err(Error::invalid("split needs non-empty train and test ranges"));
        }
        Ok(Self { train, validation, test })
    }

    /// Splits `n` dates by proportions, the test range taking the remainder.
    pub fn proportional(n: usize, train_frac: f64, validation_frac: f64) -> Result<Self> {
        if !(train_frac > 0.0 && validation_frac >= 0.0 && train_frac + validation_frac < 1.0) {
            return Err(Error::invalid(format!(
                "split proportions {train_frac}/{validation_frac} leave no test range"
            )));
        }
        let n_train = (n as f64 * train_frac).round() as usize;
        let n_val = (n as f64 * validation_frac).round() as usize;
        if n_train + n_val >= n {
            return Err(Error::InsufficientData(format!("{n} dates cannot be split {train_frac}/{validation_frac}")));
        }
        Self::new(0..n_train, n_train..n_train + n_val, n_train + n_val..n)
    }

    /// The default 60/20/20 split.
    pub fn default_for(n: usize) -> Result<Self> {
        Self::proportional(n, 0.6, 0.2)
    }

    pub fn len(&self) -> usize {
        self.test.end
    }

    pub fn is_empty(&self) -> bool {
        self.test.end == 0
    }
}

/// Origins `s` of direct `h`-step pairs `(s, s + h)` whose tapped inputs
/// `s, s - delay, ..., s - (lags - 1) * delay` and target all lie in `range`.
pub fn pairs_within(range: &Range<usize>, h: usize, lags: usize, delay: usize) -> Vec<usize> {
    let back = lags.saturating_sub(1) * delay;
    (range.start + back..range.end)
        .filter(|s| s + h < range.end)
        .collect()
}

/// Origins of pairs whose target falls in `targets`; inputs may precede it.
pub fn pairs_targeting(targets: &Range<usize>, h: usize, lags: usize, delay: usize) -> Vec<usize> {
    let back = lags.saturating_sub(1) * delay;
    targets
        .clone()
        .filter_map(|t| t.checked_sub(h))
        .filter(|s| *s >= back)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixty_twenty_twenty() {
        let s = BacktestSplit::default_for(289).unwrap();
        assert_eq!(s.train, 0..173);
        assert_eq!(s.validation, 173..231);
        assert_eq!(s.test, 231..289);
        let s = BacktestSplit::default_for(100).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (60, 20, 20));
    }

    #[test]
    fn invalid_splits() {
        assert!(BacktestSplit::new(0..5, 6..8, 8..10).is_err());
        assert!(BacktestSplit::proportional(10, 0.7, 0.3).is_err());
        assert!(BacktestSplit::proportional(1, 0.6, 0.2).is_err());
    }

    #[test]
    fn pair_ranges() {
        assert_eq!(pairs_within(&(0..6), 2, 1, 1), vec![0, 1, 2, 3]);
        assert_eq!(pairs_within(&(0..6), 1, 2, 2), vec![2, 3, 4]);
        assert_eq!(pairs_targeting(&(6..9), 3, 1, 1), vec![3, 4, 5]);
        assert_eq!(pairs_targeting(&(2..5), 3, 1, 1), vec![0, 1]);
    }
}
