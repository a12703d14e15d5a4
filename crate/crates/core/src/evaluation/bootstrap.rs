//! Stationary bootstrap resampling.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{index, job_rng};

/// `n` indices: a uniform start, then at each step a fresh uniform start
/// with probability `restart`, otherwise the circular successor.
pub fn stationary_indices_with_restart<R: Rng + ?Sized>(rng: &mut R, n: usize, restart: f64, out: &mut Vec<usize>) {
    out.clear();
    if n == 0 {
        return;
    }
    let mut i = index(rng, n);
    out.push(i);
    for _ in 1..n {
        i = if restart > 0.0 && rng.random::<f64>() < restart {
            index(rng, n)
        } else {
            (i + 1) % n
        };
        out.push(i);
    }
}

/// Politis-Romano resample of `0..n` with geometric blocks of mean `expected_block`.
pub fn stationary_indices<R: Rng + ?Sized>(rng: &mut R, n: usize, expected_block: f64, out: &mut Vec<usize>) {
    stationary_indices_with_restart(rng, n, 1.0 / expected_block, out);
}

/// Seeded convenience wrapper.
pub fn stationary_bootstrap_indices(n: usize, expected_block: f64, seed: u64) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::invalid("bootstrap of an empty series"));
    }
    if !(expected_block >= 1.0 && expected_block.is_finite()) {
        return Err(Error::invalid(format!("expected block length {expected_block} is below 1")));
    }
    let mut out = Vec::with_capacity(n);
    stationary_indices(&mut job_rng(seed, &[]), n, expected_block, &mut out);
    Ok(out)
}
