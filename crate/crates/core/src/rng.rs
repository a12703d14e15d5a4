//! Seeded random streams.
//!
//! Every stochastic component draws from ChaCha8 (`rand_chacha::ChaCha8Rng`),
//! a portable counter-based generator. A job is identified by a root seed and
//! a path of integers (model, horizon, factor, restart, ...). The root seed
//! keys the generator through `SeedableRng::seed_from_u64` and the path is
//! folded with SplitMix64 into the 64-bit ChaCha stream id, so two jobs never
//! share a stream and scheduling order never changes what a job sees.
//!
//! Uniform doubles use the 53-bit conversion of `rand`; normal deviates use
//! the Box-Muller transform on two such uniforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type JobRng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream_id(path: &[u64]) -> u64 {
    path.iter()
        .fold(0x5EED_0F_0111_u64, |acc, &p| mix64(acc ^ mix64(p)))
}

pub fn job_rng(seed: u64, path: &[u64]) -> JobRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(path));
    rng
}

/// A child root seed, for jobs that hand a seed on rather than a stream.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    mix64(seed ^ stream_id(path))
}

/// Uniform on `[lo, hi)`.
pub fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // 1 - u keeps the log argument in (0, 1].
    let u1 = 1.0 - rng.random::<f64>();
    let u2 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Uniform integer in `[0, n)`.
pub fn index<R: Rng + ?Sized>(rng: &mut R, n: usize) -> usize {
    rng.random_range(0..n)
}
