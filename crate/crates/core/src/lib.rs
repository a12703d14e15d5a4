//! Crude oil futures term structures: constant-maturity panels from raw
//! contract quotes, dynamic Nelson-Siegel factors, factor forecasts with a
//! focused time-delay neural network and linear benchmarks, and forecast
//! evaluation with asymmetric losses and the model confidence set.
//!
//! The pipeline runs in stages, each usable on its own:
//!
//! 1. [`quotes`] and [`calendar`]: parse quotes, compute expiries and days to
//!    maturity.
//! 2. [`panel`]: interpolate each date onto a fixed maturity grid.
//! 3. [`lambda_search`] and [`nelson_siegel`]: choose the decay and extract
//!    level, slope and curvature series.
//! 4. [`forecast`]: direct multi-step forecasts of the factors and the implied
//!    curves.
//! 5. [`evaluation`]: losses, stationary bootstrap and model confidence sets.
//!
//! [`synthetic`] generates panels with known ground truth and [`cli`] wires
//! the stages into the `oilcurve` binary.

pub mod calendar;
pub mod cli;
pub mod error;
pub mod evaluation;
pub mod forecast;
pub mod lambda_search;
pub mod nelson_siegel;
pub mod panel;
pub mod quotes;
pub mod rng;
pub mod spline;
pub mod synthetic;

pub use error::{Error, Result};
