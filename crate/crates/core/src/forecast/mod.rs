//! Direct multi-step forecasts of the three curve factors.
//!
//! Every model is fit separately per horizon `h` (in panel steps) and maps
//! information at origin `t` to `beta_{t+h}`; nothing is iterated.

pub mod backtest;
pub mod ftdnn;
pub mod linear;
pub mod lm;
pub mod network;
pub mod split;

pub use backtest::{
    read_forecasts_csv, run_backtest, test_origins, write_curves_csv, write_forecasts_csv, BacktestOptions,
    BacktestResult, ForecastRun, ModelFailure, ModelId, RefitPolicy,
};
pub use ftdnn::{hqic, select_ftdnn, select_ftdnn_scored, train_ftdnn, CandidateScore};
pub use linear::{fit_ar1_direct, fit_var1_direct, forecast_rw, Ar1Fit, Var1Fit};
pub use network::{Activation, Affine, NetworkConfig, NetworkDocument, StopReason, TrainedNetwork};
pub use split::BacktestSplit;
