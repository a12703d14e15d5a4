//! Price-level forecast losses and the Model Confidence Set.

pub mod bootstrap;
pub mod losses;
pub mod mcs;
pub mod report;

pub use bootstrap::{stationary_bootstrap_indices, stationary_indices, stationary_indices_with_restart};
pub use losses::{mae, mme, over_under_shares, rmse, LossKind, MmeMode};
pub use mcs::{mcs, McsConfig, McsResult, McsStatistic};
pub use report::{
    build_loss_tensor, build_report, write_factors_long, write_surface_long, CellStats, EvaluationConfig, LossTensor,
    McsEntry, Report,
};
