//! Fits, scaling-law regressions and regime labels.

pub mod fit;
pub mod regime;
pub mod regression;

pub use fit::{escape_bounds, fit_exponential, fit_exponential_sampled, predict_escape, FitResult};
pub use regime::{classify_regime, Regime, RegimeEvidence, RegimeLabel, RegimeThresholds};
pub use regression::{bootstrap_slope_ci, ols_fit, ols_with_ci, pearson, ransac_fit, RegressionResult};
