//! Prediction and imputation under dependent errors.
//!
//! The crate covers regression prediction with autocorrelation corrections,
//! counterfactual imputation in factor-model panels, interval inference and
//! coverage diagnostics, and Monte Carlo drivers for the simulation designs.

pub mod cli;
pub mod dgp_mc;
pub mod error;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod linpred;
pub mod manifest;
pub mod normal;
pub mod panel_impute;
pub mod process;

pub use error::{PupError, Result};
