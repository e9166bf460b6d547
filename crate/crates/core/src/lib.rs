//! Sensitivity analysis for treatment effects under unmeasured confounding.
//!
//! The crate bounds counterfactual means when a latent confounder may shift
//! both the treatment odds (by a factor in `[lambda1, lambda2]`) and the
//! outcome regression (by at most a prescribed amount). It covers closed-form
//! conditional bounds, the Ding–VanderWeele family for binary outcomes,
//! brute-force oracles, calibrated model fitting and doubly robust estimation
//! with Wald or bootstrap intervals.

pub mod bounds;
pub mod data;
pub mod dv;
pub mod dv_sample;
pub mod estimate;
pub mod fit;
pub mod oracle;
pub mod synthetic;

mod error;

pub use error::{Error, Result};
