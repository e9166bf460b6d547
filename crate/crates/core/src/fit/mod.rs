//! Model fitting: design construction, calibrated (CAL) estimating equations,
//! weighted quantile and least-squares regressions, maximum-likelihood
//! logistic regression and lasso-penalized (RCAL) variants with
//! cross-validated penalty selection.

mod cal;
mod design;
mod lasso;
mod linalg;
mod logistic;
mod quantile;
mod wls;

pub use cal::{expit, fit_cal_logistic, propensity_scores, Arm, CalFit, PROPENSITY_CLIP};
pub use design::{build_design, ColumnInfo, Design, DesignSpec, DropReason, Dropped, Terms};
pub use lasso::{
    fit_lasso, fit_lasso_path_cv, kappa_max, LassoConfig, LassoFit, LassoLoss, LassoPath,
};
pub use logistic::{fit_logistic_ml, LogisticFit};
pub use quantile::{fit_weighted_quantile, weighted_check_objective, QuantileFit};
pub use wls::{fit_weighted_ls, WlsFit};
