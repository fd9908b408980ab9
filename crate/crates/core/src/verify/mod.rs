//! Losses, gradient checks and the verification suites.

pub mod grad;
pub mod loss;
pub mod suites;

pub use grad::{check_gradients, shared_psn_factor_two, GradCheckConfig, GradModel, GradientReport, SharedPsnReport};
pub use loss::{focal_loss, smooth_l1, total_loss, LossConfig};
pub use suites::{
    run_complexity_suite, run_decay_suite, run_suite, Check, DecaySuiteReport, Suite, SuiteOptions, VerifyReport,
    COMPLEXITY_SIZES,
};
