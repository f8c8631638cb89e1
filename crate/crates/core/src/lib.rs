//! Multi-threshold detection for censored accelerated failure time regression.
//!
//! The estimator runs in two stages. The splitting stage cuts the sample into
//! event-balanced segments along the thresholding variable and selects the
//! segments where coefficients change with a concave group penalty. The
//! refining stage locates each threshold inside its candidate window by a
//! two-sided Kaplan-Meier weighted least-squares scan, then fits sparse
//! per-subgroup coefficients. Segment length and penalty level are tuned by BIC.

pub mod bootstrap;
pub mod censored;
pub mod data;
pub mod error;
pub mod io;
pub mod penalty;
pub mod refining;
pub mod selection;
pub mod simulation;
pub mod splitting;

pub use censored::{km_weights, order_subset, stute_wls, KaplanMeierWeights, WlsFit};
pub use data::SurvivalDataset;
pub use error::{Error, Result};
pub use penalty::{PenaltyKind, PenaltySpec};
pub use refining::{
    final_penalized_fit, refine_threshold, subgroup_coefficients, RefineWindow, ThresholdFit,
};
pub use selection::{bic_for_thresholds, bic_scan, select_lambda, tsmcd, MRule, TuningConfig};
pub use splitting::{
    build_group_design, build_segments, extract_candidates, group_coordinate_descent,
    GroupDesign, GroupSolution, Segmentation, SolverOptions,
};
