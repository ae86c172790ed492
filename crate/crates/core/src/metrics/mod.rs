//! Counting error, localization AP over distance thresholds and tracklet
//! AP over matched-ratio thresholds.

mod ap;
mod counting;
mod localization;
mod report;
mod tracking;

pub use ap::PrCurve;
pub use counting::{mae_mse, CountRecord};
pub use localization::{
    l_map, localization_ap, localization_pr, LocalizationScores, L_MAP_THRESHOLDS,
};
pub use report::{
    evaluate, pr_curves, write_pr_curves, EvaluationResults, MetricSet, SequenceEvaluation,
};
pub use tracking::{
    t_map, tracking_ap, tracking_pr, TrackingScores, TRACK_MATCH_RADIUS, T_MAP_THRESHOLDS,
};
