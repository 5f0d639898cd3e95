//! Evaluation and analysis: average precision, per-image model
//! comparisons, winner-estimator consistency, and report artifacts.

pub mod consistency;
pub mod export;
pub mod gap;
pub mod map;
pub mod trace;

pub use consistency::{
    dpc_consistency_experiment, ConsistencyConfig, ConsistencyReport, WindowPicks,
    STABILITY_MATCH_IOU,
};
pub use export::{bar_chart, line_chart, write_atomic, write_csv, Series};
pub use gap::{per_image_ap_gap, GapReport};
pub use map::{
    ap50_95_thresholds, compute_map, detect, mean_ap50_95, scenes_for_model, ApReport, EvalScene,
    EVAL_SCORE_THRESHOLD,
};
pub use trace::{
    distance_chart, stage_boundaries, weight_distance_trace, write_distance_csv, DistanceTrace,
};
