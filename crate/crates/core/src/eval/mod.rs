//! Metrics, the toy evaluator and report aggregation.

pub mod evaluator;
pub mod metrics;
pub mod report;

pub use evaluator::{pad_poses, train_evaluator, EvalPair, Evaluator};
pub use metrics::{cop_error, cop_weights, fid, foot_skating, foot_skating_counts, frechet_from_moments, joint_errors, motion_cop, r_precision, trajectory_error_ratio};
pub use report::{batched_r_precision, evaluate_set, joints_of, metric_table, MetricReport};
