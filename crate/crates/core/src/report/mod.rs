//! Run configuration, end-to-end pipeline, metrics, ablation grid and figures.

mod ablation;
mod config;
mod pipeline;
mod scatter;
mod steps;

pub use ablation::{flag_cells, run_ablation, AblationCell, AblationTable, ABLATION_K};
pub use config::{DataSource, LastSteps, RunConfig, SigmaFirst};
pub use pipeline::{
    build_schedule, compute_rmse, evaluate, fit, inference_config, load_data, predict_raw, prepare_data,
    pretrain, resolve_last_steps, train_config, train_score, Evaluation, FittedModel,
};
pub use scatter::{axis_ranges, emit_scatter, AxisRanges, AXIS_MARGIN};
pub use steps::{report_step_table, write_trace_csv, StepTable};
