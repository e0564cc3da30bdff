//! Configuration, the learn, merge and classify orchestration, parameter
//! sweeps and spy-plot export.

mod config;
mod run;
mod spy;
mod sweep;

pub use config::{apply_override, Baselines, MergeSettings, PipelineConfig, ViewSpec, ALPHA_GRID, K_GRID};
pub use run::{
    classify, evaluate, prepare, run_pipeline, view_seed, BaselineReport, Evaluation, Prepared, RunReport,
    StageTiming, Summary, ViewReport, MERGED_FILE, REPORT_FILE, TIMINGS_FILE, VIEWS_DIR, VIEW_SEED_STRIDE,
};
pub use spy::{class_order, export_spy_csv, spy_csv, SPY_THRESHOLD};
pub use sweep::{run_sweep, sweep, sweep_prepared, SweepParam, SweepRow, SweepTable, SWEEP_FILE, SWEEP_TIMINGS_FILE};
