//! Experiment orchestration: configuration, in-memory stages and the
//! file-backed commands built on them.

mod commands;
mod config;
mod experiment;

pub use commands::{
    cmd_correct, cmd_evaluate, cmd_fit, cmd_reproduce, cmd_simulate, layout, load_tensor_field, CorrectRequest, FitTarget,
    Manifest, TOOL_NAME,
};
pub use config::{apply_override, Acquisition, Calibration, ExperimentConfig, OUTPUT_DIR_ENV};
pub use experiment::{
    build_report, correct_variants, evaluate_method, fit_fa, magnitude_baseline, magnitude_preservation_error,
    method_label, run_experiment, simulate, Check, Criterion, ExperimentRun, FitOutput, MethodMetrics, MethodRun,
    Report, Simulation, Status, A1_VOLUME_FRACTION, A6_TOLERANCE, MAG_LABEL,
};
