//! Experiment protocols, metrics, persistence and the console server.

pub mod calibration;
pub mod config;
pub mod control;
pub mod estimation;
pub mod metrics;
pub mod server;
pub mod session;

pub use calibration::{run_tension_calibration, CalibrationOutcome};
pub use config::ExperimentConfig;
pub use control::{
    prepare_control, run_prosthesis_control_experiment, run_scripted_control, ActivationSource, ControlAssets,
    ControlLoop, ControlOutcome, ReplaySource, ScriptedSource,
};
pub use estimation::{run_force_estimation_experiment, EstimationOutcome};
pub use metrics::{compute_metrics, ControlMetrics, MetricsReport, TrialRecord, TrialRow};
pub use server::{serve_console, ConsoleServer, Pacing, ServeOptions, SessionSummary};
