//! Experiment driver: data generation, training, scoring, calibration and the
//! synthetic-benchmark report, on top of the `diflo` core crate.

pub mod config;
pub mod data;
pub mod manifest;
pub mod repro;
pub mod run;

pub use config::{ExperimentConfig, Method, Precision, ScoreKind};
pub use manifest::RunManifest;
pub use repro::{cmd_ablate, cmd_repro_table1, ReproReport};
pub use run::{cmd_eval, cmd_gen_data, cmd_landscape, cmd_predict, cmd_sweep, cmd_train, Metrics, Prediction};
