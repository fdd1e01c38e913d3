//! Federated class-incremental learning with server-side twin generators.
//!
//! The server trains an image generator and a feature generator against
//! the frozen global model at the end of each task. During the next task,
//! clients replay synthetic features and images from them to distil the
//! previous head, fine-tune the head on real and synthetic data, and
//! penalize feature drift weighted by a matrix estimated from synthetic
//! features. No client data ever reaches the server.
//!
//! This crate ties the pieces together:
//! - [`validate_config`] parses TOML experiment configs with presets.
//! - [`run_experiment`] trains and evaluates every seed into a run directory.
//! - [`emit_plots`] and [`compare`] read only the results table.
//!
//! Component crates are re-exported for library use.

pub mod compare;
pub mod config;
mod error;
pub mod plot;
pub mod results;
pub mod run;

pub use compare::{compare, compare_rows, format_comparison, ComparisonRow};
pub use config::{
    load_config, preset, validate_config, EvalConfig, ExperimentConfig, LossTerm, Method, DATA_DIR_ENV, PRESETS,
};
pub use error::{FedError, Result};
pub use plot::{emit_plots, PlotKind, PlotReport};
pub use results::{read_table, summarize, write_table, ResultRow};
pub use run::{prepare_dataset, run_experiment, run_experiment_in, run_seed, RunManifest, SeedResult};

pub use fedgtg_autograd as autograd;
pub use fedgtg_client as client;
pub use fedgtg_data as data;
pub use fedgtg_losses as losses;
pub use fedgtg_metrics as metrics;
pub use fedgtg_models as models;
pub use fedgtg_server as server;
