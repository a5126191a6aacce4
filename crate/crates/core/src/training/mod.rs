//! The alternating critic / generator optimization loop.

mod config;
mod run;
mod state;

pub use config::TrainConfig;
pub(crate) use config::{assign, config_hash};
pub use run::{read_log, train, train_with, LogRecord, RunOptions, TrainSummary, CONFIG_FILE, LOG_FILE};
pub(crate) use state::generator_params;
pub use state::{StepSettings, TrainState};
