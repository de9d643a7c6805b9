//! Batch front-end for `pfp-core`: read a problem file, run one command,
//! emit JSON (and CSV curve dumps).

pub mod config;
pub mod run;

pub use config::{parse_config, serialize, Command, ConfigError, RunConfig};
pub use run::{run, RunOutput, EXIT_CONDITIONS, EXIT_ERROR, EXIT_OK};
