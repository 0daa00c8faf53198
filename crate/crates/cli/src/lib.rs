//! Configuration and subcommands of the `rgbd-vo` tool.

pub mod commands;
pub mod config;

pub use commands::{
    cmd_compare, cmd_convert_tartanair, cmd_evaluate, cmd_run, EXIT_ERROR, EXIT_OK, EXIT_TRACKING_LOST,
};
pub use config::RunConfig;
