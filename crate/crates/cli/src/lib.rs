//! Command-line harness: configuration, overrides, the `pulses`, `teleport`,
//! `sweep` and `audit` commands, and SVG output.

pub mod commands;
pub mod config;
pub mod error;
pub mod svg;

pub use commands::{cmd_audit, cmd_pulses, cmd_sweep, cmd_teleport};
pub use config::{RunConfig, SweepRange, SweepSpec};
pub use error::{CliError, Result};
