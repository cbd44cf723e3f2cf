//! Scenario files, builtin scenarios, trace and summary output for the
//! `dzvoc` command.

pub mod builtins;
pub mod config;
pub mod error;
pub mod output;
pub mod report;
pub mod run;
pub mod summary;

pub use error::CliError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_EXPECTATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
