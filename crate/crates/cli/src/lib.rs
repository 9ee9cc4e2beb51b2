//! `ppk` command-line driver: configuration, sweeps and CSV output.

pub mod args;
pub mod config;
pub mod error;
pub mod runner;
pub mod spec;
pub mod table;
pub mod tasks;

pub use error::{CliError, Result};
pub use runner::{run, Outcome, RunOptions};
pub use spec::{Axis, Spacing, SweepSpec, Task};
pub use table::{Table, Value};
