//! Scenario-driven command-line front end for `hjb-core`.

// NaN-rejecting comparisons and index loops are deliberate in the numeric code
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod commands;
pub mod error;
pub mod output;
pub mod scenario;

pub use commands::{run_command, Command, RunOutcome};
pub use error::CliError;
pub use scenario::{emit_scenario, parse_scenario, parse_scenario_str, Scenario};
