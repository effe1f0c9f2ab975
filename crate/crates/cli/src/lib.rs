//! Reproducible experiments on top of `germcanop`: a JSON config selects a
//! scenario, the runner writes a CSV table, optional wave function dumps and
//! a JSON summary with one pass/fail entry per check.
//!
//! Exit codes: 0 all checks pass, 1 a check failed, 2 config error,
//! 3 numerical or output failure.

// `!(x > 0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod output;
pub mod scenarios;

pub use config::ScenarioConfig;
pub use output::Summary;
pub use scenarios::{Report, RunError};

use std::path::Path;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;

/// Runs `cfg`, writes its artifacts under `out_dir` and returns the summary.
pub fn run_scenario(cfg: &ScenarioConfig, out_dir: &Path, seed: u64) -> Result<Summary, RunError> {
    let report = scenarios::run(cfg, seed)?;
    output::write_report(cfg, &report, seed, out_dir)
}

/// Reads and validates a config file.
pub fn load_config(path: &Path) -> Result<ScenarioConfig, RunError> {
    let text = std::fs::read_to_string(path).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
    ScenarioConfig::from_json(&text).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))
}

pub fn exit_code(result: &Result<Summary, RunError>) -> i32 {
    match result {
        Ok(s) if s.passed => EXIT_PASS,
        Ok(_) => EXIT_CHECK_FAILED,
        Err(e) => e.exit_code(),
    }
}
