//! Batch commands and the HTTP service around the simulator core.

pub mod api;
pub mod artifacts;
pub mod cli;
pub mod openapi;

use std::fmt;
use std::path::Path;

use tsms_core::domain::{validate_scenario, Scenario};
use tsms_core::scenarios;

/// Bad input from the caller (exit code 1, HTTP 422), as opposed to a
/// failure while computing.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Invalid(msg.into()))
}

/// Exit code for a failed command: 1 for invalid input, 2 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.is::<Invalid>()) {
        1
    } else {
        2
    }
}

/// Reads and validates a scenario file. Names of built-in scenarios are
/// accepted when no such file exists.
pub fn load_scenario(arg: &str) -> anyhow::Result<Scenario> {
    let path = Path::new(arg);
    let scenario = if path.is_file() {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read scenario {}: {e}", path.display())))?;
        Scenario::from_json(&text).map_err(|e| invalid(format!("scenario {}: {e}", path.display())))?
    } else if let Some(s) = scenarios::by_name(arg) {
        s
    } else {
        return Err(invalid(format!(
            "scenario file not found: {} (built-in names: {})",
            path.display(),
            scenarios::NAMES.join(", ")
        )));
    };
    check_scenario(&scenario)?;
    Ok(scenario)
}

pub fn check_scenario(s: &Scenario) -> anyhow::Result<()> {
    let report = validate_scenario(s);
    if report.is_empty() {
        return Ok(());
    }
    let lines: Vec<String> = report
        .violations
        .iter()
        .map(|v| format!("{}: {}", v.path, v.message))
        .collect();
    Err(invalid(format!("invalid scenario {}: {}", s.name, lines.join("; "))))
}
