//! Command-line driver: network validation, equilibrium solves and
//! state-operator diagnostics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnose;
pub mod output;
pub mod scenario;
pub mod solve;

use std::fmt;
use std::path::Path;

use due_core::network::NetworkSpec;

pub use diagnose::{run_diagnostics, Mode};
pub use scenario::{Overrides, ScenarioConfig};
pub use solve::run_solve;

/// Any failure that ends a command with exit status 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    message: String,
}

impl CliError {
    pub fn new(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    NotConverged,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Success => 0,
            Status::NotConverged => 2,
        }
    }
}

pub const INPUT_ERROR: u8 = 1;

pub fn load_network(path: &Path) -> Result<NetworkSpec, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::new(format!("cannot read network {}: {e}", path.display())))?;
    NetworkSpec::from_json(&text).map_err(|e| CliError::new(format!("{}: {e}", path.display())))
}

/// Structural checks, optionally against a horizon.
pub fn check_network(
    spec: &NetworkSpec,
    path: &Path,
    horizon: Option<(f64, f64)>,
) -> Result<(), CliError> {
    let violations = match horizon {
        Some((t0, tf)) => spec.validate_with_horizon(t0, tf),
        None => spec.validate(),
    };
    if violations.is_empty() {
        return Ok(());
    }
    let lines: Vec<String> = violations.iter().map(|v| format!("  {v}")).collect();
    Err(CliError::new(format!(
        "{}: invalid network\n{}",
        path.display(),
        lines.join("\n")
    )))
}

/// `validate` command: checks the network and optionally writes it back in
/// canonical form.
pub fn run_validate(path: &Path, export: Option<&Path>) -> Result<String, CliError> {
    let spec = load_network(path)?;
    check_network(&spec, path, None)?;
    if let Some(out) = export {
        let mut text = spec.to_json();
        text.push('\n');
        output::write_atomic(out, text.as_bytes())?;
    }
    Ok(format!(
        "{}: ok ({} nodes, {} links, {} paths, {} O-D pairs)",
        path.display(),
        spec.nodes.len(),
        spec.links.len(),
        spec.paths.len(),
        spec.od_pairs.len()
    ))
}
