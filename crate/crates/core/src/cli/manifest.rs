use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CliError, Command};

pub const MANIFEST_FILE: &str = "manifest.json";

/// What a run did and how to redo it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    /// Full arguments with the effective seed.
    pub run: Command,
    /// `ok`, `not-converged` or `numerical-failure`.
    pub status: String,
    pub converged: bool,
    /// Artifacts written next to the manifest.
    pub files: Vec<String>,
    pub results: serde_json::Value,
}

impl Manifest {
    pub fn new(run: &Command, converged: bool, files: Vec<String>, results: serde_json::Value) -> Self {
        Self {
            tool: format!("rdsandwich {}", env!("CARGO_PKG_VERSION")),
            run: run.clone(),
            status: if converged { "ok" } else { "not-converged" }.to_string(),
            converged,
            files,
            results,
        }
    }

    pub fn failed(run: &Command, files: Vec<String>, error: &str) -> Self {
        Self {
            status: "numerical-failure".to_string(),
            ..Self::new(run, false, files, serde_json::json!({ "error": error }))
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join(MANIFEST_FILE), text + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}
