use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Everything needed to rerun a command and audit its outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments as given, program name first; `spamm replay` re-parses these.
    pub argv: Vec<String>,
    pub parameters: Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub library_version: String,
    pub timestamp_unix: u64,
    /// Command-specific results worth keeping next to the outputs.
    pub results: Value,
}

impl RunManifest {
    pub fn new(command: &str, argv: &[String], parameters: impl Serialize) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            argv: argv.to_vec(),
            parameters: serde_json::to_value(parameters)?,
            seeds: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            results: Value::Null,
        })
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.display().to_string());
    }

    pub fn output(&mut self, p: &Path) {
        self.outputs.push(p.display().to_string());
    }

    /// Writes to `explicit`, or next to the first output file. Returns the
    /// path written, if any.
    pub fn write(&self, explicit: Option<&Path>) -> Result<Option<PathBuf>> {
        let target = match explicit {
            Some(p) => p.to_path_buf(),
            None => match self.outputs.first() {
                Some(first) => PathBuf::from(format!("{first}.manifest.json")),
                None => return Ok(None),
            },
        };
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&target, text + "\n").with_context(|| format!("writing manifest {}", target.display()))?;
        Ok(Some(target))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}
