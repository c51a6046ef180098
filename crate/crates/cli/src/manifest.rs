//! Run manifests and exit-code classification.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use ridde_core::codec::hex;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, configuration or input: exit 2.
    Usage(String),
    /// The run itself failed (divergence, unwritable output): exit 3.
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<ridde_core::Error> for CliError {
    fn from(e: ridde_core::Error) -> Self {
        use ridde_core::Error::*;
        match e {
            Diverged { .. } | NonFiniteGradient { .. } | NonDeterministic { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Failure to write an output file is a runtime error, not a usage one.
pub fn output<T>(r: ridde_core::Result<T>) -> CliResult<T> {
    r.map_err(|e| match e {
        ridde_core::Error::Io { .. } => CliError::Runtime(e.to_string()),
        other => other.into(),
    })
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

#[derive(Clone, Debug, Serialize)]
pub struct InputRecord {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub args: Vec<String>,
    /// Fully resolved settings; null when the command failed before
    /// resolving them.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub threads: usize,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<PathBuf>,
    pub status: &'static str,
    pub exit_code: i32,
    pub error: Option<String>,
    pub wall_time_ms: u64,
}

/// Collects what a command read and wrote while it runs.
pub struct Recorder {
    started: Instant,
    manifest: RunManifest,
}

impl Recorder {
    pub fn new(command: &str, args: Vec<String>, threads: usize) -> Self {
        Self {
            started: Instant::now(),
            manifest: RunManifest {
                tool: "ridde",
                version: env!("CARGO_PKG_VERSION"),
                command: command.into(),
                args,
                config: serde_json::Value::Null,
                seed: None,
                threads,
                inputs: Vec::new(),
                outputs: Vec::new(),
                status: "running",
                exit_code: -1,
                error: None,
                wall_time_ms: 0,
            },
        }
    }

    pub fn config<T: Serialize>(&mut self, config: &T, seed: Option<u64>) {
        self.manifest.config = serde_json::to_value(config).unwrap_or(serde_json::Value::Null);
        self.manifest.seed = seed;
    }

    /// Hashes an input file. Missing files are reported by the reader, not here.
    pub fn input(&mut self, path: &Path) {
        if let Ok(bytes) = std::fs::read(path) {
            self.manifest.inputs.push(InputRecord {
                path: path.to_path_buf(),
                sha256: hex(&Sha256::digest(&bytes)),
            });
        }
    }

    pub fn output(&mut self, path: &Path) {
        if !self.manifest.outputs.iter().any(|p| p == path) {
            self.manifest.outputs.push(path.to_path_buf());
        }
    }

    pub fn finish(mut self, result: &CliResult<()>, path: &Path) -> std::io::Result<()> {
        let m = &mut self.manifest;
        m.wall_time_ms = self.started.elapsed().as_millis() as u64;
        match result {
            Ok(()) => {
                m.status = "ok";
                m.exit_code = EXIT_OK;
            }
            Err(e) => {
                m.status = "failed";
                m.exit_code = e.code();
                m.error = Some(e.message().to_string());
            }
        }
        let mut text = serde_json::to_string_pretty(m).map_err(std::io::Error::other)?;
        text.push('\n');
        std::fs::write(path, text)
    }
}

/// `<path><suffix>`, e.g. `model.ckpt` → `model.ckpt.metrics.jsonl`.
pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}
