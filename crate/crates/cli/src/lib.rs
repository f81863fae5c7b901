//! Batch front end for the `kinrecover` pipeline.
//!
//! Each subcommand reads files, runs one pipeline stage and writes JSON
//! outputs that carry a provenance block (tool version and config hash).
//! JSON-lines datasets get the block in a `.manifest.json` sidecar.

pub mod commands;
pub mod config;

use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

pub use config::PipelineConfig;

pub const TOOL: &str = "kinrecover";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{stage}: {source}")]
    Core {
        stage: &'static str,
        #[source]
        source: kinrecover::Error,
    },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 for numerical failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core { source, .. } if source.is_numeric() => 2,
            _ => 1,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError>;
}

impl<T> StageExt<T> for kinrecover::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Core { stage, source })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(command: &'static str, config: &PipelineConfig) -> Self {
        Self {
            tool: TOOL,
            version: VERSION,
            command,
            config_hash: config.hash(),
            seed: config.seed,
        }
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Core {
        stage: "serialize",
        source: e.into(),
    })?;
    write_text(path, &(text + "\n"))
}

/// `path` with its extension replaced by `suffix` (`a/records.jsonl` with
/// `manifest.json` gives `a/records.manifest.json`).
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}
