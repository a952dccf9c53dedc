use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// Provenance block written into every JSON output: enough to rerun exactly.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metadata {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    /// SHA-256 of the resolved config (defaults filled in) as compact JSON.
    pub config_sha256: String,
    pub config: serde_json::Value,
}

impl Metadata {
    pub fn new(cfg: &RunConfig) -> Self {
        let config = serde_json::to_value(cfg).expect("config serializes");
        let compact = serde_json::to_string(&config).expect("config serializes");
        Self {
            tool: "bvld",
            version: env!("CARGO_PKG_VERSION"),
            command: cfg.command.name(),
            seed: cfg.seed,
            config_sha256: hex::encode(Sha256::digest(compact.as_bytes())),
            config,
        }
    }
}

/// Files of one run share a prefix: `<prefix>.<kind>.<ext>`.
pub struct Output {
    prefix: PathBuf,
    written: Vec<String>,
}

impl Output {
    pub fn new(prefix: impl Into<PathBuf>) -> Self {
        Self {
            prefix: prefix.into(),
            written: Vec::new(),
        }
    }

    pub fn path(&self, kind: &str, ext: &str) -> PathBuf {
        let mut name = self.prefix.as_os_str().to_owned();
        name.push(format!(".{kind}.{ext}"));
        PathBuf::from(name)
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    fn create(&mut self, path: &Path) -> CliResult<BufWriter<File>> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        self.written.push(path.display().to_string());
        Ok(BufWriter::new(file))
    }

    /// Writes a CSV through `fill`, which receives the open file.
    pub fn csv<F>(&mut self, kind: &str, fill: F) -> CliResult<PathBuf>
    where
        F: FnOnce(&mut BufWriter<File>) -> bvld::Result<()>,
    {
        let path = self.path(kind, "csv");
        let mut w = self.create(&path)?;
        fill(&mut w)?;
        w.flush().map_err(|e| io_err(&path, e))?;
        Ok(path)
    }

    pub fn json<T: Serialize>(&mut self, kind: &str, value: &T) -> CliResult<PathBuf> {
        let path = self.path(kind, "json");
        let mut w = self.create(&path)?;
        serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Io {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        w.write_all(b"\n").map_err(|e| io_err(&path, e))?;
        w.flush().map_err(|e| io_err(&path, e))?;
        Ok(path)
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    }
}

/// A JSON document: metadata, the command's result, and companion files.
#[derive(Serialize)]
pub struct Document<'a, T: Serialize> {
    pub metadata: &'a Metadata,
    pub result: &'a T,
    pub files: Vec<String>,
}
