//! CSV assembly, atomic file writes and the run manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

/// Shortest representation that parses back to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

#[derive(Debug, Clone, Default)]
pub struct Csv {
    text: String,
    width: usize,
}

impl Csv {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let mut csv = Csv { text: String::new(), width: header.len() };
        csv.push_line(header.iter().map(|s| s.as_ref().to_string()));
        csv
    }

    fn push_line(&mut self, fields: impl Iterator<Item = String>) {
        let line: Vec<String> = fields.collect();
        let _ = writeln!(self.text, "{}", line.join(","));
    }

    pub fn row(&mut self, fields: Vec<String>) {
        debug_assert_eq!(fields.len(), self.width);
        self.push_line(fields.into_iter());
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.text.into_bytes()
    }
}

/// `tau, sz_1..sz_N` from a time column and per-time rows.
pub fn series_csv(time_label: &str, prefix: &str, times: &[f64], rows: &[Vec<f64>]) -> Csv {
    let n = rows.first().map_or(0, Vec::len);
    let mut header = vec![time_label.to_string()];
    header.extend((1..=n).map(|j| format!("{prefix}_{j}")));
    let mut csv = Csv::new(&header);
    for (t, row) in times.iter().zip(rows) {
        let mut fields = vec![num(*t)];
        fields.extend(row.iter().copied().map(num));
        csv.row(fields);
    }
    csv
}

#[derive(Debug, Clone, Serialize)]
pub struct FileRecord {
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    artifact: &'a str,
    version: &'a str,
    timestamp: String,
    command: &'a str,
    argv: Vec<String>,
    config: serde_json::Value,
    files: &'a [FileRecord],
}

/// Output directory that records every file it writes.
#[derive(Debug)]
pub struct OutputDir {
    dir: PathBuf,
    files: Vec<FileRecord>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(OutputDir { dir: dir.to_path_buf(), files: Vec::new() })
    }

    /// Writes to a temporary sibling and renames it into place.
    fn write_atomic(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let target = self.dir.join(name);
        let tmp = self.dir.join(format!(".{name}.tmp"));
        fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
        fs::rename(&tmp, &target).map_err(|e| CliError::io(&target, e))?;
        Ok(target)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let target = self.write_atomic(name, bytes)?;
        self.files.retain(|f| f.file != name);
        self.files.push(FileRecord {
            file: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(bytes)),
        });
        Ok(target)
    }

    pub fn write_csv(&mut self, name: &str, csv: Csv) -> Result<PathBuf, CliError> {
        self.write(name, &csv.into_bytes())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("output serializes");
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// `config.toml` with the resolved configuration, then `manifest.json`
    /// listing every file written.
    pub fn finish(mut self, command: &str, config: &RunConfig) -> Result<PathBuf, CliError> {
        self.write("config.toml", config.to_toml().as_bytes())?;
        let manifest = Manifest {
            artifact: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            timestamp: chrono::Utc::now().to_rfc3339(),
            command,
            argv: std::env::args().collect(),
            config: serde_json::to_value(config).expect("config serializes"),
            files: &self.files,
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        self.write_atomic("manifest.json", text.as_bytes())
    }
}
