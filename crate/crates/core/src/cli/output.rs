//! Comma-separated tables and run manifests.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ensemble::ModelConfig;
use crate::error::{AsppError, Result};

pub const MANIFEST_NAME: &str = "manifest.json";

/// Locale-independent number formatting: plain decimals for ordinary
/// magnitudes, shortest round-trip scientific notation otherwise.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// Buffered writer for a numeric table with one header row.
pub struct TableWriter {
    path: PathBuf,
    out: BufWriter<File>,
    columns: usize,
    line: String,
}

impl TableWriter {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let file = File::create(path).map_err(|e| AsppError::io(path, e))?;
        let mut w = TableWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
            columns: header.len(),
            line: String::new(),
        };
        let head = header.join(",");
        w.write_line(&head)?;
        Ok(w)
    }

    fn write_line(&mut self, text: &str) -> Result<()> {
        self.out
            .write_all(text.as_bytes())
            .and_then(|_| self.out.write_all(b"\n"))
            .map_err(|e| AsppError::io(&self.path, e))
    }

    /// Writes one row of cells already rendered as text.
    pub fn row(&mut self, cells: &[Cell]) -> Result<()> {
        debug_assert_eq!(cells.len(), self.columns);
        let mut line = std::mem::take(&mut self.line);
        line.clear();
        for (i, c) in cells.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            match c {
                Cell::F(x) => line.push_str(&fmt_f64(*x)),
                Cell::U(n) => {
                    let _ = write!(line, "{n}");
                }
                Cell::S(s) => line.push_str(s),
            }
        }
        let r = self.write_line(&line);
        self.line = line;
        r
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.out.flush().map_err(|e| AsppError::io(&self.path, e))?;
        Ok(self.path)
    }
}

pub enum Cell<'a> {
    F(f64),
    U(u64),
    S(&'a str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    /// Path relative to the output directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub master_seed: u64,
    pub config: ModelConfig,
    /// Command-specific settings beyond the model config.
    #[serde(default)]
    pub extra: serde_json::Value,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub outputs: Vec<OutputFile>,
}

pub fn now_unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

pub fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let bytes = fs::read(path).map_err(|e| AsppError::io(path, e))?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

impl RunManifest {
    pub fn begin(command: &str, config: &ModelConfig) -> Self {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed: config.master_seed,
            config: config.clone(),
            extra: serde_json::Value::Null,
            started_unix_ms: now_unix_ms(),
            finished_unix_ms: 0,
            outputs: Vec::new(),
        }
    }

    /// Records a finished output file with its checksum.
    pub fn add_output(&mut self, out_dir: &Path, file: &Path) -> Result<()> {
        let (sha256, bytes) = sha256_file(file)?;
        let rel = file.strip_prefix(out_dir).unwrap_or(file);
        self.outputs.push(OutputFile {
            path: rel.to_string_lossy().replace('\\', "/"),
            bytes,
            sha256,
        });
        Ok(())
    }

    pub fn write(mut self, out_dir: &Path) -> Result<Self> {
        self.finished_unix_ms = now_unix_ms();
        let path = out_dir.join(MANIFEST_NAME);
        let text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| AsppError::io(&path, e))?;
        Ok(self)
    }

    pub fn load(out_dir: &Path) -> Result<Self> {
        let path = out_dir.join(MANIFEST_NAME);
        let text = fs::read_to_string(&path).map_err(|e| AsppError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| AsppError::config("manifest", e.to_string()))
    }

    /// Outputs whose current checksum differs from the recorded one.
    pub fn verify(&self, out_dir: &Path) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for f in &self.outputs {
            let path = out_dir.join(&f.path);
            match sha256_file(&path) {
                Ok((sum, _)) if sum == f.sha256 => {}
                _ => bad.push(f.path.clone()),
            }
        }
        Ok(bad)
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| AsppError::io(dir, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<PathBuf> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    fs::write(path, text + "\n").map_err(|e| AsppError::io(path, e))?;
    Ok(path.to_path_buf())
}
