//! Output directory bookkeeping: CSV and JSON writers and the run manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// SHA-256 of `blob <len>\0<bytes>`, the object id git uses in sha256 repositories.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: usize,
    pub hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageTime {
    pub stage: String,
    pub ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    /// Solver step whose clouds were used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
    pub density: Option<String>,
    pub control: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub status: String,
    pub message: Option<String>,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub stage_times: Vec<StageTime>,
    pub residuals: Vec<serde_json::Value>,
    pub snapshots: Vec<Snapshot>,
    pub files: Vec<FileEntry>,
}

pub const MANIFEST: &str = "manifest.json";

impl RunManifest {
    pub fn read(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::MissingSolution(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::MissingSolution(format!("{}: {e}", path.display())))
    }

    /// Numeric residual columns of the residual table, one vector per record.
    /// Non-finite entries (stored as `null`) come back as infinity.
    pub fn residual_columns(&self) -> Vec<Vec<f64>> {
        self.residuals
            .iter()
            .map(|r| {
                r.as_object()
                    .map(|o| {
                        o.iter()
                            .filter(|(k, _)| k.starts_with("residual") || k.as_str() == "hilbert")
                            .map(|(_, v)| v.as_f64().unwrap_or(f64::INFINITY))
                            .collect()
                    })
                    .unwrap_or_default()
            })
            .collect()
    }

    /// Records (1-based) after `burn_in` where some residual column increased.
    pub fn residual_increases(&self, burn_in: usize) -> Vec<usize> {
        let cols = self.residual_columns();
        (burn_in.max(1)..cols.len())
            .filter(|&i| cols[i].iter().zip(&cols[i - 1]).any(|(now, before)| now > before))
            .map(|i| i + 1)
            .collect()
    }
}

pub struct OutputDir {
    root: PathBuf,
    files: Vec<FileEntry>,
    stages: Vec<StageTime>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|e| io(root, e))?;
        Ok(Self { root: root.to_path_buf(), files: Vec::new(), stages: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write_bytes(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| io(&path, e))?;
        self.files.retain(|f| f.path != rel);
        self.files.push(FileEntry { path: rel.to_string(), bytes: bytes.len(), hash: blob_hash(bytes) });
        Ok(())
    }

    /// Writes a CSV file with a header row; each row must match the header width.
    pub fn write_csv<I, R>(&mut self, rel: &str, header: &[String], rows: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = R>,
        R: AsRef<[f64]>,
    {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).map_err(csv_err)?;
        for row in rows {
            w.write_record(row.as_ref().iter().map(|v| v.to_string())).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
        self.write_bytes(rel, &bytes)
    }

    pub fn write_jsonl<T: Serialize>(&mut self, rel: &str, records: &[T]) -> Result<(), CliError> {
        let mut out = String::new();
        for r in records {
            out.push_str(&serde_json::to_string(r).map_err(|e| CliError::Io(e.to_string()))?);
            out.push('\n');
        }
        self.write_bytes(rel, out.as_bytes())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        self.write_bytes(rel, text.as_bytes())
    }

    /// Runs `f`, recording its wall time under `stage`.
    pub fn stage<T>(&mut self, stage: &str, f: impl FnOnce(&mut Self) -> T) -> T {
        let start = Instant::now();
        let out = f(self);
        let ms = start.elapsed().as_secs_f64() * 1e3;
        log::info!("{stage}: {ms:.0} ms");
        self.stages.push(StageTime { stage: stage.to_string(), ms });
        out
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    /// Writes the manifest, which lists every file written before it.
    pub fn finish(mut self, mut manifest: RunManifest) -> Result<RunManifest, CliError> {
        self.files.sort_by(|a, b| a.path.cmp(&b.path));
        manifest.files = self.files.clone();
        manifest.stage_times = std::mem::take(&mut self.stages);
        self.write_json(MANIFEST, &manifest)?;
        Ok(manifest)
    }
}

fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(e.to_string())
}

/// Reads a numeric CSV written by [`OutputDir::write_csv`].
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::MissingSolution(format!("{}: {e}", path.display())))?;
    let header = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| CliError::MissingSolution(format!("{}: {e}", path.display()))))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

/// `x1, ..., xn` followed by `extra`.
pub fn header(dim: usize, extra: &[&str]) -> Vec<String> {
    (1..=dim).map(|i| format!("x{i}")).chain(extra.iter().map(|s| s.to_string())).collect()
}

/// File-name tag for a snapshot time, e.g. `t0.200`.
pub fn time_tag(t: f64) -> String {
    format!("t{t:.3}")
}
