//! Output bundle: `report.json`, data CSVs and `manifest.json`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::experiments::{Outcome, SCHEMA_VERSION};

#[derive(Debug, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub bytes: usize,
}

/// Everything needed to rerun: `ergolab run manifest.json` reads `config`.
#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub schema_version: u32,
    pub tool: &'static str,
    pub version: &'static str,
    pub config: &'a ExperimentConfig,
    pub seed: Option<u64>,
    pub threads: usize,
    pub wall_time_secs: f64,
    pub files: Vec<FileEntry>,
}

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let name = path.file_name().context("output path has no file name")?.to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp"));
    let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
    f.write_all(bytes)?;
    f.sync_all()?;
    drop(f);
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn report_json(outcome: &Outcome) -> Result<String> {
    Ok(serde_json::to_string_pretty(&outcome.report)? + "\n")
}

/// Writes the bundle into `dir` and returns the manifest path.
pub fn write_bundle(
    dir: &Path,
    cfg: &ExperimentConfig,
    outcome: &Outcome,
    threads: usize,
    wall_time_secs: f64,
) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut files = Vec::new();
    let report = report_json(outcome)?;
    write_atomic(&dir.join("report.json"), report.as_bytes())?;
    files.push(FileEntry {
        name: "report.json".into(),
        bytes: report.len(),
    });
    for (name, body) in &outcome.files {
        write_atomic(&dir.join(name), body.as_bytes())?;
        files.push(FileEntry {
            name: name.clone(),
            bytes: body.len(),
        });
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        seed: cfg.sim.as_ref().map(|s| s.seed),
        threads,
        wall_time_secs,
        files,
    };
    let path = dir.join("manifest.json");
    write_atomic(&path, (serde_json::to_string_pretty(&manifest)? + "\n").as_bytes())?;
    Ok(path)
}
