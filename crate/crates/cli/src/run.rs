//! Output directories and the per-directory run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const RUN_FILE: &str = "run.json";
pub const OUT_ROOT_ENV: &str = "CODECTRACE_OUT_ROOT";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_digest: String,
    pub seed: u64,
    pub tool_version: String,
    /// Input artifact -> sha256 of its content.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub wall_clock_secs: f64,
}

/// An output directory being filled by one command.
pub struct RunDir {
    pub path: PathBuf,
    command: String,
    started: Instant,
    inputs: BTreeMap<String, String>,
}

/// Relative paths land under `$CODECTRACE_OUT_ROOT` when it is set.
pub fn resolve_out(path: &Path) -> PathBuf {
    match std::env::var_os(OUT_ROOT_ENV) {
        Some(root) if path.is_relative() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

impl RunDir {
    /// Creates `path`, refusing a non-empty directory unless `force`.
    pub fn create(path: &Path, command: &str, force: bool) -> Result<Self> {
        let path = resolve_out(path);
        if path.exists() {
            let non_empty = std::fs::read_dir(&path)
                .with_context(|| format!("reading {}", path.display()))?
                .next()
                .is_some();
            if non_empty && !force {
                return Err(CliError::Contract(format!(
                    "output directory {} is not empty (pass --force to overwrite)",
                    path.display()
                ))
                .into());
            }
            if non_empty {
                std::fs::remove_dir_all(&path).with_context(|| format!("clearing {}", path.display()))?;
            }
        }
        std::fs::create_dir_all(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok(Self {
            path,
            command: command.to_string(),
            started: Instant::now(),
            inputs: BTreeMap::new(),
        })
    }

    pub fn join(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.path.join(rel)
    }

    /// Records the digest of an input file, or of every file of a
    /// directory tree.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        let mut files = Vec::new();
        collect_files(path, &mut files)?;
        files.sort();
        for f in files {
            let d = codectrace::digest::file_digest(&f)?;
            self.inputs.insert(f.display().to_string(), d);
        }
        Ok(())
    }

    pub fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<PathBuf> {
        let p = self.join(rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        let text = serde_json::to_string_pretty(value)?;
        std::fs::write(&p, text + "\n").with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }

    pub fn write_text(&self, rel: &str, text: &str) -> Result<PathBuf> {
        let p = self.join(rel);
        std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }

    /// Writes `run.json` listing every file now in the directory.
    pub fn finish(self, config_digest: String, seed: u64) -> Result<RunManifest> {
        let mut files = Vec::new();
        collect_files(&self.path, &mut files)?;
        let mut outputs: Vec<String> = files
            .iter()
            .filter_map(|f| f.strip_prefix(&self.path).ok())
            .map(|f| f.display().to_string())
            .filter(|f| f != RUN_FILE)
            .collect();
        outputs.sort();
        let m = RunManifest {
            command: self.command.clone(),
            config_digest,
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: self.inputs.clone(),
            outputs,
            wall_clock_secs: self.started.elapsed().as_secs_f64(),
        };
        self.write_json(RUN_FILE, &m)?;
        Ok(m)
    }
}

fn collect_files(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_file() {
        out.push(path.to_path_buf());
        return Ok(());
    }
    if !path.exists() {
        return Err(codectrace::Error::MissingArtifact(path.to_path_buf()).into());
    }
    for entry in std::fs::read_dir(path).with_context(|| format!("reading {}", path.display()))? {
        collect_files(&entry?.path(), out)?;
    }
    Ok(())
}
