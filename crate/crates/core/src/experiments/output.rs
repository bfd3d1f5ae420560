//! Run directories: write-once report files and a reproducibility manifest.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ExperimentConfig;
use crate::error::{Error, Result};

pub const FAILED_MARKER: &str = "FAILED";

/// File name of the manifest written by `command`.
pub fn manifest_name(command: &str) -> String {
    format!("{command}.manifest.json")
}

/// Hex SHA-256 of the config's TOML form.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    Sha256::digest(cfg.to_toml_string().as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub threads: usize,
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &ExperimentConfig, threads: usize) -> Self {
        let seeds = BTreeMap::from([
            ("dataset".to_string(), cfg.dataset.seed),
            ("permutation".to_string(), cfg.permutation_seed),
            ("init".to_string(), cfg.net.seed),
            ("train".to_string(), cfg.train.seed),
            ("analysis".to_string(), cfg.analysis.seed),
        ]);
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_hash: config_hash(cfg),
            seeds,
            threads,
            artifacts: Vec::new(),
        }
    }
}

/// Output directory whose files are never overwritten unless `force`.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    force: bool,
    written: Vec<String>,
}

impl RunDir {
    pub fn create(root: impl AsRef<Path>, force: bool) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        std::fs::create_dir_all(&root)?;
        Ok(Self {
            root,
            force,
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Fails with `WouldOverwrite` if `name` exists and `force` is off.
    pub fn check_free(&self, name: &str) -> Result<PathBuf> {
        let path = self.path(name);
        if path.exists() && !self.force {
            return Err(Error::WouldOverwrite(path));
        }
        Ok(path)
    }

    pub fn create_file(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.check_free(name)?;
        let file = if self.force {
            File::create(&path)?
        } else {
            File::options().write(true).create_new(true).open(&path).map_err(|e| {
                if e.kind() == std::io::ErrorKind::AlreadyExists {
                    Error::WouldOverwrite(path.clone())
                } else {
                    e.into()
                }
            })?
        };
        self.written.push(name.to_string());
        Ok(BufWriter::new(file))
    }

    pub fn write_with(&mut self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let mut w = self.create_file(name)?;
        f(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write_with(name, |w| Ok(serde_json::to_writer_pretty(w, value)?))
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    /// Records a failed stage next to whatever was already written.
    pub fn mark_failed(&self, stage: &str, err: &Error) -> Result<()> {
        std::fs::write(self.path(FAILED_MARKER), format!("stage: {stage}\nerror: {err}\n"))?;
        Ok(())
    }

    /// Writes the manifest listing every artifact of this run.
    pub fn finish(mut self, mut manifest: RunManifest) -> Result<Vec<String>> {
        manifest.artifacts = self.written.clone();
        self.write_json(&manifest_name(&manifest.command), &manifest)?;
        Ok(self.written)
    }
}
