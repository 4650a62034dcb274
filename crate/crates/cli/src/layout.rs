use std::fs;
use std::path::{Path, PathBuf};

use pointcount_core::training::Phase;

use crate::CliError;

/// File locations under one output root.
///
/// ```text
/// checkpoints/seed-<s>/<phase>.ckpt          phase boundaries
/// checkpoints/seed-<s>/<phase>-<iter>.ckpt   periodic snapshots
/// pretrain/  study<n>/  analyze/  render/    reports, each with config.txt
/// ```
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.root.join("checkpoints").join(format!("seed-{seed}"))
    }

    pub fn checkpoint(&self, seed: u64, phase: Phase) -> PathBuf {
        self.seed_dir(seed).join(format!("{phase}.ckpt"))
    }

    pub fn snapshot(&self, seed: u64, phase: Phase, iteration: usize) -> PathBuf {
        self.seed_dir(seed).join(format!("{phase}-{iteration:05}.ckpt"))
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn study_report(&self, study: u8) -> PathBuf {
        self.report(&format!("study{study}"))
    }

    pub fn metrics(report: &Path, seed: u64) -> PathBuf {
        report.join("metrics").join(format!("seed-{seed}.csv"))
    }
}

pub fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}
