//! Per-stage manifest: what was read, what was written and under which
//! configuration. Contains no timestamps so re-runs compare byte-equal.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub stage: &'static str,
    pub version: &'static str,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    /// File name to SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn hashes(paths: &[PathBuf]) -> anyhow::Result<BTreeMap<String, String>> {
    paths
        .iter()
        .map(|p| {
            let name = p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned());
            Ok((name, sha256_file(p)?))
        })
        .collect()
}

impl Manifest {
    pub fn new(
        stage: &'static str,
        seed: u64,
        config: BTreeMap<String, String>,
        inputs: &[PathBuf],
        outputs: &[PathBuf],
    ) -> anyhow::Result<Self> {
        Ok(Self {
            stage,
            version: env!("CARGO_PKG_VERSION"),
            seed,
            config,
            inputs: hashes(inputs)?,
            outputs: hashes(outputs)?,
        })
    }

    /// Writes `<stage>.manifest.json` into `dir`.
    pub fn write(&self, dir: &Path) -> anyhow::Result<PathBuf> {
        let path = dir.join(format!("{}.manifest.json", self.stage));
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
