use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::errors::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

pub fn digest(path: &Path) -> anyhow::Result<FileDigest> {
    let data = std::fs::read(path).map_err(|e| CliError::from_io(path, e))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        bytes: data.len() as u64,
        sha256: hex::encode(Sha256::digest(&data)),
    })
}

/// Record of one invocation. Holds no timings so reruns are byte-identical.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: RunConfig,
    pub inputs: Vec<FileDigest>,
    /// Paths relative to the output directory.
    pub outputs: Vec<FileDigest>,
}

pub struct ManifestBuilder {
    command: String,
    config: RunConfig,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            config: config.clone(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) {
        if !self.inputs.iter().any(|p| p == path) {
            self.inputs.push(path.to_path_buf());
        }
    }

    /// `rel` is relative to the output directory.
    pub fn output(&mut self, rel: impl Into<PathBuf>) {
        let rel = rel.into();
        if !self.outputs.contains(&rel) {
            self.outputs.push(rel);
        }
    }

    /// Hashes everything and writes `manifest_<command>.json` into `out`.
    pub fn write(self, out: &Path) -> anyhow::Result<PathBuf> {
        let inputs = self.inputs.iter().map(|p| digest(p)).collect::<anyhow::Result<Vec<_>>>()?;
        let outputs = self
            .outputs
            .iter()
            .map(|rel| {
                let mut d = digest(&out.join(rel))?;
                d.path = rel.display().to_string();
                Ok(d)
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        let manifest = Manifest {
            tool: "tid",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command.clone(),
            config: self.config,
            inputs,
            outputs,
        };
        let path = out.join(format!("manifest_{}.json", self.command));
        tid_core::dataset::write_json(&path, &manifest)?;
        Ok(path)
    }
}
