//! Run manifests: everything needed to rerun a command and check that it
//! reproduces the same files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::atomic_write;
use super::config::RunConfig;
use super::series::ReadOptions;
use crate::error::Result;
use crate::sampler::{RunStats, Timings};
use crate::simulate::SimSpec;

pub const SOFTWARE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DataInfo {
    pub path: String,
    pub read: ReadOptions,
    /// Use only the first `take` values, when set.
    pub take: Option<usize>,
    pub length: usize,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", tag = "kind")]
pub enum ManifestBody {
    Simulate {
        spec: SimSpec,
        output: String,
        output_digest: String,
    },
    Fit {
        config: RunConfig,
        data: DataInfo,
        chain_index: usize,
        chain_file: String,
        chain_digest: String,
        trace_file: String,
        trace_digest: String,
        timings: Timings,
        acceptance: RunStats,
    },
    /// Deterministic post-processing of earlier outputs (estimate, forecast, evaluate).
    Derived {
        command: String,
        /// Arguments after the program name, as given.
        args: Vec<String>,
        /// `(path, sha256)` of every input file.
        inputs: Vec<(String, String)>,
        output: String,
        output_digest: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunManifest {
    pub software_version: String,
    pub seed: u64,
    #[serde(flatten)]
    pub body: ManifestBody,
}

impl RunManifest {
    pub fn new(seed: u64, body: ManifestBody) -> Self {
        Self {
            software_version: SOFTWARE_VERSION.into(),
            seed,
            body,
        }
    }
}

pub fn write_manifest(path: &Path, m: &RunManifest) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(m)?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}
