//! Reproducibility manifests written next to every output file.
//!
//! A manifest lists the parameters of one command and the SHA-256 of each
//! input. When an input has a manifest of its own, its digest is recorded
//! under `upstream` and its parameters are carried forward, so the manifest
//! of an evaluation report still names the generator seed and the operator.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use medfuse_core::alignment::{AlignmentParams, Alphas};
use medfuse_core::clustering::MembershipScope;
use medfuse_core::corpusgen::GenSpec;
use medfuse_core::ingest::write_atomic;
use medfuse_core::{Error, Medium, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SUFFIX: &str = ".manifest.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<GenSpec>,
    /// Operator formula, e.g. `min(1,x+y)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub operator: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub operator_name: Option<String>,
    /// Set instead of an operator when one medium was exported alone.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub medium: Option<Medium>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub similarity: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_fallback: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scope: Option<MembershipScope>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall_level: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alignment: Option<AlignmentParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alphas: Option<Alphas>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub axis: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<String>>,
    /// Input role to SHA-256 of the file.
    pub inputs: BTreeMap<String, String>,
    /// Input role to SHA-256 of that input's own manifest.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub upstream: BTreeMap<String, String>,
}

pub fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(SUFFIX);
    PathBuf::from(s)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self { tool_version: env!("CARGO_PKG_VERSION").to_owned(), command: command.to_owned(), ..Self::default() }
    }

    /// Records the digest of `path` and, when present, of its manifest.
    pub fn add_input(&mut self, role: &str, path: &Path) -> Result<()> {
        self.inputs.insert(role.to_owned(), file_digest(path)?);
        let side = sidecar(path);
        if side.exists() {
            let bytes = fs::read(&side)?;
            let parent: RunManifest =
                serde_json::from_slice(&bytes).map_err(|e| Error::Data(format!("{}: {e}", side.display())))?;
            self.upstream.insert(role.to_owned(), sha256_hex(&bytes));
            self.inherit(&parent);
        }
        Ok(())
    }

    /// Fills unset parameters from an upstream manifest.
    fn inherit(&mut self, p: &RunManifest) {
        fn take<T: Clone>(slot: &mut Option<T>, from: &Option<T>) {
            if slot.is_none() {
                slot.clone_from(from);
            }
        }
        take(&mut self.seed, &p.seed);
        take(&mut self.generator, &p.generator);
        take(&mut self.operator, &p.operator);
        take(&mut self.operator_name, &p.operator_name);
        take(&mut self.medium, &p.medium);
        take(&mut self.similarity, &p.similarity);
        take(&mut self.k, &p.k);
        take(&mut self.theta, &p.theta);
        take(&mut self.eta_fallback, &p.eta_fallback);
        take(&mut self.scope, &p.scope);
        take(&mut self.recall_level, &p.recall_level);
        take(&mut self.alignment, &p.alignment);
        take(&mut self.alphas, &p.alphas);
        take(&mut self.tag, &p.tag);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("manifest serializes");
        bytes.push(b'\n');
        bytes
    }

    pub fn digest(&self) -> String {
        sha256_hex(&self.to_bytes())
    }

    /// Writes the manifest beside `output` and returns its digest.
    pub fn write_for(&self, output: &Path) -> Result<String> {
        let bytes = self.to_bytes();
        write_atomic(&sidecar(output), |buf| {
            buf.extend_from_slice(&bytes);
            Ok(())
        })?;
        Ok(sha256_hex(&bytes))
    }
}
