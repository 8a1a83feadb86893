//! Run-directory manifest: SHA-256 digests of every artifact a pipeline
//! step produced, so downstream steps can refuse inputs from a different
//! run (a BPE model from run A with a label space from run B, say).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::io_context(format!("cannot read {}", path.display()), e))?;
    Ok(sha256_hex(&bytes))
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Artifact name → SHA-256 hex digest.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineManifest {
    pub artifacts: BTreeMap<String, String>,
}

impl PipelineManifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io_context(format!("cannot read manifest {}", path.display()), e))?;
        let m: PipelineManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("manifest {}: {e}", path.display())))?;
        Ok(m)
    }

    /// Load the manifest if present, otherwise start an empty one.
    pub fn load_or_default(path: &Path) -> Result<Self> {
        if path.exists() {
            Self::load(path)
        } else {
            Ok(Self::new())
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)
            .map_err(|e| Error::io_context(format!("cannot write manifest {}", path.display()), e))?;
        Ok(())
    }

    pub fn record(&mut self, name: &str, bytes: &[u8]) {
        self.artifacts.insert(name.to_string(), sha256_hex(bytes));
    }

    pub fn record_file(&mut self, name: &str, path: &Path) -> Result<()> {
        let digest = sha256_file(path)?;
        self.artifacts.insert(name.to_string(), digest);
        Ok(())
    }

    /// Check that `path`'s current content matches the digest recorded for
    /// `name`. An unrecorded name or a digest mismatch is a data error: it
    /// means the artifact does not come from this run.
    pub fn verify_file(&self, name: &str, path: &Path) -> Result<()> {
        let recorded = self.artifacts.get(name).ok_or_else(|| {
            Error::Data(format!(
                "artifact `{name}` is not recorded in the run manifest; \
                 regenerate it with the upstream command"
            ))
        })?;
        let actual = sha256_file(path)?;
        if *recorded != actual {
            return Err(Error::Data(format!(
                "artifact `{name}` ({}) does not match the run manifest \
                 (expected {recorded}, found {actual}); it belongs to a different run",
                path.display()
            )));
        }
        Ok(())
    }
}
