use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CatalogError, Result};
use crate::doc;
use crate::model::DatasetSchema;

/// One record file of a split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFile {
    /// Local path, `file://` URL or `http(s)://` URL.
    pub url: String,
    /// Lowercase hex SHA-256 of the file.
    pub sha256: String,
    pub episode_count: u64,
}

/// Description of one version of a named dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    pub version: String,
    pub description: String,
    pub citation: String,
    pub license: String,
    pub homepage: String,
    pub splits: BTreeMap<String, Vec<SplitFile>>,
    /// Lowercase hex SHA-256 of the canonical schema document.
    pub schema_digest: String,
}

/// SHA-256 of the canonical schema bytes, as lowercase hex.
pub fn schema_digest(schema: &DatasetSchema) -> String {
    hex::encode(Sha256::digest(schema.canonical_bytes()))
}

fn is_sha256_hex(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

fn is_safe_name(s: &str) -> bool {
    !s.is_empty()
        && !s.starts_with('.')
        && s.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b'.'))
}

impl Manifest {
    pub fn check_valid(&self) -> Result<()> {
        let bad = |msg: String| Err(CatalogError::InvalidManifest(msg));
        if !is_safe_name(&self.name) {
            return bad(format!("dataset name {:?} must be non-empty [A-Za-z0-9_.-] not starting with '.'", self.name));
        }
        if semver::Version::parse(&self.version).is_err() {
            return bad(format!("version {:?} is not a semantic version", self.version));
        }
        if self.citation.trim().is_empty() {
            return bad("a citation is required".into());
        }
        if !is_sha256_hex(&self.schema_digest) {
            return bad("schema_digest must be 64 lowercase hex digits".into());
        }
        for (split, files) in &self.splits {
            if !is_safe_name(split) {
                return bad(format!("split name {split:?} must be [A-Za-z0-9_.-]"));
            }
            for f in files {
                if !is_sha256_hex(&f.sha256) {
                    return bad(format!("{}: sha256 must be 64 lowercase hex digits", f.url));
                }
            }
        }
        Ok(())
    }

    pub fn semver(&self) -> Result<semver::Version> {
        semver::Version::parse(&self.version)
            .map_err(|e| CatalogError::InvalidManifest(format!("version {:?}: {e}", self.version)))
    }

    /// Key-sorted compact JSON; byte-stable for equal manifests.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        doc::to_canonical_bytes(self).expect("manifest serializes")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Manifest> {
        let m: Manifest = serde_json::from_slice(bytes).map_err(|e| CatalogError::InvalidManifest(e.to_string()))?;
        m.check_valid()?;
        Ok(m)
    }
}
