//! Artifact sidecars and lineage checks.
//!
//! Every persisted artifact `foo.ext` can carry a sidecar `foo.ext.meta.json`
//! with the SHA-256 of its bytes and the hashes of every upstream artifact it
//! was derived from. Files without a sidecar (user-supplied CSVs) get an
//! implicit record holding only their own hash.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub kind: String,
    pub sha256: String,
    /// Own hash plus the hashes of all ancestors, sorted and deduplicated.
    pub lineage: Vec<String>,
    /// Hashes of sibling artifacts produced by the same step, by role.
    #[serde(default)]
    pub companions: BTreeMap<String, String>,
    #[serde(default)]
    pub attrs: BTreeMap<String, String>,
}

impl ArtifactMeta {
    pub fn descends_from(&self, sha: &str) -> bool {
        self.lineage.binary_search_by(|h| h.as_str().cmp(sha)).is_ok()
    }

    pub fn attr<T: std::str::FromStr>(&self, key: &str) -> Option<T> {
        self.attrs.get(key).and_then(|v| v.parse().ok())
    }
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_bytes(&bytes))
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Hash `path`, write its sidecar and return the record.
pub fn seal(
    path: &Path,
    kind: &str,
    parents: &[&ArtifactMeta],
    companions: BTreeMap<String, String>,
    attrs: BTreeMap<String, String>,
) -> Result<ArtifactMeta> {
    let sha256 = sha256_file(path)?;
    let mut lineage: Vec<String> = parents
        .iter()
        .flat_map(|p| p.lineage.iter().cloned())
        .collect();
    lineage.push(sha256.clone());
    lineage.sort();
    lineage.dedup();
    let meta = ArtifactMeta {
        kind: kind.to_string(),
        sha256,
        lineage,
        companions,
        attrs,
    };
    let mp = meta_path(path);
    let json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    fs::write(&mp, json).map_err(|e| Error::io(&mp, e))?;
    Ok(meta)
}

/// Sidecar of `path` after checking that the file still matches it; an
/// implicit single-hash record when there is no sidecar.
pub fn load_meta(path: &Path) -> Result<ArtifactMeta> {
    let sha256 = sha256_file(path)?;
    let mp = meta_path(path);
    if !mp.exists() {
        return Ok(ArtifactMeta {
            kind: "external".into(),
            lineage: vec![sha256.clone()],
            sha256,
            companions: BTreeMap::new(),
            attrs: BTreeMap::new(),
        });
    }
    let text = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let meta: ArtifactMeta = serde_json::from_str(&text).map_err(|e| Error::Format {
        what: "artifact sidecar",
        message: format!("{}: {e}", mp.display()),
    })?;
    if meta.sha256 != sha256 {
        return Err(Error::ChainMismatch(format!(
            "{} was modified after its sidecar was written",
            path.display()
        )));
    }
    Ok(meta)
}

/// Rankings must descend from the contaminated training set the error table
/// describes.
pub fn check_evaluation_chain(rankings: &ArtifactMeta, errors: &ArtifactMeta) -> Result<()> {
    let Some(train) = errors.companions.get("train") else {
        return Err(Error::ChainMismatch(
            "the error table sidecar does not name its training set".into(),
        ));
    };
    if !rankings.descends_from(train) {
        return Err(Error::ChainMismatch(format!(
            "rankings were not computed from training set {}",
            &train[..12.min(train.len())]
        )));
    }
    Ok(())
}
