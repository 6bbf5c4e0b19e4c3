//! Output directory with a content-digest manifest, so reruns can tell which
//! artifacts are stale.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";
pub const LAYOUT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub stage: String,
    pub sha256: String,
    /// Digests of the artifacts this one was derived from, at write time.
    pub inputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub layout_version: u32,
    pub artifacts: BTreeMap<String, ArtifactEntry>,
}

impl Default for Manifest {
    fn default() -> Self {
        Self {
            layout_version: LAYOUT_VERSION,
            artifacts: BTreeMap::new(),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub struct Workspace {
    root: PathBuf,
    manifest: Manifest,
}

impl Workspace {
    pub fn open(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating output directory {}", root.display()))?;
        let path = root.join(MANIFEST);
        let manifest = if path.exists() {
            let text = fs::read_to_string(&path)?;
            let m: Manifest = serde_json::from_str(&text).with_context(|| format!("reading {}", path.display()))?;
            if m.layout_version != LAYOUT_VERSION {
                anyhow::bail!(
                    "{} uses layout version {}, expected {LAYOUT_VERSION}",
                    path.display(),
                    m.layout_version
                );
            }
            m
        } else {
            Manifest::default()
        };
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn exists(&self, rel: &str) -> bool {
        self.path(rel).exists()
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn read(&self, rel: &str) -> Result<Vec<u8>> {
        fs::read(self.path(rel)).with_context(|| format!("reading {}", self.path(rel).display()))
    }

    pub fn read_string(&self, rel: &str) -> Result<String> {
        fs::read_to_string(self.path(rel)).with_context(|| format!("reading {}", self.path(rel).display()))
    }

    /// Current digest of an artifact on disk.
    pub fn digest(&self, rel: &str) -> Result<String> {
        Ok(sha256_hex(&self.read(rel)?))
    }

    /// Writes `bytes` to `rel` and records it, with the current digests of
    /// `inputs`, in the manifest.
    pub fn write(&mut self, rel: &str, bytes: &[u8], stage: &str, inputs: &[String]) -> Result<()> {
        let mut input_digests = BTreeMap::new();
        for i in inputs {
            input_digests.insert(i.clone(), self.digest(i)?);
        }
        let path = self.path(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.manifest.artifacts.insert(
            rel.to_string(),
            ArtifactEntry {
                stage: stage.to_string(),
                sha256: sha256_hex(bytes),
                inputs: input_digests,
            },
        );
        self.save()
    }

    /// True when `rel` exists, matches its recorded digest, and was derived
    /// from exactly `inputs` as they are now.
    pub fn is_fresh(&self, rel: &str, inputs: &[String]) -> bool {
        let Some(entry) = self.manifest.artifacts.get(rel) else {
            return false;
        };
        if self.digest(rel).ok().as_deref() != Some(entry.sha256.as_str()) || entry.inputs.len() != inputs.len() {
            return false;
        }
        inputs
            .iter()
            .all(|i| entry.inputs.get(i).is_some_and(|d| self.digest(i).ok().as_deref() == Some(d.as_str())))
    }

    fn save(&self) -> Result<()> {
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        fs::write(self.root.join(MANIFEST), text)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn freshness_tracks_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut ws = Workspace::open(dir.path()).unwrap();
        ws.write("a.txt", b"one", "test", &[]).unwrap();
        ws.write("b.txt", b"derived", "test", &["a.txt".into()]).unwrap();
        assert!(ws.is_fresh("b.txt", &["a.txt".into()]));
        ws.write("a.txt", b"two", "test", &[]).unwrap();
        assert!(!ws.is_fresh("b.txt", &["a.txt".into()]));
        let again = Workspace::open(dir.path()).unwrap();
        assert_eq!(again.manifest(), ws.manifest());
    }
}
