//! Stage manifests: each pipeline stage records its config hash, seed, and
//! artifact checksums so downstream stages can refuse stale inputs.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    /// upstream stage name -> config hash it was built with
    pub inputs: BTreeMap<String, String>,
    /// artifact path relative to the stage dir -> sha256
    pub artifacts: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    format!("{:x}", h.finalize())
}

pub fn hash_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path)
        .map_err(|e| anyhow::anyhow!("cannot read artifact {}: {e}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

pub fn stage_dir(root: &Path, stage: &str) -> PathBuf {
    root.join(stage)
}

fn manifest_path(root: &Path, stage: &str) -> PathBuf {
    stage_dir(root, stage).join("manifest.json")
}

impl StageManifest {
    pub fn new(stage: &str, config_hash: &str, seed: u64) -> StageManifest {
        StageManifest {
            stage: stage.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
        }
    }

    pub fn record_input(&mut self, upstream: &StageManifest) {
        self.inputs
            .insert(upstream.stage.clone(), upstream.config_hash.clone());
    }

    pub fn record_artifact(&mut self, root: &Path, rel: &str) -> anyhow::Result<()> {
        let path = stage_dir(root, &self.stage).join(rel);
        self.artifacts.insert(rel.to_string(), hash_file(&path)?);
        Ok(())
    }

    pub fn save(&self, root: &Path) -> anyhow::Result<()> {
        let path = manifest_path(root, &self.stage);
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(root: &Path, stage: &str) -> anyhow::Result<StageManifest> {
        let path = manifest_path(root, stage);
        let text = std::fs::read_to_string(&path).map_err(|_| {
            anyhow::anyhow!(
                "stage '{stage}' has not been run (missing {}); run `hrtfest {stage}` first",
                path.display()
            )
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Load an upstream stage manifest and verify it was produced under the
/// current config (unless forced) and that its artifacts are intact.
pub fn require_upstream(
    root: &Path,
    stage: &str,
    config_hash: &str,
    force: bool,
) -> anyhow::Result<StageManifest> {
    let m = StageManifest::load(root, stage)?;
    if m.config_hash != config_hash && !force {
        anyhow::bail!(
            "stage '{stage}' artifacts were built with config hash {} but the current \
             config hashes to {config_hash}; re-run the stage or pass --force",
            m.config_hash
        );
    }
    for (rel, want) in &m.artifacts {
        let got = hash_file(&stage_dir(root, stage).join(rel))?;
        if &got != want {
            anyhow::bail!(
                "artifact {rel} of stage '{stage}' changed on disk (checksum mismatch)"
            );
        }
    }
    Ok(m)
}
