//! Experiment manifests: which scenes to immunize, against which targets,
//! with which prompt pairs. TOML on disk, validated on load.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{vocab, Scene};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub scene: Scene,
    /// Target used for the dense spatial-temporal objective; must differ
    /// from `scene`.
    pub target_scene: Scene,
    pub good_prompt: Vec<String>,
    pub bad_prompt: Vec<String>,
    /// Relative artifact directory for this entry; unique across the manifest.
    pub out_dir: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

pub fn validate_manifest(m: &Manifest) -> Result<()> {
    if m.entries.is_empty() {
        return Err(Error::Manifest("empty manifest".into()));
    }
    let mut paths = BTreeSet::new();
    for (i, e) in m.entries.iter().enumerate() {
        if e.target_scene == e.scene {
            return Err(Error::Manifest(format!(
                "entry {i} ('{}'): target scene equals source scene",
                e.id
            )));
        }
        if !paths.insert(e.out_dir.clone()) {
            return Err(Error::Manifest(format!(
                "entry {i} ('{}'): duplicate out_dir '{}'",
                e.id, e.out_dir
            )));
        }
        for (slot, words) in [("good_prompt", &e.good_prompt), ("bad_prompt", &e.bad_prompt)] {
            if words.is_empty() {
                return Err(Error::Manifest(format!(
                    "entry {i} ('{}'): empty {slot}",
                    e.id
                )));
            }
            for w in words {
                if vocab::id_of(w).is_none() {
                    return Err(Error::Manifest(format!(
                        "entry {i} ('{}'): {slot} token '{w}' not in vocabulary",
                        e.id
                    )));
                }
            }
        }
    }
    Ok(())
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let m: Manifest =
        toml::from_str(&text).map_err(|e| Error::Manifest(format!("parse error: {e}")))?;
    validate_manifest(&m)?;
    Ok(m)
}

pub fn save_manifest(m: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    validate_manifest(m)?;
    let text =
        toml::to_string_pretty(m).map_err(|e| Error::Manifest(format!("encode error: {e}")))?;
    if let Some(parent) = path.as_ref().parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}
