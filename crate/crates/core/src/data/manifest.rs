//! Dataset manifests: a flat volume index for pool-style training and a
//! paired-case manifest for synthetic benchmarks and evaluation.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One volume with optional annotations.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct IndexEntry {
    pub volume: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmarks: Option<PathBuf>,
}

/// Pool of volumes; training pairs are drawn at random from it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetIndex {
    pub split: String,
    pub entries: Vec<IndexEntry>,
}

/// One registration case: explicit moving/fixed volumes with optional
/// annotations and (for synthetic data) the ground-truth field.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CaseEntry {
    pub id: String,
    pub moving: PathBuf,
    pub fixed: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moving_labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moving_landmarks: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_landmarks: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_field: Option<PathBuf>,
}

/// Manifest of explicit (moving, fixed) cases.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairsManifest {
    pub split: String,
    pub cases: Vec<CaseEntry>,
}

/// Either manifest flavor, as found on disk.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Manifest {
    Pairs(PairsManifest),
    Index(DatasetIndex),
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn check_exists(p: &Path, what: &str) -> Result<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(Error::Manifest(format!("{what} does not exist: {}", p.display())))
    }
}

impl DatasetIndex {
    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Manifest("index has no entries".into()));
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(&e.volume) {
                return Err(Error::Manifest(format!(
                    "duplicate entry: {}",
                    e.volume.display()
                )));
            }
            check_exists(&e.volume, "volume")?;
            if let Some(p) = &e.labels {
                check_exists(p, "label map")?;
            }
            if let Some(p) = &e.landmarks {
                check_exists(p, "landmark file")?;
            }
        }
        Ok(())
    }
}

impl PairsManifest {
    pub fn validate(&self) -> Result<()> {
        if self.cases.is_empty() {
            return Err(Error::Manifest("manifest has no cases".into()));
        }
        let mut seen = HashSet::new();
        for c in &self.cases {
            if !seen.insert(&c.id) {
                return Err(Error::Manifest(format!("duplicate case id: {}", c.id)));
            }
            for (p, what) in [(Some(&c.moving), "moving volume"), (Some(&c.fixed), "fixed volume")] {
                check_exists(p.unwrap(), what)?;
            }
            for (p, what) in [
                (&c.moving_labels, "moving labels"),
                (&c.fixed_labels, "fixed labels"),
                (&c.moving_landmarks, "moving landmarks"),
                (&c.fixed_landmarks, "fixed landmarks"),
                (&c.true_field, "true field"),
            ] {
                if let Some(p) = p {
                    check_exists(p, what)?;
                }
            }
        }
        Ok(())
    }
}

/// Load a manifest, resolve its paths relative to the manifest location,
/// and validate it.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Manifest(format!("cannot read {}: {e}", path.display())))?;
    let mut manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Manifest(format!("malformed manifest {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    match &mut manifest {
        Manifest::Index(idx) => {
            for e in &mut idx.entries {
                resolve(&base, &mut e.volume);
                if let Some(p) = &mut e.labels {
                    resolve(&base, p);
                }
                if let Some(p) = &mut e.landmarks {
                    resolve(&base, p);
                }
            }
            idx.validate()?;
        }
        Manifest::Pairs(pm) => {
            for c in &mut pm.cases {
                resolve(&base, &mut c.moving);
                resolve(&base, &mut c.fixed);
                for p in [
                    &mut c.moving_labels,
                    &mut c.fixed_labels,
                    &mut c.moving_landmarks,
                    &mut c.fixed_landmarks,
                    &mut c.true_field,
                ]
                .into_iter()
                .flatten()
                {
                    resolve(&base, p);
                }
            }
            pm.validate()?;
        }
    }
    Ok(manifest)
}

/// Write a paired-case manifest as pretty JSON.
pub fn save_pairs_manifest(path: impl AsRef<Path>, manifest: &PairsManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest)?;
    fs::write(path, text)?;
    Ok(())
}
