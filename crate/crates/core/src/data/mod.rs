//! Data pipeline: NIfTI I/O, preprocessing, manifests, pair sampling, and
//! synthetic ground-truth generation.

pub mod manifest;
pub mod nifti;
mod preprocess;
mod sampling;
mod synthetic;

pub use manifest::{
    load_manifest, save_pairs_manifest, CaseEntry, DatasetIndex, IndexEntry, Manifest,
    PairsManifest,
};
pub use preprocess::{conforming_shape, load_volume, normalize_minmax, preprocess};
pub use sampling::PairSampler;
pub use synthetic::{make_synthetic, SyntheticCase};

use std::path::Path;

use crate::error::{Error, Result};
use crate::volgrid::LandmarkSet;

/// Write landmarks as CSV, one `x,y,z` row (mm) per point.
pub fn write_landmarks_csv(path: impl AsRef<Path>, pts: &LandmarkSet) -> Result<()> {
    let mut text = String::new();
    for p in &pts.points {
        text.push_str(&format!("{},{},{}\n", p[0], p[1], p[2]));
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Read landmarks written by [`write_landmarks_csv`].
pub fn read_landmarks_csv(path: impl AsRef<Path>) -> Result<LandmarkSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Manifest(format!(
                "{}:{}: expected 3 comma-separated values",
                path.display(),
                lineno + 1
            )));
        }
        let mut p = [0.0f64; 3];
        for (i, f) in fields.iter().enumerate() {
            p[i] = f.trim().parse().map_err(|e| {
                Error::Manifest(format!("{}:{}: bad number: {e}", path.display(), lineno + 1))
            })?;
        }
        points.push(p);
    }
    Ok(LandmarkSet::new(points))
}
