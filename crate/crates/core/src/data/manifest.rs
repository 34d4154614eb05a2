//! Line-delimited manifest files.
//!
//! One JSON record per line:
//!
//! ```text
//! {"id":"train-00003","image_path":"images/train-00003.png","mask_path":"masks/train-00003.png","category":"red-square","provenance":null}
//! ```
//!
//! Fields:
//! - `id`          opaque unique image id (required)
//! - `image_path`  path to the RGB image, relative to the manifest's directory
//!                 unless absolute (required)
//! - `mask_path`   optional path to a single-channel 8-bit mask
//! - `category`    optional category name (metadata; pipeline stages that treat
//!                 the collection as unlabelled must not read it)
//! - `provenance`  optional pseudo-label provenance (`saliency` | `expert`)

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::record::Provenance;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub image_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl ManifestRecord {
    /// Resolves `image_path` against the manifest's directory.
    pub fn resolved_image_path(&self, manifest_dir: &Path) -> PathBuf {
        resolve(manifest_dir, &self.image_path)
    }

    pub fn resolved_mask_path(&self, manifest_dir: &Path) -> Option<PathBuf> {
        self.mask_path.as_ref().map(|p| resolve(manifest_dir, p))
    }
}

fn resolve(dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}

/// Loads manifest records in file order.
///
/// Fails with the offending line number on malformed records, missing ids, or
/// image paths that do not exist on disk.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let rec: ManifestRecord =
            serde_json::from_str(trimmed).map_err(|e| Error::Manifest {
                path: path.to_path_buf(),
                line: line_no,
                msg: e.to_string(),
            })?;
        if rec.id.is_empty() {
            return Err(Error::Manifest {
                path: path.to_path_buf(),
                line: line_no,
                msg: "empty id".into(),
            });
        }
        if rec.image_path.as_os_str().is_empty() {
            return Err(Error::Manifest {
                path: path.to_path_buf(),
                line: line_no,
                msg: "missing image path".into(),
            });
        }
        let img = rec.resolved_image_path(dir);
        if !img.is_file() {
            return Err(Error::Manifest {
                path: path.to_path_buf(),
                line: line_no,
                msg: format!("image file not found: {}", img.display()),
            });
        }
        records.push(rec);
    }
    Ok(records)
}

/// Writes records one JSON object per line, in order.
pub fn write_manifest(records: &[ManifestRecord], path: &Path) -> Result<()> {
    let mut out = String::new();
    for rec in records {
        let line = serde_json::to_string(rec)
            .map_err(|e| Error::Other(format!("manifest serialization: {e}")))?;
        out.push_str(&line);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
