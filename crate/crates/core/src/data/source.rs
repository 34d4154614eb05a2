//! Image lookup by id, backed by a manifest on disk or an in-memory map.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::data::manifest::ManifestRecord;
use crate::data::mask::{read_mask, LabelMask};
use crate::data::sample::{read_image, ImageSample};
use crate::error::{Error, Result};

/// Resolves image ids to samples. Implementations must be safe for concurrent
/// read-only use (`Sync`), since stages fan work out across workers.
pub trait ImageSource: Sync {
    fn get(&self, id: &str) -> Result<Arc<ImageSample>>;
    fn ids(&self) -> Vec<String>;
}

/// Manifest-backed source that loads every sample into memory up front.
///
/// Desk-scale corpora fit comfortably; keeping samples resident makes training
/// epochs IO-free and deterministic.
pub struct ManifestImageSource {
    order: Vec<String>,
    samples: HashMap<String, Arc<ImageSample>>,
}

impl ManifestImageSource {
    /// Loads all records. `gt_classes`, when given, is the class count used to
    /// validate attached ground-truth masks.
    pub fn load(
        records: &[ManifestRecord],
        manifest_dir: &Path,
        gt_classes: Option<u16>,
    ) -> Result<Self> {
        let mut order = Vec::with_capacity(records.len());
        let mut samples = HashMap::with_capacity(records.len());
        for rec in records {
            let pixels = read_image(&rec.resolved_image_path(manifest_dir))?;
            let gt_mask = match (&rec.resolved_mask_path(manifest_dir), gt_classes) {
                (Some(p), Some(nc)) => Some(read_mask(p, nc)?),
                (Some(p), None) => Some(read_mask(p, 255)?),
                (None, _) => None,
            };
            let sample = ImageSample::new(rec.id.clone(), pixels, gt_mask)?;
            if samples.insert(rec.id.clone(), Arc::new(sample)).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate image id {:?} in manifest",
                    rec.id
                )));
            }
            order.push(rec.id.clone());
        }
        Ok(Self { order, samples })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

impl ImageSource for ManifestImageSource {
    fn get(&self, id: &str) -> Result<Arc<ImageSample>> {
        self.samples
            .get(id)
            .cloned()
            .ok_or_else(|| Error::InvalidArgument(format!("unknown image id {id:?}")))
    }

    fn ids(&self) -> Vec<String> {
        self.order.clone()
    }
}

/// In-memory source for tests and synthetic corpora.
pub struct MemoryImageSource {
    order: Vec<String>,
    samples: HashMap<String, Arc<ImageSample>>,
}

impl MemoryImageSource {
    pub fn new(samples: Vec<ImageSample>) -> Self {
        let order: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
        let samples = samples
            .into_iter()
            .map(|s| (s.id.clone(), Arc::new(s)))
            .collect();
        Self { order, samples }
    }
}

impl ImageSource for MemoryImageSource {
    fn get(&self, id: &str) -> Result<Arc<ImageSample>> {
        self.samples
            .get(id)
            .cloned()
            .ok_or_else(|| Error::InvalidArgument(format!("unknown image id {id:?}")))
    }

    fn ids(&self) -> Vec<String> {
        self.order.clone()
    }
}

/// Convenience: masks paired with records, saved under `dir/<id>.png`.
pub fn mask_file_name(id: &str) -> PathBuf {
    PathBuf::from(format!("{id}.png"))
}

/// Re-export-friendly helper used by stages persisting pseudo-label masks.
pub fn write_mask_for_id(mask: &LabelMask, dir: &Path, id: &str) -> Result<PathBuf> {
    let path = dir.join(mask_file_name(id));
    crate::data::mask::write_mask(mask, &path)?;
    Ok(path)
}
