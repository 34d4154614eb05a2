//! Per-category ranked retrieval archives.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ranked list of (image id, similarity) for one category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Archive {
    pub category_index: u16,
    pub entries: Vec<ArchiveEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub image_id: String,
    pub similarity: f32,
}

impl Archive {
    pub fn new(category_index: u16, entries: Vec<ArchiveEntry>) -> Result<Self> {
        if category_index == 0 {
            return Err(Error::InvalidArgument(
                "archive category index must be >= 1".into(),
            ));
        }
        let mut seen = HashSet::new();
        for pair in entries.windows(2) {
            if pair[1].similarity > pair[0].similarity {
                return Err(Error::InvalidArgument(
                    "archive similarities must be non-increasing".into(),
                ));
            }
        }
        for e in &entries {
            if !seen.insert(e.image_id.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate image id {:?} in archive",
                    e.image_id
                )));
            }
        }
        Ok(Self {
            category_index,
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let archive: Archive = serde_json::from_str(&text)
            .map_err(|e| Error::Other(format!("bad archive file {}: {e}", path.display())))?;
        Archive::new(archive.category_index, archive.entries)
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Other(format!("archive serialization: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
