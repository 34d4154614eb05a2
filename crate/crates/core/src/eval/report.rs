//! Serializable evaluation reports.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-stratum mIoU for S / MS / ML / L object sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrataReport {
    pub s: Option<f64>,
    pub ms: Option<f64>,
    pub ml: Option<f64>,
    pub l: Option<f64>,
    pub image_counts: [usize; 4],
    pub cuts: (f64, f64, f64),
}

/// Settings echoed into every report so runs are self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfigEcho {
    pub num_classes: u16,
    pub include_background: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strata_cuts: Option<(f64, f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strata_miou: Option<StrataReport>,
    pub config: EvalConfigEcho,
}

impl EvalReport {
    /// Deterministic serialization: identical reports produce identical bytes.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Other(format!("bad report {}: {e}", path.display())))
    }
}
