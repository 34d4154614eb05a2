//! Pseudo-label records: the unit of distillation training data.

use serde::{Deserialize, Serialize};

use crate::data::mask::LabelMask;
use crate::error::{Error, Result};

/// Where a pseudo-mask came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Saliency,
    Expert,
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Provenance::Saliency => write!(f, "saliency"),
            Provenance::Expert => write!(f, "expert"),
        }
    }
}

/// A binary pseudo-mask plus the category label inherited from its archive.
#[derive(Debug, Clone)]
pub struct PseudoLabelRecord {
    pub image_id: String,
    pub mask: LabelMask,
    pub category_index: u16,
    pub provenance: Provenance,
}

impl PseudoLabelRecord {
    pub fn new(
        image_id: impl Into<String>,
        mask: LabelMask,
        category_index: u16,
        provenance: Provenance,
    ) -> Result<Self> {
        if !mask.is_binary() {
            return Err(Error::InvalidArgument(
                "pseudo-label mask must be binary".into(),
            ));
        }
        if category_index == 0 {
            return Err(Error::InvalidArgument(
                "pseudo-label category index must be >= 1".into(),
            ));
        }
        Ok(Self {
            image_id: image_id.into(),
            mask,
            category_index,
            provenance,
        })
    }
}
