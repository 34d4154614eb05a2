//! Core domain types and file formats shared by every pipeline stage.
//!
//! Everything here is immutable after construction and safe to share
//! read-only across parallel workers.

pub mod archive;
pub mod catalog;
pub mod embedding;
pub mod manifest;
pub mod mask;
pub mod record;
pub mod sample;
pub mod source;

pub use archive::{Archive, ArchiveEntry};
pub use catalog::{CategoryCatalog, CategoryEntry};
pub use embedding::EmbeddingVector;
pub use manifest::{load_manifest, write_manifest, ManifestRecord};
pub use mask::{read_mask, write_mask, LabelMask, IGNORE};
pub use record::{Provenance, PseudoLabelRecord};
pub use sample::{read_image, write_image, ImageSample};
pub use source::{ImageSource, ManifestImageSource, MemoryImageSource};
