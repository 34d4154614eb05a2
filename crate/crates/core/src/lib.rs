//! Training a multi-class semantic segmenter with no pixel-level annotation:
//! embedding-similarity archives, saliency pseudo-masks, per-category expert
//! refinement, and distillation into a single named segmenter, plus the
//! evaluation machinery for all of it.

pub mod data;
pub mod distill;
pub mod error;
pub mod eval;
pub mod experts;
pub mod imgops;
pub mod pseudomask;
pub mod retrieval;
pub mod rng;
pub mod segnet;
pub mod synth;

pub use error::{Error, Result};
