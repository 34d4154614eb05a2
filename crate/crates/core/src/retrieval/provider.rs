//! Embedding provider interface.

use crate::data::{EmbeddingVector, ImageSample};
use crate::error::Result;

/// Paired image/text encoders producing unit-norm vectors of a fixed dimension.
///
/// Implementations must be `Sync`: similarity scans and collection embedding
/// fan out across worker threads with shared read-only access.
pub trait EmbeddingProvider: Sync {
    fn dim(&self) -> usize;
    fn image_embed(&self, sample: &ImageSample) -> Result<EmbeddingVector>;
    fn text_embed(&self, text: &str) -> Result<EmbeddingVector>;
}
