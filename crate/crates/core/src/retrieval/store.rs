//! Collection embedding store with an on-disk cache.
//!
//! Cache layout: a small self-describing header followed by contiguous
//! little-endian f32 rows, plus a sidecar `<file>.ids` listing one image id
//! per line in row order.
//!
//! ```text
//! magic  b"EMBS"
//! u8     version (1)
//! u8     normalized flag
//! u32le  dim
//! u64le  row count
//! f32le  rows, row-major
//! ```

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;

use crate::data::{EmbeddingVector, ImageSource};
use crate::error::{Error, Result};
use crate::retrieval::provider::EmbeddingProvider;

const MAGIC: &[u8; 4] = b"EMBS";
const VERSION: u8 = 1;

/// Image ids paired with an n x e embedding matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    ids: Vec<String>,
    matrix: Array2<f32>,
    normalized: bool,
}

impl EmbeddingStore {
    pub fn new(ids: Vec<String>, matrix: Array2<f32>, normalized: bool) -> Result<Self> {
        if ids.len() != matrix.nrows() {
            return Err(Error::Dimension(format!(
                "{} ids but {} matrix rows",
                ids.len(),
                matrix.nrows()
            )));
        }
        Ok(Self {
            ids,
            matrix,
            normalized,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        self.matrix.row(i).to_slice().expect("contiguous row")
    }

    pub fn matrix(&self) -> &Array2<f32> {
        &self.matrix
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn write_cache(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(14 + self.matrix.len() * 4);
        buf.extend_from_slice(MAGIC);
        buf.push(VERSION);
        buf.push(u8::from(self.normalized));
        buf.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for v in self.matrix.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))?;

        let ids_path = sidecar_ids_path(path);
        let mut ids_text = String::new();
        for id in &self.ids {
            ids_text.push_str(id);
            ids_text.push('\n');
        }
        std::fs::write(&ids_path, ids_text).map_err(|e| Error::io(&ids_path, e))
    }

    pub fn read_cache(path: &Path) -> Result<Self> {
        let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut header = [0u8; 18];
        f.read_exact(&mut header).map_err(|e| Error::io(path, e))?;
        if &header[0..4] != MAGIC {
            return Err(Error::CacheMismatch(format!(
                "{} is not an embedding cache",
                path.display()
            )));
        }
        if header[4] != VERSION {
            return Err(Error::CacheMismatch(format!(
                "unsupported cache version {}",
                header[4]
            )));
        }
        let normalized = header[5] != 0;
        let dim = u32::from_le_bytes(header[6..10].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(header[10..18].try_into().unwrap()) as usize;
        let mut body = Vec::new();
        f.read_to_end(&mut body).map_err(|e| Error::io(path, e))?;
        if body.len() != dim * count * 4 {
            return Err(Error::CacheMismatch(format!(
                "cache body is {} bytes, expected {}",
                body.len(),
                dim * count * 4
            )));
        }
        let values: Vec<f32> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let matrix = Array2::from_shape_vec((count, dim), values)
            .map_err(|e| Error::CacheMismatch(e.to_string()))?;

        let ids_path = sidecar_ids_path(path);
        let ids_text = std::fs::read_to_string(&ids_path).map_err(|e| Error::io(&ids_path, e))?;
        let ids: Vec<String> = ids_text.lines().map(str::to_string).collect();
        if ids.len() != count {
            return Err(Error::CacheMismatch(format!(
                "sidecar lists {} ids, cache has {} rows",
                ids.len(),
                count
            )));
        }
        EmbeddingStore::new(ids, matrix, normalized)
    }
}

fn sidecar_ids_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".ids");
    os.into()
}

fn ids_diff_summary(expected: &[String], found: &[String]) -> String {
    if expected.len() != found.len() {
        return format!(
            "collection has {} images, cache has {}",
            expected.len(),
            found.len()
        );
    }
    for (i, (e, f)) in expected.iter().zip(found.iter()).enumerate() {
        if e != f {
            return format!("id drift at row {i}: collection {e:?}, cache {f:?}");
        }
    }
    "no difference".into()
}

/// Embeds every image in the source, in id order.
///
/// When `cache_path` exists it is read instead of recomputing; the cached ids
/// must match the collection exactly. A fresh computation is written back to
/// `cache_path` when given.
pub fn embed_collection(
    source: &dyn ImageSource,
    provider: &dyn EmbeddingProvider,
    cache_path: Option<&Path>,
) -> Result<EmbeddingStore> {
    let ids = source.ids();
    if let Some(path) = cache_path {
        if path.is_file() {
            let store = EmbeddingStore::read_cache(path)?;
            if store.ids() != ids.as_slice() {
                return Err(Error::CacheMismatch(ids_diff_summary(&ids, store.ids())));
            }
            if store.dim() != provider.dim() {
                return Err(Error::CacheMismatch(format!(
                    "cache dim {} vs provider dim {}",
                    store.dim(),
                    provider.dim()
                )));
            }
            return Ok(store);
        }
    }

    let rows: Vec<EmbeddingVector> = ids
        .par_iter()
        .map(|id| {
            let sample = source.get(id)?;
            let emb = provider.image_embed(&sample)?;
            if emb.dim() != provider.dim() {
                return Err(Error::Dimension(format!(
                    "provider produced dim {} (declared {})",
                    emb.dim(),
                    provider.dim()
                )));
            }
            emb.validate()?;
            Ok(emb)
        })
        .collect::<Result<_>>()?;

    let normalized = rows.iter().all(EmbeddingVector::is_normalized);
    let mut matrix = Array2::zeros((ids.len(), provider.dim()));
    for (i, emb) in rows.iter().enumerate() {
        for (j, v) in emb.values().iter().enumerate() {
            matrix[(i, j)] = *v;
        }
    }
    let store = EmbeddingStore::new(ids, matrix, normalized)?;
    if let Some(path) = cache_path {
        store.write_cache(path)?;
    }
    Ok(store)
}
