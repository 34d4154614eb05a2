//! Top-k archive selection over an embedding store.

use rayon::prelude::*;

use crate::data::{Archive, ArchiveEntry, EmbeddingVector};
use crate::error::{Error, Result};
use crate::retrieval::store::EmbeddingStore;

/// A scored row; ordering is (score descending, id ascending).
#[derive(Debug, Clone, PartialEq)]
struct Scored {
    score: f32,
    id: String,
}

impl Scored {
    fn ranks_before(&self, other: &Scored) -> bool {
        match self.score.total_cmp(&other.score) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => self.id < other.id,
        }
    }
}

fn merge_topk(mut a: Vec<Scored>, b: Vec<Scored>, k: usize) -> Vec<Scored> {
    a.extend(b);
    a.sort_by(|x, y| {
        y.score
            .total_cmp(&x.score)
            .then_with(|| x.id.cmp(&y.id))
    });
    a.truncate(k);
    a
}

/// Selects the `k` images with the largest dot product to the category
/// embedding. Scores are non-increasing; exact ties are broken by ascending
/// image id. Requesting more than the store holds returns everything with a
/// warning.
pub fn build_archive(
    store: &EmbeddingStore,
    category_embedding: &EmbeddingVector,
    k: usize,
    category_index: u16,
) -> Result<Archive> {
    if k == 0 {
        return Err(Error::InvalidArgument("archive size k must be >= 1".into()));
    }
    if store.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot build an archive from an empty store".into(),
        ));
    }
    if category_embedding.dim() != store.dim() {
        return Err(Error::Dimension(format!(
            "category embedding dim {} vs store dim {}",
            category_embedding.dim(),
            store.dim()
        )));
    }
    if k > store.len() {
        log::warn!(
            "archive size {} exceeds collection size {}; returning all images",
            k,
            store.len()
        );
    }
    let k_eff = k.min(store.len());
    let query = category_embedding.values();

    // parallel map-reduce: per-chunk top-k, merged by the same total order so
    // the result is independent of chunking
    let indices: Vec<usize> = (0..store.len()).collect();
    let top = indices
        .par_chunks(1024)
        .map(|chunk| {
            let mut local: Vec<Scored> = chunk
                .iter()
                .map(|&i| {
                    let row = store.row(i);
                    let score: f32 = row.iter().zip(query).map(|(a, b)| a * b).sum();
                    Scored {
                        score,
                        id: store.ids()[i].clone(),
                    }
                })
                .collect();
            local.sort_by(|x, y| y.score.total_cmp(&x.score).then_with(|| x.id.cmp(&y.id)));
            local.truncate(k_eff);
            local
        })
        .reduce(Vec::new, |a, b| merge_topk(a, b, k_eff));

    debug_assert!(top.windows(2).all(|w| w[0].ranks_before(&w[1])));
    Archive::new(
        category_index,
        top.into_iter()
            .map(|s| ArchiveEntry {
                image_id: s.id,
                similarity: s.score,
            })
            .collect(),
    )
}

/// Reference implementation: full sort then truncate. Used by tests and the
/// acceptance suite as the independent oracle.
pub fn brute_force_archive(
    store: &EmbeddingStore,
    category_embedding: &EmbeddingVector,
    k: usize,
    category_index: u16,
) -> Result<Archive> {
    if k == 0 {
        return Err(Error::InvalidArgument("archive size k must be >= 1".into()));
    }
    let query = category_embedding.values();
    let mut all: Vec<Scored> = (0..store.len())
        .map(|i| Scored {
            score: store.row(i).iter().zip(query).map(|(a, b)| a * b).sum(),
            id: store.ids()[i].clone(),
        })
        .collect();
    all.sort_by(|x, y| y.score.total_cmp(&x.score).then_with(|| x.id.cmp(&y.id)));
    all.truncate(k.min(store.len()));
    Archive::new(
        category_index,
        all.into_iter()
            .map(|s| ArchiveEntry {
                image_id: s.id,
                similarity: s.score,
            })
            .collect(),
    )
}
