//! Category grouping by k-means over text embeddings.

use rand::Rng;

use crate::data::EmbeddingVector;
use crate::error::{Error, Result};
use crate::rng::{self, tags};

/// A set of categories sharing one expert. Groups partition the foreground
/// category indices.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ExpertGroup {
    pub group_id: usize,
    /// Sorted, 1-based category indices.
    pub member_category_indices: Vec<u16>,
}

const MAX_ITERATIONS: usize = 300;

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = f64::from(x - y);
            d * d
        })
        .sum()
}

fn nearest_centroid(point: &[f32], centroids: &[Vec<f32>]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    (best, best_d)
}

/// k-means++ seeding: first center uniform, the rest sampled proportional to
/// squared distance from the nearest chosen center.
fn seed_centroids(points: &[Vec<f32>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f32>> {
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.gen_range(0..points.len())].clone());
    while centroids.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| nearest_centroid(p, &centroids).1)
            .collect();
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.gen_range(0..points.len())
        } else {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        };
        centroids.push(points[next].clone());
    }
    centroids
}

fn recompute_centroid(points: &[Vec<f32>], members: &[usize]) -> Vec<f32> {
    let dim = points[0].len();
    let mut mean = vec![0.0f64; dim];
    for &m in members {
        for (acc, v) in mean.iter_mut().zip(&points[m]) {
            *acc += f64::from(*v);
        }
    }
    let n = members.len() as f64;
    mean.iter().map(|v| (*v / n) as f32).collect()
}

/// Splits the largest cluster to repair an empty one: its farthest member
/// becomes the empty cluster's centroid.
fn repair_empty_clusters(
    points: &[Vec<f32>],
    assignments: &mut [usize],
    centroids: &mut [Vec<f32>],
) {
    loop {
        let k = centroids.len();
        let mut sizes = vec![0usize; k];
        for &a in assignments.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let largest = sizes
            .iter()
            .enumerate()
            .max_by_key(|(_, &s)| s)
            .map(|(i, _)| i)
            .unwrap();
        let farthest = assignments
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == largest)
            .max_by(|(i, _), (j, _)| {
                sq_dist(&points[*i], &centroids[largest])
                    .total_cmp(&sq_dist(&points[*j], &centroids[largest]))
            })
            .map(|(i, _)| i)
            .expect("largest cluster is non-empty");
        assignments[farthest] = empty;
        centroids[empty] = points[farthest].clone();
    }
}

/// Partitions categories 1..=n into `k_groups` by Lloyd's k-means over their
/// text embeddings. Deterministic for a fixed seed; groups are sorted by their
/// smallest member index.
pub fn group_categories(
    text_embeddings: &[EmbeddingVector],
    k_groups: usize,
    seed: u64,
) -> Result<Vec<ExpertGroup>> {
    let n = text_embeddings.len();
    if n == 0 {
        return Err(Error::InvalidArgument("no category embeddings".into()));
    }
    if k_groups == 0 || k_groups > n {
        return Err(Error::InvalidArgument(format!(
            "k_groups must be in 1..={n}, got {k_groups}"
        )));
    }

    let points: Vec<Vec<f32>> = text_embeddings
        .iter()
        .map(|e| e.values().to_vec())
        .collect();
    let mut rng = rng::stream(seed, tags::KMEANS, &[n as u64, k_groups as u64]);
    let mut centroids = seed_centroids(&points, k_groups, &mut rng);
    let mut assignments: Vec<usize> = points
        .iter()
        .map(|p| nearest_centroid(p, &centroids).0)
        .collect();
    repair_empty_clusters(&points, &mut assignments, &mut centroids);

    for _ in 0..MAX_ITERATIONS {
        for ci in 0..k_groups {
            let members: Vec<usize> = (0..n).filter(|&i| assignments[i] == ci).collect();
            if !members.is_empty() {
                centroids[ci] = recompute_centroid(&points, &members);
            }
        }
        let next: Vec<usize> = points
            .iter()
            .map(|p| nearest_centroid(p, &centroids).0)
            .collect();
        let converged = next == assignments;
        assignments = next;
        repair_empty_clusters(&points, &mut assignments, &mut centroids);
        if converged {
            break;
        }
    }

    let mut groups: Vec<Vec<u16>> = vec![Vec::new(); k_groups];
    for (i, &a) in assignments.iter().enumerate() {
        groups[a].push(i as u16 + 1);
    }
    let mut groups: Vec<Vec<u16>> = groups.into_iter().filter(|g| !g.is_empty()).collect();
    groups.sort_by_key(|g| g[0]);
    Ok(groups
        .into_iter()
        .enumerate()
        .map(|(group_id, member_category_indices)| ExpertGroup {
            group_id,
            member_category_indices,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(values: Vec<f32>) -> EmbeddingVector {
        EmbeddingVector::raw(values)
    }

    fn assert_partition(groups: &[ExpertGroup], n: u16) {
        let mut seen: Vec<u16> = groups
            .iter()
            .flat_map(|g| g.member_category_indices.iter().copied())
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, (1..=n).collect::<Vec<_>>());
    }

    #[test]
    fn single_group_contains_everything() {
        let embs: Vec<_> = (0..5).map(|i| emb(vec![i as f32, 0.0])).collect();
        let groups = group_categories(&embs, 1, 0).unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].member_category_indices, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn well_separated_pairs_recovered() {
        // two tight pairs far apart; the minimum-SSE 2-partition is the pairs
        let embs = vec![
            emb(vec![0.0, 0.0]),
            emb(vec![0.1, 0.0]),
            emb(vec![10.0, 10.0]),
            emb(vec![10.1, 10.0]),
        ];
        for seed in 0..10 {
            let groups = group_categories(&embs, 2, seed).unwrap();
            assert_partition(&groups, 4);
            assert_eq!(groups[0].member_category_indices, vec![1, 2]);
            assert_eq!(groups[1].member_category_indices, vec![3, 4]);
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let embs: Vec<_> = (0..12)
            .map(|i| emb(vec![(i % 4) as f32, (i / 4) as f32]))
            .collect();
        let a = group_categories(&embs, 3, 7).unwrap();
        let b = group_categories(&embs, 3, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn every_member_is_nearest_its_own_centroid_at_convergence() {
        // verify the assignment optimality property on a random instance
        use rand::{Rng, SeedableRng};
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let embs: Vec<_> = (0..20)
            .map(|_| emb(vec![r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)]))
            .collect();
        let groups = group_categories(&embs, 4, 1).unwrap();
        assert_partition(&groups, 20);
        let centroids: Vec<Vec<f32>> = groups
            .iter()
            .map(|g| {
                let members: Vec<usize> = g
                    .member_category_indices
                    .iter()
                    .map(|&c| c as usize - 1)
                    .collect();
                let pts: Vec<Vec<f32>> = embs.iter().map(|e| e.values().to_vec()).collect();
                recompute_centroid(&pts, &members)
            })
            .collect();
        for (gi, g) in groups.iter().enumerate() {
            for &c in &g.member_category_indices {
                let p = embs[c as usize - 1].values();
                let (nearest, _) = nearest_centroid(p, &centroids);
                assert_eq!(nearest, gi, "category {c} not nearest its centroid");
            }
        }
    }

    #[test]
    fn out_of_range_k_is_fatal() {
        let embs: Vec<_> = (0..3).map(|i| emb(vec![i as f32])).collect();
        assert!(group_categories(&embs, 0, 0).is_err());
        assert!(group_categories(&embs, 4, 0).is_err());
    }

    #[test]
    fn exhaustive_partition_check_minimizing_sse() {
        // brute-force all 2-partitions of 4 points and compare SSE
        let embs = vec![
            emb(vec![0.0]),
            emb(vec![0.2]),
            emb(vec![5.0]),
            emb(vec![5.3]),
        ];
        let groups = group_categories(&embs, 2, 42).unwrap();
        let sse = |members: &[usize]| -> f64 {
            let pts: Vec<Vec<f32>> = embs.iter().map(|e| e.values().to_vec()).collect();
            let c = recompute_centroid(&pts, members);
            members.iter().map(|&m| sq_dist(&pts[m], &c)).sum()
        };
        let got: f64 = groups
            .iter()
            .map(|g| {
                let members: Vec<usize> = g
                    .member_category_indices
                    .iter()
                    .map(|&c| c as usize - 1)
                    .collect();
                sse(&members)
            })
            .sum();
        // enumerate all non-trivial bipartitions
        let mut best = f64::INFINITY;
        for bits in 1u32..(1 << 4) - 1 {
            let a: Vec<usize> = (0..4).filter(|i| bits & (1 << i) != 0).collect();
            let b: Vec<usize> = (0..4).filter(|i| bits & (1 << i) == 0).collect();
            best = best.min(sse(&a) + sse(&b));
        }
        assert!((got - best).abs() < 1e-9, "got {got}, best {best}");
    }
}
