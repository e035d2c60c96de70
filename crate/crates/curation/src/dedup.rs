//! Embedding-space deduplication: global pairwise and density-adaptive
//! per-cluster thresholds.

use rand::seq::index::sample;
use vidgen_core::rng::named;

use crate::error::{CurationError, Result};

pub const KMEANS_MAX_ITERS: usize = 100;
pub const KMEANS_TOL: f64 = 1e-6;

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub iterations: usize,
}

fn check_features(features: &[Vec<f64>]) -> Result<usize> {
    let d = features.first().map_or(0, Vec::len);
    if features.iter().any(|f| f.len() != d) {
        return Err(CurationError::Shape("feature vectors differ in length".into()));
    }
    Ok(d)
}

/// Lloyd's algorithm from `k` distinct seeded starting points. Ties go to
/// the lowest centroid index; empty clusters keep their centroid.
pub fn kmeans(features: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeans> {
    check_features(features)?;
    if k == 0 || k > features.len() {
        return Err(CurationError::Config(format!("k-means needs 1 <= k <= {}, got {k}", features.len())));
    }
    let mut rng = named(seed, "kmeans-init");
    let mut init = sample(&mut rng, features.len(), k).into_vec();
    init.sort_unstable();
    let mut centroids: Vec<Vec<f64>> = init.iter().map(|&i| features[i].clone()).collect();
    let mut assignment = vec![0; features.len()];
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITERS {
        iterations += 1;
        for (a, f) in assignment.iter_mut().zip(features) {
            let mut best = (f64::INFINITY, 0);
            for (c, cen) in centroids.iter().enumerate() {
                let d = sq_dist(f, cen);
                if d < best.0 {
                    best = (d, c);
                }
            }
            *a = best.1;
        }
        let mut shift: f64 = 0.0;
        for (c, cen) in centroids.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = features.iter().zip(&assignment).filter(|(_, &a)| a == c).map(|(f, _)| f).collect();
            if members.is_empty() {
                continue;
            }
            let mean: Vec<f64> = (0..cen.len())
                .map(|j| members.iter().map(|m| m[j]).sum::<f64>() / members.len() as f64)
                .collect();
            shift = shift.max(sq_dist(&mean, cen).sqrt());
            *cen = mean;
        }
        if shift < KMEANS_TOL {
            break;
        }
    }
    Ok(KMeans { centroids, assignment, iterations })
}

/// Greedy in input order: an item is dropped if its cosine similarity to an
/// already kept item reaches `threshold`. Returns kept indices.
pub fn pairwise_dedup(features: &[Vec<f64>], threshold: f64) -> Result<Vec<usize>> {
    check_features(features)?;
    let mut kept: Vec<usize> = Vec::new();
    for (i, f) in features.iter().enumerate() {
        if kept.iter().all(|&j| cosine(f, &features[j]) < threshold) {
            kept.push(i);
        }
    }
    Ok(kept)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DedupOutcome {
    pub kept: Vec<usize>,
    pub assignment: Vec<usize>,
    /// Per-cluster similarity threshold.
    pub thresholds: Vec<f64>,
    pub density: Vec<f64>,
}

/// Items per unit of mean cosine distance to the centroid.
pub fn cluster_density(features: &[Vec<f64>], km: &KMeans) -> Vec<f64> {
    km.centroids
        .iter()
        .enumerate()
        .map(|(c, cen)| {
            let d: Vec<f64> =
                features.iter().zip(&km.assignment).filter(|(_, &a)| a == c).map(|(f, _)| 1.0 - cosine(f, cen)).collect();
            if d.is_empty() {
                0.0
            } else {
                d.len() as f64 / (1e-3 + d.iter().sum::<f64>() / d.len() as f64)
            }
        })
        .collect()
}

/// `base - gamma · r`, where `r ∈ [0, 1]` is the cluster's density rank
/// (equal densities share the lower rank). Denser clusters dedup harder.
pub fn cluster_thresholds(density: &[f64], base: f64, gamma: f64) -> Vec<f64> {
    let k = density.len();
    density
        .iter()
        .map(|d| {
            let rank = density.iter().filter(|o| *o < d).count();
            let r = if k > 1 { rank as f64 / (k - 1) as f64 } else { 0.0 };
            base - gamma * r
        })
        .collect()
}

/// Clusters the features, then dedups greedily within each cluster against
/// its own threshold.
pub fn kmeans_dedup(features: &[Vec<f64>], k: usize, base: f64, gamma: f64, seed: u64) -> Result<DedupOutcome> {
    let km = kmeans(features, k, seed)?;
    let density = cluster_density(features, &km);
    let thresholds = cluster_thresholds(&density, base, gamma);
    let mut kept_by_cluster: Vec<Vec<usize>> = vec![Vec::new(); km.centroids.len()];
    let mut kept = Vec::new();
    for (i, f) in features.iter().enumerate() {
        let c = km.assignment[i];
        if kept_by_cluster[c].iter().all(|&j| cosine(f, &features[j]) < thresholds[c]) {
            kept_by_cluster[c].push(i);
            kept.push(i);
        }
    }
    Ok(DedupOutcome { kept, assignment: km.assignment, thresholds, density })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use vidgen_core::rng::seeded;

    fn jitter(base: &[f64], n: usize, eps: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = seeded(seed);
        (0..n).map(|_| base.iter().map(|b| b + eps * rng.random_range(-1.0..1.0)).collect()).collect()
    }

    proptest::proptest! {
        #[test]
        fn kept_sets_are_ordered_subsets(seed in 0u64..500, n in 1usize..30, k in 1usize..5) {
            let mut rng = seeded(seed);
            let f: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let pw = pairwise_dedup(&f, 0.9).unwrap();
            proptest::prop_assert!(pw.windows(2).all(|w| w[0] < w[1]) && pw.iter().all(|&i| i < n) && pw[0] == 0);
            if k <= n {
                let km = kmeans_dedup(&f, k, 0.9, 0.1, seed).unwrap();
                proptest::prop_assert!(km.kept.windows(2).all(|w| w[0] < w[1]) && km.kept.iter().all(|&i| i < n));
            }
        }
    }

    #[test]
    fn orthogonal_duplicate_groups_keep_one_each() {
        let mut f = vec![vec![1.0, 0.0, 0.0]; 5];
        f.extend(vec![vec![0.0, 1.0, 0.0]; 7]);
        let out = kmeans_dedup(&f, 2, 0.95, 0.1, 0).unwrap();
        assert_eq!(out.kept, vec![0, 5]);
        assert_eq!(pairwise_dedup(&f, 0.95).unwrap(), vec![0, 5]);
    }

    #[test]
    fn identical_vectors_keep_one() {
        let f = vec![vec![0.6, 0.8]; 9];
        for k in 1..=4 {
            assert_eq!(kmeans_dedup(&f, k, 0.95, 0.1, k as u64).unwrap().kept, vec![0]);
        }
    }

    #[test]
    fn unreachable_threshold_keeps_everything() {
        let f = jitter(&[1.0, 0.0, 0.0], 30, 0.1, 7);
        assert_eq!(kmeans_dedup(&f, 3, 2.0, 0.1, 0).unwrap().kept, (0..30).collect::<Vec<_>>());
    }

    #[test]
    fn pairwise_greedy_rules() {
        let distinct = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]];
        assert_eq!(pairwise_dedup(&distinct, 1.0).unwrap(), vec![0, 1, 2]);
        assert_eq!(pairwise_dedup(&[vec![1.0, 2.0], vec![1.0, 2.0]], 0.9).unwrap(), vec![0]);
        // a·b = b·c = cos 40° ≈ 0.766, a·c = cos 80° ≈ 0.174
        let ang = |d: f64| vec![d.to_radians().cos(), d.to_radians().sin()];
        assert_eq!(pairwise_dedup(&[ang(0.0), ang(40.0), ang(80.0)], 0.7).unwrap(), vec![0, 2]);
    }

    #[test]
    fn denser_cluster_gets_lower_threshold() {
        let mut f = jitter(&[1.0, 0.0, 0.0, 0.0], 100, 0.01, 1);
        f.extend(jitter(&[0.0, 0.0, 1.0, 0.0], 10, 0.3, 2));
        let out = kmeans_dedup(&f, 2, 0.95, 0.1, 3).unwrap();
        let dense = out.assignment[0];
        let sparse = out.assignment[100];
        assert_ne!(dense, sparse);
        assert!(out.density[dense] > out.density[sparse]);
        assert!((out.thresholds[dense] - 0.85).abs() < 1e-12);
        assert!((out.thresholds[sparse] - 0.95).abs() < 1e-12);
    }

    #[test]
    fn equal_densities_share_thresholds() {
        assert_eq!(cluster_thresholds(&[2.0, 2.0, 1.0], 0.9, 0.1), vec![0.9 - 0.05, 0.9 - 0.05, 0.9]);
        assert_eq!(cluster_thresholds(&[4.0], 0.9, 0.1), vec![0.9]);
    }

    #[test]
    fn kmeans_is_seeded_and_bounded() {
        let f: Vec<Vec<f64>> = (0..40).map(|i| vec![(i % 4) as f64, (i / 10) as f64 * 0.1]).collect();
        let a = kmeans(&f, 4, 9).unwrap();
        assert_eq!(a, kmeans(&f, 4, 9).unwrap());
        assert!(a.iterations <= KMEANS_MAX_ITERS);
        assert!(kmeans(&f[..2], 5, 0).is_err());
        assert!(kmeans(&f, 0, 0).is_err());
        assert!(kmeans(&[vec![1.0], vec![1.0, 2.0]], 1, 0).is_err());
    }

    #[test]
    fn adaptive_removes_more_from_dense_clusters_than_global() {
        let mut f = jitter(&[1.0, 0.0, 0.0, 0.0], 60, 0.25, 4);
        f.extend(jitter(&[0.0, 0.0, 1.0, 0.0], 60, 0.6, 5));
        let global = pairwise_dedup(&f, 0.95).unwrap();
        let adaptive = kmeans_dedup(&f, 2, 0.95, 0.1, 6).unwrap();
        let dense = adaptive.assignment[0];
        let in_dense = |v: &[usize]| v.iter().filter(|&&i| adaptive.assignment[i] == dense).count();
        assert!(in_dense(&adaptive.kept) <= in_dense(&global));
    }
}
