//! KMeans++ seeding followed by Lloyd iterations to assignment stability.

use rand::distr::weighted::WeightedIndex;
use rand::prelude::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Returns `(centers, degenerate)` where `degenerate` flags fewer than `k`
/// distinct input points (duplicate centers are then unavoidable; callers
/// proceed with a warning).
pub fn kmeans_pp(points: &[Vec<f64>], k: usize, seed: u64) -> (Vec<Vec<f64>>, bool) {
    assert!(k >= 1, "k must be positive");
    assert!(!points.is_empty(), "kmeans needs at least one point");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut distinct: Vec<&Vec<f64>> = Vec::new();
    for p in points {
        if !distinct.iter().any(|q| *q == p) {
            distinct.push(p);
            if distinct.len() >= k {
                break;
            }
        }
    }
    let degenerate = distinct.len() < k;

    // Seeding: first center uniform, then distance-squared weighted.
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(points[rng.random_range(0..points.len())].clone());
    let mut min_d2: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = min_d2.iter().sum();
        let next = if total <= 0.0 {
            // All remaining mass on existing centers: duplicates allowed.
            points[rng.random_range(0..points.len())].clone()
        } else {
            let dist = WeightedIndex::new(&min_d2).expect("nonnegative weights");
            points[dist.sample(&mut rng)].clone()
        };
        for (d, p) in min_d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, &next));
        }
        centers.push(next);
    }

    // Lloyd until assignments stabilize.
    let mut assignment = vec![usize::MAX; points.len()];
    for _ in 0..100 {
        let mut changed = false;
        for (a, p) in assignment.iter_mut().zip(points) {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let d = dist2(p, center);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let dim = centers[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assignment.iter().zip(points) {
            counts[a] += 1;
            for (s, &v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for ((center, sum), &count) in centers.iter_mut().zip(&sums).zip(&counts) {
            if count > 0 {
                for (c, &s) in center.iter_mut().zip(sum) {
                    *c = s / count as f64;
                }
            }
            // Empty clusters keep their previous center.
        }
    }
    (centers, degenerate)
}

/// Within-cluster sum of squares for a clustering.
pub fn wcss(points: &[Vec<f64>], centers: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .map(|p| {
            centers
                .iter()
                .map(|c| dist2(p, c))
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_clusters_are_recovered() {
        let mut points = Vec::new();
        for _ in 0..50 {
            points.push(vec![0.0, 0.0]);
            points.push(vec![10.0, 10.0]);
        }
        let (centers, degenerate) = kmeans_pp(&points, 2, 3);
        assert!(!degenerate);
        let mut got: Vec<(i64, i64)> = centers
            .iter()
            .map(|c| (c[0].round() as i64, c[1].round() as i64))
            .collect();
        got.sort_unstable();
        assert_eq!(got, vec![(0, 0), (10, 10)]);
    }

    #[test]
    fn k_one_returns_the_mean() {
        let points = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 0.0]];
        let (centers, _) = kmeans_pp(&points, 1, 0);
        assert!((centers[0][0] - 3.0).abs() < 1e-12);
        assert!((centers[0][1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn fewer_distinct_points_than_k_is_flagged() {
        let points = vec![vec![1.0, 1.0]; 10];
        let (centers, degenerate) = kmeans_pp(&points, 3, 0);
        assert!(degenerate);
        assert_eq!(centers.len(), 3);
    }

    #[test]
    fn wcss_close_to_random_restart_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let points: Vec<Vec<f64>> = (0..30)
            .map(|_| vec![rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)])
            .collect();
        let (centers, _) = kmeans_pp(&points, 3, 7);
        let ours = wcss(&points, &centers);
        // Oracle: best of 1000 random-restart Lloyd runs.
        let mut best = f64::INFINITY;
        for restart in 0..1000 {
            let mut oracle_rng = ChaCha8Rng::seed_from_u64(restart);
            let mut centers: Vec<Vec<f64>> = (0..3)
                .map(|_| points[oracle_rng.random_range(0..points.len())].clone())
                .collect();
            for _ in 0..50 {
                let assign: Vec<usize> = points
                    .iter()
                    .map(|p| {
                        (0..3)
                            .min_by(|&a, &b| {
                                dist2(p, &centers[a])
                                    .partial_cmp(&dist2(p, &centers[b]))
                                    .unwrap()
                            })
                            .unwrap()
                    })
                    .collect();
                for c in 0..3 {
                    let members: Vec<&Vec<f64>> = points
                        .iter()
                        .zip(&assign)
                        .filter(|(_, &a)| a == c)
                        .map(|(p, _)| p)
                        .collect();
                    if members.is_empty() {
                        continue;
                    }
                    for d in 0..2 {
                        centers[c][d] =
                            members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64;
                    }
                }
            }
            best = best.min(wcss(&points, &centers));
        }
        assert!(
            ours <= best * 1.05,
            "kmeans++ wcss {ours} vs oracle best {best}"
        );
    }
}
