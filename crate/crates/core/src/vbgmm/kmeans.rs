//! Hard-assignment initializers for the variational fit.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

const MAX_LLOYD_ITER: usize = 300;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding followed by Lloyd iterations. Returns one label per
/// point. Clusters that end up empty simply receive no points.
pub(crate) fn kmeans_labels(data: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = data.len();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(data[rng.random_range(0..n)].clone());
    let mut closest: Vec<f64> = data.iter().map(|x| sq_dist(x, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = closest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in closest.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            // fewer distinct points than clusters
            rng.random_range(0..n)
        };
        let c = data[next].clone();
        for (d, x) in closest.iter_mut().zip(data) {
            *d = d.min(sq_dist(x, &c));
        }
        centers.push(c);
    }

    let mut labels = vec![usize::MAX; n];
    for _ in 0..MAX_LLOYD_ITER {
        let mut changed = false;
        for (label, x) in labels.iter_mut().zip(data) {
            let best = nearest(x, &centers);
            if *label != best {
                *label = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let dim = data[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&l, x) in labels.iter().zip(data) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(x) {
                *s += v;
            }
        }
        for ((center, sum), &count) in centers.iter_mut().zip(sums).zip(&counts) {
            if count > 0 {
                *center = sum.into_iter().map(|s| s / count as f64).collect();
            }
        }
    }
    labels
}

fn nearest(x: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centers.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

/// Uniform random responsibilities, rows normalized.
pub(crate) fn random_responsibilities(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let row: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
            let s: f64 = row.iter().sum();
            row.into_iter().map(|v| v / s).collect()
        })
        .collect()
}
