//! Lloyd's k-means with seeded D²-weighted (farthest-point style) seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct KMeansOptions {
    pub restarts: usize,
    pub max_iterations: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iterations: 300,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squared distances.
    pub objective: f64,
    /// Objective after each Lloyd iteration of the winning restart.
    pub history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn seed_centroids(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > u {
                    pick = Some(i);
                    break;
                }
            }
            // rounding may leave u beyond the accumulated total
            pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).expect("total > 0"))
        } else {
            // all remaining points coincide with a centre
            chosen.iter().position(|&c| !c).unwrap_or(0)
        };
        chosen[pick] = true;
        centroids.push(points[pick].clone());
        for (i, p) in points.iter().enumerate() {
            let d = sq_dist(p, &points[pick]);
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centroids
}

fn objective(points: &[Vec<f64>], labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(labels)
        .map(|(p, &l)| sq_dist(p, &centroids[l]))
        .sum()
}

/// Move points into empty clusters: the point farthest from its centroid in
/// the largest cluster founds each empty one.
fn repair_empty(points: &[Vec<f64>], labels: &mut [usize], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    loop {
        let mut sizes = vec![0usize; k];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let largest = (0..k).max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a))).unwrap();
        if sizes[largest] < 2 {
            return;
        }
        let mut far = (usize::MAX, -1.0);
        for (i, p) in points.iter().enumerate() {
            if labels[i] == largest {
                let d = sq_dist(p, &centroids[largest]);
                if d > far.1 {
                    far = (i, d);
                }
            }
        }
        labels[far.0] = empty;
        centroids[empty] = points[far.0].clone();
    }
}

fn update_centroids(points: &[Vec<f64>], labels: &[usize], centroids: &mut [Vec<f64>]) {
    let dim = points[0].len();
    let k = centroids.len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, x) in sums[l].iter_mut().zip(p) {
            *s += x;
        }
    }
    for j in 0..k {
        if counts[j] > 0 {
            for (c, s) in centroids[j].iter_mut().zip(&sums[j]) {
                *c = s / counts[j] as f64;
            }
        }
    }
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, max_iterations: usize) -> KMeansResult {
    let mut labels: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    repair_empty(points, &mut labels, &mut centroids);
    let mut history = vec![objective(points, &labels, &centroids)];
    for _ in 0..max_iterations {
        update_centroids(points, &labels, &mut centroids);
        history.push(objective(points, &labels, &centroids));
        let mut new_labels: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        // keep the current label on exact ties so the loop terminates
        for (i, p) in points.iter().enumerate() {
            if sq_dist(p, &centroids[labels[i]]) <= sq_dist(p, &centroids[new_labels[i]]) {
                new_labels[i] = labels[i];
            }
        }
        repair_empty(points, &mut new_labels, &mut centroids);
        let changed = new_labels != labels;
        labels = new_labels;
        history.push(objective(points, &labels, &centroids));
        if !changed {
            break;
        }
    }
    let objective = *history.last().expect("history is nonempty");
    KMeansResult {
        labels,
        centroids,
        objective,
        history,
    }
}

/// Best of `opts.restarts` seeded Lloyd runs. Each restart draws from its
/// own ChaCha stream of `seed`, so results depend only on the inputs.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, opts: &KMeansOptions) -> KMeansResult {
    assert!(k >= 1 && k <= points.len(), "need 1 <= k <= number of points");
    let mut best: Option<KMeansResult> = None;
    for r in 0..opts.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        let init = seed_centroids(points, k, &mut rng);
        let result = lloyd(points, init, opts.max_iterations);
        if best.as_ref().is_none_or(|b| result.objective < b.objective) {
            best = Some(result);
        }
    }
    best.expect("at least one restart")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singleton_clusters_when_k_equals_n() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let r = kmeans(&pts, 6, 7, &KMeansOptions::default());
        let mut labels = r.labels.clone();
        labels.sort();
        labels.dedup();
        assert_eq!(labels.len(), 6);
        assert_eq!(r.objective, 0.0);
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let pts = vec![vec![0.0], vec![0.0], vec![0.0], vec![1.0]];
        let r = kmeans(&pts, 3, 1, &KMeansOptions::default());
        let mut sizes = [0; 3];
        for &l in &r.labels {
            sizes[l] += 1;
        }
        assert!(sizes.iter().all(|&s| s > 0), "{sizes:?}");
    }

    #[test]
    fn objective_history_nonincreasing() {
        let pts: Vec<Vec<f64>> = (0..200)
            .map(|i| {
                let x = ((i * 7919) % 211) as f64 / 17.0;
                let y = ((i * 104_729) % 199) as f64 / 13.0;
                vec![x, y]
            })
            .collect();
        for seed in 0..5 {
            let r = kmeans(&pts, 8, seed, &KMeansOptions::default());
            for w in r.history.windows(2) {
                assert!(w[1] <= w[0] + 1e-9 * w[0].abs(), "{:?}", r.history);
            }
        }
    }
}
