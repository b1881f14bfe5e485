//! Seeded Lloyd k-means with k-means++ initialization.

use rand::Rng;

use crate::cloud::PointCloud;
use crate::data::squared_distance;
use crate::rng::StreamRng;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// Cluster label per input point, every label in `0..k` nonempty.
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
}

fn plus_plus(points: &PointCloud, idx: &[usize], k: usize, rng: &mut StreamRng) -> Vec<Vec<f64>> {
    let mut centers = vec![points.row(idx[rng.random_range(0..idx.len())]).to_vec()];
    let mut dist: Vec<f64> = idx
        .iter()
        .map(|&i| squared_distance(points.row(i), &centers[0]))
        .collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut chosen = idx.len() - 1;
            for (p, d) in dist.iter().enumerate() {
                if r < *d {
                    chosen = p;
                    break;
                }
                r -= d;
            }
            chosen
        } else {
            rng.random_range(0..idx.len())
        };
        let c = points.row(idx[pick]).to_vec();
        for (p, &i) in idx.iter().enumerate() {
            dist[p] = dist[p].min(squared_distance(points.row(i), &c));
        }
        centers.push(c);
    }
    centers
}

fn nearest(x: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = squared_distance(x, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn lloyd(points: &PointCloud, idx: &[usize], mut centers: Vec<Vec<f64>>) -> KMeansResult {
    let k = centers.len();
    let dim = points.dim();
    let mut labels = vec![usize::MAX; idx.len()];
    let mut sq = vec![0.0; idx.len()];
    for _ in 0..100 {
        let mut changed = false;
        for (p, &i) in idx.iter().enumerate() {
            let (c, d) = nearest(points.row(i), &centers);
            if labels[p] != c {
                labels[p] = c;
                changed = true;
            }
            sq[p] = d;
        }
        // empty clusters take the point farthest from its current center
        loop {
            let mut counts = vec![0usize; k];
            labels.iter().for_each(|&l| counts[l] += 1);
            let Some(empty) = counts.iter().position(|&c| c == 0) else { break };
            let far = (0..idx.len())
                .filter(|&p| counts[labels[p]] > 1)
                .max_by(|&a, &b| sq[a].total_cmp(&sq[b]).then(b.cmp(&a)))
                .expect("more points than clusters");
            labels[far] = empty;
            sq[far] = 0.0;
            centers[empty] = points.row(idx[far]).to_vec();
            changed = true;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &i) in idx.iter().enumerate() {
            counts[labels[p]] += 1;
            for (s, v) in sums[labels[p]].iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            for s in sums[c].iter_mut() {
                *s /= counts[c] as f64;
            }
        }
        centers = sums;
        if !changed {
            break;
        }
    }
    let inertia = idx
        .iter()
        .zip(&labels)
        .map(|(&i, &l)| squared_distance(points.row(i), &centers[l]))
        .sum();
    KMeansResult {
        labels,
        centroids: centers,
        inertia,
    }
}

/// Best of `restarts` k-means runs on the points `idx` of `points`.
///
/// Returns `None` when the points cannot be split into `k` nonempty groups
/// with distinct positions (fewer than `k` points or fewer than `k` distinct
/// locations).
pub fn kmeans(
    points: &PointCloud,
    idx: &[usize],
    k: usize,
    restarts: usize,
    rng: &mut StreamRng,
) -> Option<KMeansResult> {
    if k < 2 || idx.len() < k {
        return None;
    }
    let first = points.row(idx[0]);
    let mut distinct = vec![first];
    for &i in idx {
        let r = points.row(i);
        if distinct.iter().all(|d| *d != r) {
            distinct.push(r);
            if distinct.len() >= k {
                break;
            }
        }
    }
    if distinct.len() < k {
        return None;
    }
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts.max(1) {
        let init = plus_plus(points, idx, k, rng);
        let run = lloyd(points, idx, init);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn separates_two_groups() {
        let coords = vec![0.0, 0.1, 0.2, 10.0, 10.1, 10.2];
        let pc = PointCloud::new(coords, 6, 1);
        let idx: Vec<usize> = (0..6).collect();
        let r = kmeans(&pc, &idx, 2, 5, &mut substream(1, "kmeans", 0)).unwrap();
        assert_eq!(r.labels[0], r.labels[2]);
        assert_ne!(r.labels[0], r.labels[3]);
        assert!((r.inertia - 0.04).abs() < 1e-12);
    }

    #[test]
    fn identical_points_are_unsplittable() {
        let pc = PointCloud::new(vec![1.0; 8], 4, 2);
        assert!(kmeans(&pc, &[0, 1, 2, 3], 2, 3, &mut substream(1, "kmeans", 0)).is_none());
    }

    #[test]
    fn every_cluster_nonempty() {
        let pc = PointCloud::new(vec![0.0, 0.0, 0.0, 1.0, 2.0], 5, 1);
        let r = kmeans(&pc, &[0, 1, 2, 3, 4], 3, 4, &mut substream(3, "kmeans", 0)).unwrap();
        let mut seen = [false; 3];
        r.labels.iter().for_each(|&l| seen[l] = true);
        assert!(seen.iter().all(|s| *s));
    }
}
