use serde::{Deserialize, Serialize};

use super::kmeans::kmeans;
use super::PartitionTree;
use crate::cloud::PointCloud;
use crate::data::squared_distance;
use crate::error::{Error, Result};
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TreeConfig {
    pub branching: usize,
    /// Folders at or below this size are not split further; `None` uses
    /// `max(10, n / 256)`.
    pub min_folder: Option<usize>,
    pub restarts: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            branching: 2,
            min_folder: None,
            restarts: 25,
        }
    }
}

impl TreeConfig {
    pub fn min_folder_for(&self, n: usize) -> usize {
        self.min_folder.unwrap_or_else(|| (n / 256).max(10))
    }

    pub fn validate(&self) -> Result<()> {
        if self.branching < 2 {
            return Err(Error::config("tree.branching", "must be at least 2"));
        }
        if self.min_folder == Some(0) {
            return Err(Error::config("tree.min_folder", "must be at least 1"));
        }
        if self.restarts == 0 {
            return Err(Error::config("tree.restarts", "must be at least 1"));
        }
        Ok(())
    }
}

fn singletons(n: usize) -> Vec<Vec<usize>> {
    (0..n).map(|i| vec![i]).collect()
}

/// Recursive k-means on the embedded points.
pub fn build_topdown(points: &PointCloud, cfg: &TreeConfig, seed: u64) -> Result<PartitionTree> {
    cfg.validate()?;
    let n = points.n_points();
    if n == 0 {
        return Err(Error::InvalidInput("cannot build a tree over zero points".into()));
    }
    let min_folder = cfg.min_folder_for(n);
    let mut levels: Vec<Vec<Vec<usize>>> = vec![vec![(0..n).collect()]];
    loop {
        let depth = levels.len() as u64;
        let current = levels.last().unwrap();
        let mut next = Vec::with_capacity(current.len() * cfg.branching);
        let mut split_any = false;
        for (fi, folder) in current.iter().enumerate() {
            if folder.len() > min_folder {
                let mut rng = substream(seed, "kmeans", (depth << 32) | fi as u64);
                if let Some(km) = kmeans(points, folder, cfg.branching, cfg.restarts, &mut rng) {
                    let mut children = vec![Vec::new(); cfg.branching];
                    for (&p, &l) in folder.iter().zip(&km.labels) {
                        children[l].push(p);
                    }
                    next.extend(children);
                    split_any = true;
                    continue;
                }
            }
            next.push(folder.clone());
        }
        if !split_any {
            break;
        }
        levels.push(next);
    }
    if levels.len() == 1 || levels.last().unwrap().iter().any(|f| f.len() > 1) {
        levels.push(singletons(n));
    }
    PartitionTree::from_levels(n, levels)
}

fn centroid(points: &PointCloud, members: &[usize]) -> Vec<f64> {
    let mut c = vec![0.0; points.dim()];
    for &i in members {
        for (s, v) in c.iter_mut().zip(points.row(i)) {
            *s += v;
        }
    }
    c.iter_mut().for_each(|s| *s /= members.len() as f64);
    c
}

/// Greedy `eps`-cover followed by successive merges of the two folders with
/// the closest centroids.
pub fn build_bottomup(points: &PointCloud, eps: f64) -> Result<PartitionTree> {
    if !(eps > 0.0) {
        return Err(Error::InvalidInput(format!("cover radius must be positive, got {eps}")));
    }
    let n = points.n_points();
    if n == 0 {
        return Err(Error::InvalidInput("cannot build a tree over zero points".into()));
    }
    let e2 = eps * eps;
    let mut assigned = vec![false; n];
    let mut cover: Vec<Vec<usize>> = Vec::new();
    for c in 0..n {
        if assigned[c] {
            continue;
        }
        let members: Vec<usize> = (c..n)
            .filter(|&j| !assigned[j] && squared_distance(points.row(c), points.row(j)) < e2)
            .collect();
        members.iter().for_each(|&j| assigned[j] = true);
        cover.push(members);
    }

    let mut coarsening: Vec<Vec<Vec<usize>>> = Vec::new();
    if cover.iter().any(|f| f.len() > 1) {
        coarsening.push(singletons(n));
    }
    coarsening.push(cover.clone());

    let mut slots: Vec<Option<(Vec<usize>, Vec<f64>)>> = cover
        .into_iter()
        .map(|f| {
            let c = centroid(points, &f);
            Some((f, c))
        })
        .collect();
    let mut active = slots.len();
    while active > 1 {
        let mut best = (f64::INFINITY, 0, 0);
        for a in 0..slots.len() {
            let Some((_, ca)) = &slots[a] else { continue };
            for b in a + 1..slots.len() {
                let Some((_, cb)) = &slots[b] else { continue };
                let d = squared_distance(ca, cb);
                if d < best.0 {
                    best = (d, a, b);
                }
            }
        }
        let (_, a, b) = best;
        let (pb, _) = slots[b].take().unwrap();
        let (pa, _) = slots[a].take().unwrap();
        let mut merged = pa;
        merged.extend(pb);
        let c = centroid(points, &merged);
        slots[a] = Some((merged, c));
        active -= 1;
        coarsening.push(slots.iter().flatten().map(|(f, _)| f.clone()).collect());
    }
    coarsening.reverse();
    PartitionTree::from_levels(n, coarsening)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn line(xs: &[f64]) -> PointCloud {
        PointCloud::new(xs.to_vec(), xs.len(), 1)
    }

    #[test]
    fn single_point_tree() {
        let t = build_topdown(&line(&[0.5]), &TreeConfig::default(), 1).unwrap();
        assert_eq!(t.depth(), 2);
        assert_eq!(t.level(1)[0].points, vec![0]);
        assert_eq!(t.level(2)[0].points, vec![0]);
    }

    #[test]
    fn collinear_cover() {
        let t = build_bottomup(&line(&[0.0, 1.0, 10.0]), 2.0).unwrap();
        assert_eq!(t.depth(), 3);
        let folders: Vec<Vec<usize>> = t.level(2).iter().map(|f| f.points.clone()).collect();
        assert_eq!(folders, vec![vec![0, 1], vec![2]]);
    }

    #[test]
    fn huge_radius_two_levels() {
        let t = build_bottomup(&line(&[0.0, 1.0, 10.0]), 100.0).unwrap();
        assert_eq!(t.depth(), 2);
        assert_eq!(t.level(2).len(), 3);
    }

    #[test]
    fn merge_order_matches_brute_force() {
        let xs = [0.0, 0.3, 1.7, 2.1, 5.0];
        let t = build_bottomup(&line(&xs), 1e-3).unwrap();
        // brute force: repeatedly merge the pair with closest means
        let mut groups: Vec<Vec<usize>> = (0..5).map(|i| vec![i]).collect();
        let mut expected: Vec<BTreeSet<BTreeSet<usize>>> = Vec::new();
        let as_set = |g: &Vec<Vec<usize>>| -> BTreeSet<BTreeSet<usize>> {
            g.iter().map(|f| f.iter().copied().collect()).collect()
        };
        expected.push(as_set(&groups));
        while groups.len() > 1 {
            let mean = |f: &Vec<usize>| f.iter().map(|&i| xs[i]).sum::<f64>() / f.len() as f64;
            let mut best = (f64::INFINITY, 0, 0);
            for a in 0..groups.len() {
                for b in a + 1..groups.len() {
                    let d = (mean(&groups[a]) - mean(&groups[b])).abs();
                    if d < best.0 {
                        best = (d, a, b);
                    }
                }
            }
            let g = groups.remove(best.2);
            groups[best.1].extend(g);
            expected.push(as_set(&groups));
        }
        expected.reverse();
        assert_eq!(t.depth(), expected.len());
        for (l, want) in expected.iter().enumerate() {
            let got: BTreeSet<BTreeSet<usize>> = t
                .level(l + 1)
                .iter()
                .map(|f| f.points.iter().copied().collect())
                .collect();
            assert_eq!(&got, want, "level {}", l + 1);
        }
    }

    #[test]
    fn topdown_respects_min_folder() {
        let xs: Vec<f64> = (0..200).map(|i| (i as f64 * 0.37).sin()).collect();
        let cfg = TreeConfig {
            min_folder: Some(12),
            ..TreeConfig::default()
        };
        let t = build_topdown(&line(&xs), &cfg, 4).unwrap();
        let penultimate = t.level(t.depth() - 1);
        assert!(penultimate.iter().all(|f| f.len() <= 12));
        assert!(t.level(t.depth()).iter().all(|f| f.len() == 1));
    }

    #[test]
    fn topdown_is_deterministic() {
        let xs: Vec<f64> = (0..300).map(|i| ((i * 7919) % 1000) as f64 / 1000.0).collect();
        let a = build_topdown(&line(&xs), &TreeConfig::default(), 9).unwrap();
        let b = build_topdown(&line(&xs), &TreeConfig::default(), 9).unwrap();
        assert_eq!(a, b);
    }
}
