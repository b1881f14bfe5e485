//! Hierarchical partition trees over point indices.
//!
//! Levels are numbered from 1 (the root folder holding every point) to `L`
//! (all singletons). Every level is a partition of `0..n` and refines the
//! level above it.

mod build;
mod kmeans;

pub use build::{build_bottomup, build_topdown, TreeConfig};
pub use kmeans::{kmeans, KMeansResult};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Folder {
    /// Sorted point indices.
    pub points: Vec<usize>,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

impl Folder {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionTree {
    n: usize,
    levels: Vec<Vec<Folder>>,
    /// `membership[l][i]`: folder of point `i` at (zero-based) level `l`.
    membership: Vec<Vec<usize>>,
}

impl PartitionTree {
    /// Validates a nested sequence of partitions and links parents and
    /// children. Folders within a level are ordered by their smallest point.
    pub fn from_levels(n: usize, levels: Vec<Vec<Vec<usize>>>) -> Result<Self> {
        if n == 0 || levels.is_empty() {
            return Err(Error::InvalidInput("tree needs at least one point and one level".into()));
        }
        let mut sorted_levels: Vec<Vec<Vec<usize>>> = Vec::with_capacity(levels.len());
        let mut membership = Vec::with_capacity(levels.len());
        for (l, level) in levels.into_iter().enumerate() {
            let mut folders: Vec<Vec<usize>> = level
                .into_iter()
                .map(|mut f| {
                    f.sort_unstable();
                    f
                })
                .collect();
            if folders.iter().any(Vec::is_empty) {
                return Err(Error::InvalidInput(format!("empty folder at level {}", l + 1)));
            }
            folders.sort_by_key(|f| f[0]);
            let mut owner = vec![usize::MAX; n];
            for (fi, f) in folders.iter().enumerate() {
                for &p in f {
                    if p >= n {
                        return Err(Error::InvalidInput(format!(
                            "point {p} out of range at level {}",
                            l + 1
                        )));
                    }
                    if owner[p] != usize::MAX {
                        return Err(Error::InvalidInput(format!(
                            "point {p} appears twice at level {}",
                            l + 1
                        )));
                    }
                    owner[p] = fi;
                }
            }
            if let Some(p) = owner.iter().position(|&o| o == usize::MAX) {
                return Err(Error::InvalidInput(format!(
                    "point {p} missing at level {}",
                    l + 1
                )));
            }
            sorted_levels.push(folders);
            membership.push(owner);
        }
        if sorted_levels[0].len() != 1 {
            return Err(Error::InvalidInput("level 1 must be a single folder".into()));
        }
        if sorted_levels.last().unwrap().iter().any(|f| f.len() != 1) {
            return Err(Error::InvalidInput("last level must contain only singletons".into()));
        }

        let mut out: Vec<Vec<Folder>> = sorted_levels
            .iter()
            .map(|lv| {
                lv.iter()
                    .map(|points| Folder {
                        points: points.clone(),
                        parent: None,
                        children: Vec::new(),
                    })
                    .collect()
            })
            .collect();
        for l in 1..out.len() {
            for fi in 0..out[l].len() {
                let first = out[l][fi].points[0];
                let parent = membership[l - 1][first];
                if out[l][fi]
                    .points
                    .iter()
                    .any(|&p| membership[l - 1][p] != parent)
                {
                    return Err(Error::InvalidInput(format!(
                        "folder {fi} at level {} straddles two parents",
                        l + 1
                    )));
                }
                out[l][fi].parent = Some(parent);
                out[l - 1][parent].children.push(fi);
            }
        }
        Ok(Self {
            n,
            levels: out,
            membership,
        })
    }

    pub fn n_points(&self) -> usize {
        self.n
    }

    /// Number of levels `L`.
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Folders at level `level` (1-based).
    pub fn level(&self, level: usize) -> &[Folder] {
        &self.levels[level - 1]
    }

    pub fn folder(&self, level: usize, id: usize) -> &Folder {
        &self.levels[level - 1][id]
    }

    /// The folder at `level` (1-based) containing `point`.
    pub fn folder_of(&self, level: usize, point: usize) -> usize {
        self.membership[level - 1][point]
    }

    /// Line format `level,folder_id,parent_id,point_ids...`, root parent `-1`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (l, level) in self.levels.iter().enumerate() {
            for (fi, f) in level.iter().enumerate() {
                let parent = f.parent.map_or(-1, |p| p as i64);
                write!(s, "{},{},{}", l + 1, fi, parent).unwrap();
                for p in &f.points {
                    write!(s, ",{p}").unwrap();
                }
                s.push('\n');
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut levels: Vec<Vec<Vec<usize>>> = Vec::new();
        let mut n = 0usize;
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::Parse(format!("tree line {}: `{line}`", lineno + 1));
            let mut fields = line.split(',');
            let level: usize = fields.next().and_then(|v| v.trim().parse().ok()).ok_or_else(bad)?;
            let _id: usize = fields.next().and_then(|v| v.trim().parse().ok()).ok_or_else(bad)?;
            let _parent: i64 = fields.next().and_then(|v| v.trim().parse().ok()).ok_or_else(bad)?;
            let points = fields
                .map(|v| v.trim().parse::<usize>().map_err(|_| bad()))
                .collect::<Result<Vec<_>>>()?;
            if level == 0 {
                return Err(bad());
            }
            if levels.len() < level {
                levels.resize(level, Vec::new());
            }
            if let Some(&m) = points.iter().max() {
                n = n.max(m + 1);
            }
            levels[level - 1].push(points);
        }
        Self::from_levels(n, levels)
    }
}
