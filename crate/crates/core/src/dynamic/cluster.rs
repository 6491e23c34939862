//! Obstacle candidates from linked cells.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float as _;

use super::classify::CellPrediction;
use super::features::CellIndex;

/// Disjoint sets with path compression and union by size.
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            size: alloc::vec![1; n],
        }
    }

    pub fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut x = x;
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (big, small) = if self.size[ra] >= self.size[rb] { (ra, rb) } else { (rb, ra) };
        self.parent[small] = big;
        self.size[big] += self.size[small];
        true
    }

    /// Members of each set, sets ordered by smallest member.
    pub fn groups(&mut self) -> Vec<Vec<usize>> {
        let mut by_root: BTreeMap<usize, usize> = BTreeMap::new();
        let mut out: Vec<Vec<usize>> = Vec::new();
        for x in 0..self.parent.len() {
            let r = self.find(x);
            let slot = *by_root.entry(r).or_insert_with(|| {
                out.push(Vec::new());
                out.len() - 1
            });
            out[slot].push(x);
        }
        out
    }
}

/// Cells linked into one candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct CellCluster {
    /// Sorted.
    pub cells: Vec<CellIndex>,
    /// Indices into the prediction list, sorted by cell.
    pub predictions: Vec<usize>,
}

/// Links cells with objectness above `threshold`.
///
/// A cell carrying a centre offset links to the cell its offset points at;
/// a cell without one links to all its 8-neighbours. Output clusters are
/// sorted by their first cell, so the result does not depend on the order
/// of `predictions`.
pub fn cluster_cells(predictions: &[CellPrediction], threshold: f64, resolution: f64) -> Vec<CellCluster> {
    let mut nodes: BTreeMap<CellIndex, usize> = BTreeMap::new();
    for (i, p) in predictions.iter().enumerate() {
        if p.objectness > threshold {
            nodes.insert(p.cell, i);
        }
    }
    let keys: Vec<CellIndex> = nodes.keys().copied().collect();
    let id: BTreeMap<CellIndex, usize> = keys.iter().enumerate().map(|(k, c)| (*c, k)).collect();
    let mut uf = UnionFind::new(keys.len());
    for (k, c) in keys.iter().enumerate() {
        match predictions[nodes[c]].center_offset {
            Some([dx, dy]) => {
                let target = c.offset((dy / resolution).round() as i32, (dx / resolution).round() as i32);
                if let Some(&t) = id.get(&target) {
                    uf.union(k, t);
                }
            }
            None => {
                for dr in -1..=1 {
                    for dc in -1..=1 {
                        if let Some(&t) = id.get(&c.offset(dr, dc)) {
                            uf.union(k, t);
                        }
                    }
                }
            }
        }
    }
    uf.groups()
        .into_iter()
        .map(|g| CellCluster {
            cells: g.iter().map(|&k| keys[k]).collect(),
            predictions: g.iter().map(|&k| nodes[&keys[k]]).collect(),
        })
        .collect()
}
