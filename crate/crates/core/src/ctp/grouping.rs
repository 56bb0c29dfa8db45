//! Indivisible variable groups and admissibility of tested sets.

use crate::inference::NullHypothesis;
use crate::linmodel::CorrelationMatrix;
use serde::{Deserialize, Serialize};

/// Partition of the variables into blocks that a tested set may not split.
///
/// Blocks are the connected components of the graph with an edge between
/// `j` and `k` whenever `|rho_jk| > rho`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupingPolicy {
    pub rho: f64,
    /// Each block sorted ascending; blocks ordered by their smallest member.
    pub blocks: Vec<Vec<usize>>,
    block_of: Vec<usize>,
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

impl GroupingPolicy {
    /// Every variable in its own block.
    pub fn singletons(nu: usize) -> Self {
        Self::from_blocks(1.0, (0..nu).map(|j| vec![j]).collect())
    }

    fn from_blocks(rho: f64, mut blocks: Vec<Vec<usize>>) -> Self {
        for b in &mut blocks {
            b.sort_unstable();
        }
        blocks.sort_by_key(|b| b[0]);
        let nu = blocks.iter().map(|b| b.len()).sum();
        let mut block_of = vec![0; nu];
        for (i, b) in blocks.iter().enumerate() {
            for &j in b {
                block_of[j] = i;
            }
        }
        Self { rho, blocks, block_of }
    }

    pub fn nu(&self) -> usize {
        self.block_of.len()
    }

    pub fn block_of(&self, j: usize) -> usize {
        self.block_of[j]
    }

    /// Bit mask of block `b`.
    pub fn block_mask(&self, b: usize) -> u64 {
        self.blocks[b].iter().fold(0, |m, &j| m | 1u64 << j)
    }

    /// First block split by `tested`, if any.
    pub fn violation(&self, tested: &[usize]) -> Option<usize> {
        let mask = tested.iter().fold(0u64, |m, &j| m | 1u64 << j);
        (0..self.blocks.len()).find(|&b| {
            let bm = self.block_mask(b);
            let inside = bm & mask;
            inside != 0 && inside != bm
        })
    }
}

/// Connected components of the thresholded correlation graph.
pub fn build_grouping(corr: &CorrelationMatrix, rho: f64) -> GroupingPolicy {
    let nu = corr.nu();
    let mut parent: Vec<usize> = (0..nu).collect();
    for i in 0..nu {
        for j in 0..i {
            if corr.get(i, j).abs() > rho {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut by_root: Vec<Vec<usize>> = vec![Vec::new(); nu];
    for j in 0..nu {
        let r = find(&mut parent, j);
        by_root[r].push(j);
    }
    GroupingPolicy::from_blocks(rho, by_root.into_iter().filter(|b| !b.is_empty()).collect())
}

/// Whether `null` keeps every block entirely inside or outside the tested set.
pub fn is_admissible(null: &NullHypothesis, policy: &GroupingPolicy) -> bool {
    policy.violation(null.tested()).is_none()
}

/// Largest `|rho_jk|` between a tested `j` and an untested `k` (0 when none).
pub fn rho_max(tested: &[usize], corr: &CorrelationMatrix) -> f64 {
    let nu = corr.nu();
    let mut inside = vec![false; nu];
    for &j in tested {
        inside[j] = true;
    }
    let mut best: f64 = 0.0;
    for j in (0..nu).filter(|&j| inside[j]) {
        for k in (0..nu).filter(|&k| !inside[k]) {
            best = best.max(corr.get(j, k).abs());
        }
    }
    best
}
