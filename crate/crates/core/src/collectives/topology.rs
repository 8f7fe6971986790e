//! Binomial trees over relative ranks.
//!
//! With `r' = (r - root) mod n`, round `k` lets every `r' < 2^k` with
//! `r' + 2^k < n` become the parent of `r' + 2^k`.

use crate::simnet::RankId;

/// Children of relative rank `rel` in an `n`-node tree, in round order.
pub fn binomial_children(rel: usize, n: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut step = 1usize;
    while step <= rel {
        step <<= 1;
    }
    while rel + step < n {
        out.push(rel + step);
        step <<= 1;
    }
    out
}

/// Parent of relative rank `rel`: the rank with its highest bit cleared.
pub fn binomial_parent(rel: usize) -> Option<usize> {
    if rel == 0 {
        None
    } else {
        Some(rel & !(1 << (usize::BITS - 1 - rel.leading_zeros())))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TopologyKind {
    BinomialTree,
}

/// Tree over a group, indexed by position in the group.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Topology {
    pub kind: TopologyKind,
    pub root: RankId,
    group: Vec<RankId>,
    root_idx: usize,
}

impl Topology {
    fn rel(&self, idx: usize) -> usize {
        (idx + self.group.len() - self.root_idx) % self.group.len()
    }

    fn abs(&self, rel: usize) -> usize {
        (rel + self.root_idx) % self.group.len()
    }

    pub fn len(&self) -> usize {
        self.group.len()
    }

    pub fn is_empty(&self) -> bool {
        self.group.is_empty()
    }

    pub fn parent(&self, idx: usize) -> Option<RankId> {
        self.parent_index(idx).map(|p| self.group[p])
    }

    pub fn children(&self, idx: usize) -> Vec<RankId> {
        self.child_indices(idx).into_iter().map(|c| self.group[c]).collect()
    }

    pub fn parent_index(&self, idx: usize) -> Option<usize> {
        binomial_parent(self.rel(idx)).map(|p| self.abs(p))
    }

    pub fn child_indices(&self, idx: usize) -> Vec<usize> {
        binomial_children(self.rel(idx), self.group.len())
            .into_iter()
            .map(|c| self.abs(c))
            .collect()
    }

    /// Number of edges on the longest root-to-leaf path.
    pub fn height(&self) -> u32 {
        (0..self.len()).map(|i| self.rel(i).count_ones()).max().unwrap_or(0)
    }
}

/// Binomial tree over `group` rooted at group position `root`.
///
/// # Panics
/// If `root` is not a valid position.
pub fn build_topology(group: &[RankId], root: usize) -> Topology {
    assert!(root < group.len(), "root {root} outside group of {}", group.len());
    Topology {
        kind: TopologyKind::BinomialTree,
        root: group[root],
        group: group.to_vec(),
        root_idx: root,
    }
}
