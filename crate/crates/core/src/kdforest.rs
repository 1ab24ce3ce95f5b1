//! Randomized KD-tree forest searched with one shared, bounded-check
//! priority queue.
//!
//! Each node splits on a dimension drawn uniformly from the `top_dims`
//! highest-variance dimensions of its points, at the midpoint between the two
//! middle values. A query descends every tree, queueing the far side of each
//! split keyed by a lower bound on its distance, and keeps popping the
//! closest unexplored branch until `max_checks` distinct points have been
//! scored.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use ordered_float::OrderedFloat;
use rand::seq::IndexedRandom;

use crate::error::{invalid, Result};
use crate::index::QueryResult;
use crate::metric::sq_dist;
use crate::rng::{derive_indexed, rng_from, Rng};
use crate::vecdata::{TopK, VectorSet};

pub const DEFAULT_TOP_DIMS: usize = 5;
pub const DEFAULT_LEAF_SIZE: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KdNode {
    Split {
        dim: usize,
        value: f32,
        left: usize,
        right: usize,
    },
    Leaf {
        start: usize,
        end: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct KdTree {
    nodes: Vec<KdNode>,
    order: Vec<u32>,
}

impl KdTree {
    pub fn nodes(&self) -> &[KdNode] {
        &self.nodes
    }

    pub fn leaf_points(&self, start: usize, end: usize) -> &[u32] {
        &self.order[start..end]
    }
}

#[derive(Debug, Clone)]
pub struct KdForest {
    base: VectorSet,
    trees: Vec<KdTree>,
    top_dims: usize,
    leaf_size: usize,
}

struct Builder<'a> {
    base: &'a VectorSet,
    top_dims: usize,
    leaf_size: usize,
    rng: Rng,
    nodes: Vec<KdNode>,
    order: Vec<u32>,
}

impl Builder<'_> {
    fn node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(KdNode::Leaf { start, end });
        if end - start <= self.leaf_size {
            return id;
        }
        let Some(dim) = self.pick_dim(start, end) else {
            // all points identical
            return id;
        };
        let base = self.base;
        let slice = &mut self.order[start..end];
        let mid = slice.len() / 2;
        slice.select_nth_unstable_by(mid, |a, b| {
            base.row(*a as usize)[dim]
                .total_cmp(&base.row(*b as usize)[dim])
                .then(a.cmp(b))
        });
        let hi = base.row(slice[mid] as usize)[dim];
        let lo = slice[..mid]
            .iter()
            .map(|&i| base.row(i as usize)[dim])
            .fold(f32::NEG_INFINITY, f32::max);
        let value = lo + (hi - lo) * 0.5;
        let left = self.node(start, start + mid);
        let right = self.node(start + mid, end);
        self.nodes[id] = KdNode::Split {
            dim,
            value,
            left,
            right,
        };
        id
    }

    /// Uniform choice among the `top_dims` highest-variance dimensions with
    /// non-zero variance (ties broken by lower dimension index).
    fn pick_dim(&mut self, start: usize, end: usize) -> Option<usize> {
        let variances = dim_variances(self.base, &self.order[start..end]);
        let mut dims: Vec<usize> = (0..variances.len()).filter(|&j| variances[j] > 0.0).collect();
        dims.sort_by(|&a, &b| variances[b].total_cmp(&variances[a]).then(a.cmp(&b)));
        dims.truncate(self.top_dims);
        dims.choose(&mut self.rng).copied()
    }
}

pub(crate) fn dim_variances(base: &VectorSet, ids: &[u32]) -> Vec<f64> {
    let d = base.d();
    let n = ids.len() as f64;
    let mut mean = vec![0.0f64; d];
    for &i in ids {
        for (m, v) in mean.iter_mut().zip(base.row(i as usize)) {
            *m += *v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0f64; d];
    for &i in ids {
        for ((s, v), m) in var.iter_mut().zip(base.row(i as usize)).zip(&mean) {
            let t = *v as f64 - m;
            *s += t * t;
        }
    }
    var.iter_mut().for_each(|s| *s /= n);
    var
}

impl KdForest {
    pub fn build(
        base: &VectorSet,
        num_trees: usize,
        top_dims: usize,
        leaf_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if num_trees == 0 {
            return Err(invalid("num_trees must be at least 1"));
        }
        if top_dims == 0 || top_dims > base.d() {
            return Err(invalid(format!(
                "top_dims must be in [1, {}], got {top_dims}",
                base.d()
            )));
        }
        if leaf_size == 0 {
            return Err(invalid("leaf_size must be at least 1"));
        }
        let trees = (0..num_trees)
            .map(|t| {
                let mut b = Builder {
                    base,
                    top_dims,
                    leaf_size,
                    rng: rng_from(derive_indexed(seed, "kdforest-tree", t as u64)),
                    nodes: Vec::new(),
                    order: (0..base.n() as u32).collect(),
                };
                b.node(0, base.n());
                KdTree {
                    nodes: b.nodes,
                    order: b.order,
                }
            })
            .collect();
        Ok(KdForest {
            base: base.clone(),
            trees,
            top_dims,
            leaf_size,
        })
    }

    pub fn trees(&self) -> &[KdTree] {
        &self.trees
    }

    pub fn num_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn top_dims(&self) -> usize {
        self.top_dims
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    pub fn base(&self) -> &VectorSet {
        &self.base
    }

    /// Priority search over all trees. Leaves are scored whole; the search
    /// stops after the leaf that brings the count of distinct scored points
    /// to `max_checks` (and at least `k` are held). Branches whose bound
    /// exceeds the current k-th distance are dropped, so `max_checks >= n`
    /// gives the exact answer.
    pub fn query(&self, q: &[f32], k: usize, max_checks: usize) -> QueryResult {
        let n = self.base.n();
        let mut top = TopK::new(k);
        let mut seen = vec![0u64; n.div_ceil(64)];
        let mut checks = 0usize;
        // (bound, tree, node), smallest first
        let mut queue: BinaryHeap<Reverse<(OrderedFloat<f64>, usize, usize)>> =
            (0..self.trees.len()).map(|t| Reverse((OrderedFloat(0.0), t, 0))).collect();

        while let Some(Reverse((OrderedFloat(bound), t, start))) = queue.pop() {
            if bound > top.worst() {
                break;
            }
            let tree = &self.trees[t];
            let mut node = start;
            loop {
                match tree.nodes[node] {
                    KdNode::Split {
                        dim,
                        value,
                        left,
                        right,
                    } => {
                        let diff = q[dim] as f64 - value as f64;
                        let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                        let far_bound = bound.max(diff * diff);
                        if far_bound <= top.worst() {
                            queue.push(Reverse((OrderedFloat(far_bound), t, far)));
                        }
                        node = near;
                    }
                    KdNode::Leaf { start, end } => {
                        for &i in &tree.order[start..end] {
                            let (w, b) = (i as usize / 64, 1u64 << (i % 64));
                            if seen[w] & b != 0 {
                                continue;
                            }
                            seen[w] |= b;
                            checks += 1;
                            top.push(i, sq_dist(self.base.row(i as usize), q));
                        }
                        break;
                    }
                }
            }
            if checks >= max_checks && top.is_full() {
                break;
            }
        }
        let (ids, dists) = top.into_sorted();
        QueryResult { ids, dists }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vecdata::make_synthetic;

    #[test]
    fn validates_counts() {
        let base = make_synthetic(20, 3, 2, 1.0, 1).unwrap();
        assert!(KdForest::build(&base, 0, 1, 1, 0).is_err());
        assert!(KdForest::build(&base, 1, 0, 1, 0).is_err());
        assert!(KdForest::build(&base, 1, 4, 1, 0).is_err());
        assert!(KdForest::build(&base, 1, 3, 0, 0).is_err());
    }

    #[test]
    fn top_dims_one_is_classic_kdtree() {
        let base = make_synthetic(120, 5, 3, 1.0, 4).unwrap();
        for seed in 0..3 {
            let f = KdForest::build(&base, 2, 1, 1, seed).unwrap();
            for tree in f.trees() {
                check_max_variance_splits(&f, tree, 0, &(0..base.n() as u32).collect::<Vec<_>>());
            }
        }
    }

    fn check_max_variance_splits(f: &KdForest, tree: &KdTree, node: usize, ids: &[u32]) {
        if let KdNode::Split { dim, left, right, .. } = tree.nodes()[node] {
            let var = dim_variances(f.base(), ids);
            let best = (0..var.len())
                .max_by(|&a, &b| var[a].total_cmp(&var[b]).then(b.cmp(&a)))
                .unwrap();
            assert_eq!(dim, best);
            let l = subtree_points(tree, left);
            let r = subtree_points(tree, right);
            check_max_variance_splits(f, tree, left, &l);
            check_max_variance_splits(f, tree, right, &r);
        }
    }

    fn subtree_points(tree: &KdTree, node: usize) -> Vec<u32> {
        match tree.nodes()[node] {
            KdNode::Leaf { start, end } => tree.leaf_points(start, end).to_vec(),
            KdNode::Split { left, right, .. } => {
                let mut v = subtree_points(tree, left);
                v.extend(subtree_points(tree, right));
                v
            }
        }
    }

    #[test]
    fn same_seed_same_forest() {
        let base = make_synthetic(200, 6, 4, 1.0, 5).unwrap();
        let a = KdForest::build(&base, 4, 5, 1, 77).unwrap();
        let b = KdForest::build(&base, 4, 5, 1, 77).unwrap();
        assert_eq!(a.trees(), b.trees());
        let c = KdForest::build(&base, 4, 5, 1, 78).unwrap();
        assert_ne!(a.trees(), c.trees());
    }

    #[test]
    fn indexed_point_found_with_minimal_checks() {
        let base = make_synthetic(300, 8, 4, 1.0, 6).unwrap();
        let f = KdForest::build(&base, 4, 5, 1, 1).unwrap();
        for i in [0usize, 17, 299] {
            let r = f.query(base.row(i), 1, 1);
            assert_eq!((r.ids[0], r.dists[0]), (i as u32, 0.0));
        }
    }

    #[test]
    fn identical_points_make_a_leaf() {
        let base = VectorSet::from_rows(&[[1.0f32, 1.0]; 10]).unwrap();
        let f = KdForest::build(&base, 1, 2, 1, 0).unwrap();
        assert_eq!(f.trees()[0].nodes().len(), 1);
        assert_eq!(f.query(&[1.0, 1.0], 3, 3).ids, vec![0, 1, 2]);
    }
}
