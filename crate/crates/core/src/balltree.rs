//! Ball tree with branch-and-bound k-NN search and an optional node-visit
//! budget.
//!
//! Construction splits each node with two far-apart seeds: the point farthest
//! from the node's first point, then the point farthest from that one. Every
//! point goes to the nearer seed. Search visits the nearer child first and
//! prunes a ball when `dist(q, centroid) - radius` exceeds the current k-th
//! best distance.

use crate::error::{invalid, Result};
use crate::index::QueryResult;
use crate::metric::{sq_dist, sq_dist_mixed};
use crate::vecdata::{TopK, VectorSet};

#[derive(Debug, Clone)]
pub struct BallNode {
    pub centroid: Vec<f64>,
    pub radius: f64,
    /// Child node indices; `None` for leaves.
    pub children: Option<(usize, usize)>,
    start: usize,
    end: usize,
}

impl BallNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }
}

#[derive(Debug, Clone)]
pub struct BallTree {
    base: VectorSet,
    leaf_size: usize,
    /// Point ids permuted so every node owns a contiguous range.
    order: Vec<u32>,
    nodes: Vec<BallNode>,
}

impl BallTree {
    pub fn build(base: &VectorSet, leaf_size: usize) -> Result<Self> {
        if leaf_size == 0 {
            return Err(invalid("leaf_size must be at least 1"));
        }
        let mut tree = BallTree {
            base: base.clone(),
            leaf_size,
            order: (0..base.n() as u32).collect(),
            nodes: Vec::new(),
        };
        tree.build_node(0, base.n());
        Ok(tree)
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let d = self.base.d();
        let mut centroid = vec![0.0f64; d];
        for &i in &self.order[start..end] {
            for (c, v) in centroid.iter_mut().zip(self.base.row(i as usize)) {
                *c += *v as f64;
            }
        }
        let count = (end - start) as f64;
        centroid.iter_mut().for_each(|c| *c /= count);
        let radius = self.order[start..end]
            .iter()
            .map(|&i| sq_dist_mixed(self.base.row(i as usize), &centroid).sqrt())
            .fold(0.0, f64::max);

        let id = self.nodes.len();
        self.nodes.push(BallNode {
            centroid,
            radius,
            children: None,
            start,
            end,
        });
        if end - start <= self.leaf_size {
            return id;
        }

        let mid = self.partition(start, end);
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id].children = Some((left, right));
        id
    }

    /// Reorders `order[start..end]` so points nearer the first seed come
    /// first; returns the boundary. Falls back to an even split when every
    /// point lands on one side (duplicates).
    fn partition(&mut self, start: usize, end: usize) -> usize {
        let base = &self.base;
        let farthest = |from: &[f32], ids: &[u32]| -> u32 {
            let mut best = (f64::NEG_INFINITY, ids[0]);
            for &i in ids {
                let dd = sq_dist(base.row(i as usize), from);
                if dd > best.0 {
                    best = (dd, i);
                }
            }
            best.1
        };
        let slice = &self.order[start..end];
        let a = farthest(base.row(slice[0] as usize), slice);
        let b = farthest(base.row(a as usize), slice);
        let (pa, pb) = (base.row(a as usize), base.row(b as usize));

        let mut near_a: Vec<u32> = Vec::with_capacity(slice.len());
        let mut near_b: Vec<u32> = Vec::with_capacity(slice.len());
        for &i in slice {
            let p = base.row(i as usize);
            if sq_dist(p, pa) <= sq_dist(p, pb) {
                near_a.push(i);
            } else {
                near_b.push(i);
            }
        }
        let mid = if near_a.is_empty() || near_b.is_empty() {
            start + (end - start) / 2
        } else {
            start + near_a.len()
        };
        if !near_a.is_empty() && !near_b.is_empty() {
            near_a.extend(near_b);
            self.order[start..end].copy_from_slice(&near_a);
        }
        mid
    }

    pub fn n(&self) -> usize {
        self.base.n()
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    pub fn nodes(&self) -> &[BallNode] {
        &self.nodes
    }

    pub fn root(&self) -> &BallNode {
        &self.nodes[0]
    }

    /// Ids of the points stored under `node` (the leaf's point list for leaves).
    pub fn points(&self, node: &BallNode) -> &[u32] {
        &self.order[node.start..node.end]
    }

    pub fn depth(&self) -> usize {
        fn go(t: &BallTree, i: usize) -> usize {
            match t.nodes[i].children {
                None => 1,
                Some((l, r)) => 1 + go(t, l).max(go(t, r)),
            }
        }
        go(self, 0)
    }

    /// k-NN search. With `max_nodes = None` the result is exact. With a
    /// budget the search stops once `max_nodes` nodes have been visited and
    /// `k` candidates are held; the first descent always reaches a leaf.
    pub fn query(&self, q: &[f32], k: usize, max_nodes: Option<usize>) -> QueryResult {
        let mut top = TopK::new(k);
        let mut visits = 0usize;
        let budget = max_nodes.unwrap_or(usize::MAX);
        self.search(0, q, &mut top, &mut visits, budget);
        let (ids, dists) = top.into_sorted();
        QueryResult { ids, dists }
    }

    fn search(&self, node: usize, q: &[f32], top: &mut TopK, visits: &mut usize, budget: usize) {
        if *visits >= budget && top.is_full() {
            return;
        }
        *visits += 1;
        let n = &self.nodes[node];
        match n.children {
            None => {
                for &i in self.points(n) {
                    let sq = sq_dist(self.base.row(i as usize), q);
                    top.push(i, sq);
                }
            }
            Some((l, r)) => {
                let lb = |c: usize| {
                    let c = &self.nodes[c];
                    (sq_dist_mixed(q, &c.centroid).sqrt() - c.radius).max(0.0)
                };
                let (ll, lr) = (lb(l), lb(r));
                let order = if lr < ll { [(r, lr), (l, ll)] } else { [(l, ll), (r, lr)] };
                for (child, bound) in order {
                    let kth = top.worst().sqrt();
                    // slack absorbs rounding in the triangle-inequality bound
                    if bound - 1e-9 * (1.0 + kth) > kth {
                        continue;
                    }
                    self.search(child, q, top, visits, budget);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vecdata::make_synthetic;

    #[test]
    fn single_point_is_one_leaf() {
        let base = VectorSet::from_rows(&[[1.0f32, 2.0]]).unwrap();
        let t = BallTree::build(&base, 4).unwrap();
        assert_eq!(t.nodes().len(), 1);
        assert!(t.root().is_leaf());
        assert_eq!(t.root().radius, 0.0);
    }

    #[test]
    fn unit_leaves() {
        let base = make_synthetic(64, 3, 4, 1.0, 2).unwrap();
        let t = BallTree::build(&base, 1).unwrap();
        let leaves: Vec<_> = t.nodes().iter().filter(|n| n.is_leaf()).collect();
        assert_eq!(leaves.len(), 64);
        assert!(leaves.iter().all(|l| l.radius == 0.0 && t.points(l).len() == 1));
    }

    #[test]
    fn duplicates_still_split() {
        let base = VectorSet::from_rows(&[[3.0f32, 3.0]; 20]).unwrap();
        let t = BallTree::build(&base, 2).unwrap();
        assert!(t.nodes().iter().filter(|n| n.is_leaf()).all(|l| t.points(l).len() <= 2));
        let r = t.query(&[3.0, 3.0], 3, None);
        assert_eq!(r.ids, vec![0, 1, 2]);
    }

    #[test]
    fn rejects_zero_leaf_size() {
        let base = make_synthetic(10, 2, 1, 1.0, 1).unwrap();
        assert!(BallTree::build(&base, 0).is_err());
    }

    #[test]
    fn budget_one_returns_first_leaf_path() {
        let base = make_synthetic(200, 4, 4, 1.0, 9).unwrap();
        let t = BallTree::build(&base, 8).unwrap();
        let q = base.row(5);
        let r = t.query(q, 1, Some(1));
        assert_eq!(r.ids.len(), 1);
        // walk the greedy path by hand
        let mut node = 0;
        while let Some((l, rr)) = t.nodes()[node].children {
            let lb = |c: usize| {
                let c = &t.nodes()[c];
                (sq_dist_mixed(q, &c.centroid).sqrt() - c.radius).max(0.0)
            };
            node = if lb(rr) < lb(l) { rr } else { l };
        }
        let leaf = t.points(&t.nodes()[node]);
        assert!(r.ids.iter().all(|id| leaf.contains(id)));
    }
}
