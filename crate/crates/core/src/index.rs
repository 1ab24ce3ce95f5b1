//! Common index handle, the exact brute-force index, and TP/FP labelling.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::balltree::BallTree;
use crate::error::{invalid, Error, Result};
use crate::kdforest::{KdForest, DEFAULT_LEAF_SIZE, DEFAULT_TOP_DIMS};
use crate::vecdata::{brute_topk, TruthRow, VectorSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum IndexKind {
    Brute,
    BallTree,
    KdForest,
}

impl IndexKind {
    pub fn name(self) -> &'static str {
        match self {
            IndexKind::Brute => "brute",
            IndexKind::BallTree => "balltree",
            IndexKind::KdForest => "kdforest",
        }
    }

    fn required(self) -> &'static [&'static str] {
        match self {
            IndexKind::Brute => &[],
            IndexKind::BallTree => &["leaf_size"],
            IndexKind::KdForest => &["num_trees", "max_checks"],
        }
    }

    fn optional(self) -> &'static [&'static str] {
        match self {
            IndexKind::Brute => &[],
            IndexKind::BallTree => &["max_nodes"],
            IndexKind::KdForest => &["top_dims", "leaf_size", "seed"],
        }
    }
}

impl FromStr for IndexKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "brute" => Ok(IndexKind::Brute),
            "balltree" => Ok(IndexKind::BallTree),
            "kdforest" => Ok(IndexKind::KdForest),
            other => Err(invalid(format!("unknown index kind {other:?}"))),
        }
    }
}

/// Index algorithm plus its parameters.
///
/// Text form: `kind` or `kind:key=value,key=value`, e.g.
/// `kdforest:num_trees=4,max_checks=10`. Required keys per kind:
///
/// | kind     | required               | optional                       |
/// |----------|------------------------|--------------------------------|
/// | brute    |                        |                                |
/// | balltree | leaf_size              | max_nodes (default unlimited)  |
/// | kdforest | num_trees, max_checks  | top_dims, leaf_size, seed      |
///
/// All values are positive integers except `seed`, which may be zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSpec {
    kind: IndexKind,
    params: BTreeMap<String, u64>,
}

impl IndexSpec {
    pub fn new<I, K>(kind: IndexKind, params: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, u64)>,
        K: Into<String>,
    {
        let params: BTreeMap<String, u64> =
            params.into_iter().map(|(k, v)| (k.into(), v)).collect();
        for key in kind.required() {
            if !params.contains_key(*key) {
                return Err(invalid(format!("{} requires parameter {key}", kind.name())));
            }
        }
        for (key, &value) in &params {
            let known = kind.required().contains(&key.as_str())
                || kind.optional().contains(&key.as_str());
            if !known {
                return Err(invalid(format!(
                    "{} does not accept parameter {key}",
                    kind.name()
                )));
            }
            if value == 0 && key != "seed" {
                return Err(invalid(format!("{key} must be a positive integer")));
            }
        }
        Ok(IndexSpec { kind, params })
    }

    pub fn brute() -> Self {
        IndexSpec {
            kind: IndexKind::Brute,
            params: BTreeMap::new(),
        }
    }

    pub fn balltree(leaf_size: u64, max_nodes: Option<u64>) -> Result<Self> {
        let mut p = vec![("leaf_size", leaf_size)];
        if let Some(m) = max_nodes {
            p.push(("max_nodes", m));
        }
        Self::new(IndexKind::BallTree, p)
    }

    pub fn kdforest(num_trees: u64, max_checks: u64) -> Result<Self> {
        Self::new(
            IndexKind::KdForest,
            [("num_trees", num_trees), ("max_checks", max_checks)],
        )
    }

    /// Returns a copy with `key` set to `value`, re-validated.
    pub fn with(&self, key: &str, value: u64) -> Result<Self> {
        let mut params = self.params.clone();
        params.insert(key.to_string(), value);
        Self::new(self.kind, params)
    }

    pub fn kind(&self) -> IndexKind {
        self.kind
    }

    pub fn param(&self, key: &str) -> Option<u64> {
        self.params.get(key).copied()
    }

    pub fn params(&self) -> &BTreeMap<String, u64> {
        &self.params
    }

    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for IndexSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind.name())?;
        let mut sep = ':';
        for (k, v) in &self.params {
            write!(f, "{sep}{k}={v}")?;
            sep = ',';
        }
        Ok(())
    }
}

impl FromStr for IndexSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (kind, rest) = match s.split_once(':') {
            Some((k, r)) => (k, r),
            None => (s, ""),
        };
        let kind: IndexKind = kind.trim().parse()?;
        let mut params = Vec::new();
        for item in rest.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| invalid(format!("expected key=value, got {item:?}")))?;
            let v: u64 = v
                .trim()
                .parse()
                .map_err(|_| invalid(format!("{} is not a non-negative integer", v.trim())))?;
            params.push((k.trim().to_string(), v));
        }
        IndexSpec::new(kind, params)
    }
}

impl Serialize for IndexSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for IndexSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Neighbors returned by an index, ascending by distance.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub ids: Vec<u32>,
    pub dists: Vec<f64>,
}

impl QueryResult {
    pub fn k(&self) -> usize {
        self.ids.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FpLabel {
    pub query_id: usize,
    pub is_fp: bool,
    pub recall: f64,
}

/// Labels one query: a returned neighbor counts as correct when it is one of
/// the true neighbors or lies within `(1 + epsilon)` of the true k-th
/// distance. The query is a false positive when any returned neighbor is
/// incorrect.
pub fn label_fp(
    query_id: usize,
    result: &QueryResult,
    truth: TruthRow<'_>,
    epsilon: f64,
) -> Result<FpLabel> {
    let k = truth.ids.len();
    if result.ids.len() != k || result.dists.len() != k || truth.dists.len() != k {
        return Err(invalid(format!(
            "label_fp: result has {} neighbors, truth row has {k}",
            result.ids.len()
        )));
    }
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(invalid(format!("epsilon must be non-negative, got {epsilon}")));
    }
    let bound = truth.dists[k - 1] * (1.0 + epsilon);
    let hits = result
        .ids
        .iter()
        .zip(&result.dists)
        .filter(|(id, d)| **d <= bound || truth.ids.contains(id))
        .count();
    let recall = hits as f64 / k as f64;
    Ok(FpLabel {
        query_id,
        is_fp: hits < k,
        recall,
    })
}

/// Exhaustive scan over an owned copy of the base set.
#[derive(Debug, Clone)]
pub struct BruteIndex {
    base: VectorSet,
}

impl BruteIndex {
    pub fn new(base: &VectorSet) -> Self {
        BruteIndex { base: base.clone() }
    }

    pub fn query(&self, q: &[f32], k: usize) -> QueryResult {
        let (ids, dists) = brute_topk(&self.base, q, k);
        QueryResult { ids, dists }
    }
}

#[derive(Debug, Clone)]
enum Backend {
    Brute(BruteIndex),
    BallTree {
        tree: BallTree,
        max_nodes: Option<usize>,
    },
    KdForest {
        forest: KdForest,
        max_checks: usize,
    },
}

/// An immutable, queryable index built from an [`IndexSpec`].
#[derive(Debug, Clone)]
pub struct Index {
    spec: IndexSpec,
    n: usize,
    d: usize,
    build_seconds: f64,
    backend: Backend,
}

/// Builds the index described by `spec`, timing the whole construction.
pub fn build(spec: &IndexSpec, base: &VectorSet) -> Result<Index> {
    let start = Instant::now();
    let backend = match spec.kind() {
        IndexKind::Brute => Backend::Brute(BruteIndex::new(base)),
        IndexKind::BallTree => {
            let leaf = spec.param("leaf_size").unwrap_or(1) as usize;
            Backend::BallTree {
                tree: BallTree::build(base, leaf)?,
                max_nodes: spec.param("max_nodes").map(|v| v as usize),
            }
        }
        IndexKind::KdForest => {
            let top_dims = spec
                .param("top_dims")
                .map(|v| v as usize)
                .unwrap_or(DEFAULT_TOP_DIMS.min(base.d()));
            let leaf = spec
                .param("leaf_size")
                .map(|v| v as usize)
                .unwrap_or(DEFAULT_LEAF_SIZE);
            let forest = KdForest::build(
                base,
                spec.param("num_trees").unwrap_or(1) as usize,
                top_dims,
                leaf,
                spec.param("seed").unwrap_or(0),
            )?;
            Backend::KdForest {
                forest,
                max_checks: spec.param("max_checks").unwrap_or(1) as usize,
            }
        }
    };
    // millisecond resolution
    let build_seconds = (start.elapsed().as_secs_f64() * 1e3).round() / 1e3;
    Ok(Index {
        spec: spec.clone(),
        n: base.n(),
        d: base.d(),
        build_seconds,
        backend,
    })
}

impl Index {
    pub fn spec(&self) -> &IndexSpec {
        &self.spec
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn build_seconds(&self) -> f64 {
        self.build_seconds
    }

    pub fn is_exact(&self) -> bool {
        match &self.backend {
            Backend::Brute(_) => true,
            Backend::BallTree { max_nodes, .. } => max_nodes.is_none(),
            Backend::KdForest { max_checks, .. } => *max_checks >= self.n,
        }
    }

    pub fn query(&self, q: &[f32], k: usize) -> Result<QueryResult> {
        if q.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: q.len(),
            });
        }
        if k == 0 || k > self.n {
            return Err(invalid(format!("k must be in [1, {}], got {k}", self.n)));
        }
        Ok(match &self.backend {
            Backend::Brute(b) => b.query(q, k),
            Backend::BallTree { tree, max_nodes } => tree.query(q, k, *max_nodes),
            Backend::KdForest { forest, max_checks } => {
                forest.query(q, k, (*max_checks).max(k))
            }
        })
    }
}
