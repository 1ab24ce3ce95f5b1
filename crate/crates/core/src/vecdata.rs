//! Vector datasets: storage, file formats, synthetic generation and exact
//! ground truth.
//!
//! Binary vector files (`VDS1`) and ground-truth files (`GTK1`) are
//! little-endian:
//!
//! ```text
//! VDS1 | u32 n | u32 d | n*d f32 (row-major)
//! GTK1 | u32 n | u32 k | n*k u32 ids | n*k f32 distances
//! ```

use std::collections::BinaryHeap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ordered_float::OrderedFloat;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::metric::sq_dist;
use crate::rng::rng_from;

const VDS_MAGIC: &[u8; 4] = b"VDS1";
const GTK_MAGIC: &[u8; 4] = b"GTK1";

/// Half-width of the cube synthetic cluster centers are drawn from.
pub const CENTER_RANGE: f32 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VectorFormat {
    Binary,
    Csv,
}

impl VectorFormat {
    /// Picks a format from a file extension: `.csv` is CSV, anything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => VectorFormat::Csv,
            _ => VectorFormat::Binary,
        }
    }
}

/// `n` points of dimension `d`, stored row-major. Point ids are the row
/// indices `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorSet {
    n: usize,
    d: usize,
    data: Vec<f32>,
}

impl VectorSet {
    pub fn new(d: usize, data: Vec<f32>) -> Result<Self> {
        if d == 0 {
            return Err(invalid("dimension must be at least 1"));
        }
        if data.is_empty() {
            return Err(invalid("vector set must contain at least one point"));
        }
        if !data.len().is_multiple_of(d) {
            return Err(invalid(format!(
                "data length {} is not a multiple of d={d}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Row {
                row: pos / d,
                msg: format!("non-finite value in column {}", pos % d),
            });
        }
        Ok(VectorSet {
            n: data.len() / d,
            d,
            data,
        })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * d);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != d {
                return Err(Error::Row {
                    row: i,
                    msg: format!("expected {d} values, found {}", r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(d, data)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.d)
    }

    pub fn ids(&self) -> std::ops::Range<usize> {
        0..self.n
    }

    /// New set made of the given rows, re-identified densely in the given order.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(idx.len() * self.d);
        for &i in idx {
            if i >= self.n {
                return Err(invalid(format!("row {i} out of range (n={})", self.n)));
            }
            data.extend_from_slice(self.row(i));
        }
        Self::new(self.d, data)
    }
}

pub fn load_vectors(path: &Path, format: VectorFormat) -> Result<VectorSet> {
    match format {
        VectorFormat::Binary => read_vds(BufReader::new(File::open(path)?)),
        VectorFormat::Csv => read_csv(BufReader::new(File::open(path)?)),
    }
}

pub fn save_vectors(set: &VectorSet, path: &Path, format: VectorFormat) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        VectorFormat::Binary => write_vds(set, &mut w)?,
        VectorFormat::Csv => write_csv(set, &mut w)?,
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_vds<R: Read>(mut r: R) -> Result<VectorSet> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Header("file shorter than the 12-byte header".into()))?;
    if &magic != VDS_MAGIC {
        return Err(Error::Header(format!("bad magic {magic:?}, expected \"VDS1\"")));
    }
    let n = read_u32(&mut r).map_err(|_| Error::Header("missing n".into()))? as usize;
    let d = read_u32(&mut r).map_err(|_| Error::Header("missing d".into()))? as usize;
    if n == 0 || d == 0 {
        return Err(Error::Header(format!("n={n}, d={d}: both must be at least 1")));
    }
    let mut data = Vec::with_capacity(n * d);
    let mut buf = vec![0u8; d * 4];
    for row in 0..n {
        r.read_exact(&mut buf).map_err(|_| Error::Row {
            row,
            msg: "truncated data".into(),
        })?;
        for (j, c) in buf.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            if !v.is_finite() {
                return Err(Error::Row {
                    row,
                    msg: format!("non-finite value in column {j}"),
                });
            }
            data.push(v);
        }
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Header(format!(
            "trailing bytes after {n}x{d} values"
        )));
    }
    VectorSet::new(d, data)
}

pub fn write_vds<W: Write>(set: &VectorSet, w: &mut W) -> Result<()> {
    w.write_all(VDS_MAGIC)?;
    w.write_all(&(set.n as u32).to_le_bytes())?;
    w.write_all(&(set.d as u32).to_le_bytes())?;
    for v in &set.data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_csv<R: BufRead>(r: R) -> Result<VectorSet> {
    let mut d = None;
    let mut data = Vec::new();
    let mut row = 0;
    for line in r.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut count = 0;
        for field in line.split(',') {
            let v: f32 = field.trim().parse().map_err(|_| Error::Row {
                row,
                msg: format!("cannot parse {:?} as a number", field.trim()),
            })?;
            if !v.is_finite() {
                return Err(Error::Row {
                    row,
                    msg: format!("non-finite value in column {count}"),
                });
            }
            data.push(v);
            count += 1;
        }
        match d {
            None => d = Some(count),
            Some(d) if d != count => {
                return Err(Error::Row {
                    row,
                    msg: format!("expected {d} values, found {count}"),
                })
            }
            _ => {}
        }
        row += 1;
    }
    let d = d.ok_or_else(|| Error::Header("empty CSV file".into()))?;
    VectorSet::new(d, data)
}

pub fn write_csv<W: Write>(set: &VectorSet, w: &mut W) -> Result<()> {
    for r in set.rows() {
        let line: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

/// Draws `n` points from a mixture of `clusters` isotropic Gaussians with
/// standard deviation `spread`. Centers are uniform in
/// `[-CENTER_RANGE, CENTER_RANGE]^d`; point `i` belongs to cluster
/// `i % clusters`.
pub fn make_synthetic(
    n: usize,
    d: usize,
    clusters: usize,
    spread: f64,
    seed: u64,
) -> Result<VectorSet> {
    Ok(synthetic_mixture(n, d, clusters, spread, seed)?.0)
}

/// Same as [`make_synthetic`], also returning the cluster centers.
pub fn synthetic_mixture(
    n: usize,
    d: usize,
    clusters: usize,
    spread: f64,
    seed: u64,
) -> Result<(VectorSet, Vec<Vec<f32>>)> {
    if clusters == 0 || n < clusters {
        return Err(invalid(format!(
            "need n >= clusters >= 1 (n={n}, clusters={clusters})"
        )));
    }
    if d == 0 {
        return Err(invalid("dimension must be at least 1"));
    }
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(invalid(format!("spread must be positive, got {spread}")));
    }
    let mut rng = rng_from(seed);
    let centers: Vec<Vec<f32>> = (0..clusters)
        .map(|_| {
            (0..d)
                .map(|_| rng.random_range(-CENTER_RANGE..CENTER_RANGE))
                .collect()
        })
        .collect();
    let mut data = Vec::with_capacity(n * d);
    for i in 0..n {
        let c = &centers[i % clusters];
        for &cj in c {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push((cj as f64 + spread * z) as f32);
        }
    }
    Ok((VectorSet::new(d, data)?, centers))
}

/// Random split into `(base, queries)` with `n_queries` query points.
pub fn split(set: &VectorSet, n_queries: usize, seed: u64) -> Result<(VectorSet, VectorSet)> {
    if n_queries == 0 || n_queries >= set.n() {
        return Err(invalid(format!(
            "n_queries must be in [1, n) (n={}, n_queries={n_queries})",
            set.n()
        )));
    }
    let mut perm: Vec<usize> = set.ids().collect();
    perm.shuffle(&mut rng_from(seed));
    let (q, b) = perm.split_at(n_queries);
    Ok((set.select(b)?, set.select(q)?))
}

/// Exact top-`k` neighbors of every query, sorted by `(distance, id)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    n: usize,
    k: usize,
    ids: Vec<u32>,
    dists: Vec<f64>,
}

impl GroundTruth {
    pub fn from_rows(k: usize, ids: Vec<u32>, dists: Vec<f64>) -> Result<Self> {
        if k == 0 || ids.len() != dists.len() || !ids.len().is_multiple_of(k) {
            return Err(invalid("ground truth shape mismatch"));
        }
        Ok(GroundTruth {
            n: ids.len() / k,
            k,
            ids,
            dists,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn ids(&self, i: usize) -> &[u32] {
        &self.ids[i * self.k..(i + 1) * self.k]
    }

    pub fn dists(&self, i: usize) -> &[f64] {
        &self.dists[i * self.k..(i + 1) * self.k]
    }

    pub fn row(&self, i: usize) -> TruthRow<'_> {
        TruthRow {
            ids: self.ids(i),
            dists: self.dists(i),
        }
    }
}

/// One query's exact neighbors.
#[derive(Debug, Clone, Copy)]
pub struct TruthRow<'a> {
    pub ids: &'a [u32],
    pub dists: &'a [f64],
}

pub fn save_ground_truth(gt: &GroundTruth, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(GTK_MAGIC)?;
    w.write_all(&(gt.n as u32).to_le_bytes())?;
    w.write_all(&(gt.k as u32).to_le_bytes())?;
    for id in &gt.ids {
        w.write_all(&id.to_le_bytes())?;
    }
    for d in &gt.dists {
        w.write_all(&(*d as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_ground_truth(path: &Path) -> Result<GroundTruth> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Header("file shorter than the 12-byte header".into()))?;
    if &magic != GTK_MAGIC {
        return Err(Error::Header(format!("bad magic {magic:?}, expected \"GTK1\"")));
    }
    let n = read_u32(&mut r).map_err(|_| Error::Header("missing n".into()))? as usize;
    let k = read_u32(&mut r).map_err(|_| Error::Header("missing k".into()))? as usize;
    if n == 0 || k == 0 {
        return Err(Error::Header(format!("n={n}, k={k}: both must be at least 1")));
    }
    let mut ids = Vec::with_capacity(n * k);
    let mut buf = vec![0u8; k * 4];
    for row in 0..n {
        r.read_exact(&mut buf).map_err(|_| Error::Row {
            row,
            msg: "truncated id block".into(),
        })?;
        ids.extend(
            buf.chunks_exact(4)
                .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])),
        );
    }
    let mut dists = Vec::with_capacity(n * k);
    for row in 0..n {
        r.read_exact(&mut buf).map_err(|_| Error::Row {
            row,
            msg: "truncated distance block".into(),
        })?;
        for c in buf.chunks_exact(4) {
            let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Row {
                    row,
                    msg: format!("invalid distance {v}"),
                });
            }
            dists.push(v as f64);
        }
    }
    GroundTruth::from_rows(k, ids, dists)
}

/// Heap entry ordered by `(squared distance, id)`; the max-heap top is the
/// current worst candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) struct Candidate {
    pub sq: OrderedFloat<f64>,
    pub id: u32,
}

/// Bounded collection of the best `k` candidates seen so far.
pub(crate) struct TopK {
    k: usize,
    heap: BinaryHeap<Candidate>,
}

impl TopK {
    pub fn new(k: usize) -> Self {
        TopK {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    pub fn push(&mut self, id: u32, sq: f64) {
        let c = Candidate {
            sq: OrderedFloat(sq),
            id,
        };
        if self.heap.len() < self.k {
            self.heap.push(c);
        } else if let Some(mut top) = self.heap.peek_mut() {
            if c < *top {
                *top = c;
            }
        }
    }

    pub fn is_full(&self) -> bool {
        self.heap.len() >= self.k
    }

    /// Squared distance of the current k-th candidate, or infinity if not full.
    #[inline]
    pub fn worst(&self) -> f64 {
        if self.is_full() {
            self.heap.peek().map_or(f64::INFINITY, |c| c.sq.0)
        } else {
            f64::INFINITY
        }
    }

    /// Candidates sorted ascending by `(distance, id)`, distances square-rooted.
    pub fn into_sorted(self) -> (Vec<u32>, Vec<f64>) {
        let v = self.heap.into_sorted_vec();
        (
            v.iter().map(|c| c.id).collect(),
            v.iter().map(|c| c.sq.0.sqrt()).collect(),
        )
    }
}

/// Exact scan of `base` for the `k` nearest points to `q`.
pub(crate) fn brute_topk(base: &VectorSet, q: &[f32], k: usize) -> (Vec<u32>, Vec<f64>) {
    let mut top = TopK::new(k);
    for (i, p) in base.rows().enumerate() {
        let sq = sq_dist(p, q);
        if sq <= top.worst() {
            top.push(i as u32, sq);
        }
    }
    top.into_sorted()
}

/// Exact top-`k` Euclidean neighbors of each query, ties broken by smaller id.
pub fn exact_ground_truth(base: &VectorSet, queries: &VectorSet, k: usize) -> Result<GroundTruth> {
    if base.d() != queries.d() {
        return Err(Error::DimensionMismatch {
            expected: base.d(),
            got: queries.d(),
        });
    }
    if k == 0 || k > base.n() {
        return Err(invalid(format!("k must be in [1, {}], got {k}", base.n())));
    }
    let rows: Vec<(Vec<u32>, Vec<f64>)> = (0..queries.n())
        .into_par_iter()
        .map(|i| brute_topk(base, queries.row(i), k))
        .collect();
    let mut ids = Vec::with_capacity(queries.n() * k);
    let mut dists = Vec::with_capacity(queries.n() * k);
    for (i, d) in rows {
        ids.extend(i);
        dists.extend(d);
    }
    GroundTruth::from_rows(k, ids, dists)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_decodes() {
        let set = read_csv("1.0,2.0\n3.0,4.0\n".as_bytes()).unwrap();
        assert_eq!((set.n(), set.d()), (2, 2));
        assert_eq!(set.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn csv_ragged_row_reports_index() {
        let err = read_csv("1,2\n3,4\n5\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Row { row: 2, .. }), "{err}");
    }

    #[test]
    fn csv_non_finite_reports_index() {
        let err = read_csv("1,2\nNaN,4\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Row { row: 1, .. }), "{err}");
    }

    #[test]
    fn binary_decodes_header_and_values() {
        let mut bytes = b"VDS1".to_vec();
        bytes.extend(3u32.to_le_bytes());
        bytes.extend(2u32.to_le_bytes());
        for v in [1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0] {
            bytes.extend(v.to_le_bytes());
        }
        let set = read_vds(&bytes[..]).unwrap();
        assert_eq!((set.n(), set.d()), (3, 2));
        assert_eq!(set.row(2), &[5.0, 6.0]);
    }

    #[test]
    fn binary_errors() {
        assert!(matches!(read_vds(&b"XXXX"[..]), Err(Error::Header(_))));
        let mut bytes = b"VDS1".to_vec();
        bytes.extend(2u32.to_le_bytes());
        bytes.extend(2u32.to_le_bytes());
        bytes.extend(1.0f32.to_le_bytes());
        bytes.extend(1.0f32.to_le_bytes());
        bytes.extend(f32::INFINITY.to_le_bytes());
        bytes.extend(1.0f32.to_le_bytes());
        assert!(matches!(read_vds(&bytes[..]), Err(Error::Row { row: 1, .. })));
        bytes.truncate(bytes.len() - 8);
        assert!(matches!(read_vds(&bytes[..]), Err(Error::Row { row: 1, .. })));
    }

    #[test]
    fn synthetic_is_deterministic_and_validated() {
        let a = make_synthetic(50, 3, 4, 0.5, 11).unwrap();
        let b = make_synthetic(50, 3, 4, 0.5, 11).unwrap();
        assert_eq!(a, b);
        assert!(make_synthetic(10, 3, 0, 1.0, 1).is_err());
        assert!(make_synthetic(2, 3, 3, 1.0, 1).is_err());
        assert!(make_synthetic(10, 3, 2, 0.0, 1).is_err());
    }

    #[test]
    fn synthetic_single_cluster_mean_near_center() {
        let (set, centers) = synthetic_mixture(100, 2, 1, 1.0, 7).unwrap();
        for j in 0..2 {
            let mean: f64 = set.rows().map(|r| r[j] as f64).sum::<f64>() / 100.0;
            assert!((mean - centers[0][j] as f64).abs() < 4.0 / 10.0);
        }
    }

    #[test]
    fn hand_checked_ground_truth() {
        let base = VectorSet::from_rows(&[[0.0f32, 0.0], [1.0, 0.0], [5.0, 0.0]]).unwrap();
        let q = VectorSet::from_rows(&[[0.4f32, 0.0]]).unwrap();
        let gt = exact_ground_truth(&base, &q, 2).unwrap();
        assert_eq!(gt.ids(0), &[0, 1]);
        assert!((gt.dists(0)[0] - 0.4).abs() < 1e-6);
        assert!((gt.dists(0)[1] - 0.6).abs() < 1e-6);

        let q = VectorSet::from_rows(&[[5.0f32, 0.0]]).unwrap();
        let gt = exact_ground_truth(&base, &q, 1).unwrap();
        assert_eq!(gt.ids(0), &[2]);
        assert_eq!(gt.dists(0)[0], 0.0);
        assert!(exact_ground_truth(&base, &q, 4).is_err());
    }

    #[test]
    fn ties_go_to_smaller_id() {
        let base = VectorSet::from_rows(&[[1.0f32], [-1.0], [1.0], [3.0]]).unwrap();
        let q = VectorSet::from_rows(&[[0.0f32]]).unwrap();
        let gt = exact_ground_truth(&base, &q, 2).unwrap();
        assert_eq!(gt.ids(0), &[0, 1]);
    }

    #[test]
    fn split_partitions_points() {
        let set = make_synthetic(30, 2, 3, 1.0, 1).unwrap();
        let (b, q) = split(&set, 10, 5).unwrap();
        assert_eq!((b.n(), q.n()), (20, 10));
        let mut all: Vec<Vec<u32>> = b
            .rows()
            .chain(q.rows())
            .map(|r| r.iter().map(|v| v.to_bits()).collect())
            .collect();
        let mut orig: Vec<Vec<u32>> = set
            .rows()
            .map(|r| r.iter().map(|v| v.to_bits()).collect())
            .collect();
        all.sort();
        orig.sort();
        assert_eq!(all, orig);
    }
}
