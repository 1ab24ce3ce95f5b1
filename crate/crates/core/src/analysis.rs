//! PCA of query sets and TP/FP scatter diagnostics.
#![allow(clippy::needless_range_loop)]

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::index::FpLabel;
use crate::vecdata::VectorSet;

/// Off-diagonal Frobenius norm (relative to the matrix norm) at which the
/// Jacobi sweeps stop.
pub const JACOBI_TOL: f64 = 1e-10;
const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `c` orthonormal rows of length `d`.
    pub components: Vec<Vec<f64>>,
    /// Sample variance along each component, non-increasing.
    pub explained_variance: Vec<f64>,
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues descending with matching unit eigenvectors.
pub fn symmetric_eigen(matrix: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = matrix.len();
    if matrix.iter().any(|r| r.len() != n) {
        return Err(invalid("matrix must be square"));
    }
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    // v[i][j]: component i of eigenvector j
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let norm: f64 = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    let off = |a: &[Vec<f64>]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[i][j] * a[i][j];
                }
            }
        }
        s.sqrt()
    };
    let mut sweeps = 0;
    while off(&a) > JACOBI_TOL * norm.max(f64::MIN_POSITIVE) {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::NonFinite("Jacobi iteration did not converge".into()));
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = order
        .iter()
        .map(|&j| {
            let mut col: Vec<f64> = (0..n).map(|i| v[i][j]).collect();
            // sign convention: largest-magnitude entry positive
            let lead = col
                .iter()
                .copied()
                .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            if lead < 0.0 {
                col.iter_mut().for_each(|x| *x = -*x);
            }
            col
        })
        .collect();
    Ok((values, vectors))
}

/// Sample covariance (divisor `n - 1`) and mean.
pub fn covariance(points: &VectorSet) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (n, d) = (points.n(), points.d());
    let mut mean = vec![0.0; d];
    for r in points.rows() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += *v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![vec![0.0; d]; d];
    for r in points.rows() {
        let c: Vec<f64> = r.iter().zip(&mean).map(|(v, m)| *v as f64 - m).collect();
        for i in 0..d {
            for j in i..d {
                cov[i][j] += c[i] * c[j];
            }
        }
    }
    let denom = (n - 1).max(1) as f64;
    for i in 0..d {
        for j in i..d {
            cov[i][j] /= denom;
            cov[j][i] = cov[i][j];
        }
    }
    (mean, cov)
}

pub fn fit_pca(points: &VectorSet, c: usize) -> Result<PcaModel> {
    if points.n() < 2 {
        return Err(invalid("PCA needs at least two points"));
    }
    if c == 0 || c > points.n().min(points.d()) {
        return Err(invalid(format!(
            "component count must be in [1, {}], got {c}",
            points.n().min(points.d())
        )));
    }
    let (mean, cov) = covariance(points);
    let (values, vectors) = symmetric_eigen(&cov)?;
    Ok(PcaModel {
        mean,
        components: vectors.into_iter().take(c).collect(),
        explained_variance: values.into_iter().take(c).map(|v| v.max(0.0)).collect(),
    })
}

/// Points expressed in principal-component coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub c: usize,
    pub data: Vec<f64>,
}

impl Projection {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.c..(i + 1) * self.c]
    }

    pub fn n(&self) -> usize {
        self.data.len() / self.c
    }

    pub fn to_vector_set(&self) -> Result<VectorSet> {
        VectorSet::new(self.c, self.data.iter().map(|v| *v as f32).collect())
    }
}

/// `(x - mean) . components^T` for every point.
pub fn project(model: &PcaModel, points: &VectorSet) -> Result<Projection> {
    if points.d() != model.mean.len() {
        return Err(Error::DimensionMismatch {
            expected: model.mean.len(),
            got: points.d(),
        });
    }
    let c = model.components.len();
    let mut data = Vec::with_capacity(points.n() * c);
    for r in points.rows() {
        let centered: Vec<f64> = r.iter().zip(&model.mean).map(|(v, m)| *v as f64 - m).collect();
        for comp in &model.components {
            data.push(comp.iter().zip(&centered).map(|(a, b)| a * b).sum());
        }
    }
    Ok(Projection { c, data })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub pc1: f64,
    pub pc2: f64,
    pub is_fp: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterTable {
    pub rows: Vec<ScatterRow>,
    /// Best single-threshold accuracy per component (pc1, pc2).
    pub component_scores: Vec<f64>,
    /// Maximum of `component_scores`.
    pub separability: f64,
    /// Only one class present; the score is trivially 1.
    pub single_class: bool,
}

/// Accuracy of the best rule `value <= t -> class A, else class B` over all
/// thresholds and both class assignments.
pub fn best_threshold_accuracy(values: &[f64], labels: &[bool]) -> f64 {
    let n = values.len();
    if n == 0 {
        return 1.0;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let total_fp = labels.iter().filter(|l| **l).count();
    let mut best = total_fp.max(n - total_fp);
    let mut left_fp = 0;
    for (pos, &i) in idx.iter().enumerate() {
        left_fp += labels[i] as usize;
        let left = pos + 1;
        if left < n && values[idx[left]] == values[i] {
            continue;
        }
        let left_tp = left - left_fp;
        let right_fp = total_fp - left_fp;
        let right_tp = (n - left) - right_fp;
        best = best.max(left_fp + right_tp).max(left_tp + right_fp);
    }
    best as f64 / n as f64
}

pub fn tp_fp_scatter(
    queries: &VectorSet,
    labels: &[FpLabel],
    model: &PcaModel,
) -> Result<ScatterTable> {
    if labels.len() != queries.n() {
        return Err(invalid(format!(
            "{} labels for {} queries",
            labels.len(),
            queries.n()
        )));
    }
    let proj = project(model, queries)?;
    let rows: Vec<ScatterRow> = (0..proj.n())
        .map(|i| {
            let r = proj.row(i);
            ScatterRow {
                pc1: r[0],
                pc2: r.get(1).copied().unwrap_or(0.0),
                is_fp: labels[i].is_fp,
            }
        })
        .collect();
    let is_fp: Vec<bool> = rows.iter().map(|r| r.is_fp).collect();
    let fp = is_fp.iter().filter(|b| **b).count();
    let single_class = fp == 0 || fp == rows.len();
    let comps = proj.c.min(2);
    let component_scores: Vec<f64> = (0..comps)
        .map(|j| {
            let vals: Vec<f64> = (0..proj.n()).map(|i| proj.row(i)[j]).collect();
            best_threshold_accuracy(&vals, &is_fp)
        })
        .collect();
    let separability = component_scores.iter().copied().fold(0.0, f64::max);
    Ok(ScatterTable {
        rows,
        component_scores,
        separability,
        single_class,
    })
}

pub fn write_scatter_csv<W: Write>(table: &ScatterTable, w: &mut W) -> Result<()> {
    writeln!(w, "pc1,pc2,is_fp")?;
    for r in &table.rows {
        writeln!(w, "{},{},{}", r.pc1, r.pc2, r.is_fp as u8)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label(i: usize, fp: bool) -> FpLabel {
        FpLabel {
            query_id: i,
            is_fp: fp,
            recall: if fp { 0.5 } else { 1.0 },
        }
    }

    #[test]
    fn diagonal_line_has_one_component() {
        let pts: Vec<[f32; 2]> = (0..20).map(|i| [i as f32, i as f32]).collect();
        let set = VectorSet::from_rows(&pts).unwrap();
        let m = fit_pca(&set, 2).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((m.components[0][0] - s).abs() < 1e-9);
        assert!((m.components[0][1] - s).abs() < 1e-9);
        assert!(m.explained_variance[1].abs() < 1e-9);
    }

    #[test]
    fn axis_aligned_data_gives_identity() {
        // every x appears with both y = 1 and y = -1, so x and y are uncorrelated
        let pts: Vec<[f32; 2]> = (0..50)
            .map(|i| {
                let t = (i / 2) as f32 - 12.0;
                [3.0 * t, if i % 2 == 0 { 1.0 } else { -1.0 }]
            })
            .collect();
        let set = VectorSet::from_rows(&pts).unwrap();
        let m = fit_pca(&set, 2).unwrap();
        assert!((m.components[0][0].abs() - 1.0).abs() < 1e-9);
        assert!((m.components[1][1].abs() - 1.0).abs() < 1e-9);
        assert!(m.explained_variance[0] > m.explained_variance[1]);
    }

    #[test]
    fn mean_projects_to_origin() {
        let set = crate::vecdata::make_synthetic(40, 5, 2, 1.0, 3).unwrap();
        let m = fit_pca(&set, 3).unwrap();
        let mean: Vec<f32> = m.mean.iter().map(|v| *v as f32).collect();
        let p = project(&m, &VectorSet::from_rows(&[mean]).unwrap()).unwrap();
        assert!(p.row(0).iter().all(|v| v.abs() < 1e-5));
    }

    #[test]
    fn degenerate_points_have_zero_variance() {
        let set = VectorSet::from_rows(&[[2.0f32, 2.0, 2.0]; 5]).unwrap();
        let m = fit_pca(&set, 3).unwrap();
        assert!(m.explained_variance.iter().all(|v| *v == 0.0));
        assert!(fit_pca(&set, 4).is_err());
        let one = VectorSet::from_rows(&[[1.0f32, 2.0]]).unwrap();
        assert!(fit_pca(&one, 1).is_err());
    }

    #[test]
    fn single_class_scores_one() {
        let set = crate::vecdata::make_synthetic(30, 3, 2, 1.0, 1).unwrap();
        let m = fit_pca(&set, 2).unwrap();
        let labels: Vec<FpLabel> = (0..30).map(|i| label(i, false)).collect();
        let t = tp_fp_scatter(&set, &labels, &m).unwrap();
        assert_eq!(t.separability, 1.0);
        assert!(t.single_class);
        assert_eq!(t.rows.len(), 30);
    }

    #[test]
    fn perfect_split_scores_one() {
        let pts: Vec<[f32; 2]> = (0..40).map(|i| [i as f32, ((i * 7) % 5) as f32 * 0.1]).collect();
        let set = VectorSet::from_rows(&pts).unwrap();
        let m = fit_pca(&set, 2).unwrap();
        let labels: Vec<FpLabel> = (0..40).map(|i| label(i, i >= 25)).collect();
        let t = tp_fp_scatter(&set, &labels, &m).unwrap();
        assert_eq!(t.component_scores[0], 1.0);
        assert!(!t.single_class);
    }

    #[test]
    fn threshold_accuracy_handles_ties() {
        // identical values cannot be separated
        assert_eq!(best_threshold_accuracy(&[1.0, 1.0], &[true, false]), 0.5);
        assert_eq!(best_threshold_accuracy(&[1.0, 2.0], &[true, false]), 1.0);
    }
}
