//! Recall versus throughput benchmarks.
//!
//! Queries run on the calling thread so throughput numbers are comparable
//! between indexes.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::index::{build, label_fp, IndexSpec};
use crate::vecdata::{GroundTruth, VectorSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryMeasure {
    pub recall: f64,
    pub latency_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRun {
    pub spec: IndexSpec,
    pub build_seconds: f64,
    pub per_query: Vec<QueryMeasure>,
    pub qps: f64,
    pub mean_recall: f64,
    /// Set when building or querying failed; the measurements are then empty.
    pub error: Option<String>,
}

impl BenchRun {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }

    fn from_error(spec: &IndexSpec, err: crate::Error) -> Self {
        BenchRun {
            spec: spec.clone(),
            build_seconds: 0.0,
            per_query: Vec::new(),
            qps: 0.0,
            mean_recall: 0.0,
            error: Some(err.to_string()),
        }
    }
}

fn bench_one(
    base: &VectorSet,
    queries: &VectorSet,
    truth: &GroundTruth,
    spec: &IndexSpec,
    k: usize,
    epsilon: f64,
) -> Result<BenchRun> {
    let index = build(spec, base)?;
    let mut per_query = Vec::with_capacity(queries.n());
    let mut total = 0.0;
    for (i, q) in queries.rows().enumerate() {
        let t = Instant::now();
        let res = index.query(q, k)?;
        let latency = t.elapsed().as_secs_f64();
        total += latency;
        let label = label_fp(i, &res, truth.row(i), epsilon)?;
        per_query.push(QueryMeasure {
            recall: label.recall,
            latency_seconds: latency,
        });
    }
    let mean_recall = per_query.iter().map(|m| m.recall).sum::<f64>() / per_query.len() as f64;
    Ok(BenchRun {
        spec: spec.clone(),
        build_seconds: index.build_seconds(),
        qps: per_query.len() as f64 / total.max(f64::MIN_POSITIVE),
        mean_recall,
        per_query,
        error: None,
    })
}

/// Builds and queries every spec in turn. A spec that fails to build or query
/// produces a run with `error` set instead of aborting the benchmark.
pub fn run_bench(
    base: &VectorSet,
    queries: &VectorSet,
    truth: &GroundTruth,
    specs: &[IndexSpec],
    k: usize,
    epsilon: f64,
) -> Result<Vec<BenchRun>> {
    if truth.n() != queries.n() || truth.k() != k {
        return Err(invalid(format!(
            "ground truth is {}x{}, expected {}x{k}",
            truth.n(),
            truth.k(),
            queries.n()
        )));
    }
    if queries.n() == 0 {
        return Err(invalid("no queries to benchmark"));
    }
    Ok(specs
        .iter()
        .map(|spec| {
            bench_one(base, queries, truth, spec, k, epsilon)
                .unwrap_or_else(|e| BenchRun::from_error(spec, e))
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoRow {
    pub spec_label: String,
    pub mean_recall: f64,
    pub qps: f64,
    pub build_seconds: f64,
    pub pareto: bool,
}

/// `a` dominates `b` when it is at least as good on recall and throughput and
/// strictly better on one of them.
pub fn dominates(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 >= b.0 && a.1 >= b.1 && (a.0 > b.0 || a.1 > b.1)
}

/// Successful runs sorted by recall (descending, ties by QPS descending) with
/// non-dominated rows flagged. Failed runs are left out.
pub fn pareto_table(runs: &[BenchRun]) -> Result<Vec<ParetoRow>> {
    let ok: Vec<&BenchRun> = runs.iter().filter(|r| !r.failed()).collect();
    if ok.is_empty() {
        return Err(invalid("pareto table needs at least one successful run"));
    }
    // Sweep in recall order: a row is dominant iff its QPS beats every row
    // with strictly higher recall and it is not tied-and-beaten at its recall.
    let mut idx: Vec<usize> = (0..ok.len()).collect();
    idx.sort_by(|&a, &b| {
        ok[b].mean_recall
            .total_cmp(&ok[a].mean_recall)
            .then(ok[b].qps.total_cmp(&ok[a].qps))
            .then(a.cmp(&b))
    });
    let mut rows = Vec::with_capacity(ok.len());
    let mut best_qps = f64::NEG_INFINITY;
    let mut i = 0;
    while i < idx.len() {
        let recall = ok[idx[i]].mean_recall;
        let mut j = i;
        while j < idx.len() && ok[idx[j]].mean_recall == recall {
            j += 1;
        }
        // within a recall group the first row has the maximal QPS
        let group_max = ok[idx[i]].qps;
        for &r in &idx[i..j] {
            let run = ok[r];
            rows.push(ParetoRow {
                spec_label: run.spec.label(),
                mean_recall: run.mean_recall,
                qps: run.qps,
                build_seconds: run.build_seconds,
                pareto: run.qps == group_max && run.qps > best_qps,
            });
        }
        best_qps = best_qps.max(group_max);
        i = j;
    }
    Ok(rows)
}

pub fn write_pareto_csv<W: Write>(rows: &[ParetoRow], w: &mut W) -> Result<()> {
    writeln!(w, "spec_label,mean_recall,qps,build_seconds,pareto_flag")?;
    for r in rows {
        writeln!(
            w,
            "\"{}\",{},{},{},{}",
            r.spec_label, r.mean_recall, r.qps, r.build_seconds, r.pareto as u8
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vecdata::{exact_ground_truth, make_synthetic, split};

    fn fake(label_checks: u64, recall: f64, qps: f64) -> BenchRun {
        BenchRun {
            spec: IndexSpec::kdforest(1, label_checks).unwrap(),
            build_seconds: 0.0,
            per_query: vec![],
            qps,
            mean_recall: recall,
            error: None,
        }
    }

    #[test]
    fn single_run_is_dominant() {
        let t = pareto_table(&[fake(1, 0.5, 10.0)]).unwrap();
        assert!(t[0].pareto);
    }

    #[test]
    fn worse_on_both_axes_is_dominated() {
        let t = pareto_table(&[fake(1, 0.8, 50.0), fake(2, 0.9, 100.0)]).unwrap();
        assert_eq!(t[0].mean_recall, 0.9);
        assert!(t[0].pareto);
        assert!(!t[1].pareto);
    }

    #[test]
    fn exact_duplicates_are_both_dominant() {
        let t = pareto_table(&[fake(1, 0.8, 50.0), fake(2, 0.8, 50.0)]).unwrap();
        assert!(t.iter().all(|r| r.pareto));
    }

    #[test]
    fn failed_runs_are_recorded_and_skipped() {
        let set = make_synthetic(200, 4, 2, 1.0, 1).unwrap();
        let (base, q) = split(&set, 10, 2).unwrap();
        let gt = exact_ground_truth(&base, &q, 5).unwrap();
        // a base of the wrong dimension makes every query fail
        let other = make_synthetic(200, 3, 2, 1.0, 1).unwrap();
        let runs = run_bench(&base, &q, &gt, &[IndexSpec::brute()], 5, 0.0).unwrap();
        assert_eq!(runs[0].mean_recall, 1.0);
        let bad = run_bench(&other, &q, &gt, &[IndexSpec::brute()], 5, 0.0).unwrap();
        assert!(bad[0].failed());
        assert!(pareto_table(&bad).is_err());
    }

    #[test]
    fn csv_has_header() {
        let mut out = Vec::new();
        write_pareto_csv(&pareto_table(&[fake(3, 1.0, 1.0)]).unwrap(), &mut out).unwrap();
        let s = String::from_utf8(out).unwrap();
        assert!(s.starts_with("spec_label,mean_recall,qps,build_seconds,pareto_flag\n"));
        assert!(s.contains("kdforest"));
    }
}
