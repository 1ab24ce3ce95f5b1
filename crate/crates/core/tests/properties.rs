use proptest::prelude::*;

use knnrobust::analysis::best_threshold_accuracy;
use knnrobust::attack::{compute_reward, AgentConfig, JitterSpace, LOGVAR_MAX, LOGVAR_MIN};
use knnrobust::bench::{pareto_table, BenchRun};
use knnrobust::metric::sq_dist;
use knnrobust::vecdata::{exact_ground_truth, read_csv, read_vds, write_csv, write_vds};
use knnrobust::{build, label_fp, IndexSpec, VectorSet};

fn vector_set(max_n: usize, max_d: usize) -> impl Strategy<Value = VectorSet> {
    (1..=max_n, 1..=max_d).prop_flat_map(|(n, d)| {
        // small integer grid mixed with fractions: plenty of exact ties
        prop::collection::vec(
            prop_oneof![(-4i32..=4).prop_map(|v| v as f32), -4.0f32..4.0],
            n * d,
        )
        .prop_map(move |data| VectorSet::new(d, data).unwrap())
    })
}

fn set_and_query() -> impl Strategy<Value = (VectorSet, Vec<f32>, usize)> {
    vector_set(120, 6).prop_flat_map(|set| {
        let d = set.d();
        let n = set.n();
        (Just(set), prop::collection::vec(-5.0f32..5.0, d), 1..=n.min(12))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn vds_round_trip(set in vector_set(40, 9)) {
        let mut buf = Vec::new();
        write_vds(&set, &mut buf).unwrap();
        prop_assert_eq!(read_vds(buf.as_slice()).unwrap(), set);
    }

    #[test]
    fn csv_round_trip(set in vector_set(40, 9)) {
        let mut buf = Vec::new();
        write_csv(&set, &mut buf).unwrap();
        prop_assert_eq!(read_csv(buf.as_slice()).unwrap(), set);
    }

    #[test]
    fn sq_dist_is_a_squared_metric(a in prop::collection::vec(-1e3f32..1e3, 1..40),
                                   seed in any::<u64>()) {
        let b: Vec<f32> = a.iter().enumerate()
            .map(|(i, v)| v + ((seed >> (i % 64)) & 7) as f32 - 3.5).collect();
        prop_assert_eq!(sq_dist(&a, &b), sq_dist(&b, &a));
        prop_assert_eq!(sq_dist(&a, &a), 0.0);
        prop_assert!(sq_dist(&a, &b) >= 0.0);
    }

    #[test]
    fn ground_truth_rows_are_sorted_and_distinct((set, q, k) in set_and_query()) {
        let queries = VectorSet::new(set.d(), q).unwrap();
        let gt = exact_ground_truth(&set, &queries, k).unwrap();
        let ids = gt.ids(0);
        let dists = gt.dists(0);
        for w in dists.windows(2) { prop_assert!(w[0] <= w[1]); }
        let mut sorted = ids.to_vec();
        sorted.sort();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), k);
        // nothing outside the answer is strictly closer than its last element
        let kth = dists[k - 1];
        for (i, r) in set.rows().enumerate() {
            if !ids.contains(&(i as u32)) {
                prop_assert!(sq_dist(r, queries.row(0)).sqrt() >= kth);
            }
        }
    }

    #[test]
    fn exact_indexes_equal_brute((set, q, k) in set_and_query(),
                                 leaf in 1u64..20, trees in 1u64..4, seed in 0u64..1000) {
        let brute = build(&IndexSpec::brute(), &set).unwrap();
        let want = brute.query(&q, k).unwrap();
        let ball = build(&IndexSpec::balltree(leaf, None).unwrap(), &set).unwrap();
        prop_assert_eq!(ball.query(&q, k).unwrap(), want.clone());
        let spec = IndexSpec::kdforest(trees, set.n() as u64).unwrap()
            .with("seed", seed).unwrap()
            .with("leaf_size", leaf).unwrap();
        let forest = build(&spec, &set).unwrap();
        prop_assert_eq!(forest.query(&q, k).unwrap(), want);
    }

    #[test]
    fn approximate_answers_are_well_formed((set, q, k) in set_and_query(),
                                           checks in 1u64..30, budget in 1u64..10) {
        let queries = VectorSet::new(set.d(), q.clone()).unwrap();
        let gt = exact_ground_truth(&set, &queries, k).unwrap();
        for spec in [IndexSpec::kdforest(2, checks).unwrap(),
                     IndexSpec::balltree(4, Some(budget)).unwrap()] {
            let idx = build(&spec, &set).unwrap();
            let res = idx.query(&q, k).unwrap();
            prop_assert_eq!(res.ids.len(), k);
            for w in res.dists.windows(2) { prop_assert!(w[0] <= w[1]); }
            for (id, d) in res.ids.iter().zip(&res.dists) {
                prop_assert_eq!(*d, sq_dist(set.row(*id as usize), &q).sqrt());
            }
            let label = label_fp(0, &res, gt.row(0), 0.0).unwrap();
            prop_assert!((0.0..=1.0).contains(&label.recall));
            prop_assert_eq!(label.is_fp, label.recall < 1.0);
        }
    }

    #[test]
    fn jitter_space_updates_stay_valid(
        (mu, var) in (1usize..8).prop_flat_map(|d| (
            prop::collection::vec(-10.0f64..10.0, d),
            prop::collection::vec(1e-6f64..1e6, d))),
        scale in -1e3f64..1e3,
    ) {
        let space = JitterSpace::new(mu.clone(), var.clone()).unwrap();
        let d = mu.len();
        prop_assert_eq!(&space.apply(&vec![0.0; d], &vec![0.0; d]).unwrap(), &space);
        let next = space.apply(&vec![scale; d], &vec![scale; d]).unwrap();
        for s in &next.sigma_diag {
            prop_assert!(s.is_finite() && *s > 0.0);
            prop_assert!(s.ln() >= LOGVAR_MIN - 1e-9 && s.ln() <= LOGVAR_MAX + 1e-9);
        }
    }

    #[test]
    fn reward_is_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let cfg = AgentConfig::default();
        let floor = cfg.fp_floor();
        let (ra, rb) = (compute_reward(a, &cfg), compute_reward(b, &cfg));
        if a.max(floor) < b.max(floor) { prop_assert!(ra < rb); }
        prop_assert!(ra.is_finite() && ra <= cfg.reward_constant);
    }

    #[test]
    fn threshold_accuracy_bounds(pairs in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 1..60)) {
        let (v, l): (Vec<f64>, Vec<bool>) = pairs.into_iter().unzip();
        let acc = best_threshold_accuracy(&v, &l);
        let fp = l.iter().filter(|b| **b).count();
        let majority = fp.max(l.len() - fp) as f64 / l.len() as f64;
        prop_assert!(acc >= majority && acc <= 1.0);
    }

    #[test]
    fn spec_text_round_trips(trees in 1u64..10, checks in 1u64..1000, top in 1u64..8) {
        let spec = IndexSpec::kdforest(trees, checks).unwrap().with("top_dims", top).unwrap();
        let parsed: IndexSpec = spec.to_string().parse().unwrap();
        prop_assert_eq!(parsed, spec);
    }

    #[test]
    fn pareto_front_is_nonempty_and_undominated(
        pts in prop::collection::vec((0u8..5, 1u8..6), 1..15)
    ) {
        let runs: Vec<BenchRun> = pts.iter().enumerate().map(|(i, (r, q))| BenchRun {
            spec: IndexSpec::kdforest(1, i as u64 + 1).unwrap(),
            build_seconds: 0.0,
            per_query: vec![],
            qps: *q as f64,
            mean_recall: *r as f64 / 4.0,
            error: None,
        }).collect();
        let table = pareto_table(&runs).unwrap();
        prop_assert!(table.iter().any(|r| r.pareto));
        let best_recall = table.iter().map(|r| r.mean_recall).fold(0.0, f64::max);
        prop_assert!(table.iter().any(|r| r.pareto && r.mean_recall == best_recall));
    }
}
