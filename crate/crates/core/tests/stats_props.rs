use gapbench_core::model::{LatencySample, PrecisionMode, RunKey, RunRecord, RunStatus};
use gapbench_core::stats::{dominates, latency_stats, pareto_front, summarize, FrontPoint};
use proptest::prelude::*;

/// Smallest sample value with at least `pct`% of samples at or below it.
fn covering_quantile(v: &[f64], pct: f64) -> f64 {
    let mut sorted = v.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    *sorted
        .iter()
        .find(|&&x| sorted.iter().filter(|&&y| y <= x).count() as f64 * 100.0 >= pct * n)
        .unwrap()
}

fn brute_front(points: &[FrontPoint<usize>]) -> Vec<usize> {
    let mut keep: Vec<usize> = (0..points.len())
        .filter(|&i| !points.iter().any(|q| dominates(q, &points[i])))
        .collect();
    keep.sort();
    keep
}

fn record(batch: u32, latencies: Vec<f64>) -> RunRecord {
    RunRecord {
        key: RunKey {
            device: "d".into(),
            model: "m".into(),
            precision: PrecisionMode::Fp16,
            batch_size: batch,
            sweep_index: 1,
            repeat_index: 1,
        },
        latencies: latencies
            .into_iter()
            .enumerate()
            .map(|(i, latency_s)| LatencySample {
                iteration_index: i as u32,
                latency_s,
            })
            .collect(),
        telemetry: vec![],
        status: RunStatus::Ok,
        warnings: vec![],
    }
}

fn latencies() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-5f64..1.0, 2..400)
}

proptest! {
    #[test]
    fn p99_is_the_covering_quantile(v in latencies()) {
        prop_assert_eq!(latency_stats(&v).unwrap().p99, covering_quantile(&v, 99.0));
    }

    #[test]
    fn median_is_the_lower_covering_half(v in latencies()) {
        prop_assert_eq!(latency_stats(&v).unwrap().median, covering_quantile(&v, 50.0));
    }

    #[test]
    fn ordering_bounds(v in latencies()) {
        let s = latency_stats(&v).unwrap();
        prop_assert!(s.median <= s.mean + s.std);
        prop_assert!(s.median <= s.p99);
    }

    #[test]
    fn scale_equivariance(v in latencies(), k in prop::sample::select(vec![0.5f64, 2.0, 4.0, 0.125])) {
        // powers of two keep the scaling exact in binary
        let a = summarize(&[record(8, v.clone())]).unwrap();
        let b = summarize(&[record(8, v.iter().map(|x| x * k).collect())]).unwrap();
        prop_assert_eq!(b.median_latency_s, a.median_latency_s * k);
        prop_assert_eq!(b.p99_latency_s, a.p99_latency_s * k);
        prop_assert!((b.mean_latency_s - a.mean_latency_s * k).abs() <= 1e-12 * b.mean_latency_s);
        prop_assert!((b.std_latency_s - a.std_latency_s * k).abs() <= 1e-9 * b.mean_latency_s);
        prop_assert!((b.throughput_ips - a.throughput_ips / k).abs() <= 1e-12 * a.throughput_ips);
    }

    #[test]
    fn pareto_matches_dominance_oracle(
        raw in prop::collection::vec((1u32..40, 1u32..40), 0..120)
    ) {
        // coarse grid forces ties on either coordinate
        let points: Vec<FrontPoint<usize>> = raw
            .iter()
            .enumerate()
            .map(|(i, &(l, t))| FrontPoint { latency_s: f64::from(l) * 1e-3, throughput_ips: f64::from(t), tag: i })
            .collect();
        let front = pareto_front(&points);
        let mut tags: Vec<usize> = front.iter().map(|p| p.tag).collect();
        prop_assert!(front.windows(2).all(|w| w[0].latency_s <= w[1].latency_s));
        tags.sort();
        prop_assert_eq!(&tags, &brute_front(&points));
        let again: Vec<usize> = pareto_front(&front).iter().map(|p| p.tag).collect();
        prop_assert_eq!(again, front.iter().map(|p| p.tag).collect::<Vec<_>>());
        for (i, p) in points.iter().enumerate() {
            if !tags.contains(&i) {
                prop_assert!(front.iter().any(|q| dominates(q, p)));
            }
        }
    }
}
