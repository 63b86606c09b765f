//! Serialized forms survive a round trip unchanged.

use gapbench_core::model::{
    LatencySample, MetricSummary, PrecisionMode, RunKey, RunRecord, RunStatus, TelemetrySample,
};
use gapbench_core::presets::default_plan;
use gapbench_core::{ConfigKey, SweepPlan};
use proptest::prelude::*;

fn precision() -> impl Strategy<Value = PrecisionMode> {
    prop::sample::select(PrecisionMode::ALL.to_vec())
}

fn key() -> impl Strategy<Value = RunKey> {
    (
        "[a-z0-9-]{1,12}",
        "[a-z0-9]{1,12}",
        precision(),
        1u32..4096,
        1u32..20,
        1u32..5,
    )
        .prop_map(
            |(device, model, precision, batch_size, sweep_index, repeat_index)| RunKey {
                device,
                model,
                precision,
                batch_size,
                sweep_index,
                repeat_index,
            },
        )
}

fn telemetry() -> impl Strategy<Value = TelemetrySample> {
    (
        0.0f64..1e5,
        any::<u64>(),
        0.0f64..500.0,
        20.0f64..100.0,
        0.0f64..=100.0,
    )
        .prop_map(
            |(timestamp_s, mem_used_bytes, power_w, temp_c, util_pct)| TelemetrySample {
                timestamp_s,
                mem_used_bytes,
                power_w,
                temp_c,
                util_pct,
            },
        )
}

fn status() -> impl Strategy<Value = RunStatus> {
    prop::sample::select(vec![RunStatus::Ok, RunStatus::Oom, RunStatus::BackendError])
}

proptest! {
    #[test]
    fn run_record_roundtrips(
        key in key(),
        lat in prop::collection::vec(1e-7f64..10.0, 0..50),
        tel in prop::collection::vec(telemetry(), 0..10),
        status in status(),
        warnings in prop::collection::vec("[ -~]{0,30}", 0..3),
    ) {
        let record = RunRecord {
            key,
            latencies: lat
                .into_iter()
                .enumerate()
                .map(|(i, latency_s)| LatencySample { iteration_index: i as u32, latency_s })
                .collect(),
            telemetry: tel,
            status,
            warnings,
        };
        let line = serde_json::to_string(&record).unwrap();
        prop_assert!(!line.contains('\n'));
        let back: RunRecord = serde_json::from_str(&line).unwrap();
        prop_assert_eq!(back, record);
    }

    #[test]
    fn summary_roundtrips(
        key in key(),
        stats in prop::array::uniform6(0.0f64..1e6),
        mem in any::<u64>(),
        reps in 1u32..100,
    ) {
        let s = MetricSummary {
            key: ConfigKey {
                device: key.device,
                model: key.model,
                precision: key.precision,
                batch_size: key.batch_size,
            },
            median_latency_s: stats[0],
            mean_latency_s: stats[1],
            std_latency_s: stats[2],
            p99_latency_s: stats[3],
            throughput_ips: stats[4],
            peak_mem_bytes: mem,
            avg_power_w: stats[5],
            repeats_aggregated: reps,
        };
        let back: MetricSummary = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        prop_assert_eq!(back, s);
    }
}

#[test]
fn record_field_names_are_stable() {
    let record = RunRecord {
        key: RunKey {
            device: "sim-t4".into(),
            model: "resnet18".into(),
            precision: PrecisionMode::Int8,
            batch_size: 32,
            sweep_index: 1,
            repeat_index: 2,
        },
        latencies: vec![LatencySample {
            iteration_index: 0,
            latency_s: 0.5,
        }],
        telemetry: vec![],
        status: RunStatus::BackendError,
        warnings: vec![],
    };
    assert_eq!(
        serde_json::to_string(&record).unwrap(),
        r#"{"device":"sim-t4","model":"resnet18","precision":"INT8","batch_size":32,"sweep_index":1,"repeat_index":2,"latencies":[{"iteration_index":0,"latency_s":0.5}],"telemetry":[],"status":"backend_error"}"#
    );
}

#[test]
fn plan_roundtrips() {
    let plan = default_plan().unwrap();
    let back: SweepPlan = serde_json::from_str(&serde_json::to_string(&plan).unwrap()).unwrap();
    assert_eq!(back, plan);
}
