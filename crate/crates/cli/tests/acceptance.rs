//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero if any
//! criterion fails.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use gapbench_core::golden::{check_golden, load_golden};
use gapbench_core::model::{ConfigKey, MetricSummary, PrecisionMode, RunKey, RunStatus};
use gapbench_core::presets::{default_plan, device_preset, model_registry};
use gapbench_core::protocol::Backend;
use gapbench_core::sim::{sim_latency, sim_memory, SimBackend, SimFactory};
use gapbench_core::stats::{
    dominates, latency_stats, pareto_front, performance_per_watt, FrontPoint, StatsError,
};
use gapbench_core::sweep::{execute_sweep, run_order, run_seed, MemorySink, SweepOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_gapbench");
const DEFAULT_RUNS: usize = 2 * 3 * 3 * 11 * 10 * 3;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn golden_regression() -> Outcome {
    let start = Instant::now();
    let data = load_golden().map_err(|e| e.to_string())?;
    let report = check_golden(&data);
    let elapsed = start.elapsed();
    if let Some(c) = report.checks.iter().find(|c| !c.passed) {
        return Err(format!(
            "{} {}: {}/{} -> {:.2}, printed {:.2}",
            c.platform, c.model, c.throughput_ips, c.baseline_ips, c.recomputed, c.printed
        ));
    }
    ensure(report.checks.len() == 12, || {
        format!("{} checks, expected 12", report.checks.len())
    })?;
    ensure(elapsed < Duration::from_secs(1), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!("12/12 speedups match in {elapsed:?}"))
}

fn hardware_statement() -> Outcome {
    // Absolute accelerator numbers are not reproducible here; they are
    // covered by the golden table plus the simulator properties. Check that
    // both are wired to the same published peaks.
    let data = load_golden().map_err(|e| e.to_string())?;
    for (preset, label) in [("t4.sim", "T4"), ("l4.sim", "L4")] {
        let profile = device_preset(preset).ok_or("missing preset")?;
        let peaks = data
            .theoretical_peaks
            .iter()
            .find(|p| p.device == label)
            .ok_or_else(|| format!("no theoretical peaks for {label}"))?;
        for p in PrecisionMode::ALL {
            let sim = profile.spec.peak_ops_per_s(p);
            let published = peaks.get(p) * 1e12;
            ensure(sim == published, || {
                format!("{preset} {p}: {sim} vs {published}")
            })?;
        }
    }
    Ok("absolute GPU numbers covered by the golden table; simulator peaks match it".into())
}

fn percentile_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    for case in 0..1000 {
        let n = rng.random_range(2..=2000usize);
        let tied = rng.random_bool(0.3);
        let v: Vec<f64> = (0..n)
            .map(|_| {
                if tied {
                    f64::from(rng.random_range(1..20u32)) * 1e-3
                } else {
                    rng.random_range(1e-5..1.0)
                }
            })
            .collect();
        let mut sorted = v.clone();
        sorted.sort_by(f64::total_cmp);
        // first sorted position whose cumulative share covers the percentile
        let covering = |pct: usize| sorted[(0..n).find(|&i| (i + 1) * 100 >= pct * n).unwrap()];
        let s = latency_stats(&v).map_err(|e| e.to_string())?;
        ensure(s.p99 == covering(99), || {
            format!("case {case} n={n}: p99 {} vs {}", s.p99, covering(99))
        })?;
        ensure(s.median == covering(50), || {
            format!("case {case} n={n}: median {} vs {}", s.median, covering(50))
        })?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(10), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!("1000 vectors in {elapsed:?}"))
}

fn pareto_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0002);
    for case in 0..500 {
        let n = rng.random_range(0..=300usize);
        let coarse = rng.random_bool(0.5);
        let points: Vec<FrontPoint<usize>> = (0..n)
            .map(|tag| {
                let (l, t) = if coarse {
                    (
                        f64::from(rng.random_range(1..30u32)) * 1e-3,
                        f64::from(rng.random_range(1..30u32)),
                    )
                } else {
                    (rng.random_range(1e-4..1.0), rng.random_range(1.0..1e5))
                };
                FrontPoint {
                    latency_s: l,
                    throughput_ips: t,
                    tag,
                }
            })
            .collect();
        let expected: BTreeSet<usize> = (0..n)
            .filter(|&i| !points.iter().any(|q| dominates(q, &points[i])))
            .collect();
        let front = pareto_front(&points);
        let got: BTreeSet<usize> = front.iter().map(|p| p.tag).collect();
        ensure(got.len() == front.len() && got == expected, || {
            format!("case {case}: front {got:?} vs oracle {expected:?}")
        })?;
        let again: Vec<usize> = pareto_front(&front).iter().map(|p| p.tag).collect();
        ensure(
            again == front.iter().map(|p| p.tag).collect::<Vec<_>>(),
            || format!("case {case}: not idempotent"),
        )?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(10), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!("500 sets in {elapsed:?}"))
}

fn full_default_sweep() -> Outcome {
    let plan = default_plan().map_err(|e| e.to_string())?;
    let start = Instant::now();
    let sink = MemorySink::new();
    execute_sweep(
        &plan,
        &SimFactory { seed: plan.seed },
        &sink,
        &SweepOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let records = sink.into_records();
    ensure(plan.total_runs() == DEFAULT_RUNS, || {
        format!("plan has {} runs", plan.total_runs())
    })?;
    ensure(records.len() == DEFAULT_RUNS, || {
        format!("{} records", records.len())
    })?;

    let expected: Vec<RunKey> = plan
        .devices
        .iter()
        .flat_map(|d| run_order(&plan, &d.spec.name))
        .collect();
    let got: Vec<&RunKey> = records.iter().map(|r| &r.key).collect();
    ensure(got.iter().copied().eq(expected.iter()), || {
        "records out of plan order".into()
    })?;

    for r in &records {
        ensure(r.status == RunStatus::Ok, || {
            format!("{} has status {:?}", r.key, r.status)
        })?;
        let indices: Vec<u32> = r.latencies.iter().map(|s| s.iteration_index).collect();
        ensure(indices == (0..plan.timed_iters).collect::<Vec<_>>(), || {
            format!("{} has {} latencies", r.key, r.latencies.len())
        })?;
    }

    // Re-derive one run directly: the stream of warm-up plus timed draws,
    // of which only the tail may appear in the record.
    let probe = &records[records.len() / 2 + 7];
    let profile = plan
        .devices
        .iter()
        .find(|d| d.spec.name == probe.key.device)
        .ok_or("probe device missing")?;
    let model = plan
        .models
        .iter()
        .find(|m| m.name == probe.key.model)
        .ok_or("probe model missing")?;
    let mut backend = SimBackend::open(profile, plan.seed).map_err(|e| e.to_string())?;
    backend
        .load_model(model, probe.key.precision)
        .map_err(|e| e.to_string())?;
    backend.prepare_engine().map_err(|e| e.to_string())?;
    backend
        .alloc(probe.key.batch_size, Some(run_seed(plan.seed, &probe.key)))
        .map_err(|e| e.to_string())?;
    let stream = backend
        .infer(plan.warmup_iters + plan.timed_iters)
        .map_err(|e| e.to_string())?;
    let (warm, timed) = stream.split_at(plan.warmup_iters as usize);
    let recorded: Vec<f64> = probe.latencies.iter().map(|s| s.latency_s).collect();
    ensure(
        timed
            .iter()
            .map(|s| s.latency_s)
            .eq(recorded.iter().copied()),
        || {
            format!(
                "{}: latencies do not match the post-warm-up draws",
                probe.key
            )
        },
    )?;
    ensure(
        warm.iter().all(|w| !recorded.contains(&w.latency_s)),
        || format!("{}: a warm-up draw leaked into the record", probe.key),
    )?;

    ensure(elapsed < Duration::from_secs(300), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "{} records in plan order, no warm-up leakage, {elapsed:.1?}",
        records.len()
    ))
}

fn simulator_properties() -> Outcome {
    let plan = default_plan().map_err(|e| e.to_string())?;
    let batches = &plan.batch_sizes;
    let t4 = device_preset("t4.sim").ok_or("missing t4")?;
    let l4 = device_preset("l4.sim").ok_or("missing l4")?;
    let models = model_registry();
    let thr = |p: &_, m: &_, prec, b: u32| -> Result<f64, String> {
        Ok(f64::from(b) / sim_latency(p, m, prec, b).map_err(|e| e.to_string())?)
    };
    let knee = |p: &_, m: &_, prec| -> Result<u32, String> {
        let curve: Vec<f64> = batches
            .iter()
            .map(|&b| thr(p, m, prec, b))
            .collect::<Result<_, _>>()?;
        let max = curve.iter().cloned().fold(0.0, f64::max);
        Ok(batches[curve.iter().position(|&t| t >= 0.95 * max).unwrap()])
    };

    let mut knees = Vec::new();
    let mut max_growth = 0.0f64;
    for m in &models {
        for prec in PrecisionMode::ALL {
            let (kt, kl) = (knee(&t4, m, prec)?, knee(&l4, m, prec)?);
            ensure(kl < kt, || {
                format!("(a) {} {prec}: L4 knee {kl} not below T4 knee {kt}", m.name)
            })?;
            knees.push(format!("{}/{prec} {kl}<{kt}", m.name));
        }
        for dev in [&t4, &l4] {
            for &b in batches {
                let (f32_, f16_, i8_) = (
                    thr(dev, m, PrecisionMode::Fp32, b)?,
                    thr(dev, m, PrecisionMode::Fp16, b)?,
                    thr(dev, m, PrecisionMode::Int8, b)?,
                );
                ensure(i8_ > f16_ && f16_ > f32_, || {
                    format!(
                        "(b) {} {} b={b}: {i8_} {f16_} {f32_}",
                        dev.spec.name, m.name
                    )
                })?;
            }
            for prec in PrecisionMode::ALL {
                let base = sim_memory(&dev.spec, m, prec, 1) as f64;
                let growth = (sim_memory(&dev.spec, m, prec, 512) as f64 - base) / base;
                max_growth = max_growth.max(growth);
                ensure(growth < 0.15, || {
                    format!(
                        "(c) {} {} {prec}: memory grows {:.1}%",
                        dev.spec.name,
                        m.name,
                        growth * 100.0
                    )
                })?;
                let lat: Vec<f64> = batches
                    .iter()
                    .map(|&b| sim_latency(dev, m, prec, b).map_err(|e| e.to_string()))
                    .collect::<Result<_, _>>()?;
                ensure(lat.windows(2).all(|w| w[0] < w[1]), || {
                    format!(
                        "(d) {} {} {prec}: latency not increasing",
                        dev.spec.name, m.name
                    )
                })?;
            }
        }
    }
    Ok(format!(
        "95% knees {}; max memory growth {:.1}%",
        knees.join(", "),
        max_growth * 100.0
    ))
}

fn ppw_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0003);
    let summary = |throughput_ips: f64, avg_power_w: f64| MetricSummary {
        key: ConfigKey {
            device: "sim-l4".into(),
            model: "resnet50".into(),
            precision: PrecisionMode::Fp16,
            batch_size: 64,
        },
        median_latency_s: 0.01,
        mean_latency_s: 0.01,
        std_latency_s: 0.0,
        p99_latency_s: 0.01,
        throughput_ips,
        peak_mem_bytes: 1 << 30,
        avg_power_w,
        repeats_aggregated: 3,
    };
    for i in 0..20 {
        let t = rng.random_range(1.0..1e5);
        let w = rng.random_range(5.0..400.0);
        let got = performance_per_watt(&summary(t, w)).map_err(|e| e.to_string())?;
        let hand = t / w;
        ensure((got - hand).abs() <= 1e-12 * hand, || {
            format!("case {i}: {got} vs {hand}")
        })?;
    }
    match performance_per_watt(&summary(1000.0, 0.0)) {
        Err(StatsError::ZeroPower) => Ok("20 summaries within 1e-12; zero power rejected".into()),
        other => Err(format!("zero power gave {other:?}")),
    }
}

fn cli_run(out: &Path, extra: &[&str]) -> Result<(), String> {
    let o = Command::new(BIN)
        .args(["run", "--plan", "paper-default", "--out"])
        .arg(out)
        .args(extra)
        .env_remove("GAPBENCH_OUT")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(o.status.success(), || {
        format!(
            "run exited {:?}: {}",
            o.status.code(),
            String::from_utf8_lossy(&o.stderr)
        )
    })
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path
                    .strip_prefix(dir)
                    .unwrap()
                    .to_string_lossy()
                    .to_string();
                files.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn determinism(work: &Path) -> Outcome {
    let (a, b) = (work.join("a"), work.join("b"));
    cli_run(&a, &[])?;
    cli_run(&b, &[])?;
    let (ta, tb) = (tree(&a), tree(&b));
    ensure(ta.len() == tb.len(), || "different file sets".into())?;
    for ((na, ca), (nb, cb)) in ta.iter().zip(&tb) {
        ensure(na == nb && ca == cb, || format!("{na} differs"))?;
    }
    Ok(format!("{} output files byte-identical", ta.len()))
}

fn record_keys(dir: &Path) -> Result<Vec<String>, String> {
    let text = fs::read_to_string(dir.join("records.ndjson")).map_err(|e| e.to_string())?;
    let mut keys = Vec::new();
    for line in text.lines().skip(1) {
        let v: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        keys.push(format!(
            "{}/{}/{}/{}/{}/{}",
            v["device"],
            v["model"],
            v["precision"],
            v["batch_size"],
            v["sweep_index"],
            v["repeat_index"]
        ));
    }
    keys.sort();
    Ok(keys)
}

fn crash_resume(work: &Path) -> Outcome {
    let clean = work.join("a");
    let killed = work.join("killed");
    let mut child = Command::new(BIN)
        .args(["run", "--plan", "paper-default", "--out"])
        .arg(&killed)
        .env_remove("GAPBENCH_OUT")
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| e.to_string())?;
    let manifest = killed.join("manifest.ndjson");
    let deadline = Instant::now() + Duration::from_secs(120);
    let mut seen = 0;
    while seen <= 2000 && Instant::now() < deadline {
        seen = fs::read_to_string(&manifest)
            .map(|t| t.lines().count())
            .unwrap_or(0);
        thread::sleep(Duration::from_millis(2));
    }
    child.kill().map_err(|e| e.to_string())?;
    child.wait().map_err(|e| e.to_string())?;
    // the record file may end in a torn line; the manifest counts committed runs
    let partial = fs::read_to_string(&manifest)
        .map_err(|e| e.to_string())?
        .lines()
        .count()
        .saturating_sub(1);
    ensure(partial < DEFAULT_RUNS, || {
        "sweep finished before the kill".into()
    })?;

    cli_run(&killed, &["--resume"])?;
    let keys = record_keys(&killed)?;
    let unique: BTreeSet<&String> = keys.iter().collect();
    ensure(unique.len() == keys.len(), || {
        format!("{} duplicate keys", keys.len() - unique.len())
    })?;
    ensure(keys == record_keys(&clean)?, || {
        "key set differs from the uninterrupted run".into()
    })?;
    Ok(format!(
        "killed after {partial} records; resumed to {} unique keys",
        keys.len()
    ))
}

fn main() -> ExitCode {
    let work = TempDir::new().expect("temp dir");
    let criteria: Vec<Criterion> = vec![
        ("golden speedup regression", Box::new(golden_regression)),
        (
            "hardware non-reproducibility statement",
            Box::new(hardware_statement),
        ),
        ("percentile oracle", Box::new(percentile_oracle)),
        ("pareto oracle", Box::new(pareto_oracle)),
        ("default plan sweep fidelity", Box::new(full_default_sweep)),
        (
            "simulator qualitative properties",
            Box::new(simulator_properties),
        ),
        (
            "performance-per-watt correctness",
            Box::new(ppw_correctness),
        ),
        ("determinism", Box::new(|| determinism(work.path()))),
        ("crash-resume", Box::new(|| crash_resume(work.path()))),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!(
        "{}/{} criteria pass",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
