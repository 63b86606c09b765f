//! Python bindings for the gapbench statistics, simulator, golden table and
//! sweep runner. Structured results cross the boundary as JSON text.

use std::path::Path;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use gapbench_core::golden::{check_golden, load_golden, GOLDEN_FIXTURE};
use gapbench_core::model::{validate_plan, ConfigKey, MetricSummary, PrecisionMode};
use gapbench_core::presets::{default_plan, model_by_name, parse_plan, resolve_device};
use gapbench_core::sim::{
    sim_latency as core_sim_latency, sim_memory as core_sim_memory, SimFactory,
};
use gapbench_core::stats::{self, AnalysisOptions, FrontPoint};
use gapbench_core::sweep::{execute_sweep, MemorySink, SweepOptions};

fn value_error(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn precision(name: &str) -> PyResult<PrecisionMode> {
    name.parse().map_err(value_error)
}

/// `(median, mean, std, p99)` of latencies in seconds.
#[pyfunction]
pub fn latency_stats(samples: Vec<f64>) -> PyResult<(f64, f64, f64, f64)> {
    let s = stats::latency_stats(&samples).map_err(value_error)?;
    Ok((s.median, s.mean, s.std, s.p99))
}

/// Indices of the non-dominated `(latency_s, throughput_ips)` points, in
/// ascending latency.
#[pyfunction]
pub fn pareto_front(points: Vec<(f64, f64)>) -> Vec<usize> {
    let points: Vec<FrontPoint<usize>> = points
        .into_iter()
        .enumerate()
        .map(|(tag, (latency_s, throughput_ips))| FrontPoint {
            latency_s,
            throughput_ips,
            tag,
        })
        .collect();
    stats::pareto_front(&points)
        .into_iter()
        .map(|p| p.tag)
        .collect()
}

#[pyfunction]
pub fn speedup(throughput_ips: f64, baseline_ips: f64) -> PyResult<f64> {
    stats::speedup(throughput_ips, baseline_ips).map_err(value_error)
}

#[pyfunction]
pub fn round_half_up(x: f64, decimals: i32) -> f64 {
    stats::round_half_up(x, decimals)
}

/// Images per second per watt; raises on non-positive power.
#[pyfunction]
pub fn performance_per_watt(throughput_ips: f64, avg_power_w: f64) -> PyResult<f64> {
    let summary = MetricSummary {
        key: ConfigKey {
            device: String::new(),
            model: String::new(),
            precision: PrecisionMode::Fp32,
            batch_size: 1,
        },
        median_latency_s: 0.0,
        mean_latency_s: 0.0,
        std_latency_s: 0.0,
        p99_latency_s: 0.0,
        throughput_ips,
        peak_mem_bytes: 0,
        avg_power_w,
        repeats_aggregated: 1,
    };
    stats::performance_per_watt(&summary).map_err(value_error)
}

/// Noise-free simulated latency of one batched call.
#[pyfunction]
pub fn sim_latency(device: &str, model: &str, precision_mode: &str, batch: u32) -> PyResult<f64> {
    let profile = resolve_device(device, Path::new(".")).map_err(value_error)?;
    let spec =
        model_by_name(model).ok_or_else(|| value_error(format!("unknown model `{model}`")))?;
    core_sim_latency(&profile, &spec, precision(precision_mode)?, batch).map_err(value_error)
}

/// Simulated device memory in use with `batch` allocated.
#[pyfunction]
pub fn sim_memory(device: &str, model: &str, precision_mode: &str, batch: u32) -> PyResult<u64> {
    let profile = resolve_device(device, Path::new(".")).map_err(value_error)?;
    let spec =
        model_by_name(model).ok_or_else(|| value_error(format!("unknown model `{model}`")))?;
    Ok(core_sim_memory(
        &profile.spec,
        &spec,
        precision(precision_mode)?,
        batch,
    ))
}

/// The embedded published-results table as JSON.
#[pyfunction]
pub fn golden_table() -> &'static str {
    GOLDEN_FIXTURE
}

/// `(passed, total)` speedup checks over the embedded table.
#[pyfunction]
pub fn golden_check() -> PyResult<(usize, usize)> {
    let data = load_golden().map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let report = check_golden(&data);
    Ok((report.passed_count(), report.checks.len()))
}

/// Parses and validates plan JSON; returns the resolved plan as JSON.
/// `None` gives the shipped default plan.
#[pyfunction]
#[pyo3(signature = (plan_json=None))]
pub fn resolve_plan(plan_json: Option<&str>) -> PyResult<String> {
    let plan = match plan_json {
        Some(text) => parse_plan(text, Path::new(".")).map_err(value_error)?,
        None => default_plan().map_err(value_error)?,
    };
    let plan = validate_plan(plan).map_err(value_error)?;
    Ok(serde_json::to_string(&plan).expect("plan serializes"))
}

/// Runs a plan on the simulator and returns the analysis report as JSON.
#[pyfunction]
pub fn run_sweep(py: Python<'_>, plan_json: &str) -> PyResult<String> {
    let plan = parse_plan(plan_json, Path::new(".")).map_err(value_error)?;
    let plan = validate_plan(plan).map_err(value_error)?;
    let records = py
        .detach(|| {
            let sink = MemorySink::new();
            execute_sweep(
                &plan,
                &SimFactory { seed: plan.seed },
                &sink,
                &SweepOptions::default(),
            )
            .map(|_| sink.into_records())
        })
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let options = AnalysisOptions {
        cpu_baseline_ips: plan.cpu_baseline_ips.clone(),
    };
    let analysis = stats::analyze(&records, &options);
    Ok(serde_json::to_string(&analysis.report).expect("report serializes"))
}

#[pymodule]
fn gapbench(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(latency_stats, m)?)?;
    m.add_function(wrap_pyfunction!(pareto_front, m)?)?;
    m.add_function(wrap_pyfunction!(speedup, m)?)?;
    m.add_function(wrap_pyfunction!(round_half_up, m)?)?;
    m.add_function(wrap_pyfunction!(performance_per_watt, m)?)?;
    m.add_function(wrap_pyfunction!(sim_latency, m)?)?;
    m.add_function(wrap_pyfunction!(sim_memory, m)?)?;
    m.add_function(wrap_pyfunction!(golden_table, m)?)?;
    m.add_function(wrap_pyfunction!(golden_check, m)?)?;
    m.add_function(wrap_pyfunction!(resolve_plan, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    Ok(())
}
