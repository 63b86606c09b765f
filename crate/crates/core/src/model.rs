//! Domain types shared by the sweep engine, backends, statistics and reporting.
//!
//! Every type here is an immutable value object with a canonical JSON shape.
//! Field names in the serialized form are part of the on-disk contract.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::DeviceProfile;

/// Numerical format used for model arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PrecisionMode {
    #[serde(rename = "FP32")]
    Fp32,
    #[serde(rename = "FP16")]
    Fp16,
    #[serde(rename = "INT8")]
    Int8,
}

impl PrecisionMode {
    pub const ALL: [PrecisionMode; 3] = [
        PrecisionMode::Fp32,
        PrecisionMode::Fp16,
        PrecisionMode::Int8,
    ];

    pub fn bits_per_value(self) -> u32 {
        match self {
            PrecisionMode::Fp32 => 32,
            PrecisionMode::Fp16 => 16,
            PrecisionMode::Int8 => 8,
        }
    }

    /// Storage size relative to FP32.
    pub fn width_ratio(self) -> f64 {
        f64::from(self.bits_per_value()) / 32.0
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PrecisionMode::Fp32 => "FP32",
            PrecisionMode::Fp16 => "FP16",
            PrecisionMode::Int8 => "INT8",
        }
    }
}

impl fmt::Display for PrecisionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PrecisionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "FP32" => Ok(PrecisionMode::Fp32),
            "FP16" => Ok(PrecisionMode::Fp16),
            "INT8" => Ok(PrecisionMode::Int8),
            other => Err(format!("unknown precision mode `{other}`")),
        }
    }
}

/// Static description of a network, as consumed by backends and the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    /// Forward-pass FLOPs for a single image (2 x multiply-accumulates).
    pub flops_per_image: f64,
    /// Parameter storage at FP32.
    pub param_bytes: u64,
    /// Per-image input/output tensor storage at FP32.
    pub activation_bytes_per_image: u64,
    /// (channels, height, width)
    pub input_shape: [u32; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKind {
    Simulated,
    External,
}

/// Architectural parameters of an accelerator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub name: String,
    pub kind: DeviceKind,
    pub peak_fp32_tflops: f64,
    pub peak_fp16_tflops: f64,
    pub peak_int8_tops: f64,
    pub mem_bandwidth_gbs: f64,
    pub mem_capacity_bytes: u64,
    pub launch_overhead_s: f64,
    pub base_runtime_bytes: u64,
    pub idle_power_w: f64,
    pub max_power_w: f64,
    pub noise_cv: f64,
}

impl DeviceSpec {
    /// Peak arithmetic rate for `precision` in operations per second.
    pub fn peak_ops_per_s(&self, precision: PrecisionMode) -> f64 {
        let tera = match precision {
            PrecisionMode::Fp32 => self.peak_fp32_tflops,
            PrecisionMode::Fp16 => self.peak_fp16_tflops,
            PrecisionMode::Int8 => self.peak_int8_tops,
        };
        tera * 1e12
    }

    pub fn mem_bandwidth_bytes_per_s(&self) -> f64 {
        self.mem_bandwidth_gbs * 1e9
    }

    pub fn check(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.name.trim().is_empty() {
            problems.push("device name is empty".to_string());
        }
        let finite_nonneg = [
            ("peak_fp32_tflops", self.peak_fp32_tflops),
            ("peak_fp16_tflops", self.peak_fp16_tflops),
            ("peak_int8_tops", self.peak_int8_tops),
            ("mem_bandwidth_gbs", self.mem_bandwidth_gbs),
            ("launch_overhead_s", self.launch_overhead_s),
            ("idle_power_w", self.idle_power_w),
            ("max_power_w", self.max_power_w),
            ("noise_cv", self.noise_cv),
        ];
        for (field, value) in finite_nonneg {
            if !value.is_finite() || value < 0.0 {
                problems.push(format!("{field} must be finite and >= 0 (got {value})"));
            }
        }
        if self.peak_fp16_tflops < self.peak_fp32_tflops {
            problems.push("peak_fp16_tflops must be >= peak_fp32_tflops".to_string());
        }
        if self.peak_int8_tops < self.peak_fp16_tflops {
            problems.push("peak_int8_tops must be >= peak_fp16_tflops".to_string());
        }
        if self.idle_power_w > self.max_power_w {
            problems.push("idle_power_w must be <= max_power_w".to_string());
        }
        if self.noise_cv >= 1.0 {
            problems.push("noise_cv must be < 1".to_string());
        }
        problems
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySample {
    pub iteration_index: u32,
    pub latency_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TelemetrySample {
    pub timestamp_s: f64,
    pub mem_used_bytes: u64,
    pub power_w: f64,
    pub temp_c: f64,
    pub util_pct: f64,
}

/// Identity of one measurement run.
///
/// Sweep and repeat indices are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RunKey {
    pub device: String,
    pub model: String,
    pub precision: PrecisionMode,
    pub batch_size: u32,
    pub sweep_index: u32,
    pub repeat_index: u32,
}

impl RunKey {
    pub fn config(&self) -> ConfigKey {
        ConfigKey {
            device: self.device.clone(),
            model: self.model.clone(),
            precision: self.precision,
            batch_size: self.batch_size,
        }
    }
}

impl fmt::Display for RunKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}/b{}/s{}/r{}",
            self.device,
            self.model,
            self.precision,
            self.batch_size,
            self.sweep_index,
            self.repeat_index
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Oom,
    BackendError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    #[serde(flatten)]
    pub key: RunKey,
    pub latencies: Vec<LatencySample>,
    pub telemetry: Vec<TelemetrySample>,
    pub status: RunStatus,
    /// Non-fatal conditions such as a failed telemetry sampler or the error
    /// message behind a non-ok status.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl RunRecord {
    pub fn peak_mem_bytes(&self) -> Option<u64> {
        self.telemetry.iter().map(|s| s.mem_used_bytes).max()
    }
}

/// Identity of a benchmark configuration (all sweeps and repeats pooled).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConfigKey {
    pub device: String,
    pub model: String,
    pub precision: PrecisionMode,
    pub batch_size: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    #[serde(flatten)]
    pub key: ConfigKey,
    pub median_latency_s: f64,
    pub mean_latency_s: f64,
    pub std_latency_s: f64,
    pub p99_latency_s: f64,
    pub throughput_ips: f64,
    pub peak_mem_bytes: u64,
    pub avg_power_w: f64,
    pub repeats_aggregated: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakEntry {
    pub device: String,
    pub model: String,
    pub precision: PrecisionMode,
    pub peak_batch: u32,
    pub peak_throughput_ips: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpuSpeedupEntry {
    pub device: String,
    pub model: String,
    pub precision: PrecisionMode,
    /// `None` when no CPU baseline exists for the model.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fp32SpeedupEntry {
    pub device: String,
    pub model: String,
    pub batch_size: u32,
    pub precision: PrecisionMode,
    /// `None` marks a gap: no FP32 summary for this (device, model, batch).
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub precision: PrecisionMode,
    pub batch: u32,
    pub median_latency_s: f64,
    pub throughput_ips: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoGroup {
    pub device: String,
    pub model: String,
    pub points: Vec<ParetoPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpwEntry {
    pub device: String,
    pub model: String,
    pub precision: PrecisionMode,
    /// images/sec/W at the peak-throughput batch; `None` if power was zero.
    pub images_per_sec_per_w: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub summaries: Vec<MetricSummary>,
    pub peak_table: Vec<PeakEntry>,
    pub speedup_vs_cpu: Vec<CpuSpeedupEntry>,
    pub speedup_vs_fp32: Vec<Fp32SpeedupEntry>,
    pub pareto_front: Vec<ParetoGroup>,
    pub ppw_table: Vec<PpwEntry>,
}

/// Order of the two outer loops of a sweep.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopOrder {
    /// precision -> model -> sweep -> batch -> repeat
    #[default]
    PrecisionFirst,
    /// model -> precision -> sweep -> batch -> repeat (fewer model reloads)
    ModelFirst,
}

/// The full experiment matrix with its timing parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub devices: Vec<DeviceProfile>,
    pub models: Vec<ModelSpec>,
    pub precisions: Vec<PrecisionMode>,
    pub batch_sizes: Vec<u32>,
    pub sweeps: u32,
    pub repeats: u32,
    pub warmup_iters: u32,
    pub timed_iters: u32,
    pub telemetry_period_ms: u32,
    pub seed: u64,
    #[serde(default)]
    pub loop_order: LoopOrder,
    /// Throughput of a host-only reference run per model, used for
    /// speedup-vs-CPU columns.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub cpu_baseline_ips: BTreeMap<String, f64>,
}

impl SweepPlan {
    /// Number of runs per device.
    pub fn runs_per_device(&self) -> usize {
        self.models.len()
            * self.precisions.len()
            * self.batch_sizes.len()
            * self.sweeps as usize
            * self.repeats as usize
    }

    pub fn total_runs(&self) -> usize {
        self.devices.len() * self.runs_per_device()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanViolation {
    pub field: String,
    pub reason: String,
}

impl fmt::Display for PlanViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.reason)
    }
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("invalid plan: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidPlan(Vec<PlanViolation>),
}

impl PlanError {
    pub fn violations(&self) -> &[PlanViolation] {
        match self {
            PlanError::InvalidPlan(v) => v,
        }
    }
}

/// Checks every plan invariant and normalizes the batch list to sorted-unique.
pub fn validate_plan(mut plan: SweepPlan) -> Result<SweepPlan, PlanError> {
    let mut violations = Vec::new();
    let mut bad = |field: &str, reason: String| {
        violations.push(PlanViolation {
            field: field.to_string(),
            reason,
        })
    };

    plan.batch_sizes.sort_unstable();
    plan.batch_sizes.dedup();
    if plan.batch_sizes.is_empty() {
        bad("batch_sizes", "at least one batch size is required".into());
    }
    if plan.batch_sizes.first() == Some(&0) {
        bad("batch_sizes", "batch sizes must be >= 1".into());
    }
    if plan.timed_iters < 2 {
        bad(
            "timed_iters",
            format!(
                "must be >= 2 for a defined standard deviation (got {})",
                plan.timed_iters
            ),
        );
    }
    if plan.repeats < 1 {
        bad("repeats", "must be >= 1".into());
    }
    if plan.sweeps < 1 {
        bad("sweeps", "must be >= 1".into());
    }
    if plan.telemetry_period_ms < 1 {
        bad("telemetry_period_ms", "must be >= 1".into());
    }

    if plan.devices.is_empty() {
        bad("devices", "at least one device is required".into());
    }
    let mut names = BTreeSet::new();
    for device in &plan.devices {
        if !names.insert(device.spec.name.clone()) {
            bad(
                "devices",
                format!("duplicate device `{}`", device.spec.name),
            );
        }
        for problem in device.spec.check() {
            bad("devices", format!("{}: {problem}", device.spec.name));
        }
        for problem in device.simulation.check() {
            bad(
                "devices",
                format!("{}: simulation: {problem}", device.spec.name),
            );
        }
    }

    if plan.models.is_empty() {
        bad("models", "at least one model is required".into());
    }
    let mut names = BTreeSet::new();
    for model in &plan.models {
        if !names.insert(model.name.clone()) {
            bad("models", format!("duplicate model `{}`", model.name));
        }
        if !(model.flops_per_image.is_finite() && model.flops_per_image > 0.0) {
            bad(
                "models",
                format!("{}: flops_per_image must be > 0", model.name),
            );
        }
    }

    if plan.precisions.is_empty() {
        bad("precisions", "at least one precision is required".into());
    }
    let mut seen = BTreeSet::new();
    for p in &plan.precisions {
        if !seen.insert(*p) {
            bad("precisions", format!("duplicate precision {p}"));
        }
    }

    for (model, ips) in &plan.cpu_baseline_ips {
        if !(ips.is_finite() && *ips > 0.0) {
            bad("cpu_baseline_ips", format!("{model}: baseline must be > 0"));
        }
    }

    if violations.is_empty() {
        Ok(plan)
    } else {
        Err(PlanError::InvalidPlan(violations))
    }
}
