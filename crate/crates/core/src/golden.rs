//! Published peak-throughput table, embedded as a hashed fixture and used as
//! a regression target for the speedup computation.
//!
//! Fixture: `crates/core/fixtures/golden_table.json`, schema `gapbench.golden`
//! version 1. Editing the file without updating [`GOLDEN_SHA256`] makes
//! [`load_golden`] fail.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::PrecisionMode;
use crate::stats::{round_half_up, speedup};

pub const GOLDEN_FIXTURE: &str = include_str!("../fixtures/golden_table.json");
pub const GOLDEN_SHA256: &str = "fb6d7acfe3d2bbcb36c435d6df085d5b8e35335f62da5af4c14dffe91cbfbb3c";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenRow {
    pub platform: String,
    pub model: String,
    pub peak_batch: u32,
    pub peak_throughput_ips: u64,
    pub speedup_vs_cpu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoreticalPeak {
    pub device: String,
    pub fp32_tflops: f64,
    pub fp16_tflops: f64,
    pub int8_tops: f64,
}

impl TheoreticalPeak {
    pub fn get(&self, precision: PrecisionMode) -> f64 {
        match precision {
            PrecisionMode::Fp32 => self.fp32_tflops,
            PrecisionMode::Fp16 => self.fp16_tflops,
            PrecisionMode::Int8 => self.int8_tops,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenDataset {
    pub schema: String,
    pub version: u32,
    #[serde(default)]
    pub note: String,
    pub baseline_platform: String,
    pub rows: Vec<GoldenRow>,
    pub theoretical_peaks: Vec<TheoreticalPeak>,
}

impl GoldenDataset {
    /// CPU throughput per model, from the baseline platform's rows.
    pub fn baselines(&self) -> BTreeMap<&str, u64> {
        self.rows
            .iter()
            .filter(|r| r.platform == self.baseline_platform)
            .map(|r| (r.model.as_str(), r.peak_throughput_ips))
            .collect()
    }

    pub fn row(&self, platform: &str, model: &str) -> Option<&GoldenRow> {
        self.rows
            .iter()
            .find(|r| r.platform == platform && r.model == model)
    }
}

#[derive(Debug, Error)]
pub enum GoldenError {
    #[error("golden fixture checksum mismatch: expected {expected}, found {found}")]
    ChecksumMismatch { expected: String, found: String },
    #[error("golden fixture does not parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("golden fixture is inconsistent: {0}")]
    Invalid(String),
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Splits a GPU platform label such as `NVIDIA L4 (INT8 TensorRT)` into
/// device and precision.
pub fn platform_parts(platform: &str) -> Option<(&str, PrecisionMode)> {
    let rest = platform.strip_prefix("NVIDIA ")?;
    let (device, tail) = rest.split_once(" (")?;
    let precision = tail.split([' ', ')']).next()?.parse().ok()?;
    Some((device, precision))
}

/// Parses fixture text without the checksum gate.
pub fn parse_golden(text: &str) -> Result<GoldenDataset, GoldenError> {
    let data: GoldenDataset = serde_json::from_str(text)?;
    if data.schema != "gapbench.golden" || data.version != 1 {
        return Err(GoldenError::Invalid(format!(
            "unsupported schema {} v{}",
            data.schema, data.version
        )));
    }
    let baselines = data.baselines();
    for row in &data.rows {
        let has_baseline = baselines.contains_key(row.model.as_str());
        if has_baseline != row.speedup_vs_cpu.is_some() {
            return Err(GoldenError::Invalid(format!(
                "{} / {}: speedup must be present iff a baseline exists",
                row.platform, row.model
            )));
        }
    }
    Ok(data)
}

/// The embedded dataset, verified against its content hash.
pub fn load_golden() -> Result<GoldenDataset, GoldenError> {
    load_golden_text(GOLDEN_FIXTURE)
}

pub fn load_golden_text(text: &str) -> Result<GoldenDataset, GoldenError> {
    let found = sha256_hex(text.as_bytes());
    if found != GOLDEN_SHA256 {
        return Err(GoldenError::ChecksumMismatch {
            expected: GOLDEN_SHA256.to_string(),
            found,
        });
    }
    parse_golden(text)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowCheck {
    pub platform: String,
    pub model: String,
    pub throughput_ips: u64,
    pub baseline_ips: u64,
    pub ratio: f64,
    pub recomputed: f64,
    pub printed: f64,
    pub passed: bool,
    /// Throughput differs from the reference table yet rounds to the same
    /// printed speedup.
    pub rounding_insensitive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GoldenReport {
    pub checks: Vec<RowCheck>,
    pub checksum_ok: bool,
}

impl GoldenReport {
    pub fn passed_count(&self) -> usize {
        self.checks.iter().filter(|c| c.passed).count()
    }

    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }
}

/// Recomputes every non-baseline speedup from the table's throughputs and
/// compares it with the printed value at two decimals.
pub fn check_golden(data: &GoldenDataset) -> GoldenReport {
    let reference = parse_golden(GOLDEN_FIXTURE).ok();
    let baselines = data.baselines();
    let checks = data
        .rows
        .iter()
        .filter(|r| r.platform != data.baseline_platform)
        .filter_map(|row| {
            let printed = row.speedup_vs_cpu?;
            let baseline = *baselines.get(row.model.as_str())?;
            let ratio =
                speedup(row.peak_throughput_ips as f64, baseline as f64).unwrap_or(f64::NAN);
            let recomputed = round_half_up(ratio, 2);
            let passed = recomputed == round_half_up(printed, 2);
            let drifted = reference
                .as_ref()
                .and_then(|d| d.row(&row.platform, &row.model))
                .is_some_and(|r| r.peak_throughput_ips != row.peak_throughput_ips);
            Some(RowCheck {
                platform: row.platform.clone(),
                model: row.model.clone(),
                throughput_ips: row.peak_throughput_ips,
                baseline_ips: baseline,
                ratio,
                recomputed,
                printed,
                passed,
                rounding_insensitive: passed && drifted,
            })
        })
        .collect();
    GoldenReport {
        checks,
        checksum_ok: reference.as_ref() == Some(data),
    }
}

/// Checks fixture text: parse, recompute, and note whether it is the
/// pristine embedded table.
pub fn check_golden_text(text: &str) -> Result<GoldenReport, GoldenError> {
    let data = parse_golden(text)?;
    let mut report = check_golden(&data);
    report.checksum_ok = sha256_hex(text.as_bytes()) == GOLDEN_SHA256;
    Ok(report)
}
