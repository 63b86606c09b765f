//! Per-configuration statistics and cross-configuration derivations.
//!
//! Conventions:
//! - repeats pool: all timed samples of every ok run of a configuration are
//!   combined before computing order statistics;
//! - median of an even-sized sample is the lower median (order statistic n/2);
//! - p99 is nearest-rank: the ceil(0.99 n)-th order statistic (1-indexed);
//! - standard deviation uses divisor n;
//! - throughput is batch / median latency;
//! - average power is the trapezoidal time-weighted mean of the samples.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::model::{
    AnalysisReport, ConfigKey, CpuSpeedupEntry, Fp32SpeedupEntry, MetricSummary, ParetoGroup,
    ParetoPoint, PeakEntry, PpwEntry, PrecisionMode, RunRecord, RunStatus, TelemetrySample,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("no successful runs")]
    NoSuccessfulRuns,
    #[error("need at least 2 pooled samples, got {0}")]
    InsufficientSamples(usize),
    #[error("records mix configurations {0} and {1}")]
    MixedConfigs(String, String),
    #[error("missing baseline")]
    MissingBaseline,
    #[error("average power is zero")]
    ZeroPower,
}

/// Lower median of an ascending-sorted slice.
pub fn lower_median(sorted: &[f64]) -> f64 {
    sorted[(sorted.len() - 1) / 2]
}

/// Nearest-rank percentile `pct` (0 < pct <= 100, integer) of an
/// ascending-sorted slice.
pub fn nearest_rank(sorted: &[f64], pct: usize) -> f64 {
    let n = sorted.len();
    let rank = (pct * n).div_ceil(100).max(1);
    sorted[rank - 1]
}

pub fn p99(sorted: &[f64]) -> f64 {
    nearest_rank(sorted, 99)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyStats {
    pub median: f64,
    pub mean: f64,
    pub std: f64,
    pub p99: f64,
}

pub fn latency_stats(samples: &[f64]) -> Result<LatencyStats, StatsError> {
    if samples.len() < 2 {
        return Err(StatsError::InsufficientSamples(samples.len()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    // offset from the smallest sample keeps a constant vector exact
    let base = sorted[0];
    let mean = base + sorted.iter().map(|x| x - base).sum::<f64>() / n;
    let var = sorted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Ok(LatencyStats {
        median: lower_median(&sorted),
        mean,
        std: var.sqrt(),
        p99: p99(&sorted),
    })
}

/// Integral of power over the sample span divided by the span. Falls back to
/// the arithmetic mean when the samples span no time.
fn power_integral(samples: &[TelemetrySample]) -> (f64, f64) {
    let energy = samples
        .windows(2)
        .map(|w| 0.5 * (w[0].power_w + w[1].power_w) * (w[1].timestamp_s - w[0].timestamp_s))
        .sum();
    let span = match (samples.first(), samples.last()) {
        (Some(a), Some(b)) => b.timestamp_s - a.timestamp_s,
        _ => 0.0,
    };
    (energy, span)
}

pub fn time_weighted_power(traces: &[&[TelemetrySample]]) -> f64 {
    let (energy, span) = traces
        .iter()
        .map(|t| power_integral(t))
        .fold((0.0, 0.0), |(e, s), (de, ds)| (e + de, s + ds));
    if span > 0.0 {
        return energy / span;
    }
    let all: Vec<f64> = traces
        .iter()
        .flat_map(|t| t.iter().map(|s| s.power_w))
        .collect();
    if all.is_empty() {
        0.0
    } else {
        all.iter().sum::<f64>() / all.len() as f64
    }
}

/// Summary of all runs of one configuration.
pub fn summarize(records: &[RunRecord]) -> Result<MetricSummary, StatsError> {
    let first = records.first().ok_or(StatsError::NoSuccessfulRuns)?;
    let key = first.key.config();
    if let Some(other) = records.iter().find(|r| r.key.config() != key) {
        return Err(StatsError::MixedConfigs(
            format!("{key:?}"),
            format!("{:?}", other.key.config()),
        ));
    }
    let ok: Vec<&RunRecord> = records
        .iter()
        .filter(|r| r.status == RunStatus::Ok)
        .collect();
    if ok.is_empty() {
        return Err(StatsError::NoSuccessfulRuns);
    }
    let pooled: Vec<f64> = ok
        .iter()
        .flat_map(|r| r.latencies.iter().map(|s| s.latency_s))
        .collect();
    let stats = latency_stats(&pooled)?;
    let traces: Vec<&[TelemetrySample]> = ok.iter().map(|r| r.telemetry.as_slice()).collect();
    Ok(MetricSummary {
        throughput_ips: f64::from(key.batch_size) / stats.median,
        key,
        median_latency_s: stats.median,
        mean_latency_s: stats.mean,
        std_latency_s: stats.std,
        p99_latency_s: stats.p99,
        peak_mem_bytes: ok
            .iter()
            .filter_map(|r| r.peak_mem_bytes())
            .max()
            .unwrap_or(0),
        avg_power_w: time_weighted_power(&traces),
        repeats_aggregated: ok.len() as u32,
    })
}

/// Total images over total timed seconds, pooled over ok runs.
pub fn aggregate_throughput(records: &[RunRecord]) -> Option<f64> {
    let mut images = 0.0;
    let mut seconds = 0.0;
    for r in records.iter().filter(|r| r.status == RunStatus::Ok) {
        images += f64::from(r.key.batch_size) * r.latencies.len() as f64;
        seconds += r.latencies.iter().map(|s| s.latency_s).sum::<f64>();
    }
    (seconds > 0.0).then(|| images / seconds)
}

/// Batch with the highest throughput; ties go to the smaller batch.
pub fn peak_throughput(summaries: &[&MetricSummary]) -> Option<(u32, f64)> {
    summaries
        .iter()
        .map(|s| (s.key.batch_size, s.throughput_ips))
        .fold(None, |best, (b, t)| match best {
            None => Some((b, t)),
            Some((bb, bt)) if t > bt || (t == bt && b < bb) => Some((b, t)),
            keep => keep,
        })
}

pub fn speedup(numerator_ips: f64, baseline_ips: f64) -> Result<f64, StatsError> {
    if baseline_ips > 0.0 && baseline_ips.is_finite() {
        Ok(numerator_ips / baseline_ips)
    } else {
        Err(StatsError::MissingBaseline)
    }
}

/// Rounds half away from zero at `decimals` places, tolerant of binary
/// representation error just below a half.
pub fn round_half_up(x: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    let scaled = (x * scale).abs();
    let nudged = scaled + 1e-9 * scaled.max(1.0);
    (nudged + 0.5).floor().copysign(x) / scale
}

/// Ratio as printed in tables: two decimals and a multiplication sign, or N/A.
pub fn format_ratio(ratio: Option<f64>) -> String {
    match ratio {
        Some(r) => format!("{:.2}×", round_half_up(r, 2)),
        None => "N/A".to_string(),
    }
}

/// Images per second per watt.
pub fn performance_per_watt(summary: &MetricSummary) -> Result<f64, StatsError> {
    if summary.throughput_ips == 0.0 {
        return Ok(0.0);
    }
    if !(summary.avg_power_w > 0.0) {
        return Err(StatsError::ZeroPower);
    }
    Ok(summary.throughput_ips / summary.avg_power_w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontPoint<T> {
    pub latency_s: f64,
    pub throughput_ips: f64,
    pub tag: T,
}

/// True when `p` dominates `q`: no slower, no less throughput, and strictly
/// better in at least one.
pub fn dominates<T>(p: &FrontPoint<T>, q: &FrontPoint<T>) -> bool {
    p.latency_s <= q.latency_s
        && p.throughput_ips >= q.throughput_ips
        && (p.latency_s < q.latency_s || p.throughput_ips > q.throughput_ips)
}

/// The non-dominated subset, sorted by latency ascending (then throughput
/// descending, then input order). Points tied on both coordinates are all
/// kept.
pub fn pareto_front<T: Clone>(points: &[FrontPoint<T>]) -> Vec<FrontPoint<T>> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .latency_s
            .total_cmp(&points[b].latency_s)
            .then(
                points[b]
                    .throughput_ips
                    .total_cmp(&points[a].throughput_ips),
            )
            .then(a.cmp(&b))
    });
    let mut front = Vec::new();
    let mut best_before = f64::NEG_INFINITY;
    let mut i = 0;
    while i < order.len() {
        let latency = points[order[i]].latency_s;
        let group_max = points[order[i]].throughput_ips;
        let mut j = i;
        while j < order.len() && points[order[j]].latency_s == latency {
            j += 1;
        }
        if group_max > best_before {
            front.extend(
                order[i..j]
                    .iter()
                    .filter(|&&k| points[k].throughput_ips == group_max)
                    .map(|&k| points[k].clone()),
            );
            best_before = group_max;
        }
        i = j;
    }
    front
}

/// FP16 and INT8 throughput relative to FP32 per (device, model, batch);
/// FP32 itself is reported as 1.
pub fn speedup_vs_fp32(summaries: &[MetricSummary]) -> Vec<Fp32SpeedupEntry> {
    let mut by_key: BTreeMap<(&str, &str, u32), BTreeMap<PrecisionMode, f64>> = BTreeMap::new();
    for s in summaries {
        by_key
            .entry((
                s.key.device.as_str(),
                s.key.model.as_str(),
                s.key.batch_size,
            ))
            .or_default()
            .insert(s.key.precision, s.throughput_ips);
    }
    let mut out = Vec::new();
    for ((device, model, batch), by_precision) in by_key {
        let base = by_precision.get(&PrecisionMode::Fp32).copied();
        for (&precision, &ips) in &by_precision {
            let ratio = base.and_then(|b| speedup(ips, b).ok());
            out.push(Fp32SpeedupEntry {
                device: device.to_string(),
                model: model.to_string(),
                batch_size: batch,
                precision,
                ratio,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct AnalysisOptions {
    /// CPU reference throughput per model name.
    pub cpu_baseline_ips: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OmittedSummary {
    #[serde(flatten)]
    pub key: ConfigKey,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub report: AnalysisReport,
    pub omitted: Vec<OmittedSummary>,
    /// Aggregate throughput (total images / total time) per summary, in the
    /// same order as `report.summaries`.
    pub aggregate_throughput: Vec<Option<f64>>,
}

/// Groups records by configuration and derives every table.
pub fn analyze(records: &[RunRecord], options: &AnalysisOptions) -> Analysis {
    let mut groups: BTreeMap<ConfigKey, Vec<RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.key.config()).or_default().push(r.clone());
    }

    let mut summaries = Vec::new();
    let mut aggregate = Vec::new();
    let mut omitted = Vec::new();
    for (key, group) in &groups {
        match summarize(group) {
            Ok(s) => {
                summaries.push(s);
                aggregate.push(aggregate_throughput(group));
            }
            Err(e) => omitted.push(OmittedSummary {
                key: key.clone(),
                reason: e.to_string(),
            }),
        }
    }

    let mut by_dmp: BTreeMap<(String, String, PrecisionMode), Vec<&MetricSummary>> =
        BTreeMap::new();
    let mut by_dm: BTreeMap<(String, String), Vec<&MetricSummary>> = BTreeMap::new();
    for s in &summaries {
        by_dmp
            .entry((s.key.device.clone(), s.key.model.clone(), s.key.precision))
            .or_default()
            .push(s);
        by_dm
            .entry((s.key.device.clone(), s.key.model.clone()))
            .or_default()
            .push(s);
    }

    let mut peak_table = Vec::new();
    let mut speedup_vs_cpu = Vec::new();
    let mut ppw_table = Vec::new();
    for ((device, model, precision), group) in &by_dmp {
        let Some((peak_batch, peak_ips)) = peak_throughput(group) else {
            continue;
        };
        peak_table.push(PeakEntry {
            device: device.clone(),
            model: model.clone(),
            precision: *precision,
            peak_batch,
            peak_throughput_ips: peak_ips,
        });
        speedup_vs_cpu.push(CpuSpeedupEntry {
            device: device.clone(),
            model: model.clone(),
            precision: *precision,
            ratio: options
                .cpu_baseline_ips
                .get(model)
                .and_then(|b| speedup(peak_ips, *b).ok()),
        });
        let at_peak = group
            .iter()
            .find(|s| s.key.batch_size == peak_batch)
            .expect("peak batch comes from the group");
        ppw_table.push(PpwEntry {
            device: device.clone(),
            model: model.clone(),
            precision: *precision,
            images_per_sec_per_w: performance_per_watt(at_peak).ok(),
        });
    }

    let pareto = by_dm
        .iter()
        .map(|((device, model), group)| {
            let points: Vec<FrontPoint<(PrecisionMode, u32)>> = group
                .iter()
                .map(|s| FrontPoint {
                    latency_s: s.median_latency_s,
                    throughput_ips: s.throughput_ips,
                    tag: (s.key.precision, s.key.batch_size),
                })
                .collect();
            ParetoGroup {
                device: device.clone(),
                model: model.clone(),
                points: pareto_front(&points)
                    .into_iter()
                    .map(|p| ParetoPoint {
                        precision: p.tag.0,
                        batch: p.tag.1,
                        median_latency_s: p.latency_s,
                        throughput_ips: p.throughput_ips,
                    })
                    .collect(),
            }
        })
        .collect();

    let speedup_vs_fp32 = speedup_vs_fp32(&summaries);
    Analysis {
        report: AnalysisReport {
            summaries,
            peak_table,
            speedup_vs_cpu,
            speedup_vs_fp32,
            pareto_front: pareto,
            ppw_table,
        },
        omitted,
        aggregate_throughput: aggregate,
    }
}
