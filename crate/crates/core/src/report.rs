//! Analysis artifacts: the analysis document, flat CSV exports, per-figure
//! plot series and the peak-throughput text table.
//!
//! Every output is a deterministic function of the records: maps are ordered,
//! floats are written in shortest round-trip form, and nothing depends on
//! wall time.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::model::{ConfigKey, MetricSummary, PrecisionMode, RunRecord, TelemetrySample};
use crate::stats::{
    analyze, format_ratio, performance_per_watt, Analysis, AnalysisOptions, OmittedSummary,
};
use crate::sweep::detect_steady_state;

pub const ANALYSIS_SCHEMA: &str = "gapbench.analysis";
pub const ANALYSIS_VERSION: u32 = 1;

/// Trailing window and tolerance for the steady-state annotation.
pub const STEADY_WINDOW_S: f64 = 10.0;
pub const STEADY_TOL_C: f64 = 1.0;

/// Column order of `summaries.csv`.
pub const SUMMARY_COLUMNS: [&str; 14] = [
    "device",
    "model",
    "precision",
    "batch_size",
    "median_latency_s",
    "mean_latency_s",
    "std_latency_s",
    "p99_latency_s",
    "throughput_ips",
    "aggregate_throughput_ips",
    "peak_mem_bytes",
    "avg_power_w",
    "ppw_ips_per_w",
    "repeats_aggregated",
];

pub const PLOT_FAMILIES: [&str; 5] = [
    "throughput_vs_batch",
    "latency_vs_batch",
    "pareto",
    "speedup_vs_batch",
    "memory_vs_batch",
];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no records to analyze")]
    NoRecords,
    #[error("no configuration produced a summary")]
    NoSummaries,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteadyStateNote {
    #[serde(flatten)]
    pub key: ConfigKey,
    /// `None` when the device trace up to this configuration is shorter than
    /// the window.
    pub steady: Option<bool>,
}

/// Whether each configuration ran in thermal steady state: the device's
/// temperature trace up to the configuration's last sample must vary by at
/// most `tol_c` over the trailing `window_s`. Annotates, never filters.
pub fn steady_state_notes(
    records: &[RunRecord],
    window_s: f64,
    tol_c: f64,
) -> Vec<SteadyStateNote> {
    let mut traces: BTreeMap<&str, Vec<&TelemetrySample>> = BTreeMap::new();
    let mut last_seen: BTreeMap<ConfigKey, f64> = BTreeMap::new();
    for r in records {
        traces
            .entry(r.key.device.as_str())
            .or_default()
            .extend(r.telemetry.iter());
        let end = r
            .telemetry
            .last()
            .map_or(f64::NEG_INFINITY, |s| s.timestamp_s);
        let slot = last_seen.entry(r.key.config()).or_insert(f64::NEG_INFINITY);
        *slot = slot.max(end);
    }
    for trace in traces.values_mut() {
        trace.sort_by(|a, b| a.timestamp_s.total_cmp(&b.timestamp_s));
        trace.dedup_by(|a, b| a.timestamp_s == b.timestamp_s);
    }
    last_seen
        .into_iter()
        .map(|(key, end)| {
            let trace = &traces[key.device.as_str()];
            let upto = trace.partition_point(|s| s.timestamp_s <= end);
            let window: Vec<TelemetrySample> = trace[..upto].iter().map(|s| **s).collect();
            SteadyStateNote {
                steady: detect_steady_state(&window, window_s, tol_c).ok(),
                key,
            }
        })
        .collect()
}

/// Everything written by [`write_report`], kept in memory first so that a
/// failure never leaves partial output.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub files: BTreeMap<PathBuf, Vec<u8>>,
}

fn csv_bytes(
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<Vec<u8>, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.into_inner()
        .map_err(|e| ReportError::Csv(e.into_error().into()))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn plot_name(family: &str, device: &str, model: &str) -> PathBuf {
    let clean = |s: &str| -> String {
        s.chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                    c
                } else {
                    '_'
                }
            })
            .collect()
    };
    Path::new("plots").join(format!("{family}__{}__{}.csv", clean(device), clean(model)))
}

/// Builds all artifacts for `records`.
pub fn build_report(
    records: &[RunRecord],
    options: &AnalysisOptions,
) -> Result<(Analysis, ReportFiles), ReportError> {
    if records.is_empty() {
        return Err(ReportError::NoRecords);
    }
    let analysis = analyze(records, options);
    if analysis.report.summaries.is_empty() {
        return Err(ReportError::NoSummaries);
    }
    let steady = steady_state_notes(records, STEADY_WINDOW_S, STEADY_TOL_C);
    let mut files = BTreeMap::new();

    let doc = json!({
        "schema": ANALYSIS_SCHEMA,
        "version": ANALYSIS_VERSION,
        "conventions": {
            "repeats": "pooled: all timed samples of all ok runs of a configuration",
            "median": "lower median (order statistic n/2, 1-indexed, for even n)",
            "p99": "nearest rank: order statistic ceil(0.99 n), 1-indexed",
            "std": "population (divisor n)",
            "throughput": "batch_size / median_latency_s",
            "peak_mem": "max over telemetry samples of ok runs",
            "avg_power": "trapezoidal time-weighted mean over each run's samples",
            "ppw": "throughput_ips / avg_power_w at the peak-throughput batch",
            "peak_batch_ties": "smaller batch wins",
            "display_rounding": "half-up, 2 decimals for ratios",
            "steady_state": {"window_s": STEADY_WINDOW_S, "tolerance_c": STEADY_TOL_C},
        },
        "cpu_baseline_ips": options.cpu_baseline_ips,
        "record_count": records.len(),
        "report": analysis.report,
        "omitted": analysis.omitted,
        "steady_state": steady,
    });
    let mut text = serde_json::to_string_pretty(&doc).expect("analysis serializes");
    text.push('\n');
    files.insert(PathBuf::from("analysis.json"), text.into_bytes());

    let summary_rows = analysis
        .report
        .summaries
        .iter()
        .zip(&analysis.aggregate_throughput)
        .map(|(s, agg)| summary_row(s, *agg));
    files.insert(
        PathBuf::from("summaries.csv"),
        csv_bytes(&SUMMARY_COLUMNS, summary_rows)?,
    );

    let cpu: BTreeMap<(&str, &str, PrecisionMode), Option<f64>> = analysis
        .report
        .speedup_vs_cpu
        .iter()
        .map(|e| ((e.device.as_str(), e.model.as_str(), e.precision), e.ratio))
        .collect();
    let ppw: BTreeMap<(&str, &str, PrecisionMode), Option<f64>> = analysis
        .report
        .ppw_table
        .iter()
        .map(|e| {
            (
                (e.device.as_str(), e.model.as_str(), e.precision),
                e.images_per_sec_per_w,
            )
        })
        .collect();
    let peak_rows = analysis.report.peak_table.iter().map(|p| {
        let k = (p.device.as_str(), p.model.as_str(), p.precision);
        vec![
            p.device.clone(),
            p.model.clone(),
            p.precision.to_string(),
            p.peak_batch.to_string(),
            p.peak_throughput_ips.to_string(),
            opt(cpu.get(&k).copied().flatten()),
            opt(ppw.get(&k).copied().flatten()),
        ]
    });
    files.insert(
        PathBuf::from("peak_table.csv"),
        csv_bytes(
            &[
                "device",
                "model",
                "precision",
                "peak_batch",
                "peak_throughput_ips",
                "speedup_vs_cpu",
                "ppw_ips_per_w",
            ],
            peak_rows,
        )?,
    );

    for (name, bytes) in plot_files(&analysis)? {
        files.insert(name, bytes);
    }
    let mut table = render_peak_table(&analysis, options);
    table.push('\n');
    files.insert(PathBuf::from("peak_table.txt"), table.into_bytes());
    Ok((analysis, ReportFiles { files }))
}

fn summary_row(s: &MetricSummary, aggregate: Option<f64>) -> Vec<String> {
    vec![
        s.key.device.clone(),
        s.key.model.clone(),
        s.key.precision.to_string(),
        s.key.batch_size.to_string(),
        s.median_latency_s.to_string(),
        s.mean_latency_s.to_string(),
        s.std_latency_s.to_string(),
        s.p99_latency_s.to_string(),
        s.throughput_ips.to_string(),
        opt(aggregate),
        s.peak_mem_bytes.to_string(),
        s.avg_power_w.to_string(),
        opt(performance_per_watt(s).ok()),
        s.repeats_aggregated.to_string(),
    ]
}

fn plot_files(analysis: &Analysis) -> Result<Vec<(PathBuf, Vec<u8>)>, ReportError> {
    let report = &analysis.report;
    let mut groups: BTreeMap<(&str, &str), Vec<&MetricSummary>> = BTreeMap::new();
    for s in &report.summaries {
        groups
            .entry((s.key.device.as_str(), s.key.model.as_str()))
            .or_default()
            .push(s);
    }
    let mut out = Vec::new();
    for ((device, model), summaries) in groups {
        let rows = |f: &dyn Fn(&MetricSummary) -> Vec<String>| -> Vec<Vec<String>> {
            summaries
                .iter()
                .map(|s| {
                    let mut row = vec![s.key.precision.to_string(), s.key.batch_size.to_string()];
                    row.extend(f(s));
                    row
                })
                .collect()
        };
        out.push((
            plot_name("throughput_vs_batch", device, model),
            csv_bytes(
                &["precision", "batch_size", "throughput_ips"],
                rows(&|s| vec![s.throughput_ips.to_string()]),
            )?,
        ));
        out.push((
            plot_name("latency_vs_batch", device, model),
            csv_bytes(
                &[
                    "precision",
                    "batch_size",
                    "median_latency_s",
                    "p99_latency_s",
                ],
                rows(&|s| vec![s.median_latency_s.to_string(), s.p99_latency_s.to_string()]),
            )?,
        ));
        out.push((
            plot_name("memory_vs_batch", device, model),
            csv_bytes(
                &["precision", "batch_size", "peak_mem_bytes"],
                rows(&|s| vec![s.peak_mem_bytes.to_string()]),
            )?,
        ));

        let front = report
            .pareto_front
            .iter()
            .find(|g| g.device == device && g.model == model)
            .map(|g| g.points.as_slice())
            .unwrap_or_default();
        let on_front = |s: &MetricSummary| {
            front
                .iter()
                .any(|p| p.precision == s.key.precision && p.batch == s.key.batch_size)
        };
        out.push((
            plot_name("pareto", device, model),
            csv_bytes(
                &[
                    "precision",
                    "batch_size",
                    "median_latency_s",
                    "throughput_ips",
                    "on_front",
                ],
                rows(&|s| {
                    vec![
                        s.median_latency_s.to_string(),
                        s.throughput_ips.to_string(),
                        on_front(s).to_string(),
                    ]
                }),
            )?,
        ));

        let speedups = report
            .speedup_vs_fp32
            .iter()
            .filter(|e| e.device == device && e.model == model)
            .map(|e| {
                vec![
                    e.precision.to_string(),
                    e.batch_size.to_string(),
                    opt(e.ratio),
                ]
            });
        out.push((
            plot_name("speedup_vs_batch", device, model),
            csv_bytes(&["precision", "batch_size", "speedup_vs_fp32"], speedups)?,
        ));
    }
    Ok(out)
}

/// Peak-throughput table with columns Platform, Model, Peak Batch, Peak
/// Throughput and Speedup vs CPU. Given CPU baselines appear first.
pub fn render_peak_table(analysis: &Analysis, options: &AnalysisOptions) -> String {
    let mut rows: Vec<[String; 5]> = vec![[
        "Platform".into(),
        "Model".into(),
        "Peak Batch".into(),
        "Peak Throughput (images/sec)".into(),
        "Speedup vs CPU".into(),
    ]];
    for (model, ips) in &options.cpu_baseline_ips {
        rows.push([
            "CPU baseline".into(),
            model.clone(),
            "-".into(),
            format!("{ips:.0}"),
            format_ratio(Some(1.0)),
        ]);
    }
    let cpu: BTreeMap<(&str, &str, PrecisionMode), Option<f64>> = analysis
        .report
        .speedup_vs_cpu
        .iter()
        .map(|e| ((e.device.as_str(), e.model.as_str(), e.precision), e.ratio))
        .collect();
    for p in &analysis.report.peak_table {
        rows.push([
            format!("{} ({})", p.device, p.precision),
            p.model.clone(),
            p.peak_batch.to_string(),
            format!("{:.0}", p.peak_throughput_ips),
            format_ratio(
                cpu.get(&(p.device.as_str(), p.model.as_str(), p.precision))
                    .copied()
                    .flatten(),
            ),
        ]);
    }
    let widths: Vec<usize> = (0..5)
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (cell, w))| {
                let pad = w - cell.chars().count();
                if c < 2 {
                    format!("{cell}{}", " ".repeat(pad))
                } else {
                    format!("{}{cell}", " ".repeat(pad))
                }
            })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out.pop();
    out
}

/// Builds every artifact, then writes them under `out_dir`.
pub fn write_report(
    records: &[RunRecord],
    options: &AnalysisOptions,
    out_dir: &Path,
) -> Result<(Analysis, Vec<PathBuf>), ReportError> {
    let (analysis, files) = build_report(records, options)?;
    let mut written = Vec::new();
    for (rel, bytes) in files.files {
        let path = out_dir.join(&rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|source| ReportError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        fs::write(&path, bytes).map_err(|source| ReportError::Io {
            path: path.clone(),
            source,
        })?;
        written.push(path);
    }
    Ok((analysis, written))
}

/// Omitted configurations, for display.
pub fn describe_omitted(omitted: &[OmittedSummary]) -> Vec<String> {
    omitted
        .iter()
        .map(|o| {
            format!(
                "{}/{}/{}/b{}: {}",
                o.key.device, o.key.model, o.key.precision, o.key.batch_size, o.reason
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LatencySample, RunKey, RunStatus};

    fn record(device: &str, precision: PrecisionMode, batch: u32, latency: f64) -> RunRecord {
        RunRecord {
            key: RunKey {
                device: device.into(),
                model: "resnet18".into(),
                precision,
                batch_size: batch,
                sweep_index: 1,
                repeat_index: 1,
            },
            latencies: (0..4)
                .map(|i| LatencySample {
                    iteration_index: i,
                    latency_s: latency,
                })
                .collect(),
            telemetry: vec![TelemetrySample {
                timestamp_s: f64::from(batch),
                mem_used_bytes: 1000 + u64::from(batch),
                power_w: 50.0,
                temp_c: 60.0,
                util_pct: 90.0,
            }],
            status: RunStatus::Ok,
            warnings: vec![],
        }
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(
            build_report(&[], &AnalysisOptions::default()),
            Err(ReportError::NoRecords)
        ));
    }

    #[test]
    fn five_plot_families_per_device_model() {
        let records = vec![
            record("a", PrecisionMode::Fp32, 1, 0.01),
            record("a", PrecisionMode::Int8, 1, 0.002),
            record("b", PrecisionMode::Fp32, 1, 0.01),
        ];
        let (_, files) = build_report(&records, &AnalysisOptions::default()).unwrap();
        let plots = files
            .files
            .keys()
            .filter(|p| p.starts_with("plots"))
            .count();
        assert_eq!(plots, 5 * 2);
    }

    #[test]
    fn table_has_na_for_missing_baseline() {
        let records = vec![record("sim-l4", PrecisionMode::Int8, 32, 32.0 / 38932.0)];
        let mut options = AnalysisOptions::default();
        options.cpu_baseline_ips.insert("resnet50".into(), 230.0);
        let (analysis, _) = build_report(&records, &options).unwrap();
        let table = render_peak_table(&analysis, &options);
        let lines: Vec<&str> = table.lines().collect();
        assert!(lines[0].starts_with("Platform"));
        assert!(lines[3].starts_with("sim-l4 (INT8)"));
        assert!(lines[3].ends_with("N/A"));
        assert!(lines[3].contains("38932"));

        options.cpu_baseline_ips.insert("resnet18".into(), 670.0);
        let (analysis, _) = build_report(&records, &options).unwrap();
        assert!(render_peak_table(&analysis, &options).contains("58.11×"));
    }
}
