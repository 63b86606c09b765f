//! Sweep execution: the precision/model/sweep/batch/repeat loop nest, per-run
//! telemetry, and crash-safe persistence.
//!
//! Record file (`records.ndjson`): a header line
//! `{"schema":"gapbench.records","version":1}` followed by one [`RunRecord`]
//! per line. Manifest (`manifest.ndjson`): a header line
//! `{"schema":"gapbench.manifest","version":1}` followed by one [`RunKey`]
//! per line. A record is appended and flushed before its key reaches the
//! manifest, so the manifest never names a run whose record is missing.

use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{validate_plan, LoopOrder, PlanError};
use crate::model::{
    ModelSpec, PrecisionMode, RunKey, RunRecord, RunStatus, SweepPlan, TelemetrySample,
};
use crate::protocol::{Backend, BackendError, BackendFactory, ClockDomain, TelemetryProbe};
use crate::sim::{derive_seed, DeviceProfile};

pub const RECORDS_FILE: &str = "records.ndjson";
pub const MANIFEST_FILE: &str = "manifest.ndjson";
pub const RECORDS_SCHEMA: &str = "gapbench.records";
pub const MANIFEST_SCHEMA: &str = "gapbench.manifest";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHeader {
    pub schema: String,
    pub version: u32,
}

impl FileHeader {
    fn new(schema: &str) -> Self {
        Self {
            schema: schema.to_string(),
            version: SCHEMA_VERSION,
        }
    }
}

#[derive(Debug, Error)]
pub enum SinkError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("sink rejected record: {0}")]
    Rejected(String),
}

#[derive(Debug, Error)]
pub enum RecordsError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: missing or unreadable header")]
    MissingHeader { path: PathBuf },
    #[error("{path}: schema {found_schema} v{found_version}, expected {expected_schema} v{expected_version}")]
    SchemaVersionMismatch {
        path: PathBuf,
        expected_schema: String,
        expected_version: u32,
        found_schema: String,
        found_version: u32,
    },
    #[error("{path}:{line}: {reason}")]
    BadLine {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

/// Destination for finished runs. Appends may come from several device
/// threads at once.
pub trait RecordSink: Send + Sync {
    fn append(&self, record: &RunRecord) -> Result<(), SinkError>;
}

/// Collects records in memory.
#[derive(Debug, Default)]
pub struct MemorySink {
    records: Mutex<Vec<RunRecord>>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> Vec<RunRecord> {
        self.records.lock().expect("sink poisoned").clone()
    }

    pub fn into_records(self) -> Vec<RunRecord> {
        self.records.into_inner().expect("sink poisoned")
    }
}

impl RecordSink for MemorySink {
    fn append(&self, record: &RunRecord) -> Result<(), SinkError> {
        self.records
            .lock()
            .expect("sink poisoned")
            .push(record.clone());
        Ok(())
    }
}

struct SinkFiles {
    records: File,
    manifest: File,
}

/// Append-only record and manifest files in one directory.
pub struct FileSink {
    dir: PathBuf,
    files: Mutex<SinkFiles>,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> SinkError + '_ {
    move |source| SinkError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn header_line(schema: &str) -> String {
    serde_json::to_string(&FileHeader::new(schema)).expect("header serializes")
}

fn write_fresh(path: &Path, schema: &str, lines: &[String]) -> Result<(), SinkError> {
    let tmp = path.with_extension("ndjson.tmp");
    let mut text = header_line(schema);
    text.push('\n');
    for l in lines {
        text.push_str(l);
        text.push('\n');
    }
    fs::write(&tmp, text).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn open_append(path: &Path) -> Result<File, SinkError> {
    OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(io_err(path))
}

impl FileSink {
    /// Starts empty record and manifest files in `dir`, replacing old ones.
    pub fn create(dir: &Path) -> Result<Self, SinkError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let records = dir.join(RECORDS_FILE);
        let manifest = dir.join(MANIFEST_FILE);
        write_fresh(&records, RECORDS_SCHEMA, &[])?;
        write_fresh(&manifest, MANIFEST_SCHEMA, &[])?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Mutex::new(SinkFiles {
                records: open_append(&records)?,
                manifest: open_append(&manifest)?,
            }),
        })
    }

    /// Reopens an interrupted run. Records whose key is not in the manifest
    /// (the run was cut off before its key was committed) and torn trailing
    /// lines are dropped; the files are compacted before appending resumes.
    /// Returns the sink and the keys already completed.
    pub fn resume(dir: &Path) -> Result<(Self, BTreeSet<RunKey>), SinkError> {
        let records_path = dir.join(RECORDS_FILE);
        let manifest_path = dir.join(MANIFEST_FILE);
        if !records_path.exists() || !manifest_path.exists() {
            return Ok((Self::create(dir)?, BTreeSet::new()));
        }
        let committed: BTreeSet<RunKey> = read_lines_lenient(&manifest_path)?
            .iter()
            .filter_map(|l| serde_json::from_str(l).ok())
            .collect();

        let mut kept = Vec::new();
        let mut done = BTreeSet::new();
        for line in read_lines_lenient(&records_path)? {
            let Ok(record) = serde_json::from_str::<RunRecord>(&line) else {
                continue;
            };
            if committed.contains(&record.key) && done.insert(record.key.clone()) {
                kept.push(line);
            }
        }
        let manifest_lines: Vec<String> = done
            .iter()
            .map(|k| serde_json::to_string(k).expect("key serializes"))
            .collect();
        info!(
            "resuming {}: {} completed runs, {} uncommitted lines dropped",
            dir.display(),
            done.len(),
            committed.len().saturating_sub(done.len())
        );
        write_fresh(&records_path, RECORDS_SCHEMA, &kept)?;
        write_fresh(&manifest_path, MANIFEST_SCHEMA, &manifest_lines)?;
        let sink = Self {
            dir: dir.to_path_buf(),
            files: Mutex::new(SinkFiles {
                records: open_append(&records_path)?,
                manifest: open_append(&manifest_path)?,
            }),
        };
        Ok((sink, done))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn records_path(&self) -> PathBuf {
        self.dir.join(RECORDS_FILE)
    }
}

/// Body lines after the header; a torn final line is skipped.
fn read_lines_lenient(path: &Path) -> Result<Vec<String>, SinkError> {
    let text = fs::read(path).map_err(io_err(path))?;
    let text = String::from_utf8_lossy(&text);
    let complete = match text.rfind('\n') {
        Some(i) => &text[..i],
        None => "",
    };
    Ok(complete
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect())
}

impl RecordSink for FileSink {
    fn append(&self, record: &RunRecord) -> Result<(), SinkError> {
        let record_line =
            serde_json::to_string(record).map_err(|e| SinkError::Rejected(e.to_string()))?;
        let key_line =
            serde_json::to_string(&record.key).map_err(|e| SinkError::Rejected(e.to_string()))?;
        let mut files = self.files.lock().expect("sink poisoned");
        let records_path = self.dir.join(RECORDS_FILE);
        let manifest_path = self.dir.join(MANIFEST_FILE);
        writeln!(files.records, "{record_line}").map_err(io_err(&records_path))?;
        files.records.flush().map_err(io_err(&records_path))?;
        writeln!(files.manifest, "{key_line}").map_err(io_err(&manifest_path))?;
        files.manifest.flush().map_err(io_err(&manifest_path))
    }
}

/// Reads a record file written by [`FileSink`].
pub fn read_records(path: &Path) -> Result<Vec<RunRecord>, RecordsError> {
    let file = File::open(path).map_err(|source| RecordsError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut lines = BufReader::new(file).lines();
    let header: FileHeader = lines
        .next()
        .and_then(|l| l.ok())
        .and_then(|l| serde_json::from_str(&l).ok())
        .ok_or_else(|| RecordsError::MissingHeader {
            path: path.to_path_buf(),
        })?;
    if header.schema != RECORDS_SCHEMA || header.version != SCHEMA_VERSION {
        return Err(RecordsError::SchemaVersionMismatch {
            path: path.to_path_buf(),
            expected_schema: RECORDS_SCHEMA.to_string(),
            expected_version: SCHEMA_VERSION,
            found_schema: header.schema,
            found_version: header.version,
        });
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|source| RecordsError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| RecordsError::BadLine {
            path: path.to_path_buf(),
            line: i + 2,
            reason: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepProgress {
    /// Runs in the plan.
    pub total_configs: usize,
    /// Runs finished with status ok, including runs completed before a resume.
    pub completed: usize,
    /// Runs finished with status oom or backend_error.
    pub failed: usize,
    /// Runs skipped because a previous invocation completed them.
    pub resumed: usize,
    pub current: Option<RunKey>,
    /// Unix time in seconds.
    pub started_at: f64,
    pub elapsed_s: f64,
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    InvalidPlan(#[from] PlanError),
    #[error("device `{device}`: {source}")]
    BackendUnavailable {
        device: String,
        #[source]
        source: BackendError,
    },
    #[error("record sink failed after {written} records: {source}")]
    Sink {
        written: usize,
        #[source]
        source: SinkError,
    },
}

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    /// Keys already persisted; their runs are skipped.
    pub completed: BTreeSet<RunKey>,
    /// Sweep devices on separate threads. Records then interleave across
    /// devices in the sink; each device's own records stay in plan order.
    pub parallel_devices: bool,
}

/// The run keys of one device in execution order.
pub fn run_order(plan: &SweepPlan, device: &str) -> Vec<RunKey> {
    let mut keys = Vec::with_capacity(plan.runs_per_device());
    for (model, precision) in outer_pairs(plan) {
        for sweep in 1..=plan.sweeps {
            for &batch in &plan.batch_sizes {
                for repeat in 1..=plan.repeats {
                    keys.push(RunKey {
                        device: device.to_string(),
                        model: model.name.clone(),
                        precision,
                        batch_size: batch,
                        sweep_index: sweep,
                        repeat_index: repeat,
                    });
                }
            }
        }
    }
    keys
}

fn outer_pairs(plan: &SweepPlan) -> Vec<(&ModelSpec, PrecisionMode)> {
    match plan.loop_order {
        LoopOrder::PrecisionFirst => plan
            .precisions
            .iter()
            .flat_map(|&p| plan.models.iter().map(move |m| (m, p)))
            .collect(),
        LoopOrder::ModelFirst => plan
            .models
            .iter()
            .flat_map(|m| plan.precisions.iter().map(move |&p| (m, p)))
            .collect(),
    }
}

/// Seed handed to the backend for one run: a pure function of the plan seed
/// and the run key, so resumed and uninterrupted sweeps draw the same noise.
pub fn run_seed(plan_seed: u64, key: &RunKey) -> u64 {
    derive_seed(plan_seed, &key.to_string())
}

/// Runs every planned run not already in `options.completed`.
pub fn execute_sweep(
    plan: &SweepPlan,
    factory: &dyn BackendFactory,
    sink: &dyn RecordSink,
    options: &SweepOptions,
) -> Result<SweepProgress, SweepError> {
    let plan = validate_plan(plan.clone())?;
    let started = Instant::now();
    let started_at = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0);
    let progress = Mutex::new(SweepProgress {
        total_configs: plan.total_runs(),
        completed: 0,
        failed: 0,
        resumed: 0,
        current: None,
        started_at,
        elapsed_s: 0.0,
    });

    let results: Vec<Result<(), SweepError>> = if options.parallel_devices && plan.devices.len() > 1
    {
        std::thread::scope(|scope| {
            let handles: Vec<_> = plan
                .devices
                .iter()
                .map(|d| {
                    let (plan, progress) = (&plan, &progress);
                    scope.spawn(move || sweep_device(plan, d, factory, sink, options, progress))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("device thread panicked"))
                .collect()
        })
    } else {
        let mut out = Vec::new();
        for d in &plan.devices {
            let r = sweep_device(&plan, d, factory, sink, options, &progress);
            let fatal = r.is_err();
            out.push(r);
            if fatal {
                break;
            }
        }
        out
    };

    let mut progress = progress.into_inner().expect("progress poisoned");
    progress.elapsed_s = started.elapsed().as_secs_f64();
    progress.current = None;
    results.into_iter().collect::<Result<Vec<()>, _>>()?;
    Ok(progress)
}

/// One device's session plus what is loaded on it.
struct DeviceSession<'a> {
    profile: &'a DeviceProfile,
    factory: &'a dyn BackendFactory,
    backend: Option<Box<dyn Backend>>,
    loaded: Option<(String, PrecisionMode)>,
}

impl DeviceSession<'_> {
    fn backend(&mut self) -> Result<&mut Box<dyn Backend>, BackendError> {
        if self.backend.is_none() {
            debug!("opening session on {}", self.profile.spec.name);
            self.backend = Some(self.factory.open(self.profile)?);
            self.loaded = None;
        }
        Ok(self.backend.as_mut().expect("just opened"))
    }

    /// Makes (model, precision) resident, preparing the INT8 engine once.
    fn ensure_loaded(
        &mut self,
        model: &ModelSpec,
        precision: PrecisionMode,
    ) -> Result<(), BackendError> {
        let want = (model.name.clone(), precision);
        if self.backend.is_some() && self.loaded.as_ref() == Some(&want) {
            return Ok(());
        }
        self.loaded = None;
        let backend = self.backend()?;
        backend.load_model(model, precision)?;
        if precision == PrecisionMode::Int8 {
            let seconds = backend.prepare_engine()?;
            debug!(
                "engine for {} {precision} ready after {seconds:.1} s",
                model.name
            );
        }
        self.loaded = Some(want);
        Ok(())
    }

    /// Drops a session that can no longer be trusted; the next run reopens.
    fn discard(&mut self) {
        if let Some(mut b) = self.backend.take() {
            let _ = b.release();
        }
        self.loaded = None;
    }
}

fn sweep_device(
    plan: &SweepPlan,
    profile: &DeviceProfile,
    factory: &dyn BackendFactory,
    sink: &dyn RecordSink,
    options: &SweepOptions,
    progress: &Mutex<SweepProgress>,
) -> Result<(), SweepError> {
    let device = profile.spec.name.as_str();
    let keys = run_order(plan, device);
    let pending = keys
        .iter()
        .filter(|k| !options.completed.contains(k))
        .count();
    {
        let mut p = progress.lock().expect("progress poisoned");
        p.resumed += keys.len() - pending;
        p.completed += keys.len() - pending;
    }
    if pending == 0 {
        return Ok(());
    }

    let mut session = DeviceSession {
        profile,
        factory,
        backend: None,
        loaded: None,
    };
    session
        .backend()
        .map_err(|source| SweepError::BackendUnavailable {
            device: device.to_string(),
            source,
        })?;

    let period = Duration::from_millis(u64::from(plan.telemetry_period_ms));
    let mut written = 0usize;
    for key in keys.iter().filter(|k| !options.completed.contains(k)) {
        progress.lock().expect("progress poisoned").current = Some(key.clone());
        let model = plan
            .models
            .iter()
            .find(|m| m.name == key.model)
            .expect("key derives from plan");
        let record = run_one(plan, &mut session, model, key, period);
        sink.append(&record)
            .map_err(|source| SweepError::Sink { written, source })?;
        written += 1;
        let mut p = progress.lock().expect("progress poisoned");
        if record.status == RunStatus::Ok {
            p.completed += 1;
        } else {
            p.failed += 1;
        }
        if written.is_multiple_of(500) {
            info!("{device}: {written}/{pending} runs");
        }
    }
    session.discard();
    Ok(())
}

fn failed_record(key: &RunKey, status: RunStatus, error: &BackendError) -> RunRecord {
    RunRecord {
        key: key.clone(),
        latencies: Vec::new(),
        telemetry: Vec::new(),
        status,
        warnings: vec![format!("{}: {error}", error.code())],
    }
}

fn status_for(error: &BackendError) -> RunStatus {
    match error {
        BackendError::OutOfMemory { .. } => RunStatus::Oom,
        _ => RunStatus::BackendError,
    }
}

fn run_one(
    plan: &SweepPlan,
    session: &mut DeviceSession,
    model: &ModelSpec,
    key: &RunKey,
    period: Duration,
) -> RunRecord {
    if let Err(e) = session.ensure_loaded(model, key.precision) {
        warn!("{key}: cannot load model: {e}");
        if e.is_fatal() {
            session.discard();
        }
        return failed_record(key, status_for(&e), &e);
    }
    let backend = session.backend.as_mut().expect("loaded implies open");
    let seed = run_seed(plan.seed, key);
    let (result, telemetry, mut warnings) = sample_during_run(backend.as_mut(), period, |b| {
        b.run_iterations(
            key.batch_size,
            plan.warmup_iters,
            plan.timed_iters,
            Some(seed),
        )
    });
    match result {
        Ok(latencies) => RunRecord {
            key: key.clone(),
            latencies,
            telemetry,
            status: RunStatus::Ok,
            warnings,
        },
        Err(e) => {
            if e.is_fatal() {
                warn!("{key}: backend failed: {e}; reopening session");
                session.discard();
            } else {
                debug!("{key}: {e}");
            }
            warnings.insert(0, format!("{}: {e}", e.code()));
            RunRecord {
                key: key.clone(),
                latencies: Vec::new(),
                telemetry,
                status: status_for(&e),
                warnings,
            }
        }
    }
}

/// Runs `body` while sampling telemetry every `period`.
///
/// Wall-clock backends are polled from a separate thread for the duration of
/// the run, followed by one post-run query so short runs and late spikes are
/// not missed. Virtual-clock backends replay the run at the same period.
/// Timestamps in the result are strictly increasing. A sampler failure
/// yields empty telemetry and a warning; it never fails the run.
pub fn sample_during_run<T>(
    backend: &mut dyn Backend,
    period: Duration,
    body: impl FnOnce(&mut dyn Backend) -> Result<T, BackendError>,
) -> (Result<T, BackendError>, Vec<TelemetrySample>, Vec<String>) {
    let mut warnings = Vec::new();
    if backend.clock() == ClockDomain::Virtual {
        let result = body(backend);
        let samples = match backend.replay_telemetry(period.as_secs_f64()) {
            Some(s) => s,
            None => match backend.query_telemetry() {
                Ok(s) => vec![s],
                Err(e) => {
                    warnings.push(format!("telemetry unavailable: {e}"));
                    Vec::new()
                }
            },
        };
        return (result, strictly_increasing(samples), warnings);
    }

    let probe = backend.telemetry_probe();
    let (stop_tx, stop_rx) = mpsc::channel::<()>();
    let sampler = std::thread::spawn(move || poll(probe, period, stop_rx));
    let result = body(backend);
    let _ = stop_tx.send(());
    let polled = sampler
        .join()
        .unwrap_or_else(|_| Err(BackendError::crashed("sampler panicked")));
    let samples = polled.and_then(|mut samples| {
        samples.push(backend.query_telemetry()?);
        Ok(samples)
    });
    match samples {
        Ok(samples) => (result, strictly_increasing(samples), warnings),
        Err(e) => {
            warnings.push(format!("telemetry sampler failed: {e}"));
            (result, Vec::new(), warnings)
        }
    }
}

fn poll(
    probe: Arc<dyn TelemetryProbe>,
    period: Duration,
    stop: mpsc::Receiver<()>,
) -> Result<Vec<TelemetrySample>, BackendError> {
    let mut samples = Vec::new();
    let start = Instant::now();
    let mut next = period;
    loop {
        let wait = next.saturating_sub(start.elapsed());
        match stop.recv_timeout(wait) {
            Err(mpsc::RecvTimeoutError::Timeout) => {}
            _ => return Ok(samples),
        }
        samples.push(probe.sample()?);
        next += period;
    }
}

fn strictly_increasing(samples: Vec<TelemetrySample>) -> Vec<TelemetrySample> {
    let mut out: Vec<TelemetrySample> = Vec::with_capacity(samples.len());
    for s in samples {
        if out
            .last()
            .is_none_or(|prev| s.timestamp_s > prev.timestamp_s)
        {
            out.push(s);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("need samples spanning at least {window_s} s, have {span_s} s over {count} samples")]
pub struct InsufficientSamples {
    pub window_s: f64,
    pub span_s: f64,
    pub count: usize,
}

/// True iff the temperature range over the trailing `window_s` of the trace
/// is at most `tol_c`.
pub fn detect_steady_state(
    samples: &[TelemetrySample],
    window_s: f64,
    tol_c: f64,
) -> Result<bool, InsufficientSamples> {
    let span_s = match (samples.first(), samples.last()) {
        (Some(a), Some(b)) => b.timestamp_s - a.timestamp_s,
        _ => 0.0,
    };
    if samples.len() < 2 || span_s < window_s {
        return Err(InsufficientSamples {
            window_s,
            span_s,
            count: samples.len(),
        });
    }
    let end = samples.last().expect("non-empty").timestamp_s;
    let (lo, hi) = samples
        .iter()
        .filter(|s| s.timestamp_s >= end - window_s)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
            (lo.min(s.temp_c), hi.max(s.temp_c))
        });
    Ok(hi - lo <= tol_c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::default_plan;
    use crate::sim::SimFactory;

    fn small_plan() -> SweepPlan {
        let mut plan = default_plan().unwrap();
        plan.devices.truncate(1);
        plan.models.truncate(1);
        plan.batch_sizes = vec![1, 8];
        plan.sweeps = 2;
        plan.repeats = 2;
        plan.warmup_iters = 2;
        plan.timed_iters = 5;
        plan
    }

    #[test]
    fn order_is_precision_model_sweep_batch_repeat() {
        let mut plan = small_plan();
        plan.models = default_plan().unwrap().models;
        let keys = run_order(&plan, "d");
        assert_eq!(keys.len(), plan.runs_per_device());
        assert_eq!(keys[0].precision, PrecisionMode::Fp32);
        assert_eq!(keys[0].model, plan.models[0].name);
        assert_eq!((keys[1].batch_size, keys[1].repeat_index), (1, 2));
        assert_eq!((keys[2].batch_size, keys[2].repeat_index), (8, 1));
        assert_eq!(keys[4].sweep_index, 2);
        assert_eq!(keys[8].model, plan.models[1].name);
        plan.loop_order = LoopOrder::ModelFirst;
        let keys = run_order(&plan, "d");
        assert_eq!(keys[8].precision, PrecisionMode::Fp16);
    }

    #[test]
    fn small_sweep_counts() {
        let plan = small_plan();
        let sink = MemorySink::new();
        let progress = execute_sweep(
            &plan,
            &SimFactory { seed: 1 },
            &sink,
            &SweepOptions::default(),
        )
        .unwrap();
        let records = sink.into_records();
        assert_eq!(records.len(), plan.total_runs());
        assert_eq!(progress.completed, plan.total_runs());
        assert!(records
            .iter()
            .all(|r| r.latencies.len() == 5 && !r.telemetry.is_empty()));
    }

    #[test]
    fn steady_state_cases() {
        let s = |t: f64, c: f64| TelemetrySample {
            timestamp_s: t,
            mem_used_bytes: 0,
            power_w: 0.0,
            temp_c: c,
            util_pct: 0.0,
        };
        let flat: Vec<_> = (0..20).map(|i| s(f64::from(i), 60.0)).collect();
        assert_eq!(detect_steady_state(&flat, 10.0, 0.5), Ok(true));
        let ramp: Vec<_> = (0..20)
            .map(|i| s(f64::from(i), 40.0 + f64::from(i)))
            .collect();
        assert_eq!(detect_steady_state(&ramp, 10.0, 0.5), Ok(false));
        assert!(detect_steady_state(&[s(0.0, 50.0)], 10.0, 0.5).is_err());
    }

    #[test]
    fn header_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(RECORDS_FILE);
        fs::write(&path, "{\"schema\":\"gapbench.records\",\"version\":9}\n").unwrap();
        assert!(matches!(
            read_records(&path),
            Err(RecordsError::SchemaVersionMismatch { .. })
        ));
    }
}
