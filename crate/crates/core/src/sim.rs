//! Analytic accelerator model.
//!
//! Latency follows a roofline: a fixed launch overhead plus the larger of the
//! compute time and the memory time for one batched forward pass. Achieved
//! compute rate rises with batch as `B / (B + B_half)`. Memory is a runtime
//! baseline plus weights plus per-image tensors, all scaled by precision
//! width. Power, temperature and utilization follow the device load, with
//! temperature relaxing exponentially toward a load-dependent steady state.
//!
//! Everything runs on a virtual clock, so a full sweep costs no wall time.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{
    DeviceKind, DeviceSpec, LatencySample, ModelSpec, PrecisionMode, TelemetrySample,
};
use crate::protocol::{
    Backend, BackendError, BackendFactory, BackendSession, ClockDomain, SessionState,
    TelemetryProbe,
};

/// Simulator-only constants attached to a device preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    /// Batch at which half of peak compute is reached, per precision.
    pub half_saturation_batch: BTreeMap<PrecisionMode, f64>,
    pub temp_ambient_c: f64,
    /// Steady temperature under full load.
    pub temp_steady_c: f64,
    pub temp_tau_s: f64,
    /// Virtual duration of the engine-preparation phase.
    pub engine_prepare_s: f64,
    /// Fraction of iterations hit by a straggler.
    pub tail_fraction: f64,
    /// Straggler slowdown is `1 + tail_factor * noise_cv`.
    pub tail_factor: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            half_saturation_batch: PrecisionMode::ALL.iter().map(|p| (*p, 8.0)).collect(),
            temp_ambient_c: 35.0,
            temp_steady_c: 68.0,
            temp_tau_s: 60.0,
            engine_prepare_s: 30.0,
            tail_fraction: 0.01,
            tail_factor: 3.0,
        }
    }
}

impl SimParams {
    pub fn half_saturation(&self, precision: PrecisionMode) -> f64 {
        self.half_saturation_batch
            .get(&precision)
            .copied()
            .unwrap_or(8.0)
    }

    pub fn check(&self) -> Vec<String> {
        let mut problems = Vec::new();
        for (p, b) in &self.half_saturation_batch {
            if !(b.is_finite() && *b >= 0.0) {
                problems.push(format!("half_saturation_batch[{p}] must be >= 0"));
            }
        }
        if !(self.temp_ambient_c <= self.temp_steady_c) {
            problems.push("temp_ambient_c must be <= temp_steady_c".into());
        }
        if !(self.temp_tau_s > 0.0) {
            problems.push("temp_tau_s must be > 0".into());
        }
        if !(self.engine_prepare_s >= 0.0) {
            problems.push("engine_prepare_s must be >= 0".into());
        }
        if !(0.0..1.0).contains(&self.tail_fraction) {
            problems.push("tail_fraction must be in [0, 1)".into());
        }
        if !(self.tail_factor >= 0.0) {
            problems.push("tail_factor must be >= 0".into());
        }
        problems
    }
}

/// A device parameter file: the device description plus simulator constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    #[serde(flatten)]
    pub spec: DeviceSpec,
    #[serde(default)]
    pub simulation: SimParams,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("unsupported precision {0}")]
    UnsupportedPrecision(PrecisionMode),
    #[error("batch must be >= 1")]
    InvalidBatch,
}

/// Fraction of peak compute achieved at `batch`.
pub fn utilization_factor(batch: f64, half_saturation: f64) -> f64 {
    batch / (batch + half_saturation)
}

/// Bytes moved per image: tensors plus the weight traffic amortized over the
/// batch.
pub fn bytes_moved_per_image(model: &ModelSpec, precision: PrecisionMode, batch: u32) -> f64 {
    let act = model.activation_bytes_per_image as f64;
    let weights = model.param_bytes as f64 / f64::from(batch);
    (act + weights) * precision.width_ratio()
}

/// Compute-limited and memory-limited time of one batched call, without
/// the launch overhead.
pub fn roofline_times(
    profile: &DeviceProfile,
    model: &ModelSpec,
    precision: PrecisionMode,
    batch: u32,
) -> Result<(f64, f64), SimError> {
    if batch == 0 {
        return Err(SimError::InvalidBatch);
    }
    let peak = profile.spec.peak_ops_per_s(precision);
    if !(peak > 0.0) {
        return Err(SimError::UnsupportedPrecision(precision));
    }
    let b = f64::from(batch);
    let effective_peak =
        utilization_factor(b, profile.simulation.half_saturation(precision)) * peak;
    let compute = b * model.flops_per_image / effective_peak;
    let memory = b * bytes_moved_per_image(model, precision, batch)
        / profile.spec.mem_bandwidth_bytes_per_s();
    Ok((compute, memory))
}

/// Noise-free latency of one batched forward pass, in seconds.
pub fn sim_latency(
    profile: &DeviceProfile,
    model: &ModelSpec,
    precision: PrecisionMode,
    batch: u32,
) -> Result<f64, SimError> {
    let (compute, memory) = roofline_times(profile, model, precision, batch)?;
    Ok(profile.spec.launch_overhead_s + compute.max(memory))
}

/// Resident bytes with the model loaded but no tensors allocated.
pub fn model_footprint(device: &DeviceSpec, model: &ModelSpec, precision: PrecisionMode) -> u64 {
    device.base_runtime_bytes + scaled(model.param_bytes, precision)
}

/// Resident bytes with tensors for `batch` allocated.
pub fn sim_memory(
    device: &DeviceSpec,
    model: &ModelSpec,
    precision: PrecisionMode,
    batch: u32,
) -> u64 {
    model_footprint(device, model, precision)
        + u64::from(batch) * scaled(model.activation_bytes_per_image, precision)
}

fn scaled(bytes: u64, precision: PrecisionMode) -> u64 {
    bytes * u64::from(precision.bits_per_value()) / 32
}

/// Device load (0..1) while running `batch`: the achieved compute fraction
/// times the share of each call not spent in launch overhead.
pub fn busy_load(
    profile: &DeviceProfile,
    model: &ModelSpec,
    precision: PrecisionMode,
    batch: u32,
) -> Result<f64, SimError> {
    let latency = sim_latency(profile, model, precision, batch)?;
    let u = utilization_factor(
        f64::from(batch),
        profile.simulation.half_saturation(precision),
    );
    Ok((u * (1.0 - profile.spec.launch_overhead_s / latency)).clamp(0.0, 1.0))
}

pub fn power_at(device: &DeviceSpec, load: f64) -> f64 {
    device.idle_power_w + load * (device.max_power_w - device.idle_power_w)
}

/// One latency draw around `nominal`: multiplicative log-normal noise with
/// unit mean and coefficient of variation `noise_cv`, plus an occasional
/// straggler.
pub fn noisy_latency(rng: &mut ChaCha8Rng, profile: &DeviceProfile, nominal: f64) -> f64 {
    let cv = profile.spec.noise_cv;
    if cv == 0.0 {
        return nominal;
    }
    let sigma = (1.0 + cv * cv).ln().sqrt();
    let lognormal = LogNormal::new(-0.5 * sigma * sigma, sigma).expect("finite sigma");
    let factor: f64 = lognormal.sample(rng);
    let straggler = rng.random::<f64>() < profile.simulation.tail_fraction;
    let tail = if straggler {
        1.0 + profile.simulation.tail_factor * cv
    } else {
        1.0
    };
    nominal * factor * tail
}

/// Seed for a labelled random stream derived from a base seed.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Mutable state of one simulated device.
#[derive(Debug, Clone)]
pub struct SimState {
    pub device: DeviceSpec,
    pub resident_model: Option<(ModelSpec, PrecisionMode)>,
    pub rng_state: ChaCha8Rng,
    pub temp_c: f64,
    pub temp_ambient_c: f64,
    pub temp_steady_c: f64,
    pub temp_tau_s: f64,
    /// Virtual seconds since the session opened.
    pub clock_s: f64,
    pub load: f64,
    pub mem_used_bytes: u64,
}

impl SimState {
    pub fn new(profile: &DeviceProfile, seed: u64) -> Self {
        Self {
            device: profile.spec.clone(),
            resident_model: None,
            rng_state: ChaCha8Rng::seed_from_u64(seed),
            temp_c: profile.simulation.temp_ambient_c,
            temp_ambient_c: profile.simulation.temp_ambient_c,
            temp_steady_c: profile.simulation.temp_steady_c,
            temp_tau_s: profile.simulation.temp_tau_s,
            clock_s: 0.0,
            load: 0.0,
            mem_used_bytes: profile.spec.base_runtime_bytes,
        }
    }

    /// Steady temperature at a constant `load`.
    pub fn steady_temp(&self, load: f64) -> f64 {
        self.temp_ambient_c + load * (self.temp_steady_c - self.temp_ambient_c)
    }

    /// Temperature after holding `load` for `dt` starting from `temp`.
    pub fn relax(&self, temp: f64, load: f64, dt: f64) -> f64 {
        let target = self.steady_temp(load);
        target + (temp - target) * (-dt / self.temp_tau_s).exp()
    }

    pub fn snapshot(&self) -> TelemetrySample {
        TelemetrySample {
            timestamp_s: self.clock_s,
            mem_used_bytes: self.mem_used_bytes,
            power_w: power_at(&self.device, self.load),
            temp_c: self.temp_c,
            util_pct: 100.0 * self.load,
        }
    }
}

/// Holds `load` for `dt` seconds and returns the telemetry at the end.
pub fn sim_power_temp_util(state: &mut SimState, load: f64, dt: f64) -> TelemetrySample {
    let load = load.clamp(0.0, 1.0);
    state.temp_c = state.relax(state.temp_c, load, dt);
    state.clock_s += dt;
    state.load = load;
    state.snapshot()
}

#[derive(Debug, Clone)]
struct RunTimeline {
    start_clock: f64,
    start_temp: f64,
    mem_bytes: u64,
    /// (duration, load) pieces in order.
    segments: Vec<(f64, f64)>,
}

impl RunTimeline {
    fn duration(&self) -> f64 {
        self.segments.iter().map(|(d, _)| d).sum()
    }
}

struct Shared {
    state: SimState,
    closed: bool,
}

struct SimProbe(Arc<Mutex<Shared>>);

impl TelemetryProbe for SimProbe {
    fn sample(&self) -> Result<TelemetrySample, BackendError> {
        let shared = self.0.lock().expect("sim state poisoned");
        if shared.closed {
            return Err(BackendError::SessionClosed);
        }
        Ok(shared.state.snapshot())
    }
}

struct Allocation {
    batch: u32,
    nominal_latency_s: f64,
    load: f64,
}

/// In-process simulated backend.
pub struct SimBackend {
    profile: DeviceProfile,
    session: BackendSession,
    shared: Arc<Mutex<Shared>>,
    allocation: Option<Allocation>,
    engines: BTreeSet<(String, PrecisionMode)>,
    last_run: Option<RunTimeline>,
}

impl SimBackend {
    pub fn open(profile: &DeviceProfile, seed: u64) -> Result<Self, BackendError> {
        if profile.spec.mem_capacity_bytes == 0 {
            return Err(BackendError::unavailable(format!(
                "device `{}` has no memory",
                profile.spec.name
            )));
        }
        let mut problems = profile.spec.check();
        problems.extend(profile.simulation.check());
        if !problems.is_empty() {
            return Err(BackendError::unavailable(problems.join("; ")));
        }
        let capabilities = PrecisionMode::ALL
            .into_iter()
            .filter(|p| profile.spec.peak_ops_per_s(*p) > 0.0)
            .collect();
        let mut device = profile.spec.clone();
        device.kind = DeviceKind::Simulated;
        let seed = derive_seed(seed, &profile.spec.name);
        Ok(Self {
            profile: profile.clone(),
            session: BackendSession {
                device,
                capabilities,
                state: SessionState::Idle,
            },
            shared: Arc::new(Mutex::new(Shared {
                state: SimState::new(profile, seed),
                closed: false,
            })),
            allocation: None,
            engines: BTreeSet::new(),
            last_run: None,
        })
    }

    pub fn profile(&self) -> &DeviceProfile {
        &self.profile
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Shared> {
        self.shared.lock().expect("sim state poisoned")
    }

    fn ensure_open(&self) -> Result<(), BackendError> {
        if self.session.state == SessionState::Closed {
            Err(BackendError::SessionClosed)
        } else {
            Ok(())
        }
    }

    fn resident(&self) -> Option<(ModelSpec, PrecisionMode)> {
        self.lock().state.resident_model.clone()
    }

    /// Runs `iterations` calls at the allocated batch, advancing the clock.
    fn execute(&mut self, op: &'static str, iterations: u32) -> Result<Vec<f64>, BackendError> {
        self.ensure_open()?;
        let (_, precision) = self.resident().ok_or(BackendError::InvalidState {
            op: op.into(),
            state: self.session.state,
        })?;
        self.session.check_runnable(op, precision)?;
        let (nominal, load) = match &self.allocation {
            Some(a) => (a.nominal_latency_s, a.load),
            None => {
                return Err(BackendError::InvalidState {
                    op: op.into(),
                    state: self.session.state,
                })
            }
        };
        let mut shared = self.lock();
        let latencies: Vec<f64> = (0..iterations)
            .map(|_| noisy_latency(&mut shared.state.rng_state, &self.profile, nominal))
            .collect();
        let elapsed: f64 = latencies.iter().sum();
        sim_power_temp_util(&mut shared.state, load, elapsed);
        shared.state.load = 0.0;
        drop(shared);
        if let Some(run) = self.last_run.as_mut() {
            run.segments.push((elapsed, load));
        }
        Ok(latencies)
    }
}

impl Backend for SimBackend {
    fn session(&self) -> &BackendSession {
        &self.session
    }

    fn load_model(
        &mut self,
        model: &ModelSpec,
        precision: PrecisionMode,
    ) -> Result<(), BackendError> {
        self.ensure_open()?;
        if !self.session.capabilities.contains(&precision) {
            return Err(BackendError::UnsupportedPrecision { precision });
        }
        let required = model_footprint(&self.session.device, model, precision);
        let capacity = self.session.device.mem_capacity_bytes;
        let mut shared = self.lock();
        if required > capacity {
            return Err(BackendError::OutOfMemory { required, capacity });
        }
        shared.state.resident_model = Some((model.clone(), precision));
        shared.state.mem_used_bytes = required;
        drop(shared);
        self.allocation = None;
        self.session.state = SessionState::ModelLoaded;
        Ok(())
    }

    fn prepare_engine(&mut self) -> Result<f64, BackendError> {
        self.ensure_open()?;
        let (model, precision) = self.resident().ok_or(BackendError::InvalidState {
            op: "prepare_engine".into(),
            state: self.session.state,
        })?;
        let key = (model.name.clone(), precision);
        let duration = if self.engines.contains(&key) {
            0.0
        } else {
            self.profile.simulation.engine_prepare_s
        };
        if duration > 0.0 {
            let mut shared = self.lock();
            sim_power_temp_util(&mut shared.state, 0.0, duration);
        }
        self.engines.insert(key);
        self.session.state = SessionState::EngineReady;
        Ok(duration)
    }

    fn alloc(&mut self, batch: u32, seed: Option<u64>) -> Result<u64, BackendError> {
        self.ensure_open()?;
        if batch == 0 {
            return Err(BackendError::invalid("batch must be >= 1"));
        }
        let (model, precision) = self.resident().ok_or(BackendError::InvalidState {
            op: "alloc".into(),
            state: self.session.state,
        })?;
        self.session.check_runnable("alloc", precision)?;
        let required = sim_memory(&self.session.device, &model, precision, batch);
        let capacity = self.session.device.mem_capacity_bytes;
        let mut shared = self.lock();
        if let Some(seed) = seed {
            shared.state.rng_state = ChaCha8Rng::seed_from_u64(seed);
        }
        let start_temp = shared.state.temp_c;
        let start_clock = shared.state.clock_s;
        let resident_bytes = if required > capacity {
            model_footprint(&self.session.device, &model, precision)
        } else {
            required
        };
        shared.state.mem_used_bytes = resident_bytes;
        drop(shared);
        self.last_run = Some(RunTimeline {
            start_clock,
            start_temp,
            mem_bytes: resident_bytes,
            segments: Vec::new(),
        });
        if required > capacity {
            self.allocation = None;
            return Err(BackendError::OutOfMemory { required, capacity });
        }
        let to_backend = |e: SimError| BackendError::invalid(e.to_string());
        self.allocation = Some(Allocation {
            batch,
            nominal_latency_s: sim_latency(&self.profile, &model, precision, batch)
                .map_err(to_backend)?,
            load: busy_load(&self.profile, &model, precision, batch).map_err(to_backend)?,
        });
        Ok(required)
    }

    fn warmup(&mut self, iterations: u32) -> Result<(), BackendError> {
        self.execute("warmup", iterations).map(|_| ())
    }

    fn infer(&mut self, iterations: u32) -> Result<Vec<LatencySample>, BackendError> {
        if iterations == 0 {
            return Err(BackendError::invalid("timed iteration count must be >= 1"));
        }
        let latencies = self.execute("infer", iterations)?;
        Ok(latencies
            .into_iter()
            .enumerate()
            .map(|(i, latency_s)| LatencySample {
                iteration_index: i as u32,
                latency_s,
            })
            .collect())
    }

    fn telemetry_probe(&self) -> Arc<dyn TelemetryProbe> {
        Arc::new(SimProbe(Arc::clone(&self.shared)))
    }

    fn clock(&self) -> ClockDomain {
        ClockDomain::Virtual
    }

    fn replay_telemetry(&self, period_s: f64) -> Option<Vec<TelemetrySample>> {
        let run = self.last_run.as_ref()?;
        let state = self.lock().state.clone();
        Some(replay(&state, run, period_s))
    }

    fn release(&mut self) -> Result<(), BackendError> {
        self.ensure_open()?;
        let mut shared = self.lock();
        shared.closed = true;
        shared.state.resident_model = None;
        shared.state.load = 0.0;
        drop(shared);
        self.allocation = None;
        self.session.state = SessionState::Closed;
        Ok(())
    }
}

impl SimBackend {
    /// Batch of the current allocation.
    pub fn allocated_batch(&self) -> Option<u32> {
        self.allocation.as_ref().map(|a| a.batch)
    }
}

/// Samples a run timeline at `start + k * period` for every k with `k * period <=
/// duration`, then at the run end if that was not already a sample point.
fn replay(state: &SimState, run: &RunTimeline, period_s: f64) -> Vec<TelemetrySample> {
    let duration = run.duration();
    let mut times = Vec::new();
    if period_s > 0.0 {
        let n = (duration / period_s + 1e-9).floor() as u64;
        times.extend((1..=n).map(|k| (k as f64 * period_s).min(duration)));
    }
    let end_is_sampled = times
        .last()
        .is_some_and(|t| (duration - t).abs() <= 1e-12 * duration.max(1.0));
    if !end_is_sampled {
        times.push(duration);
    }

    let mut samples = Vec::with_capacity(times.len());
    let mut seg = 0;
    let mut seg_start = 0.0;
    let mut temp_at_seg_start = run.start_temp;
    for t in times {
        while seg < run.segments.len() && seg_start + run.segments[seg].0 < t {
            let (d, load) = run.segments[seg];
            temp_at_seg_start = state.relax(temp_at_seg_start, load, d);
            seg_start += d;
            seg += 1;
        }
        let (temp, load) = match run.segments.get(seg) {
            Some(&(_, load)) => (state.relax(temp_at_seg_start, load, t - seg_start), load),
            None => (temp_at_seg_start, 0.0),
        };
        samples.push(TelemetrySample {
            timestamp_s: run.start_clock + t,
            mem_used_bytes: run.mem_bytes,
            power_w: power_at(&state.device, load),
            temp_c: temp,
            util_pct: 100.0 * load,
        });
    }
    samples
}

/// Opens [`SimBackend`] sessions; seeds derive from `seed` and device name.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimFactory {
    pub seed: u64,
}

impl BackendFactory for SimFactory {
    fn open(&self, device: &DeviceProfile) -> Result<Box<dyn Backend>, BackendError> {
        Ok(Box::new(SimBackend::open(device, self.seed)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::{device_preset, model_by_name, model_registry};

    const ALG1_BATCHES: [u32; 11] = [1, 2, 4, 8, 16, 32, 64, 128, 256, 384, 512];

    fn t4() -> DeviceProfile {
        device_preset("t4.sim").unwrap()
    }

    fn l4() -> DeviceProfile {
        device_preset("l4.sim").unwrap()
    }

    fn resnet(n: &str) -> ModelSpec {
        model_by_name(n).unwrap()
    }

    #[test]
    fn overhead_dominated_at_batch_one() {
        let mut dev = t4();
        dev.spec.launch_overhead_s = 1e-3;
        let mut tiny = resnet("resnet18");
        tiny.flops_per_image = 1.0;
        tiny.param_bytes = 0;
        tiny.activation_bytes_per_image = 1;
        let lat = sim_latency(&dev, &tiny, PrecisionMode::Fp32, 1).unwrap();
        assert!((lat - 1e-3).abs() < 1e-9, "{lat}");
    }

    #[test]
    fn latency_strictly_increases_over_batch_set() {
        for dev in [t4(), l4()] {
            for model in model_registry() {
                for p in PrecisionMode::ALL {
                    for pair in ALG1_BATCHES.windows(2) {
                        let a = sim_latency(&dev, &model, p, pair[0]).unwrap();
                        let b = sim_latency(&dev, &model, p, pair[1]).unwrap();
                        assert!(b > a, "{} {} {p} {pair:?}", dev.spec.name, model.name);
                    }
                }
            }
        }
    }

    #[test]
    fn int8_to_fp32_asymptote_follows_peak_ratio() {
        let dev = l4();
        let model = resnet("resnet18");
        let batch = 10_000_000;
        let thr = |p| f64::from(batch) / sim_latency(&dev, &model, p, batch).unwrap();
        let ratio = thr(PrecisionMode::Int8) / thr(PrecisionMode::Fp32);
        assert!((ratio - 242.0 / 30.3).abs() < 0.01, "{ratio}");
        assert!(ratio > 7.98 && ratio < 8.0);
    }

    #[test]
    fn memory_scales_with_width() {
        let dev = t4().spec;
        let m = resnet("resnet50");
        let at = |p| sim_memory(&dev, &m, p, 64);
        assert!(at(PrecisionMode::Int8) < at(PrecisionMode::Fp16));
        assert!(at(PrecisionMode::Fp16) < at(PrecisionMode::Fp32));
        assert!(sim_memory(&dev, &m, PrecisionMode::Int8, 1) >= dev.base_runtime_bytes);
    }

    #[test]
    fn memory_growth_small_relative_to_weights_and_runtime() {
        for dev in [t4(), l4()] {
            for m in model_registry() {
                for p in PrecisionMode::ALL {
                    let lo = sim_memory(&dev.spec, &m, p, 1);
                    let hi = sim_memory(&dev.spec, &m, p, 512);
                    assert!(hi - lo < 320_000_000);
                }
            }
        }
    }

    #[test]
    fn unsupported_precision_when_peak_is_zero() {
        let mut dev = t4();
        dev.spec.peak_int8_tops = 0.0;
        assert_eq!(
            sim_latency(&dev, &resnet("resnet18"), PrecisionMode::Int8, 4),
            Err(SimError::UnsupportedPrecision(PrecisionMode::Int8))
        );
    }

    #[test]
    fn idle_fixed_point() {
        let dev = t4();
        let mut state = SimState::new(&dev, 1);
        state.temp_c = 60.0;
        let s = sim_power_temp_util(&mut state, 0.0, 3600.0);
        assert!((s.temp_c - dev.simulation.temp_ambient_c).abs() < 1e-6);
        assert_eq!(s.power_w, dev.spec.idle_power_w);
        assert_eq!(s.util_pct, 0.0);
    }

    #[test]
    fn full_load_settles_in_datacenter_band() {
        for dev in [t4(), l4()] {
            let mut state = SimState::new(&dev, 1);
            let s = sim_power_temp_util(&mut state, 1.0, 3600.0);
            assert!((65.0..=72.0).contains(&s.temp_c), "{}", s.temp_c);
            assert_eq!(s.power_w, dev.spec.max_power_w);
            assert_eq!(s.util_pct, 100.0);
        }
    }

    #[test]
    fn step_response_within_five_percent_after_three_tau() {
        let dev = t4();
        let mut state = SimState::new(&dev, 1);
        let start = state.temp_c;
        let steady = state.steady_temp(1.0);
        let tau = state.temp_tau_s;
        // three equal steps must compose to the single closed-form step
        for _ in 0..3 {
            sim_power_temp_util(&mut state, 1.0, tau);
        }
        let closed_form = steady + (start - steady) * (-3.0f64).exp();
        assert!((state.temp_c - closed_form).abs() < 1e-9);
        assert!((state.temp_c - steady).abs() < 0.05 * (steady - start));
    }

    #[test]
    fn temperature_stays_in_band() {
        let dev = l4();
        let mut state = SimState::new(&dev, 1);
        for (i, load) in [1.0, 0.2, 0.9, 0.0, 0.5]
            .iter()
            .cycle()
            .take(50)
            .enumerate()
        {
            sim_power_temp_util(&mut state, *load, 7.0 * (i as f64 + 1.0));
            assert!(state.temp_c >= state.temp_ambient_c - 1e-9);
            assert!(state.temp_c <= state.temp_steady_c + 5.0);
        }
    }

    #[test]
    fn open_rejects_zero_capacity() {
        let mut dev = t4();
        dev.spec.mem_capacity_bytes = 0;
        assert!(matches!(
            SimBackend::open(&dev, 0),
            Err(BackendError::BackendUnavailable { .. })
        ));
    }

    #[test]
    fn noiseless_runs_are_constant() {
        let mut dev = t4();
        dev.spec.noise_cv = 0.0;
        let mut b = SimBackend::open(&dev, 3).unwrap();
        b.load_model(&resnet("resnet18"), PrecisionMode::Fp32)
            .unwrap();
        let s = b.run_iterations(8, 20, 100, Some(1)).unwrap();
        assert_eq!(s.len(), 100);
        let expected = sim_latency(&dev, &resnet("resnet18"), PrecisionMode::Fp32, 8).unwrap();
        assert!(s.iter().all(|x| x.latency_s == expected));
        assert!(s
            .iter()
            .enumerate()
            .all(|(i, x)| x.iteration_index == i as u32));
    }

    #[test]
    fn seeded_runs_repeat_exactly() {
        let dev = t4();
        let run = |seed| {
            let mut b = SimBackend::open(&dev, 3).unwrap();
            b.load_model(&resnet("resnet50"), PrecisionMode::Fp16)
                .unwrap();
            b.run_iterations(16, 5, 50, Some(seed)).unwrap()
        };
        assert_eq!(run(11), run(11));
        assert_ne!(run(11), run(12));
    }

    #[test]
    fn replay_covers_run_at_period() {
        let mut dev = t4();
        dev.spec.noise_cv = 0.0;
        let model = resnet("resnet18");
        let mut b = SimBackend::open(&dev, 3).unwrap();
        b.load_model(&model, PrecisionMode::Fp32).unwrap();
        b.run_iterations(256, 10, 100, None).unwrap();
        let lat = sim_latency(&dev, &model, PrecisionMode::Fp32, 256).unwrap();
        let duration = 110.0 * lat;
        let trace = b.replay_telemetry(0.05).unwrap();
        let expected = (duration / 0.05).floor() as usize;
        assert!(trace.len() == expected || trace.len() == expected + 1);
        assert!(trace
            .windows(2)
            .all(|w| w[1].timestamp_s > w[0].timestamp_s));
        assert!((trace.last().unwrap().timestamp_s - duration).abs() < 1e-9);
        let load = busy_load(&dev, &model, PrecisionMode::Fp32, 256).unwrap();
        for s in &trace {
            assert!((s.power_w - power_at(&dev.spec, load)).abs() < 1e-9);
            assert_eq!(
                s.mem_used_bytes,
                sim_memory(&dev.spec, &model, PrecisionMode::Fp32, 256)
            );
        }
        // heating trace is monotone from ambient
        assert!(trace.windows(2).all(|w| w[1].temp_c >= w[0].temp_c));
    }

    #[test]
    fn saturating_batch_reports_near_full_utilization() {
        let dev = t4();
        let model = resnet("resnet101");
        let load = busy_load(&dev, &model, PrecisionMode::Fp32, 512).unwrap();
        // closed form: u(B) * (1 - overhead / latency)
        let lat = sim_latency(&dev, &model, PrecisionMode::Fp32, 512).unwrap();
        let u = 512.0 / (512.0 + dev.simulation.half_saturation(PrecisionMode::Fp32));
        assert!((load - u * (1.0 - dev.spec.launch_overhead_s / lat)).abs() < 1e-12);
        assert!(load > 0.95);
        let mut b = SimBackend::open(&dev, 3).unwrap();
        b.load_model(&model, PrecisionMode::Fp32).unwrap();
        b.run_iterations(512, 2, 10, None).unwrap();
        let trace = b.replay_telemetry(0.05).unwrap();
        assert!(trace.iter().all(|s| s.util_pct > 95.0));
        let idle = b.query_telemetry().unwrap();
        assert_eq!(idle.util_pct, 0.0);
    }

    #[test]
    fn derived_seeds_differ_by_label() {
        assert_ne!(derive_seed(1, "a"), derive_seed(1, "b"));
        assert_eq!(derive_seed(7, "x"), derive_seed(7, "x"));
    }
}
