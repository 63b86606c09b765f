//! Backend abstraction and the worker wire protocol.
//!
//! The orchestrator drives every execution backend through [`Backend`]. The
//! in-process simulator implements it directly; external workers implement
//! the newline-delimited JSON protocol in [`wire`] and are driven through
//! [`external::ExternalBackend`]. [`server::serve`] exposes any `Backend` as a
//! worker, which is how the conformance suite in [`conformance`] runs the
//! same vectors against both routes.

pub mod conformance;
pub mod external;
pub mod server;
pub mod wire;

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DeviceSpec, LatencySample, ModelSpec, PrecisionMode, TelemetrySample};

/// Version spoken by this orchestrator in the `hello` exchange.
pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Idle,
    ModelLoaded,
    EngineReady,
    Closed,
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SessionState::Idle => "idle",
            SessionState::ModelLoaded => "model_loaded",
            SessionState::EngineReady => "engine_ready",
            SessionState::Closed => "closed",
        };
        f.write_str(s)
    }
}

/// Whether a backend's latencies and telemetry timestamps follow wall time or
/// a simulated clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockDomain {
    Wall,
    Virtual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSession {
    pub device: DeviceSpec,
    pub capabilities: BTreeSet<PrecisionMode>,
    pub state: SessionState,
}

impl BackendSession {
    /// Checks that an inference-path request (`alloc`, `warmup`, `infer`) is
    /// valid in the current state for `precision`.
    pub fn check_runnable(
        &self,
        op: &'static str,
        precision: PrecisionMode,
    ) -> Result<(), BackendError> {
        match (self.state, precision) {
            (SessionState::Closed, _) => Err(BackendError::SessionClosed),
            (SessionState::EngineReady, _) => Ok(()),
            (SessionState::ModelLoaded, PrecisionMode::Int8) | (SessionState::Idle, _) => {
                Err(BackendError::InvalidState {
                    op: op.to_string(),
                    state: self.state,
                })
            }
            (SessionState::ModelLoaded, _) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum BackendError {
    #[error("backend unavailable: {reason}")]
    BackendUnavailable { reason: String },
    #[error("protocol version mismatch: orchestrator speaks {expected}, worker speaks {found}")]
    HandshakeMismatch { expected: u32, found: u32 },
    #[error("unsupported precision {precision}")]
    UnsupportedPrecision { precision: PrecisionMode },
    #[error("out of memory: {required} bytes required, {capacity} available")]
    OutOfMemory { required: u64, capacity: u64 },
    #[error("invalid request: {reason}")]
    InvalidRequest { reason: String },
    #[error("`{op}` not valid in state {state}")]
    InvalidState { op: String, state: SessionState },
    #[error("backend crashed: {reason}")]
    BackendCrashed { reason: String },
    #[error("session closed")]
    SessionClosed,
}

impl BackendError {
    pub fn unavailable(reason: impl Into<String>) -> Self {
        BackendError::BackendUnavailable {
            reason: reason.into(),
        }
    }

    pub fn crashed(reason: impl Into<String>) -> Self {
        BackendError::BackendCrashed {
            reason: reason.into(),
        }
    }

    pub fn invalid(reason: impl Into<String>) -> Self {
        BackendError::InvalidRequest {
            reason: reason.into(),
        }
    }

    /// Wire error code.
    pub fn code(&self) -> &'static str {
        match self {
            BackendError::BackendUnavailable { .. } => "backend_unavailable",
            BackendError::HandshakeMismatch { .. } => "handshake_mismatch",
            BackendError::UnsupportedPrecision { .. } => "unsupported_precision",
            BackendError::OutOfMemory { .. } => "out_of_memory",
            BackendError::InvalidRequest { .. } => "invalid_request",
            BackendError::InvalidState { .. } => "invalid_state",
            BackendError::BackendCrashed { .. } => "backend_crashed",
            BackendError::SessionClosed => "session_closed",
        }
    }

    /// True when the session can no longer be used.
    pub fn is_fatal(&self) -> bool {
        matches!(
            self,
            BackendError::BackendCrashed { .. } | BackendError::SessionClosed
        )
    }
}

/// Telemetry channel that may be polled concurrently with an in-flight
/// inference request.
pub trait TelemetryProbe: Send + Sync {
    fn sample(&self) -> Result<TelemetrySample, BackendError>;
}

/// One execution backend bound to one device.
///
/// Requests other than telemetry are strictly sequential, which `&mut self`
/// enforces. Telemetry goes through [`Backend::telemetry_probe`], a handle
/// that is usable from another thread while `infer` runs.
pub trait Backend: Send {
    fn session(&self) -> &BackendSession;

    /// Makes `model` resident at `precision`, replacing any resident model.
    fn load_model(
        &mut self,
        model: &ModelSpec,
        precision: PrecisionMode,
    ) -> Result<(), BackendError>;

    /// Builds the optimized engine for the resident model (export, build and
    /// calibration as one opaque phase). Returns the phase duration in seconds.
    fn prepare_engine(&mut self) -> Result<f64, BackendError>;

    /// Allocates input/output tensors for `batch`. `seed` lets deterministic
    /// backends derive per-run randomness; others ignore it.
    fn alloc(&mut self, batch: u32, seed: Option<u64>) -> Result<u64, BackendError>;

    /// Untimed iterations at the allocated batch.
    fn warmup(&mut self, iterations: u32) -> Result<(), BackendError>;

    /// Timed iterations at the allocated batch, one sample per iteration.
    fn infer(&mut self, iterations: u32) -> Result<Vec<LatencySample>, BackendError>;

    fn telemetry_probe(&self) -> Arc<dyn TelemetryProbe>;

    fn query_telemetry(&self) -> Result<TelemetrySample, BackendError> {
        self.telemetry_probe().sample()
    }

    fn clock(&self) -> ClockDomain {
        ClockDomain::Wall
    }

    /// For virtual-clock backends: the telemetry trace of the most recent run
    /// sampled every `period_s` from run start (the `alloc` call) to run end.
    fn replay_telemetry(&self, _period_s: f64) -> Option<Vec<TelemetrySample>> {
        None
    }

    /// Closes the session and frees everything it holds.
    fn release(&mut self) -> Result<(), BackendError>;

    /// Allocation, warm-up, then `timed` measured iterations. Warm-up
    /// latencies are never returned.
    fn run_iterations(
        &mut self,
        batch: u32,
        warmup: u32,
        timed: u32,
        seed: Option<u64>,
    ) -> Result<Vec<LatencySample>, BackendError> {
        if batch == 0 {
            return Err(BackendError::invalid("batch must be >= 1"));
        }
        if timed == 0 {
            return Err(BackendError::invalid("timed iteration count must be >= 1"));
        }
        self.alloc(batch, seed)?;
        if warmup > 0 {
            self.warmup(warmup)?;
        }
        let samples = self.infer(timed)?;
        if samples.len() != timed as usize {
            return Err(BackendError::crashed(format!(
                "backend returned {} samples for {timed} timed iterations",
                samples.len()
            )));
        }
        Ok(samples)
    }
}

/// Opens backends for devices; one implementation per backend kind.
pub trait BackendFactory: Send + Sync {
    fn open(&self, device: &crate::sim::DeviceProfile) -> Result<Box<dyn Backend>, BackendError>;
}
