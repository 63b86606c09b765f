//! Newline-delimited JSON framing for the worker protocol.
//!
//! One JSON object per line, UTF-8, no embedded newlines:
//!
//! ```text
//! {"request_id":3,"kind":"alloc","payload":{"batch":32,"seed":17}}
//! {"request_id":3,"kind":"ok","payload":{"bytes":3210000000}}
//! ```
//!
//! See `PROTOCOL.md` at the repository root for the full message catalogue.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::{DeviceSpec, ModelSpec, PrecisionMode};

use super::{BackendError, ClockDomain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Hello,
    LoadModel,
    PrepareEngine,
    Alloc,
    Warmup,
    Infer,
    TelemetryQuery,
    Release,
    Bye,
    Ok,
    Error,
}

impl MessageKind {
    pub fn is_response(self) -> bool {
        matches!(self, MessageKind::Ok | MessageKind::Error)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::Hello => "hello",
            MessageKind::LoadModel => "load_model",
            MessageKind::PrepareEngine => "prepare_engine",
            MessageKind::Alloc => "alloc",
            MessageKind::Warmup => "warmup",
            MessageKind::Infer => "infer",
            MessageKind::TelemetryQuery => "telemetry_query",
            MessageKind::Release => "release",
            MessageKind::Bye => "bye",
            MessageKind::Ok => "ok",
            MessageKind::Error => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerMessage {
    pub request_id: u64,
    pub kind: MessageKind,
    #[serde(default)]
    pub payload: Value,
}

impl WorkerMessage {
    pub fn request(request_id: u64, kind: MessageKind, payload: impl Serialize) -> Self {
        Self {
            request_id,
            kind,
            payload: serde_json::to_value(payload).expect("payload serializes"),
        }
    }

    pub fn ok(request_id: u64, payload: impl Serialize) -> Self {
        Self::request(request_id, MessageKind::Ok, payload)
    }

    pub fn error(request_id: u64, error: &BackendError) -> Self {
        Self::request(
            request_id,
            MessageKind::Error,
            ErrorPayload {
                error: error.clone(),
                message: error.to_string(),
            },
        )
    }

    /// The payload of a request or an `ok` response, typed.
    pub fn body<T: DeserializeOwned>(&self) -> Result<T, WireError> {
        serde_json::from_value(self.payload.clone()).map_err(|e| WireError::Payload {
            kind: self.kind,
            reason: e.to_string(),
        })
    }

    /// Converts an `error` response into the error it carries.
    pub fn into_error(self) -> BackendError {
        match serde_json::from_value::<ErrorPayload>(self.payload.clone()) {
            Ok(p) => p.error,
            Err(_) => BackendError::crashed(format!("malformed error payload: {}", self.payload)),
        }
    }
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("bad `{}` payload: {reason}", kind.as_str())]
    Payload { kind: MessageKind, reason: String },
}

/// Encodes one frame, without the trailing newline.
pub fn encode(message: &WorkerMessage) -> String {
    serde_json::to_string(message).expect("message serializes")
}

pub fn decode(line: &str) -> Result<WorkerMessage, WireError> {
    serde_json::from_str(line.trim_end_matches(['\r', '\n']))
        .map_err(|e| WireError::Malformed(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPayload {
    #[serde(flatten)]
    pub error: BackendError,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelloRequest {
    pub protocol_version: u32,
    pub device: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelloReply {
    pub protocol_version: u32,
    pub capabilities: Vec<PrecisionMode>,
    pub clock: ClockDomain,
    pub device: Option<DeviceSpec>,
    /// Runtime fingerprint (framework versions, driver, ...).
    #[serde(default)]
    pub fingerprint: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadModelRequest {
    pub model: ModelSpec,
    pub precision: PrecisionMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareEngineReply {
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocRequest {
    pub batch: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocReply {
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationsRequest {
    pub iterations: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferReply {
    pub latencies_s: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Empty {}
