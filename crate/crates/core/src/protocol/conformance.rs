//! Conformance vectors shared by every backend route.
//!
//! Each vector opens a fresh session and checks structure, counts and the
//! error taxonomy. Latency values are never compared.

use serde::Serialize;

use super::{Backend, BackendError, SessionState};
use crate::model::{ModelSpec, PrecisionMode};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VectorOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Opener<'a> = &'a dyn Fn() -> Result<Box<dyn Backend>, BackendError>;
type VectorResult = Result<(), String>;
type Vector<'a> = (&'static str, Box<dyn Fn() -> VectorResult + 'a>);

fn expect_code<T: std::fmt::Debug>(result: Result<T, BackendError>, code: &str) -> VectorResult {
    match result {
        Err(e) if e.code() == code => Ok(()),
        Err(e) => Err(format!("expected {code}, got {}", e.code())),
        Ok(v) => Err(format!("expected {code}, got success {v:?}")),
    }
}

fn fail(e: BackendError) -> String {
    format!("unexpected error: {e}")
}

fn handshake(open: Opener) -> VectorResult {
    let b = open().map_err(fail)?;
    let session = b.session();
    if session.state != SessionState::Idle {
        return Err(format!("fresh session in state {}", session.state));
    }
    if !session.capabilities.contains(&PrecisionMode::Fp32) {
        return Err("FP32 missing from capabilities".into());
    }
    Ok(())
}

fn idle_telemetry(open: Opener) -> VectorResult {
    let b = open().map_err(fail)?;
    let first = b.query_telemetry().map_err(fail)?;
    let second = b.query_telemetry().map_err(fail)?;
    if !(0.0..=100.0).contains(&first.util_pct) {
        return Err(format!("util_pct {} outside 0..100", first.util_pct));
    }
    if first.util_pct > 5.0 {
        return Err(format!("idle util_pct {}", first.util_pct));
    }
    if second.timestamp_s < first.timestamp_s {
        return Err("telemetry timestamps went backwards".into());
    }
    Ok(())
}

fn infer_before_load(open: Opener) -> VectorResult {
    let mut b = open().map_err(fail)?;
    expect_code(b.alloc(1, None), "invalid_state")?;
    expect_code(b.infer(3), "invalid_state")
}

fn empty_measurement(open: Opener, model: &ModelSpec) -> VectorResult {
    let mut b = open().map_err(fail)?;
    b.load_model(model, PrecisionMode::Fp32).map_err(fail)?;
    expect_code(b.run_iterations(1, 0, 0, None), "invalid_request")
}

fn sample_counts(open: Opener, model: &ModelSpec) -> VectorResult {
    let mut b = open().map_err(fail)?;
    b.load_model(model, PrecisionMode::Fp32).map_err(fail)?;
    for (warmup, timed) in [(0, 2), (3, 7), (20, 100)] {
        let samples = b.run_iterations(2, warmup, timed, Some(9)).map_err(fail)?;
        if samples.len() != timed as usize {
            return Err(format!(
                "warmup={warmup} timed={timed}: got {} samples",
                samples.len()
            ));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.iteration_index != i as u32 || !(s.latency_s > 0.0) {
                return Err(format!("bad sample {i}: {s:?}"));
            }
        }
    }
    Ok(())
}

fn int8_needs_engine(open: Opener, model: &ModelSpec) -> VectorResult {
    let mut b = open().map_err(fail)?;
    if !b.session().capabilities.contains(&PrecisionMode::Int8) {
        return expect_code(
            b.load_model(model, PrecisionMode::Int8),
            "unsupported_precision",
        );
    }
    b.load_model(model, PrecisionMode::Int8).map_err(fail)?;
    expect_code(b.alloc(1, None), "invalid_state")?;
    let duration = b.prepare_engine().map_err(fail)?;
    if !(duration >= 0.0) {
        return Err(format!("engine preparation took {duration} s"));
    }
    if b.session().state != SessionState::EngineReady {
        return Err(format!("state after prepare_engine: {}", b.session().state));
    }
    let samples = b.run_iterations(1, 1, 5, None).map_err(fail)?;
    if samples.len() != 5 {
        return Err(format!("got {} samples", samples.len()));
    }
    Ok(())
}

fn model_too_large(open: Opener, model: &ModelSpec) -> VectorResult {
    let mut b = open().map_err(fail)?;
    let mut huge = model.clone();
    huge.name = format!("{}-oversized", model.name);
    huge.param_bytes = b
        .session()
        .device
        .mem_capacity_bytes
        .saturating_mul(4)
        .max(1 << 40);
    expect_code(b.load_model(&huge, PrecisionMode::Fp32), "out_of_memory")
}

fn batch_too_large(open: Opener, model: &ModelSpec) -> VectorResult {
    let mut b = open().map_err(fail)?;
    b.load_model(model, PrecisionMode::Fp32).map_err(fail)?;
    expect_code(b.alloc(1 << 30, None), "out_of_memory")?;
    // the session stays usable after an OOM
    let samples = b.run_iterations(1, 0, 2, None).map_err(fail)?;
    if samples.len() != 2 {
        return Err(format!("got {} samples after OOM", samples.len()));
    }
    Ok(())
}

fn closed_after_release(open: Opener, model: &ModelSpec) -> VectorResult {
    let mut b = open().map_err(fail)?;
    b.load_model(model, PrecisionMode::Fp32).map_err(fail)?;
    b.release().map_err(fail)?;
    match b.query_telemetry() {
        Err(BackendError::SessionClosed) | Err(BackendError::BackendCrashed { .. }) => {}
        other => return Err(format!("telemetry after release: {other:?}")),
    }
    match b.load_model(model, PrecisionMode::Fp32) {
        Err(BackendError::SessionClosed) | Err(BackendError::BackendCrashed { .. }) => Ok(()),
        other => Err(format!("load after release: {other:?}")),
    }
}

/// Runs every vector against sessions produced by `open`, using `model` as
/// the workload.
pub fn run_conformance(open: Opener, model: &ModelSpec) -> Vec<VectorOutcome> {
    let vectors: Vec<Vector> = vec![
        ("handshake", Box::new(|| handshake(open))),
        ("idle_telemetry", Box::new(|| idle_telemetry(open))),
        ("infer_before_load", Box::new(|| infer_before_load(open))),
        (
            "empty_measurement",
            Box::new(|| empty_measurement(open, model)),
        ),
        ("sample_counts", Box::new(|| sample_counts(open, model))),
        (
            "int8_needs_engine",
            Box::new(|| int8_needs_engine(open, model)),
        ),
        ("model_too_large", Box::new(|| model_too_large(open, model))),
        ("batch_too_large", Box::new(|| batch_too_large(open, model))),
        (
            "closed_after_release",
            Box::new(|| closed_after_release(open, model)),
        ),
    ];
    vectors
        .into_iter()
        .map(|(name, check)| {
            let result = check();
            VectorOutcome {
                name,
                passed: result.is_ok(),
                detail: result.err().unwrap_or_default(),
            }
        })
        .collect()
}
