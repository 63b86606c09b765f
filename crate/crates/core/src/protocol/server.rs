//! Worker side of the protocol: serves any [`Backend`] over a line stream.
//!
//! Telemetry queries are answered on the reader thread straight from the
//! backend's probe, so they never wait behind an in-flight `infer`. All other
//! requests are executed in arrival order on a dedicated thread that owns the
//! backend.

use std::io::{self, BufRead, Write};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};

use log::{debug, warn};
use serde_json::Value;

use super::wire::{
    decode, encode, AllocReply, AllocRequest, Empty, HelloReply, HelloRequest, InferReply,
    IterationsRequest, LoadModelRequest, MessageKind, PrepareEngineReply, WorkerMessage,
};
use super::{Backend, BackendError, TelemetryProbe, PROTOCOL_VERSION};

#[derive(Debug, Clone)]
pub struct ServeOptions {
    /// Version announced in the `hello` reply.
    pub protocol_version: u32,
    pub fingerprint: Value,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            protocol_version: PROTOCOL_VERSION,
            fingerprint: serde_json::json!({
                "worker": "gapbench-sim",
                "version": env!("CARGO_PKG_VERSION"),
            }),
        }
    }
}

type SharedWriter<W> = Arc<Mutex<W>>;

fn send<W: Write>(writer: &SharedWriter<W>, message: &WorkerMessage) -> io::Result<()> {
    let mut w = writer.lock().expect("writer poisoned");
    writeln!(w, "{}", encode(message))?;
    w.flush()
}

/// Serves requests until `bye` or end of input.
pub fn serve<B, R, W>(backend: B, reader: R, writer: W, options: &ServeOptions) -> io::Result<()>
where
    B: Backend,
    R: BufRead,
    W: Write + Send,
{
    let writer = Arc::new(Mutex::new(writer));
    let probe: Arc<dyn TelemetryProbe> = backend.telemetry_probe();
    let (tx, rx) = mpsc::channel::<WorkerMessage>();

    std::thread::scope(|scope| {
        let control_writer = Arc::clone(&writer);
        let control = scope.spawn(move || control_loop(backend, rx, &control_writer, options));

        let mut result = Ok(());
        for line in reader.lines() {
            let line = match line {
                Ok(l) => l,
                Err(e) => {
                    result = Err(e);
                    break;
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            let message = match decode(&line) {
                Ok(m) => m,
                Err(e) => {
                    warn!("dropping malformed frame: {e}");
                    let reply = WorkerMessage::error(0, &BackendError::invalid(e.to_string()));
                    if let Err(e) = send(&writer, &reply) {
                        result = Err(e);
                        break;
                    }
                    continue;
                }
            };
            debug!("<- {} #{}", message.kind.as_str(), message.request_id);
            match message.kind {
                MessageKind::TelemetryQuery => {
                    let reply = match probe.sample() {
                        Ok(sample) => WorkerMessage::ok(message.request_id, sample),
                        Err(e) => WorkerMessage::error(message.request_id, &e),
                    };
                    if let Err(e) = send(&writer, &reply) {
                        result = Err(e);
                        break;
                    }
                }
                kind => {
                    let is_bye = kind == MessageKind::Bye;
                    if tx.send(message).is_err() || is_bye {
                        break;
                    }
                }
            }
        }
        drop(tx);
        let control_result = control.join().expect("control thread panicked");
        result.and(control_result)
    })
}

fn control_loop<B: Backend, W: Write>(
    mut backend: B,
    rx: mpsc::Receiver<WorkerMessage>,
    writer: &SharedWriter<W>,
    options: &ServeOptions,
) -> io::Result<()> {
    for message in rx {
        let id = message.request_id;
        let kind = message.kind;
        let reply = match handle(&mut backend, &message, options) {
            Ok(payload) => WorkerMessage {
                request_id: id,
                kind: MessageKind::Ok,
                payload,
            },
            Err(e) => WorkerMessage::error(id, &e),
        };
        send(writer, &reply)?;
        if kind == MessageKind::Bye {
            break;
        }
    }
    Ok(())
}

fn body<T: serde::de::DeserializeOwned>(message: &WorkerMessage) -> Result<T, BackendError> {
    message
        .body()
        .map_err(|e| BackendError::invalid(e.to_string()))
}

fn to_value(v: impl serde::Serialize) -> Value {
    serde_json::to_value(v).expect("reply serializes")
}

fn handle<B: Backend>(
    backend: &mut B,
    message: &WorkerMessage,
    options: &ServeOptions,
) -> Result<Value, BackendError> {
    match message.kind {
        MessageKind::Hello => {
            let _req: HelloRequest = body(message)?;
            let session = backend.session();
            Ok(to_value(HelloReply {
                protocol_version: options.protocol_version,
                capabilities: session.capabilities.iter().copied().collect(),
                clock: backend.clock(),
                device: Some(session.device.clone()),
                fingerprint: options.fingerprint.clone(),
            }))
        }
        MessageKind::LoadModel => {
            let req: LoadModelRequest = body(message)?;
            backend.load_model(&req.model, req.precision)?;
            Ok(to_value(Empty {}))
        }
        MessageKind::PrepareEngine => {
            let duration_s = backend.prepare_engine()?;
            Ok(to_value(PrepareEngineReply { duration_s }))
        }
        MessageKind::Alloc => {
            let req: AllocRequest = body(message)?;
            let bytes = backend.alloc(req.batch, req.seed)?;
            Ok(to_value(AllocReply { bytes }))
        }
        MessageKind::Warmup => {
            let req: IterationsRequest = body(message)?;
            backend.warmup(req.iterations)?;
            Ok(to_value(Empty {}))
        }
        MessageKind::Infer => {
            let req: IterationsRequest = body(message)?;
            let samples = backend.infer(req.iterations)?;
            Ok(to_value(InferReply {
                latencies_s: samples.into_iter().map(|s| s.latency_s).collect(),
            }))
        }
        MessageKind::TelemetryQuery => backend.query_telemetry().map(to_value),
        MessageKind::Release => {
            backend.release()?;
            Ok(to_value(Empty {}))
        }
        MessageKind::Bye => Ok(to_value(Empty {})),
        MessageKind::Ok | MessageKind::Error => Err(BackendError::invalid(format!(
            "`{}` is a response kind",
            message.kind.as_str()
        ))),
    }
}
