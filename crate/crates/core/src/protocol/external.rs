//! Orchestrator side of the protocol: drives a worker over a line stream.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use log::{debug, warn};
use serde::Serialize;

use super::wire::{
    decode, encode, AllocReply, AllocRequest, Empty, HelloReply, HelloRequest, InferReply,
    IterationsRequest, LoadModelRequest, MessageKind, PrepareEngineReply, WorkerMessage,
};
use super::{
    Backend, BackendError, BackendFactory, BackendSession, ClockDomain, SessionState,
    TelemetryProbe, PROTOCOL_VERSION,
};
use crate::model::{DeviceKind, LatencySample, ModelSpec, PrecisionMode, TelemetrySample};
use crate::sim::DeviceProfile;

struct Outgoing {
    next_id: u64,
    sink: Box<dyn Write + Send>,
}

struct Connection {
    outgoing: Mutex<Outgoing>,
    pending: Mutex<HashMap<u64, mpsc::Sender<WorkerMessage>>>,
    alive: AtomicBool,
    timeout: Option<Duration>,
}

impl Connection {
    fn request<T: Serialize>(
        &self,
        kind: MessageKind,
        payload: T,
    ) -> Result<WorkerMessage, BackendError> {
        if !self.alive.load(Ordering::SeqCst) {
            return Err(BackendError::crashed("worker connection lost"));
        }
        let (tx, rx) = mpsc::channel();
        {
            // ids are assigned under the write lock so they hit the wire in order
            let mut out = self.outgoing.lock().expect("writer poisoned");
            out.next_id += 1;
            let id = out.next_id;
            self.pending
                .lock()
                .expect("pending poisoned")
                .insert(id, tx);
            let message = WorkerMessage::request(id, kind, payload);
            debug!("-> {} #{id}", kind.as_str());
            let written = writeln!(out.sink, "{}", encode(&message)).and_then(|_| out.sink.flush());
            if let Err(e) = written {
                self.pending.lock().expect("pending poisoned").remove(&id);
                self.alive.store(false, Ordering::SeqCst);
                return Err(BackendError::crashed(format!(
                    "write to worker failed: {e}"
                )));
            }
        }
        let reply = match self.timeout {
            Some(t) => rx.recv_timeout(t).map_err(|_| {
                BackendError::crashed(format!("no reply to `{}` within {t:?}", kind.as_str()))
            }),
            None => rx.recv().map_err(|_| {
                BackendError::crashed(format!("worker exited during `{}`", kind.as_str()))
            }),
        }?;
        match reply.kind {
            MessageKind::Ok => Ok(reply),
            MessageKind::Error => Err(reply.into_error()),
            other => Err(BackendError::crashed(format!(
                "worker answered with request kind `{}`",
                other.as_str()
            ))),
        }
    }

    fn shutdown(&self) {
        self.alive.store(false, Ordering::SeqCst);
        self.pending.lock().expect("pending poisoned").clear();
    }
}

fn reader_loop(conn: Arc<Connection>, reader: Box<dyn BufRead + Send>) {
    for line in reader.lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        match decode(&line) {
            Ok(message) => {
                let waiter = conn
                    .pending
                    .lock()
                    .expect("pending poisoned")
                    .remove(&message.request_id);
                match waiter {
                    Some(tx) => {
                        let _ = tx.send(message);
                    }
                    None => warn!("unsolicited reply #{} from worker", message.request_id),
                }
            }
            Err(e) => warn!("malformed frame from worker: {e}"),
        }
    }
    conn.shutdown();
}

struct ExternalProbe(Arc<Connection>);

impl TelemetryProbe for ExternalProbe {
    fn sample(&self) -> Result<TelemetrySample, BackendError> {
        let reply = self.0.request(MessageKind::TelemetryQuery, Empty {})?;
        reply
            .body()
            .map_err(|e| BackendError::crashed(e.to_string()))
    }
}

/// A backend living in another process (or any line stream).
pub struct ExternalBackend {
    conn: Arc<Connection>,
    session: BackendSession,
    hello: HelloReply,
    precision: Option<PrecisionMode>,
    child: Option<Child>,
    reader: Option<JoinHandle<()>>,
}

impl ExternalBackend {
    /// Performs the `hello` handshake over an established stream pair.
    pub fn connect<R, W>(
        reader: R,
        writer: W,
        device: &DeviceProfile,
        timeout: Option<Duration>,
    ) -> Result<Self, BackendError>
    where
        R: BufRead + Send + 'static,
        W: Write + Send + 'static,
    {
        let conn = Arc::new(Connection {
            outgoing: Mutex::new(Outgoing {
                next_id: 0,
                sink: Box::new(writer),
            }),
            pending: Mutex::new(HashMap::new()),
            alive: AtomicBool::new(true),
            timeout,
        });
        let reader_conn = Arc::clone(&conn);
        let reader = std::thread::Builder::new()
            .name(format!("worker-reader-{}", device.spec.name))
            .spawn(move || reader_loop(reader_conn, Box::new(reader)))
            .map_err(|e| BackendError::unavailable(e.to_string()))?;

        let hello = conn
            .request(
                MessageKind::Hello,
                HelloRequest {
                    protocol_version: PROTOCOL_VERSION,
                    device: device.spec.name.clone(),
                },
            )
            .map_err(|e| match e {
                BackendError::BackendCrashed { reason } => BackendError::unavailable(reason),
                other => other,
            })?;
        let hello: HelloReply = hello
            .body()
            .map_err(|e| BackendError::unavailable(e.to_string()))?;
        if hello.protocol_version != PROTOCOL_VERSION {
            conn.shutdown();
            return Err(BackendError::HandshakeMismatch {
                expected: PROTOCOL_VERSION,
                found: hello.protocol_version,
            });
        }
        let mut spec = device.spec.clone();
        spec.kind = DeviceKind::External;
        let capabilities: BTreeSet<_> = hello.capabilities.iter().copied().collect();
        Ok(Self {
            conn,
            session: BackendSession {
                device: spec,
                capabilities,
                state: SessionState::Idle,
            },
            hello,
            precision: None,
            child: None,
            reader: Some(reader),
        })
    }

    /// Launches `program args.. --device <device_arg>` and connects to its
    /// stdin/stdout.
    pub fn spawn(
        program: &str,
        args: &[String],
        device_arg: &str,
        device: &DeviceProfile,
        timeout: Option<Duration>,
    ) -> Result<Self, BackendError> {
        let mut child = Command::new(program)
            .args(args)
            .arg("--device")
            .arg(device_arg)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| BackendError::unavailable(format!("cannot start `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        match Self::connect(BufReader::new(stdout), stdin, device, timeout) {
            Ok(mut backend) => {
                backend.child = Some(child);
                Ok(backend)
            }
            Err(e) => {
                let _ = child.kill();
                let _ = child.wait();
                Err(e)
            }
        }
    }

    /// The worker's `hello` reply, including its runtime fingerprint.
    pub fn hello(&self) -> &HelloReply {
        &self.hello
    }

    fn call<T: Serialize>(
        &self,
        kind: MessageKind,
        payload: T,
    ) -> Result<WorkerMessage, BackendError> {
        if self.session.state == SessionState::Closed {
            return Err(BackendError::SessionClosed);
        }
        self.conn.request(kind, payload)
    }
}

fn decode_body<T: serde::de::DeserializeOwned>(m: &WorkerMessage) -> Result<T, BackendError> {
    m.body().map_err(|e| BackendError::crashed(e.to_string()))
}

impl Backend for ExternalBackend {
    fn session(&self) -> &BackendSession {
        &self.session
    }

    fn load_model(
        &mut self,
        model: &ModelSpec,
        precision: PrecisionMode,
    ) -> Result<(), BackendError> {
        self.call(
            MessageKind::LoadModel,
            LoadModelRequest {
                model: model.clone(),
                precision,
            },
        )?;
        self.precision = Some(precision);
        self.session.state = SessionState::ModelLoaded;
        Ok(())
    }

    fn prepare_engine(&mut self) -> Result<f64, BackendError> {
        let reply = self.call(MessageKind::PrepareEngine, Empty {})?;
        let reply: PrepareEngineReply = decode_body(&reply)?;
        self.session.state = SessionState::EngineReady;
        Ok(reply.duration_s)
    }

    fn alloc(&mut self, batch: u32, seed: Option<u64>) -> Result<u64, BackendError> {
        let reply = self.call(MessageKind::Alloc, AllocRequest { batch, seed })?;
        Ok(decode_body::<AllocReply>(&reply)?.bytes)
    }

    fn warmup(&mut self, iterations: u32) -> Result<(), BackendError> {
        self.call(MessageKind::Warmup, IterationsRequest { iterations })?;
        Ok(())
    }

    fn infer(&mut self, iterations: u32) -> Result<Vec<LatencySample>, BackendError> {
        let reply = self.call(MessageKind::Infer, IterationsRequest { iterations })?;
        let reply: InferReply = decode_body(&reply)?;
        if let Some(bad) = reply
            .latencies_s
            .iter()
            .find(|l| !(l.is_finite() && **l > 0.0))
        {
            return Err(BackendError::crashed(format!(
                "worker reported latency {bad}"
            )));
        }
        Ok(reply
            .latencies_s
            .into_iter()
            .enumerate()
            .map(|(i, latency_s)| LatencySample {
                iteration_index: i as u32,
                latency_s,
            })
            .collect())
    }

    fn telemetry_probe(&self) -> Arc<dyn TelemetryProbe> {
        Arc::new(ExternalProbe(Arc::clone(&self.conn)))
    }

    fn query_telemetry(&self) -> Result<TelemetrySample, BackendError> {
        let reply = self.call(MessageKind::TelemetryQuery, Empty {})?;
        decode_body(&reply)
    }

    fn clock(&self) -> ClockDomain {
        ClockDomain::Wall
    }

    fn release(&mut self) -> Result<(), BackendError> {
        self.call(MessageKind::Release, Empty {})?;
        self.session.state = SessionState::Closed;
        let _ = self.conn.request(MessageKind::Bye, Empty {});
        Ok(())
    }
}

impl Drop for ExternalBackend {
    fn drop(&mut self) {
        if self.conn.alive.load(Ordering::SeqCst) {
            let _ = self.conn.request(MessageKind::Bye, Empty {});
        }
        // closing stdin lets a well-behaved worker exit on EOF
        if let Ok(mut out) = self.conn.outgoing.lock() {
            out.sink = Box::new(std::io::sink());
        }
        let had_child = self.child.is_some();
        if let Some(mut child) = self.child.take() {
            let deadline = std::time::Instant::now() + Duration::from_secs(2);
            loop {
                match child.try_wait() {
                    Ok(Some(_)) => break,
                    Ok(None) if std::time::Instant::now() < deadline => {
                        std::thread::sleep(Duration::from_millis(10))
                    }
                    _ => {
                        let _ = child.kill();
                        let _ = child.wait();
                        break;
                    }
                }
            }
        }
        if let Some(reader) = self.reader.take() {
            // the reader exits once the worker's stdout closes; an in-memory
            // stream may never close, so only join for child processes
            if had_child {
                let _ = reader.join();
            }
        }
    }
}

/// Spawns one worker process per device session.
#[derive(Debug, Clone)]
pub struct WorkerFactory {
    pub program: String,
    pub args: Vec<String>,
    /// Directory where device profiles are written for the worker to read.
    pub scratch_dir: std::path::PathBuf,
    pub timeout: Option<Duration>,
}

impl BackendFactory for WorkerFactory {
    fn open(&self, device: &DeviceProfile) -> Result<Box<dyn Backend>, BackendError> {
        std::fs::create_dir_all(&self.scratch_dir)
            .map_err(|e| BackendError::unavailable(e.to_string()))?;
        let path = self
            .scratch_dir
            .join(format!("{}.device.json", device.spec.name));
        let text = serde_json::to_string_pretty(device).expect("device serializes");
        std::fs::write(&path, text).map_err(|e| BackendError::unavailable(e.to_string()))?;
        let backend = ExternalBackend::spawn(
            &self.program,
            &self.args,
            &path.to_string_lossy(),
            device,
            self.timeout,
        )?;
        Ok(Box::new(backend))
    }
}
