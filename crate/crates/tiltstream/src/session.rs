//! Live sessions.
//!
//! A producer thread simulates the acquisition and hands projections to the
//! consumer (this thread) through a bounded queue. The consumer applies
//! control commands between projections, runs the [`StreamProcessor`] and
//! publishes events. Every subscriber has its own bounded outbox and writer
//! thread, so a slow client can only lose its own connection, never stall
//! the consumer.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender, SyncSender, TrySendError};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tiltstream_core::align::AlignmentResult;
use tiltstream_core::damage::uniform_times;
use tiltstream_core::metrics::{shape_error, MetricTrace, StopRecommendation};
use tiltstream_core::projector::{AcquisitionSimulator, Projection, TiltSeries};
use tiltstream_core::recon::{em_reconstruct, OrthosliceSet, SliceSpec};
use tiltstream_core::VoxelVolume;

use crate::config::SessionConfig;
use crate::error::{Error, IoContext, Result};
use crate::io;
use crate::stream::{reorient_specs, ControlScript, Step, StreamProcessor};
use crate::wire::{self, ControlCommand, Event, EventKind};

/// Queue depth between producer and consumer.
const PROJECTION_QUEUE: usize = 4;
const WRITE_TIMEOUT: Duration = Duration::from_secs(5);
const ACCEPT_POLL: Duration = Duration::from_millis(5);

/// A control message as received: parsed, or the reason it was rejected.
pub type ControlInput = std::result::Result<ControlCommand, String>;

/// In-process handle for injecting control commands.
#[derive(Debug, Clone)]
pub struct Controller(Sender<ControlInput>);

impl Controller {
    pub fn send(&self, command: ControlCommand) {
        let _ = self.0.send(Ok(command));
    }

    /// Raw message body, parsed the same way as socket input.
    pub fn send_raw(&self, body: &[u8]) {
        let _ = self.0.send(ControlCommand::parse(body));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    Stopped,
    Exhausted,
}

/// Contents of `stop.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopRecord {
    pub reason: EndReason,
    pub n_acquired: usize,
    pub n_used: usize,
    pub em_iterations: usize,
    pub recommendation: StopRecommendation,
    /// Shape error of the EM volume against the undamaged phantom.
    pub shape_error: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SessionOutcome {
    pub output_dir: PathBuf,
    pub events: Vec<Event>,
    pub trace: MetricTrace,
    pub stop: StopRecord,
    pub alignment: Option<AlignmentResult>,
    pub series: TiltSeries,
    pub reconstruction: Option<VoxelVolume>,
    pub controls: ControlScript,
}

#[derive(Default)]
struct Hub {
    history: Vec<Arc<Vec<u8>>>,
    outboxes: Vec<SyncSender<Arc<Vec<u8>>>>,
    closed: bool,
}

/// Fan-out of framed events. New subscribers first receive the history.
struct Publisher {
    hub: Arc<Mutex<Hub>>,
    events: Vec<Event>,
}

impl Publisher {
    fn publish(&mut self, event: Event) {
        let frame = Arc::new(event.to_json());
        self.events.push(event);
        let mut hub = self.hub.lock().expect("hub lock");
        hub.history.push(frame.clone());
        // a full outbox means the subscriber fell behind: cut it off
        hub.outboxes.retain(|tx| match tx.try_send(frame.clone()) {
            Ok(()) => true,
            Err(TrySendError::Full(_) | TrySendError::Disconnected(_)) => false,
        });
    }

    fn close(&self) {
        let mut hub = self.hub.lock().expect("hub lock");
        hub.closed = true;
        hub.outboxes.clear();
    }
}

struct Server {
    stop: Arc<AtomicBool>,
    acceptor: JoinHandle<()>,
    writers: Arc<Mutex<Vec<JoinHandle<()>>>>,
}

impl Server {
    fn start(listener: TcpListener, hub: Arc<Mutex<Hub>>, control: Sender<ControlInput>, buffer: usize) -> Result<Self> {
        let addr = listener.local_addr().map_err(|e| Error::Wire(e.to_string()))?;
        listener.set_nonblocking(true).map_err(|e| Error::Wire(format!("{addr}: {e}")))?;
        let stop = Arc::new(AtomicBool::new(false));
        let writers = Arc::new(Mutex::new(Vec::new()));
        let acceptor = {
            let (stop, writers) = (stop.clone(), writers.clone());
            thread::spawn(move || {
                while !stop.load(Ordering::Acquire) {
                    match listener.accept() {
                        Ok((stream, _)) => {
                            if let Some(h) = serve_connection(stream, &hub, &control, buffer) {
                                writers.lock().expect("writers lock").push(h);
                            }
                        }
                        Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(ACCEPT_POLL),
                        Err(_) => thread::sleep(ACCEPT_POLL),
                    }
                }
            })
        };
        Ok(Self { stop, acceptor, writers })
    }

    /// Stops accepting and waits for every outbox to drain.
    fn finish(self) {
        self.stop.store(true, Ordering::Release);
        let _ = self.acceptor.join();
        let handles = std::mem::take(&mut *self.writers.lock().expect("writers lock"));
        for h in handles {
            let _ = h.join();
        }
    }
}

fn serve_connection(stream: TcpStream, hub: &Arc<Mutex<Hub>>, control: &Sender<ControlInput>, buffer: usize) -> Option<JoinHandle<()>> {
    stream.set_nonblocking(false).ok()?;
    stream.set_write_timeout(Some(WRITE_TIMEOUT)).ok()?;
    let _ = stream.set_nodelay(true);
    let mut reader = stream.try_clone().ok()?;
    let (backlog, outbox) = {
        let mut hub = hub.lock().expect("hub lock");
        let backlog = hub.history.clone();
        if hub.closed {
            (backlog, None)
        } else {
            let (tx, rx) = mpsc::sync_channel(buffer.max(1));
            hub.outboxes.push(tx);
            (backlog, Some(rx))
        }
    };
    let control = control.clone();
    thread::spawn(move || {
        while let Ok(Some(body)) = wire::read_frame(&mut reader) {
            if control.send(ControlCommand::parse(&body)).is_err() {
                break;
            }
        }
    });
    Some(thread::spawn(move || {
        let mut out = BufWriter::new(&stream);
        let mut ok = backlog.iter().all(|f| wire::write_frame(&mut out, f).is_ok());
        if let Some(rx) = outbox {
            while ok {
                match rx.recv() {
                    Ok(frame) => ok = wire::write_frame(&mut out, &frame).is_ok(),
                    Err(_) => break,
                }
            }
        }
        drop(out);
        let _ = stream.shutdown(Shutdown::Both);
    }))
}

pub struct Session {
    config: SessionConfig,
    script: ControlScript,
    listener: Option<TcpListener>,
    control_tx: Sender<ControlInput>,
    control_rx: Receiver<ControlInput>,
}

impl Session {
    /// Validates the config and binds the event socket if one is set.
    pub fn new(config: SessionConfig) -> Result<Self> {
        config.validate()?;
        let listener = match config.emit_addr()? {
            Some(addr) => Some(TcpListener::bind(addr).map_err(|e| Error::Wire(format!("bind {addr}: {e}")))?),
            None => None,
        };
        let (control_tx, control_rx) = mpsc::channel();
        Ok(Self { config, script: ControlScript::new(), listener, control_tx, control_rx })
    }

    pub fn with_script(mut self, script: ControlScript) -> Self {
        self.script = script;
        self
    }

    /// Address the event stream is served on (useful with port 0).
    pub fn local_addr(&self) -> Option<SocketAddr> {
        self.listener.as_ref().and_then(|l| l.local_addr().ok())
    }

    pub fn controller(&self) -> Controller {
        Controller(self.control_tx.clone())
    }

    pub fn run(self) -> Result<SessionOutcome> {
        let Session { config, script, listener, control_tx, control_rx } = self;
        let output_dir = config.resolved_output_dir();
        let phantom = config.phantom.build()?;
        let scheme = config.scheme.build()?;
        let params = config.damage_params()?;
        let specs = config.slice_specs()?;

        let hub = Arc::new(Mutex::new(Hub::default()));
        let server = match listener {
            Some(l) => Some(Server::start(l, hub.clone(), control_tx.clone(), config.events.buffer)?),
            None => None,
        };
        drop(control_tx);
        let mut publisher = Publisher { hub, events: Vec::new() };

        let sim = AcquisitionSimulator::new(phantom.clone(), &scheme, params, &uniform_times(scheme.len()))?;
        let detector_shape = sim.detector_shape();
        let (proj_tx, proj_rx) = mpsc::sync_channel::<Projection>(PROJECTION_QUEUE);
        let producer = thread::spawn(move || {
            for p in sim {
                if proj_tx.send(p).is_err() {
                    break;
                }
            }
        });

        let mut consumer = Consumer {
            processor: StreamProcessor::new(detector_shape, specs, config.align.options(), config.stop_rule)?,
            publisher: &mut publisher,
            controls: ControlScript::new(),
            slice_data: config.events.slice_data,
            paused: false,
            stopped: false,
        };
        let mut series = TiltSeries::new(scheme.clone(), detector_shape);
        let result = (|| -> Result<EndReason> {
            loop {
                let n = consumer.processor.n();
                for command in script.due(n) {
                    consumer.apply(Ok(command.clone()));
                }
                while let Ok(input) = control_rx.try_recv() {
                    consumer.apply(input);
                }
                while consumer.paused && !consumer.stopped {
                    match control_rx.recv_timeout(Duration::from_millis(50)) {
                        Ok(input) => consumer.apply(input),
                        Err(RecvTimeoutError::Timeout) => {}
                        // nobody left who could resume the session
                        Err(RecvTimeoutError::Disconnected) => consumer.paused = false,
                    }
                }
                if consumer.stopped {
                    return Ok(EndReason::Stopped);
                }
                let Ok(projection) = proj_rx.recv() else {
                    return Ok(EndReason::Exhausted);
                };
                let step = consumer.processor.push(&projection)?;
                consumer.emit_step(&projection, &step);
                if step.new_suggestion && config.events.pause_on_suggestion {
                    consumer.paused = true;
                }
                series.projections.push(projection);
            }
        })();
        drop(proj_rx);
        let _ = producer.join();
        let reason = match result {
            Ok(r) => r,
            Err(e) => {
                let n = consumer.processor.n();
                consumer.publisher.publish(Event::new(EventKind::Error, n, json!({ "source": "pipeline", "message": e.to_string() })));
                publisher.close();
                if let Some(s) = server {
                    s.finish();
                }
                return Err(e);
            }
        };

        let n_acquired = consumer.processor.n();
        let recommendation = consumer.processor.recommendation();
        let n_used = match reason {
            EndReason::Stopped => n_acquired,
            EndReason::Exhausted => recommendation.suggested_n.unwrap_or(n_acquired),
        };
        let reconstruction = if n_used > 0 { Some(em_reconstruct(&series, n_used, config.em_iterations)?) } else { None };
        let shape = reconstruction.as_ref().and_then(|v| shape_error(&phantom, v).ok());
        let stop = StopRecord { reason, n_acquired, n_used, em_iterations: config.em_iterations, recommendation, shape_error: shape };
        let trace = consumer.processor.trace().clone();
        let alignment = consumer.processor.alignment().cloned();
        let latest = consumer.processor.latest().cloned();
        let controls = consumer.controls;

        let artifacts = Artifacts {
            config: &config,
            phantom: &phantom,
            series: &series,
            controls: &controls,
            trace: &trace,
            alignment: alignment.as_ref(),
            stop: &stop,
            reconstruction: reconstruction.as_ref(),
            latest: latest.as_ref(),
        };
        let written = artifacts.write(&output_dir);
        let ended = match &written {
            Ok(()) => json!({
                "reason": reason,
                "n_acquired": n_acquired,
                "n_used": n_used,
                "suggested_n": recommendation.suggested_n,
                "rationale": recommendation.rationale,
                "shape_error": shape,
                "output_dir": output_dir,
            }),
            Err(e) => json!({ "reason": reason, "n_acquired": n_acquired, "n_used": n_used, "error": e.to_string() }),
        };
        publisher.publish(Event::new(EventKind::SessionEnded, n_acquired, ended));
        let finished = written.and_then(|()| {
            write_event_log(&output_dir.join(EVENTS_FILE), &publisher.events)?;
            io::write_manifest(&output_dir).map(|_| ())
        });
        publisher.close();
        if let Some(s) = server {
            s.finish();
        }
        finished?;
        Ok(SessionOutcome { output_dir, events: publisher.events, trace, stop, alignment, series, reconstruction, controls })
    }
}

pub const EVENTS_FILE: &str = "events.jsonl";
pub const CONTROLS_FILE: &str = "controls.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const STOP_FILE: &str = "stop.json";
pub const ALIGNMENT_FILE: &str = "alignment.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const SERIES_DIR: &str = "series";
pub const SLICES_DIR: &str = "slices";
pub const REFERENCE_FILE: &str = "reference.f32";
pub const EM_FILE: &str = "em.f32";

/// One JSON event per line.
pub fn write_event_log(path: &Path, events: &[Event]) -> Result<()> {
    let mut text = Vec::new();
    for e in events {
        text.extend_from_slice(&e.to_json());
        text.push(b'\n');
    }
    fs::write(path, text).at(path)
}

pub fn read_event_log(path: &Path) -> Result<Vec<Event>> {
    let text = fs::read_to_string(path).at(path)?;
    text.lines()
        .enumerate()
        .map(|(k, line)| Event::from_json(line.as_bytes()).map_err(|e| Error::parse(path, format!("line {}", k + 1), e)))
        .collect()
}

struct Artifacts<'a> {
    config: &'a SessionConfig,
    phantom: &'a VoxelVolume,
    series: &'a TiltSeries,
    controls: &'a ControlScript,
    trace: &'a MetricTrace,
    alignment: Option<&'a AlignmentResult>,
    stop: &'a StopRecord,
    reconstruction: Option<&'a VoxelVolume>,
    latest: Option<&'a OrthosliceSet>,
}

impl Artifacts<'_> {
    fn write(&self, dir: &Path) -> Result<()> {
        if dir.exists() {
            // stale files would end up in the manifest
            fs::remove_dir_all(dir).at(dir)?;
        }
        fs::create_dir_all(dir).at(dir)?;
        let path = dir.join(CONFIG_FILE);
        fs::write(&path, self.config.to_toml()).at(&path)?;
        io::save_volume(&dir.join(REFERENCE_FILE), self.phantom, BTreeMap::new())?;
        io::save_tilt_series(&dir.join(SERIES_DIR), self.series)?;
        io::write_json(&dir.join(CONTROLS_FILE), self.controls)?;
        io::save_trace_csv(&dir.join(TRACE_FILE), self.trace, self.stop.n_acquired)?;
        if let Some(a) = self.alignment {
            let path = dir.join(ALIGNMENT_FILE);
            fs::write(&path, io::alignment_csv(a, &self.series.angles())).at(&path)?;
        }
        io::write_json(&dir.join(STOP_FILE), self.stop)?;
        if let Some(v) = self.reconstruction {
            let mut extra = BTreeMap::new();
            extra.insert("n_used".into(), json!(self.stop.n_used));
            extra.insert("em_iterations".into(), json!(self.stop.em_iterations));
            io::save_volume(&dir.join(EM_FILE), v, extra)?;
        }
        if let Some(set) = self.latest {
            io::save_orthoslices(&dir.join(SLICES_DIR), set)?;
        }
        Ok(())
    }
}

struct Consumer<'a> {
    processor: StreamProcessor,
    publisher: &'a mut Publisher,
    controls: ControlScript,
    slice_data: bool,
    paused: bool,
    stopped: bool,
}

impl Consumer<'_> {
    fn ack(&mut self, command: &ControlCommand, status: &str, detail: Value) {
        let n = self.processor.n();
        let payload = json!({ "command": command.name(), "status": status, "detail": detail });
        self.publisher.publish(Event::new(EventKind::ControlAck, n, payload));
    }

    fn reject(&mut self, message: String) {
        let n = self.processor.n();
        self.publisher.publish(Event::new(EventKind::Error, n, json!({ "source": "control", "message": message })));
    }

    fn apply(&mut self, input: ControlInput) {
        let command = match input {
            Ok(c) => c,
            Err(message) => return self.reject(message),
        };
        match &command {
            ControlCommand::Stop => {
                self.stopped = true;
                self.ack(&command, "applied", Value::Null);
            }
            ControlCommand::Continue => {
                let status = if self.paused { "applied" } else { "no_op" };
                self.paused = false;
                self.ack(&command, status, Value::Null);
            }
            ControlCommand::Reorient { slices } => {
                let specs = match reorient_specs(slices) {
                    Ok(s) => s,
                    Err(message) => return self.reject(message),
                };
                match self.processor.reorient(specs) {
                    Ok(changed) => {
                        let status = if changed { "applied" } else { "no_op" };
                        self.ack(&command, status, json!({ "slices": specs, "effective_from": self.processor.n() + 1 }));
                    }
                    Err(e) => return self.reject(format!("reorient rejected: {e}")),
                }
            }
        }
        self.controls.push(self.processor.n(), command);
    }

    fn emit_step(&mut self, p: &Projection, step: &Step) {
        let n = step.n;
        self.publisher.publish(Event::new(
            EventKind::ProjectionAdded,
            n,
            json!({
                "chrono_index": p.chrono_index,
                "angle_deg": p.angle_deg,
                "time": p.time,
                "shift": step.shift.map(|(dy, dx)| [dy, dx]),
                "reference_index": step.reference_index,
            }),
        ));
        if step.set.restarted {
            self.publisher.publish(Event::new(EventKind::HistoryRestarted, n, json!({ "slices": step.set.specs })));
        }
        self.publisher.publish(Event::new(EventKind::SlicesUpdated, n, slices_payload(&step.set, self.slice_data)));
        let threshold = self.processor.trace().threshold();
        self.publisher.publish(Event::new(
            EventKind::MetricsUpdated,
            n,
            json!({
                "srod": step.srod,
                "snr_db": step.snr,
                "srod_error": step.srod_error,
                "snr_error": step.snr_error,
                "threshold": threshold,
                "below_threshold": step.srod.map(|v| v < threshold),
                "restarted": step.set.restarted,
            }),
        ));
        if step.new_suggestion {
            self.publisher.publish(Event::new(EventKind::StopSuggested, n, serde_json::to_value(step.recommendation).expect("plain data")));
        }
    }
}

fn slices_payload(set: &OrthosliceSet, with_data: bool) -> Value {
    let slices: Vec<Value> = set
        .slices
        .iter()
        .zip(&set.specs)
        .map(|(img, spec): (_, &SliceSpec)| {
            let (min, max) = img.data().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            let mut v = json!({
                "plane": spec.plane,
                "offset": spec.offset,
                "rotation_deg": spec.rotation_deg,
                "rows": img.rows(),
                "cols": img.cols(),
                "min": min,
                "max": max,
            });
            if with_data {
                v["data"] = json!(img.data().iter().map(|&x| x as f32).collect::<Vec<f32>>());
            }
            v
        })
        .collect();
    json!({ "restarted": set.restarted, "slices": slices })
}
