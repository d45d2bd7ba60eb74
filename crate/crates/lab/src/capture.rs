//! Live tracking capture service.
//!
//! `POST /sessions` materializes a trajectory, `WS /sessions/{id}/run`
//! streams its targets at a fixed rate while collecting the client's pointer
//! samples, and the finished session is aligned onto the target grid and saved
//! as a `.session.ndjson` file served by `GET /sessions/{id}/file`.
//!
//! Target emission and sample ingestion run as separate tasks joined by an
//! unbounded channel, so a slow client never delays the target clock.

use std::collections::HashMap;
use std::io::Write as _;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use axum::extract::rejection::JsonRejection;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use follower_lab_core::record::{AxesDescriptor, OutputSamples, SCHEMA_VERSION};
use follower_lab_core::trajectory::{gen_filtered_noise, gen_fourier, gen_orientation_noise, MAX_ROTATION_RAD};
use follower_lab_core::{EnvParams, FourierSpec, NoiseTrajSpec, SessionRecord, Source, Trajectory};
use futures::{SinkExt, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc;
use tokio::time::{Instant, MissedTickBehavior};

use crate::align::{resample_align, TimedSamples, MAX_GAP_PERIODS};
use crate::session::{save_session_file, CaptureMeta, SessionFile, SESSION_EXTENSION};

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_RATE_HZ: f64 = 100.0;
pub const DEFAULT_SAMPLE_TIMEOUT_S: f64 = 5.0;
/// How long the server waits for trailing samples after `done`.
pub const END_GRACE_S: f64 = 1.0;

#[derive(Debug, Clone)]
pub struct CaptureConfig {
    pub data_dir: PathBuf,
    /// Abort when no sample arrives for this long (wall clock).
    pub sample_timeout: Duration,
    /// Playback speed; 1 is real time. Session time runs `speed` times faster
    /// than the wall clock.
    pub speed: f64,
}

impl CaptureConfig {
    pub fn new(data_dir: PathBuf) -> Self {
        Self { data_dir, sample_timeout: Duration::from_secs_f64(DEFAULT_SAMPLE_TIMEOUT_S), speed: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    Noise,
    Fourier,
}

/// Which clock places samples on the session time axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleClock {
    /// Client timestamps shifted onto the server clock by the smallest
    /// observed receive offset. Removes clock skew without importing
    /// transport jitter.
    #[default]
    Server,
    /// Client timestamps as sent.
    Client,
    /// Raw server receipt times, including transport jitter.
    Receipt,
}

/// Body of `POST /sessions`; omitted fields take defaults and the response
/// echoes the fully resolved spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionSpec {
    pub kind: TrajectoryKind,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub duration_s: Option<f64>,
    #[serde(default)]
    pub rate_hz: Option<f64>,
    #[serde(default)]
    pub cutoff_hz: Option<f64>,
    /// Half-range of each of the two position axes (m).
    #[serde(default)]
    pub half_range: Option<[f64; 2]>,
    #[serde(default)]
    pub rotation: Option<bool>,
    /// Half-range of the rotation channel (rad).
    #[serde(default)]
    pub rotation_half_range: Option<f64>,
    #[serde(default)]
    pub clock: Option<SampleClock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedSpec {
    pub kind: TrajectoryKind,
    pub seed: u64,
    pub duration_s: f64,
    pub rate_hz: f64,
    pub cutoff_hz: f64,
    pub half_range: [f64; 2],
    pub rotation: bool,
    pub rotation_half_range: f64,
    pub clock: SampleClock,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl SessionSpec {
    pub fn resolve(&self) -> ResolvedSpec {
        let fourier = self.kind == TrajectoryKind::Fourier;
        ResolvedSpec {
            kind: self.kind,
            seed: self.seed.unwrap_or_else(rand::random),
            duration_s: self.duration_s.unwrap_or(if fourier {
                follower_lab_core::trajectory::DEFAULT_FOURIER_DURATION_S
            } else {
                follower_lab_core::trajectory::DEFAULT_NOISE_DURATION_S
            }),
            rate_hz: self.rate_hz.unwrap_or(DEFAULT_RATE_HZ),
            cutoff_hz: self.cutoff_hz.unwrap_or(follower_lab_core::trajectory::DEFAULT_CUTOFF_HZ),
            half_range: self.half_range.unwrap_or([0.15, 0.15]),
            rotation: self.rotation.unwrap_or(false),
            rotation_half_range: self.rotation_half_range.unwrap_or(MAX_ROTATION_RAD),
            clock: self.clock.unwrap_or_default(),
        }
    }
}

impl ResolvedSpec {
    /// Materializes the target trajectory: two position axes, plus one
    /// rotation channel when enabled.
    pub fn trajectory(&self) -> Result<Trajectory, FieldError> {
        let field = |field: &str, message: String| FieldError { field: field.into(), message };
        if !(self.rate_hz > 0.0) || !self.rate_hz.is_finite() {
            return Err(field("rate_hz", format!("must be positive, got {}", self.rate_hz)));
        }
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return Err(field("duration_s", format!("must be positive, got {}", self.duration_s)));
        }
        if !(self.cutoff_hz > 0.0 && self.cutoff_hz < self.rate_hz / 2.0) {
            return Err(field(
                "cutoff_hz",
                format!("must satisfy 0 < cutoff < rate/2 = {}, got {}", self.rate_hz / 2.0, self.cutoff_hz),
            ));
        }
        if self.half_range.iter().any(|h| !(*h >= 0.0) || !h.is_finite()) {
            return Err(field("half_range", "entries must be finite and >= 0".into()));
        }
        let core_field = |e: follower_lab_core::Error| match e {
            follower_lab_core::Error::InvalidParameter { name, reason } => field(name, reason),
            follower_lab_core::Error::Aliasing { .. } => field("cutoff_hz", e.to_string()),
            other => field("spec", other.to_string()),
        };
        let ranges: Vec<(f64, f64)> = self.half_range.iter().map(|h| (-h, *h)).collect();
        let mut traj = match self.kind {
            TrajectoryKind::Noise => {
                let mut spec = NoiseTrajSpec::new(self.seed, ranges);
                spec.duration_s = self.duration_s;
                spec.rate_hz = self.rate_hz;
                spec.cutoff_hz = self.cutoff_hz;
                gen_filtered_noise(&spec).map_err(core_field)?
            }
            TrajectoryKind::Fourier => {
                let mut spec = FourierSpec::default_multisine(2, 1.0, self.seed);
                for (axis, comps) in spec.axes.iter_mut().enumerate() {
                    for c in comps.iter_mut() {
                        c.amplitude *= self.half_range[axis];
                    }
                }
                spec.duration_s = self.duration_s;
                spec.rate_hz = self.rate_hz;
                spec.max_frequency_hz = self.cutoff_hz;
                gen_fourier(&spec).map_err(core_field)?
            }
        };
        if self.rotation {
            let h = self.rotation_half_range;
            let mut spec = NoiseTrajSpec::new(self.seed ^ 0x5eed, vec![(-h, h)]);
            spec.duration_s = self.duration_s;
            spec.rate_hz = self.rate_hz;
            spec.cutoff_hz = self.cutoff_hz;
            let rot = gen_orientation_noise(&spec).map_err(|e| match core_field(e) {
                FieldError { field, message } if field == "ranges" => FieldError { field: "rotation_half_range".into(), message },
                other => other,
            })?;
            traj = traj.merged(rot).map_err(core_field)?;
        }
        Ok(traj)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Created,
    Running,
    Ended,
    Aborted,
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionSummary {
    pub id: String,
    pub state: SessionState,
    pub spec: ResolvedSpec,
    pub targets_sent: u64,
    pub samples_received: u64,
    pub samples_rejected: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub client: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
}

struct LiveSession {
    summary: SessionSummary,
    trajectory: Arc<Trajectory>,
    file: Option<PathBuf>,
}

#[derive(Clone)]
pub struct AppState {
    config: Arc<CaptureConfig>,
    sessions: Arc<Mutex<HashMap<String, LiveSession>>>,
}

impl AppState {
    pub fn new(config: CaptureConfig) -> Self {
        Self { config: Arc::new(config), sessions: Arc::new(Mutex::new(HashMap::new())) }
    }

    fn with<R>(&self, id: &str, f: impl FnOnce(&mut LiveSession) -> R) -> Option<R> {
        self.sessions.lock().expect("session registry poisoned").get_mut(id).map(f)
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}/file", get(download_session))
        .route("/sessions/{id}/run", get(run_session))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    config: CaptureConfig,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    std::fs::create_dir_all(&config.data_dir)?;
    axum::serve(listener, router(AppState::new(config))).with_graceful_shutdown(shutdown).await
}

fn unprocessable(error: FieldError) -> Response {
    let body = serde_json::json!({ "error": "invalid session spec", "field": error.field, "message": error.message });
    (StatusCode::UNPROCESSABLE_ENTITY, Json(body)).into_response()
}

async fn create_session(State(state): State<AppState>, body: Result<Json<SessionSpec>, JsonRejection>) -> Response {
    let spec = match body {
        Ok(Json(spec)) => spec,
        Err(rejection) => {
            let message = rejection.body_text();
            let field = message
                .split(": ")
                .nth(1)
                .filter(|f| !f.contains(' '))
                .unwrap_or("body")
                .to_string();
            return unprocessable(FieldError { field, message });
        }
    };
    let resolved = spec.resolve();
    let trajectory = match resolved.trajectory() {
        Ok(t) => t,
        Err(e) => return unprocessable(e),
    };
    let id = uuid::Uuid::new_v4().to_string();
    let spec_path = state.config.data_dir.join(format!("{id}.spec.json"));
    let persisted = serde_json::json!({ "id": id, "state": SessionState::Created, "spec": resolved });
    if let Err(e) = tokio::fs::create_dir_all(&state.config.data_dir).await {
        return (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response();
    }
    if let Err(e) = tokio::fs::write(&spec_path, serde_json::to_vec_pretty(&persisted).unwrap_or_default()).await {
        return (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response();
    }
    let summary = SessionSummary {
        id: id.clone(),
        state: SessionState::Created,
        spec: resolved.clone(),
        targets_sent: 0,
        samples_received: 0,
        samples_rejected: 0,
        client: None,
        file: None,
    };
    state
        .sessions
        .lock()
        .expect("session registry poisoned")
        .insert(id.clone(), LiveSession { summary, trajectory: Arc::new(trajectory), file: None });
    tracing::info!(%id, kind = ?resolved.kind, seed = resolved.seed, "session created");
    (StatusCode::CREATED, Json(serde_json::json!({ "id": id, "state": SessionState::Created, "spec": resolved }))).into_response()
}

async fn list_sessions(State(state): State<AppState>) -> Json<Vec<SessionSummary>> {
    let sessions = state.sessions.lock().expect("session registry poisoned");
    let mut list: Vec<SessionSummary> = sessions.values().map(|s| s.summary.clone()).collect();
    list.sort_by(|a, b| a.id.cmp(&b.id));
    Json(list)
}

async fn download_session(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    let Some(path) = state.with(&id, |s| s.file.clone()).flatten() else {
        return (StatusCode::NOT_FOUND, format!("no session file for {id}")).into_response();
    };
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, "application/x-ndjson")], bytes).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

async fn run_session(State(state): State<AppState>, Path(id): Path<String>, ws: WebSocketUpgrade) -> Response {
    let claimed = state.with(&id, |s| {
        if s.summary.state == SessionState::Created {
            s.summary.state = SessionState::Running;
            Ok((s.trajectory.clone(), s.summary.spec.clone()))
        } else {
            Err(s.summary.state)
        }
    });
    match claimed {
        None => (StatusCode::NOT_FOUND, format!("unknown session {id}")).into_response(),
        Some(Err(current)) => (StatusCode::CONFLICT, format!("session {id} is {current:?}, not created")).into_response(),
        Some(Ok((trajectory, spec))) => ws.on_upgrade(move |socket| drive(state, id, trajectory, spec, socket)),
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ClientMessage {
    Hello {
        #[serde(default)]
        client: Option<String>,
        #[serde(default)]
        version: Option<u32>,
    },
    Sample {
        t: f64,
        pos: Vec<f64>,
        #[serde(default)]
        rot: Option<f64>,
    },
    End,
}

#[derive(Debug, Clone, Copy)]
struct RawSample {
    t_client: f64,
    t_server: f64,
    pos: [f64; 2],
    rot: f64,
}

#[derive(Serialize)]
struct RawLine {
    t_client: f64,
    t_server: f64,
    pos: [f64; 2],
    rot: f64,
}

enum Outcome {
    Ended,
    Aborted(String),
}

fn target_message(traj: &Trajectory, i: usize) -> String {
    let rot = traj.rot.first().map_or(0.0, |r| r[i]);
    serde_json::json!({ "type": "target", "t": traj.t[i], "pos": [traj.pos[0][i], traj.pos[1][i]], "rot": rot }).to_string()
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

async fn drive(state: AppState, id: String, traj: Arc<Trajectory>, spec: ResolvedSpec, socket: WebSocket) {
    let config = state.config.clone();
    let (mut sink, mut stream) = socket.split();
    let (tx, mut rx) = mpsc::unbounded_channel::<Message>();
    let writer = tokio::spawn(async move {
        while let Some(msg) = rx.recv().await {
            let closing = matches!(msg, Message::Close(_));
            if sink.send(msg).await.is_err() || closing {
                break;
            }
        }
    });
    let hello = serde_json::json!({ "type": "session", "rate_hz": spec.rate_hz, "duration_s": spec.duration_s, "id": id });
    let _ = tx.send(Message::Text(hello.to_string().into()));

    let started_unix_s = unix_now();
    let start = Instant::now();
    let speed = config.speed;
    let n = traj.len();
    let (done_tx, mut done_rx) = tokio::sync::watch::channel(false);
    let emitter = {
        let (tx, traj, state, id) = (tx.clone(), traj.clone(), state.clone(), id.clone());
        let rate = spec.rate_hz;
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(Duration::from_secs_f64(1.0 / (rate * speed)));
            tick.set_missed_tick_behavior(MissedTickBehavior::Burst);
            let mut next = 0;
            while next < n {
                tick.tick().await;
                let due = (((start.elapsed().as_secs_f64() * speed * rate) + 1e-9).floor() as usize + 1).min(n);
                let from = next;
                while next < due {
                    if tx.send(Message::Text(target_message(&traj, next).into())).is_err() {
                        return;
                    }
                    next += 1;
                }
                let sent = (next - from) as u64;
                state.with(&id, |s| s.summary.targets_sent += sent);
            }
            let _ = tx.send(Message::Text(r#"{"type":"done"}"#.into()));
            let _ = done_tx.send(true);
        })
    };

    let raw_path = config.data_dir.join(format!("{id}.raw.ndjson"));
    let mut raw_log = std::fs::OpenOptions::new().create(true).append(true).open(&raw_path).ok().map(std::io::BufWriter::new);
    let mut last_flush = Instant::now();
    let mut samples: Vec<RawSample> = Vec::with_capacity(n + n / 10);
    let mut rejected = 0u64;
    let mut received = 0u64;
    let mut client = None;
    let mut last_sample_at = Instant::now();
    let mut done_at: Option<Instant> = None;
    let grace = Duration::from_secs_f64(END_GRACE_S);

    let outcome = loop {
        let timeout_at = last_sample_at + config.sample_timeout;
        let grace_at = done_at.map(|d| d + grace);
        let wake = grace_at.map_or(timeout_at, |g| g.min(timeout_at));
        tokio::select! {
            msg = stream.next() => {
                let text = match msg {
                    Some(Ok(Message::Text(text))) => text,
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => {
                        break if done_at.is_some() { Outcome::Ended } else { Outcome::Aborted("client disconnected".into()) };
                    }
                    Some(Ok(_)) => continue,
                };
                let t_server = start.elapsed().as_secs_f64() * speed;
                match serde_json::from_str::<ClientMessage>(&text) {
                    Ok(ClientMessage::Hello { client: name, version }) => {
                        client = Some(format!("{}/{}", name.unwrap_or_else(|| "unknown".into()), version.unwrap_or(0)));
                    }
                    Ok(ClientMessage::Sample { t, pos, rot }) => {
                        received += 1;
                        let in_order = samples.last().is_none_or(|s| t > s.t_client);
                        let valid = pos.len() == 2 && t.is_finite() && pos.iter().all(|p| p.is_finite()) && rot.is_none_or(f64::is_finite);
                        if in_order && valid {
                            let sample = RawSample { t_client: t, t_server, pos: [pos[0], pos[1]], rot: rot.unwrap_or(0.0) };
                            if let Some(log) = raw_log.as_mut() {
                                let line = RawLine { t_client: t, t_server, pos: sample.pos, rot: sample.rot };
                                if serde_json::to_writer(&mut *log, &line).is_ok() {
                                    let _ = log.write_all(b"\n");
                                }
                            }
                            samples.push(sample);
                            last_sample_at = Instant::now();
                        } else {
                            rejected += 1;
                            let reason = if valid { "out_of_order" } else { "invalid_sample" };
                            let _ = tx.send(Message::Text(serde_json::json!({ "type": "error", "reason": reason, "t": t }).to_string().into()));
                        }
                        if last_flush.elapsed() >= Duration::from_secs(1) {
                            if let Some(log) = raw_log.as_mut() {
                                let _ = log.flush();
                            }
                            last_flush = Instant::now();
                            state.with(&id, |s| {
                                s.summary.samples_received = received;
                                s.summary.samples_rejected = rejected;
                            });
                        }
                    }
                    Ok(ClientMessage::End) => break Outcome::Ended,
                    Err(e) => {
                        rejected += 1;
                        let _ = tx.send(Message::Text(serde_json::json!({ "type": "error", "reason": e.to_string() }).to_string().into()));
                    }
                }
            }
            changed = done_rx.changed(), if done_at.is_none() => {
                if changed.is_ok() {
                    done_at = Some(Instant::now());
                }
            }
            _ = tokio::time::sleep_until(wake) => {
                if grace_at.is_some_and(|g| Instant::now() >= g) {
                    break Outcome::Ended;
                }
                break Outcome::Aborted(format!("no sample for {:.1} s", config.sample_timeout.as_secs_f64()));
            }
        }
    };
    emitter.abort();
    if let Some(mut log) = raw_log {
        let _ = log.flush();
    }
    let targets_sent = state.with(&id, |s| s.summary.targets_sent).unwrap_or(0).min(n as u64);
    let _ = tx.send(Message::Close(None));
    drop(tx);
    let _ = writer.await;

    let (status, reason) = match outcome {
        Outcome::Ended => (SessionState::Ended, None),
        Outcome::Aborted(r) => (SessionState::Aborted, Some(r)),
    };
    let meta = CaptureMeta {
        started_unix_s: Some(started_unix_s),
        client: client.clone(),
        targets_sent,
        samples_received: received,
        samples_rejected: rejected,
        ..CaptureMeta::default()
    };
    let path = config.data_dir.join(format!("{id}.{SESSION_EXTENSION}"));
    let (id2, traj2) = (id.clone(), traj.clone());
    let saved = tokio::task::spawn_blocking(move || {
        let file = finalize(&id2, &traj2, &spec, &samples, targets_sent as usize, status == SessionState::Aborted, reason, meta);
        save_session_file(&path, &file).map(|_| (path, file.record.aborted))
    })
    .await;
    let (file, aborted) = match saved {
        Ok(Ok((p, aborted))) => (Some(p), aborted),
        Ok(Err(e)) => {
            tracing::error!(%id, error = %e, "could not persist session");
            (None, true)
        }
        Err(e) => {
            tracing::error!(%id, error = %e, "finalizer panicked");
            (None, true)
        }
    };
    state.with(&id, |s| {
        s.summary.state = if aborted { SessionState::Aborted } else { status };
        s.summary.samples_received = received;
        s.summary.samples_rejected = rejected;
        s.summary.client = client;
        s.summary.file = file.as_ref().map(|p| p.display().to_string());
        s.file = file;
    });
    tracing::info!(%id, ?status, received, rejected, "session finished");
}

fn empty_record(id: &str, traj: &Trajectory, axes: AxesDescriptor) -> SessionRecord {
    let k = axes.channels();
    SessionRecord {
        session_id: id.to_string(),
        schema_version: SCHEMA_VERSION,
        rate_hz: traj.rate_hz,
        axes,
        input: Trajectory {
            rate_hz: traj.rate_hz,
            t: vec![],
            pos: vec![vec![]; axes.positions],
            vel: vec![vec![]; axes.positions],
            rot: vec![vec![]; axes.rotations],
            ang_vel: vec![vec![]; axes.rotations],
            provenance: traj.provenance.clone(),
        },
        output: OutputSamples { t: vec![], pos: vec![vec![]; k], vel: vec![vec![]; k], force: vec![vec![]; k] },
        env: EnvParams::free_space(),
        source: Source::HumanCapture,
        notes: String::new(),
        aborted: true,
        synthetic: None,
    }
}

/// Aligns the received samples with the emitted targets. Samples after the
/// first gap longer than the alignment limit are dropped and the session is
/// marked aborted.
#[allow(clippy::too_many_arguments)]
fn finalize(
    id: &str,
    traj: &Trajectory,
    spec: &ResolvedSpec,
    samples: &[RawSample],
    targets_sent: usize,
    aborted: bool,
    reason: Option<String>,
    mut meta: CaptureMeta,
) -> SessionFile {
    let axes = AxesDescriptor { positions: 2, rotations: usize::from(spec.rotation) };
    let mut notes: Vec<String> = reason.into_iter().collect();
    let mut aborted = aborted;
    let offset = samples.iter().map(|s| s.t_server - s.t_client).fold(f64::INFINITY, f64::min);
    if offset.is_finite() {
        let delays: Vec<f64> = samples.iter().map(|s| s.t_server - s.t_client - offset).collect();
        meta.clock_offset_s = Some(offset);
        meta.mean_receive_delay_s = Some(delays.iter().sum::<f64>() / delays.len() as f64);
        meta.max_receive_delay_s = Some(delays.iter().copied().fold(0.0, f64::max));
    }
    let clock = |s: &RawSample| match spec.clock {
        SampleClock::Server => s.t_client + offset,
        SampleClock::Client => s.t_client,
        SampleClock::Receipt => s.t_server,
    };
    let mut kept: Vec<RawSample> = Vec::with_capacity(samples.len());
    for s in samples {
        if kept.last().is_none_or(|p| clock(s) > clock(p)) {
            kept.push(*s);
        }
    }
    let limit = MAX_GAP_PERIODS / spec.rate_hz;
    if let Some(i) = kept.windows(2).position(|w| clock(&w[1]) - clock(&w[0]) > limit) {
        notes.push(format!("sample gap at {:.3} s; later samples dropped", clock(&kept[i])));
        kept.truncate(i + 1);
        aborted = true;
    }
    let sent = targets_sent.min(traj.len());
    let record = if kept.len() < 2 || sent < 2 {
        notes.push(format!("{} usable samples", kept.len()));
        empty_record(id, traj, axes)
    } else {
        let mut u = TimedSamples::from_trajectory(&traj.slice(0, sent));
        u.t = traj.t[..sent].to_vec();
        let mut y = TimedSamples { t: kept.iter().map(clock).collect(), pos: vec![Vec::new(); axes.channels()], vel: None };
        for s in &kept {
            y.pos[0].push(s.pos[0]);
            y.pos[1].push(s.pos[1]);
            if spec.rotation {
                y.pos[2].push(s.rot);
            }
        }
        match resample_align(&u, &y, spec.rate_hz, axes.positions) {
            Ok(aligned) => {
                meta.max_gap_s = Some(aligned.max_gap_s);
                let k = axes.channels();
                let n = aligned.input.len();
                let mut input = aligned.input;
                input.provenance = traj.provenance.clone();
                if aligned.t[0] != 0.0 {
                    notes.push(format!("aligned grid starts at {:.4} s", aligned.t[0]));
                }
                SessionRecord {
                    session_id: id.to_string(),
                    schema_version: SCHEMA_VERSION,
                    rate_hz: spec.rate_hz,
                    axes,
                    output: OutputSamples { t: input.t.clone(), pos: aligned.pos, vel: aligned.vel, force: vec![vec![0.0; n]; k] },
                    input,
                    env: EnvParams::free_space(),
                    source: Source::HumanCapture,
                    notes: String::new(),
                    aborted,
                    synthetic: None,
                }
            }
            Err(e) => {
                notes.push(e.to_string());
                empty_record(id, traj, axes)
            }
        }
    };
    let mut record = record;
    record.notes = notes.join("; ");
    SessionFile { record, capture: Some(meta) }
}
