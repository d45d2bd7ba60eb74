//! Test server and scripted protocol client for the capture service.
#![allow(dead_code)]

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use follower_lab::capture::{router, AppState, CaptureConfig};
use futures::{SinkExt, StreamExt};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tokio::time::Instant;
use tokio_tungstenite::tungstenite::Message;
use tower::ServiceExt;

pub struct Server {
    pub addr: SocketAddr,
    pub state: AppState,
    pub dir: tempfile::TempDir,
    pub speed: f64,
}

pub async fn start(sample_timeout_s: f64, speed: f64) -> Server {
    let dir = tempfile::tempdir().unwrap();
    let config = CaptureConfig {
        data_dir: dir.path().to_path_buf(),
        sample_timeout: Duration::from_secs_f64(sample_timeout_s),
        speed,
    };
    let state = AppState::new(config);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let app = router(state.clone());
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    Server { addr, state, dir, speed }
}

impl Server {
    pub async fn request(&self, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
        let builder = Request::builder().method(method).uri(uri);
        let req = match body {
            Some(b) => builder.header("content-type", "application/json").body(Body::from(b.to_string())),
            None => builder.body(Body::empty()),
        }
        .unwrap();
        let resp = router(self.state.clone()).oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
        (status, bytes)
    }

    pub async fn json(&self, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let (status, bytes) = self.request(method, uri, body).await;
        (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
    }

    pub async fn create(&self, spec: Value) -> (String, Value) {
        let (status, body) = self.json("POST", "/sessions", Some(spec)).await;
        assert_eq!(status, StatusCode::CREATED, "{body}");
        (body["id"].as_str().unwrap().to_string(), body)
    }

    pub async fn session(&self, id: &str) -> Value {
        let (_, list) = self.json("GET", "/sessions", None).await;
        list.as_array().unwrap().iter().find(|s| s["id"] == id).cloned().unwrap_or(Value::Null)
    }

    /// Polls until the session leaves `running`.
    pub async fn wait_finished(&self, id: &str, limit: Duration) -> Value {
        let start = Instant::now();
        loop {
            let s = self.session(id).await;
            if (s["state"] == "ended" || s["state"] == "aborted") && (s["file"].is_string() || start.elapsed() > limit) {
                return s;
            }
            assert!(start.elapsed() < limit, "session {id} still {}", s["state"]);
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
    }

    pub fn ws_url(&self, id: &str) -> String {
        format!("ws://{}/sessions/{id}/run", self.addr)
    }
}

/// Behavior of the scripted pointer.
#[derive(Debug, Clone)]
pub struct Script {
    /// The pointer reproduces each target after this much session time.
    pub delay_s: f64,
    /// Stop sending samples after this much session time, keeping the socket open.
    pub silent_after_s: Option<f64>,
    /// Drop the connection after this much session time.
    pub disconnect_after_s: Option<f64>,
    /// Send one sample with a stale client timestamp after this many samples.
    pub stale_sample_after: Option<usize>,
    pub send_end: bool,
}

impl Script {
    pub fn echo(delay_s: f64) -> Self {
        Self { delay_s, silent_after_s: None, disconnect_after_s: None, stale_sample_after: None, send_end: true }
    }
}

#[derive(Debug, Default)]
pub struct ClientLog {
    pub session: Option<Value>,
    /// Wall-clock receipt time and the message, per target.
    pub targets: Vec<(Instant, Value)>,
    pub errors: Vec<Value>,
    pub done: bool,
    pub samples_sent: usize,
}

pub async fn run_client(url: &str, script: Script, speed: f64) -> ClientLog {
    let (ws, _) = tokio_tungstenite::connect_async(url).await.expect("websocket connect");
    let (mut tx, mut rx) = ws.split();
    let hello = json!({ "type": "hello", "client": "scripted", "version": 1 });
    tx.send(Message::text(hello.to_string())).await.unwrap();
    let mut log = ClientLog::default();
    let mut pending: VecDeque<(Instant, Value)> = VecDeque::new();
    let wall_delay = Duration::from_secs_f64(script.delay_s / speed);
    let mut last_t = f64::NEG_INFINITY;
    loop {
        let next_due = pending.front().map(|(due, _)| *due);
        tokio::select! {
            msg = rx.next() => {
                let Some(Ok(msg)) = msg else { break };
                let Message::Text(text) = msg else {
                    if matches!(msg, Message::Close(_)) { break }
                    continue;
                };
                let value: Value = serde_json::from_str(text.as_str()).unwrap();
                match value["type"].as_str() {
                    Some("session") => log.session = Some(value),
                    Some("target") => {
                        let now = Instant::now();
                        let t = value["t"].as_f64().unwrap();
                        if script.disconnect_after_s.is_some_and(|d| t >= d) {
                            return log;
                        }
                        if !script.silent_after_s.is_some_and(|s| t >= s) {
                            let sample = json!({
                                "type": "sample",
                                "t": t + script.delay_s,
                                "pos": value["pos"],
                                "rot": value["rot"],
                            });
                            pending.push_back((now + wall_delay, sample));
                        }
                        log.targets.push((now, value));
                    }
                    Some("error") => log.errors.push(value),
                    Some("done") => {
                        log.done = true;
                        for (_, sample) in pending.drain(..) {
                            let _ = tx.send(Message::text(sample.to_string())).await;
                        }
                        if script.send_end {
                            let _ = tx.send(Message::text(json!({ "type": "end" }).to_string())).await;
                        }
                    }
                    _ => {}
                }
            }
            _ = tokio::time::sleep_until(next_due.unwrap_or_else(|| Instant::now() + Duration::from_secs(3600))), if next_due.is_some() => {
                let (_, sample) = pending.pop_front().unwrap();
                last_t = sample["t"].as_f64().unwrap().max(last_t);
                if tx.send(Message::text(sample.to_string())).await.is_err() {
                    break;
                }
                log.samples_sent += 1;
                if script.stale_sample_after == Some(log.samples_sent) {
                    let stale = json!({ "type": "sample", "t": last_t - 0.5, "pos": [0.0, 0.0] });
                    let _ = tx.send(Message::text(stale.to_string())).await;
                }
            }
        }
    }
    log
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Lag (in samples, output behind input) maximizing the correlation.
pub fn best_lag(u: &[f64], y: &[f64], max_lag: usize) -> usize {
    (0..=max_lag)
        .max_by(|&a, &b| {
            let ca = pearson(&u[..u.len() - a], &y[a..]);
            let cb = pearson(&u[..u.len() - b], &y[b..]);
            ca.total_cmp(&cb)
        })
        .unwrap()
}
