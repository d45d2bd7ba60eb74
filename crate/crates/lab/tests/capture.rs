mod common;

use std::time::Duration;

use axum::http::StatusCode;
use common::{best_lag, pearson, run_client, start, Script};
use follower_lab::session::load_session_file;
use follower_lab_core::sysid::{fit_structured, FitOptions};
use follower_lab_core::FollowerParams;
use serde_json::json;

#[tokio::test]
async fn create_echoes_resolved_spec_with_concrete_seed() {
    let server = start(5.0, 1.0).await;
    let (id, body) = server.create(json!({ "kind": "noise", "cutoff_hz": 0.63, "duration_s": 240.0 })).await;
    assert_eq!(body["state"], "created");
    assert!(body["spec"]["seed"].is_u64());
    assert_eq!(body["spec"]["cutoff_hz"], 0.63);
    assert_eq!(body["spec"]["duration_s"], 240.0);
    assert_eq!(body["spec"]["rate_hz"], 100.0);
    assert!(server.dir.path().join(format!("{id}.spec.json")).exists());
    let (id2, _) = server.create(json!({ "kind": "noise" })).await;
    assert_ne!(id, id2);
    let (status, list) = server.json("GET", "/sessions", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(list.as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn invalid_specs_are_rejected_with_the_field() {
    let server = start(5.0, 1.0).await;
    let cases = [
        (json!({ "kind": "noise", "cutoff_hz": 50.0 }), "cutoff_hz"),
        (json!({ "kind": "fourier", "cutoff_hz": 70.0 }), "cutoff_hz"),
        (json!({ "kind": "noise", "duration_s": -1.0 }), "duration_s"),
        (json!({ "kind": "noise", "rate_hz": 0.0 }), "rate_hz"),
        (json!({ "kind": "spiral" }), "kind"),
    ];
    for (spec, field) in cases {
        let (status, body) = server.json("POST", "/sessions", Some(spec.clone())).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{spec}");
        assert_eq!(body["field"], field, "{spec}: {body}");
        assert!(body["message"].as_str().is_some_and(|m| !m.is_empty()));
    }
}

#[tokio::test]
async fn unknown_ids_are_not_found() {
    let server = start(5.0, 1.0).await;
    let (status, _) = server.request("GET", "/sessions/nope/file", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let err = tokio_tungstenite::connect_async(server.ws_url("nope")).await.unwrap_err();
    assert!(err.to_string().contains("404"), "{err}");
}

#[tokio::test]
async fn delayed_echo_is_persisted_and_correlated() {
    let speed = 4.0;
    let server = start(5.0, speed).await;
    let (id, _) = server.create(json!({ "kind": "noise", "duration_s": 30.0, "seed": 11 })).await;
    let log = run_client(&server.ws_url(&id), Script::echo(0.05), speed).await;
    assert!(log.done);
    assert_eq!(log.session.as_ref().unwrap()["rate_hz"], 100.0);
    assert_eq!(log.targets.len(), 3000);
    let summary = server.wait_finished(&id, Duration::from_secs(10)).await;
    assert_eq!(summary["state"], "ended", "{summary}");

    let (status, bytes) = server.request("GET", &format!("/sessions/{id}/file"), None).await;
    assert_eq!(status, StatusCode::OK);
    let path = server.dir.path().join(format!("{id}.session.ndjson"));
    assert_eq!(bytes, std::fs::read(&path).unwrap());

    let file = load_session_file(&path).unwrap();
    let record = file.record;
    assert!(!record.aborted);
    let meta = file.capture.unwrap();
    assert_eq!(meta.targets_sent, 3000);
    assert_eq!(meta.samples_rejected, 0);
    assert!((record.len() as f64 - 2995.0).abs() < 30.0, "{} rows", record.len());
    for axis in 0..2 {
        let (u, y) = (record.input.channel(axis).0, &record.output.pos[axis]);
        let rho = pearson(u, y);
        assert!(rho >= 0.99, "axis {axis}: {rho}");
        let lag = best_lag(u, y, 20);
        assert!((5..=7).contains(&lag), "axis {axis}: lag {lag}");
    }
    let fit = fit_structured(&record, 0, &FollowerParams::new(1.0, 10.0, 100.0).unwrap(), &FitOptions::default()).unwrap();
    assert!(fit.converged);
    let p = fit.params().unwrap();
    // In band the fitted follower acts as a unity-gain delay of about 50 ms.
    for f_hz in [0.1, 0.3, 0.6] {
        let omega = 2.0 * std::f64::consts::PI * f_hz;
        let g = p.frequency_response(omega);
        let delay = -g.arg() / omega;
        assert!((g.norm() - 1.0).abs() < 0.05, "{f_hz} Hz: gain {}", g.norm());
        assert!((0.035..0.08).contains(&delay), "{f_hz} Hz: delay {delay} ({p:?})");
    }
}

#[tokio::test]
async fn silent_client_is_aborted_after_the_timeout() {
    let server = start(0.5, 1.0).await;
    let (id, _) = server.create(json!({ "kind": "noise", "duration_s": 30.0 })).await;
    let script = Script { silent_after_s: Some(0.0), ..Script::echo(0.0) };
    let started = std::time::Instant::now();
    let log = run_client(&server.ws_url(&id), script, 1.0).await;
    let elapsed = started.elapsed().as_secs_f64();
    assert!(!log.done);
    assert!((0.45..2.0).contains(&elapsed), "{elapsed} s");
    let summary = server.wait_finished(&id, Duration::from_secs(5)).await;
    assert_eq!(summary["state"], "aborted");
    let file = load_session_file(&server.dir.path().join(format!("{id}.session.ndjson"))).unwrap();
    assert!(file.record.aborted);
    assert!(file.record.notes.contains("no sample"), "{}", file.record.notes);
}

#[tokio::test]
async fn disconnect_persists_partial_data_as_aborted() {
    let speed = 4.0;
    let server = start(5.0, speed).await;
    let (id, _) = server.create(json!({ "kind": "noise", "duration_s": 60.0 })).await;
    let script = Script { disconnect_after_s: Some(8.0), ..Script::echo(0.0) };
    run_client(&server.ws_url(&id), script, speed).await;
    let summary = server.wait_finished(&id, Duration::from_secs(5)).await;
    assert_eq!(summary["state"], "aborted");
    let file = load_session_file(&server.dir.path().join(format!("{id}.session.ndjson"))).unwrap();
    assert!(file.record.aborted);
    assert!((700..=800).contains(&file.record.len()), "{} rows", file.record.len());
    assert!(server.dir.path().join(format!("{id}.raw.ndjson")).exists());
    // A session runs once.
    let err = tokio_tungstenite::connect_async(server.ws_url(&id)).await.unwrap_err();
    assert!(err.to_string().contains("409"), "{err}");
}

#[tokio::test]
async fn stale_samples_are_rejected_and_counted() {
    let speed = 4.0;
    let server = start(5.0, speed).await;
    let (id, _) = server.create(json!({ "kind": "fourier", "duration_s": 10.0 })).await;
    let script = Script { stale_sample_after: Some(100), ..Script::echo(0.0) };
    let log = run_client(&server.ws_url(&id), script, speed).await;
    assert_eq!(log.errors.len(), 1);
    assert_eq!(log.errors[0]["reason"], "out_of_order");
    let summary = server.wait_finished(&id, Duration::from_secs(5)).await;
    assert_eq!(summary["state"], "ended");
    assert_eq!(summary["samples_rejected"], 1);
    let file = load_session_file(&server.dir.path().join(format!("{id}.session.ndjson"))).unwrap();
    assert!(!file.record.aborted);
    assert_eq!(file.capture.unwrap().samples_rejected, 1);
}

#[tokio::test]
async fn target_rate_holds_over_ten_seconds() {
    let server = start(5.0, 1.0).await;
    let (id, _) = server.create(json!({ "kind": "noise", "duration_s": 12.0 })).await;
    let log = run_client(&server.ws_url(&id), Script::echo(0.0), 1.0).await;
    let first = log.targets[0].0;
    let window: Vec<_> = log
        .targets
        .iter()
        .map(|(at, _)| at.duration_since(first).as_secs_f64())
        .filter(|&s| (1.0..11.0).contains(&s))
        .collect();
    let mean_interval = (window[window.len() - 1] - window[0]) / (window.len() - 1) as f64;
    assert!((mean_interval - 0.01).abs() <= 0.0005, "mean interval {mean_interval}");
    assert!((950..=1050).contains(&window.len()), "{} targets", window.len());
}

#[tokio::test]
async fn streamed_targets_match_a_local_regeneration() {
    let speed = 8.0;
    let server = start(5.0, speed).await;
    let (id, body) = server.create(json!({ "kind": "fourier", "duration_s": 20.0, "rotation": true })).await;
    let spec: follower_lab::capture::ResolvedSpec = serde_json::from_value(body["spec"].clone()).unwrap();
    let traj = spec.trajectory().unwrap();
    let log = run_client(&server.ws_url(&id), Script::echo(0.05), speed).await;
    assert_eq!(log.targets.len(), traj.len());
    for (i, (_, target)) in log.targets.iter().enumerate() {
        assert_eq!(target["t"].as_f64().unwrap(), traj.t[i]);
        assert_eq!(target["pos"][0].as_f64().unwrap(), traj.pos[0][i]);
        assert_eq!(target["pos"][1].as_f64().unwrap(), traj.pos[1][i]);
        assert_eq!(target["rot"].as_f64().unwrap(), traj.rot[0][i]);
    }
}
