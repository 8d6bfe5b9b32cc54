use std::path::PathBuf;
use std::sync::atomic::AtomicU64;
use std::sync::Arc;
use std::time::Duration;

use futures_util::StreamExt;
use reqwest::{Client, StatusCode};
use serde_json::{json, Value};
use tokio::io::AsyncWriteExt;
use tokio::net::TcpStream;
use vitalnav_core::engine::EngineState;
use vitalnav_core::graph::load_corpus;
use vitalnav_core::{Engine, SessionLog, VitalKind};
use vitalnav_service::{serve, serve_state, AppState, Clock, RunningService, ServeError, ServiceConfig};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn config() -> ServiceConfig {
    let mut config = ServiceConfig::load(&fixtures().join("config.json")).unwrap();
    config.http_port = 0;
    config.device_port = 0;
    config
}

async fn start() -> RunningService {
    let config = config();
    let state = AppState::new(config.build_engine().unwrap(), Clock::Manual(AtomicU64::new(0)));
    serve_state(&config, Arc::new(state)).await.unwrap()
}

fn url(service: &RunningService, path: &str) -> String {
    format!("http://{}{}", service.http_addr, path)
}

async fn post(service: &RunningService, path: &str, body: Value) -> (StatusCode, Value) {
    let response = Client::new().post(url(service, path)).json(&body).send().await.unwrap();
    let status = response.status();
    (status, response.json().await.unwrap())
}

async fn get(service: &RunningService, path: &str) -> (StatusCode, Value) {
    let response = reqwest::get(url(service, path)).await.unwrap();
    let status = response.status();
    (status, response.json().await.unwrap())
}

async fn send_lines(service: &RunningService, lines: &[&str]) {
    let mut stream = TcpStream::connect(service.device_addr).await.unwrap();
    for line in lines {
        stream.write_all(line.as_bytes()).await.unwrap();
        stream.write_all(b"\n").await.unwrap();
    }
    stream.shutdown().await.unwrap();
}

async fn wait_for_lines(service: &RunningService, lines: u64) {
    for _ in 0..200 {
        if service.state.devices().counts().lines >= lines {
            return;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("listener saw {:?}", service.state.devices().counts());
}

fn spo2_line(device: &str, value: f64, t: u64) -> String {
    json!({"device": device, "kind": "spo2", "value": value, "t": t}).to_string()
}

#[tokio::test]
async fn graphs_and_entry_view() {
    let service = start().await;
    let (status, graphs) = get(&service, "/graphs").await;
    assert_eq!(status, StatusCode::OK);
    let ids: Vec<_> = graphs.as_array().unwrap().iter().map(|g| g["id"].as_str().unwrap()).collect();
    assert_eq!(ids, vec!["airway", "hypoglycemia"]);

    let (status, view) = post(&service, "/sessions", json!({"graph_id": "hypoglycemia"})).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(view["node_id"], "assess_glucose");
    let session = view["session"].as_u64().unwrap();

    let (status, view) = get(&service, &format!("/sessions/{session}/view")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(view["node_id"], "assess_glucose");
    assert_eq!(view["resolved"][0]["outcome"]["status"], "unknown");

    let (status, graph) = get(&service, "/graphs/hypoglycemia").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(graph["entry"], "assess_glucose");
    service.shutdown().await;
}

#[tokio::test]
async fn error_bodies() {
    let service = start().await;
    let (_, view) = post(&service, "/sessions", json!({"graph_id": "hypoglycemia"})).await;
    let session = view["session"].as_u64().unwrap();

    let (status, body) = post(&service, &format!("/sessions/{session}/advance"), json!({"choice": "next"})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "invalid_choice");

    let (status, body) = post(&service, &format!("/sessions/{session}/undo"), json!({})).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "nothing_to_undo");

    let (status, body) = get(&service, "/sessions/99/view").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "unknown_session");

    let (status, body) = post(&service, "/sessions", json!({"graph_id": "nope"})).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "unknown_graph");

    let (status, body) = post(&service, "/sessions", json!({"graph": "hypoglycemia"})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "bad_request");

    let (status, body) = get(&service, "/sessions/abc/view").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "bad_request");

    let (status, body) =
        post(&service, &format!("/sessions/{session}/verdict"), json!({"requirement": "spo2", "accept": true})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "unknown_requirement");

    let (status, body) = post(&service, "/patient/entries", json!({"kind": "spo2", "value": 97})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "source_class_violation");

    let (status, body) = post(&service, "/patient/entries", json!({"kind": "age", "value": 400})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "unit_mismatch");
    service.shutdown().await;
}

#[tokio::test]
async fn navigation_and_entries() {
    let service = start().await;
    let (_, view) = post(&service, "/sessions", json!({"graph_id": "hypoglycemia"})).await;
    let session = view["session"].as_u64().unwrap();

    let (status, _) = post(&service, "/patient/entries", json!({"kind": "age", "value": 45})).await;
    assert_eq!(status, StatusCode::OK);
    let (_, vitals) = get(&service, "/vitals").await;
    assert_eq!(vitals["age"]["reading"]["value"], json!(45.0));
    assert_eq!(vitals["age"]["reading"]["origin"], "control_center");

    let (status, view) = post(&service, &format!("/sessions/{session}/advance"), json!({"choice": "yes"})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(view["node_id"], "check_swallowing");
    let (_, view) = post(&service, &format!("/sessions/{session}/undo"), json!({})).await;
    assert_eq!(view["node_id"], "assess_glucose");
    service.shutdown().await;
}

#[tokio::test]
async fn gets_do_not_mutate() {
    let service = start().await;
    let (_, view) = post(&service, "/sessions", json!({"graph_id": "hypoglycemia"})).await;
    let session = view["session"].as_u64().unwrap();
    let journal = || service.state.read(|engine, _| engine.journal().len());
    let before = journal();
    for path in ["/graphs", "/vitals", "/alarms", "/devices", "/graphs/airway"] {
        get(&service, path).await;
    }
    let first = get(&service, &format!("/sessions/{session}/view")).await;
    let second = get(&service, &format!("/sessions/{session}/view")).await;
    assert_eq!(first, second);
    reqwest::get(url(&service, &format!("/sessions/{session}/export"))).await.unwrap();
    assert_eq!(journal(), before);

    // every mutating call that succeeds leaves a journal record
    post(&service, &format!("/sessions/{session}/advance"), json!({"choice": "yes"})).await;
    assert!(journal() > before);
    service.shutdown().await;
}

#[tokio::test]
async fn device_lines_reach_the_store() {
    let service = start().await;
    let a: Vec<String> = (0..3).map(|i| spo2_line("a", 95.0, i)).collect();
    let b: Vec<String> = (0..3).map(|i| spo2_line("b", 96.0, i)).collect();
    let (ra, rb): (Vec<&str>, Vec<&str>) =
        (a.iter().map(String::as_str).collect(), b.iter().map(String::as_str).collect());
    tokio::join!(send_lines(&service, &ra), send_lines(&service, &rb));
    wait_for_lines(&service, 6).await;
    let history = service.state.read(|engine, _| engine.store().history_len(VitalKind::Spo2));
    assert_eq!(history, 6);
    let counts = service.state.devices().counts();
    assert_eq!((counts.connections, counts.ingested, counts.protocol_errors), (2, 6, 0));
    service.shutdown().await;
}

#[tokio::test]
async fn malformed_line_keeps_connection_open() {
    let service = start().await;
    let first = spo2_line("a", 95.0, 1);
    let last = json!({"device": "a", "kind": "heart_frequency", "value": 80, "t": 2}).to_string();
    send_lines(&service, &[&first, "not json", &last]).await;
    wait_for_lines(&service, 3).await;
    let counts = service.state.devices().counts();
    assert_eq!((counts.connections, counts.ingested, counts.protocol_errors), (1, 2, 1));
    let latest = service.state.read(|engine, _| engine.store().latest_map());
    assert_eq!(latest[&VitalKind::HeartFrequency].value, 80.0);
    service.shutdown().await;
}

struct SseReader {
    stream: futures_util::stream::BoxStream<'static, reqwest::Result<bytes::Bytes>>,
    buffer: String,
}

impl SseReader {
    async fn open(service: &RunningService) -> Self {
        let response = reqwest::get(url(service, "/events")).await.unwrap();
        assert_eq!(response.status(), StatusCode::OK);
        SseReader { stream: response.bytes_stream().boxed(), buffer: String::new() }
    }

    /// Next (event, data) pair, skipping keep-alive comments.
    async fn next(&mut self) -> (String, String) {
        loop {
            if let Some(end) = self.buffer.find("\n\n") {
                let block: String = self.buffer.drain(..end + 2).collect();
                let mut event = String::new();
                let mut data = String::new();
                for line in block.lines() {
                    if let Some(v) = line.strip_prefix("event:") {
                        event = v.trim().to_string();
                    } else if let Some(v) = line.strip_prefix("data:") {
                        data.push_str(v.trim_start());
                    }
                }
                if !event.is_empty() {
                    return (event, data);
                }
                continue;
            }
            let chunk = tokio::time::timeout(Duration::from_secs(5), self.stream.next())
                .await
                .expect("event within 5 s")
                .expect("stream open")
                .unwrap();
            self.buffer.push_str(&String::from_utf8_lossy(&chunk));
        }
    }
}

#[tokio::test]
async fn breaching_device_reading_streams_alarm() {
    let service = start().await;
    post(&service, "/sessions", json!({"graph_id": "hypoglycemia"})).await;
    let mut events = SseReader::open(&service).await;
    send_lines(&service, &[&spo2_line("zoll", 85.0, 0)]).await;

    let (name, data) = events.next().await;
    assert_eq!(name, "vitals");
    assert_eq!(serde_json::from_str::<Value>(&data).unwrap()["reading"]["value"], json!(85.0));
    let (name, data) = events.next().await;
    assert_eq!(name, "alarm_raised");
    let alarm: Value = serde_json::from_str(&data).unwrap();
    assert_eq!(alarm["alarm"]["threshold"]["kind"], "spo2");
    let id = alarm["alarm"]["id"].as_u64().unwrap();

    let (_, open) = get(&service, "/alarms?state=open").await;
    assert_eq!(open.as_array().unwrap().len(), 1);
    let (status, resolved) = post(&service, &format!("/alarms/{id}/verdict"), json!({"decision": "dismiss"})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(resolved["state"], "dismissed");
    let (name, _) = events.next().await;
    assert_eq!(name, "alarm_resolved");

    let (status, body) = post(&service, &format!("/alarms/{id}/verdict"), json!({"decision": "dismiss"})).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "already_resolved");
    let (status, _) = get(&service, "/alarms?state=bogus").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    service.shutdown().await;
}

#[tokio::test]
async fn step_events_follow_audit_order() {
    let service = start().await;
    let (_, view) = post(&service, "/sessions", json!({"graph_id": "hypoglycemia"})).await;
    let session = view["session"].as_u64().unwrap();
    let mut events = SseReader::open(&service).await;
    for (choice, _) in [("yes", 0), ("no", 1)] {
        post(&service, &format!("/sessions/{session}/advance"), json!({ "choice": choice })).await;
    }
    post(&service, &format!("/sessions/{session}/undo"), json!({})).await;
    let mut seqs = Vec::new();
    for _ in 0..3 {
        let (name, data) = events.next().await;
        assert_eq!(name, "step");
        seqs.push(serde_json::from_str::<Value>(&data).unwrap()["seq"].as_u64().unwrap());
    }
    assert_eq!(seqs, vec![1, 2, 3]);
    service.shutdown().await;
}

#[tokio::test]
async fn exported_log_replays_to_same_state() {
    let service = start().await;
    let (_, view) = post(&service, "/sessions", json!({"graph_id": "hypoglycemia"})).await;
    let session = view["session"].as_u64().unwrap();
    post(&service, "/patient/entries", json!({"kind": "gcs", "value": 14})).await;
    send_lines(&service, &[&spo2_line("zoll", 85.0, 0)]).await;
    wait_for_lines(&service, 1).await;
    post(&service, &format!("/sessions/{session}/advance"), json!({"choice": "yes"})).await;

    let text = reqwest::get(url(&service, &format!("/sessions/{session}/export")))
        .await
        .unwrap()
        .text()
        .await
        .unwrap();
    let log = SessionLog::parse_jsonl(&text).unwrap();
    let config = config();
    let graphs = load_corpus(&config.graph_dir).unwrap();
    let replayed = Engine::replay(config.engine_config().unwrap(), graphs, &log).unwrap();
    let live: EngineState = service.state.read(|engine, _| engine.state());
    assert_eq!(replayed.state(), live);
    service.shutdown().await;
}

#[tokio::test]
async fn config_and_bind_errors() {
    let mut missing = config();
    missing.graph_dir = fixtures().join("no_such_dir");
    assert!(matches!(serve(&missing).await, Err(ServeError::Config(_))));

    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let mut clash = config();
    clash.http_port = taken.local_addr().unwrap().port();
    assert!(matches!(serve(&clash).await, Err(ServeError::Bind { .. })));

    let service = serve(&config()).await.unwrap();
    assert_ne!(service.http_addr.port(), 0);
    service.shutdown().await;
}
