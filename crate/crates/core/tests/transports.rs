mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use common::*;
use ordshap::exact::ExactReport;
use ordshap::games::{Nonlinearity, SyntheticModelConfig, SyntheticTokenModel};
use ordshap::gateway::{
    decode_response, text_tokens, EndpointConfig, Gateway, GatewayConfig, InProcessEndpoint, ModelEndpoint, ModelGame,
    SequenceModel, SequenceSample, Token, Transport, WireRequest, WireResponse,
};
use ordshap::{least_squares_estimate, GatewayError, LeastSquaresConfig, PositionIndex};
use serde_json::Value;

fn wire_cases() -> Value {
    serde_json::from_str(&std::fs::read_to_string(fixture("wire_cases.json")).unwrap()).unwrap()
}

fn write_config(name: &str, cfg: &SyntheticModelConfig) -> String {
    let path = scratch(name);
    std::fs::write(&path, serde_json::to_string(cfg).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

fn pipe_config(command: String, class_count: usize, timeout: Duration) -> EndpointConfig {
    EndpointConfig {
        transport: Transport::PipeJsonl,
        address: command,
        batch_limit: 64,
        timeout,
        class_count,
    }
}

fn mirror_command(config_path: &str) -> String {
    format!("python3 {} {config_path}", fixture("synthetic_mirror.py").display())
}

fn faulty(mode: &str, extra: &str, timeout: Duration) -> Box<dyn ModelEndpoint> {
    let cmd = format!("python3 {} {mode} {extra}", fixture("faulty_model.py").display());
    pipe_config(cmd, 1, timeout).connect().unwrap()
}

/// The mirror listening on an ephemeral port; killed on drop.
struct HttpMirror {
    child: Child,
    url: String,
}

impl HttpMirror {
    fn start(config_path: &str) -> Self {
        let mut child = Command::new("python3")
            .arg(fixture("synthetic_mirror.py"))
            .arg(config_path)
            .args(["--port", "0"])
            .stdout(Stdio::piped())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap())
            .read_line(&mut line)
            .unwrap();
        let port: u16 = line.trim().strip_prefix("listening ").unwrap().parse().unwrap();
        Self {
            child,
            url: format!("http://127.0.0.1:{port}"),
        }
    }

    fn endpoint(&self, class_count: usize) -> Box<dyn ModelEndpoint> {
        EndpointConfig {
            transport: Transport::HttpJson,
            address: self.url.clone(),
            batch_limit: 64,
            timeout: Duration::from_secs(10),
            class_count,
        }
        .connect()
        .unwrap()
    }
}

impl Drop for HttpMirror {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn requests(section: &str) -> Vec<(WireRequest, Value)> {
    wire_cases()[section]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| (serde_json::from_value(c["request"].clone()).unwrap(), c.clone()))
        .collect()
}

fn fixture_model() -> SyntheticTokenModel {
    SyntheticTokenModel::new(serde_json::from_value(wire_cases()["config"].clone()).unwrap()).unwrap()
}

fn check_endpoint_against_fixtures(endpoint: &dyn ModelEndpoint) {
    for (req, case) in requests("cases") {
        let expected: WireResponse = serde_json::from_value(case["response"].clone()).unwrap();
        let got = endpoint.call(req.class_index, &req.sequences).unwrap();
        assert_close(&got, expected.outputs.as_ref().unwrap(), 1e-12);
    }
    for (req, case) in requests("errors") {
        let needle = case["error_contains"].as_str().unwrap();
        match endpoint.call(req.class_index, &req.sequences) {
            Err(GatewayError::Remote { message, .. } | GatewayError::BatchItem { index: 0, message }) => {
                assert!(message.contains(needle), "{message}")
            }
            Err(GatewayError::ClassIndex { .. }) if needle == "class" => {}
            other => panic!("expected a remote error containing {needle:?}, got {other:?}"),
        }
    }
}

#[test]
fn fixtures_round_trip_through_serde() {
    for section in ["cases", "errors"] {
        for case in wire_cases()[section].as_array().unwrap() {
            let req: WireRequest = serde_json::from_value(case["request"].clone()).unwrap();
            assert_eq!(serde_json::to_value(&req).unwrap(), case["request"]);
            if let Some(resp) = case.get("response") {
                let parsed: WireResponse = serde_json::from_value(resp.clone()).unwrap();
                assert_eq!(&serde_json::to_value(&parsed).unwrap(), resp);
                let n = parsed.outputs.as_ref().unwrap().len();
                assert_eq!(
                    decode_response(&resp.to_string(), &req.id, n).unwrap(),
                    parsed.outputs.unwrap()
                );
            }
        }
    }
}

#[test]
fn in_process_model_matches_fixtures() {
    check_endpoint_against_fixtures(&InProcessEndpoint::new(fixture_model(), 64));
}

#[test]
fn pipe_mirror_matches_fixtures() {
    let cfg = fixture_model().config().clone();
    let path = write_config("pipe-fixture.json", &cfg);
    let endpoint = pipe_config(mirror_command(&path), 1, Duration::from_secs(10))
        .connect()
        .unwrap();
    check_endpoint_against_fixtures(endpoint.as_ref());
}

#[test]
fn http_mirror_matches_fixtures() {
    let path = write_config("http-fixture.json", fixture_model().config());
    let server = HttpMirror::start(&path);
    check_endpoint_against_fixtures(server.endpoint(1).as_ref());
}

#[test]
fn remote_attributions_equal_in_process() {
    let model = synthetic(Nonlinearity::Sigmoid, 6);
    let path = write_config("remote-sigmoid.json", model.config());
    let tokens = text_tokens(&["A", "C", "Bbar", "D", "Abar", "B"]);
    let index = PositionIndex::identity(6);
    let local = ExactReport::compute(
        &ModelGame::new(
            Arc::new(Gateway::in_process(model, GatewayConfig::default()).unwrap()),
            SequenceSample::new(tokens.clone()),
            1,
        )
        .unwrap(),
        &index,
    )
    .unwrap();

    let server = HttpMirror::start(&path);
    let remotes: Vec<(&str, Box<dyn ModelEndpoint>)> = vec![
        (
            "pipe",
            pipe_config(mirror_command(&path), 2, Duration::from_secs(10))
                .connect()
                .unwrap(),
        ),
        ("http", server.endpoint(2)),
    ];
    for (name, endpoint) in remotes {
        let gw = Arc::new(Gateway::new(endpoint, GatewayConfig::default()).unwrap());
        let game = ModelGame::new(gw.clone(), SequenceSample::new(tokens.clone()), 1).unwrap();
        let remote = ExactReport::compute(&game, &index).unwrap();
        assert!(max_abs_diff(&local.vi, &remote.vi) < 1e-9, "{name}");
        assert!(max_abs_diff(&local.pi, &remote.pi) < 1e-9, "{name}");
        assert!(gw.stats().round_trips > 0);
    }
}

#[test]
fn remote_least_squares_equals_in_process() {
    let model = synthetic(Nonlinearity::Sigmoid, 10);
    let path = write_config("remote-ls.json", model.config());
    let tokens = text_tokens(&["A", "C", "Bbar", "D", "Abar", "B", "Cbar", "A", "D", "C"]);
    let index = PositionIndex::identity(10);
    let cfg = LeastSquaresConfig::new(64, 2, 4);
    let local_gw = Arc::new(Gateway::in_process(model, GatewayConfig::default()).unwrap());
    let local = least_squares_estimate(
        &ModelGame::new(local_gw, SequenceSample::new(tokens.clone()), 0).unwrap(),
        &cfg,
        &index,
    )
    .unwrap();
    let endpoint = pipe_config(mirror_command(&path), 2, Duration::from_secs(10))
        .connect()
        .unwrap();
    let gw = Arc::new(Gateway::new(endpoint, GatewayConfig::default()).unwrap());
    let remote = least_squares_estimate(
        &ModelGame::new(gw, SequenceSample::new(tokens), 0).unwrap(),
        &cfg,
        &index,
    )
    .unwrap();
    assert!(max_abs_diff(&local.vi, &remote.vi) < 1e-9);
    assert!(max_abs_diff(&local.pi, &remote.pi) < 1e-9);
}

fn seq(tokens: &[&str]) -> Vec<Token> {
    text_tokens(tokens)
}

#[test]
fn pipe_faults_surface_distinctly() {
    let timeout = Duration::from_secs(5);
    let batch = vec![seq(&["a", "[MASK]", "b"]), seq(&["[MASK]", "[MASK]", "c"])];
    assert_eq!(faulty("ok", "", timeout).call(0, &batch).unwrap(), vec![2.0, 1.0]);
    assert!(matches!(
        faulty("garbage", "", timeout).call(0, &batch),
        Err(GatewayError::Malformed(_))
    ));
    assert!(matches!(
        faulty("short", "", timeout).call(0, &batch),
        Err(GatewayError::Malformed(_))
    ));
    assert!(matches!(
        faulty("wrong-id", "", timeout).call(0, &batch),
        Err(GatewayError::Malformed(_))
    ));
    assert!(matches!(
        faulty("error", "", timeout).call(0, &batch),
        Err(GatewayError::Remote { status: None, .. })
    ));
    assert!(matches!(
        faulty("exit", "", timeout).call(0, &batch),
        Err(GatewayError::Transport(_))
    ));
}

#[test]
fn pipe_timeout_then_recovery() {
    let endpoint = faulty("slow-first", "2.0", Duration::from_millis(1500));
    let batch = vec![seq(&["a", "b"])];
    assert!(matches!(endpoint.call(0, &batch), Err(GatewayError::Timeout(_))));
    // the late answer to the first request must not be taken for the second
    assert_eq!(endpoint.call(0, &[seq(&["a", "[MASK]"])]).unwrap(), vec![1.0]);
}

#[test]
fn missing_program_is_a_transport_error() {
    let err = pipe_config("/nonexistent/model-binary".into(), 1, Duration::from_secs(1))
        .connect()
        .err()
        .unwrap();
    assert!(
        matches!(err, ordshap::Error::Gateway(GatewayError::Transport(_))),
        "{err}"
    );
}

#[test]
fn gateway_retries_then_reports_dead_pipe() {
    let gw = Gateway::new(faulty("exit", "", Duration::from_secs(5)), GatewayConfig::default()).unwrap();
    let err = gw.evaluate(0, &[seq(&["a"])]).unwrap_err();
    assert!(matches!(err, GatewayError::Transport(_)));
    assert_eq!(gw.stats().round_trips, 3);
}

/// Request heads and bodies as received.
type Seen = Arc<Mutex<Vec<(String, String)>>>;

/// Serves `responses` in order, one per connection, recording each request.
fn mini_server(responses: Vec<(u16, String, Duration)>) -> (String, Seen) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    std::thread::spawn(move || {
        for (status, body, delay) in responses {
            let Ok((mut stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut length = 0;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
                head.push_str(&line);
            }
            let mut buf = vec![0; length];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push((head, String::from_utf8(buf).unwrap()));
            std::thread::sleep(delay);
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            let _ = stream.write_all(reply.as_bytes());
        }
    });
    (url, seen)
}

fn http_endpoint(url: &str, timeout: Duration) -> Box<dyn ModelEndpoint> {
    EndpointConfig {
        transport: Transport::HttpJson,
        address: url.to_string(),
        batch_limit: 8,
        timeout,
        class_count: 3,
    }
    .connect()
    .unwrap()
}

#[test]
fn http_request_shape() {
    let (url, seen) = mini_server(vec![(200, String::new(), Duration::ZERO)]);
    let endpoint = http_endpoint(&url, Duration::from_secs(5));
    // The reply is empty, so the call fails; only the request matters here.
    let _ = endpoint.call(2, &[seq(&["x", "y"]), vec![Token::Vector(vec![0.5, -1.0])]]);
    let seen = seen.lock().unwrap();
    let (head, body) = &seen[0];
    assert!(head.starts_with("POST /evaluate "), "{head}");
    let req: WireRequest = serde_json::from_str(body).unwrap();
    assert_eq!(req.class_index, 2);
    assert_eq!(
        req.sequences,
        vec![seq(&["x", "y"]), vec![Token::Vector(vec![0.5, -1.0])]]
    );
    assert!(req.id.starts_with("req-"));
}

#[test]
fn http_faults_surface_distinctly() {
    let batch = [seq(&["x"])];
    let (url, _) = mini_server(vec![
        (500, r#"{"error": "out of memory"}"#.into(), Duration::ZERO),
        (503, "busy".into(), Duration::ZERO),
        (200, "not json".into(), Duration::ZERO),
        (200, r#"{"id": "nope", "outputs": [1.0]}"#.into(), Duration::ZERO),
        (200, "{}".into(), Duration::from_millis(1500)),
    ]);
    let endpoint = http_endpoint(&url, Duration::from_millis(500));
    match endpoint.call(0, &batch) {
        Err(GatewayError::Remote {
            status: Some(500),
            message,
        }) => assert_eq!(message, "out of memory"),
        other => panic!("{other:?}"),
    }
    match endpoint.call(0, &batch) {
        Err(GatewayError::Remote {
            status: Some(503),
            message,
        }) => assert_eq!(message, "busy"),
        other => panic!("{other:?}"),
    }
    assert!(matches!(endpoint.call(0, &batch), Err(GatewayError::Malformed(_))));
    assert!(matches!(endpoint.call(0, &batch), Err(GatewayError::Malformed(_))));
    assert!(matches!(endpoint.call(0, &batch), Err(GatewayError::Timeout(_))));
}

#[test]
fn http_unreachable_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let endpoint = http_endpoint(&format!("http://127.0.0.1:{port}"), Duration::from_secs(2));
    assert!(matches!(
        endpoint.call(0, &[seq(&["x"])]),
        Err(GatewayError::Transport(_))
    ));
}

#[test]
fn cache_does_not_change_attributions() {
    let tokens = ["B", "Cbar", "A", "D", "Bbar"];
    let index = PositionIndex::identity(5);
    let run = |cache: bool| {
        let gw = Arc::new(
            Gateway::in_process(
                synthetic(Nonlinearity::Sigmoid, 5),
                GatewayConfig {
                    cache,
                    ..Default::default()
                },
            )
            .unwrap(),
        );
        let game = ModelGame::new(gw.clone(), SequenceSample::new(text_tokens(&tokens)), 0).unwrap();
        let exact = ExactReport::compute(&game, &index).unwrap();
        let ls = least_squares_estimate(&game, &LeastSquaresConfig::new(128, 8, 2), &index).unwrap();
        (exact, ls, gw.stats())
    };
    let (e1, l1, on) = run(true);
    let (e2, l2, off) = run(false);
    assert!(max_abs_diff(&e1.vi, &e2.vi) <= 1e-12 && max_abs_diff(&e1.pi, &e2.pi) <= 1e-12);
    assert!(max_abs_diff(&l1.vi, &l2.vi) <= 1e-12 && max_abs_diff(&l1.pi, &l2.pi) <= 1e-12);
    assert!(on.cache_hits > 0 && off.cache_hits == 0);
    assert!(on.sequences_sent < off.sequences_sent);
}

struct SlowCounter {
    calls: AtomicUsize,
}

impl SequenceModel for SlowCounter {
    fn class_count(&self) -> usize {
        1
    }

    fn predict(&self, _class: usize, sequence: &[Token]) -> Result<f64, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        std::thread::sleep(Duration::from_millis(100));
        Ok(sequence.len() as f64)
    }
}

#[test]
fn concurrent_callers_share_in_flight_calls() {
    let model = Arc::new(SlowCounter {
        calls: AtomicUsize::new(0),
    });
    struct Shared(Arc<SlowCounter>);
    impl SequenceModel for Shared {
        fn class_count(&self) -> usize {
            1
        }
        fn predict(&self, c: usize, s: &[Token]) -> Result<f64, GatewayError> {
            self.0.predict(c, s)
        }
    }
    let gw = Arc::new(Gateway::in_process(Shared(model.clone()), GatewayConfig::default()).unwrap());
    let batch: Vec<Vec<Token>> = (1..=4).map(|k| vec![Token::text("t"); k]).collect();
    let handles: Vec<_> = (0..3)
        .map(|k| {
            let gw = gw.clone();
            let batch = batch.clone();
            std::thread::spawn(move || {
                std::thread::sleep(Duration::from_millis(20 * k));
                gw.evaluate(0, &batch).unwrap()
            })
        })
        .collect();
    for h in handles {
        assert_eq!(h.join().unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
    }
    assert_eq!(model.calls.load(Ordering::SeqCst), 4);
    assert_eq!(gw.stats().sequences_sent, 4);
}
