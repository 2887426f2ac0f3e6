//! Offline tests of the remote-backend path against a scripted local HTTP
//! endpoint: retry/backoff behavior, disk-cache transparency, CSV extraction
//! under malformed model output, and the multi-turn conditional protocol.

use std::io::{Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use tabsynth_core::generate::{
    self, GenerationRequest, GenerationStrategy, GeneratorBackend, StrategyKind,
};
use tabsynth_core::llm::{LlmClient, LlmClientConfig, LlmError, RemoteBackend};
use tabsynth_core::schema::{DataTable, FeatureRole, FeatureSpec, TableBuilder, TableSchema, Value};

const CRED_VAR: &str = "TABSYNTH_TEST_CRED";

/// One scripted HTTP response.
#[derive(Clone)]
struct Scripted {
    status: u16,
    /// Completion text wrapped into a chat-completion JSON body (or raw body
    /// when `raw` is set).
    content: String,
    raw: bool,
}

impl Scripted {
    fn ok(content: impl Into<String>) -> Self {
        Scripted {
            status: 200,
            content: content.into(),
            raw: false,
        }
    }

    fn status(code: u16) -> Self {
        Scripted {
            status: code,
            content: String::new(),
            raw: true,
        }
    }
}

/// Minimal blocking HTTP server playing a response script in request order;
/// the script's last entry repeats once exhausted.
struct MockServer {
    addr: String,
    hits: Arc<AtomicUsize>,
}

fn start_mock(script: Vec<Scripted>) -> MockServer {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let hits_inner = Arc::clone(&hits);
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let n = hits_inner.fetch_add(1, Ordering::SeqCst);
            let entry = script[n.min(script.len() - 1)].clone();

            // read request head + declared body
            let mut buf = Vec::new();
            let mut chunk = [0u8; 4096];
            let header_end = loop {
                match stream.read(&mut chunk) {
                    Ok(0) => break None,
                    Ok(k) => {
                        buf.extend_from_slice(&chunk[..k]);
                        if let Some(pos) = find_header_end(&buf) {
                            break Some(pos);
                        }
                    }
                    Err(_) => break None,
                }
            };
            if let Some(pos) = header_end {
                let head = String::from_utf8_lossy(&buf[..pos]).to_string();
                let content_length = head
                    .lines()
                    .find_map(|l| {
                        let (k, v) = l.split_once(':')?;
                        k.eq_ignore_ascii_case("content-length")
                            .then(|| v.trim().parse::<usize>().ok())?
                    })
                    .unwrap_or(0);
                let mut body_read = buf.len() - (pos + 4);
                while body_read < content_length {
                    match stream.read(&mut chunk) {
                        Ok(0) => break,
                        Ok(k) => body_read += k,
                        Err(_) => break,
                    }
                }
            }

            let body = if entry.raw {
                entry.content.clone()
            } else {
                serde_json::json!({
                    "choices": [{"message": {"role": "assistant", "content": entry.content}}],
                    "usage": {"prompt_tokens": 100, "completion_tokens": 200}
                })
                .to_string()
            };
            let response = format!(
                "HTTP/1.1 {} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                entry.status,
                body.len(),
                body
            );
            let _ = stream.write_all(response.as_bytes());
        }
    });
    MockServer { addr, hits }
}

fn find_header_end(buf: &[u8]) -> Option<usize> {
    buf.windows(4).position(|w| w == b"\r\n\r\n")
}

fn client_config(server: &MockServer, cache_dir: Option<std::path::PathBuf>) -> LlmClientConfig {
    LlmClientConfig {
        endpoint: server.addr.clone(),
        model: "mock-model".into(),
        temperature: 0.7,
        max_tokens: 4096,
        api_key_env: Some(CRED_VAR.into()),
        cache_dir,
        transcript_path: None,
        max_retries: 3,
        backoff_ms: 5,
        max_in_flight: 2,
        timeout_secs: 10,
    }
}

fn set_credential() {
    static INIT: std::sync::Once = std::sync::Once::new();
    INIT.call_once(|| std::env::set_var(CRED_VAR, "test-credential"));
}

fn small_schema() -> std::sync::Arc<TableSchema> {
    TableSchema::new(
        vec![
            FeatureSpec::continuous("age").with_range(0.0, 120.0),
            FeatureSpec::continuous("heart_rate").with_range(0.0, 300.0),
            FeatureSpec::binary("death", "0", "1").with_role(FeatureRole::Label),
        ],
        "v1",
    )
    .unwrap()
    .into_arc()
}

fn seed_table(schema: &std::sync::Arc<TableSchema>, n: usize) -> DataTable {
    let mut b = TableBuilder::new(std::sync::Arc::clone(schema));
    for i in 0..n {
        b.push_values(&[
            Some(Value::Continuous(40.0 + (i % 40) as f64)),
            Some(Value::Continuous(60.0 + (i % 50) as f64)),
            Some(Value::Categorical(u32::from(i % 6 == 0))),
        ])
        .unwrap();
    }
    b.finish()
}

/// CSV block with `n` rows, every `malform_every`-th row out of range.
fn csv_block(n: usize, malform_every: usize, offset: usize) -> String {
    let mut out = String::from("```csv\nage,heart_rate,death\n");
    for i in 0..n {
        if malform_every > 0 && i % malform_every == 0 {
            out.push_str("999,80,0\n"); // age out of range
        } else {
            out.push_str(&format!("{},{},{}\n", 30 + ((i + offset) % 60), 60 + (i % 80), i % 2));
        }
    }
    out.push_str("```\n");
    out
}

#[test]
fn retries_transient_statuses_then_succeeds() {
    set_credential();
    let server = start_mock(vec![
        Scripted::status(429),
        Scripted::status(429),
        Scripted::ok("all good"),
    ]);
    let client = LlmClient::new(client_config(&server, None));
    let request = client.request("ping".into());
    let response = client.call(&request).unwrap();
    assert_eq!(response.text, "all good");
    assert_eq!(response.attempts, 3);
    assert_eq!(server.hits.load(Ordering::SeqCst), 3);
    assert!(!response.from_cache);
}

#[test]
fn retry_budget_exhausts_on_persistent_500() {
    set_credential();
    let server = start_mock(vec![Scripted::status(500)]);
    let client = LlmClient::new(client_config(&server, None));
    let request = client.request("ping".into());
    match client.call(&request) {
        Err(LlmError::RetryBudgetExhausted { attempts, .. }) => assert_eq!(attempts, 4),
        other => panic!("expected retry exhaustion, got {other:?}"),
    }
}

#[test]
fn non_transient_status_is_fatal_without_retry() {
    set_credential();
    let server = start_mock(vec![Scripted {
        status: 403,
        content: "forbidden".into(),
        raw: true,
    }]);
    let client = LlmClient::new(client_config(&server, None));
    let request = client.request("ping".into());
    match client.call(&request) {
        Err(LlmError::Http { status, .. }) => assert_eq!(status, 403),
        other => panic!("expected http error, got {other:?}"),
    }
    assert_eq!(server.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn transcripts_append_as_json_lines() {
    set_credential();
    let dir = tempfile::tempdir().unwrap();
    let server = start_mock(vec![Scripted::ok("first"), Scripted::ok("second")]);
    let mut config = client_config(&server, None);
    config.transcript_path = Some(dir.path().join("transcripts.jsonl"));
    let client = LlmClient::new(config);
    client.call(&client.request("one".into())).unwrap();
    client.call(&client.request("two".into())).unwrap();

    let text = std::fs::read_to_string(dir.path().join("transcripts.jsonl")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    for line in lines {
        let entry: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(entry["request"]["prompt"].is_string());
        assert!(entry["response"]["text"].is_string());
    }
}

#[test]
fn identical_request_served_from_cache_without_network() {
    set_credential();
    let dir = tempfile::tempdir().unwrap();
    let server = start_mock(vec![Scripted::ok("cached answer")]);
    let client = LlmClient::new(client_config(&server, Some(dir.path().to_path_buf())));
    let request = client.request("same prompt".into());
    let first = client.call(&request).unwrap();
    assert!(!first.from_cache);
    let second = client.call(&request).unwrap();
    assert!(second.from_cache);
    assert_eq!(second.text, first.text);
    assert_eq!(server.hits.load(Ordering::SeqCst), 1, "second call must not hit the network");
}

#[test]
fn generate_against_flaky_mock_reaches_quota_and_logs_rejections() {
    set_credential();
    let schema = small_schema();
    let seed = seed_table(&schema, 40);

    // attempt 0 answers with 100 rows, 10 of them malformed; the top-up
    // attempt returns clean rows
    let server = start_mock(vec![
        Scripted::ok(csv_block(100, 10, 0)),
        Scripted::ok(csv_block(30, 0, 7)),
    ]);
    let backend = RemoteBackend::new(client_config(&server, None));
    let request = GenerationRequest::new(
        std::sync::Arc::clone(&schema),
        100,
        GenerationStrategy::naive(),
        seed,
        5,
    )
    .unwrap();
    let out = generate::generate(&request, &backend).unwrap();
    assert_eq!(out.table.n_rows(), 100);
    assert!(out.log.rejected >= 10, "rejected {}", out.log.rejected);
    assert_eq!(out.log.rejections_by_feature.get("age"), Some(&out.log.rejected));
    assert!(out.log.attempts >= 2);
    assert!(!out.log.transcripts.is_empty());
}

#[test]
fn warm_cache_rerun_is_byte_identical_with_zero_network() {
    set_credential();
    let dir = tempfile::tempdir().unwrap();
    let schema = small_schema();
    let seed = seed_table(&schema, 40);
    let server = start_mock(vec![
        Scripted::ok(csv_block(100, 10, 0)),
        Scripted::ok(csv_block(30, 0, 7)),
    ]);

    let request = GenerationRequest::new(
        std::sync::Arc::clone(&schema),
        100,
        GenerationStrategy::naive(),
        seed,
        5,
    )
    .unwrap();

    let backend = RemoteBackend::new(client_config(&server, Some(dir.path().to_path_buf())));
    let cold = generate::generate(&request, &backend).unwrap();
    let hits_after_cold = server.hits.load(Ordering::SeqCst);
    assert!(hits_after_cold >= 2);

    // fresh backend instance, same cache directory
    let backend = RemoteBackend::new(client_config(&server, Some(dir.path().to_path_buf())));
    let warm = generate::generate(&request, &backend).unwrap();
    assert_eq!(
        server.hits.load(Ordering::SeqCst),
        hits_after_cold,
        "warm-cache rerun must make zero network calls"
    );
    assert_eq!(cold.table.to_csv_string(), warm.table.to_csv_string());
    assert_eq!(cold.log.rejected, warm.log.rejected);
}

#[test]
fn empty_model_output_exhausts_with_partial() {
    set_credential();
    let schema = small_schema();
    let seed = seed_table(&schema, 40);
    let server = start_mock(vec![Scripted::ok("I cannot help with that.")]);
    let backend = RemoteBackend::new(client_config(&server, None));
    let request =
        GenerationRequest::new(std::sync::Arc::clone(&schema), 10, GenerationStrategy::naive(), seed, 5)
            .unwrap();
    match generate::generate(&request, &backend) {
        Err(generate::GenerateError::Exhausted { produced, partial, .. }) => {
            assert_eq!(produced, 0);
            assert!(partial
                .log
                .transcripts
                .iter()
                .any(|t| t.contains("no CSV block found")));
        }
        other => panic!("expected exhaustion, got {other:?}"),
    }
}

#[test]
fn conditional_multi_turn_assembles_rows() {
    set_credential();
    let schema = small_schema();
    let seed = seed_table(&schema, 40);

    // block size 2: turn 1 produces (age, heart_rate), turn 2 produces (death)
    let turn1 = "age,heart_rate\n50,70\n60,80\n55,75\n";
    let turn2 = "death\n0\n1\n0\n";
    let server = start_mock(vec![Scripted::ok(turn1), Scripted::ok(turn2)]);
    let mut backend = RemoteBackend::new(client_config(&server, None));
    backend.block_size = 2;

    let request = GenerationRequest::new(
        std::sync::Arc::clone(&schema),
        3,
        GenerationStrategy::conditional(),
        seed,
        5,
    )
    .unwrap();
    let batch = backend.generate_batch(&request, 3, 0).unwrap();
    assert_eq!(batch.rows.len(), 3);
    assert_eq!(batch.rows[0], vec![Some("50".into()), Some("70".into()), Some("0".into())]);
    assert_eq!(batch.rows[1], vec![Some("60".into()), Some("80".into()), Some("1".into())]);
    assert_eq!(server.hits.load(Ordering::SeqCst), 2, "one call per feature block");
}

#[test]
fn group_backend_issues_one_call_per_group() {
    set_credential();
    let schema = TableSchema::new(
        vec![
            FeatureSpec::binary("gender", "F", "M").with_role(FeatureRole::Group),
            FeatureSpec::continuous("age").with_range(0.0, 120.0),
            FeatureSpec::binary("death", "0", "1").with_role(FeatureRole::Label),
        ],
        "v1",
    )
    .unwrap()
    .into_arc();
    let mut b = TableBuilder::new(std::sync::Arc::clone(&schema));
    for i in 0..40 {
        b.push_values(&[
            Some(Value::Categorical((i % 2) as u32)),
            Some(Value::Continuous(50.0 + i as f64)),
            Some(Value::Categorical(u32::from(i % 5 == 0))),
        ])
        .unwrap();
    }
    let seed = b.finish();

    let per_group = "gender,age,death\nF,44,0\nF,55,1\nM,61,0\nM,38,0\n";
    let server = start_mock(vec![Scripted::ok(per_group)]);
    let backend = RemoteBackend::new(client_config(&server, None));
    let request = GenerationRequest::new(
        std::sync::Arc::clone(&schema),
        8,
        GenerationStrategy::group_based("gender"),
        seed,
        5,
    )
    .unwrap();
    let batch = backend.generate_batch(&request, 8, 0).unwrap();
    assert_eq!(server.hits.load(Ordering::SeqCst), 2, "one call per observed group value");
    assert_eq!(batch.rows.len(), 8);
    let transcript = batch.transcript.unwrap();
    assert!(transcript.contains("[group F]") && transcript.contains("[group M]"));
}

#[test]
fn strategy_kinds_render_distinct_prompts_over_the_wire() {
    set_credential();
    let schema = small_schema();
    let seed = seed_table(&schema, 10);
    for kind in [StrategyKind::Naive, StrategyKind::SchemaConstrained] {
        let server = start_mock(vec![Scripted::ok(csv_block(5, 0, 0))]);
        let backend = RemoteBackend::new(client_config(&server, None));
        let strategy = match kind {
            StrategyKind::Naive => GenerationStrategy::naive(),
            _ => GenerationStrategy::schema_constrained(),
        };
        let request =
            GenerationRequest::new(std::sync::Arc::clone(&schema), 5, strategy, seed.clone(), 1)
                .unwrap();
        let out = generate::generate(&request, &backend).unwrap();
        assert_eq!(out.table.n_rows(), 5);
    }
}
