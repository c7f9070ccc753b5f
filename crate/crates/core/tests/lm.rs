mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use common::*;
use gift_core::align::{parse_call3_response, render_call3};
use gift_core::intent::PromptSet;
use gift_core::lm::{
    cosine, CacheLoad, CachedBackend, ChatBackend, ChatRequest, Embedder, HttpBackend, HttpConfig,
    LmError, OracleBackend, OracleScript, ReplayBackend, ReplayRecord, RetryPolicy, MAX_ATTEMPTS,
    MAX_TOTAL_BACKOFF,
};
use gift_core::world::Target;

#[derive(Debug, Clone)]
struct Seen {
    path: String,
    authorization: Option<String>,
    body: serde_json::Value,
}

/// Serves one scripted `(status, body)` per connection, then repeats the
/// last entry.
fn fake_server(script: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    std::thread::spawn(move || {
        for (i, stream) in listener.incoming().enumerate() {
            let Ok(mut stream) = stream else { break };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let path = request_line.split_whitespace().nth(1).unwrap_or("").to_owned();
            let mut len = 0;
            let mut authorization = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (k, v) = line.split_once(':').unwrap();
                match k.to_ascii_lowercase().as_str() {
                    "content-length" => len = v.trim().parse().unwrap(),
                    "authorization" => authorization = Some(v.trim().to_owned()),
                    _ => {}
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            log.lock().unwrap().push(Seen {
                path,
                authorization,
                body: serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null),
            });
            let (status, text) = &script[i.min(script.len() - 1)];
            let response = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                text.len()
            );
            let _ = stream.write_all(response.as_bytes());
        }
    });
    (format!("http://{addr}"), seen)
}

fn backend(base_url: String) -> HttpBackend {
    HttpBackend::new(HttpConfig {
        base_url,
        model: "test-model".into(),
        embedding_model: Some("test-embed".into()),
        api_key: Some("sk-test".into()),
        timeout_secs: 5,
    })
    .unwrap()
    .with_retry(RetryPolicy {
        max_attempts: MAX_ATTEMPTS,
        base_delay: Duration::from_millis(1),
    })
}

fn chat_ok(text: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

#[test]
fn http_chat_posts_an_openai_payload() {
    let (url, seen) = fake_server(vec![(200, chat_ok("hello"))]);
    let req = ChatRequest::new("sys", "usr").with_temperature(0.3).with_seed(9);
    assert_eq!(backend(url).complete(&req).unwrap(), "hello");
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 1);
    assert_eq!(seen[0].path, "/v1/chat/completions");
    assert_eq!(seen[0].authorization.as_deref(), Some("Bearer sk-test"));
    let b = &seen[0].body;
    assert_eq!(b["model"], "test-model");
    assert_eq!(b["messages"][0]["role"], "system");
    assert_eq!(b["messages"][0]["content"], "sys");
    assert_eq!(b["messages"][1]["content"], "usr");
    assert_eq!(b["temperature"], 0.3);
    assert_eq!(b["seed"], 9);
}

#[test]
fn http_retries_transient_failures() {
    let (url, seen) = fake_server(vec![
        (500, "oops".into()),
        (429, "slow down".into()),
        (200, chat_ok("third time")),
    ]);
    let req = ChatRequest::new("s", "u");
    assert_eq!(backend(url).complete(&req).unwrap(), "third time");
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn http_gives_up_after_the_attempt_cap() {
    let (url, seen) = fake_server(vec![(503, "down".into())]);
    let b = backend(url).with_retry(RetryPolicy {
        max_attempts: 50,
        base_delay: Duration::from_millis(1),
    });
    let err = b.complete(&ChatRequest::new("s", "u")).unwrap_err();
    assert!(matches!(err, LmError::Http { status: 503, .. }), "{err}");
    assert_eq!(seen.lock().unwrap().len(), MAX_ATTEMPTS as usize);
}

#[test]
fn http_client_errors_are_not_retried() {
    let (url, seen) = fake_server(vec![(400, "bad request".into())]);
    let err = backend(url).complete(&ChatRequest::new("s", "u")).unwrap_err();
    assert!(matches!(err, LmError::Http { status: 400, .. }));
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn http_malformed_payload_and_transport_errors() {
    let (url, _) = fake_server(vec![(200, "{\"choices\": []}".into())]);
    let err = backend(url).complete(&ChatRequest::new("s", "u")).unwrap_err();
    assert!(matches!(err, LmError::Payload(_)));

    // Bind then drop to get a port nobody listens on.
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = backend(format!("http://127.0.0.1:{port}"))
        .complete(&ChatRequest::new("s", "u"))
        .unwrap_err();
    assert!(matches!(err, LmError::Transport(_)), "{err}");
}

#[test]
fn http_embeddings_are_ordered_and_unit_norm() {
    let body = serde_json::json!({"data": [
        {"index": 1, "embedding": [0.0, 2.0]},
        {"index": 0, "embedding": [3.0, 4.0]},
    ]})
    .to_string();
    let (url, seen) = fake_server(vec![(200, body)]);
    let v = backend(url).embed(&strings(&["a", "b"])).unwrap();
    assert_eq!(v, vec![vec![0.6, 0.8], vec![0.0, 1.0]]);
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].path, "/v1/embeddings");
    assert_eq!(seen[0].body["model"], "test-embed");
    assert_eq!(seen[0].body["input"], serde_json::json!(["a", "b"]));
}

#[test]
fn backoff_is_bounded() {
    assert!(RetryPolicy::default().total_backoff() <= MAX_TOTAL_BACKOFF);
    let greedy = RetryPolicy {
        max_attempts: 100,
        ..RetryPolicy::default()
    };
    assert!(greedy.total_backoff() <= MAX_TOTAL_BACKOFF);
    assert_eq!(MAX_ATTEMPTS, 5);
}

struct Counting(AtomicUsize);

impl ChatBackend for Counting {
    fn complete(&self, req: &ChatRequest) -> Result<String, LmError> {
        let n = self.0.fetch_add(1, Ordering::SeqCst);
        Ok(format!("{} #{n}", req.user))
    }
}

#[test]
fn cache_dedupes_persists_and_keys_on_sampling() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.json");
    let c = CachedBackend::new(Counting(AtomicUsize::new(0)));
    assert_eq!(c.load(&path).unwrap(), CacheLoad::Missing);
    let req = ChatRequest::new("s", "u");
    let first = c.complete(&req).unwrap();
    assert_eq!(c.complete(&req).unwrap(), first);
    assert_eq!(c.upstream_calls(), 1);

    let warmer = req.clone().with_temperature(0.7);
    assert_ne!(req.cache_key(), warmer.cache_key());
    assert_ne!(c.complete(&warmer).unwrap(), first);
    assert_eq!(c.upstream_calls(), 2);
    c.save(&path).unwrap();

    let reloaded = CachedBackend::new(Counting(AtomicUsize::new(100)));
    assert_eq!(reloaded.load(&path).unwrap(), CacheLoad::Loaded(2));
    assert_eq!(reloaded.complete(&req).unwrap(), first);
    assert_eq!(reloaded.upstream_calls(), 0);

    let mut text = std::fs::read_to_string(&path).unwrap();
    text = text.replacen("#0", "#9", 1);
    std::fs::write(&path, text).unwrap();
    let bypass = CachedBackend::new(Counting(AtomicUsize::new(0)));
    assert_eq!(bypass.load(&path).unwrap(), CacheLoad::Corrupt);
    assert!(bypass.is_empty());
}

#[test]
fn replay_serves_recorded_bytes_and_misses_loudly() {
    let dir = tempfile::tempdir().unwrap();
    let record = dir.path().join("rec.jsonl");
    let live = CachedBackend::new(Counting(AtomicUsize::new(0))).recording_to(&record);
    let reqs: Vec<ChatRequest> = (0..3)
        .map(|i| ChatRequest::new("sys", format!("user {i}\nwith \"quotes\" and ünïcode")).with_seed(i))
        .collect();
    let originals: Vec<String> = reqs.iter().map(|r| live.complete(r).unwrap()).collect();
    let replay = ReplayBackend::load(&record).unwrap();
    assert_eq!(replay.len(), 3);
    for (r, o) in reqs.iter().zip(&originals) {
        assert_eq!(&replay.complete(r).unwrap(), o);
    }
    let miss = replay.complete(&ChatRequest::new("sys", "never sent"));
    assert!(matches!(miss, Err(LmError::ReplayMiss(_))));

    let rec = ReplayRecord::new(&reqs[0], "x");
    let from_records = ReplayBackend::from_records([rec]);
    assert_eq!(from_records.complete(&reqs[0]).unwrap(), "x");
}

fn call3(task_name: &str, noise: f64, seed: u64, req_seed: u64) -> BTreeMap<String, Target> {
    let t = task(task_name);
    let lm = OracleBackend::new(OracleScript::for_task(&t, noise, seed).unwrap()).unwrap();
    let seen = t.train_labels();
    let unseen = t.test_labels();
    // Alignment without an intent uses the blind branch; the oracle answers
    // with the ground truth there too, except for scripted overrides.
    let (system, user) = render_call3(PromptSet::builtin(), &seen, &unseen, None).unwrap();
    let req = ChatRequest::new(system, user).with_seed(req_seed);
    let text = lm.complete(&req).unwrap();
    let seen_set: BTreeSet<String> = seen.into_iter().collect();
    parse_call3_response(&text, &seen_set, &unseen).unwrap()
}

#[test]
fn noiseless_oracle_returns_the_relevance_labels() {
    for name in TASKS {
        let t = task(name);
        let fixture = t.oracle.clone().unwrap();
        let mut expected = t.relevance_labels.clone();
        for (k, v) in fixture.blind_overrides {
            expected.insert(k, v);
        }
        assert_eq!(call3(name, 0.0, 0, 0), expected, "{name}");
    }
}

#[test]
fn fully_noisy_oracle_never_returns_the_truth() {
    let t = task("pack_backpack");
    let truth = call3("pack_backpack", 0.0, 0, 0);
    assert!(t.relevance_labels.values().any(|v| !v.is_distractor()));
    for seed in 0..200 {
        let got = call3("pack_backpack", 1.0, seed, seed);
        assert_ne!(got, truth);
        assert!(got.iter().all(|(k, v)| *v != truth[k]));
    }
}

#[test]
fn oracle_rejects_bad_noise_and_unknown_prompts() {
    let t = task("pack_backpack");
    assert!(matches!(
        OracleScript::for_task(&t, 1.5, 0),
        Err(LmError::Config(_))
    ));
    let lm = OracleBackend::new(OracleScript::for_task(&t, 0.0, 0).unwrap()).unwrap();
    assert!(matches!(
        lm.complete(&ChatRequest::new("who are you", "hi")),
        Err(LmError::Payload(_))
    ));
}

#[test]
fn fixture_embeddings_behave_like_unit_vectors() {
    let e = text_embedder();
    let t = task("pack_backpack");
    let texts = vec![
        t.ground_truth_intent.clone(),
        t.ground_truth_intent.clone(),
        t.generic_baseline_intent.clone(),
    ];
    let v = e.embed(&texts).unwrap();
    assert_eq!(v[0], v[1]);
    assert!((cosine(&v[0], &v[0]) - 1.0).abs() <= 1e-6);
    for x in &v {
        assert_eq!(x.len(), e.dim());
        assert!((x.iter().map(|a| a * a).sum::<f64>().sqrt() - 1.0).abs() <= 1e-12);
    }
    let art = e.embed(&strings(&["pack art supplies"])).unwrap().remove(0);
    assert!(cosine(&art, &v[0]) > cosine(&v[2], &v[0]));
    assert!(matches!(
        e.embed(&strings(&["not in the fixture"])),
        Err(LmError::MissingFixture(_))
    ));
}
