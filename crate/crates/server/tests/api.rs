use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use citeqa_core::backends::{BackendError, Backends, Generation, GenerationParams, Generator};
use citeqa_core::corpus::{ingest_files, Corpus};
use citeqa_core::engine::{build_index, AskResponse, BuildOptions, Engine};
use citeqa_core::feedback::{FeedbackStore, FEEDBACK_FILE};
use citeqa_server::{router, AppState};
use serde_json::{json, Value};

const QUESTION: &str = "Does aspirin reduce fever in children?";

fn fixture_corpus() -> Corpus {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/corpus_20.jsonl");
    Corpus::new(ingest_files(&[path]).unwrap().0).unwrap()
}

fn golden_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/ask_aspirin.json")
}

struct Server {
    base: String,
    _dir: tempfile::TempDir,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    handle: tokio::task::JoinHandle<()>,
}

impl Server {
    async fn stop(mut self) {
        self.shutdown.take().unwrap().send(()).unwrap();
        self.handle.await.unwrap();
    }
}

async fn start_with(backends: Backends) -> Server {
    let dir = tempfile::tempdir().unwrap();
    let index = dir.path().join("index");
    let corpus = fixture_corpus();
    build_index(&corpus, &backends, &BuildOptions::default(), &index).unwrap();
    let engine = Engine::open(&index, corpus, backends).unwrap();
    let feedback = FeedbackStore::open(dir.path().join(FEEDBACK_FILE)).unwrap();
    let state = AppState {
        engine: Arc::new(engine),
        feedback: Arc::new(feedback),
    };
    let app = router(state, &["http://ui.example".to_string()]);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let handle = tokio::spawn(async move {
        citeqa_server::serve(listener, app, async {
            let _ = rx.await;
        })
        .await
        .unwrap();
    });
    Server {
        base,
        _dir: dir,
        shutdown: Some(tx),
        handle,
    }
}

async fn start() -> Server {
    start_with(Backends::reference(64)).await
}

async fn ask_bytes(base: &str, body: Value) -> (u16, Vec<u8>) {
    let resp = reqwest::Client::new()
        .post(format!("{base}/ask"))
        .json(&body)
        .send()
        .await
        .unwrap();
    (resp.status().as_u16(), resp.bytes().await.unwrap().to_vec())
}

#[tokio::test(flavor = "multi_thread")]
async fn ask_is_byte_identical_across_runs_and_rebuilds() {
    let mut bodies = Vec::new();
    for _ in 0..2 {
        let server = start().await;
        for _ in 0..3 {
            let (status, body) = ask_bytes(&server.base, json!({ "question": QUESTION })).await;
            assert_eq!(status, 200, "{}", String::from_utf8_lossy(&body));
            bodies.push(body);
        }
        server.stop().await;
    }
    assert!(bodies.windows(2).all(|w| w[0] == w[1]));

    let path = golden_path();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, &bodies[0]).unwrap();
    }
    let golden = std::fs::read(&path).expect("golden file; regenerate with UPDATE_GOLDEN=1");
    assert_eq!(String::from_utf8_lossy(&bodies[0]), String::from_utf8_lossy(&golden));

    let resp: AskResponse = serde_json::from_slice(&bodies[0]).unwrap();
    assert_eq!(resp.bundle[0].doc_id, "PMID:1001");
    let ids: Vec<usize> = resp.claims.iter().map(|c| c.claim_id).collect();
    assert_eq!(ids, (0..resp.claims.len()).collect::<Vec<_>>());
    assert!(resp.claims.iter().all(|c| c.per_ref.len() == c.refs.len()));
}

/// Validates `instance` against `$defs/<name>` of the API schema with the
/// Python `jsonschema` package.
fn assert_schema(name: &str, instance: &Value) {
    let schema = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/api-schema.json");
    let script = r##"
import json, sys, jsonschema
schema = json.load(open(sys.argv[1]))
wrapped = {"$ref": "#/$defs/" + sys.argv[2], "$defs": schema["$defs"]}
errors = [e.message for e in jsonschema.Draft202012Validator(wrapped).iter_errors(json.load(sys.stdin))]
print("\n".join(errors))
sys.exit(1 if errors else 0)
"##;
    let mut child = std::process::Command::new("python3")
        .arg("-c")
        .arg(script)
        .arg(&schema)
        .arg(name)
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .spawn()
        .expect("python3 with jsonschema is required for schema checks");
    {
        use std::io::Write;
        child.stdin.take().unwrap().write_all(instance.to_string().as_bytes()).unwrap();
    }
    let out = child.wait_with_output().unwrap();
    assert!(
        out.status.success(),
        "{name} does not match schema: {}\n{instance}",
        String::from_utf8_lossy(&out.stdout)
    );
}

#[tokio::test(flavor = "multi_thread")]
async fn responses_validate_against_schema() {
    let server = start().await;
    let client = reqwest::Client::new();
    let (_, body) = ask_bytes(&server.base, json!({ "question": QUESTION, "include_timings": true })).await;
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_schema("AskResponse", &v);
    assert!(v["timings"]["retrieval_ms"].is_number());

    let v: Value = client
        .get(format!("{}/search?q=statins%20cholesterol&k=3", server.base))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_schema("SearchResponse", &v);

    let v: Value = client.get(format!("{}/health", server.base)).send().await.unwrap().json().await.unwrap();
    assert_schema("HealthResponse", &v);

    let (_, body) = ask_bytes(&server.base, json!({ "question": "?!" })).await;
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_schema("ErrorResponse", &v);

    let mut bad = json!({ "question": QUESTION, "answer": "", "truncated": false, "bundle": [], "retrieval": [], "claims": [], "dangling": [] });
    bad["extra"] = json!(1);
    let ok = std::panic::catch_unwind(|| assert_schema("AskResponse", &bad)).is_ok();
    assert!(!ok, "schema must reject an empty bundle and unknown fields");
    server.stop().await;
}

#[derive(Default)]
struct CountingGenerator {
    calls: AtomicUsize,
    fail: bool,
}

impl Generator for CountingGenerator {
    fn generate(&self, _prompt: &str, _p: &GenerationParams) -> Result<Generation, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if self.fail {
            return Err(BackendError::Status {
                endpoint: "mock/generate".into(),
                status: 503,
                body: "overloaded".into(),
            });
        }
        Ok(Generation {
            text: "Aspirin reduces fever in children [1].".into(),
            truncated: false,
        })
    }

    fn describe(&self) -> String {
        "counting".into()
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn zero_hits_return_an_error_without_generating() {
    let gen = Arc::new(CountingGenerator::default());
    let mut backends = Backends::reference(64);
    backends.generator = gen.clone();
    let server = start_with(backends).await;
    let (status, body) = ask_bytes(&server.base, json!({ "question": "??? ..." })).await;
    assert_eq!(status, 422);
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["error"]["code"], "no_results");
    assert_eq!(gen.calls.load(Ordering::SeqCst), 0);

    let (status, _) = ask_bytes(&server.base, json!({ "question": QUESTION })).await;
    assert_eq!(status, 200);
    assert_eq!(gen.calls.load(Ordering::SeqCst), 1);
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn backend_failure_names_the_stage() {
    let mut backends = Backends::reference(64);
    backends.generator = Arc::new(CountingGenerator {
        fail: true,
        ..Default::default()
    });
    let server = start_with(backends).await;
    let (status, body) = ask_bytes(&server.base, json!({ "question": QUESTION })).await;
    assert_eq!(status, 502);
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["error"]["stage"], "generation");
    assert!(v["error"]["message"].as_str().unwrap().contains("overloaded"));
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn k_one_and_validation() {
    let server = start().await;
    let (status, body) = ask_bytes(&server.base, json!({ "question": QUESTION, "k": 1 })).await;
    assert_eq!(status, 200);
    let resp: AskResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(resp.bundle.len(), 1);
    for c in &resp.claims {
        assert!(c.refs.is_empty() || c.refs == [resp.bundle[0].doc_id.clone()]);
    }
    for bad in [json!({ "question": QUESTION, "k": 0 }), json!({ "question": QUESTION, "k": 11 }), json!({ "question": "  " }), json!({ "q": 1 })] {
        let (status, _) = ask_bytes(&server.base, bad.clone()).await;
        assert_eq!(status, 400, "{bad}");
    }
    let status = reqwest::get(format!("{}/search?k=3", server.base)).await.unwrap().status();
    assert_eq!(status, 400);
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn feedback_is_recorded_and_layered_without_changing_verdicts() {
    let server = start().await;
    let client = reqwest::Client::new();
    let (_, body) = ask_bytes(&server.base, json!({ "question": QUESTION })).await;
    let before: AskResponse = serde_json::from_slice(&body).unwrap();
    let claim = before.claims.iter().find(|c| !c.refs.is_empty()).unwrap();
    let original = claim.per_ref[0].label.value;

    let event = json!({
        "question": before.question,
        "claim_id": claim.claim_id,
        "claim_text": claim.text,
        "doc_id": claim.refs[0],
        "kind": "LABEL_OVERRIDE",
        "old_value": original.as_str(),
        "new_value": "CONTRADICT",
        "bundle_ref": before.bundle.iter().map(|b| (b.local_index.to_string(), json!(b.doc_id))).collect::<serde_json::Map<_, _>>(),
    });
    let resp = client.post(format!("{}/feedback", server.base)).json(&event).send().await.unwrap();
    assert_eq!(resp.status().as_u16(), 201);
    let ack: Value = resp.json().await.unwrap();
    assert_eq!(ack["event_id"], 1);

    let mut bad = event.clone();
    bad["new_value"] = json!("Supports");
    let resp = client.post(format!("{}/feedback", server.base)).json(&bad).send().await.unwrap();
    assert_eq!(resp.status().as_u16(), 400);
    let err: Value = resp.json().await.unwrap();
    assert!(err["error"]["message"].as_str().unwrap().contains("SUPPORT, CONTRADICT, NO_EVIDENCE"));

    let (_, body) = ask_bytes(&server.base, json!({ "question": QUESTION })).await;
    let after: AskResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(after.claims, before.claims);
    assert_eq!(after.overrides.len(), 1);
    assert_eq!(after.overrides[0].label.as_str(), "CONTRADICT");
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn health_search_and_cors() {
    let server = start().await;
    let client = reqwest::Client::new();
    let resp = client.get(format!("{}/health", server.base)).send().await.unwrap();
    assert_eq!(resp.status().as_u16(), 200);
    let v: Value = resp.json().await.unwrap();
    assert_eq!(v["status"], "ok");
    assert_eq!(v["index"]["documents"], 20);
    assert_eq!(v["index"]["memory_mapped"], true);

    let v: Value = client
        .get(format!("{}/search?q=malaria%20bed%20nets&k=2", server.base))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(v["results"].as_array().unwrap().len(), 2);
    assert_eq!(v["results"][0]["doc_id"], "PMID:1015");

    let resp = client
        .request(reqwest::Method::OPTIONS, format!("{}/ask", server.base))
        .header("origin", "http://ui.example")
        .header("access-control-request-method", "POST")
        .send()
        .await
        .unwrap();
    assert_eq!(
        resp.headers().get("access-control-allow-origin").unwrap(),
        "http://ui.example"
    );
    let resp = client
        .get(format!("{}/health", server.base))
        .header("origin", "http://elsewhere.example")
        .send()
        .await
        .unwrap();
    assert!(resp.headers().get("access-control-allow-origin").is_none());
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn concurrent_asks_agree() {
    let server = start().await;
    let base = server.base.clone();
    let tasks: Vec<_> = (0..16)
        .map(|i| {
            let base = base.clone();
            tokio::spawn(async move {
                let q = if i % 2 == 0 { QUESTION } else { "Do statins lower LDL cholesterol?" };
                ask_bytes(&base, json!({ "question": q })).await
            })
        })
        .collect();
    let mut even = Vec::new();
    let mut odd = Vec::new();
    for (i, t) in tasks.into_iter().enumerate() {
        let (status, body) = t.await.unwrap();
        assert_eq!(status, 200);
        if i % 2 == 0 { even.push(body) } else { odd.push(body) }
    }
    assert!(even.windows(2).all(|w| w[0] == w[1]));
    assert!(odd.windows(2).all(|w| w[0] == w[1]));
    server.stop().await;
}
