use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use aitwin_core::api::{counter_ids, router, AppContext, MOCK_FALLBACK_TRANSCRIPT};
use aitwin_core::provider::mock::{self, Flaky, MockVoiceLab, ScriptedLlm};
use aitwin_core::provider::{Gateway, GatewayError, GenerationRequest, ProviderErrorKind, RetryPolicy, TextGenerator};
use aitwin_core::script::Script;
use aitwin_core::store::{replay, BlobStore, EventStore};
use aitwin_core::{Pipeline, PipelineConfig, ScenarioRegistry};
use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const ADMIN: &str = "let-me-in";

/// Lets a test hold a generation call open until released.
#[derive(Default)]
struct Gate {
    closed: Mutex<bool>,
    cv: Condvar,
    entered: AtomicBool,
}

impl Gate {
    fn close(&self) {
        *self.closed.lock().unwrap() = true;
        self.entered.store(false, Ordering::SeqCst);
    }

    fn open(&self) {
        *self.closed.lock().unwrap() = false;
        self.cv.notify_all();
    }
}

struct GatedLlm {
    inner: Arc<Flaky<ScriptedLlm>>,
    gate: Arc<Gate>,
}

impl TextGenerator for GatedLlm {
    fn generate(&self, request: &GenerationRequest) -> Result<String, GatewayError> {
        self.gate.entered.store(true, Ordering::SeqCst);
        let mut closed = self.gate.closed.lock().unwrap();
        while *closed {
            closed = self.gate.cv.wait(closed).unwrap();
        }
        drop(closed);
        self.inner.generate(request)
    }
}

struct Harness {
    app: Router,
    ctx: Arc<AppContext>,
    gate: Arc<Gate>,
    flaky: Arc<Flaky<ScriptedLlm>>,
    script: Script,
}

fn harness() -> Harness {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/task1.yaml")).unwrap();
    let script = Script::from_yaml(&text).unwrap();
    let gate = Arc::new(Gate::default());
    let flaky = Arc::new(Flaky::new(script.scripted_llm()));
    let lab = Arc::new(MockVoiceLab::default());
    let gateway = Gateway::new(
        Arc::new(script.scripted_asr().with_fallback(MOCK_FALLBACK_TRANSCRIPT)),
        Arc::new(GatedLlm {
            inner: flaky.clone(),
            gate: gate.clone(),
        }),
        lab.clone(),
        lab,
    )
    .with_retry_policy(RetryPolicy::immediate(3));
    let pipeline = Pipeline::new(gateway, PipelineConfig::default(), ScenarioRegistry::builtin());
    let ctx = Arc::new(
        AppContext::new(pipeline, EventStore::in_memory(), BlobStore::in_memory())
            .with_ids(counter_ids())
            .with_admin_token(ADMIN),
    );
    Harness {
        app: router(ctx.clone()),
        ctx,
        gate,
        flaky,
        script,
    }
}

struct Reply {
    status: StatusCode,
    content_type: Option<String>,
    bytes: Vec<u8>,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.bytes).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.bytes)))
    }
}

async fn send(app: &Router, req: Request<Body>) -> Reply {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let content_type = resp
        .headers()
        .get(header::CONTENT_TYPE)
        .map(|v| v.to_str().unwrap().to_string());
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply {
        status,
        content_type,
        bytes,
    }
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn post_json(uri: &str, body: Value) -> Request<Body> {
    Request::post(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

fn post_bytes(uri: &str, bytes: Vec<u8>) -> Request<Body> {
    Request::post(uri)
        .header(header::CONTENT_TYPE, "audio/wav")
        .body(Body::from(bytes))
        .unwrap()
}

/// Creates a participant with a registered voice and opens a session.
async fn open_session(h: &Harness, mode: &str) -> String {
    let r = send(
        &h.app,
        post_json("/participants", json!({ "id": "P01", "cefr_level": "B1" })),
    )
    .await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&r.bytes));
    let r = send(
        &h.app,
        post_bytes("/participants/P01/voice", mock::voice_sample(30.0, 0).into_bytes()),
    )
    .await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&r.bytes));
    let r = send(
        &h.app,
        post_json(
            "/sessions",
            json!({ "participant_id": "P01", "mode": mode, "scenario_id": "task-1" }),
        ),
    )
    .await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&r.bytes));
    let v = r.json();
    assert_eq!(v["phase"], "conversing");
    v["id"].as_str().unwrap().to_string()
}

fn utterance_audio(text: &str) -> Vec<u8> {
    if text == "(silence)" {
        mock::silence(1.0).into_bytes()
    } else {
        mock::learner_audio(text).into_bytes()
    }
}

#[tokio::test]
async fn task1_ai_twin_walkthrough_reaches_done() {
    let h = harness();
    assert_eq!(send(&h.app, get("/healthz")).await.status, StatusCode::OK);
    let id = open_session(&h, "ai-twin").await;

    let mut silent = 0;
    let mut last = Value::Null;
    for text in &h.script.turns {
        let r = send(
            &h.app,
            post_bytes(&format!("/sessions/{id}/turns"), utterance_audio(text)),
        )
        .await;
        if r.status == StatusCode::UNPROCESSABLE_ENTITY {
            assert_eq!(r.json()["error"], "empty_transcript");
            silent += 1;
            continue;
        }
        assert_eq!(r.status, StatusCode::OK, "{}", String::from_utf8_lossy(&r.bytes));
        last = r.json();
        let turn = &last["turn"];
        assert_eq!(turn["transcript"], text.as_str());
        assert_eq!(turn["delivered_text"], h.script.rephrasings[text].as_str());
        assert!(turn.get("feedback_html").is_none());
        if last["phase"] == "survey" {
            break;
        }
    }
    assert_eq!(silent, 1);
    assert_eq!(last["phase"], "survey");
    assert_eq!(last["complete"], true);
    assert!(last["learner_turns"].as_u64().unwrap() <= 12);
    let goals = last["goals"].as_array().unwrap();
    assert_eq!(goals.len(), 4);
    assert!(goals.iter().all(|g| g["completed"] == true));

    // Both channels replay the stored audio.
    let n = last["turn"]["index"].as_u64().unwrap();
    for channel in ["delivered", "interlocutor"] {
        let r = send(
            &h.app,
            get(&format!("/sessions/{id}/turns/{n}/audio?channel={channel}")),
        )
        .await;
        assert_eq!(r.status, StatusCode::OK);
        assert_eq!(r.content_type.as_deref(), Some("audio/wav"));
        assert!(r.bytes.starts_with(b"RIFF"));
    }
    let url = last["turn"]["delivered_audio_url"].as_str().unwrap();
    assert_eq!(send(&h.app, get(url)).await.status, StatusCode::OK);

    // Further turns are refused once the conversation is over.
    let r = send(
        &h.app,
        post_bytes(&format!("/sessions/{id}/turns"), utterance_audio("Hello?")),
    )
    .await;
    assert_eq!(r.status, StatusCode::CONFLICT);

    let items = send(&h.app, get(&format!("/survey/items?session_id={id}")))
        .await
        .json();
    assert_eq!(items["items"].as_array().unwrap().len(), 25);
    assert_eq!(items["scale"], json!({ "min": 1, "max": 6 }));

    let r = send(
        &h.app,
        post_json(&format!("/sessions/{id}/survey"), json!({ "answers": h.script.survey })),
    )
    .await;
    assert_eq!(r.status, StatusCode::OK, "{}", String::from_utf8_lossy(&r.bytes));
    assert_eq!(r.json()["phase"], "done");

    let session = send(&h.app, get(&format!("/sessions/{id}"))).await.json();
    assert_eq!(session["phase"], "done");
    assert_eq!(
        session["goals"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|g| g["completed"] == true)
            .count(),
        4
    );

    let csv = send(&h.app, get("/export/study.csv")).await;
    assert_eq!(csv.status, StatusCode::OK);
    let text = String::from_utf8(csv.bytes).unwrap();
    assert!(text.starts_with("participant,condition,dim_or_item,value\n"));
    assert_eq!(text.lines().count(), 1 + 28);

    // The log alone rebuilds the state the server holds.
    let store = h.ctx.store.lock().unwrap();
    let (_, state) = replay(&store.to_jsonl()).unwrap();
    assert_eq!(&state, store.state());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_turn_is_rejected_while_one_is_in_flight() {
    let h = harness();
    let id = open_session(&h, "ai-proxy").await;
    let uri = format!("/sessions/{id}/turns");
    let audio = utterance_audio(&h.script.turns[0]);

    h.gate.close();
    let first = tokio::spawn({
        let app = h.app.clone();
        let req = post_bytes(&uri, audio.clone());
        async move { send(&app, req).await }
    });
    while !h.gate.entered.load(Ordering::SeqCst) {
        tokio::time::sleep(Duration::from_millis(5)).await;
    }

    let second = send(&h.app, post_bytes(&uri, audio.clone())).await;
    assert_eq!(second.status, StatusCode::CONFLICT);
    assert_eq!(second.json()["error"], "turn_in_flight");
    let abandon = send(&h.app, post_json(&format!("/sessions/{id}/abandon"), json!({}))).await;
    assert_eq!(abandon.status, StatusCode::CONFLICT);

    h.gate.open();
    let first = first.await.unwrap();
    assert_eq!(
        first.status,
        StatusCode::OK,
        "{}",
        String::from_utf8_lossy(&first.bytes)
    );
    assert_eq!(first.json()["learner_turns"], 1);

    // The slot is released afterwards.
    let again = send(&h.app, post_bytes(&uri, utterance_audio(&h.script.turns[1]))).await;
    assert_eq!(again.status, StatusCode::OK);
    assert_eq!(again.json()["learner_turns"], 2);
}

#[tokio::test]
async fn survey_is_validated_and_phase_gated() {
    let h = harness();
    let id = open_session(&h, "explicit-feedback").await;
    let uri = format!("/sessions/{id}/survey");

    let full = json!({ "answers": vec![4; 25] });
    let r = send(&h.app, post_json(&uri, full.clone())).await;
    assert_eq!(r.status, StatusCode::CONFLICT);

    let r = send(&h.app, post_json(&format!("/sessions/{id}/abandon"), json!({}))).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["phase"], "survey");

    for bad in [
        json!({ "answers": vec![4; 24] }),
        json!({ "answers": vec![7; 25] }),
        json!({ "answers": vec![0; 25] }),
        json!({ "answers": { "1": 4, "2": 4 } }),
    ] {
        let r = send(&h.app, post_json(&uri, bad.clone())).await;
        assert_eq!(r.status, StatusCode::BAD_REQUEST, "{bad}");
        assert_eq!(r.json()["error"], "invalid_survey");
    }
    let r = send(&h.app, Request::post(&uri).body(Body::from("{not json")).unwrap()).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert_eq!(r.json()["error"], "invalid_body");

    let map: serde_json::Map<String, Value> = (1..=25).map(|i| (i.to_string(), json!(4))).collect();
    let r = send(&h.app, post_json(&uri, json!({ "answers": map }))).await;
    assert_eq!(r.status, StatusCode::OK);
    // Reverse-keyed items turn a 4 into a 3.
    assert_eq!(
        r.json()["scores"],
        json!({ "emotional": 47.0 / 13.0, "cognitive": 4.0, "behavioral": 18.0 / 5.0 })
    );

    let r = send(&h.app, post_json(&uri, full)).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn explicit_feedback_turn_is_sanitized_and_not_revoiced() {
    let h = harness();
    let id = open_session(&h, "explicit-feedback").await;
    let r = send(
        &h.app,
        post_bytes(&format!("/sessions/{id}/turns"), utterance_audio(&h.script.turns[0])),
    )
    .await;
    assert_eq!(r.status, StatusCode::OK);
    let turn = &r.json()["turn"];
    assert!(turn.get("delivered_text").is_none());
    assert!(turn["delivered_audio_url"].is_null());
    let html = turn["feedback_html"].as_str().unwrap();
    assert!(!html.contains("<script"));
    let n = turn["index"].as_u64().unwrap();
    let r = send(
        &h.app,
        get(&format!("/sessions/{id}/turns/{n}/audio?channel=delivered")),
    )
    .await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn error_shapes() {
    let h = harness();
    assert_eq!(send(&h.app, get("/sessions/nope")).await.status, StatusCode::NOT_FOUND);
    assert_eq!(
        send(&h.app, get("/participants/nope")).await.status,
        StatusCode::NOT_FOUND
    );

    // A session needs a registered voice first.
    send(&h.app, post_json("/participants", json!({ "id": "P09" }))).await;
    let r = send(
        &h.app,
        post_json(
            "/sessions",
            json!({ "participant_id": "P09", "mode": "ai-twin", "scenario_id": "task-1" }),
        ),
    )
    .await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    let r = send(&h.app, post_json("/participants", json!({ "id": "P09" }))).await;
    assert_eq!(r.status, StatusCode::CONFLICT);

    let r = send(
        &h.app,
        post_bytes("/participants/P09/voice", mock::voice_sample(3.0, 0).into_bytes()),
    )
    .await;
    assert_eq!(
        r.status,
        StatusCode::BAD_REQUEST,
        "{}",
        String::from_utf8_lossy(&r.bytes)
    );
    let r = send(
        &h.app,
        post_bytes("/participants/P09/voice", b"not audio at all".to_vec()),
    )
    .await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);

    let id = open_session(&h, "ai-twin").await;
    let r = send(
        &h.app,
        post_json(
            "/sessions",
            json!({ "participant_id": "P01", "mode": "ai-twin", "scenario_id": "task-99" }),
        ),
    )
    .await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);

    let uri = format!("/sessions/{id}/turns");
    let r = send(&h.app, post_bytes(&uri, mock::silence(1.0).into_bytes())).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);

    h.flaky.fail_next(ProviderErrorKind::AuthFailure, 1);
    let r = send(&h.app, post_bytes(&uri, utterance_audio(&h.script.turns[0]))).await;
    assert_eq!(r.status, StatusCode::BAD_GATEWAY);
    let v = r.json();
    assert_eq!(v["error"], "provider_error");
    assert_eq!(v["stage"], "rephrase");
    assert!(!v["message"].as_str().unwrap().contains("injected"), "{v}");

    // Failed turns leave no trace.
    let session = send(&h.app, get(&format!("/sessions/{id}"))).await.json();
    assert_eq!(session["learner_turns"], 0);
    assert_eq!(
        send(&h.app, get(&format!("/sessions/{id}/turns/5/audio"))).await.status,
        StatusCode::NOT_FOUND
    );

    // Unscripted speech falls back to a fixed transcript.
    let r = send(
        &h.app,
        post_bytes(&uri, utterance_audio("Something off script entirely")),
    )
    .await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["turn"]["transcript"], MOCK_FALLBACK_TRANSCRIPT);
}

#[tokio::test]
async fn participant_deletion_requires_admin_token() {
    let h = harness();
    let id = open_session(&h, "ai-twin").await;
    let r = send(
        &h.app,
        post_bytes(&format!("/sessions/{id}/turns"), utterance_audio(&h.script.turns[0])),
    )
    .await;
    assert_eq!(r.status, StatusCode::OK);
    assert!(h.ctx.blobs.len().unwrap() > 0);

    let delete = |auth: Option<&str>| {
        let mut b = Request::builder().method(Method::DELETE).uri("/participants/P01");
        if let Some(a) = auth {
            b = b.header(header::AUTHORIZATION, a);
        }
        b.body(Body::empty()).unwrap()
    };
    assert_eq!(send(&h.app, delete(None)).await.status, StatusCode::UNAUTHORIZED);
    assert_eq!(
        send(&h.app, delete(Some("Bearer wrong"))).await.status,
        StatusCode::UNAUTHORIZED
    );
    let r = send(&h.app, delete(Some(&format!("Bearer {ADMIN}")))).await;
    assert_eq!(r.status, StatusCode::OK);
    assert!(r.json()["removed_audio"].as_u64().unwrap() > 0);
    assert_eq!(h.ctx.blobs.len().unwrap(), 0);
    assert_eq!(
        send(&h.app, get("/participants/P01")).await.status,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        send(&h.app, get(&format!("/sessions/{id}"))).await.status,
        StatusCode::NOT_FOUND
    );
}

#[tokio::test]
async fn scenarios_and_plans() {
    let h = harness();
    let v = send(&h.app, get("/scenarios")).await.json();
    assert_eq!(
        v.as_array()
            .map(Vec::len)
            .or_else(|| v["scenarios"].as_array().map(Vec::len)),
        Some(6)
    );

    send(&h.app, post_json("/participants", json!({ "id": "P02" }))).await;
    let a = send(&h.app, post_json("/participants/P02/plan", json!({ "seed": 7 }))).await;
    let b = send(&h.app, post_json("/participants/P02/plan", json!({ "seed": 7 }))).await;
    assert_eq!(a.status, StatusCode::OK);
    assert_eq!(a.bytes, b.bytes);
    assert_eq!(a.json()["condition_order"].as_array().unwrap().len(), 3);
}
