use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use liahr::corpus::{Corpus, LabelKind, LabelSpace, Split};
use liahr::engine::{run, QueryLabelSource, RunConfig, Verdict};
use liahr::gateway::{BackendConfig, Gateway, MockSpec};
use liahr::pipeline::Action;
use liahr::prompt::PromptMode;
use liahr::stats::binomial_two_sided_doubled;
use liahr::synth::{corrupt, synthetic_corpus, SynthSpec};
use liahr_review::{router, AppState, Choice, Presentation, ReviewStore, Status};
use serde_json::{json, Value};
use tower::ServiceExt;

fn space() -> LabelSpace {
    LabelSpace::new(
        "emo",
        LabelKind::Multilabel,
        ["anger", "joy", "fear", "love", "trust"],
    )
    .unwrap()
}

/// A fully corrupted corpus plus flagged verdicts whose alternatives are the
/// clean labels.
fn flagged(n: usize, queries: usize) -> (Corpus, Vec<Verdict>) {
    let clean = synthetic_corpus(&SynthSpec::new(space(), n, 5)).unwrap();
    let (noisy, _) = corrupt(&clean, 1.0, 9).unwrap();
    let truth: BTreeMap<String, Vec<String>> = clean
        .examples()
        .iter()
        .map(|e| {
            (
                e.id.clone(),
                space()
                    .names(&e.gold)
                    .into_iter()
                    .map(String::from)
                    .collect(),
            )
        })
        .collect();
    let gateway = Gateway::from_config(
        &BackendConfig::mock(MockSpec::GoldOracle { truth }),
        noisy.space(),
    )
    .unwrap();
    let config = RunConfig::new(PromptMode::Liahr, 4)
        .with_source(QueryLabelSource::Gold)
        .with_seeds([0])
        .full_corpus(&[Split::Train, Split::Dev]);
    let out = run(&noisy, &config, &gateway).unwrap();
    let verdicts: Vec<Verdict> = out
        .verdicts
        .into_iter()
        .filter(|v| v.flagged)
        .take(queries)
        .collect();
    (noisy, verdicts)
}

fn app(store: Arc<ReviewStore>, corpus: Corpus, export_dir: &std::path::Path) -> Router {
    app_with(store, corpus, export_dir, false)
}

fn app_with(
    store: Arc<ReviewStore>,
    corpus: Corpus,
    export_dir: &std::path::Path,
    unsealed: bool,
) -> Router {
    router(
        AppState {
            store,
            corpus: Arc::new(corpus),
            export_dir: export_dir.to_path_buf(),
            unsealed,
        },
        None,
    )
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let builder = Request::builder()
        .method(method)
        .uri(uri)
        .header("x-reviewer", "rev1");
    let req = match body {
        Some(b) => builder
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => builder.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

#[tokio::test]
async fn seven_item_review_exports_expected_changes() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, verdicts) = flagged(40, 7);
    let store = Arc::new(ReviewStore::open(dir.path().join("store"), space(), 3).unwrap());
    assert_eq!(store.enqueue(&verdicts, &corpus).unwrap(), 7);
    // Enqueueing again adds nothing.
    assert_eq!(store.enqueue(&verdicts, &corpus).unwrap(), 0);
    let app = app(store.clone(), corpus.clone(), &dir.path().join("export"));

    let (status, page) = call(&app, "GET", "/api/queue?status=pending&page=0", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(page["total"], 7);
    let items = page["items"].as_array().unwrap().clone();
    for it in &items {
        assert!(it.get("gold").is_none() && it.get("alternative").is_none());
        assert!(it["first"].is_array() && it["second"].is_array());
    }

    let (status, _) = call(&app, "POST", "/api/export", Some(json!({}))).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let mut expected = BTreeMap::new();
    for (i, it) in items.iter().enumerate() {
        let id = it["id"].as_str().unwrap().to_string();
        let item = store.item(&id).unwrap();
        let gold_first = item.presentation == Presentation::GoldFirst;
        let gold_label = if gold_first { "first" } else { "second" };
        let alt_label = if gold_first { "second" } else { "first" };
        let body = match i {
            0 | 1 => {
                expected.insert(id.clone(), None);
                json!({ "item_id": id, "choice": gold_label })
            }
            2..=4 => {
                expected.insert(id.clone(), Some(space().names(&item.alternative).join(",")));
                json!({ "item_id": id, "choice": alt_label })
            }
            _ => {
                expected.insert(id.clone(), Some("fear,trust".to_string()));
                json!({ "item_id": id, "choice": "edited", "labels": ["trust", "fear"] })
            }
        };
        let (status, resp) = call(&app, "POST", "/api/decisions", Some(body)).await;
        assert_eq!(status, StatusCode::OK, "{resp}");
        assert_eq!(resp["item"]["status"], "decided");
        assert_eq!(resp["item"]["decision"]["reviewer"], "rev1");
    }

    let (_, progress) = call(&app, "GET", "/api/progress", None).await;
    assert_eq!(progress, json!({ "pending": 0, "decided": 7, "total": 7 }));

    let (status, export) = call(
        &app,
        "POST",
        "/api/export",
        Some(json!({ "partial": false })),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{export}");
    let counts = &export["manifest"]["counts"];
    assert_eq!(counts["replaced"], 5);
    assert_eq!(counts["kept"].as_u64().unwrap() as usize, corpus.len() - 5);
    assert_eq!(export["presentation"].as_object().unwrap().len(), 7);

    let exported =
        liahr::corpus::load_corpus(dir.path().join("export/corpus.jsonl"), &space()).unwrap();
    for ex in exported.examples() {
        let original = corpus.get(&ex.id).unwrap();
        match expected.get(&ex.id) {
            Some(Some(labels)) => assert_eq!(space().names(&ex.gold).join(","), *labels),
            _ => assert_eq!(ex.gold, original.gold),
        }
    }
    let manifest = store.export(&corpus, false).unwrap().1;
    assert_eq!(manifest.count("replaced"), 5);
    for e in &manifest.entries {
        if let Action::Replaced { new, .. } = &e.action {
            assert_eq!(Some(&Some(new.join(","))), expected.get(&e.id));
        }
    }
}

#[tokio::test]
async fn api_error_statuses() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, verdicts) = flagged(20, 3);
    let store = Arc::new(ReviewStore::open(dir.path(), space(), 1).unwrap());
    store.enqueue(&verdicts, &corpus).unwrap();
    let id = store.items(None)[0].id.clone();
    let app = app(store, corpus, &dir.path().join("out"));

    let (status, _) = call(&app, "GET", "/api/items/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, item) = call(&app, "GET", &format!("/api/items/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(item["status"], "pending");

    let bad = [
        json!({ "item_id": "nope", "choice": "first" }),
        json!({ "item_id": id, "choice": "edited" }),
        json!({ "item_id": id, "choice": "edited", "labels": ["boredom"] }),
        json!({ "item_id": id, "choice": "first", "labels": ["joy"] }),
    ];
    let want = [
        StatusCode::NOT_FOUND,
        StatusCode::UNPROCESSABLE_ENTITY,
        StatusCode::UNPROCESSABLE_ENTITY,
        StatusCode::UNPROCESSABLE_ENTITY,
    ];
    for (body, want) in bad.into_iter().zip(want) {
        let (status, resp) = call(&app, "POST", "/api/decisions", Some(body)).await;
        assert_eq!(status, want, "{resp}");
        assert!(resp["error"].is_string());
    }

    let (status, export) = call(
        &app,
        "POST",
        "/api/export",
        Some(json!({ "partial": true })),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(export["manifest"]["counts"]["replaced"], 0);

    let (status, space) = call(&app, "GET", "/api/space", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(space["labels"].as_array().unwrap().len(), 5);
}

#[test]
fn replay_reconstructs_state() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, verdicts) = flagged(300, 150);
    let before = {
        let store = ReviewStore::open(dir.path(), space(), 7).unwrap();
        store.enqueue(&verdicts, &corpus).unwrap();
        let items = store.items(None);
        for (i, it) in items.iter().enumerate() {
            let choice = if i % 2 == 0 {
                Choice::AcceptGold
            } else {
                Choice::AcceptAlternative
            };
            store.decide(&it.id, choice, "r").unwrap();
        }
        // A later decision supersedes the first one.
        store
            .decide(&items[0].id, Choice::AcceptAlternative, "r2")
            .unwrap();
        assert_eq!(store.history(&items[0].id).len(), 2);
        store.state()
    };
    // More events than one snapshot interval, so both paths are exercised.
    assert!(before.events() > 100);

    let reopened = ReviewStore::open(dir.path(), space(), 7).unwrap();
    assert_eq!(reopened.state(), before);

    std::fs::remove_file(dir.path().join("snapshot.json")).unwrap();
    let from_log = ReviewStore::open(dir.path(), space(), 7).unwrap();
    assert_eq!(from_log.state(), before);
    assert_eq!(
        from_log
            .decision(&from_log.items(None)[0].id)
            .unwrap()
            .reviewer,
        "r2"
    );
}

#[test]
fn torn_trailing_event_is_dropped() {
    use std::io::Write;
    let dir = tempfile::tempdir().unwrap();
    let (corpus, verdicts) = flagged(20, 3);
    let before = {
        let store = ReviewStore::open(dir.path(), space(), 7).unwrap();
        store.enqueue(&verdicts, &corpus).unwrap();
        store.state()
    };
    let mut f = std::fs::OpenOptions::new()
        .append(true)
        .open(dir.path().join("events.jsonl"))
        .unwrap();
    f.write_all(br#"{"event":"decision","decis"#).unwrap();
    drop(f);
    let store = ReviewStore::open(dir.path(), space(), 7).unwrap();
    assert_eq!(store.state(), before);
    let id = store.items(None)[0].id.clone();
    store.decide(&id, Choice::AcceptGold, "r").unwrap();
    drop(store);
    let store = ReviewStore::open(dir.path(), space(), 7).unwrap();
    assert_eq!(store.items(Some(Status::Decided)).len(), 1);
}

#[test]
fn presentation_order_is_balanced_and_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, verdicts) = flagged(1200, 1000);
    let store = ReviewStore::open(dir.path().join("a"), space(), 42).unwrap();
    let n = store.enqueue(&verdicts, &corpus).unwrap();
    assert!(n >= 1000, "only {n} flagged items");
    let items = store.items(None);
    let gold_first = items
        .iter()
        .filter(|i| i.presentation == Presentation::GoldFirst)
        .count() as u64;
    let k = gold_first.max(n as u64 - gold_first);
    let p = binomial_two_sided_doubled(k, n as u64).unwrap().p_value;
    assert!(p > 0.01, "gold first {gold_first} of {n}, p = {p}");

    let again = ReviewStore::open(dir.path().join("b"), space(), 42).unwrap();
    again.enqueue(&verdicts, &corpus).unwrap();
    let same: Vec<_> = again
        .items(None)
        .into_iter()
        .map(|i| i.presentation)
        .collect();
    assert_eq!(
        same,
        items.iter().map(|i| i.presentation).collect::<Vec<_>>()
    );
}

#[tokio::test]
async fn presentation_is_sealed_unless_asked() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, verdicts) = flagged(200, 3);
    let store = Arc::new(ReviewStore::open(dir.path().join("store"), space(), 1).unwrap());
    store.enqueue(&verdicts, &corpus).unwrap();
    let id = &verdicts[0].example_id;

    let sealed = app(store.clone(), corpus.clone(), &dir.path().join("out"));
    let (_, body) = call(&sealed, "GET", &format!("/api/items/{id}"), None).await;
    assert!(body.get("presentation").is_none());
    let (_, page) = call(&sealed, "GET", "/api/queue", None).await;
    assert!(page["items"]
        .as_array()
        .unwrap()
        .iter()
        .all(|i| i.get("presentation").is_none()));

    let open = app_with(store.clone(), corpus, &dir.path().join("out"), true);
    let (_, body) = call(&open, "GET", &format!("/api/items/{id}"), None).await;
    let want = serde_json::to_value(store.item(id).unwrap().presentation).unwrap();
    assert_eq!(body["presentation"], want);
}
