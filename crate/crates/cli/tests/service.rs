use std::net::SocketAddr;
use std::sync::Arc;

use base64::Engine;
use clipdesk_cli::api::{ClassifyResponse, ErrorBody, HealthResponse, ItemResponse, SearchResponse};
use clipdesk_cli::service::{serve_on, AppState};
use clipdesk_core::datagen::{generate_corpus, Split};
use clipdesk_core::index::build_from_corpus;
use clipdesk_core::trainer::{train, TrainingSet};
use clipdesk_core::{CorpusConfig, RetrievalIndex, TrainConfig};
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::oneshot;

struct Server {
    base: String,
    _stop: oneshot::Sender<()>,
    _data: tempfile::TempDir,
}

async fn start() -> Server {
    let data = tempfile::tempdir().unwrap();
    let corpus = generate_corpus(&CorpusConfig {
        n_train: 256,
        n_test: 32,
        ..CorpusConfig::default()
    })
    .unwrap();
    corpus.write(data.path()).unwrap();
    let cfg = TrainConfig {
        batch_size: 16,
        steps: 20,
        ..TrainConfig::default()
    };
    let model = train(&cfg, &TrainingSet::from_corpus(&corpus, cfg.dims.max_len))
        .unwrap()
        .model;
    let mut index = RetrievalIndex::new(model.dims.d_embed).unwrap();
    build_from_corpus(&model, &corpus, |e| e.split != Split::Train, &mut index).unwrap();
    let state = AppState::new(model, index, corpus.entries.clone(), data.path().to_path_buf()).unwrap();

    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr: SocketAddr = listener.local_addr().unwrap();
    let (tx, rx) = oneshot::channel();
    tokio::spawn(serve_on(listener, Arc::new(state), async {
        let _ = rx.await;
    }));
    Server {
        base: format!("http://{addr}"),
        _stop: tx,
        _data: data,
    }
}

async fn post(s: &Server, path: &str, body: Value) -> (u16, Value) {
    let r = reqwest::Client::new()
        .post(format!("{}{path}", s.base))
        .json(&body)
        .send()
        .await
        .unwrap();
    (r.status().as_u16(), r.json().await.unwrap())
}

async fn get(s: &Server, path: &str) -> (u16, Value) {
    let r = reqwest::get(format!("{}{path}", s.base)).await.unwrap();
    (r.status().as_u16(), r.json().await.unwrap())
}

fn error_code(v: &Value) -> String {
    let b: ErrorBody = serde_json::from_value(v.clone()).unwrap();
    b.error
}

#[tokio::test]
async fn health_reports_size() {
    let s = start().await;
    let (status, v) = get(&s, "/health").await;
    assert_eq!(status, 200);
    let h: HealthResponse = serde_json::from_value(v).unwrap();
    assert_eq!(
        h,
        HealthResponse {
            status: "ok".into(),
            items: 96,
            dim: 32
        }
    );
}

#[tokio::test]
async fn search_is_sorted_prefix_closed_and_repeatable() {
    let s = start().await;
    let (status, v) = post(&s, "/search", json!({"query": "a red circle", "k": 3})).await;
    assert_eq!(status, 200);
    let three: SearchResponse = serde_json::from_value(v.clone()).unwrap();
    assert_eq!(three.hits.len(), 3);
    for w in three.hits.windows(2) {
        assert!(w[0].score > w[1].score || (w[0].score == w[1].score && w[0].id < w[1].id));
    }
    let (_, again) = post(&s, "/search", json!({"query": "a red circle", "k": 3})).await;
    assert_eq!(again, v);

    let (_, one) = post(&s, "/search", json!({"query": "a red circle", "k": 1})).await;
    let one: SearchResponse = serde_json::from_value(one).unwrap();
    assert_eq!(one.hits[..], three.hits[..1]);
}

#[tokio::test]
async fn search_rejects_bad_requests() {
    let s = start().await;
    for (body, code) in [
        (json!({"query": "", "k": 3}), "empty_query"),
        (json!({"query": " ,; ", "k": 3}), "empty_query"),
        (json!({"query": "a red circle", "k": 0}), "invalid_k"),
        (json!({"query": "a red circle", "k": 101}), "invalid_k"),
        (json!({"query": "a red circle", "k": -4}), "invalid_k"),
        (json!({"query": "a red circle"}), "invalid_json"),
        (json!({"query": 5, "k": 3}), "invalid_json"),
    ] {
        let (status, v) = post(&s, "/search", body.clone()).await;
        assert_eq!((status, error_code(&v).as_str()), (400, code), "{body}");
    }
    let r = reqwest::Client::new()
        .post(format!("{}/search", s.base))
        .body("{\"query\":")
        .header("content-type", "application/json")
        .send()
        .await
        .unwrap();
    assert_eq!(r.status().as_u16(), 400);
    let r = reqwest::Client::new()
        .post(format!("{}/search", s.base))
        .body("{\"query\":\"a\",\"k\":1}")
        .send()
        .await
        .unwrap();
    assert_eq!(r.status().as_u16(), 415);
}

#[tokio::test]
async fn classify_contract() {
    let s = start().await;
    let id = 256; // first test_iid item
    let (status, v) = post(&s, "/classify", json!({"id": id, "classes": ["red circle"]})).await;
    assert_eq!(status, 200);
    let one: ClassifyResponse = serde_json::from_value(v).unwrap();
    assert_eq!(one.probs[0].p, 1.0);
    assert_eq!(one.argmax, "red circle");

    let (_, v) = post(
        &s,
        "/classify",
        json!({"id": id, "classes": ["red circle", "blue square", "green cross"], "templates": ["a photo of a {}"]}),
    )
    .await;
    let three: ClassifyResponse = serde_json::from_value(v).unwrap();
    assert!((three.probs.iter().map(|p| p.p).sum::<f64>() - 1.0).abs() < 1e-9);
    let best = three.probs.iter().max_by(|a, b| a.p.total_cmp(&b.p)).unwrap();
    assert_eq!(best.class, three.argmax);

    for (body, status, code) in [
        (json!({"id": 1, "classes": ["x"]}), 404, "not_found"),
        (json!({"id": id, "classes": []}), 400, "empty_classes"),
        (
            json!({"id": id, "classes": ["x"], "templates": ["no slot"]}),
            400,
            "invalid_template",
        ),
        (
            json!({"id": id, "classes": ["x"], "templates": []}),
            400,
            "invalid_template",
        ),
        (json!({"id": id, "classes": [" "]}), 400, "empty_prompt"),
        (json!({"id": "seven", "classes": ["x"]}), 400, "invalid_json"),
    ] {
        let (got, v) = post(&s, "/classify", body.clone()).await;
        assert_eq!((got, error_code(&v).as_str()), (status, code), "{body}");
    }
}

#[tokio::test]
async fn items_and_meta() {
    let s = start().await;
    let (status, v) = get(&s, "/items/300").await;
    assert_eq!(status, 200);
    let item: ItemResponse = serde_json::from_value(v).unwrap();
    let rgb = base64::engine::general_purpose::STANDARD
        .decode(&item.rgb_base64)
        .unwrap();
    assert_eq!((item.width, item.height, rgb.len()), (32, 32, 3072));
    let ppm = std::fs::read(s._data.path().join("images/000300.ppm")).unwrap();
    assert_eq!(&ppm[ppm.len() - 3072..], &rgb[..]);

    let (status, meta) = get(&s, "/items/300/meta").await;
    assert_eq!(status, 200);
    assert_eq!(meta["id"], 300);
    assert_eq!(meta["caption"], Value::String(item.caption));
    assert_eq!(meta["split"], Value::String(item.split));
    assert!(meta.get("rgb_base64").is_none());

    // items outside the index are still served from the manifest
    assert_eq!(get(&s, "/items/3").await.0, 200);

    for (path, status, code) in [
        ("/items/100000", 404, "not_found"),
        ("/items/100000/meta", 404, "not_found"),
        ("/items/abc", 400, "invalid_id"),
        ("/nowhere", 404, "not_found"),
    ] {
        let (got, v) = get(&s, path).await;
        assert_eq!((got, error_code(&v).as_str()), (status, code), "{path}");
    }
    let (got, v) = get(&s, "/search").await;
    assert_eq!((got, error_code(&v).as_str()), (405, "method_not_allowed"));
}

#[test]
fn startup_rejects_inconsistent_state() {
    let corpus = generate_corpus(&CorpusConfig {
        n_train: 64,
        n_test: 8,
        ..CorpusConfig::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        batch_size: 8,
        steps: 1,
        ..TrainConfig::default()
    };
    let model = train(&cfg, &TrainingSet::from_corpus(&corpus, 16)).unwrap().model;
    let mut index = RetrievalIndex::new(32).unwrap();
    build_from_corpus(&model, &corpus, |_| true, &mut index).unwrap();
    let partial = corpus.entries[..10].to_vec();
    assert!(AppState::new(model.clone(), index, partial, "unused".into()).is_err());
    let wrong_dim = RetrievalIndex::new(8).unwrap();
    assert!(AppState::new(model, wrong_dim, corpus.entries, "unused".into()).is_err());
}
