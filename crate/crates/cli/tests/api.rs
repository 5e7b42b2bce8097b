use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use nerscope::bundle::{generate_fixture, load_bundle, write_bundle, FixtureSpec, PlantedCase, WriteOptions};
use nerscope::session::{write_analysis, AnalysisSession, SessionOptions};
use nerscope_cli::api::router;

fn spec() -> FixtureSpec {
    FixtureSpec {
        seed: 11,
        train_sentences: 60,
        test_sentences: 25,
        planted: PlantedCase::ALL.to_vec(),
        ..FixtureSpec::default()
    }
}

fn app_from(spec: &FixtureSpec, dir: &Path) -> (Router, Arc<AnalysisSession>) {
    let b = generate_fixture(spec).unwrap();
    write_bundle(&b, dir, WriteOptions::default()).unwrap();
    let loaded = load_bundle(dir).unwrap();
    let s = Arc::new(AnalysisSession::new(loaded, SessionOptions::default()));
    (router(s.clone()), s)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = serde_json::from_slice(&bytes).unwrap_or_else(|e| panic!("{uri}: non-JSON body ({e})"));
    (status, v)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    call(app, "GET", uri, None).await
}

const GETS: &[&str] = &[
    "/api/v1/spec",
    "/api/v1/manifest",
    "/api/v1/report",
    "/api/v1/report?level=token",
    "/api/v1/report?level=token&exclude_o=true",
    "/api/v1/report?level=entity&mode=discard",
    "/api/v1/errors",
    "/api/v1/errors?side=FP&type=PER",
    "/api/v1/confusion",
    "/api/v1/confusion?level=token",
    "/api/v1/lexical/diversity",
    "/api/v1/lexical/diversity?level=token&scope=test",
    "/api/v1/lexical/oov",
    "/api/v1/lexical/overlap",
    "/api/v1/aggregates",
    "/api/v1/correlations",
    "/api/v1/correlations?coef=spearman&metrics=loss,confidence",
    "/api/v1/tokens",
    "/api/v1/tokens?filter=correct%20%3D%3D%20false&per_page=5",
    "/api/v1/tokens/test:0:0/distribution",
    "/api/v1/tokens/test:0:0/similar",
    "/api/v1/scatter?x=loss&y=uncertainty&color=gold",
    "/api/v1/projection",
    "/api/v1/projection?state=pretrained",
    "/api/v1/sentences/test/0",
    "/api/v1/sentences/train/3",
    "/api/v1/attention/summary",
    "/api/v1/attention/summary?kind=weights",
    "/api/v1/attention/sentence/0",
    "/api/v1/clusters?k=3",
];

#[tokio::test]
async fn every_endpoint_answers_json() {
    let tmp = tempfile::tempdir().unwrap();
    let (app, _) = app_from(&spec(), tmp.path());
    for uri in GETS {
        let (status, v) = get(&app, uri).await;
        assert_eq!(status, StatusCode::OK, "{uri}: {v}");
        assert!(v.is_object(), "{uri}");
    }
    let (status, _) = call(
        &app,
        "POST",
        "/api/v1/selection/summary",
        Some(json!({"ids": ["test:0:0"], "categorical": "gold"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn spec_document_lists_every_route() {
    let tmp = tempfile::tempdir().unwrap();
    let (app, _) = app_from(&spec(), tmp.path());
    let (_, doc) = get(&app, "/api/v1/spec").await;
    let paths = doc["paths"].as_object().unwrap();
    for uri in GETS {
        let path = uri.split('?').next().unwrap();
        let templated = path
            .replace("test:0:0", "{id}")
            .replace("/test/0", "/{split}/{idx}")
            .replace("/train/3", "/{split}/{idx}")
            .replace("sentence/0", "sentence/{idx}");
        assert!(paths.contains_key(&templated), "{templated} missing from spec");
    }
    assert!(paths.contains_key("/api/v1/selection/summary"));
}

#[tokio::test]
async fn error_shapes() {
    let tmp = tempfile::tempdir().unwrap();
    let (app, _) = app_from(&spec(), tmp.path());
    let cases = [
        ("/nope", StatusCode::NOT_FOUND, "not_found"),
        ("/api/v1/nope", StatusCode::NOT_FOUND, "not_found"),
        ("/api/v1/report?level=paragraph", StatusCode::UNPROCESSABLE_ENTITY, "unprocessable"),
        ("/api/v1/report?mode=lenient", StatusCode::UNPROCESSABLE_ENTITY, "unprocessable"),
        ("/api/v1/tokens?filter=zzz%3D%3D1", StatusCode::UNPROCESSABLE_ENTITY, "unprocessable"),
        ("/api/v1/tokens?filter=loss%3D%3Dhigh", StatusCode::UNPROCESSABLE_ENTITY, "unprocessable"),
        ("/api/v1/tokens?page=0", StatusCode::UNPROCESSABLE_ENTITY, "unprocessable"),
        ("/api/v1/tokens/garbage/distribution", StatusCode::UNPROCESSABLE_ENTITY, "unprocessable"),
        ("/api/v1/tokens/test:9999:0/distribution", StatusCode::NOT_FOUND, "not_found"),
        ("/api/v1/tokens/test:9999:0/similar", StatusCode::NOT_FOUND, "not_found"),
        ("/api/v1/sentences/dev/0", StatusCode::NOT_FOUND, "not_found"),
        ("/api/v1/sentences/test/9999", StatusCode::NOT_FOUND, "not_found"),
        ("/api/v1/sentences/test/x", StatusCode::UNPROCESSABLE_ENTITY, "unprocessable"),
        ("/api/v1/clusters?k=0", StatusCode::UNPROCESSABLE_ENTITY, "unprocessable"),
        ("/api/v1/clusters?k=many", StatusCode::UNPROCESSABLE_ENTITY, "unprocessable"),
        ("/api/v1/scatter?x=loss", StatusCode::UNPROCESSABLE_ENTITY, "unprocessable"),
        ("/api/v1/scatter?x=loss&y=gold", StatusCode::UNPROCESSABLE_ENTITY, "unprocessable"),
        ("/api/v1/correlations?coef=kendall", StatusCode::UNPROCESSABLE_ENTITY, "unprocessable"),
        ("/api/v1/attention/sentence/9999", StatusCode::NOT_FOUND, "not_found"),
    ];
    for (uri, status, code) in cases {
        let (got, v) = get(&app, uri).await;
        assert_eq!(got, status, "{uri}: {v}");
        assert_eq!(v["code"], code, "{uri}");
        assert!(v["message"].as_str().is_some_and(|m| !m.is_empty()), "{uri}");
        assert_eq!(v.as_object().unwrap().len(), 2, "{uri}");
    }
    let (got, v) = call(&app, "POST", "/api/v1/selection/summary", Some(json!({"ids": 3}))).await;
    assert_eq!(got, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["code"], "unprocessable");
    let (got, _) = call(
        &app,
        "POST",
        "/api/v1/selection/summary",
        Some(json!({"ids": ["test:0:0"], "categorical": "loss"})),
    )
    .await;
    assert_eq!(got, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn absent_artifacts_are_unavailable() {
    let tmp = tempfile::tempdir().unwrap();
    let bare = FixtureSpec {
        attention: None,
        embedding_dim: None,
        pretrained_embeddings: false,
        projection: false,
        predictions: false,
        ..spec()
    };
    let (app, _) = app_from(&bare, tmp.path());
    for uri in [
        "/api/v1/report",
        "/api/v1/tokens",
        "/api/v1/attention/summary",
        "/api/v1/attention/sentence/0",
        "/api/v1/clusters?k=3",
        "/api/v1/projection",
        "/api/v1/tokens/test:0:0/similar",
    ] {
        let (status, v) = get(&app, uri).await;
        assert_eq!(status, StatusCode::CONFLICT, "{uri}: {v}");
        assert_eq!(v["code"], "unavailable", "{uri}");
    }
    // lexical views need only gold labels
    let (status, _) = get(&app, "/api/v1/lexical/oov").await;
    assert_eq!(status, StatusCode::OK);
    let (status, v) = get(&app, "/api/v1/manifest").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["valid"], true);
}

#[tokio::test]
async fn selection_counts_sum_to_selection_size() {
    let tmp = tempfile::tempdir().unwrap();
    let (app, _) = app_from(&spec(), tmp.path());
    let ids = json!(["test:0:0", "test:0:1", "test:1:0", "test:0:1"]);
    for cat in ["gold", "pred", "outcome", "correct", "error_kind"] {
        let (status, v) = call(
            &app,
            "POST",
            "/api/v1/selection/summary",
            Some(json!({"ids": ids, "categorical": cat})),
        )
        .await;
        assert_eq!(status, StatusCode::OK, "{v}");
        assert_eq!(v["size"], 3);
        let total: u64 = v["breakdown"].as_array().unwrap().iter().map(|c| c["count"].as_u64().unwrap()).sum();
        assert_eq!(total, 3, "{cat}");
        let pct: f64 = v["breakdown"].as_array().unwrap().iter().map(|c| c["percent"].as_f64().unwrap()).sum();
        assert!((pct - 100.0).abs() < 1e-9, "{cat}: {pct}");
        let cross: u64 = v["cross_tab"]["counts"]
            .as_array()
            .unwrap()
            .iter()
            .flat_map(|r| r.as_array().unwrap())
            .map(|c| c.as_u64().unwrap())
            .sum();
        assert_eq!(cross, 3, "{cat}");
    }
}

#[tokio::test]
async fn similar_lists_query_token_first() {
    let tmp = tempfile::tempdir().unwrap();
    let (app, _) = app_from(&spec(), tmp.path());
    let (_, page) = get(&app, "/api/v1/tokens?per_page=40").await;
    for row in page["rows"].as_array().unwrap() {
        let id = row["id"].as_str().unwrap();
        let (status, v) = get(&app, &format!("/api/v1/tokens/{id}/similar?limit=5")).await;
        assert_eq!(status, StatusCode::OK, "{v}");
        let results = v["results"].as_array().unwrap();
        assert_eq!(results[0]["id"], id);
        assert_eq!(results[0]["similarity"].as_f64().unwrap(), 1.0);
        assert!(results.len() <= 5);
        let sims: Vec<f64> = results.iter().map(|r| r["similarity"].as_f64().unwrap()).collect();
        assert!(sims.windows(2).all(|w| w[0] >= w[1]), "{sims:?}");
    }
}

#[tokio::test]
async fn filtered_pages_partition_the_table() {
    let tmp = tempfile::tempdir().unwrap();
    let (app, _) = app_from(&spec(), tmp.path());
    let (_, all) = get(&app, "/api/v1/tokens?per_page=1").await;
    let total = all["total"].as_u64().unwrap();
    let (_, right) = get(&app, "/api/v1/tokens?filter=correct%20%3D%3D%20true&per_page=1").await;
    let (_, wrong) = get(&app, "/api/v1/tokens?filter=correct%20%3D%3D%20false&per_page=10000").await;
    assert_eq!(right["total"].as_u64().unwrap() + wrong["total"].as_u64().unwrap(), total);
    assert!(wrong["total"].as_u64().unwrap() > 0);
    for row in wrong["rows"].as_array().unwrap() {
        assert_ne!(row["gold"], row["pred"]);
    }
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

/// Exact JSON equality, with every float compared by bit pattern.
fn assert_bitwise(a: &Value, b: &Value, path: &str) {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            if let (Some(x), Some(y)) = (x.as_f64(), y.as_f64()) {
                assert_eq!(x.to_bits(), y.to_bits(), "{path}: {x} vs {y}");
            }
            assert_eq!(x.to_string(), y.to_string(), "{path}");
        }
        (Value::Array(x), Value::Array(y)) => {
            assert_eq!(x.len(), y.len(), "{path}");
            for (i, (p, q)) in x.iter().zip(y).enumerate() {
                assert_bitwise(p, q, &format!("{path}[{i}]"));
            }
        }
        (Value::Object(x), Value::Object(y)) => {
            assert_eq!(x.keys().collect::<Vec<_>>(), y.keys().collect::<Vec<_>>(), "{path}");
            for (k, v) in x {
                assert_bitwise(v, &y[k], &format!("{path}.{k}"));
            }
        }
        _ => assert_eq!(a, b, "{path}"),
    }
}

#[tokio::test]
async fn api_matches_analysis_files_bit_for_bit() {
    let tmp = tempfile::tempdir().unwrap();
    let bdir = tmp.path().join("bundle");
    let adir = tmp.path().join("analysis");
    let (app, session) = app_from(&spec(), &bdir);
    // an independent session writes the files; the API session never does
    let fresh = AnalysisSession::new(load_bundle(&bdir).unwrap(), SessionOptions::default());
    write_analysis(&fresh, &adir).unwrap();
    drop(session);

    let reports = read_json(&adir.join("reports.json"));
    let (_, ent) = get(&app, "/api/v1/report?level=entity&mode=repair").await;
    assert_bitwise(&ent, &reports["entity.repair"], "entity.repair");
    let (_, dis) = get(&app, "/api/v1/report?level=entity&mode=discard").await;
    assert_bitwise(&dis, &reports["entity.discard"], "entity.discard");
    let (_, tok) = get(&app, "/api/v1/report?level=token").await;
    assert_bitwise(&tok, &reports["token"], "token");

    let (_, page) = get(&app, "/api/v1/tokens?per_page=10000").await;
    let lines: Vec<Value> = fs::read_to_string(adir.join("analysis.tokens.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let rows = page["rows"].as_array().unwrap();
    assert_eq!(rows.len(), lines.len());
    for (i, (a, b)) in rows.iter().zip(&lines).enumerate() {
        assert_bitwise(a, b, &format!("tokens[{i}]"));
    }

    let (_, att) = get(&app, "/api/v1/attention/summary").await;
    assert_bitwise(&att, &read_json(&adir.join("attention.scores.json"))["summary"], "attention.scores");
    let (_, w) = get(&app, "/api/v1/attention/summary?kind=weights").await;
    assert_bitwise(&w, &read_json(&adir.join("attention.weights.json")), "attention.weights");

    let (_, agg) = get(&app, "/api/v1/aggregates").await;
    assert_bitwise(&agg, &read_json(&adir.join("aggregates.json"))["by_tag"], "aggregates");

    let alignment = read_json(&adir.join("alignment.json"));
    for k in [3usize, 4, 9] {
        let (_, c) = get(&app, &format!("/api/v1/clusters?k={k}")).await;
        let file: Vec<Value> = fs::read_to_string(adir.join(format!("clusters.k{k}.jsonl")))
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_bitwise(&c["assignments"], &Value::Array(file), &format!("clusters.k{k}"));
        assert_bitwise(
            &c["centroid_similarity"],
            &read_json(&adir.join(format!("centroids.k{k}.json"))),
            &format!("centroids.k{k}"),
        );
        for a in c["alignment"].as_array().unwrap() {
            let row = alignment
                .as_array()
                .unwrap()
                .iter()
                .find(|r| r["k"] == k && r["family"] == a["family"])
                .unwrap();
            for key in ["homogeneity", "completeness", "v_measure"] {
                assert_bitwise(&a[key], &row[key], key);
            }
        }
    }
}

fn snapshot(dir: &Path) -> BTreeMap<String, (Vec<u8>, std::time::SystemTime)> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let e = e.unwrap();
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let meta = e.metadata().unwrap();
                out.insert(
                    p.strip_prefix(dir).unwrap().display().to_string(),
                    (fs::read(&p).unwrap(), meta.modified().unwrap()),
                );
            }
        }
    }
    out
}

#[tokio::test]
async fn serving_never_writes_to_the_bundle() {
    let tmp = tempfile::tempdir().unwrap();
    let bdir = tmp.path().join("bundle");
    let (app, session) = app_from(&spec(), &bdir);
    let before = snapshot(&bdir);
    session.warm();
    for uri in GETS {
        get(&app, uri).await;
    }
    call(
        &app,
        "POST",
        "/api/v1/selection/summary",
        Some(json!({"ids": ["test:0:0", "test:1:1"], "categorical": "outcome"})),
    )
    .await;
    write_analysis(&session, tmp.path().join("out")).unwrap();
    assert_eq!(before, snapshot(&bdir));
}

#[tokio::test]
async fn concurrent_first_requests_share_one_product() {
    let tmp = tempfile::tempdir().unwrap();
    let (app, session) = app_from(&spec(), tmp.path());
    let mut handles = Vec::new();
    for _ in 0..8 {
        let app = app.clone();
        handles.push(tokio::spawn(async move { get(&app, "/api/v1/clusters?k=4").await.1 }));
    }
    let mut bodies = Vec::new();
    for h in handles {
        bodies.push(h.await.unwrap());
    }
    assert!(bodies.windows(2).all(|w| w[0] == w[1]));
    let a = session.clustering(4).unwrap();
    let b = session.clustering(4).unwrap();
    assert!(Arc::ptr_eq(&a, &b));
}
