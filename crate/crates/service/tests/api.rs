use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use modavg::ctp::{is_admissible, Analysis, AnalysisMode, TestOptions};
use modavg::inference::{coefficient_estimates, model_averaged_log_po_mask, Hyperparams, NullHypothesis};
use modavg::io::{read_dataset, CsvOptions};
use modavg_service::{archive, router, SessionConfig, Store};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::{json, Value};
use std::sync::Arc;
use tower::ServiceExt;

/// Four candidates: `a` and `b` nearly collinear, `a` causal, `c` weakly causal, `d` noise.
fn fixture_csv() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut out = String::from("y,a,b,c,d\n");
    for _ in 0..150 {
        let a: f64 = rng.sample(StandardNormal);
        let b = a + 0.2 * rng.sample::<f64, _>(StandardNormal);
        let c: f64 = rng.sample(StandardNormal);
        let d: f64 = rng.sample(StandardNormal);
        let y = 0.5 * a + 0.15 * c + rng.sample::<f64, _>(StandardNormal);
        out.push_str(&format!("{y},{a},{b},{c},{d}\n"));
    }
    out
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn raw(app: &axum::Router, method: &str, uri: &str, body: Vec<u8>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri).body(Body::from(body)).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn app() -> axum::Router {
    router(Arc::new(Store::default()))
}

async fn create(app: &axum::Router, config: Value) -> String {
    let (status, v) = call(app, "POST", "/sessions", Some(json!({ "csv": fixture_csv(), "config": config }))).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    v["id"].as_str().unwrap().to_string()
}

fn library_analysis(config: &SessionConfig) -> (modavg::linmodel::Dataset, Analysis) {
    let opts = CsvOptions { intercept: config.intercept, variance: config.variance, ..Default::default() };
    let d = read_dataset(&fixture_csv(), &opts).unwrap();
    let h = Hyperparams::new(config.mu, config.h, config.tau, d.n()).unwrap();
    let a = Analysis::new(&d, &h, AnalysisMode::Full).unwrap();
    (d, a)
}

#[tokio::test]
async fn empty_store_lists_nothing() {
    let (status, v) = call(&app(), "GET", "/sessions", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v, json!([]));
}

#[tokio::test]
async fn create_is_idempotent() {
    let app = app();
    let id = create(&app, json!({})).await;
    let (status, v) = call(&app, "POST", "/sessions", Some(json!({ "csv": fixture_csv() }))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["id"], id);
    let (_, other) = call(&app, "POST", "/sessions", Some(json!({ "csv": fixture_csv(), "config": { "mu": 0.2 } }))).await;
    assert_ne!(other["id"], id);
    let (_, list) = call(&app, "GET", "/sessions", None).await;
    assert_eq!(list.as_array().unwrap().len(), 2);
    let (status, s) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(s["models"], 16);
    assert_eq!(s["names"], json!(["a", "b", "c", "d"]));
    assert_eq!(s["correlation"][0][0], 1.0);
}

#[tokio::test]
async fn answers_equal_library_calls() {
    let app = app();
    let id = create(&app, json!({})).await;
    let (_, a) = library_analysis(&SessionConfig::default());

    // Grand null: log PO is the sum over every non-null model.
    let (status, v) = call(&app, "POST", &format!("/sessions/{id}/test"), Some(json!({ "tested": ["a", "b", "c", "d"] }))).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    let want = model_averaged_log_po_mask(&a.scan.log_po, 0b1111).unwrap();
    assert_eq!(v["report"]["log_po"].as_f64().unwrap(), want);
    let direct: f64 = a.scan.log_po[1..].iter().map(|l| l.exp()).sum();
    assert!((v["report"]["po"].as_f64().unwrap() / direct - 1.0).abs() < 1e-12);

    // Pair query by index matches the library report field for field.
    let (_, v) = call(&app, "POST", &format!("/sessions/{id}/test"), Some(json!({ "tested": [2, 3], "rho": 0.8 }))).await;
    let lib = a.test_group(&[2, 3], &TestOptions { rho: Some(0.8), ..Default::default() }).unwrap();
    assert_eq!(v["report"], serde_json::to_value(&lib).unwrap());
    assert_eq!(v["admissible"], true);
}

#[tokio::test]
async fn inadmissible_split_is_a_structured_error() {
    let app = app();
    let id = create(&app, json!({})).await;
    let (status, v) = call(&app, "POST", &format!("/sessions/{id}/test"), Some(json!({ "tested": ["a"], "rho": 0.8 }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"], "inadmissible_group");
    assert_eq!(v["block"], json!(["a", "b"]));
    assert!(v["detail"].is_string());

    let body = json!({ "tested": ["a"], "rho": 0.8, "enforce_admissibility": false });
    let (status, v) = call(&app, "POST", &format!("/sessions/{id}/test"), Some(body)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["admissible"], false);
    assert_eq!(v["violating_block"], json!(["a", "b"]));
    assert!(v["rho_max"].as_f64().unwrap() > 0.8);
}

#[tokio::test]
async fn admissibility_flag_matches_library_everywhere() {
    let app = app();
    let id = create(&app, json!({})).await;
    let (_, a) = library_analysis(&SessionConfig::default());
    for rho in [0.0, 0.05, 0.5, 0.8, 0.99, 1.0] {
        let policy = a.grouping(rho).unwrap();
        for mask in 1u64..16 {
            let tested: Vec<usize> = (0..4).filter(|&j| mask >> j & 1 == 1).collect();
            let body = json!({ "tested": tested, "rho": rho, "enforce_admissibility": false, "censored": false });
            let (status, v) = call(&app, "POST", &format!("/sessions/{id}/test"), Some(body)).await;
            assert_eq!(status, StatusCode::OK);
            let null = NullHypothesis::new(tested.clone(), 4).unwrap();
            assert_eq!(v["admissible"].as_bool().unwrap(), is_admissible(&null, &policy), "rho {rho} mask {mask}");
            let lib = a.test_group(&tested, &TestOptions { rho: None, censored: false, ..Default::default() }).unwrap();
            assert_eq!(v["report"], serde_json::to_value(&lib).unwrap());
        }
    }
}

#[tokio::test]
async fn overrides_and_groups() {
    let app = app();
    let id = create(&app, json!({})).await;
    let body = json!({ "tested": ["d"], "tau": 1e9, "alpha": 0.01, "censored": false });
    let (_, v) = call(&app, "POST", &format!("/sessions/{id}/test"), Some(body)).await;
    assert_eq!(v["tau"], 1e9);
    assert_eq!(v["report"]["rejected_bayes"], false);

    let (status, g) = call(&app, "GET", &format!("/sessions/{id}/groups?rho=0.8"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(g["blocks"], json!([["a", "b"], ["c"], ["d"]]));
    assert_eq!(g["block_indices"], json!([[0, 1], [2], [3]]));
    let (_, g) = call(&app, "GET", &format!("/sessions/{id}/groups?rho=0"), None).await;
    assert_eq!(g["blocks"].as_array().unwrap().len(), 1);
    let (status, e) = call(&app, "GET", &format!("/sessions/{id}/groups"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(e["error"], "invalid_input");
    let (status, _) = call(&app, "GET", &format!("/sessions/{id}/groups?rho=2"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn search_finds_the_collinear_pair() {
    let app = app();
    let id = create(&app, json!({})).await;
    let (status, v) = call(&app, "POST", &format!("/sessions/{id}/search"), Some(json!({ "rho": 0.8, "max_size": 2 }))).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert!(v["groups"].as_array().unwrap().contains(&json!(["a", "b"])), "{v}");
    let (status, v) = call(&app, "POST", &format!("/sessions/{id}/search"), Some(json!({ "budget": 1 }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"], "search_budget_exceeded");
}

#[tokio::test]
async fn estimates_equal_library_output() {
    let app = app();
    let id = create(&app, json!({})).await;
    let (d, a) = library_analysis(&SessionConfig::default());
    let lib = coefficient_estimates(&d, &a.scan).unwrap();
    let (status, v) = call(&app, "GET", &format!("/sessions/{id}/estimates"), None).await;
    assert_eq!(status, StatusCode::OK);
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 4);
    for (row, e) in rows.iter().zip(&lib) {
        assert_eq!(row["name"], e.name);
        assert_eq!(row["bayes_mean"].as_f64().unwrap(), e.bayes_mean);
        assert_eq!(row["classical_se"].as_f64().unwrap(), e.classical_se);
        assert_eq!(row["inclusion_prob"].as_f64().unwrap(), e.inclusion_prob);
        assert!(row["bayes_interval"]["lower"].as_f64().unwrap() < e.bayes_mean);
    }
}

#[tokio::test]
async fn export_import_roundtrip_is_lossless() {
    let app = app();
    let id = create(&app, json!({ "variance": { "kind": "known", "sigma2": 1.1 }, "mu": 0.3 })).await;
    let (status, bytes) = raw(&app, "GET", &format!("/sessions/{id}/export"), Vec::new()).await;
    assert_eq!(status, StatusCode::OK);

    let fresh = router(Arc::new(Store::default()));
    let (status, body) = raw(&fresh, "POST", "/sessions/import", bytes.clone()).await;
    assert_eq!(status, StatusCode::CREATED);
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["id"], id);

    let restored = archive::decode(&bytes).unwrap();
    let config: SessionConfig = serde_json::from_value(v["config"].clone()).unwrap();
    let original = modavg_service::Session::build(fixture_csv(), config, 25).unwrap();
    let bits = |xs: &[f64]| xs.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&restored.analysis.scan.log_po), bits(&original.analysis.scan.log_po));
    assert_eq!(bits(&restored.analysis.scan.log_mlr), bits(&original.analysis.scan.log_mlr));

    let q = json!({ "tested": ["c", "d"], "censored": false });
    let (_, a) = call(&app, "POST", &format!("/sessions/{id}/test"), Some(q.clone())).await;
    let (_, b) = call(&fresh, "POST", &format!("/sessions/{id}/test"), Some(q)).await;
    assert_eq!(a, b);
}

#[tokio::test]
async fn damaged_archives_are_rejected() {
    let app = app();
    let id = create(&app, json!({})).await;
    let (_, bytes) = raw(&app, "GET", &format!("/sessions/{id}/export"), Vec::new()).await;
    for bad in [bytes[..bytes.len() - 3].to_vec(), b"not an archive".to_vec(), {
        let mut b = bytes.clone();
        // Flip a character inside the embedded CSV.
        let pos = b.windows(6).position(|w| w == b"y,a,b,").unwrap();
        b[pos] = b'z';
        b
    }] {
        let (status, body) = raw(&app, "POST", "/sessions/import", bad).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
        let v: Value = serde_json::from_slice(&body).unwrap();
        assert_eq!(v["error"], "invalid_archive");
    }
}

#[tokio::test]
async fn error_shapes() {
    let app = app();
    let (status, v) = call(&app, "GET", "/sessions/deadbeef", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["error"], "not_found");

    let (status, v) = call(&app, "POST", "/sessions", Some(json!({ "csv": "y,a\n1,x\n" }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "parse_error");

    let (status, v) = call(&app, "POST", "/sessions", Some(json!({ "data": 1 }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "bad_request");

    let id = create(&app, json!({})).await;
    let (status, v) = call(&app, "POST", &format!("/sessions/{id}/test"), Some(json!({ "tested": ["zz", 9] }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["variables"], json!(["zz", "9"]));
    let (status, v) = call(&app, "POST", &format!("/sessions/{id}/test"), Some(json!({ "tested": [] }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "empty_tested_set");

    let (status, _) = call(&app, "GET", "/nowhere", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn scan_cap_is_enforced() {
    let app = router(Arc::new(Store::new(3)));
    let (status, v) = call(&app, "POST", "/sessions", Some(json!({ "csv": fixture_csv() }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"], "too_many_variables");
    assert_eq!(v["nu"], 4);
}

#[tokio::test]
async fn sub_analysis_uses_declared_family() {
    let app = app();
    let config = json!({ "sub_analysis": { "declared_nu": 49, "excluded": ["e", "f"] } });
    let id = create(&app, config).await;
    let (_, s) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(s["nu_family"], 49);
    let (_, v) = call(&app, "POST", &format!("/sessions/{id}/test"), Some(json!({ "tested": ["c"] }))).await;
    assert_eq!(v["report"]["nu_family"], 49);
    assert_eq!(v["report"]["mode"], json!({ "kind": "sub_analysis", "excluded": ["e", "f"] }));

    let bad = json!({ "csv": fixture_csv(), "config": { "sub_analysis": { "declared_nu": 2 } } });
    let (status, _) = call(&app, "POST", "/sessions", Some(bad)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn concurrent_identical_uploads_share_one_session() {
    let app = app();
    let tasks: Vec<_> = (0..8)
        .map(|_| {
            let app = app.clone();
            tokio::spawn(async move { call(&app, "POST", "/sessions", Some(json!({ "csv": fixture_csv() }))).await })
        })
        .collect();
    let mut ids = Vec::new();
    let mut new = 0;
    for t in tasks {
        let (status, v) = t.await.unwrap();
        new += (status == StatusCode::CREATED) as usize;
        ids.push(v["id"].clone());
    }
    assert_eq!(new, 1);
    assert!(ids.windows(2).all(|w| w[0] == w[1]));
}
