use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use tsms_core::optimizer::GaConfig;
use tsms_core::orchestrator::scenario_hash;
use tsms_core::scenarios::congested_day;
use tsms_service::api::{router, AppState};

fn small() -> tsms_core::domain::Scenario {
    let mut s = congested_day();
    s.name = "small".into();
    s.ga = GaConfig {
        population: 16,
        generations: 8,
        ..GaConfig::default()
    };
    s
}

fn app(state: &AppState) -> Router {
    router(state.clone(), None).unwrap()
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, v)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    call(app, Method::GET, uri, None).await
}

async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    call(app, Method::POST, uri, Some(body)).await
}

async fn wait_done(app: &Router, id: u64) -> Value {
    for _ in 0..1200 {
        let (status, h) = get(app, &format!("/runs/{id}")).await;
        assert_eq!(status, StatusCode::OK);
        match h["status"].as_str().unwrap() {
            "done" => return h,
            "failed" => panic!("run {id} failed: {h}"),
            _ => tokio::time::sleep(Duration::from_millis(100)).await,
        }
    }
    panic!("run {id} did not finish");
}

/// Checks `v` against a component schema of the published document.
fn conforms(name: &str, v: &Value) {
    let spec = tsms_service::openapi::document();
    let schema = json!({
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "$ref": format!("#/components/schemas/{name}"),
        "components": spec["components"],
    });
    let validator = jsonschema::validator_for(&schema).expect("schema compiles");
    let errors: Vec<String> = validator.iter_errors(v).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    assert!(errors.is_empty(), "{name}: {errors:?}");
}

fn assert_error(v: &Value) {
    conforms("Error", v);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn spec_lists_every_route() {
    let state = AppState::new(None, None);
    let (status, spec) = get(&app(&state), "/spec").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(spec["openapi"], "3.1.0");
    for p in ["/runs", "/runs/{id}", "/runs/{id}/front", "/runs/{id}/tradeoff", "/runs/{id}/select", "/runs/{id}/alpha", "/runs/{id}/report", "/runs/{id}/shifts"] {
        assert!(spec["paths"][p].is_object(), "{p} missing");
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn unknown_runs_are_not_found() {
    let state = AppState::new(None, None);
    let app = app(&state);
    for uri in ["/runs/42", "/runs/42/front", "/runs/abc", "/runs/42/report", "/nothing"] {
        let (status, v) = get(&app, uri).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{uri}");
        assert_error(&v);
    }
    let (status, _) = post(&app, "/runs/42/select", json!({ "solution_index": 0 })).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = post(&app, "/runs/42/alpha", json!({ "alpha": 1.0 })).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn bad_run_requests_are_unprocessable() {
    let state = AppState::new(None, None);
    let app = app(&state);
    let mut bad = small();
    bad.s_max = 1;
    for body in [
        json!({ "scenario": "no_such_scenario" }),
        json!({ "scenario": "../etc/passwd" }),
        json!({ "scenario": 12 }),
        json!({ "scenario": "congested", "policy": "cheapest" }),
        json!({ "scenario": "congested", "alpha": -0.5 }),
        json!({ "scenario": "congested", "colour": "red" }),
        json!({ "seed": 1 }),
        serde_json::to_value(&bad).map(|s| json!({ "scenario": s })).unwrap(),
    ] {
        let (status, v) = post(&app, "/runs", body.clone()).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
        assert_error(&v);
    }
    let req = Request::builder()
        .method(Method::POST)
        .uri("/runs")
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from("{ nope"))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::UNPROCESSABLE_ENTITY);
    let (_, runs) = get(&app, "/runs").await;
    assert_eq!(runs, json!([]));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn run_front_select_and_alpha() {
    let data = tempfile::tempdir().unwrap();
    let state = AppState::new(None, Some(data.path().to_path_buf()));
    let app = app(&state);
    let scenario = small();
    let hash = scenario_hash(&scenario);

    // held queue: the job stays queued and its results are not available yet
    let guard = state.hold(&hash).await;
    let (status, h) = post(&app, "/runs", json!({ "scenario": scenario, "seed": 4 })).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_eq!(h["status"], "queued");
    assert_eq!(h["scenario_hash"], hash.as_str());
    assert_eq!(h["progress"]["windows_total"], 10);
    assert_eq!(h["progress"]["generations_total"], 8);
    conforms("JobHandle", &h);
    let id = h["id"].as_u64().unwrap();
    for tail in ["front", "tradeoff", "report", "shifts"] {
        let (status, v) = get(&app, &format!("/runs/{id}/{tail}")).await;
        assert_eq!(status, StatusCode::CONFLICT, "{tail}");
        assert_error(&v);
    }
    let (status, _) = post(&app, &format!("/runs/{id}/select"), json!({ "solution_index": 0 })).await;
    assert_eq!(status, StatusCode::CONFLICT);
    drop(guard);

    let h = wait_done(&app, id).await;
    assert_eq!(h["progress"]["windows_done"], 10);
    conforms("JobHandle", &h);
    assert!(data.path().join(format!("jobs/{id}/manifest.json")).is_file());
    assert!(data.path().join(format!("jobs/{id}/report.json")).is_file());

    let (status, front) = get(&app, &format!("/runs/{id}/front")).await;
    assert_eq!(status, StatusCode::OK);
    conforms("Front", &front);
    assert_eq!(front["crane_cost_eur"], 205.0);
    let windows = front["windows"].as_array().unwrap();
    assert_eq!(windows.len(), 10);
    for w in windows {
        let identity = &w["identity"];
        for (i, m) in w["members"].as_array().unwrap().iter().enumerate() {
            assert_eq!(m["index"], i);
            let gain = identity["z3_crane_eur"].as_f64().unwrap() - m["objectives"]["z3_crane_eur"].as_f64().unwrap();
            assert!((m["terminal_gain_eur"].as_f64().unwrap() - gain).abs() < 1e-9);
        }
    }

    let (status, curve) = get(&app, &format!("/runs/{id}/tradeoff")).await;
    assert_eq!(status, StatusCode::OK);
    conforms("Tradeoff", &curve);
    let curve = curve.as_array().unwrap();
    for pair in curve.windows(2) {
        assert!(pair[0]["terminal_gain_eur"].as_f64() < pair[1]["terminal_gain_eur"].as_f64());
        assert!(pair[0]["carrier_disutility"].as_f64() < pair[1]["carrier_disutility"].as_f64());
    }

    let (status, report) = get(&app, &format!("/runs/{id}/report")).await;
    assert_eq!(status, StatusCode::OK);
    conforms("DayReport", &report);
    let (_, shifts) = get(&app, &format!("/runs/{id}/shifts")).await;
    conforms("Shifts", &shifts);
    assert_eq!(shifts["rescheduled"], report["rescheduled"]);
    if report["rescheduled"].as_u64().unwrap() > 0 {
        let total: f64 = shifts["shifts"]["by_commodity"].as_object().unwrap().values().map(|v| v.as_f64().unwrap()).sum();
        assert!((total - 100.0).abs() < 1e-9);
    }

    // pick a window with members and commit its first member
    let w = windows.iter().find(|w| !w["members"].as_array().unwrap().is_empty()).unwrap();
    let hour = w["hour"].as_u64().unwrap();
    let size = w["members"].as_array().unwrap().len();
    let (status, v) = post(&app, &format!("/runs/{id}/select"), json!({ "solution_index": size, "hour": hour })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{v}");
    for body in [json!({}), json!({ "policy": "min_z1", "solution_index": 0 }), json!({ "policy": "min_z1", "hour": 3 }), json!({ "policy": "bogus" })] {
        let (status, v) = post(&app, &format!("/runs/{id}/select"), body.clone()).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
        assert_error(&v);
    }

    let (status, sel) = post(&app, &format!("/runs/{id}/select"), json!({ "solution_index": 0, "hour": hour })).await;
    assert_eq!(status, StatusCode::OK, "{sel}");
    conforms("SelectResponse", &sel);
    assert_eq!(sel["committed"]["planning_hour"], hour);
    let expected = &w["members"][0]["objectives"];
    assert_eq!(&sel["committed"]["objectives"], expected);
    let d = sel["delta"]["total_gain_eur"].as_f64().unwrap();
    let new_total = sel["report"]["total_gain_eur"].as_f64().unwrap();
    assert!((new_total - report["total_gain_eur"].as_f64().unwrap() - d).abs() < 1e-9);
    // the finished run is immutable and selection is idempotent
    let (_, after) = get(&app, &format!("/runs/{id}/report")).await;
    assert_eq!(after, report);
    let (_, again) = post(&app, &format!("/runs/{id}/select"), json!({ "solution_index": 0, "hour": hour })).await;
    assert_eq!(again, sel);

    // re-selecting with the run's own policy reproduces the run
    let (status, same) = post(&app, &format!("/runs/{id}/select"), json!({ "policy": "max_monetary_gain" })).await;
    assert_eq!(status, StatusCode::OK, "{same}");
    assert_eq!(same["report"], report);
    assert_eq!(same["delta"]["total_gain_eur"], 0.0);
    assert_eq!(same["delta"]["rescheduled"], 0);
    let (status, _) = post(&app, &format!("/runs/{id}/select"), json!({ "policy": "min_z1" })).await;
    assert_eq!(status, StatusCode::OK);

    // alpha re-run as a child job
    for bad in [json!({ "alpha": -1.0 }), json!({ "alpha": "high" }), json!({})] {
        let (status, v) = post(&app, &format!("/runs/{id}/alpha"), bad.clone()).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{bad}");
        assert_error(&v);
    }
    let (status, child) = post(&app, &format!("/runs/{id}/alpha"), json!({ "alpha": 2.0 })).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    conforms("JobHandle", &child);
    assert_eq!(child["parent"], id);
    assert_eq!(child["alpha"], 2.0);
    let child_id = child["id"].as_u64().unwrap();
    assert_ne!(child_id, id);
    wait_done(&app, child_id).await;
    let (_, front) = get(&app, &format!("/runs/{child_id}/front")).await;
    assert_eq!(front["crane_cost_eur"], 285.0);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn queued_runs_of_a_scenario_finish_in_order_with_equal_results() {
    let state = AppState::new(None, None);
    let app = app(&state);
    let scenario = small();
    let guard = state.hold(&scenario_hash(&scenario)).await;
    let mut ids = Vec::new();
    for _ in 0..2 {
        let (status, h) = post(&app, "/runs", json!({ "scenario": scenario, "seed": 9 })).await;
        assert_eq!(status, StatusCode::ACCEPTED);
        ids.push(h["id"].as_u64().unwrap());
    }
    tokio::time::sleep(Duration::from_millis(200)).await;
    for id in &ids {
        assert_eq!(get(&app, &format!("/runs/{id}")).await.1["status"], "queued");
    }
    drop(guard);
    wait_done(&app, ids[0]).await;
    let second = get(&app, &format!("/runs/{}", ids[1])).await.1;
    assert_ne!(second["status"], "failed");
    wait_done(&app, ids[1]).await;
    let (_, a) = get(&app, &format!("/runs/{}/report", ids[0])).await;
    let (_, b) = get(&app, &format!("/runs/{}/report", ids[1])).await;
    assert_eq!(a, b);
    let (_, runs) = get(&app, "/runs").await;
    assert_eq!(runs.as_array().unwrap().len(), 2);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn named_scenarios_come_from_the_scenario_directory() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = small();
    s.name = "tiny".into();
    std::fs::write(dir.path().join("tiny.json"), s.to_json()).unwrap();
    let state = AppState::new(Some(dir.path().to_path_buf()), None);
    let app = app(&state);
    let (status, h) = post(&app, "/runs", json!({ "scenario": "tiny" })).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_eq!(h["scenario"], "tiny");
    assert_eq!(h["scenario_hash"], scenario_hash(&s).as_str());
    assert_eq!(h["seed"], 1);
    wait_done(&app, h["id"].as_u64().unwrap()).await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn cors_preflight_is_answered() {
    let state = AppState::new(None, None);
    let app = router(state, Some("http://localhost:5173")).unwrap();
    let req = Request::builder()
        .method(Method::OPTIONS)
        .uri("/runs")
        .header(header::ORIGIN, "http://localhost:5173")
        .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert_eq!(
        resp.headers().get(header::ACCESS_CONTROL_ALLOW_ORIGIN).unwrap(),
        "http://localhost:5173"
    );
    assert!(router(AppState::new(None, None), Some("bad\norigin")).is_err());
}
