use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tapmobo::pareto::dominates;
use tapmobo::problem::SyntheticProblem;
use tapmobo::session::SessionConfig;
use tapmobo_service::{router, AppState};
use tower::ServiceExt;

fn small_config() -> SessionConfig {
    let mut cfg = SessionConfig::default();
    cfg.n_seeds = 4;
    cfg.max_steps = 3;
    cfg.pixels_per_line = 64;
    cfg.final_scan_lines = 4;
    cfg.gp.restarts = 2;
    cfg.gp.max_iters = 60;
    cfg.acquisition.mc_samples = 32;
    cfg.acquisition.candidate_subsample = 256;
    cfg
}

async fn call(app: &AppState, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = call_raw(app, method, uri, body).await;
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or(Value::Null)
    };
    (status, v)
}

async fn call_raw(app: &AppState, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = router(app.clone()).oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn create(app: &AppState, cfg: &SessionConfig) -> String {
    let (status, v) = call(app, Method::POST, "/sessions", Some(json!({ "config": cfg }))).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    v["id"].as_str().unwrap().to_string()
}

async fn wait_idle(app: &AppState, id: &str) -> Value {
    for _ in 0..3000 {
        let (_, v) = call(app, Method::GET, &format!("/sessions/{id}/state"), None).await;
        if v["busy"] == json!(false) {
            return v;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("job did not finish");
}

async fn run(app: &AppState, id: &str, body: Value) -> Value {
    let (status, v) = call(app, Method::POST, &format!("/sessions/{id}/run"), Some(body)).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{v}");
    wait_idle(app, id).await
}

#[tokio::test(flavor = "multi_thread")]
async fn create_default_and_unique_ids() {
    let app = AppState::ephemeral();
    let (s1, a) = call(&app, Method::POST, "/sessions", None).await;
    let (s2, b) = call(&app, Method::POST, "/sessions", Some(json!({}))).await;
    assert_eq!(s1, StatusCode::CREATED);
    assert_eq!(s2, StatusCode::CREATED);
    assert_ne!(a["id"], b["id"]);
    assert_eq!(a["id"].as_str().unwrap().len(), 36);
    let (_, list) = call(&app, Method::GET, "/sessions", None).await;
    assert_eq!(list["sessions"].as_array().unwrap().len(), 2);
}

#[tokio::test(flavor = "multi_thread")]
async fn malformed_bounds_name_the_axis() {
    let app = AppState::ephemeral();
    let mut cfg = small_config();
    cfg.grid.axes[1].min = 0.95;
    cfg.grid.axes[1].max = 0.2;
    let (status, v) = call(&app, Method::POST, "/sessions", Some(json!({ "config": cfg }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["axis"], "setpoint_fraction");
    assert!(v["message"].as_str().unwrap().contains("setpoint_fraction"));

    let (status, _) = call(&app, Method::POST, "/sessions", Some(json!({ "config": { "n_seeds": "ten" } }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test(flavor = "multi_thread")]
async fn infeasible_region_is_a_conflict() {
    let app = AppState::ephemeral();
    let mut cfg = small_config();
    cfg.grid.axes[0].min = 60.0;
    cfg.grid.axes[1].max = 0.5;
    let (status, v) = call(&app, Method::POST, "/sessions", Some(json!({ "config": cfg }))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["code"], "infeasible");
}

#[tokio::test(flavor = "multi_thread")]
async fn fresh_state_and_lookup_errors() {
    let app = AppState::ephemeral();
    let id = create(&app, &small_config()).await;
    let (status, v) = call(&app, Method::GET, &format!("/sessions/{id}/state"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["status"], "seeding");
    assert_eq!(v["observations"].as_array().unwrap().len(), 0);
    assert!(v["boundary"].is_object());

    let (status, _) = call(&app, Method::GET, "/sessions/nope/state", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, v) = call(&app, Method::GET, &format!("/sessions/{id}/predictions?reward=phase"), None).await;
    assert_eq!(status, StatusCode::CONFLICT, "{v}");
    let (status, _) = call(&app, Method::POST, &format!("/sessions/{id}/run"), Some(json!({"mode": "step"}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = call(&app, Method::PUT, &format!("/sessions/{id}/steering"), Some(json!({"weights": [1.0, 1.0, 1.0]}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test(flavor = "multi_thread")]
async fn seed_step_predict_steer_finalize() {
    let app = AppState::ephemeral();
    let cfg = small_config();
    let id = create(&app, &cfg).await;

    let st = run(&app, &id, json!({"mode": "seed"})).await;
    assert_eq!(st["status"], "active");
    assert_eq!(st["observations"].as_array().unwrap().len(), 4);
    assert_eq!(st["hv_history"]["current_ref"].as_array().unwrap().len(), 4);
    assert_eq!(st["last_job"]["state"], "done");

    let st = run(&app, &id, json!({"mode": "step", "n": 1})).await;
    assert_eq!(st["observations"].as_array().unwrap().len(), 5);

    // Front entries are mutually non-dominated and point back at observations.
    let front = st["pareto_front"]["entries"].as_array().unwrap();
    let rewards: Vec<Vec<f64>> = front
        .iter()
        .map(|e| serde_json::from_value(e["rewards"].clone()).unwrap())
        .collect();
    for a in &rewards {
        for b in &rewards {
            assert!(!dominates(a, b));
        }
    }
    for e in front {
        let src = e["source"].as_u64().unwrap() as usize;
        assert_eq!(st["observations"][src]["params"], e["params"]);
    }

    // Idempotent reads.
    let (_, a) = call_raw(&app, Method::GET, &format!("/sessions/{id}/state"), None).await;
    let (_, b) = call_raw(&app, Method::GET, &format!("/sessions/{id}/state"), None).await;
    assert_eq!(a, b);

    let (status, v) = call(
        &app,
        Method::GET,
        &format!("/sessions/{id}/predictions?reward=height_difference&gain=100&resolution=50"),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["grid"]["mean"].as_array().unwrap().len(), 2500);
    assert_eq!(v["grid"]["variance"].as_array().unwrap().len(), 2500);
    let (status, _) = call(&app, Method::GET, &format!("/sessions/{id}/predictions?reward=nope"), None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, scan) = call(&app, Method::GET, &format!("/sessions/{id}/scan/0"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(scan["lines"][0]["height_trace"].as_array().unwrap().len(), 64);
    let (status, _) = call(&app, Method::GET, &format!("/sessions/{id}/scan/9999"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, v) = call(&app, Method::PUT, &format!("/sessions/{id}/steering"), Some(json!({"weights": [1.0, 3.0, 1.0]}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["code"], "weight_out_of_range");

    let (status, neutral) = call(&app, Method::PUT, &format!("/sessions/{id}/steering"), Some(json!({"weights": [1.0, 1.0, 1.0]}))).await;
    assert_eq!(status, StatusCode::OK, "{neutral}");
    assert_eq!(neutral["predicted_rewards"].as_array().unwrap().len(), 3);
    let (status, steered) = call(&app, Method::PUT, &format!("/sessions/{id}/steering"), Some(json!({"weights": [1.0, 1.0, 1.5]}))).await;
    assert_eq!(status, StatusCode::OK);
    assert!(steered["proposed_optimum"]["params"].is_array());
    let (status, forced) = call(
        &app,
        Method::PUT,
        &format!("/sessions/{id}/steering"),
        Some(json!({"weights": [1.0, 1.0, 1.0], "force": true, "ref_override": null})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(forced["proposed_optimum"], neutral["proposed_optimum"]);

    // The next step, taken under neutral steering, lands where the neutral
    // optimum said it would.
    let st = run(&app, &id, json!({"mode": "step"})).await;
    let last = st["observations"].as_array().unwrap().last().unwrap().clone();
    assert_eq!(last["grid_index"], neutral["proposed_optimum"]["grid_index"]);

    let (_, journal) = call_raw(&app, Method::GET, &format!("/sessions/{id}/journal"), None).await;
    let text = String::from_utf8(journal).unwrap();
    let steering_lines = text.lines().filter(|l| l.contains("\"event\":\"steering\"")).count();
    assert_eq!(steering_lines, 3);

    let st = run(&app, &id, json!({"mode": "auto"})).await;
    assert_eq!(st["status"], "max-steps");
    let (status, fin) = call(&app, Method::POST, &format!("/sessions/{id}/final-scan"), None).await;
    assert_eq!(status, StatusCode::OK, "{fin}");
    assert_eq!(fin["params"].as_array().unwrap().len(), 3);
    let (_, st) = call(&app, Method::GET, &format!("/sessions/{id}/state"), None).await;
    assert_eq!(st["status"], "finalized");
    let (status, img) = call(&app, Method::GET, fin["image"].as_str().unwrap(), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(img["image"]["n_lines"], 4);
    let (status, _) = call(&app, Method::POST, &format!("/sessions/{id}/final-scan"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test(flavor = "multi_thread")]
async fn second_job_while_running_is_rejected() {
    let app = AppState::ephemeral();
    let mut cfg = small_config();
    cfg.n_seeds = 8;
    cfg.pixels_per_line = 256;
    let id = create(&app, &cfg).await;
    let (status, _) = call(&app, Method::POST, &format!("/sessions/{id}/run"), Some(json!({"mode": "auto"}))).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let (status, v) = call(&app, Method::POST, &format!("/sessions/{id}/run"), Some(json!({"mode": "step"}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["code"], "busy");
    let (status, _) = call(&app, Method::PUT, &format!("/sessions/{id}/steering"), Some(json!({"weights": [1.0, 1.0, 1.0]}))).await;
    assert_eq!(status, StatusCode::CONFLICT);

    // Snapshots taken mid-job are internally consistent.
    loop {
        let (_, st) = call(&app, Method::GET, &format!("/sessions/{id}/state"), None).await;
        let n = st["observations"].as_array().unwrap().len();
        for (i, o) in st["observations"].as_array().unwrap().iter().enumerate() {
            assert_eq!(o["iteration"], i);
        }
        assert_eq!(st["hv_history"]["current_ref"].as_array().unwrap().len(), n);
        for e in st["pareto_front"]["entries"].as_array().unwrap() {
            assert!((e["source"].as_u64().unwrap() as usize) < n);
        }
        if st["busy"] == json!(false) {
            break;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn journals_persist_and_reload() {
    let dir = tempfile::tempdir().unwrap();
    let app = AppState::open(dir.path()).unwrap();
    let id = create(&app, &small_config()).await;
    run(&app, &id, json!({"mode": "auto", "n": 1})).await;
    let path = dir.path().join(format!("{id}.jsonl"));
    let on_disk = std::fs::read_to_string(&path).unwrap();
    let (_, served) = call_raw(&app, Method::GET, &format!("/sessions/{id}/journal"), None).await;
    assert_eq!(on_disk.as_bytes(), served.as_slice());
    assert_eq!(on_disk.lines().count(), 1 + 4 + 1);

    let reopened = AppState::open(dir.path()).unwrap();
    assert_eq!(reopened.session_ids(), vec![id.clone()]);
    let (_, a) = call(&app, Method::GET, &format!("/sessions/{id}/state"), None).await;
    let (_, b) = call(&reopened, Method::GET, &format!("/sessions/{id}/state"), None).await;
    assert_eq!(a["observations"], b["observations"]);
    assert_eq!(a["hv_history"], b["hv_history"]);
}

#[tokio::test(flavor = "multi_thread")]
async fn synthetic_reference_override_moves_the_optimum() {
    let app = AppState::ephemeral();
    let mut cfg = SessionConfig::synthetic(SyntheticProblem::TwoGaussian);
    cfg.n_seeds = 20;
    cfg.max_steps = 0;
    let id = create(&app, &cfg).await;
    run(&app, &id, json!({"mode": "seed"})).await;
    let (_, sym) = call(&app, Method::PUT, &format!("/sessions/{id}/steering"), Some(json!({}))).await;
    let ref0 = sym["proposed_optimum"]["reference"]["coords"].clone();
    let r1 = ref0[0].as_f64().unwrap() - 0.6;
    let r2 = ref0[1].as_f64().unwrap();
    let (status, low) = call(
        &app,
        Method::PUT,
        &format!("/sessions/{id}/steering"),
        Some(json!({"ref_override": [r1, r2]})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(low["proposed_optimum"]["reference"]["coords"][0].as_f64().unwrap(), r1);
}
