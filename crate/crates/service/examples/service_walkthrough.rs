//! Drive the HTTP API in-process: create a synthetic session, run it to
//! completion, steer it, read a prediction slice and request the final scan.
//!
//! The same requests work against `tapmobo serve` with curl.

use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tapmobo::problem::SyntheticProblem;
use tapmobo::session::SessionConfig;
use tapmobo_service::{router, AppState};
use tower::ServiceExt;

async fn call(app: &AppState, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method.clone()).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = router(app.clone()).oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    if !uri.ends_with("/state") {
        println!("{method} {uri} -> {status}");
    }
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn settle(app: &AppState, id: &str) -> Value {
    loop {
        let (_, st) = call(app, Method::GET, &format!("/sessions/{id}/state"), None).await;
        if st["busy"] == json!(false) {
            return st;
        }
        tokio::time::sleep(Duration::from_millis(100)).await;
    }
}

#[tokio::main]
async fn main() {
    let app = AppState::ephemeral();
    let cfg = SessionConfig::synthetic(SyntheticProblem::TwoGaussian);
    let (_, handle) = call(&app, Method::POST, "/sessions", Some(json!({ "config": cfg }))).await;
    let id = handle["id"].as_str().unwrap().to_string();
    println!("session {id}, config digest {}", handle["config_digest"]);

    let (_, job) = call(&app, Method::POST, &format!("/sessions/{id}/run"), Some(json!({"mode": "auto"}))).await;
    println!("job {}", job["job"]);
    let st = settle(&app, &id).await;
    println!(
        "status {}, {} observations, {} on the front, last hypervolume {}",
        st["status"],
        st["observations"].as_array().map_or(0, Vec::len),
        st["pareto_front"]["entries"].as_array().map_or(0, Vec::len),
        st["hv_history"]["fixed_ref"].as_array().and_then(|a| a.last()).unwrap_or(&Value::Null)
    );

    for w in [0.5, 1.0, 2.0] {
        let (_, out) = call(
            &app,
            Method::PUT,
            &format!("/sessions/{id}/steering"),
            Some(json!({"weights": [w, 1.0]})),
        )
        .await;
        println!("  weights [{w}, 1] -> {} predicted {}", out["proposed_optimum"]["params"], out["predicted_rewards"]);
    }

    let (_, slice) = call(
        &app,
        Method::GET,
        &format!("/sessions/{id}/predictions?reward=reward_1&resolution=5"),
        None,
    )
    .await;
    println!("5x5 reward_1 slice: {}", slice["grid"]);

    let (status, fin) = call(&app, Method::POST, &format!("/sessions/{id}/final-scan"), None).await;
    if status.is_success() {
        println!("final params {} predicted {}", fin["params"], fin["predicted_rewards"]);
    } else {
        println!("final scan refused: {fin}");
    }
}
