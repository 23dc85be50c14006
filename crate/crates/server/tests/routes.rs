use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn post(path: &str, body: Value) -> (StatusCode, Value) {
    let req = Request::post(path)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let resp = swarmtune_server::router().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap())
}

#[tokio::test]
async fn health() {
    let resp = swarmtune_server::router()
        .oneshot(Request::get("/v1/health").body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
}

#[tokio::test]
async fn params_of_baseline() {
    let (status, body) = post(
        "/v1/params",
        json!({"vector": "32-5-5-1-1-2-2-64-5-5-1-1-2-2-100-10", "input": "28x28x1"}),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["param_count"], 155606);
}

#[tokio::test]
async fn shapes_trace() {
    let (status, body) = post(
        "/v1/shapes",
        json!({"vector": "32-5-5-1-1-1-2-64-6-2-1-1-1-1-113-10", "input": "28x28x1"}),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["trace"]["param_count"], 1538213);
}

#[tokio::test]
async fn infeasible_is_422() {
    let (status, body) = post(
        "/v1/shapes",
        json!({"vector": "32-12-5-1-1-2-2-64-5-5-1-1-2-2-100-10", "input": "28x28x1"}),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["code"], "infeasible");
    assert!(body["message"].as_str().unwrap().contains("x2 = 12"));
}

#[tokio::test]
async fn malformed_body_is_400() {
    let (status, body) = post("/v1/params", json!({"vector": 5})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["code"], "usage");
    let (status, _) = post("/v1/nope", json!({})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn validate_lists_violations() {
    let (status, body) = post(
        "/v1/validate",
        json!({"vector": "32-12-5-1-1-2-2-64-5-5-1-1-2-2-100-10", "input": "28x28x1"}),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["ok"], false);
    assert_eq!(body["messages"][0], "x2 = 12 is outside [2, 11]");
}

#[tokio::test]
async fn optimize_and_report() {
    let (status, body) = post(
        "/v1/optimize",
        json!({"dataset": "mnist", "evaluator": {"kind": "param_target", "target": null},
               "runs": 2, "gens": 2, "sols": 4, "seed": 3}),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["runs"].as_array().unwrap().len(), 2);
    let archive = body["archive_jsonl"].as_str().unwrap().to_string();
    let (status, rep) = post("/v1/report", json!({ "archive_jsonl": archive })).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(rep["summary"], body["summary"]);
}

#[tokio::test]
async fn failing_trainer_is_502_with_partial_archive() {
    let (status, body) = post(
        "/v1/optimize",
        json!({"dataset": "mnist", "evaluator": {"kind": "external", "command": "exit 1"},
               "runs": 1, "gens": 1, "sols": 2}),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert_eq!(body["code"], "evaluator_failure");
    assert!(body["partial_archive"]
        .as_str()
        .unwrap()
        .contains("\"kind\":\"header\""));
}
