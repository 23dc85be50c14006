use swarmtune_client::{Client, ClientError};
use swarmtune_core::api::{ErrorCode, OptimizeRequest, ReportRequest, ShapesRequest};
use swarmtune_core::{Dataset, EvaluatorSpec};

async fn client() -> Client {
    let addr = swarmtune_server::spawn("127.0.0.1:0".parse().unwrap())
        .await
        .unwrap();
    Client::new(format!("http://{addr}/"))
}

fn req(vector: &str, input: &str) -> ShapesRequest {
    ShapesRequest {
        vector: vector.into(),
        input: input.into(),
        num_classes: None,
    }
}

#[tokio::test]
async fn params_over_http() {
    let c = client().await;
    c.health().await.unwrap();
    let r = c
        .params(&req("64-6-6-1-1-2-5-64-2-3-1-1-1-1-125-14", "32x32x3"))
        .await
        .unwrap();
    assert_eq!(r.param_count, 321_001);
}

#[tokio::test]
async fn api_errors_keep_their_code() {
    let c = client().await;
    match c
        .shapes(&req("32-5-5-1-1-2-2-64-13-5-1-1-2-2-100-10", "28x28x1"))
        .await
    {
        Err(ClientError::Api(e)) => assert_eq!(e.code, ErrorCode::Infeasible),
        other => panic!("{other:?}"),
    }
    match c.params(&req("1-2-3", "28x28x1")).await {
        Err(ClientError::Api(e)) => assert_eq!(e.code, ErrorCode::Usage),
        other => panic!("{other:?}"),
    }
}

#[tokio::test]
async fn optimize_roundtrip_preserves_floats() {
    let c = client().await;
    let mut r = OptimizeRequest::new(
        Dataset::FashionMnist,
        EvaluatorSpec::Separable { target: None },
    );
    r.runs = 2;
    r.gens = 2;
    r.sols = 3;
    let out = c.optimize(&r).await.unwrap();
    let rep = c
        .report(&ReportRequest {
            archive_jsonl: out.archive_jsonl.clone(),
        })
        .await
        .unwrap();
    assert_eq!(rep.summary, out.summary);
    assert_eq!(rep.runs, out.runs);
}

#[tokio::test]
async fn unreachable_service() {
    let c = Client::new("http://127.0.0.1:9");
    assert!(matches!(c.health().await, Err(ClientError::Transport(_))));
}
