//! HTTP/JSON front end over [`swarmtune_core::api`].
//!
//! Every handler runs the synchronous core operation on the blocking pool,
//! so long optimizations do not stall the reactor.

use std::net::SocketAddr;

use axum::extract::rejection::JsonRejection;
use axum::extract::FromRequest;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::de::DeserializeOwned;
use serde::Serialize;
use swarmtune_core::api::{
    self, ApiError, ErrorCode, OptimizeRequest, ReportRequest, ShapesRequest,
};
use tokio::net::TcpListener;

/// JSON extractor whose rejections are reported as [`ApiError`] bodies.
pub struct Json<T>(pub T);

impl<S, T> FromRequest<S> for Json<T>
where
    T: DeserializeOwned,
    S: Send + Sync,
{
    type Rejection = Failure;

    async fn from_request(req: axum::extract::Request, state: &S) -> Result<Self, Self::Rejection> {
        match axum::Json::<T>::from_request(req, state).await {
            Ok(axum::Json(v)) => Ok(Json(v)),
            Err(rej) => Err(Failure(ApiError::usage(rejection_message(&rej)))),
        }
    }
}

fn rejection_message(rej: &JsonRejection) -> String {
    format!("invalid request body: {}", rej.body_text())
}

impl<T: Serialize> IntoResponse for Json<T> {
    fn into_response(self) -> Response {
        axum::Json(self.0).into_response()
    }
}

pub struct Failure(pub ApiError);

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.code.http_status())
            .unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, axum::Json(self.0)).into_response()
    }
}

async fn blocking<Req, Resp, F>(req: Req, op: F) -> Result<Json<Resp>, Failure>
where
    Req: Send + 'static,
    Resp: Send + 'static,
    F: FnOnce(&Req) -> Result<Resp, ApiError> + Send + 'static,
{
    match tokio::task::spawn_blocking(move || op(&req)).await {
        Ok(Ok(resp)) => Ok(Json(resp)),
        Ok(Err(e)) => {
            tracing::warn!(code = ?e.code, "{}", e.message);
            Err(Failure(e))
        }
        Err(join) => Err(Failure(ApiError::new(
            ErrorCode::Internal,
            format!("handler panicked: {join}"),
        ))),
    }
}

async fn health() -> &'static str {
    "ok"
}

async fn shapes(Json(req): Json<ShapesRequest>) -> Result<Json<api::ShapesResponse>, Failure> {
    blocking(req, api::shapes).await
}

async fn params(Json(req): Json<ShapesRequest>) -> Result<Json<api::ParamsResponse>, Failure> {
    blocking(req, api::params).await
}

async fn validate(Json(req): Json<ShapesRequest>) -> Result<Json<api::ValidateResponse>, Failure> {
    blocking(req, api::validate).await
}

async fn optimize(
    Json(req): Json<OptimizeRequest>,
) -> Result<Json<api::OptimizeResponse>, Failure> {
    tracing::info!(dataset = ?req.dataset, runs = req.runs, gens = req.gens, sols = req.sols, "optimize");
    blocking(req, api::optimize).await
}

async fn report(Json(req): Json<ReportRequest>) -> Result<Json<api::ReportResponse>, Failure> {
    blocking(req, api::report).await
}

async fn not_found() -> Failure {
    Failure(ApiError::usage("no such endpoint"))
}

pub fn router() -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/shapes", post(shapes))
        .route("/v1/params", post(params))
        .route("/v1/validate", post(validate))
        .route("/v1/optimize", post(optimize))
        .route("/v1/report", post(report))
        .fallback(not_found)
}

/// Binds `addr` and serves in a background task. Returns the bound address
/// (useful with port 0).
pub async fn spawn(addr: SocketAddr) -> std::io::Result<SocketAddr> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, router()).await {
            tracing::error!("server stopped: {e}");
        }
    });
    Ok(local)
}

/// Serves on `addr` until Ctrl-C.
pub async fn serve(addr: SocketAddr) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router())
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
