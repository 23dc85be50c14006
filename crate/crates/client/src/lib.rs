//! Typed async client for the swarmtune HTTP service.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use swarmtune_core::api::{
    ApiError, OptimizeRequest, OptimizeResponse, ParamsResponse, ReportRequest, ReportResponse,
    ShapesRequest, ShapesResponse, ValidateResponse,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    /// The service answered with an error body.
    #[error("{0}")]
    Api(ApiError),
    #[error("cannot reach service: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("unexpected response (HTTP {status}): {body}")]
    Unexpected { status: u16, body: String },
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the service root, e.g. `http://127.0.0.1:8707`.
    pub fn new(base: impl Into<String>) -> Self {
        // optimizations with a real trainer can run for hours
        let http = reqwest::Client::builder()
            .connect_timeout(Duration::from_secs(10))
            .build()
            .expect("static client configuration");
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            http,
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn post<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        path: &str,
        body: &Req,
    ) -> Result<Resp, ClientError> {
        let resp = self
            .http
            .post(format!("{}{path}", self.base))
            .json(body)
            .send()
            .await?;
        let status = resp.status();
        let bytes = resp.bytes().await?;
        if status.is_success() {
            return serde_json::from_slice(&bytes).map_err(|e| ClientError::Unexpected {
                status: status.as_u16(),
                body: format!("{e}: {}", String::from_utf8_lossy(&bytes)),
            });
        }
        match serde_json::from_slice::<ApiError>(&bytes) {
            Ok(err) => Err(ClientError::Api(err)),
            Err(_) => Err(ClientError::Unexpected {
                status: status.as_u16(),
                body: String::from_utf8_lossy(&bytes).into_owned(),
            }),
        }
    }

    pub async fn health(&self) -> Result<(), ClientError> {
        let resp = self
            .http
            .get(format!("{}/v1/health", self.base))
            .send()
            .await?;
        if resp.status().is_success() {
            Ok(())
        } else {
            Err(ClientError::Unexpected {
                status: resp.status().as_u16(),
                body: resp.text().await.unwrap_or_default(),
            })
        }
    }

    pub async fn shapes(&self, req: &ShapesRequest) -> Result<ShapesResponse, ClientError> {
        self.post("/v1/shapes", req).await
    }

    pub async fn params(&self, req: &ShapesRequest) -> Result<ParamsResponse, ClientError> {
        self.post("/v1/params", req).await
    }

    pub async fn validate(&self, req: &ShapesRequest) -> Result<ValidateResponse, ClientError> {
        self.post("/v1/validate", req).await
    }

    pub async fn optimize(&self, req: &OptimizeRequest) -> Result<OptimizeResponse, ClientError> {
        self.post("/v1/optimize", req).await
    }

    pub async fn report(&self, req: &ReportRequest) -> Result<ReportResponse, ClientError> {
        self.post("/v1/report", req).await
    }
}
