//! Typed async client for the repsel HTTP service.

use std::time::Duration;

use reqwest::{Method, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use repsel_core::api::{
    DecideRequest, DecideResponse, ErrorBody, EvaluateRequest, GraphView, JobState, JobStatus, LoadRequest,
    ReplayRequest, ReplayResponse, SessionSnapshot, VoiRequest, VoiResponse,
};
use repsel_core::ensemble::VarianceModel;
use repsel_core::interaction::GestureConfig;
use repsel_core::representative::{Action, CandidateReport};
use repsel_core::session::{ClusterParams, SessionFile};
use repsel_core::spatialquery::{CutResult, LensParams};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),
    /// The server answered with an error body.
    #[error("{status} {}: {}", .body.error, .body.message)]
    Api { status: StatusCode, body: ErrorBody },
    #[error("clustering job {job} ended {state:?}: {message}")]
    Job { job: u64, state: JobState, message: String },
    #[error("timed out waiting for clustering job {0}")]
    Timeout(u64),
}

impl ClientError {
    /// Error code from the server body, if any.
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Api { body, .. } => Some(&body.error),
            _ => None,
        }
    }
}

pub type Result<T, E = ClientError> = std::result::Result<T, E>;

#[derive(Debug, Clone)]
pub struct Client {
    http: reqwest::Client,
    base: String,
    poll_interval: Duration,
    poll_timeout: Duration,
}

impl Client {
    /// `base` like `http://127.0.0.1:8080`; a trailing slash is ignored.
    pub fn new(base: impl Into<String>) -> Self {
        let mut base = base.into();
        while base.ends_with('/') {
            base.pop();
        }
        if !base.contains("://") {
            base = format!("http://{base}");
        }
        Self {
            http: reqwest::Client::new(),
            base,
            poll_interval: Duration::from_millis(20),
            poll_timeout: Duration::from_secs(600),
        }
    }

    pub fn with_polling(mut self, interval: Duration, timeout: Duration) -> Self {
        self.poll_interval = interval;
        self.poll_timeout = timeout;
        self
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    async fn call<B: Serialize, T: DeserializeOwned>(&self, method: Method, path: &str, body: Option<&B>) -> Result<T> {
        let mut req = self.http.request(method, format!("{}{path}", self.base));
        if let Some(b) = body {
            req = req.json(b);
        }
        let resp = req.send().await?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let text = resp.text().await?;
        let body = serde_json::from_str(&text).unwrap_or(ErrorBody {
            error: "http".into(),
            message: text,
        });
        Err(ClientError::Api { status, body })
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        self.call::<(), T>(Method::GET, path, None).await
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        self.call(Method::POST, path, Some(body)).await
    }

    pub async fn session(&self) -> Result<SessionSnapshot> {
        self.get("/session").await
    }

    pub async fn load_ensemble(&self, manifest: &str, properties: Option<Vec<String>>) -> Result<SessionSnapshot> {
        let req = LoadRequest {
            manifest: manifest.to_string(),
            properties,
        };
        self.post("/ensemble", &req).await
    }

    pub async fn variance(&self) -> Result<VarianceModel> {
        self.get("/variance").await
    }

    pub async fn set_voi(&self, req: &VoiRequest) -> Result<VoiResponse> {
        self.post("/voi", req).await
    }

    /// Starts a clustering job without waiting for it.
    pub async fn start_cluster(&self, params: &ClusterParams) -> Result<JobStatus> {
        self.post("/cluster", params).await
    }

    pub async fn cluster_status(&self, job: Option<u64>) -> Result<JobStatus> {
        match job {
            Some(id) => self.get(&format!("/cluster/status?job={id}")).await,
            None => self.get("/cluster/status").await,
        }
    }

    /// Polls `job` until it leaves the running state.
    pub async fn wait_for(&self, job: u64) -> Result<JobStatus> {
        let deadline = tokio::time::Instant::now() + self.poll_timeout;
        loop {
            let status = self.cluster_status(Some(job)).await?;
            match status.state {
                JobState::Running => {}
                JobState::Done => return Ok(status),
                state => {
                    return Err(ClientError::Job {
                        job,
                        state,
                        message: status.message.unwrap_or_default(),
                    })
                }
            }
            if tokio::time::Instant::now() >= deadline {
                return Err(ClientError::Timeout(job));
            }
            tokio::time::sleep(self.poll_interval).await;
        }
    }

    /// Starts clustering, waits for it and returns the graph.
    pub async fn cluster(&self, params: &ClusterParams) -> Result<GraphView> {
        let job = self.start_cluster(params).await?;
        self.wait_for(job.job).await?;
        self.graph().await
    }

    pub async fn graph(&self) -> Result<GraphView> {
        self.get("/graph").await
    }

    pub async fn evaluate(&self, candidate: usize) -> Result<CandidateReport> {
        self.post("/evaluate", &EvaluateRequest { candidate }).await
    }

    pub async fn decide(&self, candidate: usize, action: Action) -> Result<DecideResponse> {
        self.post("/decide", &DecideRequest { candidate, action }).await
    }

    pub async fn lens_query(&self, lens: &LensParams) -> Result<CutResult> {
        self.post("/lens/query", lens).await
    }

    pub async fn export(&self) -> Result<SessionFile> {
        self.get("/export").await
    }

    pub async fn import(&self, file: &SessionFile) -> Result<SessionSnapshot> {
        self.post("/import", file).await
    }

    pub async fn replay(&self, trace: &str, config: Option<GestureConfig>) -> Result<String> {
        let req = ReplayRequest {
            trace: trace.to_string(),
            config,
        };
        let resp: ReplayResponse = self.post("/replay", &req).await?;
        Ok(resp.commands)
    }
}
