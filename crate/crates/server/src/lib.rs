//! HTTP/JSON front end over one [`AnalysisSession`].
//!
//! Reads share a lock; mutations queue on its write side. Clustering runs on
//! the blocking pool and is installed only if neither the session nor its
//! VOI changed while it ran.

mod error;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use tokio::net::TcpListener;
use tokio::sync::{Mutex, RwLock};

use repsel_core::api::{
    DecideRequest, DecideResponse, EvaluateRequest, GraphView, JobState, JobStatus, LoadRequest, ReplayRequest,
    ReplayResponse, SessionSnapshot, VoiRequest, VoiResponse,
};
use repsel_core::ensemble::{self, VarianceModel};
use repsel_core::interaction::{self, GestureConfig};
use repsel_core::representative::CandidateReport;
use repsel_core::session::{AnalysisSession, ClusterParams, SessionError, SessionFile};
use repsel_core::spatialquery::{CutResult, FrustumLens, LensParams, QueryError};

pub use error::ApiError;
use error::Body;

type ApiResult<T> = Result<Json<T>, ApiError>;

struct Loaded {
    session: AnalysisSession,
    /// Bumped whenever the session is replaced.
    generation: u64,
}

struct Inner {
    session: RwLock<Option<Loaded>>,
    jobs: Mutex<BTreeMap<u64, JobStatus>>,
    next_job: AtomicU64,
    next_generation: AtomicU64,
    data_dir: PathBuf,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    /// Relative manifest paths resolve against `data_dir`.
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self(Arc::new(Inner {
            session: RwLock::new(None),
            jobs: Mutex::new(BTreeMap::new()),
            next_job: AtomicU64::new(1),
            next_generation: AtomicU64::new(1),
            data_dir: data_dir.into(),
        }))
    }

    fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.0.data_dir.join(p)
        }
    }

    async fn install(&self, session: AnalysisSession) -> SessionSnapshot {
        let generation = self.0.next_generation.fetch_add(1, Ordering::SeqCst);
        let snapshot = session.snapshot();
        *self.0.session.write().await = Some(Loaded { session, generation });
        snapshot
    }

    async fn set_job(&self, status: JobStatus) {
        self.0.jobs.lock().await.insert(status.job, status);
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/session", get(get_session))
        .route("/ensemble", post(load_ensemble))
        .route("/variance", get(get_variance))
        .route("/voi", post(set_voi))
        .route("/cluster", post(start_cluster))
        .route("/cluster/status", get(cluster_status))
        .route("/graph", get(get_graph))
        .route("/evaluate", post(evaluate))
        .route("/decide", post(decide))
        .route("/lens/query", post(lens_query))
        .route("/export", get(export))
        .route("/import", post(import))
        .route("/replay", post(replay))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: TcpListener, state: AppState) -> std::io::Result<()> {
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state)).await
}

/// Binds `addr` and serves in a background task; returns the bound address.
pub async fn spawn(addr: SocketAddr, state: AppState) -> std::io::Result<SocketAddr> {
    let listener = TcpListener::bind(addr).await?;
    let bound = listener.local_addr()?;
    tokio::spawn(async move {
        if let Err(e) = serve(listener, state).await {
            tracing::error!("server stopped: {e}");
        }
    });
    Ok(bound)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))
}

macro_rules! session {
    ($guard:expr) => {
        &$guard.as_ref().ok_or_else(ApiError::no_session)?.session
    };
}

async fn get_session(State(st): State<AppState>) -> ApiResult<SessionSnapshot> {
    let guard = st.0.session.read().await;
    Ok(Json(session!(guard).snapshot()))
}

async fn load_ensemble(State(st): State<AppState>, Body(req): Body<LoadRequest>) -> ApiResult<SessionSnapshot> {
    let path = st.resolve(&req.manifest);
    tracing::info!(manifest = %path.display(), "loading ensemble");
    let session = blocking(move || AnalysisSession::load(&path, req.properties)).await??;
    Ok(Json(st.install(session).await))
}

async fn get_variance(State(st): State<AppState>) -> ApiResult<VarianceModel> {
    let guard = st.0.session.read().await;
    Ok(Json(session!(guard).variance().as_ref().clone()))
}

async fn set_voi(State(st): State<AppState>, Body(req): Body<VoiRequest>) -> ApiResult<VoiResponse> {
    let mut guard = st.0.session.write().await;
    let loaded = guard.as_mut().ok_or_else(ApiError::no_session)?;
    let s = &mut loaded.session;
    s.apply_voi(&req)?;
    tracing::info!(cells = s.voi().len(), revision = s.revision(), "voi set");
    Ok(Json(VoiResponse {
        revision: s.revision(),
        hash: s.voi().hash_hex(),
        cells: s.voi().cell_indices(s.ensemble().grid()),
    }))
}

async fn start_cluster(
    State(st): State<AppState>,
    Body(params): Body<ClusterParams>,
) -> Result<(StatusCode, Json<JobStatus>), ApiError> {
    let (job, generation) = {
        let guard = st.0.session.read().await;
        let loaded = guard.as_ref().ok_or_else(ApiError::no_session)?;
        (loaded.session.prepare_clustering(params)?, loaded.generation)
    };
    let id = st.0.next_job.fetch_add(1, Ordering::SeqCst);
    let running = JobStatus {
        job: id,
        state: JobState::Running,
        message: None,
    };
    st.set_job(running.clone()).await;
    tracing::info!(job = id, k = job.params().k, seed = job.params().seed, "clustering started");

    let bg = st.clone();
    tokio::spawn(async move {
        let job = Arc::new(job);
        let worker = job.clone();
        let outcome = tokio::task::spawn_blocking(move || worker.run()).await;
        let (state, message) = match outcome {
            Ok(Ok(graph)) => {
                let mut guard = bg.0.session.write().await;
                let installed = match guard.as_mut() {
                    Some(l) if l.generation == generation => l.session.install_graph(&job, graph),
                    _ => false,
                };
                if installed {
                    (JobState::Done, None)
                } else {
                    (JobState::Discarded, Some("the session or VOI changed while clustering".into()))
                }
            }
            Ok(Err(e)) => (JobState::Failed, Some(e.to_string())),
            Err(e) => (JobState::Failed, Some(e.to_string())),
        };
        tracing::info!(job = id, ?state, "clustering finished");
        bg.set_job(JobStatus { job: id, state, message }).await;
    });
    Ok((StatusCode::ACCEPTED, Json(running)))
}

#[derive(Deserialize)]
struct JobQuery {
    job: Option<u64>,
}

/// Status of `?job=N`, or of the latest job.
async fn cluster_status(State(st): State<AppState>, Query(q): Query<JobQuery>) -> ApiResult<JobStatus> {
    let jobs = st.0.jobs.lock().await;
    let found = match q.job {
        Some(id) => jobs.get(&id),
        None => jobs.values().next_back(),
    };
    found
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_job", "no such clustering job"))
}

async fn get_graph(State(st): State<AppState>) -> ApiResult<GraphView> {
    let guard = st.0.session.read().await;
    let s = session!(guard);
    let graph = s
        .graph()
        .ok_or_else(|| ApiError::from(SessionError::WorkflowOrder("no cluster graph yet".into())))?;
    Ok(Json(GraphView {
        graph: graph.export(),
        stale: s.graph_status() == repsel_core::api::GraphStatus::Stale,
        members: s.representative_set().map(|r| r.members().to_vec()).unwrap_or_default(),
        ranking: s.ranking()?,
    }))
}

async fn evaluate(State(st): State<AppState>, Body(req): Body<EvaluateRequest>) -> ApiResult<CandidateReport> {
    let guard = st.0.session.read().await;
    Ok(Json(session!(guard).evaluate(req.candidate)?))
}

async fn decide(State(st): State<AppState>, Body(req): Body<DecideRequest>) -> ApiResult<DecideResponse> {
    let mut guard = st.0.session.write().await;
    let s = &mut guard.as_mut().ok_or_else(ApiError::no_session)?.session;
    let decision = s.decide(req.candidate, req.action)?.clone();
    tracing::info!(candidate = req.candidate, action = ?req.action, "decision recorded");
    Ok(Json(DecideResponse {
        revision: s.revision(),
        members: s.representative_set().map(|r| r.members().to_vec()).unwrap_or_default(),
        decision,
    }))
}

async fn lens_query(State(st): State<AppState>, Body(params): Body<LensParams>) -> ApiResult<CutResult> {
    let lens = FrustumLens::try_from(params).map_err(|e: QueryError| ApiError::from(SessionError::from(e)))?;
    let session = {
        let guard = st.0.session.read().await;
        session!(guard).clone()
    };
    Ok(Json(blocking(move || session.lens_query(&lens)).await?))
}

async fn export(State(st): State<AppState>) -> ApiResult<SessionFile> {
    let guard = st.0.session.read().await;
    Ok(Json(session!(guard).export()?))
}

/// Replays an exported session against the manifest it names.
async fn import(State(st): State<AppState>, Body(file): Body<SessionFile>) -> ApiResult<SessionSnapshot> {
    let manifest = file
        .manifest
        .as_deref()
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", "session file names no manifest"))?;
    let path = st.resolve(manifest);
    tracing::info!(manifest = %path.display(), decisions = file.decisions.len(), "importing session");
    let session = blocking(move || -> Result<AnalysisSession, SessionError> {
        let ens = ensemble::load_manifest(&path)?;
        AnalysisSession::replay(&file, Arc::new(ens))
    })
    .await??;
    Ok(Json(st.install(session).await))
}

async fn replay(Body(req): Body<ReplayRequest>) -> ApiResult<ReplayResponse> {
    let config = req.config.unwrap_or_else(GestureConfig::default);
    let commands = interaction::replay_trace(&req.trace, &config)?;
    Ok(Json(ReplayResponse { commands }))
}
