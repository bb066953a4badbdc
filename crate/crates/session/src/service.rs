use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use uuscout_core::Error;

use crate::config::{OracleMode, SessionConfig};
use crate::pipeline::{ground_truth, load_inputs, partition_inputs, Inputs, Partitioned};
use crate::store::{load_all, InstanceCard, LiveSession, SessionState, Snapshot};

pub const PORT_ENV: &str = "UUSCOUT_PORT";
pub const DATA_DIR_ENV: &str = "UUSCOUT_DATA_DIR";
pub const DEFAULT_PORT: u16 = 8477;

type Shared = Arc<Mutex<LiveSession>>;

/// Sessions by id. Each session is behind its own lock, so answers to one
/// session are serialized while others proceed.
pub struct Service {
    data_dir: PathBuf,
    sessions: RwLock<HashMap<String, Shared>>,
}

impl Service {
    /// Replays every persisted session found in `data_dir`.
    pub fn open(data_dir: impl Into<PathBuf>) -> uuscout_core::Result<Arc<Self>> {
        let data_dir = data_dir.into();
        std::fs::create_dir_all(&data_dir)?;
        let sessions = load_all(&data_dir)?
            .into_iter()
            .map(|s| (s.id.clone(), Arc::new(Mutex::new(s))))
            .collect();
        Ok(Arc::new(Self { data_dir, sessions: RwLock::new(sessions) }))
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().expect("lock").keys().cloned().collect();
        ids.sort();
        ids
    }

    fn get(&self, id: &str) -> Result<Shared, ApiError> {
        self.sessions
            .read()
            .expect("lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no session {id}")))
    }

    /// Runs the pipeline up to partitioning and opens the session. Simulated
    /// sessions are answered from ground truth right away.
    pub fn create(&self, config: SessionConfig) -> uuscout_core::Result<SessionState> {
        let inputs = load_inputs(&config)?;
        let partitioned = partition_inputs(&config, &inputs)?;
        let snapshot = build_snapshot(&config, &inputs, &partitioned)?;
        let id = uuid::Uuid::new_v4().to_string();
        let mut session = LiveSession::create(&self.data_dir, id.clone(), config.clone(), snapshot)?;
        if config.oracle == OracleMode::Simulated {
            let truth = ground_truth(&config, &inputs)?;
            while let Some(q) = session.question() {
                let label = truth.verdict(&q.instance_id)?.true_label;
                session.submit(q.step, &label)?;
            }
        }
        let state = session.state();
        self.sessions.write().expect("lock").insert(id, Arc::new(Mutex::new(session)));
        Ok(state)
    }
}

/// Question cards show raw feature values; costs follow the configured model.
pub fn build_snapshot(config: &SessionConfig, inputs: &Inputs, partitioned: &Partitioned) -> uuscout_core::Result<Snapshot> {
    let raw = &inputs.raw;
    let by_id: HashMap<&str, usize> = raw.instances().iter().enumerate().map(|(i, x)| (x.id.as_str(), i)).collect();
    let costs_all = config.cost_model().costs(raw)?;
    let schema = raw.schema();
    let mut instances = Vec::with_capacity(partitioned.space.len());
    let mut costs = Vec::with_capacity(partitioned.space.len());
    for inst in partitioned.space.instances() {
        let i = by_id[inst.id.as_str()];
        let x = &raw.instances()[i];
        instances.push(InstanceCard {
            id: x.id.clone(),
            features: schema.features.iter().zip(&x.features).map(|(f, v)| (f.name.clone(), v.to_string())).collect(),
            predicted_label: x.predicted_label.clone(),
        });
        costs.push(costs_all[i]);
    }
    Ok(Snapshot {
        critical_class: config.critical_class.clone(),
        classes: schema.classes.clone(),
        gamma: config.gamma,
        budget: config.budget_for(partitioned.space.len()),
        seed: config.seed,
        policy: config.policy,
        groups: partitioned.groups(),
        descriptions: partitioned.descriptions(),
        instances,
        costs,
        partition_report: partitioned.partitioning.report(&partitioned.space),
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expected_step: Option<usize>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: impl Into<String>) -> Self {
        Self { status, body: ErrorBody { error: error.into(), expected_step: None } }
    }

    fn not_found(error: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, error)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::StaleAnswer { .. } => StatusCode::CONFLICT,
            Error::MalformedAnswer(_)
            | Error::Validation(_)
            | Error::Config(_)
            | Error::Parse { .. }
            | Error::DuplicateId(_)
            | Error::EmptySearchSpace { .. }
            | Error::DegenerateCostRange(_) => StatusCode::BAD_REQUEST,
            Error::UnknownInstance(_) => StatusCode::NOT_FOUND,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let expected_step = match &e {
            Error::StaleAnswer { expected, .. } => *expected,
            _ => None,
        };
        Self { status, body: ErrorBody { error: e.to_string(), expected_step } }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnswerRequest {
    pub session_id: String,
    pub step: usize,
    pub label: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuestionResponse {
    pub session_id: String,
    pub done: bool,
    pub question: Option<crate::store::QuestionView>,
}

async fn create_session(
    State(svc): State<Arc<Service>>,
    Json(config): Json<SessionConfig>,
) -> Result<(StatusCode, Json<SessionState>), ApiError> {
    let state = tokio::task::spawn_blocking(move || svc.create(config))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok((StatusCode::CREATED, Json(state)))
}

async fn get_state(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> Result<Json<SessionState>, ApiError> {
    let s = svc.get(&id)?;
    let state = s.lock().expect("lock").state();
    Ok(Json(state))
}

async fn get_question(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> Result<Json<QuestionResponse>, ApiError> {
    let s = svc.get(&id)?;
    let q = s.lock().expect("lock").question();
    Ok(Json(QuestionResponse { session_id: id, done: q.is_none(), question: q }))
}

async fn post_answer(
    State(svc): State<Arc<Service>>,
    Path(id): Path<String>,
    Json(req): Json<AnswerRequest>,
) -> Result<Json<SessionState>, ApiError> {
    if req.session_id != id {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "session_id does not match the path"));
    }
    let s = svc.get(&id)?;
    let mut session = s.lock().expect("lock");
    session.submit(req.step, &req.label)?;
    Ok(Json(session.state()))
}

async fn get_report(
    State(svc): State<Arc<Service>>,
    Path(id): Path<String>,
) -> Result<Json<crate::store::SessionReport>, ApiError> {
    let s = svc.get(&id)?;
    let report = s.lock().expect("lock").report();
    Ok(Json(report))
}

pub fn router(svc: Arc<Service>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_state))
        .route("/sessions/{id}/question", get(get_question))
        .route("/sessions/{id}/answer", post(post_answer))
        .route("/sessions/{id}/report", get(get_report))
        .with_state(svc)
}

/// Serves until Ctrl-C. Every committed answer is already on disk, so a hard
/// kill loses nothing either.
pub async fn serve(svc: Arc<Service>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(svc))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
