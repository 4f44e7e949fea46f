//! Application state, route table and handlers.

use std::collections::{BTreeMap, HashMap};
use std::str::FromStr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::Json;
use gib_core::calibrate::RiskClass;
use gib_core::cohort::{FeatureDef, PatientRecord};
use gib_core::explain::{CurveKind, CurveSeries};
use gib_core::guidelines::{Embedder, HashingEmbedder, VectorStore};
use gib_core::model::{ModelMeta, PlotRequest, RiskEngine, RiskModel, RiskReport};
use gib_core::router::{ChatExchange, CompletionBackend, OfflineBackend, PromptSet, Router};
use gib_core::Error;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{BackendKind, ServiceConfig};
use crate::error::{ServiceError, ServiceResult};
use crate::patients::PatientDirectory;
use crate::remote::{RemoteBackend, RemoteEmbedder};
use crate::session::{self, SessionCreated, SessionStore, SessionView};

pub struct AppState {
    pub engine: Arc<RiskEngine>,
    pub router: Router,
    pub sessions: SessionStore,
    pub patients: PatientDirectory,
    pub backend_id: String,
    pub embedder_id: String,
    pub store_chunks: usize,
}

/// Shared components for building an [`AppState`] without touching disk.
pub struct Components {
    pub engine: Arc<RiskEngine>,
    pub store: Arc<VectorStore>,
    pub embedder: Arc<dyn Embedder>,
    pub backend: Arc<dyn CompletionBackend>,
    pub prompts: Arc<PromptSet>,
    pub patients: PatientDirectory,
    pub sessions: SessionStore,
}

impl AppState {
    pub fn from_components(c: Components) -> Self {
        let backend_id = c.backend.id();
        let embedder_id = c.embedder.id();
        let store_chunks = c.store.len();
        AppState {
            router: Router::new(c.engine.clone(), c.store, c.embedder, c.backend, c.prompts),
            engine: c.engine,
            sessions: c.sessions,
            patients: c.patients,
            backend_id,
            embedder_id,
            store_chunks,
        }
    }

    /// Validates `config`, then loads the artifact, store, prompts and
    /// patient fixtures it names.
    pub fn load(config: &ServiceConfig, env: impl Fn(&str) -> Option<String>) -> ServiceResult<Self> {
        let key = config.validate(env)?;
        let (backend, embedder): (Arc<dyn CompletionBackend>, Arc<dyn Embedder>) = match config.backend {
            BackendKind::Offline => (Arc::new(OfflineBackend), Arc::new(HashingEmbedder::default())),
            BackendKind::Remote => {
                let remote = config.remote.as_ref().expect("validated remote section");
                let key = key.expect("validated api key");
                let embedder: Arc<dyn Embedder> = match &remote.embedding_model {
                    Some(m) => Arc::new(RemoteEmbedder::new(remote, m, key.clone())),
                    None => Arc::new(HashingEmbedder::default()),
                };
                (Arc::new(RemoteBackend::new(remote, key)), embedder)
            }
        };
        let model = RiskModel::load(&config.artifact)?;
        let engine = Arc::new(RiskEngine::new(model)?);
        let store = Arc::new(VectorStore::load(&config.store, &embedder.id())?);
        let prompts = match &config.prompts_dir {
            Some(dir) => PromptSet::from_dir(dir)?,
            None => PromptSet::builtin(),
        };
        let patients = match &config.patients_dir {
            Some(dir) => PatientDirectory::load(dir)?,
            None => PatientDirectory::default(),
        };
        log::info!(
            "loaded {} ({} trees), store with {} chunks, backend {}",
            config.artifact.display(),
            engine.model().forest.trees.len(),
            store.len(),
            backend.id()
        );
        Ok(AppState::from_components(Components {
            engine,
            store,
            embedder,
            backend,
            prompts: Arc::new(prompts),
            patients,
            sessions: SessionStore::new(config.transcript_dir.clone())?,
        }))
    }
}

pub fn app(state: Arc<AppState>) -> axum::Router {
    axum::Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/chat", post(chat))
        .route("/sessions/{id}/whatif", post(whatif))
        .route("/model/predict", post(predict))
        .route("/model/plots", get(plots))
        .route("/model/meta", get(meta))
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(state: Arc<AppState>, bind: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ServiceResult<T> {
    serde_json::from_slice(body).map_err(|e| ServiceError::BadRequest(format!("request body: {e}")))
}

async fn blocking<T, F>(f: F) -> ServiceResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> ServiceResult<T> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Worker(e.to_string()))?
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub backend: String,
    pub embedder: String,
    pub store_chunks: usize,
    pub num_trees: usize,
    pub patients: usize,
}

async fn healthz(State(state): State<Arc<AppState>>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        backend: state.backend_id.clone(),
        embedder: state.embedder_id.clone(),
        store_chunks: state.store_chunks,
        num_trees: state.engine.model().forest.trees.len(),
        patients: state.patients.len(),
    })
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
pub struct CreateSession {
    #[serde(default)]
    pub patient_id: Option<String>,
    #[serde(default)]
    pub patient: Option<PatientRecord>,
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> ServiceResult<(StatusCode, Json<SessionCreated>)> {
    let req: CreateSession = parse_body(&body)?;
    let patient = match (req.patient_id, req.patient) {
        (Some(id), None) => state
            .patients
            .get(&id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("patient {id}")))?,
        (None, Some(p)) => {
            p.validate()?;
            p
        }
        _ => return Err(ServiceError::BadRequest("give exactly one of patient_id or patient".into())),
    };
    let created = state.sessions.create(patient)?;
    log::info!("session {} opened on patient {}", created.id, created.patient.id);
    Ok((StatusCode::CREATED, Json(created)))
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ServiceResult<Json<SessionView>> {
    let s = state.sessions.get(&id)?;
    let view = session::lock(&s)?.view();
    Ok(Json(view))
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct ChatRequest {
    pub text: String,
}

async fn chat(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ServiceResult<Json<ChatExchange>> {
    let req: ChatRequest = parse_body(&body)?;
    let s = state.sessions.get(&id)?;
    let exchange = blocking(move || {
        let mut guard = session::lock(&s)?;
        let ex = state.router.exchange(Some(&guard.id), Some(&guard.patient), &req.text)?;
        guard.append(ex.clone())?;
        Ok(ex)
    })
    .await?;
    Ok(Json(exchange))
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
pub struct WhatIfRequest {
    #[serde(default)]
    pub overrides: BTreeMap<String, f64>,
}

async fn whatif(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ServiceResult<Json<RiskReport>> {
    let req: WhatIfRequest = parse_body(&body)?;
    let s = state.sessions.get(&id)?;
    let patient = session::lock(&s)?.patient.clone();
    let report = blocking(move || {
        let engine = &state.engine;
        let modified = engine.model().apply_overrides(&patient, &req.overrides)?;
        Ok(engine.report(&modified)?)
    })
    .await?;
    Ok(Json(report))
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct PredictRequest {
    pub patients: Vec<PatientRecord>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
pub struct Prediction {
    pub patient_id: String,
    pub probability: f64,
    pub risk_class: RiskClass,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
pub struct PredictResponse {
    pub threshold: f64,
    pub predictions: Vec<Prediction>,
}

async fn predict(State(state): State<Arc<AppState>>, body: Bytes) -> ServiceResult<Json<PredictResponse>> {
    let req: PredictRequest = parse_body(&body)?;
    let response = blocking(move || {
        let predictions = req
            .patients
            .iter()
            .map(|p| {
                let (probability, risk_class) = state.engine.predict(p)?;
                Ok(Prediction {
                    patient_id: p.id.clone(),
                    probability,
                    risk_class,
                })
            })
            .collect::<ServiceResult<Vec<_>>>()?;
        Ok(PredictResponse {
            threshold: state.engine.model().threshold(),
            predictions,
        })
    })
    .await?;
    Ok(Json(response))
}

fn parse_list<T: FromStr>(name: &str, raw: Option<&String>) -> ServiceResult<Option<Vec<T>>> {
    raw.map(|s| {
        s.split(',')
            .map(|v| {
                v.trim()
                    .parse()
                    .map_err(|_| ServiceError::BadRequest(format!("{name}: cannot parse {v:?}")))
            })
            .collect()
    })
    .transpose()
}

/// Query parameters: `type` (pdp|ice|ale), `feature`, optional `feature2`,
/// `grid` and `grid2` as comma-separated values, `bins`.
pub fn plot_request(params: &HashMap<String, String>) -> ServiceResult<PlotRequest> {
    let kind = match params.get("type").map(String::as_str) {
        Some("pdp") => CurveKind::Pdp,
        Some("ice") => CurveKind::Ice,
        Some("ale") => CurveKind::Ale,
        Some(other) => return Err(Error::Validation(format!("unknown plot type {other:?}")).into()),
        None => return Err(ServiceError::BadRequest("missing plot type".into())),
    };
    let feature = params
        .get("feature")
        .cloned()
        .ok_or_else(|| ServiceError::BadRequest("missing feature".into()))?;
    let bins = params
        .get("bins")
        .map(|b| b.parse().map_err(|_| ServiceError::BadRequest(format!("bins: cannot parse {b:?}"))))
        .transpose()?;
    Ok(PlotRequest {
        kind,
        feature,
        feature2: params.get("feature2").cloned(),
        grid: parse_list("grid", params.get("grid"))?,
        grid2: parse_list("grid2", params.get("grid2"))?,
        bins,
    })
}

async fn plots(
    State(state): State<Arc<AppState>>,
    Query(params): Query<HashMap<String, String>>,
) -> ServiceResult<Json<CurveSeries>> {
    let request = plot_request(&params)?;
    let series = blocking(move || Ok(state.engine.plot(&request)?)).await?;
    Ok(Json(series))
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
pub struct MetaResponse {
    pub meta: ModelMeta,
    /// Forest input features with their ranges, for building override forms.
    pub catalog: Vec<FeatureDef>,
}

async fn meta(State(state): State<Arc<AppState>>) -> Json<MetaResponse> {
    let model = state.engine.model();
    Json(MetaResponse {
        meta: model.meta(),
        catalog: model.features.clone(),
    })
}
