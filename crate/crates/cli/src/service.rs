//! HTTP service over a frozen model, index and manifest.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use axum::extract::rejection::{JsonRejection, PathRejection};
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use clipdesk_core::datagen::{read_manifest, CorpusEntry, Raster};
use clipdesk_core::{ClipModel, RetrievalIndex};
use tokio::net::TcpListener;

use crate::api::{self, ApiError, ClassifyRequest, HealthResponse, SearchRequest};

/// Everything a request can read. Never mutated after startup.
#[derive(Debug)]
pub struct AppState {
    pub model: ClipModel,
    pub index: RetrievalIndex,
    pub items: HashMap<u64, CorpusEntry>,
    pub data_dir: PathBuf,
}

impl AppState {
    pub fn new(
        model: ClipModel,
        index: RetrievalIndex,
        entries: Vec<CorpusEntry>,
        data_dir: PathBuf,
    ) -> anyhow::Result<Self> {
        if model.dims.d_embed != index.dim() {
            bail!(
                "index dimension {} does not match the model's embedding size {}",
                index.dim(),
                model.dims.d_embed
            );
        }
        let items: HashMap<u64, CorpusEntry> = entries.into_iter().map(|e| (e.id, e)).collect();
        if let Some(missing) = index.ids().find(|id| !items.contains_key(id)) {
            bail!("indexed item {missing} is not in the manifest");
        }
        Ok(Self {
            model,
            index,
            items,
            data_dir,
        })
    }

    pub fn load(ckpt: &Path, index: &Path, data: &Path) -> anyhow::Result<Self> {
        let model =
            ClipModel::load_checkpoint(ckpt).with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
        let index = RetrievalIndex::load(index).with_context(|| format!("loading index {}", index.display()))?;
        let (_, entries) = read_manifest(data).with_context(|| format!("reading manifest in {}", data.display()))?;
        Self::new(model, index, entries, data.to_path_buf())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.body())).into_response()
    }
}

type Shared = State<Arc<AppState>>;

fn json_error(r: JsonRejection) -> ApiError {
    let status = r.status().as_u16();
    let code = if status == 415 {
        "unsupported_media_type"
    } else {
        "invalid_json"
    };
    ApiError {
        // missing fields and wrong types are client errors like any other bad body
        status: if status == 415 { 415 } else { 400 },
        code,
        detail: r.body_text(),
    }
}

fn path_error(r: PathRejection) -> ApiError {
    ApiError::bad_request("invalid_id", r.body_text())
}

async fn health(State(s): Shared) -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".into(),
        items: s.index.len(),
        dim: s.index.dim(),
    })
}

async fn search(
    State(s): Shared,
    body: Result<Json<SearchRequest>, JsonRejection>,
) -> Result<Json<api::SearchResponse>, ApiError> {
    let Json(req) = body.map_err(json_error)?;
    api::search(&s.model, &s.index, &req).map(Json)
}

async fn classify(
    State(s): Shared,
    body: Result<Json<ClassifyRequest>, JsonRejection>,
) -> Result<Json<api::ClassifyResponse>, ApiError> {
    let Json(req) = body.map_err(json_error)?;
    api::classify_item(&s.model, &s.index, &req).map(Json)
}

fn entry(s: &AppState, id: u64) -> Result<&CorpusEntry, ApiError> {
    s.items
        .get(&id)
        .ok_or_else(|| ApiError::not_found(format!("no item {id}")))
}

async fn item(State(s): Shared, id: Result<UrlPath<u64>, PathRejection>) -> Result<Json<api::ItemResponse>, ApiError> {
    let UrlPath(id) = id.map_err(path_error)?;
    let e = entry(&s, id)?;
    let raster = Raster::read_ppm(&s.data_dir.join(&e.path)).map_err(|err| ApiError::internal(err.to_string()))?;
    Ok(Json(api::item_payload(e, &raster)))
}

async fn item_meta(State(s): Shared, id: Result<UrlPath<u64>, PathRejection>) -> Result<Json<CorpusEntry>, ApiError> {
    let UrlPath(id) = id.map_err(path_error)?;
    entry(&s, id).cloned().map(Json)
}

async fn no_route() -> ApiError {
    ApiError::not_found("no such endpoint")
}

async fn wrong_method() -> ApiError {
    ApiError {
        status: 405,
        code: "method_not_allowed",
        detail: "method not allowed on this endpoint".into(),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/search", post(search))
        .route("/classify", post(classify))
        .route("/items/{id}", get(item))
        .route("/items/{id}/meta", get(item_meta))
        .fallback(no_route)
        .method_not_allowed_fallback(wrong_method)
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve_on<F>(listener: TcpListener, state: Arc<AppState>, shutdown: F) -> anyhow::Result<()>
where
    F: std::future::Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
        .context("serving HTTP")
}

pub async fn serve(state: AppState, bind: SocketAddr) -> anyhow::Result<()> {
    let listener = TcpListener::bind(bind)
        .await
        .with_context(|| format!("binding {bind}"))?;
    log::info!(
        "serving {} items (dim {}) on http://{}",
        state.index.len(),
        state.index.dim(),
        listener.local_addr()?
    );
    serve_on(listener, Arc::new(state), async {
        let _ = tokio::signal::ctrl_c().await;
        log::info!("shutting down");
    })
    .await
}
