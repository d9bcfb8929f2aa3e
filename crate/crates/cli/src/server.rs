//! HTTP service backing the crop-collection UI.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{Context, Result};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use clap::Args;
use serde::{Deserialize, Serialize};

use semcrop::datasets::{AnnotationDraft, AnnotationStore, AppendError, TaskManifest};
use semcrop::Rect;

/// Largest side, in pixels, of an image as displayed to workers.
pub const MAX_DISPLAY_DIM: u32 = 800;

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    /// Directory that task image paths are relative to.
    #[arg(long)]
    pub images: PathBuf,
    /// Task manifest.
    #[arg(long)]
    pub tasks: PathBuf,
    /// Annotation log (created if missing).
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
}

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<AnnotationStore>,
    pub images: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NextTask {
    pub task_id: String,
    pub image_url: String,
    pub image_w: u32,
    pub image_h: u32,
    pub display_scale: f64,
    pub entity: String,
    pub aspect: String,
}

#[derive(Debug, Deserialize)]
pub struct WorkerQuery {
    pub worker: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Submission {
    pub task_id: String,
    pub worker: String,
    /// Original image coordinates.
    pub crop: Rect,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SeqResponse {
    pub seq: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(ErrorBody { error: msg.into() })).into_response()
}

pub fn display_scale(width: u32, height: u32) -> f64 {
    (MAX_DISPLAY_DIM as f64 / width.max(height) as f64).min(1.0)
}

async fn next_task(State(state): State<AppState>, Query(q): Query<WorkerQuery>) -> Response {
    if q.worker.trim().is_empty() {
        return error(StatusCode::BAD_REQUEST, "worker id is empty");
    }
    match state.store.next_task_for(&q.worker) {
        Some(t) => Json(NextTask {
            task_id: t.task_id.clone(),
            image_url: format!("/images/{}", t.image_id),
            image_w: t.width,
            image_h: t.height,
            display_scale: display_scale(t.width, t.height),
            entity: t.entity.clone(),
            aspect: "1:1".into(),
        })
        .into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

fn content_type(path: &std::path::Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("ppm") | Some("pnm") => "image/x-portable-pixmap",
        Some("jpg") | Some("jpeg") => "image/jpeg",
        _ => "application/octet-stream",
    }
}

async fn image(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    let Some(task) = state.store.tasks().tasks.iter().find(|t| t.image_id == id) else {
        return error(StatusCode::NOT_FOUND, format!("unknown image `{id}`"));
    };
    let path = state.images.join(&task.path);
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response(),
        Err(e) => {
            log::error!("reading {}: {e}", path.display());
            error(StatusCode::NOT_FOUND, format!("image `{id}` is not available"))
        }
    }
}

async fn annotate(State(state): State<AppState>, Json(sub): Json<Submission>) -> Response {
    let store = Arc::clone(&state.store);
    let draft = AnnotationDraft {
        task_id: sub.task_id,
        worker_id: sub.worker,
        crop: sub.crop,
        ts: None,
    };
    let result = tokio::task::spawn_blocking(move || store.append(draft)).await;
    match result {
        Ok(Ok(ack)) => (StatusCode::CREATED, Json(SeqResponse { seq: ack.seq })).into_response(),
        Ok(Err(e @ AppendError::UnknownTask(_))) => error(StatusCode::NOT_FOUND, e.to_string()),
        Ok(Err(e @ (AppendError::Duplicate { .. } | AppendError::TaskFull(_)))) => {
            error(StatusCode::CONFLICT, e.to_string())
        }
        Ok(Err(e @ AppendError::Rejected(_))) => error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
        Ok(Err(AppendError::Storage(e))) => {
            log::error!("annotation store: {e}");
            error(StatusCode::INTERNAL_SERVER_ERROR, "annotation could not be stored")
        }
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn export(State(state): State<AppState>) -> Response {
    let m = state.store.export_semantic_manifest();
    ([(header::CONTENT_TYPE, "application/json")], m.to_json()).into_response()
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/tasks/next", get(next_task))
        .route("/images/{id}", get(image))
        .route("/api/annotations", post(annotate))
        .route("/api/export", get(export))
        .with_state(state)
}

pub fn open_state(args: &ServeArgs) -> Result<AppState> {
    let tasks = TaskManifest::load(&args.tasks).with_context(|| format!("loading tasks {}", args.tasks.display()))?;
    let store = AnnotationStore::open(&args.store, tasks)
        .with_context(|| format!("opening annotation store {}", args.store.display()))?;
    Ok(AppState {
        store: Arc::new(store),
        images: args.images.clone(),
    })
}

pub fn run(args: &ServeArgs) -> Result<()> {
    let state = open_state(args)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(args.addr)
            .await
            .with_context(|| format!("binding {}", args.addr))?;
        log::info!("annotation service listening on {}", listener.local_addr()?);
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
