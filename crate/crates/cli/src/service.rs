//! HTTP API backing the annotation UI.
//!
//! ```text
//! GET  /api/images               image ids in the image directory
//! GET  /api/images/{id}          raw image bytes
//! GET  /api/annotations/{id}     annotation JSON
//! PUT  /api/annotations/{id}     validate, clamp and store annotation JSON
//! POST /api/preview              density preview for unsaved labels
//! ```
//!
//! Annotation files are replaced atomically (temp file + rename), so
//! concurrent readers never observe partial writes; concurrent writers
//! resolve as last-write-wins.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use densitykit::io::heatmap_u8;
use densitykit::{count_from_density, density_map, AnnotationSet, KernelConfig, LineLabel, Scheme};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::job::IMAGE_EXTENSIONS;

/// Longest side of the preview heatmap.
pub const PREVIEW_MAX_SIDE: usize = 256;
/// Largest canvas side accepted by the preview endpoint.
pub const PREVIEW_MAX_CANVAS: u32 = 8192;

#[derive(Debug, Clone)]
pub struct AppState {
    pub image_dir: PathBuf,
    pub annotation_dir: PathBuf,
}

type Shared = Arc<AppState>;

#[derive(Debug)]
struct ApiError {
    status: StatusCode,
    body: serde_json::Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": message.into() }),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        log::error!("{e}");
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

/// Ids become file names, so only a conservative character set is allowed.
fn check_id(id: &str) -> Result<(), ApiError> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(ApiError::bad_request(format!("invalid image id {id:?}")))
    }
}

fn image_ids(dir: &Path) -> std::io::Result<Vec<String>> {
    let mut ids: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .collect();
    ids.sort();
    ids.dedup();
    Ok(ids)
}

async fn list_images(State(state): State<Shared>) -> Result<Json<Vec<String>>, ApiError> {
    let dir = state.image_dir.clone();
    let ids = tokio::task::spawn_blocking(move || image_ids(&dir))
        .await
        .map_err(ApiError::internal)?
        .map_err(ApiError::internal)?;
    Ok(Json(ids))
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("bmp") => "image/bmp",
        Some("tif" | "tiff") => "image/tiff",
        _ => "application/octet-stream",
    }
}

async fn get_image(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    check_id(&id)?;
    let Some(path) = crate::job::find_image(&state.image_dir, &id) else {
        return Err(ApiError::new(StatusCode::NOT_FOUND, format!("no image {id:?}")));
    };
    let bytes = tokio::fs::read(&path).await.map_err(ApiError::internal)?;
    Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response())
}

fn annotation_path(state: &AppState, id: &str) -> PathBuf {
    state.annotation_dir.join(format!("{id}.json"))
}

async fn get_annotations(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    check_id(&id)?;
    match tokio::fs::read(annotation_path(&state, &id)).await {
        Ok(bytes) => Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(ApiError::new(StatusCode::NOT_FOUND, format!("no annotations for {id:?}")))
        }
        Err(e) => Err(ApiError::internal(e)),
    }
}

/// Writes `bytes` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

async fn put_annotations(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<AnnotationSet>, ApiError> {
    check_id(&id)?;
    let mut set: AnnotationSet = serde_json::from_slice(&body).map_err(|e| ApiError {
        status: StatusCode::BAD_REQUEST,
        body: json!({ "error": e.to_string(), "line": e.line(), "column": e.column() }),
    })?;
    if set.image_id != id {
        return Err(ApiError::bad_request(format!(
            "document is for image {:?}, not {id:?}",
            set.image_id
        )));
    }
    set.clamp_to_bounds();
    let bytes = serde_json::to_vec_pretty(&set).map_err(ApiError::internal)?;
    let path = annotation_path(&state, &id);
    tokio::task::spawn_blocking(move || write_atomic(&path, &bytes))
        .await
        .map_err(ApiError::internal)?
        .map_err(ApiError::internal)?;
    Ok(Json(set))
}

#[derive(Debug, Clone, Deserialize)]
pub struct PreviewRequest {
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub labels: Vec<LineLabel>,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub config: KernelConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreviewResponse {
    /// Exact (unrounded) count of the full-resolution map.
    pub count: f64,
    /// Base64 8-bit grayscale, row-major, `width * height` bytes.
    pub heatmap: String,
    pub width: usize,
    pub height: usize,
    /// Full-resolution pixels per heatmap pixel along each axis.
    pub factor: usize,
}

pub fn preview(req: &PreviewRequest) -> Result<PreviewResponse, densitykit::Error> {
    if req.width > PREVIEW_MAX_CANVAS || req.height > PREVIEW_MAX_CANVAS {
        return Err(densitykit::Error::InvalidAnnotation(format!(
            "canvas {}x{} exceeds {PREVIEW_MAX_CANVAS} px",
            req.width, req.height
        )));
    }
    let mut set = AnnotationSet::new("preview", req.width, req.height, req.labels.clone());
    set.validate()?;
    set.clamp_to_bounds();
    let map = density_map(req.scheme, &set, &req.config)?;
    let hm = heatmap_u8(&map, PREVIEW_MAX_SIDE);
    Ok(PreviewResponse {
        count: count_from_density(&map),
        heatmap: base64::engine::general_purpose::STANDARD.encode(&hm.pixels),
        width: hm.width,
        height: hm.height,
        factor: hm.factor,
    })
}

async fn post_preview(body: Bytes) -> Result<Json<PreviewResponse>, ApiError> {
    let req: PreviewRequest = serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let resp = tokio::task::spawn_blocking(move || preview(&req))
        .await
        .map_err(ApiError::internal)?
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(Json(resp))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/images", get(list_images))
        .route("/api/images/{id}", get(get_image))
        .route("/api/annotations/{id}", get(get_annotations).put(put_annotations))
        .route("/api/preview", post(post_preview))
        .with_state(Arc::new(state))
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(addr: SocketAddr, state: AppState) -> anyhow::Result<()> {
    for (what, dir) in [("image", &state.image_dir), ("annotation", &state.annotation_dir)] {
        if !dir.is_dir() {
            bail!("{what} directory {} does not exist", dir.display());
        }
    }
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}
