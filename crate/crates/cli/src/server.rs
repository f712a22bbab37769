//! HTTP render/query service over one immutable checkpoint.
//!
//! `GET /meta` describes the scene; `POST /render` renders a camera and
//! returns base64 PNGs. Errors are JSON bodies `{"error": {kind, message}}`.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};
use spcgs_core::io::Checkpoint;
use spcgs_core::query::{render_query, DEFAULT_OVERLAY_ALPHA};
use spcgs_core::{Camera, Error};

use crate::commands::{checkpoint_background, checkpoint_image_size};
use crate::ErrorBody;

/// Largest accepted render width and height.
pub const MAX_RENDER_SIDE: u32 = 1024;
const MAX_BODY_BYTES: usize = 64 * 1024;

#[derive(Debug)]
pub struct ServerState {
    pub checkpoint: Checkpoint,
    pub background: [f64; 3],
}

impl ServerState {
    /// Fails if the checkpoint cannot answer semantic queries.
    pub fn new(checkpoint: Checkpoint) -> spcgs_core::Result<Self> {
        match (&checkpoint.heads, &checkpoint.bank, &checkpoint.labels) {
            (_, Some(_), Some(_)) => {}
            (Some(h), Some(b), None) => h.validate(checkpoint.scene.feature_dim, b.len())?,
            _ => {
                return Err(Error::InvalidArgument(
                    "checkpoint has no text bank or no way to label pixels".into(),
                ))
            }
        }
        let background = checkpoint_background(&checkpoint);
        Ok(Self { checkpoint, background })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub num_gaussians: usize,
    pub classes: Vec<String>,
    #[serde(rename = "D")]
    pub d: usize,
    pub image_size: Option<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderRequest {
    /// World-to-camera transform, row-major.
    pub w2c: Vec<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub query: Option<String>,
    #[serde(default)]
    pub overlay_alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderResponse {
    pub color_png_b64: String,
    pub label_png_b64: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub overlay_png_b64: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub query_class_index: Option<usize>,
}

/// An error response with its status code.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody::new(kind, message),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::UnknownQuery(_) => StatusCode::NOT_FOUND,
            Error::InvalidCamera(_) | Error::InvalidArgument(_) | Error::DegenerateRotation => {
                StatusCode::BAD_REQUEST
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self {
            status,
            body: e.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body.to_json())).into_response()
    }
}

pub fn router(state: Arc<ServerState>) -> Router {
    Router::new()
        .route("/meta", get(meta))
        .route("/render", post(render))
        .fallback(not_found)
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

pub fn meta_of(state: &ServerState) -> Meta {
    let ckpt = &state.checkpoint;
    Meta {
        num_gaussians: ckpt.scene.len(),
        classes: ckpt.bank.as_ref().map_or_else(Vec::new, |b| b.names.clone()),
        d: ckpt.scene.feature_dim,
        image_size: checkpoint_image_size(ckpt),
    }
}

async fn meta(State(state): State<Arc<ServerState>>) -> Json<Meta> {
    Json(meta_of(&state))
}

/// Parses and validates a render request body.
pub fn parse_request(body: &[u8]) -> Result<(RenderRequest, Camera), ApiError> {
    let req: RenderRequest = serde_json::from_slice(body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "malformed_request", e.to_string()))?;
    if req.w2c.len() != 16 {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "malformed_request",
            format!("w2c must have 16 entries, got {}", req.w2c.len()),
        ));
    }
    if req.width > MAX_RENDER_SIDE || req.height > MAX_RENDER_SIDE {
        return Err(ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "image_too_large",
            format!(
                "{}x{} exceeds the {MAX_RENDER_SIDE}x{MAX_RENDER_SIDE} limit",
                req.width, req.height
            ),
        ));
    }
    if let Some(a) = req.overlay_alpha {
        if !(0.0..=1.0).contains(&a) {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                "malformed_request",
                format!("overlay_alpha must be in [0, 1], got {a}"),
            ));
        }
    }
    let cam = Camera::new(
        req.fx,
        req.fy,
        req.cx,
        req.cy,
        req.width,
        req.height,
        Matrix4::from_row_slice(&req.w2c),
    )?;
    Ok((req, cam))
}

/// Renders a parsed request against the shared checkpoint.
pub fn render_request(state: &ServerState, req: &RenderRequest, cam: &Camera) -> Result<RenderResponse, ApiError> {
    let r = render_query(
        &state.checkpoint,
        cam,
        req.query.as_deref(),
        req.overlay_alpha.unwrap_or(DEFAULT_OVERLAY_ALPHA),
        state.background,
    )?;
    Ok(RenderResponse {
        color_png_b64: STANDARD.encode(r.color_png()?),
        label_png_b64: STANDARD.encode(r.label_png()?),
        overlay_png_b64: r.overlay_png()?.map(|p| STANDARD.encode(p)),
        query_class_index: r.query_class,
    })
}

async fn render(State(state): State<Arc<ServerState>>, body: Bytes) -> Result<Json<RenderResponse>, ApiError> {
    let (req, cam) = parse_request(&body)?;
    tokio::task::spawn_blocking(move || render_request(&state, &req, &cam))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map(Json)
}

/// Serves on `addr` until the process is stopped.
pub async fn serve(state: Arc<ServerState>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
