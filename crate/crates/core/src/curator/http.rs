//! JSON API over a [`Curator`].
//!
//! Unknown ids answer 404, decisions on decided proposals 409 and invalid
//! bodies or polygons 422; every error body is `{"error": "..."}`.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::geo::io::{polygon_from_geojson, polygon_to_geojson};
use crate::preprocess::store::{image_path, mask_path};
use crate::preprocess::Split;
use crate::segmenter::Segmenter;

use super::{valid_clip_id, Curator, CuratorError, Decision, ProposalStatus};

const DEFAULT_PAGE_SIZE: usize = 50;
const MAX_PAGE_SIZE: usize = 500;

#[derive(Clone)]
pub struct AppState {
    pub curator: Arc<Curator>,
    pub segmenter: Arc<Segmenter>,
}

pub struct ApiError(CuratorError);

impl From<CuratorError> for ApiError {
    fn from(e: CuratorError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            CuratorError::NotFound(_) => StatusCode::NOT_FOUND,
            CuratorError::Conflict(_) => StatusCode::CONFLICT,
            CuratorError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.0.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn invalid(msg: impl Into<String>) -> ApiError {
    ApiError(CuratorError::Invalid(msg.into()))
}

/// Parse a JSON body by hand so shape errors get the API's 422 body.
fn parse<T: serde::de::DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    let bytes = if body.is_empty() { b"{}".as_slice() } else { body };
    serde_json::from_slice(bytes).map_err(|e| invalid(e.to_string()))
}

/// Routes; `static_dir`, if given, is served for every other path.
pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let r = Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/proposals/generate", post(generate))
        .route("/sessions/{id}/proposals", get(list_proposals))
        .route("/proposals/{id}/decision", post(decide))
        .route("/phases/{n}/promote", post(promote))
        .route("/phases/{n}/report", get(report))
        .route("/clips/{file}", get(clip_image))
        .route("/clips/{clip_id}/mask.png", get(clip_mask))
        .with_state(state);
    match static_dir {
        Some(dir) => r.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => r,
    }
}

/// Bind and serve until the process is interrupted.
pub async fn serve(state: AppState, addr: SocketAddr, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state, static_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionBody {
    phase: u8,
    cell_ids: Vec<u32>,
}

async fn create_session(State(s): State<AppState>, body: axum::body::Bytes) -> ApiResult<Response> {
    let b: SessionBody = parse(&body)?;
    let session = s.curator.open_session(b.phase, b.cell_ids)?;
    Ok((StatusCode::CREATED, Json(json!({ "session_id": session.session_id }))).into_response())
}

async fn get_session(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let snap = s.curator.snapshot();
    let session = snap.session(&id)?;
    Ok(Json(json!({ "session": session, "progress": snap.progress(&id) })))
}

async fn generate(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let curator = s.curator.clone();
    let seg = s.segmenter.clone();
    let outcome = tokio::task::spawn_blocking(move || curator.generate_proposals(&id, &seg))
        .await
        .map_err(|e| ApiError(CuratorError::Invalid(format!("generation task failed: {e}"))))??;
    Ok(Json(serde_json::to_value(outcome).expect("outcome serializes")))
}

#[derive(Deserialize)]
struct ListQuery {
    status: Option<String>,
    page: Option<usize>,
    page_size: Option<usize>,
}

async fn list_proposals(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<ListQuery>,
) -> ApiResult<Json<Value>> {
    let status: Option<ProposalStatus> = q.status.as_deref().map(str::parse).transpose().map_err(invalid)?;
    let page = q.page.unwrap_or(0);
    let size = q.page_size.unwrap_or(DEFAULT_PAGE_SIZE).clamp(1, MAX_PAGE_SIZE);
    let snap = s.curator.snapshot();
    snap.session(&id)?;
    let matching: Vec<_> = snap
        .session_proposals(&id)
        .filter(|p| status.is_none_or(|st| p.status == st))
        .collect();
    let items: Vec<Value> = matching
        .iter()
        .skip(page * size)
        .take(size)
        .map(|p| {
            let mut v = json!({
                "proposal_id": p.proposal_id,
                "clip_id": p.clip_id,
                "score": p.score,
                "status": p.status,
                "polygon": polygon_to_geojson(&p.polygon),
                "image_url": format!("/clips/{}.png", p.clip_id),
                "mask_url": format!("/clips/{}/mask.png", p.clip_id),
            });
            if let Some(e) = &p.edited_polygon {
                v["edited_polygon"] = polygon_to_geojson(e);
            }
            if let Ok(side) = s.curator.sidecar(&p.clip_id) {
                v["transform"] = serde_json::to_value(side.transform).expect("transform serializes");
            }
            v
        })
        .collect();
    Ok(Json(json!({
        "total": matching.len(),
        "page": page,
        "page_size": size,
        "items": items,
    })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DecisionBody {
    action: String,
    polygon: Option<Value>,
    reviewer: String,
    split: Option<Split>,
}

async fn decide(State(s): State<AppState>, Path(id): Path<String>, body: axum::body::Bytes) -> ApiResult<Json<Value>> {
    let b: DecisionBody = parse(&body)?;
    let decision = match (b.action.as_str(), b.polygon) {
        ("approve", None) => Decision::Approve,
        ("reject", None) => Decision::Reject,
        ("edit", Some(g)) => Decision::Edit {
            polygon: polygon_from_geojson(&g).map_err(|e| invalid(e.to_string()))?,
        },
        ("edit", None) => return Err(invalid("edit needs a polygon")),
        ("approve" | "reject", Some(_)) => return Err(invalid("polygon is only accepted with edit")),
        (other, _) => return Err(invalid(format!("unknown action {other:?}"))),
    };
    let curator = s.curator.clone();
    let p = tokio::task::spawn_blocking(move || curator.decide(&id, decision, &b.reviewer, b.split))
        .await
        .map_err(|e| invalid(format!("decision task failed: {e}")))??;
    Ok(Json(serde_json::to_value(p).expect("proposal serializes")))
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct PromoteBody {
    #[serde(default)]
    abandon: bool,
    /// Directory of a synthetic batch to ingest (phase 2 → 3).
    synth_dir: Option<PathBuf>,
}

async fn promote(State(s): State<AppState>, Path(n): Path<u8>, body: axum::body::Bytes) -> ApiResult<Json<Value>> {
    let b: PromoteBody = parse(&body)?;
    let curator = s.curator.clone();
    let d = tokio::task::spawn_blocking(move || match &b.synth_dir {
        Some(dir) => curator.promote_with_synth(n, b.abandon, dir),
        None => curator.promote(n, b.abandon, Vec::new()),
    })
    .await
    .map_err(|e| invalid(format!("promotion task failed: {e}")))??;
    Ok(Json(
        serde_json::to_value(super::dataset_report(&d)).expect("report serializes"),
    ))
}

async fn report(State(s): State<AppState>, Path(n): Path<u8>) -> ApiResult<Json<Value>> {
    let r = s.curator.report(n)?;
    Ok(Json(serde_json::to_value(r).expect("report serializes")))
}

fn png(path: std::path::PathBuf, clip_id: &str) -> ApiResult<Response> {
    let bytes = std::fs::read(&path).map_err(|_| ApiError(CuratorError::NotFound(format!("clip {clip_id}"))))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], Body::from(bytes)).into_response())
}

async fn clip_image(State(s): State<AppState>, Path(file): Path<String>) -> ApiResult<Response> {
    let clip_id = file
        .strip_suffix(".png")
        .ok_or_else(|| ApiError(CuratorError::NotFound(file.clone())))?;
    valid_clip_id(clip_id)?;
    png(image_path(&s.curator.clip_dir(), clip_id), clip_id)
}

async fn clip_mask(State(s): State<AppState>, Path(clip_id): Path<String>) -> ApiResult<Response> {
    valid_clip_id(&clip_id)?;
    png(mask_path(&s.curator.clip_dir(), &clip_id), &clip_id)
}
