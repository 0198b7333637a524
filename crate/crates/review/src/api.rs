//! JSON endpoints for the review interface.
//!
//! Candidates are sent as `first` and `second`. Which of them is the current
//! gold label stays on the server until export.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use liahr::corpus::{write_corpus, Corpus};
use liahr::pipeline::ChangeManifest;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

use crate::store::{Choice, Presentation, Progress, ReviewError, ReviewItem, ReviewStore, Status};

pub const REVIEWER_HEADER: &str = "x-reviewer";
const DEFAULT_PAGE_SIZE: usize = 50;
const MAX_PAGE_SIZE: usize = 500;

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<ReviewStore>,
    pub corpus: Arc<Corpus>,
    /// Where `POST /api/export` writes the corpus and change manifest.
    pub export_dir: PathBuf,
    /// Include each item's presentation in item payloads. For debugging;
    /// reviewers should not see which side is the model's.
    pub unsealed: bool,
}

/// Builds the router. With `ui_dir`, unmatched paths serve static files.
pub fn router(state: AppState, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/space", get(space))
        .route("/api/queue", get(queue))
        .route("/api/items/{id}", get(item))
        .route("/api/decisions", post(decide))
        .route("/api/progress", get(progress))
        .route("/api/export", post(export))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        let status = match &e {
            ReviewError::UnknownItem(_) => StatusCode::NOT_FOUND,
            ReviewError::InvalidLabels(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ReviewError::PendingItems(_) => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            ::log::error!("{e}");
        }
        ApiError(status, e.to_string())
    }
}

fn unprocessable(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::UNPROCESSABLE_ENTITY, msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShownChoice {
    First,
    Second,
    Edited,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionView {
    pub choice: ShownChoice,
    pub labels: Vec<String>,
    pub reviewer: String,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ItemView {
    pub id: String,
    pub example_id: String,
    pub text: String,
    pub first: Vec<String>,
    pub second: Vec<String>,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<DecisionView>,
    /// Only present when the server runs unsealed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub presentation: Option<Presentation>,
}

fn names(store: &ReviewStore, set: &liahr::LabelSet) -> Vec<String> {
    store
        .space()
        .names(set)
        .into_iter()
        .map(str::to_string)
        .collect()
}

fn view(app: &AppState, item: &ReviewItem) -> ItemView {
    let store = &app.store;
    let (first, second) = item.ordered();
    let decision = store.decision(&item.id).map(|d| {
        let gold_first = item.presentation == Presentation::GoldFirst;
        let (choice, set) = match d.choice {
            Choice::AcceptGold => (
                if gold_first {
                    ShownChoice::First
                } else {
                    ShownChoice::Second
                },
                item.gold.clone(),
            ),
            Choice::AcceptAlternative => (
                if gold_first {
                    ShownChoice::Second
                } else {
                    ShownChoice::First
                },
                item.alternative.clone(),
            ),
            Choice::Edited(set) => (ShownChoice::Edited, set),
        };
        DecisionView {
            choice,
            labels: names(store, &set),
            reviewer: d.reviewer,
            timestamp_ms: d.timestamp_ms,
        }
    });
    ItemView {
        id: item.id.clone(),
        example_id: item.example_id.clone(),
        text: item.text.clone(),
        first: names(store, first),
        second: names(store, second),
        status: item.status,
        decision,
        presentation: app.unsealed.then_some(item.presentation),
    }
}

async fn space(State(app): State<AppState>) -> Json<serde_json::Value> {
    let space = app.store.space();
    Json(json!({ "name": space.name, "kind": space.kind, "labels": space.labels }))
}

#[derive(Debug, Deserialize)]
pub struct QueueParams {
    pub status: Option<Status>,
    #[serde(default)]
    pub page: usize,
    pub per_page: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QueuePage {
    pub items: Vec<ItemView>,
    pub page: usize,
    pub per_page: usize,
    pub total: usize,
}

async fn queue(State(app): State<AppState>, Query(params): Query<QueueParams>) -> Json<QueuePage> {
    let per_page = params
        .per_page
        .unwrap_or(DEFAULT_PAGE_SIZE)
        .clamp(1, MAX_PAGE_SIZE);
    let all = app.store.items(params.status);
    let items = all
        .iter()
        .skip(params.page.saturating_mul(per_page))
        .take(per_page)
        .map(|i| view(&app, i))
        .collect();
    Json(QueuePage {
        items,
        page: params.page,
        per_page,
        total: all.len(),
    })
}

async fn item(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<ItemView>, ApiError> {
    let item = app.store.item(&id).ok_or(ReviewError::UnknownItem(id))?;
    Ok(Json(view(&app, &item)))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DecisionRequest {
    pub item_id: String,
    pub choice: ShownChoice,
    #[serde(default)]
    pub labels: Option<Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DecisionResponse {
    pub item: ItemView,
    pub progress: Progress,
}

async fn decide(
    State(app): State<AppState>,
    headers: HeaderMap,
    Json(req): Json<DecisionRequest>,
) -> Result<Json<DecisionResponse>, ApiError> {
    let reviewer = headers
        .get(REVIEWER_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .unwrap_or("anonymous")
        .to_string();
    let item = app
        .store
        .item(&req.item_id)
        .ok_or_else(|| ReviewError::UnknownItem(req.item_id.clone()))?;
    let gold_first = item.presentation == Presentation::GoldFirst;
    let choice = match (req.choice, req.labels) {
        (ShownChoice::Edited, Some(labels)) => Choice::Edited(
            app.store
                .space()
                .set_of(&labels)
                .map_err(ReviewError::from)?,
        ),
        (ShownChoice::Edited, None) => {
            return Err(unprocessable("an edited decision needs `labels`"))
        }
        (_, Some(_)) => {
            return Err(unprocessable(
                "`labels` is only allowed with the `edited` choice",
            ))
        }
        (ShownChoice::First, None) if gold_first => Choice::AcceptGold,
        (ShownChoice::Second, None) if !gold_first => Choice::AcceptGold,
        _ => Choice::AcceptAlternative,
    };
    app.store.decide(&item.id, choice, &reviewer)?;
    let item = app.store.item(&item.id).expect("decided item exists");
    Ok(Json(DecisionResponse {
        item: view(&app, &item),
        progress: app.store.progress(),
    }))
}

async fn progress(State(app): State<AppState>) -> Json<Progress> {
    Json(app.store.progress())
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct ExportRequest {
    #[serde(default)]
    pub partial: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ExportResponse {
    pub corpus_path: String,
    pub manifest_path: String,
    pub manifest: ChangeManifest,
    /// Which candidate was shown first for every item.
    pub presentation: BTreeMap<String, Presentation>,
}

async fn export(
    State(app): State<AppState>,
    body: Option<Json<ExportRequest>>,
) -> Result<Json<ExportResponse>, ApiError> {
    let req = body.map(|Json(r)| r).unwrap_or_default();
    let (corpus, manifest, presentation) = app.store.export(&app.corpus, req.partial)?;
    let internal = |e: String| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e);
    std::fs::create_dir_all(&app.export_dir).map_err(|e| internal(e.to_string()))?;
    let corpus_path = app.export_dir.join("corpus.jsonl");
    let manifest_path = app.export_dir.join("changes.json");
    write_corpus(&corpus, &corpus_path).map_err(|e| internal(e.to_string()))?;
    let manifest_json = serde_json::to_string_pretty(&json!({
        "manifest": &manifest,
        "presentation": &presentation,
    }))
    .expect("manifest serializes");
    std::fs::write(&manifest_path, manifest_json).map_err(|e| internal(e.to_string()))?;
    Ok(Json(ExportResponse {
        corpus_path: corpus_path.display().to_string(),
        manifest_path: manifest_path.display().to_string(),
        manifest,
        presentation,
    }))
}
