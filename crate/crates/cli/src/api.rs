//! Read-only JSON API over one [`AnalysisSession`], mounted at `/api/v1`.

use std::collections::BTreeMap;
use std::str::FromStr;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use nerscope::attention::SimilarityKind;
use nerscope::behavioural::aggregate_by_tag;
use nerscope::bundle::{ModelState, Split, VocabLevel};
use nerscope::eval::{Level, ReportOptions};
use nerscope::lexical::{diversity_stats, oov_rates, tag_overlap_matrix, Scope};
use nerscope::session::{AnalysisSession, QueryError, DEFAULT_PAGE_SIZE};
use nerscope::spans::DecodeMode;

pub const PREFIX: &str = "/api/v1";

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    code: &'a str,
    message: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code,
            message: &self.message,
        };
        (self.status, Json(serde_json::to_value(body).unwrap_or_default())).into_response()
    }
}

impl From<QueryError> for ApiError {
    fn from(e: QueryError) -> Self {
        let status = match e {
            QueryError::NotFound(_) => StatusCode::NOT_FOUND,
            QueryError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            QueryError::Unavailable(_) => StatusCode::CONFLICT,
        };
        ApiError {
            status,
            code: e.code(),
            message: e.to_string(),
        }
    }
}

fn unprocessable(message: impl Into<String>) -> ApiError {
    QueryError::Unprocessable(message.into()).into()
}

type ApiResult = Result<Json<Value>, ApiError>;
type Params = Query<BTreeMap<String, String>>;
type Shared = State<Arc<AnalysisSession>>;

fn to_json<T: Serialize>(v: &T) -> ApiResult {
    serde_json::to_value(v)
        .map(Json)
        .map_err(|e| ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "internal",
            message: e.to_string(),
        })
}

fn param<T: FromStr>(q: &BTreeMap<String, String>, name: &str, default: T) -> Result<T, ApiError> {
    match q.get(name) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| unprocessable(format!("invalid value `{v}` for `{name}`"))),
    }
}

/// Runs a session query off the async executor: first requests for heavy
/// products may take a while.
async fn blocking<F>(session: Arc<AnalysisSession>, f: F) -> ApiResult
where
    F: FnOnce(&AnalysisSession) -> ApiResult + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&session))
        .await
        .map_err(|e| ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "internal",
            message: e.to_string(),
        })?
}

pub fn router(session: Arc<AnalysisSession>) -> Router {
    let api = Router::new()
        .route("/spec", get(spec))
        .route("/manifest", get(manifest))
        .route("/report", get(report))
        .route("/errors", get(errors))
        .route("/confusion", get(confusion))
        .route("/lexical/diversity", get(diversity))
        .route("/lexical/oov", get(oov))
        .route("/lexical/overlap", get(overlap))
        .route("/aggregates", get(aggregates))
        .route("/correlations", get(correlations))
        .route("/tokens", get(tokens))
        .route("/tokens/{id}/distribution", get(distribution))
        .route("/tokens/{id}/similar", get(similar))
        .route("/scatter", get(scatter))
        .route("/projection", get(projection))
        .route("/selection/summary", post(selection))
        .route("/sentences/{split}/{idx}", get(sentence))
        .route("/attention/summary", get(attention_summary))
        .route("/attention/sentence/{idx}", get(attention_sentence))
        .route("/clusters", get(clusters))
        .with_state(session);
    Router::new().nest(PREFIX, api).fallback(not_found)
}

async fn not_found() -> ApiError {
    ApiError {
        status: StatusCode::NOT_FOUND,
        code: "not_found",
        message: "no such endpoint".into(),
    }
}

async fn spec() -> Json<Value> {
    Json(crate::openapi::document())
}

async fn manifest(State(s): Shared) -> ApiResult {
    blocking(s, |s| {
        let v = s.violations();
        Ok(Json(json!({
            "manifest": s.bundle().manifest,
            "valid": v.is_empty(),
            "violation_count": v.len(),
            "violations": v.iter().take(100).collect::<Vec<_>>(),
            "session": s.options(),
            "sentences": {
                "train": s.bundle().sentences(Split::Train).len(),
                "test": s.bundle().sentences(Split::Test).len(),
            },
            "core_tokens": {
                "train": s.bundle().core_tokens(Split::Train).len(),
                "test": s.bundle().core_tokens(Split::Test).len(),
            },
        })))
    })
    .await
}

fn level_mode(q: &BTreeMap<String, String>) -> Result<(Level, DecodeMode), ApiError> {
    Ok((param(q, "level", Level::Entity)?, param(q, "mode", DecodeMode::Repair)?))
}

async fn report(State(s): Shared, Query(q): Params) -> ApiResult {
    let (level, mode) = level_mode(&q)?;
    let opts = ReportOptions {
        exclude_o: param(&q, "exclude_o", false)?,
    };
    blocking(s, move |s| to_json(&*s.score(level, mode, opts)?)).await
}

async fn errors(State(s): Shared, Query(q): Params) -> ApiResult {
    let mode = param(&q, "mode", DecodeMode::Repair)?;
    blocking(s, move |s| {
        let listing = s.error_listing(mode, q.get("side").map(String::as_str), q.get("type").map(String::as_str))?;
        let summary = s.score(Level::Entity, mode, ReportOptions::default())?;
        Ok(Json(json!({
            "mode": listing.mode,
            "total": listing.total,
            "records": listing.records,
            "summary": summary.errors,
        })))
    })
    .await
}

async fn confusion(State(s): Shared, Query(q): Params) -> ApiResult {
    let (level, mode) = level_mode(&q)?;
    blocking(s, move |s| to_json(&s.confusion(level, mode)?)).await
}

async fn diversity(State(s): Shared, Query(q): Params) -> ApiResult {
    let level = param(&q, "level", VocabLevel::Word)?;
    let scope = param(&q, "scope", Scope::All)?;
    blocking(s, move |s| to_json(&diversity_stats(s.bundle(), level, scope))).await
}

async fn oov(State(s): Shared, Query(q): Params) -> ApiResult {
    let level = param(&q, "level", VocabLevel::Word)?;
    blocking(s, move |s| to_json(&oov_rates(s.bundle(), level))).await
}

async fn overlap(State(s): Shared, Query(q): Params) -> ApiResult {
    let level = param(&q, "level", VocabLevel::Word)?;
    let split = param(&q, "split", Split::Train)?;
    blocking(s, move |s| to_json(&tag_overlap_matrix(s.bundle(), level, split))).await
}

async fn aggregates(State(s): Shared, Query(q): Params) -> ApiResult {
    let by_correctness = param(&q, "split_correctness", true)?;
    blocking(s, move |s| {
        let t = s.token_table()?;
        to_json(&aggregate_by_tag(&t.rows, s.bundle().labels.labels(), by_correctness))
    })
    .await
}

async fn correlations(State(s): Shared, Query(q): Params) -> ApiResult {
    let metrics: Vec<String> = q
        .get("metrics")
        .map(|m| m.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect())
        .unwrap_or_default();
    let coef = q.get("coef").cloned().unwrap_or_else(|| "pearson".into());
    blocking(s, move |s| to_json(&s.correlations(&metrics, &coef)?)).await
}

async fn tokens(State(s): Shared, Query(q): Params) -> ApiResult {
    let page = param(&q, "page", 1usize)?;
    let per_page = param(&q, "per_page", DEFAULT_PAGE_SIZE)?;
    let filter = q.get("filter").cloned().unwrap_or_default();
    blocking(s, move |s| to_json(&s.token_page(&filter, page, per_page)?)).await
}

async fn distribution(State(s): Shared, Path(id): Path<String>) -> ApiResult {
    blocking(s, move |s| to_json(&s.token_distribution(&id)?)).await
}

async fn similar(State(s): Shared, Path(id): Path<String>, Query(q): Params) -> ApiResult {
    let limit = param(&q, "limit", 20usize)?;
    blocking(s, move |s| to_json(&s.token_similarity_query(&id, limit)?)).await
}

async fn scatter(State(s): Shared, Query(q): Params) -> ApiResult {
    let x = q.get("x").cloned().ok_or_else(|| unprocessable("missing `x`"))?;
    let y = q.get("y").cloned().ok_or_else(|| unprocessable("missing `y`"))?;
    let color = q.get("color").cloned();
    blocking(s, move |s| to_json(&s.scatter(&x, &y, color.as_deref())?)).await
}

async fn projection(State(s): Shared, Query(q): Params) -> ApiResult {
    let state = param(&q, "state", ModelState::FineTuned)?;
    blocking(s, move |s| to_json(&*s.projection(state)?)).await
}

#[derive(Deserialize)]
struct SelectionRequest {
    ids: Vec<String>,
    categorical: String,
}

async fn selection(State(s): Shared, body: Result<Json<SelectionRequest>, axum::extract::rejection::JsonRejection>) -> ApiResult {
    let Json(req) = body.map_err(|e| unprocessable(e.body_text()))?;
    blocking(s, move |s| to_json(&s.selection_summary(&req.ids, &req.categorical)?)).await
}

async fn sentence(State(s): Shared, Path((split, idx)): Path<(String, String)>) -> ApiResult {
    let split: Split = split
        .parse()
        .map_err(|_| ApiError::from(QueryError::NotFound(format!("no split `{split}`"))))?;
    let idx: usize = idx
        .parse()
        .map_err(|_| unprocessable(format!("invalid sentence index `{idx}`")))?;
    blocking(s, move |s| to_json(&s.sentence_view(split, idx)?)).await
}

async fn attention_summary(State(s): Shared, Query(q): Params) -> ApiResult {
    let kind = param(&q, "kind", SimilarityKind::Scores)?;
    blocking(s, move |s| to_json(&s.attention_summary(kind)?)).await
}

async fn attention_sentence(State(s): Shared, Path(idx): Path<String>) -> ApiResult {
    let idx: usize = idx
        .parse()
        .map_err(|_| unprocessable(format!("invalid sentence index `{idx}`")))?;
    blocking(s, move |s| Ok(Json(s.attention_sentence(idx)?))).await
}

async fn clusters(State(s): Shared, Query(q): Params) -> ApiResult {
    let k = param(&q, "k", 4usize)?;
    if !(1..=64).contains(&k) {
        return Err(unprocessable("k must lie in 1..=64"));
    }
    blocking(s, move |s| to_json(&s.cluster_view(k)?)).await
}
