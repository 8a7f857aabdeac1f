use std::fmt::Write as _;
use std::sync::Arc;

use axum::extract::{Path, Query, Request, State};
use axum::http::header;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dialsec::annotate::{task_detail, AnnotationTask, TaskDetail, TaskStatus};
use dialsec::refine::{RelabelLog, RoundMetrics};
use dialsec::ClusterVerdict;
use serde::Deserialize;

use crate::{ApiError, FinalizeSummary, RoundInfo, Service, VerdictAck};

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Routes under `/api`, behind bearer authentication when a token is set.
pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/api/rounds", get(list_rounds))
        .route("/api/rounds/{k}/clusters", get(list_clusters))
        .route("/api/rounds/{k}/finalize", post(finalize))
        .route("/api/rounds/{k}/metrics", get(metrics))
        .route("/api/rounds/{k}/similarity.csv", get(similarity_csv))
        .route("/api/rounds/{k}/relabel-log", get(relabel_log))
        .route("/api/tasks/{task_id}", get(get_task))
        .route("/api/tasks/{task_id}/verdict", post(post_verdict))
        .route_layer(middleware::from_fn_with_state(service.clone(), auth))
        .with_state(service)
}

async fn auth(State(svc): State<Arc<Service>>, req: Request, next: Next) -> Response {
    if let Some(token) = &svc.config().token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == token);
        if !ok {
            return ApiError::unauthorized().into_response();
        }
    }
    next.run(req).await
}

async fn list_rounds(State(svc): State<Arc<Service>>) -> ApiResult<Vec<RoundInfo>> {
    Ok(Json(svc.round_infos()?))
}

#[derive(Deserialize)]
struct StatusQuery {
    status: Option<String>,
}

async fn list_clusters(
    State(svc): State<Arc<Service>>,
    Path(k): Path<usize>,
    Query(q): Query<StatusQuery>,
) -> ApiResult<Vec<AnnotationTask>> {
    let status = match q.status.as_deref() {
        None => None,
        Some("pending") => Some(TaskStatus::Pending),
        Some("done") => Some(TaskStatus::Done),
        Some(other) => return Err(ApiError::bad_request(format!("status must be pending or done, got `{other}`"))),
    };
    Ok(Json(svc.tasks(k, status)?))
}

async fn get_task(State(svc): State<Arc<Service>>, Path(task_id): Path<String>) -> ApiResult<TaskDetail> {
    let task = svc.task(&task_id)?;
    Ok(Json(task_detail(&task, svc.corpus())?))
}

#[derive(Deserialize)]
struct VerdictBody {
    verdict: String,
    #[serde(default)]
    annotator_id: Option<String>,
}

async fn post_verdict(
    State(svc): State<Arc<Service>>,
    Path(task_id): Path<String>,
    body: Result<Json<VerdictBody>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<VerdictAck> {
    let Json(body) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let verdict: ClusterVerdict = body.verdict.parse().map_err(|_| {
        ApiError::bad_request(format!("unknown verdict `{}`", body.verdict)).with_details(serde_json::json!({
            "allowed": ClusterVerdict::ALL.iter().map(|v| v.as_str()).collect::<Vec<_>>()
        }))
    })?;
    Ok(Json(svc.submit(&task_id, verdict, body.annotator_id.as_deref())?))
}

async fn finalize(State(svc): State<Arc<Service>>, Path(k): Path<usize>) -> ApiResult<FinalizeSummary> {
    Ok(Json(svc.finalize(k)?))
}

fn load_metrics(svc: &Service, k: usize) -> Result<RoundMetrics, ApiError> {
    if !svc.store().is_complete(k) {
        return Err(ApiError::not_found(format!("round {k} has no metrics yet")));
    }
    svc.store()
        .load_metrics(k)?
        .ok_or_else(|| ApiError::not_found(format!("round {k} was run without ground truth")))
}

async fn metrics(State(svc): State<Arc<Service>>, Path(k): Path<usize>) -> ApiResult<RoundMetrics> {
    Ok(Json(load_metrics(&svc, k)?))
}

async fn similarity_csv(State(svc): State<Arc<Service>>, Path(k): Path<usize>) -> Result<Response, ApiError> {
    let m = load_metrics(&svc, k)?;
    let mut out = String::from("class,pairs,bin_left,bin_right,count\n");
    for c in &m.similarity.classes {
        for (kind, h) in [("self", &c.self_hist), ("other", &c.other_hist)] {
            for (i, n) in h.counts.iter().enumerate() {
                let (l, r) = h.bin_edges(i);
                let _ = writeln!(out, "{},{kind},{l:.4},{r:.4},{n}", c.class.as_str());
            }
        }
    }
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], out).into_response())
}

async fn relabel_log(State(svc): State<Arc<Service>>, Path(k): Path<usize>) -> ApiResult<RelabelLog> {
    if svc.store().is_complete(k) {
        return Ok(Json(svc.store().load_relabel_log(k)?));
    }
    Ok(Json(svc.finalize_preview(k)?))
}
