//! HTTP front end for the experiment runner. Each route takes the runner's
//! request type as JSON and answers with its result type.

use axum::extract::Json;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::Serialize;
use swipt_runner::{ErrorBody, Job, RunError, SweepRequest, ValidateRequest};

pub struct ApiError(RunError);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self.0 {
            RunError::Solve(_) | RunError::Io { .. } | RunError::Csv(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        (status, Json(ErrorBody::from(&self.0))).into_response()
    }
}

async fn blocking<T, F>(f: F) -> Result<Json<T>, ApiError>
where
    T: Serialize + Send + 'static,
    F: FnOnce() -> Result<T, RunError> + Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map(Json).map_err(ApiError),
        Err(e) => std::panic::resume_unwind(e.into_panic()),
    }
}

async fn feasible(Json(job): Json<Job>) -> Result<Json<swipt_runner::FeasibleRun>, ApiError> {
    tracing::info!(seed = ?job.seed, "feasible");
    blocking(move || swipt_runner::run_feasible(&job)).await
}

async fn solve(Json(job): Json<Job>) -> Result<Json<swipt_runner::SolveRun>, ApiError> {
    tracing::info!(seed = ?job.seed, "solve");
    blocking(move || swipt_runner::run_solve(&job)).await
}

async fn validate(Json(req): Json<ValidateRequest>) -> Result<Json<swipt_runner::ValidateRun>, ApiError> {
    tracing::info!(seed = ?req.job.seed, draws = req.options.draws, "validate");
    blocking(move || swipt_runner::run_validate(&req)).await
}

async fn sweep(Json(req): Json<SweepRequest>) -> Result<Json<swipt_runner::SweepRun>, ApiError> {
    tracing::info!(axis = %req.axis, points = req.values.len(), seeds = req.seeds.len(), "sweep");
    blocking(move || swipt_runner::run_sweep(&req)).await
}

pub fn router() -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/feasible", post(feasible))
        .route("/solve", post(solve))
        .route("/validate", post(validate))
        .route("/sweep", post(sweep))
}
