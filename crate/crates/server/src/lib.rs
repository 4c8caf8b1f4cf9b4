//! Read-only JSON service over one loaded dataset.
//!
//! All routes live under `/v1`:
//!
//! | method | path | body |
//! |---|---|---|
//! | GET | `/v1/patients` | patient list |
//! | GET | `/v1/patients/{id}/path` | clinical path |
//! | GET | `/v1/patients/{id}/tests/{acronym}/series` | one test series |
//! | GET | `/v1/patients/{id}/series?tests=a,b` | several series |
//! | GET | `/v1/patients/{id}/summaries` | per-day summaries |
//! | GET | `/v1/groups` | test group table |
//! | GET | `/v1/categories` | category codes and symbols |
//! | GET, PUT | `/v1/config` | presentation config |
//!
//! Query dates are ISO `yyyy-MM-dd`. Errors are `{"error": "...", "status": n}`.

pub mod config;

use std::collections::BTreeSet;
use std::future::Future;
use std::io;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use chrono::NaiveDate;
use clinpath::analytics::{day_summaries, test_series, AnalyticsError, DayFilter, DaySummary, TestSeries};
use clinpath::model::TestGroup;
use clinpath::timeline::TimelineError;
use clinpath::{
    build_clinical_path, ClinicalPath, Dataset, DayOrder, GroupTable, PathOptions, ResultCategory, Scalar, Sex,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::net::TcpListener;
use tower_http::services::ServeDir;

pub use config::{ConfigError, ConfigStore, PresentationConfig, Theme};

pub struct AppState<T = f64> {
    pub dataset: Arc<Dataset<T>>,
    pub groups: Arc<GroupTable>,
    pub config: ConfigStore,
}

impl<T: Scalar> AppState<T> {
    pub fn new(dataset: Dataset<T>, groups: GroupTable, config: ConfigStore) -> Self {
        Self {
            dataset: Arc::new(dataset),
            groups: Arc::new(groups),
            config,
        }
    }

    fn threshold(&self) -> Result<T, ApiError> {
        let percent = self.config.snapshot().rc_threshold_percent;
        T::parse_decimal(&percent.to_string())
            .or_else(|| T::from_f64(percent))
            .ok_or_else(|| ApiError::internal(format!("threshold {percent} is not representable")))
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    status: u16,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: &self.message,
            status: self.status.as_u16(),
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<TimelineError> for ApiError {
    fn from(e: TimelineError) -> Self {
        match e {
            TimelineError::UnknownPatient(_) => Self::new(StatusCode::NOT_FOUND, e.to_string()),
            TimelineError::InvertedWindow { .. } => Self::bad_request(e.to_string()),
            TimelineError::BadThreshold => Self::internal(e.to_string()),
        }
    }
}

impl From<AnalyticsError> for ApiError {
    fn from(e: AnalyticsError) -> Self {
        match e {
            AnalyticsError::UnknownPatient(_) | AnalyticsError::UnknownTest { .. } => {
                Self::new(StatusCode::NOT_FOUND, e.to_string())
            }
            AnalyticsError::BadThreshold => Self::internal(e.to_string()),
        }
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        Self::bad_request(e.body_text())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientSummary {
    pub patient_id: String,
    pub sex: Sex,
    pub age: Option<u32>,
    pub result_count: usize,
    pub first_day: Option<NaiveDate>,
    pub last_day: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesBundle<T = f64> {
    pub patient_id: String,
    pub series: Vec<TestSeries<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryInfo {
    pub category: ResultCategory,
    pub code: String,
    pub symbol: String,
}

#[derive(Debug, Default, Deserialize)]
struct WindowQuery {
    from: Option<String>,
    to: Option<String>,
    tests: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
struct PathQuery {
    from: Option<String>,
    to: Option<String>,
    only_days_with_tests: Option<String>,
    order: Option<String>,
    tests: Option<String>,
    groups: Option<String>,
}

fn parse_date(name: &str, text: Option<&str>) -> Result<Option<NaiveDate>, ApiError> {
    match text.map(str::trim).filter(|t| !t.is_empty()) {
        None => Ok(None),
        Some(t) => NaiveDate::parse_from_str(t, "%Y-%m-%d")
            .map(Some)
            .map_err(|_| ApiError::bad_request(format!("{name}: expected yyyy-MM-dd, got {t:?}"))),
    }
}

fn parse_window(from: Option<&str>, to: Option<&str>) -> Result<DayFilter, ApiError> {
    let filter = DayFilter {
        from: parse_date("from", from)?,
        to: parse_date("to", to)?,
    };
    if let (Some(f), Some(t)) = (filter.from, filter.to) {
        if f > t {
            return Err(ApiError::bad_request(format!("from {f} is after to {t}")));
        }
    }
    Ok(filter)
}

fn parse_bool(name: &str, text: Option<&str>) -> Result<bool, ApiError> {
    match text.map(str::trim) {
        None | Some("") => Ok(false),
        Some("true" | "1") => Ok(true),
        Some("false" | "0") => Ok(false),
        Some(other) => Err(ApiError::bad_request(format!("{name}: expected true or false, got {other:?}"))),
    }
}

fn parse_order(text: Option<&str>) -> Result<DayOrder, ApiError> {
    match text.map(str::trim) {
        None | Some("") | Some("asc") => Ok(DayOrder::Ascending),
        Some("desc") => Ok(DayOrder::Descending),
        Some(other) => Err(ApiError::bad_request(format!("order: expected asc or desc, got {other:?}"))),
    }
}

fn parse_list(text: Option<&str>) -> Option<BTreeSet<String>> {
    text.map(|t| {
        t.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_owned)
            .collect()
    })
}

impl PathQuery {
    fn options(&self) -> Result<PathOptions, ApiError> {
        let window = parse_window(self.from.as_deref(), self.to.as_deref())?;
        Ok(PathOptions {
            date_from: window.from,
            date_to: window.to,
            only_days_with_tests: parse_bool("only_days_with_tests", self.only_days_with_tests.as_deref())?,
            day_order: parse_order(self.order.as_deref())?,
            selected_tests: parse_list(self.tests.as_deref()),
            selected_groups: parse_list(self.groups.as_deref()),
        })
    }
}

type Shared<T> = State<Arc<AppState<T>>>;

async fn list_patients<T: Scalar>(State(state): Shared<T>) -> Json<Vec<PatientSummary>> {
    let ds = &state.dataset;
    let list = ds
        .patients()
        .values()
        .map(|p| {
            let results = ds.patient_results(&p.patient_id);
            PatientSummary {
                patient_id: p.patient_id.clone(),
                sex: p.sex,
                age: p.age,
                result_count: results.len(),
                first_day: results.iter().map(|r| r.day).min(),
                last_day: results.iter().map(|r| r.day).max(),
            }
        })
        .collect();
    Json(list)
}

async fn get_path<T: Scalar>(
    State(state): Shared<T>,
    Path(id): Path<String>,
    query: Result<Query<PathQuery>, QueryRejection>,
) -> Result<Json<ClinicalPath<T>>, ApiError> {
    let Query(query) = query?;
    let options = query.options()?;
    let threshold = state.threshold()?;
    Ok(Json(build_clinical_path(&state.dataset, &state.groups, &id, &options, threshold)?))
}

async fn get_series<T: Scalar>(
    State(state): Shared<T>,
    Path((id, acronym)): Path<(String, String)>,
    query: Result<Query<WindowQuery>, QueryRejection>,
) -> Result<Json<TestSeries<T>>, ApiError> {
    let Query(query) = query?;
    let filter = parse_window(query.from.as_deref(), query.to.as_deref())?;
    let threshold = state.threshold()?;
    Ok(Json(test_series(&state.dataset, &id, &acronym, filter, threshold)?))
}

async fn get_multi_series<T: Scalar>(
    State(state): Shared<T>,
    Path(id): Path<String>,
    query: Result<Query<WindowQuery>, QueryRejection>,
) -> Result<Json<SeriesBundle<T>>, ApiError> {
    let Query(query) = query?;
    let filter = parse_window(query.from.as_deref(), query.to.as_deref())?;
    // Keep the caller's order, dropping repeats.
    let mut seen = BTreeSet::new();
    let tests: Vec<&str> = query
        .tests
        .as_deref()
        .unwrap_or_default()
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty() && seen.insert(*t))
        .collect();
    if tests.is_empty() {
        return Err(ApiError::bad_request("tests: expected a comma-separated list of acronyms"));
    }
    let threshold = state.threshold()?;
    let series = tests
        .iter()
        .map(|t| test_series(&state.dataset, &id, t, filter, threshold))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Json(SeriesBundle { patient_id: id, series }))
}

async fn get_summaries<T: Scalar>(
    State(state): Shared<T>,
    Path(id): Path<String>,
    query: Result<Query<WindowQuery>, QueryRejection>,
) -> Result<Json<Vec<DaySummary>>, ApiError> {
    let Query(query) = query?;
    let filter = parse_window(query.from.as_deref(), query.to.as_deref())?;
    let threshold = state.threshold()?;
    Ok(Json(day_summaries(&state.dataset, &id, filter, threshold)?))
}

async fn get_groups<T: Scalar>(State(state): Shared<T>) -> Json<Vec<TestGroup>> {
    Json(state.groups.groups().to_vec())
}

async fn get_categories() -> Json<Vec<CategoryInfo>> {
    Json(
        ResultCategory::ALL
            .iter()
            .map(|&c| CategoryInfo {
                category: c,
                code: c.code().to_owned(),
                symbol: c.symbol().to_owned(),
            })
            .collect(),
    )
}

async fn get_config<T: Scalar>(State(state): Shared<T>) -> Json<PresentationConfig> {
    Json((*state.config.snapshot()).clone())
}

async fn put_config<T: Scalar>(State(state): Shared<T>, body: Bytes) -> Result<Json<PresentationConfig>, ApiError> {
    let config: PresentationConfig = serde_json::from_slice(&body).map_err(|e| {
        let status = if e.is_data() {
            StatusCode::UNPROCESSABLE_ENTITY
        } else {
            StatusCode::BAD_REQUEST
        };
        ApiError::new(status, e.to_string())
    })?;
    match state.config.replace(config) {
        Ok(next) => Ok(Json((*next).clone())),
        Err(config::ReplaceError::Invalid(e)) => Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())),
        Err(e) => Err(ApiError::internal(e.to_string())),
    }
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "no such route")
}

/// The `/v1` API. With `ui_dir`, other paths are served as static files.
pub fn router<T: Scalar>(state: Arc<AppState<T>>, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/v1/patients", get(list_patients::<T>))
        .route("/v1/patients/{id}/path", get(get_path::<T>))
        .route("/v1/patients/{id}/tests/{acronym}/series", get(get_series::<T>))
        .route("/v1/patients/{id}/series", get(get_multi_series::<T>))
        .route("/v1/patients/{id}/summaries", get(get_summaries::<T>))
        .route("/v1/groups", get(get_groups::<T>))
        .route("/v1/categories", get(get_categories))
        .route("/v1/config", get(get_config::<T>).put(put_config::<T>))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(not_found),
    }
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: String, source: io::Error },
    #[error("server error: {0}")]
    Io(#[from] io::Error),
}

pub async fn bind(addr: &str) -> Result<TcpListener, ServeError> {
    TcpListener::bind(addr).await.map_err(|source| ServeError::Bind {
        addr: addr.to_owned(),
        source,
    })
}

/// Serves `app` on `listener` until `shutdown` resolves.
pub async fn serve<F>(listener: TcpListener, app: Router, shutdown: F) -> Result<(), ServeError>
where
    F: Future<Output = ()> + Send + 'static,
{
    if let Ok(addr) = listener.local_addr() {
        tracing::info!(%addr, "listening");
    }
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await?;
    Ok(())
}
