//! HTTP API over a [`Store`].

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use kgx_core::analysis::{compare_systems, drill_down, AnalysisError};
use kgx_core::bucketizer::{BucketError, FeatureSpec};
use kgx_core::confidence::{CiConfig, CiMethod};
use kgx_core::Metric;
use serde::Serialize;
use tokio::net::TcpListener;

use crate::store::{Store, StoreError};

pub const DEFAULT_PAGE: usize = 50;
pub const MAX_PAGE: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

impl From<AnalysisError> for ApiError {
    fn from(e: AnalysisError) -> Self {
        let msg = e.to_string();
        match e {
            AnalysisError::Comparability(_) | AnalysisError::MetricMissing(_) => ApiError::new(StatusCode::CONFLICT, "comparability_error", msg),
            AnalysisError::UnknownBucket { .. } => ApiError::new(StatusCode::NOT_FOUND, "unknown_bucket", msg),
            AnalysisError::Bucket(BucketError::MissingResource { .. } | BucketError::UnknownFeature(_)) => {
                ApiError::new(StatusCode::BAD_REQUEST, "invalid_feature", msg)
            }
            AnalysisError::Empty => ApiError::new(StatusCode::BAD_REQUEST, "empty_system", msg),
            AnalysisError::TooFewReports | AnalysisError::Ci(_) | AnalysisError::Metric(_) => ApiError::bad_request(msg),
            AnalysisError::Bucket(_) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", msg),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let msg = e.to_string();
        match e {
            StoreError::NotFound(_) => ApiError::new(StatusCode::NOT_FOUND, "not_found", msg),
            StoreError::Validation(_) => ApiError::new(StatusCode::BAD_REQUEST, "validation_error", msg),
            StoreError::Analysis(a) => a.into(),
            StoreError::Corrupt { .. } | StoreError::Injected(_) | StoreError::Io(_) => {
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage_error", msg)
            }
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Query string with a fixed set of accepted keys.
struct Params(BTreeMap<String, String>);

impl Params {
    fn new(q: BTreeMap<String, String>, allowed: &[&str]) -> ApiResult<Self> {
        if let Some(k) = q.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(ApiError::bad_request(format!("unknown query parameter '{k}' (accepted: {})", allowed.join(", "))));
        }
        Ok(Params(q))
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str).filter(|v| !v.is_empty())
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> ApiResult<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|e| ApiError::bad_request(format!("parameter '{key}': {e}"))))
            .transpose()
    }

    fn metrics(&self) -> ApiResult<Vec<Metric>> {
        match self.get("metric") {
            None => Ok(Vec::new()),
            Some(v) => Metric::parse_list(v).map_err(|e| ApiError::bad_request(format!("parameter 'metric': {e}"))),
        }
    }

    fn features(&self) -> Vec<FeatureSpec> {
        self.get("feature").map(FeatureSpec::parse_list).unwrap_or_default()
    }

    /// `ci=none` or absent disables intervals.
    fn ci(&self) -> ApiResult<Option<CiConfig>> {
        let method = match self.get("ci") {
            None | Some("none") => return Ok(None),
            Some(m) => m.parse::<CiMethod>().map_err(|e| ApiError::bad_request(format!("parameter 'ci': {e}")))?,
        };
        let d = CiConfig::default();
        let cfg = CiConfig {
            method,
            level: self.parse("ci_level")?.unwrap_or(d.level),
            resamples: self.parse("ci_resamples")?.unwrap_or(d.resamples),
            seed: self.parse("ci_seed")?.unwrap_or(d.seed),
            min_bucket_size: self.parse("ci_min_bucket")?.unwrap_or(d.min_bucket_size),
        };
        cfg.validate().map_err(|e| ApiError::bad_request(e.to_string()))?;
        Ok(Some(cfg))
    }
}

const ANALYSIS_KEYS: [&str; 7] = ["metric", "feature", "ci", "ci_level", "ci_seed", "ci_resamples", "ci_min_bucket"];

fn json_text(text: String) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], text).into_response()
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

#[derive(Serialize)]
struct Created {
    id: String,
    created: bool,
}

async fn post_system(State(store): State<Arc<Store>>, body: Bytes) -> ApiResult<Response> {
    let (id, created) = blocking(move || Ok(store.put_bytes(&body)?)).await?;
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(Created { id, created })).into_response())
}

async fn list_systems(State(store): State<Arc<Store>>) -> ApiResult<Response> {
    let entries = blocking(move || Ok(store.list()?)).await?;
    Ok(Json(entries).into_response())
}

async fn get_system(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult<Response> {
    let entry = blocking(move || Ok(store.entry(&id)?)).await?;
    Ok(Json(entry).into_response())
}

async fn delete_system(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    blocking(move || Ok(store.delete(&id)?)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn analysis(State(store): State<Arc<Store>>, Path(id): Path<String>, Query(q): Query<BTreeMap<String, String>>) -> ApiResult<Response> {
    let p = Params::new(q, &ANALYSIS_KEYS)?;
    let (features, metrics, ci) = (p.features(), p.metrics()?, p.ci()?);
    let text = blocking(move || {
        let req = store.request_for(&id, &features, &metrics, ci)?;
        Ok(store.analysis_cached(&id, &req)?.1)
    })
    .await?;
    Ok(json_text(text))
}

async fn compare(State(store): State<Arc<Store>>, Query(q): Query<BTreeMap<String, String>>) -> ApiResult<Response> {
    let mut keys = ANALYSIS_KEYS.to_vec();
    keys.push("ids");
    let p = Params::new(q, &keys)?;
    let ids: Vec<String> = p.get("ids").unwrap_or_default().split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_owned).collect();
    if ids.len() < 2 {
        return Err(ApiError::bad_request("parameter 'ids' needs at least two comma-separated system ids"));
    }
    let metric = match p.metrics()?.as_slice() {
        [] => Metric::Mrr,
        [m] => *m,
        _ => return Err(ApiError::bad_request("parameter 'metric' takes a single metric for comparisons")),
    };
    let (features, ci) = (p.features(), p.ci()?);
    let text = blocking(move || {
        let mut metrics = Metric::defaults();
        metrics.push(metric);
        let reports = ids
            .iter()
            .map(|id| {
                let req = store.request_for(id, &features, &metrics, ci)?;
                Ok(store.analysis_cached(id, &req)?.0)
            })
            .collect::<Result<Vec<_>, StoreError>>()?;
        Ok(compare_systems(&reports, metric)?.to_json())
    })
    .await?;
    Ok(json_text(text))
}

#[derive(Serialize)]
struct ExamplesPage {
    feature: String,
    bucket: String,
    total: usize,
    offset: usize,
    limit: usize,
    records: Vec<kgx_core::ExampleRecord>,
}

async fn examples(
    State(store): State<Arc<Store>>,
    Path((id, feature, label)): Path<(String, String, String)>,
    Query(q): Query<BTreeMap<String, String>>,
) -> ApiResult<Response> {
    let p = Params::new(q, &["offset", "limit"])?;
    let offset = p.parse::<usize>("offset")?.unwrap_or(0);
    let limit = p.parse::<usize>("limit")?.unwrap_or(DEFAULT_PAGE);
    if limit > MAX_PAGE {
        return Err(ApiError::bad_request(format!("parameter 'limit' must be at most {MAX_PAGE}")));
    }
    let page = blocking(move || {
        let s = store.get(&id)?;
        let spec = FeatureSpec::parse(&feature);
        let page = drill_down(&s, &spec, &label, offset, limit, store.resources())?;
        Ok(ExamplesPage {
            feature,
            bucket: label,
            total: page.total,
            offset,
            limit,
            records: page.records.into_iter().cloned().collect(),
        })
    })
    .await?;
    Ok(Json(page).into_response())
}

async fn fallback() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "no_route", "no such endpoint")
}

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/api/systems", get(list_systems).post(post_system))
        .route("/api/systems/{id}", get(get_system).delete(delete_system))
        .route("/api/systems/{id}/analysis", get(analysis))
        .route("/api/systems/{id}/buckets/{feature}/{label}/examples", get(examples))
        .route("/api/compare", get(compare))
        .fallback(fallback)
        .with_state(store)
}

/// Serves the API on `listener` until `shutdown` resolves.
pub async fn serve(store: Arc<Store>, listener: TcpListener, shutdown: impl std::future::Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(store)).with_graceful_shutdown(shutdown).await
}
