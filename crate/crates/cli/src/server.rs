//! HTTP/JSON front of the matching service.
//!
//! Errors are `{error, detail}` with 400 for validation, 404 for an unknown
//! id, 422 when no pet is found and 500 otherwise.

use std::sync::Arc;

use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use petreid_core::matchd::{GeoBox, MatchResult, MatchService, SightingMeta, DEFAULT_TOP_K};
use petreid_core::Error;
use serde::{Deserialize, Serialize};

const MAX_UPLOAD: usize = 32 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub error: String,
    pub detail: String,
}

impl ApiError {
    pub fn bad_request(detail: impl Into<String>) -> Self {
        Self {
            status: 400,
            error: "validation".to_owned(),
            detail: detail.into(),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, error) = match &e {
            Error::InvalidInput(_) => (400, "validation"),
            Error::NotFound(_) => (404, "not_found"),
            Error::NoPetFound => (422, "no_pet_found"),
            _ => (500, "internal"),
        };
        Self {
            status,
            error: error.to_owned(),
            detail: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        if status.is_server_error() {
            log::error!("{}: {}", self.error, self.detail);
        }
        (status, Json(self)).into_response()
    }
}

type Shared = Arc<MatchService>;
type ApiResult<T> = Result<T, ApiError>;

pub fn router(service: Shared) -> Router {
    Router::new()
        .route("/api/sightings", post(register).get(list))
        .route("/api/sightings/{id}/image", get(image))
        .route("/api/match", post(match_image))
        .route("/api/health", get(health))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD))
        .with_state(service)
}

/// Runs a CPU-bound service call off the async workers.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> petreid_core::Result<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError {
            status: 500,
            error: "internal".to_owned(),
            detail: format!("worker failed: {e}"),
        })?
        .map_err(ApiError::from)
}

#[derive(Default)]
struct Form {
    image: Option<Vec<u8>>,
    fields: Vec<(String, String)>,
}

impl Form {
    async fn read(mut multipart: Multipart) -> ApiResult<Self> {
        let mut form = Form::default();
        while let Some(field) = multipart
            .next_field()
            .await
            .map_err(|e| ApiError::bad_request(format!("malformed multipart body: {e}")))?
        {
            let name = field.name().unwrap_or_default().to_owned();
            let bytes = field
                .bytes()
                .await
                .map_err(|e| ApiError::bad_request(format!("field {name}: {e}")))?;
            if name == "image" {
                form.image = Some(bytes.to_vec());
            } else {
                let text = String::from_utf8(bytes.to_vec())
                    .map_err(|_| ApiError::bad_request(format!("field {name} is not UTF-8")))?;
                form.fields.push((name, text));
            }
        }
        Ok(form)
    }

    fn image(&mut self) -> ApiResult<Vec<u8>> {
        self.image
            .take()
            .ok_or_else(|| ApiError::bad_request("missing field image"))
    }

    fn text(&self, name: &str) -> ApiResult<&str> {
        self.fields
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.trim())
            .ok_or_else(|| ApiError::bad_request(format!("missing field {name}")))
    }

    fn number(&self, name: &str) -> ApiResult<f64> {
        let raw = self.text(name)?;
        raw.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| ApiError::bad_request(format!("field {name}: `{raw}` is not a number")))
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Registered {
    pub sighting_id: String,
}

async fn register(State(svc): State<Shared>, multipart: Multipart) -> ApiResult<(StatusCode, Json<Registered>)> {
    let mut form = Form::read(multipart).await?;
    let image = form.image()?;
    let lat = form.number("lat")?;
    let lon = form.number("lon")?;
    let raw = form.text("observed_at")?;
    let observed_at = DateTime::parse_from_rfc3339(raw)
        .map_err(|e| ApiError::bad_request(format!("observed_at `{raw}`: {e}")))?
        .with_timezone(&Utc);
    let sighting_id = blocking(move || svc.register_sighting(&image, lat, lon, observed_at)).await?;
    Ok((StatusCode::CREATED, Json(Registered { sighting_id })))
}

#[derive(Debug, Deserialize)]
struct MatchQuery {
    top_k: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Matches {
    pub matches: Vec<MatchResult>,
}

async fn match_image(
    State(svc): State<Shared>,
    Query(q): Query<MatchQuery>,
    multipart: Multipart,
) -> ApiResult<Json<Matches>> {
    let top_k = match q.top_k.as_deref() {
        None => DEFAULT_TOP_K,
        Some(raw) => raw
            .parse::<usize>()
            .ok()
            .filter(|&k| k >= 1)
            .ok_or_else(|| ApiError::bad_request(format!("top_k `{raw}` is not a positive integer")))?,
    };
    let mut form = Form::read(multipart).await?;
    let image = form.image()?;
    let matches = blocking(move || svc.match_image(&image, top_k)).await?;
    Ok(Json(Matches { matches }))
}

#[derive(Debug, Deserialize)]
struct BoxQuery {
    min_lat: Option<String>,
    max_lat: Option<String>,
    min_lon: Option<String>,
    max_lon: Option<String>,
}

impl BoxQuery {
    fn geo_box(&self) -> ApiResult<Option<GeoBox>> {
        let parts = [&self.min_lat, &self.max_lat, &self.min_lon, &self.max_lon];
        if parts.iter().all(|p| p.is_none()) {
            return Ok(None);
        }
        let mut v = [0.0; 4];
        for (slot, (part, name)) in v
            .iter_mut()
            .zip(parts.iter().zip(["min_lat", "max_lat", "min_lon", "max_lon"]))
        {
            let raw = part
                .as_deref()
                .ok_or_else(|| ApiError::bad_request(format!("box is missing {name}")))?;
            *slot = raw
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| ApiError::bad_request(format!("{name} `{raw}` is not a number")))?;
        }
        Ok(Some(GeoBox::new(v[0], v[1], v[2], v[3])?))
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Sightings {
    pub sightings: Vec<SightingMeta>,
}

async fn list(State(svc): State<Shared>, Query(q): Query<BoxQuery>) -> ApiResult<Json<Sightings>> {
    let area = q.geo_box()?;
    Ok(Json(Sightings {
        sightings: svc.list_sightings(area.as_ref()),
    }))
}

async fn image(State(svc): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    let bytes = blocking(move || svc.image_bytes(&id)).await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

async fn health(State(svc): State<Shared>) -> Json<petreid_core::matchd::Health> {
    Json(svc.health())
}
