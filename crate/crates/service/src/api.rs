//! HTTP/JSON API over the engine.
//!
//! Every handler is a thin wrapper around one engine call. Mutating handlers
//! hold the engine lock for the whole call, so requests are applied in arrival
//! order, and write the settings file whenever the settings revision moves.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::{FromRequest, FromRequestParts, Path, Request, State};
use axum::http::request::Parts;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use privdash_core::backup::{BackupDestination, BackupError, BlobStore};
use privdash_core::device::{GeoFix, Record, SimTime, SmsMessage, StoreKind};
use privdash_core::engine::{BackupRequest, RestoreSource};
use privdash_core::geopriv::LocationSettings;
use privdash_core::guest::GuestProfile;
use privdash_core::rpp::Verb;
use privdash_core::{Engine, EngineError, ErrorClass};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::persist::{save_settings, PersistError};

/// Header carrying the owner's passphrase or PIN for guarded operations.
pub const AUTH_HEADER: &str = "x-owner-auth";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
    pub field: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>, field: Option<String>) -> Self {
        ApiError { status, code: code.into(), message: message.into(), field }
    }

    pub fn body(&self) -> Value {
        json!({ "error": { "code": self.code, "message": self.message, "field": self.field } })
    }
}

pub fn status_for(class: ErrorClass) -> StatusCode {
    match class {
        ErrorClass::Validation => StatusCode::BAD_REQUEST,
        ErrorClass::Auth => StatusCode::UNAUTHORIZED,
        ErrorClass::Conflict => StatusCode::CONFLICT,
        ErrorClass::NotFound => StatusCode::NOT_FOUND,
        ErrorClass::Dependency => StatusCode::FAILED_DEPENDENCY,
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        ApiError::new(status_for(e.class()), e.code(), e.to_string(), None)
    }
}

impl From<PersistError> for ApiError {
    fn from(e: PersistError) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "persist_failed", e.to_string(), None)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body())).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Parses JSON, reporting the path of the offending field on failure.
pub fn parse_json<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let field = (path != ".").then_some(path);
        ApiError::new(StatusCode::BAD_REQUEST, "invalid_body", inner.to_string(), field)
    })
}

/// JSON body extractor with field-path errors.
pub struct Body<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        let bytes = Bytes::from_request(req, state)
            .await
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_body", e.body_text(), None))?;
        parse_json(&bytes).map(Body)
    }
}

/// Query-string extractor with the same error shape as [`Body`].
pub struct Params<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequestParts<S> for Params<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, _: &S) -> Result<Self, Self::Rejection> {
        let query = parts.uri.query().unwrap_or("");
        axum::extract::Query::<T>::try_from_uri(&parts.uri)
            .map(|q| Params(q.0))
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_query", format!("{e} in `{query}`"), None))
    }
}

fn owner_auth(headers: &HeaderMap) -> Option<String> {
    headers.get(AUTH_HEADER).and_then(|v| v.to_str().ok()).map(str::to_string)
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Shared>,
}

struct Shared {
    engine: Mutex<Engine>,
    state_path: Option<PathBuf>,
}

impl AppState {
    /// `state_path` of `None` keeps settings in memory only.
    pub fn new(engine: Engine, state_path: Option<PathBuf>) -> Self {
        AppState { inner: Arc::new(Shared { engine: Mutex::new(engine), state_path }) }
    }

    pub fn engine(&self) -> MutexGuard<'_, Engine> {
        self.inner.engine.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
    }

    fn read<T>(&self, f: impl FnOnce(&Engine) -> Result<T, EngineError>) -> ApiResult<T> {
        Ok(Json(f(&self.engine())?))
    }

    fn mutate<T>(&self, f: impl FnOnce(&mut Engine) -> Result<T, EngineError>) -> ApiResult<T> {
        let mut engine = self.engine();
        let before = engine.settings_revision();
        let result = f(&mut engine);
        if engine.settings_revision() != before {
            if let Some(path) = &self.inner.state_path {
                save_settings(path, engine.settings())?;
            }
        }
        Ok(Json(result?))
    }
}

// ---- request bodies ----

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmsRequest {
    pub from: String,
    pub body: String,
    /// Defaults to the device clock.
    #[serde(default)]
    pub received_at: Option<SimTime>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PositionRequest {
    pub lat: f64,
    pub lon: f64,
    #[serde(default)]
    pub timestamp: Option<SimTime>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClockRequest {
    pub time: SimTime,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PassphraseRequest {
    pub new: String,
    #[serde(default)]
    pub current: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnlockRequest {
    pub passphrase: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PinRequest {
    pub pin: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RppSettingsRequest {
    pub enabled_commands: BTreeSet<Verb>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnterRequest {
    pub profile_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HostStatus {
    pub online: bool,
}

#[derive(Debug, Deserialize)]
struct AppQuery {
    app: String,
}

#[derive(Debug, Deserialize)]
struct TextQuery {
    #[serde(default)]
    q: String,
}

#[derive(Debug, Deserialize)]
struct TourQuery {
    topic: Option<String>,
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    #[serde(default)]
    since: u64,
}

fn store_kind(raw: &str) -> Result<StoreKind, EngineError> {
    Ok(raw.parse::<StoreKind>()?)
}

/// Builds an inbound SMS the way the device would receive it.
pub fn sms_from_request(engine: &Engine, req: SmsRequest) -> Result<SmsMessage, EngineError> {
    Ok(SmsMessage::new(req.from, req.body, req.received_at.unwrap_or(engine.device().clock))?)
}

pub fn fix_from_request(engine: &Engine, req: &PositionRequest) -> Result<GeoFix, EngineError> {
    Ok(GeoFix::new(req.lat, req.lon, req.timestamp.unwrap_or(engine.device().clock))?)
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/settings/location", get(get_location).put(put_location))
        .route("/api/settings/rpp", get(get_rpp).put(put_rpp))
        .route("/api/settings/pin", post(post_pin))
        .route("/api/settings/export", get(get_export))
        .route("/api/settings/import", post(post_import))
        .route("/api/rpp/passphrase", post(post_passphrase))
        .route("/api/rpp/unlock", post(post_unlock))
        .route("/api/guest/profiles", get(get_profiles).post(post_profile))
        .route("/api/guest/profiles/{id}", put(put_profile).delete(delete_profile))
        .route("/api/guest/enter", post(post_enter))
        .route("/api/guest/exit", post(post_exit))
        .route("/api/guest/view", get(get_view))
        .route("/api/apps/search", get(get_app_search))
        .route("/api/stores/{kind}", get(get_store).post(post_store))
        .route("/api/stores/{kind}/{index}", axum::routing::delete(delete_store_record))
        .route("/api/device", get(get_device))
        .route("/api/device/sms", post(post_sms))
        .route("/api/device/position", put(put_position))
        .route("/api/device/clock", post(post_clock))
        .route("/api/location/query", get(get_location_query))
        .route("/api/places", get(get_places))
        .route("/api/backup/destinations", get(get_destinations).post(post_destination))
        .route("/api/backup/destinations/{index}", axum::routing::delete(delete_destination))
        .route("/api/backup", post(post_backup))
        .route("/api/backup/list", post(post_backup_list))
        .route("/api/restore", post(post_restore))
        .route("/api/tour", get(get_tour))
        .route("/api/events", get(get_events))
        .route("/blobs/{host}", get(blob_list).put(blob_host_status))
        .route("/blobs/{host}/{name}", get(blob_get).put(blob_put))
        .fallback(not_found)
        .with_state(state)
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint", None)
}

// ---- settings ----

async fn get_location(State(app): State<AppState>) -> impl IntoResponse {
    app.read(|e| Ok(e.location_view()))
}

async fn put_location(
    State(app): State<AppState>,
    headers: HeaderMap,
    Body(body): Body<LocationSettings>,
) -> impl IntoResponse {
    app.mutate(|e| e.put_location_settings(owner_auth(&headers).as_deref(), body))
}

async fn get_rpp(State(app): State<AppState>) -> impl IntoResponse {
    app.read(|e| Ok(e.rpp_view()))
}

async fn put_rpp(
    State(app): State<AppState>,
    headers: HeaderMap,
    Body(body): Body<RppSettingsRequest>,
) -> impl IntoResponse {
    app.mutate(|e| e.set_enabled_commands(owner_auth(&headers).as_deref(), body.enabled_commands))
}

async fn post_pin(State(app): State<AppState>, headers: HeaderMap, Body(body): Body<PinRequest>) -> impl IntoResponse {
    app.mutate(|e| e.set_owner_pin(owner_auth(&headers).as_deref(), &body.pin))
}

async fn post_passphrase(State(app): State<AppState>, Body(body): Body<PassphraseRequest>) -> impl IntoResponse {
    app.mutate(|e| e.set_passphrase(&body.new, body.current.as_deref()))
}

async fn post_unlock(State(app): State<AppState>, Body(body): Body<UnlockRequest>) -> impl IntoResponse {
    app.mutate(|e| Ok(e.local_unlock(&body.passphrase)))
}

async fn get_export(State(app): State<AppState>) -> Response {
    let blob = app.engine().export_settings();
    ([(header::CONTENT_TYPE, "application/json")], blob).into_response()
}

async fn post_import(State(app): State<AppState>, headers: HeaderMap, body: Bytes) -> impl IntoResponse {
    app.mutate(|e| e.import_settings(owner_auth(&headers).as_deref(), &body))
}

// ---- guest mode ----

async fn get_profiles(State(app): State<AppState>) -> impl IntoResponse {
    app.read(|e| Ok(e.profiles().to_vec()))
}

async fn post_profile(
    State(app): State<AppState>,
    headers: HeaderMap,
    Body(body): Body<GuestProfile>,
) -> impl IntoResponse {
    app.mutate(|e| e.create_profile(owner_auth(&headers).as_deref(), body))
}

async fn put_profile(
    State(app): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Body(mut body): Body<GuestProfile>,
) -> impl IntoResponse {
    body.profile_id = id;
    app.mutate(|e| e.update_profile(owner_auth(&headers).as_deref(), body))
}

async fn delete_profile(State(app): State<AppState>, Path(id): Path<String>, headers: HeaderMap) -> impl IntoResponse {
    app.mutate(|e| e.delete_profile(owner_auth(&headers).as_deref(), &id))
}

async fn post_enter(State(app): State<AppState>, headers: HeaderMap, Body(body): Body<EnterRequest>) -> impl IntoResponse {
    app.mutate(|e| e.enter_guest(owner_auth(&headers).as_deref(), &body.profile_id))
}

async fn post_exit(State(app): State<AppState>, headers: HeaderMap) -> impl IntoResponse {
    app.mutate(|e| e.exit_guest(owner_auth(&headers).as_deref()))
}

async fn get_view(State(app): State<AppState>) -> impl IntoResponse {
    app.read(|e| Ok(e.effective_view()))
}

async fn get_app_search(State(app): State<AppState>, Params(q): Params<TextQuery>) -> impl IntoResponse {
    app.read(|e| Ok(e.search_apps(&q.q)))
}

async fn get_store(State(app): State<AppState>, Path(kind): Path<String>) -> impl IntoResponse {
    app.read(|e| Ok(e.query_store(store_kind(&kind)?)))
}

async fn post_store(State(app): State<AppState>, Path(kind): Path<String>, Body(record): Body<Record>) -> impl IntoResponse {
    app.mutate(|e| Ok(e.add_record(store_kind(&kind)?, record)))
}

async fn delete_store_record(
    State(app): State<AppState>,
    Path((kind, index)): Path<(String, usize)>,
) -> impl IntoResponse {
    app.mutate(|e| e.delete_record(store_kind(&kind)?, index))
}

// ---- device and location ----

async fn get_device(State(app): State<AppState>) -> impl IntoResponse {
    app.read(|e| Ok(e.status()))
}

async fn post_sms(State(app): State<AppState>, Body(body): Body<SmsRequest>) -> impl IntoResponse {
    app.mutate(|e| {
        let msg = sms_from_request(e, body)?;
        Ok(e.deliver_sms(msg))
    })
}

async fn put_position(State(app): State<AppState>, Body(body): Body<PositionRequest>) -> impl IntoResponse {
    app.mutate(|e| {
        let fix = fix_from_request(e, &body)?;
        e.set_position(fix)
    })
}

async fn post_clock(State(app): State<AppState>, Body(body): Body<ClockRequest>) -> impl IntoResponse {
    app.mutate(|e| {
        e.advance_clock(body.time);
        Ok(e.status())
    })
}

async fn get_location_query(State(app): State<AppState>, Params(q): Params<AppQuery>) -> impl IntoResponse {
    app.mutate(|e| e.query_location(&q.app))
}

async fn get_places(State(app): State<AppState>, Params(q): Params<TextQuery>) -> impl IntoResponse {
    app.read(|e| Ok(e.search_places(&q.q)))
}

// ---- backup ----

async fn get_destinations(State(app): State<AppState>) -> impl IntoResponse {
    app.read(|e| Ok(e.destinations()))
}

async fn post_destination(
    State(app): State<AppState>,
    headers: HeaderMap,
    Body(dest): Body<BackupDestination>,
) -> impl IntoResponse {
    app.mutate(|e| e.add_destination(owner_auth(&headers).as_deref(), dest))
}

async fn delete_destination(
    State(app): State<AppState>,
    Path(index): Path<usize>,
    headers: HeaderMap,
) -> impl IntoResponse {
    app.mutate(|e| e.remove_destination(owner_auth(&headers).as_deref(), index))
}

async fn post_backup(State(app): State<AppState>, Body(req): Body<BackupRequest>) -> impl IntoResponse {
    app.mutate(|e| e.create_backup(&req))
}

async fn post_backup_list(State(app): State<AppState>, Body(dest): Body<BackupDestination>) -> impl IntoResponse {
    app.mutate(|e| e.list_backups(&dest))
}

async fn post_restore(
    State(app): State<AppState>,
    headers: HeaderMap,
    Body(src): Body<RestoreSource>,
) -> impl IntoResponse {
    app.mutate(|e| e.restore_backup(owner_auth(&headers).as_deref(), &src))
}

// ---- tour and events ----

async fn get_tour(State(app): State<AppState>, Params(q): Params<TourQuery>) -> impl IntoResponse {
    app.read(|e| e.tour(q.topic.as_deref()))
}

async fn get_events(State(app): State<AppState>, Params(q): Params<EventsQuery>) -> impl IntoResponse {
    app.read(|e| Ok(e.events_since(q.since)))
}

// ---- simulated remote storage ----

fn blob_error(e: BackupError) -> ApiError {
    match e {
        BackupError::Read { .. } => ApiError::new(StatusCode::NOT_FOUND, "no_such_blob", e.to_string(), None),
        other => EngineError::from(other).into(),
    }
}

async fn blob_list(State(app): State<AppState>, Path(host): Path<String>) -> Result<Json<Vec<String>>, ApiError> {
    let mut engine = app.engine();
    engine.hub_mut().host_mut(&host).list().map(Json).map_err(blob_error)
}

async fn blob_host_status(
    State(app): State<AppState>,
    Path(host): Path<String>,
    Body(status): Body<HostStatus>,
) -> Json<HostStatus> {
    app.engine().hub_mut().set_online(&host, status.online);
    Json(status)
}

async fn blob_get(State(app): State<AppState>, Path((host, name)): Path<(String, String)>) -> Result<Vec<u8>, ApiError> {
    let mut engine = app.engine();
    engine.hub_mut().host_mut(&host).get(&name).map_err(blob_error)
}

async fn blob_put(
    State(app): State<AppState>,
    Path((host, name)): Path<(String, String)>,
    body: Bytes,
) -> Result<StatusCode, ApiError> {
    let mut engine = app.engine();
    engine.hub_mut().host_mut(&host).put(&name, &body).map_err(blob_error)?;
    Ok(StatusCode::CREATED)
}
