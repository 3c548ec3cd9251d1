use std::collections::BTreeMap;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{FromRequestParts, MatchedPath, Path, Query, Request, State};
use axum::http::request::Parts;
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::NaiveDate;
use mivs_core::annotation::{self, AnnotationDraft, AnnotationError, RegionGrowParams, SliceView};
use mivs_core::render::{self, ReconSpec, RenderMode};
use mivs_core::sync::{self, Catalog, LoadError, QueryRule, SeriesEntry, SeriesRef};
use mivs_core::volume::{Volume, WindowSpec};
use mivs_core::Vec3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::auth::{AuthError, Role, UserInfo};
use crate::cache::CacheError;
use crate::AppState;

const DEFAULT_LIMIT: usize = 100;
const MAX_LIMIT: usize = 1000;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/login", post(login))
        .route("/users", post(create_user))
        .route("/studies", get(studies))
        .route("/patients/{id}/followups", get(followups))
        .route("/series", get(series_list))
        .route("/series/{uid}", get(series_detail))
        .route("/render/{mode}", post(render_image))
        .route("/series/{uid}/annotations", get(list_annotations).post(create_annotation))
        .route("/series/{uid}/annotations/refine", post(refine_annotation))
        .route(
            "/series/{uid}/annotations/{id}",
            get(get_annotation).put(update_annotation).delete(delete_annotation),
        )
        .route("/metrics", get(metrics))
        .route_layer(middleware::from_fn_with_state(state.clone(), count_requests))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "no such endpoint") })
        .layer(middleware::from_fn_with_state(state.clone(), log_requests))
        .with_state(state)
}

async fn count_requests(State(s): State<AppState>, req: Request, next: Next) -> Response {
    let endpoint = match req.extensions().get::<MatchedPath>() {
        Some(p) => format!("{} {}", req.method(), p.as_str()),
        None => format!("{} {}", req.method(), req.uri().path()),
    };
    let resp = next.run(req).await;
    s.metrics.record_request(&endpoint);
    resp
}

async fn log_requests(State(s): State<AppState>, req: Request, next: Next) -> Response {
    let start = Instant::now();
    let method = req.method().to_string();
    let path = req.uri().path().to_string();
    let resp = next.run(req).await;
    s.log.request(&method, &path, resp.status().as_u16(), start.elapsed());
    resp
}

/// Error response: `{"error": message}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> ApiError {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn unauthorized() -> ApiError {
        ApiError::new(StatusCode::UNAUTHORIZED, "missing, invalid or expired token")
    }

    fn unprocessable(message: impl Into<String>) -> ApiError {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }

    fn not_found(message: impl Into<String>) -> ApiError {
        ApiError::new(StatusCode::NOT_FOUND, message)
    }

    fn internal(message: impl Into<String>) -> ApiError {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut resp = (self.status, Json(json!({ "error": self.message }))).into_response();
        if self.status == StatusCode::UNAUTHORIZED {
            resp.headers_mut()
                .insert(header::WWW_AUTHENTICATE, HeaderValue::from_static("Bearer"));
        }
        resp
    }
}

impl From<AnnotationError> for ApiError {
    fn from(e: AnnotationError) -> ApiError {
        let status = match &e {
            AnnotationError::NotFound(_) | AnnotationError::UnknownSeries(_) => StatusCode::NOT_FOUND,
            AnnotationError::StaleVersion { .. } => StatusCode::CONFLICT,
            AnnotationError::InvalidGeometry(_)
            | AnnotationError::SeedOutOfBand { .. }
            | AnnotationError::RegionCapExceeded(_)
            | AnnotationError::InvalidParams(_) => StatusCode::UNPROCESSABLE_ENTITY,
            AnnotationError::Store(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::unprocessable(format!("invalid request body: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))
}

/// Any signed-in user.
pub struct AuthUser(pub UserInfo);

impl FromRequestParts<AppState> for AuthUser {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, ApiError> {
        let token = parts
            .headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .ok_or_else(ApiError::unauthorized)?;
        let session = state.sessions.lookup(token.trim()).ok_or_else(ApiError::unauthorized)?;
        Ok(AuthUser(session.user))
    }
}

/// A signed-in admin; other users get 403.
pub struct AdminUser;

impl FromRequestParts<AppState> for AdminUser {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, ApiError> {
        let AuthUser(user) = AuthUser::from_request_parts(parts, state).await?;
        if user.role != Role::Admin {
            return Err(ApiError::new(StatusCode::FORBIDDEN, "admin role required"));
        }
        Ok(AdminUser)
    }
}

#[derive(Deserialize)]
struct LoginRequest {
    username: String,
    password: String,
}

async fn login(State(s): State<AppState>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let LoginRequest { username, password } = parse_body(&body)?;
    if s.throttle.is_blocked(&username, Instant::now()) {
        return Err(ApiError::new(
            StatusCode::TOO_MANY_REQUESTS,
            "too many failed login attempts; try again later",
        ));
    }
    let st = s.clone();
    let name = username.clone();
    let user = blocking(move || st.users.authenticate(&name, &password)).await?;
    let Some(user) = user else {
        s.throttle.record_failure(&username, Instant::now());
        return Err(ApiError::new(StatusCode::UNAUTHORIZED, "invalid credentials"));
    };
    s.throttle.reset(&username);
    let (token, expires_at) = s.sessions.issue(&user);
    Ok(Json(json!({
        "token": token,
        "expires_at": expires_at,
        "username": user.username,
        "role": user.role,
    })))
}

#[derive(Deserialize)]
struct NewUser {
    username: String,
    password: String,
    #[serde(default = "normal_role")]
    role: Role,
}

fn normal_role() -> Role {
    Role::Normal
}

async fn create_user(
    State(s): State<AppState>,
    _admin: AdminUser,
    body: Bytes,
) -> Result<(StatusCode, Json<UserInfo>), ApiError> {
    let req: NewUser = parse_body(&body)?;
    let st = s.clone();
    let created = blocking(move || st.users.create(&req.username, &req.password, req.role)).await?;
    match created {
        Ok(user) => Ok((StatusCode::CREATED, Json(user))),
        Err(e @ AuthError::Duplicate(_)) => Err(ApiError::new(StatusCode::CONFLICT, e.to_string())),
        Err(e @ (AuthError::WeakPassword(_) | AuthError::InvalidUsername(_))) => Err(ApiError::unprocessable(e.to_string())),
        Err(e) => Err(ApiError::internal(e.to_string())),
    }
}

type Params = Query<BTreeMap<String, String>>;

#[derive(Serialize)]
struct Page<T> {
    total: usize,
    offset: usize,
    limit: usize,
    items: Vec<T>,
}

fn reject_unknown(params: &BTreeMap<String, String>, allowed: &[&str]) -> Result<(), ApiError> {
    match params.keys().find(|k| !allowed.contains(&k.as_str()) && !["limit", "offset"].contains(&k.as_str())) {
        Some(k) => Err(ApiError::unprocessable(format!("unknown parameter {k:?}"))),
        None => Ok(()),
    }
}

fn paginate<T>(params: &BTreeMap<String, String>, all: Vec<T>) -> Result<Page<T>, ApiError> {
    let num = |key: &str, default: usize| -> Result<usize, ApiError> {
        params.get(key).map_or(Ok(default), |v| {
            v.parse()
                .map_err(|_| ApiError::unprocessable(format!("{key} must be a non-negative integer")))
        })
    };
    let limit = num("limit", DEFAULT_LIMIT)?;
    let offset = num("offset", 0)?;
    if limit > MAX_LIMIT {
        return Err(ApiError::unprocessable(format!("limit must be at most {MAX_LIMIT}")));
    }
    let total = all.len();
    let items = all.into_iter().skip(offset).take(limit).collect();
    Ok(Page {
        total,
        offset,
        limit,
        items,
    })
}

async fn studies(State(s): State<AppState>, _u: AuthUser, Query(params): Params) -> Result<Json<Value>, ApiError> {
    reject_unknown(&params, &[])?;
    let page = paginate(&params, s.store.snapshot().studies())?;
    Ok(Json(json!(page)))
}

async fn followups(
    State(s): State<AppState>,
    _u: AuthUser,
    Path(patient): Path<String>,
    Query(params): Params,
) -> Result<Json<Value>, ApiError> {
    reject_unknown(&params, &[])?;
    let all = sync::fetch_followups(&s.store.snapshot(), &patient);
    Ok(Json(json!(paginate(&params, all)?)))
}

fn parse_rule(params: &BTreeMap<String, String>) -> Result<QueryRule, ApiError> {
    let date = |key: &str| -> Result<Option<NaiveDate>, ApiError> {
        params
            .get(key)
            .map(|v| {
                NaiveDate::parse_from_str(v, "%Y-%m-%d")
                    .map_err(|_| ApiError::unprocessable(format!("{key} must be a YYYY-MM-DD date")))
            })
            .transpose()
    };
    let (from, to) = (date("from")?, date("to")?);
    let date_range = match (from, to) {
        (None, None) => None,
        (f, t) => Some((f.unwrap_or(NaiveDate::MIN), t.unwrap_or(NaiveDate::MAX))),
    };
    let modality = params.get("modality").map(|m| {
        m.split(',')
            .map(|x| x.trim().to_string())
            .filter(|x| !x.is_empty())
            .collect()
    });
    let rule = QueryRule {
        modality,
        date_range,
        patient_id: params.get("patient_id").cloned(),
        source_id: params.get("source_id").cloned(),
    };
    if rule != QueryRule::default() {
        rule.validate().map_err(|e| ApiError::unprocessable(e.to_string()))?;
    }
    Ok(rule)
}

async fn series_list(State(s): State<AppState>, _u: AuthUser, Query(params): Params) -> Result<Json<Value>, ApiError> {
    reject_unknown(&params, &["modality", "from", "to", "patient_id", "source_id"])?;
    let rule = parse_rule(&params)?;
    let catalog = s.store.snapshot();
    let all: Vec<SeriesRef> = if rule == QueryRule::default() {
        sync::list_series(&catalog, |_| true)
    } else {
        sync::query(&catalog, &rule).map_err(|e| ApiError::unprocessable(e.to_string()))?
    };
    Ok(Json(json!(paginate(&params, all)?)))
}

#[derive(Serialize)]
struct VolumeInfo {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: Vec3,
    directions: [Vec3; 3],
    value_range: (f32, f32),
    default_window: WindowSpec,
}

async fn series_detail(State(s): State<AppState>, _u: AuthUser, Path(uid): Path<String>) -> Result<Json<Value>, ApiError> {
    let catalog = s.store.snapshot();
    let entry = primary(&catalog, &uid)?;
    let refs: Vec<SeriesRef> = catalog.series_by_uid(&uid).map(SeriesRef::from).collect();
    let volume = load_volume(&s, &catalog, &entry).await?.volume;
    let info = VolumeInfo {
        dims: volume.dims(),
        spacing: volume.spacing(),
        origin: volume.origin(),
        directions: volume.directions(),
        value_range: volume.value_range(),
        default_window: render::default_window(&entry.modality, &volume),
    };
    Ok(Json(json!({ "series": refs, "volume": info })))
}

fn primary(catalog: &Catalog, uid: &str) -> Result<SeriesEntry, ApiError> {
    catalog
        .primary_series(uid)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("unknown series {uid}")))
}

/// Cache key covering the identity of every file in the series, so a
/// changed series is reloaded.
fn cache_key(catalog: &Catalog, entry: &SeriesEntry) -> String {
    let mut h = DefaultHasher::new();
    for path in entry.instances.keys() {
        path.hash(&mut h);
        if let Some(f) = catalog.file(&entry.source_id, path) {
            (f.stamp.size, f.stamp.mtime_ns).hash(&mut h);
        }
    }
    format!("{}|{}|{:016x}", entry.source_id, entry.series_uid, h.finish())
}

async fn load_volume(s: &AppState, catalog: &Catalog, entry: &SeriesEntry) -> Result<crate::cache::Lookup, ApiError> {
    let key = cache_key(catalog, entry);
    let entry = entry.clone();
    let loaded = s
        .cache
        .get_or_load(&key, || async move {
            tokio::task::spawn_blocking(move || sync::load_series_volume(&entry))
                .await
                .map_err(|e| ApiError::internal(format!("loader failed: {e}")))?
                .map_err(|e| match e {
                    LoadError::Io { .. } => ApiError::internal(e.to_string()),
                    _ => ApiError::unprocessable(format!("series cannot be assembled: {e}")),
                })
        })
        .await;
    loaded.map_err(|e| match e {
        CacheError::TooLarge { bytes, budget } => ApiError::new(
            StatusCode::INSUFFICIENT_STORAGE,
            format!("volume needs {bytes} bytes but the cache budget is {budget}"),
        ),
        CacheError::Load(e) => e,
    })
}

#[derive(Deserialize)]
struct RenderRequest {
    series_uid: String,
    spec: Value,
    #[serde(default)]
    window: Option<WindowSpec>,
}

async fn render_image(
    State(s): State<AppState>,
    _u: AuthUser,
    Path(mode): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let mode: RenderMode = mode.parse().map_err(|e: render::RenderError| ApiError::not_found(e.to_string()))?;
    let req: RenderRequest = parse_body(&body)?;
    let catalog = s.store.snapshot();
    let entry = primary(&catalog, &req.series_uid)?;
    let spec = ReconSpec::from_json(mode, req.spec)
        .and_then(|spec| spec.validate().map(|_| spec))
        .map_err(|e| ApiError::unprocessable(e.to_string()))?;
    if let Some(w) = &req.window {
        w.validate().map_err(|e| ApiError::unprocessable(format!("invalid window: {e}")))?;
    }
    let start = Instant::now();
    let lookup = load_volume(&s, &catalog, &entry).await?;
    let volume = lookup.volume;
    let modality = entry.modality.clone();
    let png = blocking(move || render::render_png(&volume, &modality, &spec, req.window))
        .await?
        .map_err(|e| ApiError::unprocessable(e.to_string()))?;
    s.metrics.record_render(start.elapsed());
    let cache_state = if lookup.hit { "hit" } else { "miss" };
    Ok((
        [
            (header::CONTENT_TYPE, HeaderValue::from_static("image/png")),
            (header::HeaderName::from_static("x-cache"), HeaderValue::from_static(cache_state)),
        ],
        png,
    )
        .into_response())
}

async fn list_annotations(
    State(s): State<AppState>,
    _u: AuthUser,
    Path(uid): Path<String>,
    Query(params): Params,
) -> Result<Json<Value>, ApiError> {
    reject_unknown(&params, &["author"])?;
    primary(&s.store.snapshot(), &uid)?;
    let all = annotation::list_by_series(&s.store, &uid, params.get("author").map(String::as_str));
    Ok(Json(json!(paginate(&params, all)?)))
}

async fn create_annotation(
    State(s): State<AppState>,
    AuthUser(user): AuthUser,
    Path(uid): Path<String>,
    body: Bytes,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    let draft: AnnotationDraft = parse_body(&body)?;
    let a = annotation::create(&s.store, &uid, &user.username, draft)?;
    Ok((StatusCode::CREATED, Json(json!(a))))
}

async fn get_annotation(
    State(s): State<AppState>,
    _u: AuthUser,
    Path((uid, id)): Path<(String, String)>,
) -> Result<Json<Value>, ApiError> {
    Ok(Json(json!(annotation::get(&s.store, &uid, &id)?)))
}

#[derive(Deserialize)]
struct AnnotationUpdate {
    version: u64,
    #[serde(flatten)]
    draft: AnnotationDraft,
}

async fn update_annotation(
    State(s): State<AppState>,
    _u: AuthUser,
    Path((uid, id)): Path<(String, String)>,
    body: Bytes,
) -> Result<Json<Value>, ApiError> {
    let req: AnnotationUpdate = parse_body(&body)?;
    Ok(Json(json!(annotation::update(&s.store, &uid, &id, req.version, req.draft)?)))
}

async fn delete_annotation(
    State(s): State<AppState>,
    _u: AuthUser,
    Path((uid, id)): Path<(String, String)>,
) -> Result<StatusCode, ApiError> {
    annotation::delete(&s.store, &uid, &id)?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize)]
struct RefineRequest {
    slice_index: usize,
    params: RegionGrowParams,
    #[serde(default)]
    label: String,
}

async fn refine_annotation(
    State(s): State<AppState>,
    AuthUser(user): AuthUser,
    Path(uid): Path<String>,
    body: Bytes,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    let req: RefineRequest = parse_body(&body)?;
    let catalog = s.store.snapshot();
    let entry = primary(&catalog, &uid)?;
    let volume: Arc<Volume> = load_volume(&s, &catalog, &entry).await?.volume;
    let [w, h, d] = volume.dims();
    if req.slice_index >= d {
        return Err(ApiError::unprocessable(format!(
            "slice_index {} is outside 0..{d}",
            req.slice_index
        )));
    }
    let params = req.params;
    let k = req.slice_index;
    let shape = blocking(move || {
        let view = SliceView::new(w, h, volume.slice(k))?;
        annotation::semi_auto_refine(&view, &params)
    })
    .await??;
    let draft = AnnotationDraft {
        slice_index: k as i64,
        shape,
        label: req.label,
    };
    let a = annotation::create(&s.store, &uid, &user.username, draft)?;
    Ok((StatusCode::CREATED, Json(json!(a))))
}

async fn metrics(State(s): State<AppState>, _admin: AdminUser) -> Json<Value> {
    Json(json!(s.metrics.report(s.cache.stats(), s.sessions.active())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn rule_from_query() {
        let rule = parse_rule(&params(&[("modality", "CT, MR"), ("from", "2024-01-01")])).unwrap();
        assert_eq!(rule.modality.unwrap().len(), 2);
        assert_eq!(
            rule.date_range,
            Some((NaiveDate::from_ymd_opt(2024, 1, 1).unwrap(), NaiveDate::MAX))
        );
        assert_eq!(parse_rule(&params(&[])).unwrap(), QueryRule::default());
        assert!(parse_rule(&params(&[("from", "2024-02-01"), ("to", "2024-01-01")])).is_err());
        assert!(parse_rule(&params(&[("from", "yesterday")])).is_err());
        assert!(parse_rule(&params(&[("modality", ",")])).is_err());
    }

    #[test]
    fn pagination() {
        let p = paginate(&params(&[("limit", "2"), ("offset", "3")]), (0..10).collect()).unwrap();
        assert_eq!((p.total, p.items), (10, vec![3, 4]));
        assert_eq!(paginate(&params(&[]), (0..150).collect()).unwrap().items.len(), 100);
        assert!(paginate(&params(&[("limit", "-1")]), vec![0]).is_err());
        assert!(paginate(&params(&[("limit", "1001")]), vec![0]).is_err());
    }
}
