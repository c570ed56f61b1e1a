//! HTTP API over one-step inference, prompt inference and drill-down sessions.

pub mod error;
pub mod wire;

use std::collections::{HashMap, HashSet};
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, StatusCode};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use tower_http::cors::CorsLayer;

use aims_core::data::{Corpus, Image};
use aims_core::inference::{segment, DrillDownSession, Selection};
use aims_core::model::checkpoint::checkpoint_id;
use aims_core::{imageio, AimsModel, Level};

pub use error::ApiError;
use wire::*;

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub session_ttl: Duration,
    /// Largest accepted request body.
    pub max_body_bytes: usize,
    /// Largest accepted image, in pixels.
    pub max_pixels: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig { session_ttl: Duration::from_secs(3600), max_body_bytes: 32 << 20, max_pixels: 4096 * 4096 }
    }
}

pub struct LoadedModel {
    pub model: AimsModel,
    pub step: usize,
    pub checkpoint_id: String,
}

struct ApiSession {
    created_at: SystemTime,
    expires: Instant,
    state: Arc<Mutex<DrillDownSession>>,
}

pub struct AppState {
    model: Option<Arc<LoadedModel>>,
    corpus: Option<Arc<Corpus>>,
    config: ServiceConfig,
    sessions: Mutex<HashMap<String, ApiSession>>,
    expired: Mutex<HashSet<String>>,
}

impl AppState {
    pub fn new(model: Option<(AimsModel, usize)>, corpus: Option<Corpus>, config: ServiceConfig) -> Self {
        let model = model.map(|(model, step)| Arc::new(LoadedModel { checkpoint_id: checkpoint_id(&model), model, step }));
        AppState {
            model,
            corpus: corpus.map(Arc::new),
            config,
            sessions: Mutex::new(HashMap::new()),
            expired: Mutex::new(HashSet::new()),
        }
    }

    fn model(&self) -> Result<Arc<LoadedModel>, ApiError> {
        self.model.clone().ok_or_else(ApiError::no_checkpoint)
    }

    fn image(&self, input: &ImageInput) -> Result<Image, ApiError> {
        let image = match input {
            ImageInput::Encoded(data) => {
                let bytes = decode_base64("image.encoded", data)?;
                imageio::decode_image(&bytes)?
            }
            ImageInput::Rgb { width, height, data } => {
                check_pixels(*height, *width, self.config.max_pixels)?;
                Image::new(*height, *width, decode_base64("image.rgb.data", data)?)?
            }
            ImageInput::Corpus { profile, split, index } => self.corpus_image(profile, *split, *index)?,
        };
        check_pixels(image.height(), image.width(), self.config.max_pixels)?;
        Ok(image)
    }

    fn corpus_image(&self, profile: &str, split: SplitName, index: usize) -> Result<Image, ApiError> {
        let corpus = self.corpus.as_ref().ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no corpus is served"))?;
        let s = corpus
            .split(profile)
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown profile `{profile}`")))?;
        let scenes = match split {
            SplitName::Train => &s.train,
            SplitName::Eval => &s.eval,
        };
        scenes
            .get(index)
            .map(|scene| scene.image.clone())
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("{profile} has {} images in that split", scenes.len())))
    }

    fn session(&self, id: &str) -> Result<(Arc<Mutex<DrillDownSession>>, SystemTime, Instant), ApiError> {
        let now = Instant::now();
        let mut sessions = self.sessions.lock().unwrap();
        match sessions.get_mut(id) {
            Some(s) if s.expires > now => {
                s.expires = now + self.config.session_ttl;
                Ok((s.state.clone(), s.created_at, s.expires))
            }
            Some(_) => {
                sessions.remove(id);
                self.expired.lock().unwrap().insert(id.to_string());
                Err(expired(id))
            }
            None if self.expired.lock().unwrap().contains(id) => Err(expired(id)),
            None => Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown session `{id}`"))),
        }
    }

    fn purge(&self) {
        let now = Instant::now();
        let mut sessions = self.sessions.lock().unwrap();
        let gone: Vec<String> = sessions.iter().filter(|(_, s)| s.expires <= now).map(|(k, _)| k.clone()).collect();
        let mut expired = self.expired.lock().unwrap();
        for id in gone {
            sessions.remove(&id);
            expired.insert(id);
        }
    }
}

fn expired(id: &str) -> ApiError {
    ApiError::new(StatusCode::GONE, format!("session `{id}` expired"))
}

fn check_pixels(height: usize, width: usize, max: usize) -> Result<(), ApiError> {
    if height.saturating_mul(width) > max {
        return Err(ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            format!("image {height}x{width} exceeds the {max}-pixel limit"),
        ));
    }
    Ok(())
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

fn unix(t: SystemTime) -> u64 {
    t.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")))?
}

async fn model_info(State(state): State<Arc<AppState>>) -> Result<Json<ModelInfo>, ApiError> {
    let m = state.model()?;
    let c = m.model.config();
    Ok(Json(ModelInfo {
        checkpoint_id: m.checkpoint_id.clone(),
        step: m.step,
        levels: Level::ALL.to_vec(),
        queries: Level::ALL.iter().map(|&l| (l, c.num_queries(l))).collect(),
        keep_threshold: c.keep_threshold,
        assoc_threshold: c.assoc_threshold,
        config: c.clone(),
    }))
}

async fn segment_handler(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<SegmentResponse>, ApiError> {
    let req: SegmentRequest = parse(&body)?;
    let m = state.model()?;
    let image = state.image(&req.image)?;
    let (h, w) = (image.height(), image.width());
    let prompt = req.prompt.as_ref().map(|p| p.to_prompt(h, w, req.prompt_type)).transpose()?;
    if prompt.is_some() && req.level.is_none() {
        return Err(ApiError::bad_request("`level` is required with a prompt"));
    }
    let result = blocking(move || {
        let result = segment(&m.model, &image, prompt.as_ref(), req.level)?;
        if let Some(p) = &prompt {
            let outside = result.levels.values().flat_map(|r| &r.masks).any(|mask| !mask.is_subset_of(&p.mask));
            if outside {
                return Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "result escapes the prompt"));
            }
        }
        Ok(result)
    })
    .await?;
    Ok(Json(SegmentResponse { width: w, height: h, result }))
}

async fn create_session(State(state): State<Arc<AppState>>, body: Bytes) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let req: CreateSessionRequest = parse(&body)?;
    let m = state.model()?;
    let image = state.image(&req.image)?;
    state.purge();
    let id = uuid::Uuid::new_v4().to_string();
    let mut session = DrillDownSession::new(id.clone(), image);
    let session = blocking(move || {
        session.start(&m.model, req.level)?;
        Ok(session)
    })
    .await?;
    let created_at = SystemTime::now();
    let view = SessionView {
        id: id.clone(),
        created_at: unix(created_at),
        expires_at: unix(created_at + state.config.session_ttl),
        session: session.clone(),
    };
    state.sessions.lock().unwrap().insert(
        id,
        ApiSession {
            created_at,
            expires: Instant::now() + state.config.session_ttl,
            state: Arc::new(Mutex::new(session)),
        },
    );
    Ok((StatusCode::CREATED, Json(view)))
}

async fn drill(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<DrillResponse>, ApiError> {
    let req: DrillRequest = parse(&body)?;
    let m = state.model()?;
    let (session, _, _) = state.session(&id)?;
    blocking(move || {
        let mut s = session.lock().unwrap();
        let selection = match req.selection {
            SelectionInput::Index(i) => Selection::Index(i),
            SelectionInput::Step { step, index } => Selection::Step { step, index },
            SelectionInput::Prompt(p) => Selection::Mask(p.to_mask(s.image.height(), s.image.width())?),
        };
        let step = s.drill(&m.model, selection, req.level)?.clone();
        Ok(Json(DrillResponse { session_id: id, step_index: s.history.len() - 1, step }))
    })
    .await
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    let (session, created_at, expires) = state.session(&id)?;
    let session = session.lock().unwrap().clone();
    let remaining = expires.saturating_duration_since(Instant::now());
    Ok(Json(SessionView { id, created_at: unix(created_at), expires_at: unix(SystemTime::now() + remaining), session }))
}

async fn corpus_index(State(state): State<Arc<AppState>>) -> Result<Json<serde_json::Value>, ApiError> {
    let corpus = state.corpus.as_ref().ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no corpus is served"))?;
    let entries: Vec<_> = corpus
        .splits()
        .iter()
        .map(|s| serde_json::json!({ "profile": s.profile.name, "train": s.train.len(), "eval": s.eval.len() }))
        .collect();
    Ok(Json(serde_json::json!({ "profiles": entries })))
}

async fn corpus_png(
    State(state): State<Arc<AppState>>,
    Path((profile, split, index)): Path<(String, SplitName, usize)>,
) -> Result<impl IntoResponse, ApiError> {
    let image = state.corpus_image(&profile, split, index)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], imageio::encode_png(&image)))
}

pub fn router(state: Arc<AppState>) -> Router {
    let limit = state.config.max_body_bytes;
    Router::new()
        .route("/v1/model", get(model_info))
        .route("/v1/segment", post(segment_handler))
        .route("/v1/session", post(create_session))
        .route("/v1/session/{id}", get(get_session))
        .route("/v1/session/{id}/drill", post(drill))
        .route("/v1/images", get(corpus_index))
        .route("/v1/images/{profile}/{split}/{index}", get(corpus_png))
        .layer(DefaultBodyLimit::max(limit))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(state))).await
}
