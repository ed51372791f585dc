//! HTTP service: contour analysis and generation over JSON.
//!
//! Handlers are plain functions over request bytes so they can be exercised
//! without a socket; [`router`] wires them into axum.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use base64::Engine;
use midi_draw_core::contour::{
    components_to_curve, extract_components, fit_vs_k, resample_stroke, ContourComponents,
    DrawnStroke, FitPoint, PitchSeries,
};
use midi_draw_core::dataset::PitchVocabulary;
use midi_draw_core::generation::{
    generate, GenerationRequest, DEFAULT_CANDIDATES, DEFAULT_TEMPERATURE,
};
use midi_draw_core::midi::{pianoroll, write_midi, MidiSettings, RollNote};
use midi_draw_core::model::{ModelParams, CHECKPOINT_VERSION};
use midi_draw_core::Error;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_MAX_CANDIDATES: usize = 256;
/// Number of fit points reported by `/api/contour`.
pub const FIT_POINTS: usize = 8;
/// Entropy seeds stay below 2^53 so JavaScript clients can echo them exactly.
const SEED_LIMIT: u64 = 1 << 53;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub port: u16,
    pub checkpoint_path: Option<PathBuf>,
    pub static_dir: Option<PathBuf>,
    pub max_candidates: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            port: DEFAULT_PORT,
            checkpoint_path: None,
            static_dir: None,
            max_candidates: DEFAULT_MAX_CANDIDATES,
        }
    }
}

impl ServiceConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.port == 0 {
            return Err(Error::InvalidArgument("port must be in 1..=65535".into()));
        }
        if self.max_candidates == 0 {
            return Err(Error::InvalidArgument(
                "max_candidates must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone)]
pub struct AppState {
    pub model: Option<Arc<ModelParams>>,
    pub max_candidates: usize,
}

impl AppState {
    pub fn new(model: Option<ModelParams>, max_candidates: usize) -> Self {
        AppState {
            model: model.map(Arc::new),
            max_candidates,
        }
    }

    fn vocab(&self) -> PitchVocabulary {
        self.model.as_ref().map(|m| m.vocab).unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::InvalidInput(_) | Error::InvalidArgument(_) | Error::InvalidStroke(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        json_response(self.status, &serde_json::json!({ "error": self.message }))
    }
}

fn json_response<T: Serialize>(status: StatusCode, body: &T) -> Response {
    let bytes = serde_json::to_vec(body).expect("response serializes");
    (status, [(header::CONTENT_TYPE, "application/json")], bytes).into_response()
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct HealthResponse {
    pub status: String,
    pub model_version: Option<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContourRequest {
    pub points: Vec<[f64; 2]>,
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ContourResponse {
    pub series: Vec<f64>,
    pub components: Vec<f64>,
    pub curve: Vec<f64>,
    pub fit: Vec<FitPoint>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    pub points: Vec<[f64; 2]>,
    pub width: f64,
    pub height: f64,
    #[serde(default = "default_candidates")]
    pub candidates: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_candidates() -> usize {
    DEFAULT_CANDIDATES
}

fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct GenerateResponse {
    pub seed: u64,
    pub notes: Vec<RollNote>,
    pub curve: Vec<f64>,
    pub components: Vec<f64>,
    pub fit_mse: f64,
    pub candidate_mses: Vec<f64>,
    pub midi_base64: String,
}

/// Syntax errors are 400; well-formed JSON of the wrong shape is 422.
fn parse_body<'a, T: Deserialize<'a>>(body: &'a [u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| {
        let status = match e.classify() {
            serde_json::error::Category::Data => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError::new(status, format!("invalid request body: {e}"))
    })
}

fn stroke(points: Vec<[f64; 2]>, width: f64, height: f64, vocab: &PitchVocabulary) -> DrawnStroke {
    DrawnStroke {
        points: points.into_iter().map(|[x, y]| (x, y)).collect(),
        canvas_width: width,
        canvas_height: height,
        pitch_low: vocab.midi_low as f64,
        pitch_high: vocab.midi_high() as f64,
    }
}

pub fn health(state: &AppState) -> HealthResponse {
    HealthResponse {
        status: "ok".into(),
        model_version: state.model.as_ref().map(|_| CHECKPOINT_VERSION),
    }
}

pub fn contour(state: &AppState, body: &[u8]) -> Result<ContourResponse, ApiError> {
    let req: ContourRequest = parse_body(body)?;
    let series = resample_stroke(&stroke(req.points, req.width, req.height, &state.vocab()))?;
    Ok(contour_of(&series)?)
}

fn contour_of(series: &PitchSeries) -> Result<ContourResponse, Error> {
    let components = extract_components(series);
    Ok(ContourResponse {
        series: series.values().to_vec(),
        components: components.values().to_vec(),
        curve: components_to_curve(&components).values().to_vec(),
        fit: fit_vs_k(series, FIT_POINTS)?,
    })
}

pub fn generate_melody(state: &AppState, body: &[u8]) -> Result<GenerateResponse, ApiError> {
    let req: GenerateRequest = parse_body(body)?;
    let Some(model) = state.model.as_deref() else {
        return Err(ApiError::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "no model loaded",
        ));
    };
    if req.candidates == 0 || req.candidates > state.max_candidates {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!(
                "candidates must be in 1..={}, got {}",
                state.max_candidates, req.candidates
            ),
        ));
    }
    let series = resample_stroke(&stroke(req.points, req.width, req.height, &model.vocab))?;
    let target: ContourComponents = extract_components(&series);
    let seed = req
        .seed
        .unwrap_or_else(|| rand::random_range(0..SEED_LIMIT));
    let result = generate(
        model,
        &GenerationRequest {
            target,
            n_candidates: req.candidates,
            temperature: req.temperature,
            seed,
        },
    )?;
    let midi = write_midi(&result.best, &model.vocab, &MidiSettings::default())?;
    Ok(GenerateResponse {
        seed,
        notes: pianoroll(&result.best, &model.vocab).notes,
        curve: result.curve.values().to_vec(),
        components: target.values().to_vec(),
        fit_mse: result.fit_mse,
        candidate_mses: result.candidate_mses,
        midi_base64: base64::engine::general_purpose::STANDARD.encode(midi),
    })
}

fn respond<T: Serialize>(r: Result<T, ApiError>) -> Response {
    match r {
        Ok(body) => json_response(StatusCode::OK, &body),
        Err(e) => e.into_response(),
    }
}

async fn health_route(State(state): State<AppState>) -> Response {
    json_response(StatusCode::OK, &health(&state))
}

async fn contour_route(State(state): State<AppState>, body: Bytes) -> Response {
    respond(contour(&state, &body))
}

async fn generate_route(State(state): State<AppState>, body: Bytes) -> Response {
    let joined = tokio::task::spawn_blocking(move || generate_melody(&state, &body)).await;
    match joined {
        Ok(r) => respond(r),
        Err(e) => ApiError::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            format!("generation task failed: {e}"),
        )
        .into_response(),
    }
}

async fn not_found() -> Response {
    ApiError::new(StatusCode::NOT_FOUND, "no such endpoint").into_response()
}

pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/health", get(health_route))
        .route("/api/contour", post(contour_route))
        .route("/api/generate", post(generate_route))
        .route("/api/{*rest}", axum::routing::any(not_found))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(not_found),
    }
}

pub async fn serve(config: ServiceConfig, model: Option<ModelParams>) -> std::io::Result<()> {
    let app = router(
        AppState::new(model, config.max_candidates),
        config.static_dir,
    );
    let addr = SocketAddr::from(([0, 0, 0, 0], config.port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app).await
}
