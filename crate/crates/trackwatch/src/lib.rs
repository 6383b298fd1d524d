//! HTTP scoring service over a loaded scene model.
//!
//! The router is built by [`router`]; `main.rs` binds it to a socket. All
//! handlers read from an immutable snapshot shared behind an `Arc`.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;

use trackwatch_core::pipeline::{densify_polyline, TrackScores};
use trackwatch_core::tracker::Frame;
use trackwatch_core::{Primitive, SceneModel};

pub struct AppState {
    pub model: SceneModel,
    /// Scene image already transcoded to PNG.
    pub scene_png: Option<Vec<u8>>,
}

impl AppState {
    pub fn new(model: SceneModel, scene: Option<&Frame>) -> anyhow::Result<Self> {
        let scene_png = scene.map(encode_png).transpose()?;
        Ok(Self { model, scene_png })
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/score", post(score))
        .route("/model/meta", get(meta))
        .route("/model/primitives", get(primitives))
        .route("/scene", get(scene))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// 8-bit grayscale PNG, rounding like the PGM writer.
pub fn encode_png(frame: &Frame) -> anyhow::Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, frame.width() as u32, frame.height() as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let pixels: Vec<u8> = frame
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let mut writer = enc.write_header()?;
    writer.write_image_data(&pixels)?;
    writer.finish()?;
    Ok(out)
}

#[derive(Debug, Deserialize)]
pub struct ScoreRequest {
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveView {
    #[serde(rename = "X")]
    pub x: f64,
    #[serde(rename = "Y")]
    pub y: f64,
    #[serde(rename = "Theta")]
    pub theta: f64,
}

impl From<&Primitive> for PrimitiveView {
    fn from(p: &Primitive) -> Self {
        Self {
            x: p.x,
            y: p.y,
            theta: p.theta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleView {
    pub scale: f64,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "R_hat")]
    pub r_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstPair {
    pub pos_a: usize,
    pub pos_b: usize,
    pub prim_a: PrimitiveView,
    pub prim_b: PrimitiveView,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub rho1: f64,
    pub per_scale: Vec<ScaleView>,
    pub rho2: f64,
    pub worst_pair: Option<WorstPair>,
    pub novel1: bool,
    pub novel2: bool,
    pub canonized: Vec<usize>,
}

impl ScoreResponse {
    pub fn new(model: &SceneModel, s: &TrackScores) -> Self {
        let finest = model.primitives(0).unwrap_or(&[]);
        let worst_pair = match (finest.get(s.rho2.prim_a), finest.get(s.rho2.prim_b)) {
            (Some(a), Some(b)) => Some(WorstPair {
                pos_a: s.rho2.pos_a,
                pos_b: s.rho2.pos_b,
                prim_a: a.into(),
                prim_b: b.into(),
            }),
            _ => None,
        };
        Self {
            rho1: s.rho1.rho1,
            per_scale: s
                .rho1
                .per_scale
                .iter()
                .map(|p| ScaleView {
                    scale: p.delta_d,
                    r: p.r,
                    r_hat: p.r_hat,
                })
                .collect(),
            rho2: s.rho2.rho2,
            worst_pair,
            novel1: s.novel1,
            novel2: s.novel2,
            canonized: s.canonized.clone(),
        }
    }
}

fn error(status: StatusCode, kind: &str, reason: impl Into<String>) -> Response {
    let body = serde_json::json!({ "error": kind, "reason": reason.into() });
    (status, Json(body)).into_response()
}

// The body is parsed by hand so that every malformed request maps to 400;
// 422 is reserved for well-formed tracks the model cannot score.
async fn score(State(st): State<Arc<AppState>>, body: Bytes) -> Response {
    let req: ScoreRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, "bad_request", e.to_string()),
    };
    if req.points.len() < 2 {
        return error(StatusCode::BAD_REQUEST, "bad_request", "at least two points are required");
    }
    let track = match densify_polyline("probe", &req.points) {
        Ok(t) => t,
        Err(e) => return error(StatusCode::BAD_REQUEST, "bad_request", e.to_string()),
    };
    match st.model.score_track(&track) {
        Ok(s) => Json(ScoreResponse::new(&st.model, &s)).into_response(),
        Err(u) => error(StatusCode::UNPROCESSABLE_ENTITY, "unscorable", u.to_string()),
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MetaResponse {
    pub format_version: u64,
    pub input_tracks: usize,
    pub filtered_tracks: usize,
    pub scoreable_tracks: usize,
    pub unscoreable_tracks: usize,
    pub tracklets_per_scale: Vec<usize>,
    pub primitives_per_scale: Vec<usize>,
    pub scales: Vec<f64>,
    pub threshold_r1: f64,
    pub threshold_r2: f64,
}

async fn meta(State(st): State<Arc<AppState>>) -> Json<MetaResponse> {
    let m = &st.model;
    let tm = &m.training_meta;
    Json(MetaResponse {
        format_version: tm.format_version,
        input_tracks: tm.input_tracks,
        filtered_tracks: tm.filtered_tracks,
        scoreable_tracks: tm.scoreable_tracks,
        unscoreable_tracks: tm.unscoreable_tracks,
        tracklets_per_scale: tm.tracklets_per_scale.clone(),
        primitives_per_scale: m.ensemble.chains.iter().map(|c| c.vocab.len()).collect(),
        scales: m.ensemble.scales(),
        threshold_r1: m.threshold_r1(),
        threshold_r2: m.threshold_r2(),
    })
}

#[derive(Debug, Deserialize)]
struct ScaleQuery {
    scale: usize,
}

/// `scale` is 1-based: 1 is the finest scale.
async fn primitives(State(st): State<Arc<AppState>>, Query(q): Query<ScaleQuery>) -> Response {
    match q.scale.checked_sub(1).and_then(|k| st.model.primitives(k)) {
        Some(p) => Json(p.to_vec()).into_response(),
        None => error(StatusCode::NOT_FOUND, "not_found", format!("no scale {}", q.scale)),
    }
}

async fn scene(State(st): State<Arc<AppState>>) -> Response {
    match &st.scene_png {
        Some(png) => ([(header::CONTENT_TYPE, "image/png")], png.clone()).into_response(),
        None => error(StatusCode::NOT_FOUND, "not_found", "no scene image configured"),
    }
}
