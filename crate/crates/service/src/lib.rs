//! HTTP front end for interactive depth-of-field rendering.
//!
//! `GET /api/lenses`, `POST /api/session` (multipart `image` + `depth`),
//! `POST /api/render` (JSON) returning a PNG. Anything else is served from
//! the static directory, if one is configured.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assets;
pub mod error;
pub mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use std::time::Instant;

use axum::extract::{DefaultBodyLimit, Multipart, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use lensforge::dof::{render_dof, PsfSource, RenderRequest, SharpInterval};
use lensforge::image_io::{DepthMap, RgbImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tower_http::services::ServeDir;

pub use assets::{FieldGrid, LensAsset, LensAssets, LensInfo, SourceKind};
pub use error::ServiceError;
use session::{downscale, preview_scale, CachedRender, DepthStats, RenderKey, Session};

pub const DEFAULT_PORT: u16 = 8787;
pub const RENDER_TIME_HEADER: &str = "x-render-time-ms";
pub const CACHE_HEADER: &str = "x-cache";
pub const PREVIEW_SCALE_HEADER: &str = "x-preview-scale";
const MAX_UPLOAD_BYTES: usize = 256 << 20;

pub struct AppState {
    pub assets: Arc<LensAssets>,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
}

impl AppState {
    pub fn new(assets: LensAssets) -> Arc<Self> {
        Arc::new(Self {
            assets: Arc::new(assets),
            sessions: RwLock::new(HashMap::new()),
        })
    }

    fn session(&self, id: &str) -> Result<Arc<Session>, ServiceError> {
        self.sessions
            .read()
            .expect("session table poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(id.to_string()))
    }
}

pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/lenses", get(list_lenses))
        .route("/api/session", post(create_session))
        .route("/api/render", post(render))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(
    addr: SocketAddr,
    assets: LensAssets,
    static_dir: Option<PathBuf>,
) -> std::io::Result<()> {
    let app = router(AppState::new(assets), static_dir);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app).await
}

async fn list_lenses(
    State(state): State<Arc<AppState>>,
) -> Result<Json<Vec<LensInfo>>, ServiceError> {
    if state.assets.is_empty() {
        return Err(ServiceError::NoAssets);
    }
    Ok(Json(state.assets.list()))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub depth_stats: DepthStats,
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    mut form: Multipart,
) -> Result<Json<SessionCreated>, ServiceError> {
    let (mut image, mut depth, mut scale) = (None, None, None);
    while let Some(field) = form
        .next_field()
        .await
        .map_err(|e| ServiceError::upload("form", e.body_text()))?
    {
        let name = field.name().unwrap_or_default().to_string();
        let bytes = field
            .bytes()
            .await
            .map_err(|e| ServiceError::upload(&name, e.body_text()))?;
        match name.as_str() {
            "image" => image = Some(bytes),
            "depth" => depth = Some(bytes),
            "depth_scale_mm" => {
                let text = String::from_utf8_lossy(&bytes);
                let s: f64 = text
                    .trim()
                    .parse()
                    .map_err(|_| ServiceError::upload(&name, "not a number"))?;
                if !(s > 0.0 && s.is_finite()) {
                    return Err(ServiceError::upload(&name, "must be positive"));
                }
                scale = Some(s);
            }
            other => return Err(ServiceError::upload(other, "unexpected field")),
        }
    }
    let image = image.ok_or_else(|| ServiceError::upload("image", "missing"))?;
    let depth = depth.ok_or_else(|| ServiceError::upload("depth", "missing"))?;
    let session = tokio::task::spawn_blocking(move || {
        let (img, bits) =
            RgbImage::from_png_bytes(&image).map_err(|e| ServiceError::upload("image", e))?;
        let depth = DepthMap::from_bytes(&depth, scale.unwrap_or(1.0))
            .map_err(|e| ServiceError::upload("depth", e))?;
        Session::new(img, bits, depth)
    })
    .await
    .map_err(|e| ServiceError::Render(e.to_string()))??;

    let id = uuid::Uuid::new_v4().simple().to_string();
    let stats = session.stats;
    state
        .sessions
        .write()
        .expect("session table poisoned")
        .insert(id.clone(), Arc::new(session));
    log::info!("session {id}: {}x{}", stats.height, stats.width);
    Ok(Json(SessionCreated {
        session_id: id,
        depth_stats: stats,
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RenderParams {
    pub session_id: String,
    pub lens_id: String,
    pub sharp_lo_m: f64,
    pub sharp_hi_m: f64,
    #[serde(default)]
    pub source: Option<SourceKind>,
}

fn etag(key: &RenderKey) -> String {
    let mut h = Sha256::new();
    h.update(key.lens_id.as_bytes());
    h.update(key.lo_bits.to_le_bytes());
    h.update(key.hi_bits.to_le_bytes());
    h.update([key.field as u8]);
    let digest = h.finalize();
    format!(
        "\"{}\"",
        digest[..12]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect::<String>()
    )
}

fn png_response(hit: &CachedRender, cache: &str, ms: f64) -> Response {
    let mut headers = HeaderMap::new();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("image/png"));
    headers.insert(
        header::ETAG,
        HeaderValue::from_str(&hit.etag).expect("hex etag"),
    );
    headers.insert(
        RENDER_TIME_HEADER,
        HeaderValue::from_str(&format!("{ms:.3}")).expect("number"),
    );
    headers.insert(CACHE_HEADER, HeaderValue::from_str(cache).expect("ascii"));
    headers.insert(PREVIEW_SCALE_HEADER, HeaderValue::from(hit.scale));
    (StatusCode::OK, headers, hit.png.as_ref().clone()).into_response()
}

async fn render(
    State(state): State<Arc<AppState>>,
    Json(p): Json<RenderParams>,
) -> Result<Response, ServiceError> {
    let start = Instant::now();
    let session = state.session(&p.session_id)?;
    let asset = state
        .assets
        .get(&p.lens_id)
        .ok_or_else(|| ServiceError::UnknownLens(p.lens_id.clone()))?
        .clone();
    if !(p.sharp_lo_m <= p.sharp_hi_m) {
        return Err(ServiceError::Invalid(format!(
            "sharp_lo_m {} exceeds sharp_hi_m {}",
            p.sharp_lo_m, p.sharp_hi_m
        )));
    }
    let interval = SharpInterval::new(p.sharp_lo_m, p.sharp_hi_m)
        .map_err(|e| ServiceError::Invalid(e.to_string()))?;
    let use_field = match p.source.unwrap_or_else(|| asset.info().source) {
        SourceKind::Library if asset.library.is_some() => false,
        SourceKind::Field if asset.field.is_some() => true,
        other => {
            return Err(ServiceError::Invalid(format!(
                "lens {} has no {} source",
                p.lens_id,
                if other == SourceKind::Field {
                    "field"
                } else {
                    "library"
                }
            )))
        }
    };
    let key = RenderKey {
        lens_id: p.lens_id.clone(),
        lo_bits: p.sharp_lo_m.to_bits(),
        hi_bits: p.sharp_hi_m.to_bits(),
        field: use_field,
    };

    let mut cache = session.cache.lock().await;
    if let Some(hit) = cache.get(&key) {
        return Ok(png_response(
            hit,
            "hit",
            start.elapsed().as_secs_f64() * 1e3,
        ));
    }
    let worker = session.clone();
    let lens_id = p.lens_id.clone();
    let tag = etag(&key);
    let rendered = tokio::task::spawn_blocking(move || -> Result<CachedRender, ServiceError> {
        let source = if use_field {
            let (model, g) = asset.field.as_ref().expect("checked above");
            PsfSource::Field {
                model,
                n_h: g.n_h,
                n_w: g.n_w,
                patch_px: g.patch_px,
            }
        } else {
            PsfSource::Library(asset.library.as_ref().expect("checked above"))
        };
        let layout = source.layout((0, 0));
        let (max_h, max_w) = (layout.n_h * layout.patch_px, layout.n_w * layout.patch_px);
        let s = preview_scale(worker.image.height, worker.image.width, max_h, max_w);
        let (image, depth) = downscale(&worker.image, &worker.depth, s)?;
        let offset = ((max_h - image.height) / 2, (max_w - image.width) / 2);
        let out = render_dof(&RenderRequest {
            image: &image,
            depth: &depth,
            lens_id: &lens_id,
            sharp: Some(interval),
            source,
            offset,
        })
        .map_err(|e| ServiceError::Render(e.to_string()))?;
        let png = out
            .to_png_bytes(worker.bit_depth)
            .map_err(|e| ServiceError::Render(e.to_string()))?;
        Ok(CachedRender {
            png: Arc::new(png),
            etag: tag,
            scale: s,
        })
    })
    .await
    .map_err(|e| ServiceError::Render(e.to_string()))??;

    let ms = start.elapsed().as_secs_f64() * 1e3;
    log::debug!("render {} {:?} in {ms:.1} ms", p.lens_id, interval);
    let response = png_response(&rendered, "miss", ms);
    Session::remember(&mut cache, key, rendered);
    Ok(response)
}
