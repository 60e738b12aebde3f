use std::sync::OnceLock;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::response::Response;
use axum::Router;
use http_body_util::BodyExt;
use lensforge::field::{DepthEncoding, FieldArch, FieldModel};
use lensforge::image_io::{BitDepth, DepthMap, RgbImage};
use lensforge::lens::{bundled, SpectralResponse};
use lensforge::preset::sensor_for;
use lensforge::psflib::{build_psflib, default_depths, MapTrace, PsfMapGrid};
use lensforge_service::{
    router, AppState, FieldGrid, LensAssets, CACHE_HEADER, RENDER_TIME_HEADER,
};
use serde_json::Value;
use tower::ServiceExt;

const H: usize = 32;
const W: usize = 48;

fn assets() -> &'static LensAssets {
    static ASSETS: OnceLock<LensAssets> = OnceLock::new();
    ASSETS.get_or_init(|| {
        let grid = PsfMapGrid {
            n_h: 2,
            n_w: 3,
            patch_px: 16,
            kernel_size: 5,
            depths_m: default_depths(3),
        };
        let trace = MapTrace {
            n_fov: 4,
            pupil_samples: 12,
        };
        let mut assets = LensAssets::new();
        let lenses = bundled::all();
        for lens in lenses.iter().rev() {
            let sensor = sensor_for(lens, H, W).unwrap();
            let lib =
                build_psflib(lens, &grid, &trace, &sensor, &SpectralResponse::default()).unwrap();
            assets.add_library(lens, lib).unwrap();
        }
        let arch = FieldArch {
            input_width: 8,
            hidden_layers: 1,
            hidden_width: 8,
            kernel_size: 5,
        };
        let model =
            FieldModel::new_random(arch, vec!["MOS-S2".into()], DepthEncoding::Linear, 4).unwrap();
        let fg = FieldGrid {
            n_h: 2,
            n_w: 3,
            patch_px: 16,
        };
        assets.add_field(&lenses, model, fg).unwrap();
        assets
    })
}

fn app() -> Router {
    router(AppState::new(assets().clone()), None)
}

fn scene() -> (RgbImage, DepthMap) {
    let mut img = RgbImage::new(H, W);
    for c in 0..3 {
        for y in 0..H {
            for x in 0..W {
                let v = ((x * 37 + y * 11 + c * 71) % 256) as f32 / 255.0;
                img.set(c, y, x, v);
            }
        }
    }
    let values = (0..H * W)
        .map(|i| {
            let x = i % W;
            if x < 16 {
                0.8
            } else if x < 32 {
                2.0
            } else {
                8.0
            }
        })
        .collect();
    (img, DepthMap::from_values(H, W, values).unwrap())
}

fn multipart(parts: &[(&str, Vec<u8>)]) -> Request<Body> {
    let boundary = "lensforgeboundary";
    let mut body = Vec::new();
    for (name, bytes) in parts {
        body.extend_from_slice(
            format!("--{boundary}\r\nContent-Disposition: form-data; name=\"{name}\"; filename=\"{name}\"\r\nContent-Type: application/octet-stream\r\n\r\n").as_bytes(),
        );
        body.extend_from_slice(bytes);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{boundary}--\r\n").as_bytes());
    Request::post("/api/session")
        .header(
            "content-type",
            format!("multipart/form-data; boundary={boundary}"),
        )
        .body(Body::from(body))
        .unwrap()
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Response) {
    let resp = app.clone().oneshot(req).await.unwrap();
    (resp.status(), resp)
}

async fn bytes(resp: Response) -> Vec<u8> {
    resp.into_body()
        .collect()
        .await
        .unwrap()
        .to_bytes()
        .to_vec()
}

async fn json(resp: Response) -> Value {
    serde_json::from_slice(&bytes(resp).await).unwrap()
}

async fn upload(app: &Router, image: &RgbImage, depth: &DepthMap) -> (StatusCode, Value) {
    let req = multipart(&[
        ("image", image.to_png_bytes(BitDepth::Eight).unwrap()),
        ("depth", depth.to_pfm_bytes()),
    ]);
    let (status, resp) = send(app, req).await;
    (status, json(resp).await)
}

fn render_req(session: &str, lens: &str, lo: f64, hi: f64, source: Option<&str>) -> Request<Body> {
    let mut body = serde_json::json!({
        "session_id": session,
        "lens_id": lens,
        "sharp_lo_m": lo,
        "sharp_hi_m": hi,
    });
    if let Some(s) = source {
        body["source"] = s.into();
    }
    Request::post("/api/render")
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

#[tokio::test]
async fn lenses_are_listed_in_a_stable_order() {
    let app = app();
    let (status, resp) = send(
        &app,
        Request::get("/api/lenses").body(Body::empty()).unwrap(),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let first = bytes(resp).await;
    let list: Value = serde_json::from_slice(&first).unwrap();
    let ids: Vec<&str> = list
        .as_array()
        .unwrap()
        .iter()
        .map(|l| l["id"].as_str().unwrap())
        .collect();
    assert_eq!(ids, ["MOS-S1", "MOS-S2", "DoubleGauss", "6P"]);
    assert_eq!(list[0]["focal_length"], 20.0);
    assert_eq!(list[0]["f_number"], 5.0);
    assert_eq!(list[0]["source"], "library");
    assert_eq!(list[1]["sources"], serde_json::json!(["library", "field"]));

    let (_, again) = send(
        &app,
        Request::get("/api/lenses").body(Body::empty()).unwrap(),
    )
    .await;
    assert_eq!(bytes(again).await, first);
}

#[tokio::test]
async fn no_assets_means_unavailable() {
    let app = router(AppState::new(LensAssets::new()), None);
    let (status, _) = send(
        &app,
        Request::get("/api/lenses").body(Body::empty()).unwrap(),
    )
    .await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test]
async fn sessions_report_clamped_depth_stats_and_holes() {
    let app = app();
    let (img, _) = scene();
    let mut values: Vec<f64> = (0..H * W).map(|i| 0.3 + (i % 7) as f64).collect();
    for v in values.iter_mut().take(H * W / 4) {
        *v = 0.0;
    }
    let depth = DepthMap::from_values(H, W, values).unwrap();
    let (status, body) = upload(&app, &img, &depth).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let stats = &body["depth_stats"];
    assert!(stats["min"].as_f64().unwrap() >= 0.7);
    assert!(stats["max"].as_f64().unwrap() <= 10.0);
    assert!((stats["hole_fraction"].as_f64().unwrap() - 0.25).abs() < 1e-12);
    assert_eq!(body["session_id"].as_str().unwrap().len(), 32);
}

#[tokio::test]
async fn bad_uploads_are_rejected_with_the_field() {
    let app = app();
    let (img, _) = scene();
    let (status, body) = upload(&app, &img, &DepthMap::constant(H, W + 1, 2.0)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["field"], "depth");

    let req = multipart(&[
        ("image", img.to_png_bytes(BitDepth::Eight).unwrap()),
        ("depth", b"Pf\nnot a pfm".to_vec()),
    ]);
    let (status, resp) = send(&app, req).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(json(resp).await["field"], "depth");

    let req = multipart(&[("depth", DepthMap::constant(H, W, 1.0).to_pfm_bytes())]);
    let (status, resp) = send(&app, req).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(json(resp).await["field"], "image");
}

#[tokio::test]
async fn full_interval_returns_the_upload_and_lenses_differ_outside_it() {
    let app = app();
    let (img, depth) = scene();
    let (_, body) = upload(&app, &img, &depth).await;
    let id = body["session_id"].as_str().unwrap();

    let (status, resp) = send(&app, render_req(id, "MOS-S1", 0.7, 1e9, None)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "image/png");
    assert!(resp.headers()[RENDER_TIME_HEADER]
        .to_str()
        .unwrap()
        .parse::<f64>()
        .is_ok());
    let (back, _) = RgbImage::from_png_bytes(&bytes(resp).await).unwrap();
    assert_eq!(back, img);

    let (_, a) = send(&app, render_req(id, "MOS-S1", 1.5, 2.5, None)).await;
    let (_, b) = send(&app, render_req(id, "MOS-S2", 1.5, 2.5, None)).await;
    let (a, _) = RgbImage::from_png_bytes(&bytes(a).await).unwrap();
    let (b, _) = RgbImage::from_png_bytes(&bytes(b).await).unwrap();
    assert!(a.mean_abs_diff(&b) > 0.0);
    for c in 0..3 {
        for y in 0..H {
            for x in 16..32 {
                assert_eq!(a.get(c, y, x), img.get(c, y, x));
            }
        }
    }
    assert_ne!(a, img);
}

#[tokio::test]
async fn repeated_renders_are_cached_and_identical() {
    let app = app();
    let (img, depth) = scene();
    let (_, body) = upload(&app, &img, &depth).await;
    let id = body["session_id"].as_str().unwrap();
    let (_, first) = send(&app, render_req(id, "6P", 5.0, 9.0, None)).await;
    assert_eq!(first.headers()[CACHE_HEADER], "miss");
    let tag = first.headers()["etag"].clone();
    let first = bytes(first).await;
    let (_, second) = send(&app, render_req(id, "6P", 5.0, 9.0, None)).await;
    assert_eq!(second.headers()[CACHE_HEADER], "hit");
    assert_eq!(second.headers()["etag"], tag);
    assert_eq!(bytes(second).await, first);

    let (_, other) = upload(&app, &img, &depth).await;
    let other = other["session_id"].as_str().unwrap();
    assert_ne!(other, id);
    let (_, fresh) = send(&app, render_req(other, "6P", 5.0, 9.0, None)).await;
    assert_eq!(fresh.headers()[CACHE_HEADER], "miss");
    assert_eq!(bytes(fresh).await, first);
}

#[tokio::test]
async fn field_source_renders() {
    let app = app();
    let (img, depth) = scene();
    let (_, body) = upload(&app, &img, &depth).await;
    let id = body["session_id"].as_str().unwrap();
    let (status, resp) = send(&app, render_req(id, "MOS-S2", 0.7, 1.0, Some("field"))).await;
    assert_eq!(status, StatusCode::OK);
    let (out, _) = RgbImage::from_png_bytes(&bytes(resp).await).unwrap();
    assert_eq!((out.height, out.width), (H, W));
    let (status, _) = send(&app, render_req(id, "MOS-S1", 0.7, 1.0, Some("field"))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn render_errors_map_to_statuses() {
    let app = app();
    let (img, depth) = scene();
    let (_, body) = upload(&app, &img, &depth).await;
    let id = body["session_id"].as_str().unwrap();
    let (status, _) = send(&app, render_req(id, "MOS-S1", 3.0, 1.0, None)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = send(&app, render_req(id, "MOS-S1", -1.0, 1.0, None)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = send(
        &app,
        render_req("0123456789abcdef", "MOS-S1", 1.0, 2.0, None),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = send(&app, render_req(id, "Petzval", 1.0, 2.0, None)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn large_uploads_render_as_a_scaled_preview() {
    let app = app();
    let (small, _) = scene();
    let mut img = RgbImage::new(2 * H, 2 * W);
    for c in 0..3 {
        for y in 0..2 * H {
            for x in 0..2 * W {
                img.set(c, y, x, small.get(c, y / 2, x / 2));
            }
        }
    }
    let depth = DepthMap::constant(2 * H, 2 * W, 3.0);
    let (_, body) = upload(&app, &img, &depth).await;
    let id = body["session_id"].as_str().unwrap();
    let (_, resp) = send(&app, render_req(id, "MOS-S1", 0.7, 1e9, None)).await;
    assert_eq!(resp.headers()["x-preview-scale"], "2");
    let (out, _) = RgbImage::from_png_bytes(&bytes(resp).await).unwrap();
    assert_eq!(out, small);
}

#[tokio::test]
async fn static_files_are_served() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<html>ui</html>").unwrap();
    let app = router(
        AppState::new(assets().clone()),
        Some(dir.path().to_path_buf()),
    );
    let (status, resp) = send(
        &app,
        Request::get("/index.html").body(Body::empty()).unwrap(),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(bytes(resp).await, b"<html>ui</html>");
    let (status, _) = send(
        &app,
        Request::get("/api/lenses").body(Body::empty()).unwrap(),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
}

#[test]
fn assets_load_from_a_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let src = assets();
    let lib = src.get("MOS-S1").unwrap().library.as_ref().unwrap();
    lib.save(&dir.join("mos-s1.psfl")).unwrap();
    let (model, _) = src.get("MOS-S2").unwrap().field.as_ref().unwrap();
    model.save(&dir.join("field.olf")).unwrap();
    let loaded = LensAssets::from_dir(dir).unwrap();
    let ids: Vec<_> = loaded
        .list()
        .into_iter()
        .map(|l| (l.id, l.source))
        .collect();
    assert_eq!(
        ids,
        [
            ("MOS-S1".to_string(), lensforge_service::SourceKind::Library),
            ("MOS-S2".to_string(), lensforge_service::SourceKind::Field)
        ]
    );
    assert_eq!(
        loaded.get("MOS-S2").unwrap().field.as_ref().unwrap().1,
        FieldGrid {
            n_h: 2,
            n_w: 3,
            patch_px: 16
        }
    );
}

#[tokio::test]
async fn desk_scale_latency() {
    let preset = lensforge::preset::Preset::desk();
    let lens = bundled::mos_s1();
    let trace = MapTrace {
        n_fov: 4,
        pupil_samples: 8,
    };
    let lib = build_psflib(
        &lens,
        &preset.grid().unwrap(),
        &trace,
        &preset.sensor_for(&lens).unwrap(),
        &SpectralResponse::default(),
    )
    .unwrap();
    let mut assets = LensAssets::new();
    assets.add_library(&lens, lib).unwrap();
    let app = router(AppState::new(assets), None);

    let (h, w) = (preset.sensor_height_px, preset.sensor_width_px);
    let mut img = RgbImage::new(h, w);
    for c in 0..3 {
        for (i, v) in img.plane_mut(c).iter_mut().enumerate() {
            *v = ((i * 13 + c * 5) % 256) as f32 / 255.0;
        }
    }
    let depth = DepthMap::from_values(
        h,
        w,
        (0..h * w)
            .map(|i| 0.7 + (i % w) as f64 / w as f64 * 9.0)
            .collect(),
    )
    .unwrap();

    let t = std::time::Instant::now();
    let (status, body) = upload(&app, &img, &depth).await;
    let upload_ms = t.elapsed().as_secs_f64() * 1e3;
    assert_eq!(status, StatusCode::OK);
    let t = std::time::Instant::now();
    let (status, _) = send(
        &app,
        Request::get("/api/lenses").body(Body::empty()).unwrap(),
    )
    .await;
    let list_ms = t.elapsed().as_secs_f64() * 1e3;
    assert_eq!(status, StatusCode::OK);
    assert!(
        upload_ms < 100.0 && list_ms < 100.0,
        "session {upload_ms:.1} ms, lenses {list_ms:.1} ms"
    );

    let id = body["session_id"].as_str().unwrap();
    let t = std::time::Instant::now();
    let (status, resp) = send(&app, render_req(id, "MOS-S1", 2.0, 3.0, None)).await;
    let render_ms = t.elapsed().as_secs_f64() * 1e3;
    assert_eq!(status, StatusCode::OK);
    assert!(render_ms < 1000.0, "render {render_ms:.1} ms");
    let (out, _) = RgbImage::from_png_bytes(&bytes(resp).await).unwrap();
    assert_eq!((out.height, out.width), (h, w));
}
