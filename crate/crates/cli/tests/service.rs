use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use geoframe::geometry::{CameraIntrinsics, DepthMap, EgoMotion};
use geoframe_cli::service::{decode_colormap, router, AppState, FrameEntry, FrameList, SessionState, View};
use http_body_util::BodyExt;
use image::{Rgb, RgbImage};
use serde_json::{json, Value};
use tower::ServiceExt;

fn camera() -> CameraIntrinsics {
    CameraIntrinsics::centered(40.0, 48, 24).unwrap()
}

fn plane_frame(d: f64) -> FrameEntry {
    let k = camera();
    FrameEntry {
        video: "plane".into(),
        index: 0,
        rgb: RgbImage::from_fn(48, 24, |x, y| Rgb([(5 * x) as u8, (10 * y) as u8, 90])),
        depth: DepthMap::constant(48, 24, d).unwrap(),
        k,
    }
}

fn app() -> Router {
    router(Arc::new(AppState::new(vec![plane_frame(10.0), plane_frame(20.0)])))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn open(app: &Router, frame: usize) -> View {
    let (status, v) = call(app, "POST", "/session", Some(json!({ "frame": frame }))).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    serde_json::from_value(v).unwrap()
}

async fn step(app: &Router, id: u64, m: [f64; 6]) -> View {
    let body = serde_json::to_value(EgoMotion::from_components(m)).unwrap();
    let (status, v) = call(app, "POST", &format!("/session/{id}/motion"), Some(body)).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    serde_json::from_value(v).unwrap()
}

async fn state(app: &Router, id: u64) -> SessionState {
    let (status, v) = call(app, "GET", &format!("/session/{id}/state"), None).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    serde_json::from_value(v).unwrap()
}

fn png(b64: &str) -> RgbImage {
    image::load_from_memory(&BASE64.decode(b64).unwrap()).unwrap().to_rgb8()
}

#[tokio::test]
async fn frames_are_listed() {
    let (status, v) = call(&app(), "GET", "/frames", None).await;
    assert_eq!(status, StatusCode::OK);
    let list: FrameList = serde_json::from_value(v.clone()).unwrap();
    assert_eq!(list.version, 1);
    assert_eq!(list.frames.len(), 2);
    assert_eq!((list.frames[1].id, list.frames[1].width, list.frames[1].height), (1, 48, 24));
    assert_eq!(serde_json::to_value(&list).unwrap(), v);
}

#[tokio::test]
async fn forward_then_back_returns_to_identity() {
    let app = app();
    let id = open(&app, 0).await.session;
    step(&app, id, [0.0, 0.0, 0.5, 0.0, 0.0, 0.0]).await;
    let back = step(&app, id, [0.0, 0.0, -0.5, 0.0, 0.0, 0.0]).await;
    let s = state(&app, id).await;
    assert!(s.accumulated.components().iter().all(|c| c.abs() < 1e-9), "{:?}", s.accumulated);
    assert_eq!(s.history.len(), 2);
    assert_eq!(png(&back.rgb_png), plane_frame(10.0).rgb);
}

#[tokio::test]
async fn zero_motion_returns_the_current_frame() {
    let app = app();
    let opened = open(&app, 0).await;
    assert_eq!(png(&opened.rgb_png), plane_frame(10.0).rgb);
    let moved = step(&app, opened.session, [0.2, 0.0, 0.4, 0.0, 0.02, 0.0]).await;
    let same = step(&app, opened.session, [0.0; 6]).await;
    assert_eq!(same.rgb_png, moved.rgb_png);
    assert_eq!(same.depth_png, moved.depth_png);
    assert_eq!(same.coverage, moved.coverage);
}

#[tokio::test]
async fn plane_depth_after_forward_steps() {
    let app = app();
    let k = camera();
    let id = open(&app, 0).await.session;
    let v = step(&app, id, [0.0, 0.0, 0.5, 0.0, 0.0, 0.0]).await;
    let centre = png(&v.depth_png).get_pixel(k.width as u32 / 2, k.height as u32 / 2).0;
    // one red level spans d² / (255 · d_min) metres
    let half_level = 9.5f64.powi(2) / (2.0 * 255.0 * 3.0);
    assert!((decode_colormap(centre).unwrap() - 9.5).abs() <= half_level);
    assert!((v.center_depth.unwrap() - 9.5).abs() < 1e-9);

    let v = step(&app, id, [0.0, 0.0, 0.5, 0.0, 0.0, 0.0]).await;
    let centre = png(&v.depth_png).get_pixel(k.width as u32 / 2, k.height as u32 / 2).0;
    assert!((decode_colormap(centre).unwrap() - 9.0).abs() < 1e-9);
    assert_eq!(decode_colormap([0, 0, 0]), None);
}

#[tokio::test]
async fn motions_compose_as_rigid_transforms() {
    let app = app();
    let id = open(&app, 1).await.session;
    let moves = [[0.0, 0.0, 0.0, 0.0, 0.3, 0.0], [1.0, 0.0, 0.0, 0.0, 0.0, 0.0], [0.0, 0.2, 0.5, 0.05, -0.1, 0.02]];
    for m in moves {
        step(&app, id, m).await;
    }
    let s = state(&app, id).await;
    let mut replay = EgoMotion::zero();
    for m in &s.history {
        replay = replay.then(m).unwrap();
    }
    for (a, b) in s.accumulated.components().iter().zip(replay.components()) {
        assert!((a - b).abs() < 1e-9);
    }
    // turning first changes where the sideways step goes
    let summed: Vec<f64> = (0..6).map(|i| moves.iter().map(|m| m[i]).sum()).collect();
    assert!((s.accumulated.t_x - summed[0]).abs() > 1e-3);
}

#[tokio::test]
async fn sessions_are_isolated_and_reset() {
    let app = app();
    let a = open(&app, 0).await.session;
    let b = open(&app, 0).await.session;
    assert_ne!(a, b);
    tokio::join!(
        async {
            for _ in 0..4 {
                step(&app, a, [0.1, 0.0, 0.0, 0.0, 0.0, 0.0]).await;
            }
        },
        async {
            for _ in 0..3 {
                step(&app, b, [0.0, 0.0, 0.0, 0.0, 0.01, 0.0]).await;
            }
        }
    );
    let (sa, sb) = (state(&app, a).await, state(&app, b).await);
    assert_eq!((sa.history.len(), sb.history.len()), (4, 3));
    assert!((sa.accumulated.t_x - 0.4).abs() < 1e-9 && sa.accumulated.r_y == 0.0);
    assert!(sb.accumulated.t_x == 0.0 && (sb.accumulated.r_y - 0.03).abs() < 1e-9);

    let (status, v) = call(&app, "POST", &format!("/session/{a}/reset"), None).await;
    assert_eq!(status, StatusCode::OK);
    let view: View = serde_json::from_value(v).unwrap();
    assert_eq!(png(&view.rgb_png), plane_frame(10.0).rgb);
    let sa = state(&app, a).await;
    assert!(sa.history.is_empty() && sa.accumulated == EgoMotion::zero());
    assert_eq!(state(&app, b).await.history.len(), 3);
}

#[tokio::test]
async fn errors_are_structured() {
    let app = app();
    for uri in ["/session/99/state", "/session/abc/state", "/nowhere"] {
        let (status, v) = call(&app, "GET", uri, None).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{uri}");
        assert_eq!(v["code"], "not_found");
        assert!(v["message"].is_string());
    }
    let (status, v) = call(&app, "POST", "/session", Some(json!({ "frame": 7 }))).await;
    assert_eq!((status, v["code"].as_str()), (StatusCode::NOT_FOUND, Some("not_found")));

    let id = open(&app, 0).await.session;
    let uri = format!("/session/{id}/motion");
    for bad in [json!({ "t_x": 1.0 }), json!({ "t_x": "far", "t_y": 0, "t_z": 0, "r_x": 0, "r_y": 0, "r_z": 0 })] {
        let (status, v) = call(&app, "POST", &uri, Some(bad)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
        assert_eq!(v["code"], "bad_request");
    }
    let (status, _) = call(&app, "POST", "/session/99/motion", Some(json!({}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    // a quarter turn about x cannot be expressed as components
    let lock = [0.0, 0.0, 0.0, std::f64::consts::FRAC_PI_2, 0.0, 0.0];
    let body = serde_json::to_value(EgoMotion::from_components(lock)).unwrap();
    let (status, v) = call(&app, "POST", &uri, Some(body)).await;
    assert_eq!(status, StatusCode::INTERNAL_SERVER_ERROR);
    assert_eq!(v["code"], "numeric_failure");
    assert!(state(&app, id).await.history.is_empty());
}

#[test]
fn motion_records_round_trip() {
    let m = EgoMotion::from_components([0.1, -0.2, 0.3, 0.01, -0.02, 0.03]);
    let text = serde_json::to_string(&m).unwrap();
    assert_eq!(serde_json::from_str::<EgoMotion>(&text).unwrap(), m);
}
