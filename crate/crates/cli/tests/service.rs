use std::fs;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use base64::Engine;
use densitykit_cli::service::{router, serve, AppState, PreviewResponse};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tempfile::TempDir;
use tower::ServiceExt;

fn setup() -> (TempDir, Router) {
    let tmp = tempfile::tempdir().unwrap();
    let (images, annotations) = (tmp.path().join("images"), tmp.path().join("ann"));
    fs::create_dir(&images).unwrap();
    fs::create_dir(&annotations).unwrap();
    image::RgbImage::new(32, 32).save(images.join("frame_b.png")).unwrap();
    image::RgbImage::new(32, 32).save(images.join("frame_a.jpg")).unwrap();
    fs::write(images.join("notes.txt"), "not an image").unwrap();
    let app = router(AppState {
        image_dir: images,
        annotation_dir: annotations,
    });
    (tmp, app)
}

async fn call(app: &Router, method: &str, uri: &str, body: impl Into<Body>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.into())
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

#[tokio::test]
async fn lists_and_serves_images() {
    let (_tmp, app) = setup();
    let (status, body) = call(&app, "GET", "/api/images", Body::empty()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(serde_json::from_slice::<Value>(&body).unwrap(), json!(["frame_a", "frame_b"]));

    let (status, body) = call(&app, "GET", "/api/images/frame_b", Body::empty()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(&body[1..4], b"PNG");

    let (status, _) = call(&app, "GET", "/api/images/missing", Body::empty()).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "GET", "/api/images/..", Body::empty()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn annotation_round_trip() {
    let (tmp, app) = setup();
    let doc = json!({"image": "frame_a", "width": 32, "height": 32,
        "labels": [{"x1": 1.5, "y1": 2.0, "x2": 20.0, "y2": 25.0}, {"x1": 3.0, "y1": 3.0, "x2": 40.0, "y2": 3.0}]});
    let (status, _) = call(&app, "GET", "/api/annotations/frame_a", Body::empty()).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, body) = call(&app, "PUT", "/api/annotations/frame_a", doc.to_string()).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    let (status, body) = call(&app, "GET", "/api/annotations/frame_a", Body::empty()).await;
    assert_eq!(status, StatusCode::OK);
    let got: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(got["image"], "frame_a");
    assert_eq!(got["labels"][0], doc["labels"][0]);
    // out-of-bounds endpoint clamped on save
    assert_eq!(got["labels"][1]["x2"], 31.0);
    assert!(tmp.path().join("ann/frame_a.json").is_file());
    // no stray temp files after the atomic rename
    assert_eq!(fs::read_dir(tmp.path().join("ann")).unwrap().count(), 1);
}

#[tokio::test]
async fn invalid_annotation_is_400_with_diagnostics() {
    let (_tmp, app) = setup();
    let (status, body) = call(&app, "PUT", "/api/annotations/frame_a", "{\"image\": \"frame_a\",\n \"width\": }").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let err: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(err["line"], 2);
    assert!(err["error"].as_str().unwrap().len() > 5);

    let wrong_id = json!({"image": "other", "width": 4, "height": 4, "labels": []});
    let (status, _) = call(&app, "PUT", "/api/annotations/frame_a", wrong_id.to_string()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn preview_counts_one_label() {
    let (_tmp, app) = setup();
    let req = json!({"width": 30, "height": 30, "labels": [{"x1": 5, "y1": 5, "x2": 25, "y2": 25}],
        "scheme": "agk", "config": {"sigma_basic": 3.0}});
    let (status, body) = call(&app, "POST", "/api/preview", req.to_string()).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    let resp: PreviewResponse = serde_json::from_slice(&body).unwrap();
    assert!((resp.count - 1.0).abs() < 1e-6);
    assert_eq!((resp.width, resp.height, resp.factor), (30, 30, 1));
    let pixels = base64::engine::general_purpose::STANDARD.decode(&resp.heatmap).unwrap();
    assert_eq!(pixels.len(), 900);
    assert_eq!(pixels[15 * 30 + 15], 255);

    let big = json!({"width": 1000, "height": 600, "labels": [], "scheme": "dot"});
    let (_, body) = call(&app, "POST", "/api/preview", big.to_string()).await;
    let resp: PreviewResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!((resp.width, resp.height, resp.factor, resp.count), (250, 150, 4, 0.0));

    let bad = json!({"width": 10, "height": 10, "labels": [], "config": {"alpha": -1.0}});
    let (status, _) = call(&app, "POST", "/api/preview", bad.to_string()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn busy_port_is_a_startup_error() {
    let tmp = tempfile::tempdir().unwrap();
    let holder = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = holder.local_addr().unwrap();
    let state = AppState {
        image_dir: tmp.path().into(),
        annotation_dir: tmp.path().into(),
    };
    let err = serve(addr, state).await.unwrap_err();
    assert!(format!("{err:#}").contains("binding"), "{err:#}");

    let missing = AppState {
        image_dir: tmp.path().join("nope"),
        annotation_dir: tmp.path().into(),
    };
    assert!(serve("127.0.0.1:0".parse().unwrap(), missing).await.is_err());
}
