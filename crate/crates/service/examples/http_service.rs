//! Drives the HTTP API in-process: health before and after the models are
//! installed, two verify calls with a base64 PGM frame, then the session
//! history. Demo models are trained on the spot.
//!
//! ```text
//! cargo run --release -p liesensor-service --example http_service
//! ```
//!
//! For a real server, write a config file and run
//! `liesensor serve --config liesensor.conf`.

use std::path::Path;
use std::time::Duration;

use axum::body::Body;
use axum::http::Request;
use axum::Router;
use base64::Engine;
use http_body_util::BodyExt;
use liesensor::synth::{demo_face_network, demo_text_classifier};
use liesensor::verifier::LieSensor;
use liesensor::vision::{crop_face, default_frontal_face, detect_largest_face, DetectParams, GrayImage};
use liesensor_service::{router, AppState, Limits, Models};
use serde_json::json;
use tower::ServiceExt;

async fn call(app: &Router, req: Request<Body>) -> String {
    let res = app.clone().oneshot(req).await.expect("router is infallible");
    let status = res.status();
    let body = res.into_body().collect().await.expect("body").to_bytes();
    format!("{status} {}", String::from_utf8_lossy(&body))
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/astronaut_face.pgm");
    let state = AppState::new(Limits {
        max_image_bytes: 1 << 20,
        request_timeout: Duration::from_secs(5),
        history_log: None,
    })?;
    let app = router(state.clone());
    let health = || Request::get("/api/v1/health").body(Body::empty()).unwrap();
    println!("health before install: {}", call(&app, health()).await);

    let image = GrayImage::load_pgm(&fixture)?;
    let cascade = default_frontal_face();
    let detect = DetectParams::default();
    let face = detect_largest_face(&image, &cascade, &detect).ok_or("fixture has no face")?;
    let text_model = demo_text_classifier(1)?;
    let version = text_model.version.clone();
    let sensor = LieSensor {
        text_model,
        face_network: demo_face_network(&crop_face(&image, &face)?, 1)?,
        cascade,
        detect,
    };
    state.install(Models::new(sensor, version));
    println!("health after install: {}", call(&app, health()).await);

    let frame = base64::engine::general_purpose::STANDARD.encode(std::fs::read(&fixture)?);
    for text in ["so happy and glad today", "so sad, i miss everyone and cry"] {
        let body = json!({ "session_id": "demo", "text": text, "image_pgm_b64": frame });
        let req = Request::post("/api/v1/verify")
            .header("content-type", "application/json")
            .body(Body::from(body.to_string()))?;
        println!("verify {text:?}: {}", call(&app, req).await);
    }
    let req = Request::get("/api/v1/sessions/demo/history").body(Body::empty())?;
    println!("history: {}", call(&app, req).await);
    Ok(())
}
