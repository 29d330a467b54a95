#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use base64::Engine;
use http_body_util::BodyExt;
use liesensor::cnn::save_weights;
use liesensor::synth::{demo_face_network, demo_text_classifier};
use liesensor::vision::{
    crop_face, default_frontal_face, detect_largest_face, DetectParams, GrayImage,
};
use liesensor_service::{load_models, router, AppState, Limits, ServiceConfig};
use tower::ServiceExt;

pub fn core_fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

pub struct ModelFiles {
    pub bundle: PathBuf,
    pub weights: PathBuf,
}

/// Demo bundle and weights, built once per test binary.
pub fn model_files() -> &'static ModelFiles {
    static FILES: OnceLock<ModelFiles> = OnceLock::new();
    FILES.get_or_init(|| {
        let dir = Path::new(env!("CARGO_TARGET_TMPDIR"))
            .join(format!("liesensor-models-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let img = GrayImage::load_pgm(core_fixture("astronaut_face.pgm")).unwrap();
        let face =
            detect_largest_face(&img, &default_frontal_face(), &DetectParams::default()).unwrap();
        let files = ModelFiles {
            bundle: dir.join("text.lsb"),
            weights: dir.join("face.lswt"),
        };
        demo_text_classifier(1)
            .unwrap()
            .save(&files.bundle)
            .unwrap();
        save_weights(
            &demo_face_network(&crop_face(&img, &face).unwrap(), 1).unwrap(),
            &files.weights,
        )
        .unwrap();
        files
    })
}

pub fn config() -> ServiceConfig {
    let files = model_files();
    let text = format!(
        "bundle = {}\nweights = {}\nmax_image_bytes = 200000\n",
        files.bundle.display(),
        files.weights.display()
    );
    ServiceConfig::parse(&text, Path::new("/"), Vec::new()).unwrap()
}

pub fn loaded_app(config: &ServiceConfig) -> (Arc<AppState>, Router) {
    let state = AppState::new(Limits::from(config)).unwrap();
    assert!(state.install(load_models(config).unwrap()));
    let app = router(state.clone());
    (state, app)
}

pub fn b64_of(path: &Path) -> String {
    base64::engine::general_purpose::STANDARD.encode(std::fs::read(path).unwrap())
}

pub async fn send(app: &Router, req: Request<Body>) -> (StatusCode, serde_json::Value) {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        serde_json::Value::Null
    } else {
        serde_json::from_slice(&bytes)
            .unwrap_or_else(|_| serde_json::Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

pub fn post_json(body: &serde_json::Value) -> Request<Body> {
    Request::post("/api/v1/verify")
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

pub fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}
