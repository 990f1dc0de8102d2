use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use petreid_cli::server::router;
use petreid_core::ingest::{BoundingBox, Detector, StubDetector};
use petreid_core::matchd::MatchService;
use petreid_core::model::{Backbone, BackboneConfig, HeadParams, Pooling, ToyVit};
use petreid_core::{ImageTensor, Margin, SiameseModel, SplitMix64};
use serde_json::Value;
use tower::ServiceExt;

const BOUNDARY: &str = "XpetreidX";

struct Blind;

impl Detector for Blind {
    fn detect(&self, _: &ImageTensor) -> petreid_core::Result<Vec<BoundingBox>> {
        Ok(vec![])
    }

    fn describe(&self) -> String {
        "blind".to_owned()
    }
}

fn service(dir: &std::path::Path, detector: Box<dyn Detector>) -> Arc<MatchService> {
    let vit = ToyVit::init(BackboneConfig {
        image_side: 16,
        patch_size: 8,
        depth: 1,
        width: 8,
        heads: 2,
        pooling: Pooling::MeanPool,
        seed: 4,
        ..Default::default()
    })
    .unwrap();
    let model = SiameseModel::new(Backbone::ToyVit(Box::new(vit)), HeadParams::init(8, 4, 1)).unwrap();
    Arc::new(MatchService::open(dir, model, detector, Margin::DEFAULT, "test.lpaw").unwrap())
}

fn png(seed: u64) -> Vec<u8> {
    let mut rng = SplitMix64::new(seed);
    let data = (0..24 * 24 * 3).map(|_| rng.below(256) as u8).collect();
    ImageTensor::new(24, 24, data).unwrap().encode_png().unwrap()
}

fn multipart(image: Option<&[u8]>, fields: &[(&str, &str)]) -> Vec<u8> {
    let mut body = Vec::new();
    for (name, value) in fields {
        body.extend(format!("--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"{name}\"\r\n\r\n{value}\r\n").as_bytes());
    }
    if let Some(img) = image {
        body.extend(
            format!("--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"image\"; filename=\"a.png\"\r\nContent-Type: image/png\r\n\r\n")
                .as_bytes(),
        );
        body.extend(img);
        body.extend(b"\r\n");
    }
    body.extend(format!("--{BOUNDARY}--\r\n").as_bytes());
    body
}

async fn send(app: &axum::Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn post(uri: &str, body: Vec<u8>) -> Request<Body> {
    Request::post(uri)
        .header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(body))
        .unwrap()
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

async fn register(app: &axum::Router, seed: u64, lat: &str, lon: &str, at: &str) -> (StatusCode, Value) {
    let body = multipart(Some(&png(seed)), &[("lat", lat), ("lon", lon), ("observed_at", at)]);
    let (s, b) = send(app, post("/api/sightings", body)).await;
    (s, json(&b))
}

#[tokio::test]
async fn register_match_list_image_health() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(service(dir.path(), Box::new(StubDetector)));

    let (s, b) = register(&app, 1, "52.0", "6.0", "2024-05-01T10:00:00Z").await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(b["sighting_id"], "s00000000");
    register(&app, 2, "52.5", "6.5", "2024-05-02T10:00:00Z").await;
    register(&app, 3, "10.0", "10.0", "2024-05-03T10:00:00+02:00").await;

    let (s, b) = send(&app, post("/api/match?top_k=2", multipart(Some(&png(2)), &[]))).await;
    assert_eq!(s, StatusCode::OK);
    let m = json(&b)["matches"].as_array().unwrap().clone();
    assert_eq!(m.len(), 2);
    assert_eq!(m[0]["sighting_id"], "s00000001");
    assert_eq!(m[0]["distance"], 0.0);
    assert_eq!(m[0]["similarity"], 1.0);

    let (_, b) = send(&app, post("/api/match", multipart(Some(&png(2)), &[]))).await;
    assert_eq!(json(&b)["matches"].as_array().unwrap().len(), 3);

    let (s, b) = send(&app, get("/api/sightings")).await;
    assert_eq!(s, StatusCode::OK);
    let ids: Vec<String> = json(&b)["sightings"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x["sighting_id"].as_str().unwrap().to_owned())
        .collect();
    assert_eq!(ids, ["s00000002", "s00000001", "s00000000"]);

    let (_, b) = send(&app, get("/api/sightings?min_lat=52&max_lat=52.5&min_lon=6&max_lon=6.5")).await;
    assert_eq!(json(&b)["sightings"].as_array().unwrap().len(), 2);

    let (s, b) = send(&app, get("/api/sightings/s00000000/image")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ImageTensor::decode(&b).unwrap(), ImageTensor::decode(&png(1)).unwrap());

    let (s, b) = send(&app, get("/api/health")).await;
    assert_eq!(s, StatusCode::OK);
    let h = json(&b);
    assert_eq!((h["status"].as_str(), h["model_checkpoint"].as_str(), h["latent_size"].as_u64()), (Some("ok"), Some("test.lpaw"), Some(4)));
}

#[tokio::test]
async fn error_statuses_and_bodies() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(service(dir.path(), Box::new(StubDetector)));

    let (s, b) = register(&app, 1, "95", "6.0", "2024-05-01T10:00:00Z").await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(b["error"], "validation");
    assert!(b["detail"].as_str().unwrap().contains("latitude"));

    let (s, _) = register(&app, 1, "north", "6.0", "2024-05-01T10:00:00Z").await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = register(&app, 1, "1", "6.0", "yesterday").await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let body = multipart(Some(b"not an image"), &[("lat", "1"), ("lon", "1"), ("observed_at", "2024-05-01T10:00:00Z")]);
    assert_eq!(send(&app, post("/api/sightings", body)).await.0, StatusCode::BAD_REQUEST);
    let body = multipart(None, &[("lat", "1"), ("lon", "1"), ("observed_at", "2024-05-01T10:00:00Z")]);
    assert_eq!(send(&app, post("/api/sightings", body)).await.0, StatusCode::BAD_REQUEST);

    assert_eq!(send(&app, post("/api/match?top_k=0", multipart(Some(&png(1)), &[]))).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(send(&app, get("/api/sightings?min_lat=1")).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(send(&app, get("/api/sightings?min_lat=5&max_lat=1&min_lon=0&max_lon=1")).await.0, StatusCode::BAD_REQUEST);

    let (s, b) = send(&app, get("/api/sightings/s12345678/image")).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(json(&b)["error"], "not_found");

    let (s, b) = send(&app, post("/api/match", multipart(Some(&png(1)), &[]))).await;
    assert_eq!(s, StatusCode::OK);
    assert!(json(&b)["matches"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn no_pet_is_422() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(service(dir.path(), Box::new(Blind)));
    let (s, b) = register(&app, 1, "1", "1", "2024-05-01T10:00:00Z").await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(b["error"], "no_pet_found");
    let (s, b) = send(&app, post("/api/match", multipart(Some(&png(1)), &[]))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(json(&b)["detail"].is_string());
}
