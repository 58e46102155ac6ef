use std::io::Cursor;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use edgeclass_core::data::{synth_image, SynthClass};
use edgeclass_core::engine::image_to_tensor;
use edgeclass_core::fixture::{demo_classifier, INPUT_SIZE};
use edgeclass_core::quant::{build_variants, Method};
use edgeclass_core::{predict, save_bundle, ModelBundle};
use edgeclass_gateway::{Registry, ServeArgs, Server};
use reqwest::multipart::{Form, Part};
use reqwest::StatusCode;
use serde_json::Value;

struct Models {
    _tmp: tempfile::TempDir,
    dir: PathBuf,
    bundles: Vec<ModelBundle>,
}

fn models() -> &'static Models {
    static MODELS: OnceLock<Models> = OnceLock::new();
    MODELS.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        let (original, m) = demo_classifier(&tmp.path().join("data"), 60, 3).unwrap();
        let calib: Vec<_> = (0..32)
            .map(|i| image_to_tensor(&m.load_image(i * 3, &Default::default()).unwrap(), &original.metadata.preprocess))
            .collect();
        let set = build_variants(&original, &calib, Method::MinMax, &[] as &[&str]).unwrap();
        let dir = tmp.path().join("models");
        let bundles = vec![original, set.fp32opt, set.fp16, set.int8];
        for b in &bundles {
            save_bundle(b, dir.join(format!("demo-{}", b.variant().id()))).unwrap();
        }
        Models { _tmp: tmp, dir, bundles }
    })
}

fn args(models_dir: &Path) -> ServeArgs {
    ServeArgs {
        host: "127.0.0.1".into(),
        port: 0,
        models_dir: models_dir.to_path_buf(),
        max_concurrent: 2,
        static_dir: None,
        audit_log: None,
    }
}

async fn start(args: ServeArgs) -> SocketAddr {
    let server = Server::bind(&args).await.unwrap();
    let addr = server.local_addr();
    tokio::spawn(server.run());
    addr
}

fn png(class: SynthClass, seed: u64) -> Vec<u8> {
    let mut buf = Vec::new();
    synth_image(class, seed, INPUT_SIZE as u32)
        .write_to(&mut Cursor::new(&mut buf), image::ImageFormat::Png)
        .unwrap();
    buf
}

fn form(image: Option<Vec<u8>>, model: Option<&str>) -> Form {
    let mut f = Form::new();
    if let Some(bytes) = image {
        f = f.part("image", Part::bytes(bytes).file_name("upload.png").mime_str("image/png").unwrap());
    }
    if let Some(m) = model {
        f = f.text("model", m.to_string());
    }
    f
}

async fn post(addr: SocketAddr, form: Form) -> (StatusCode, Value) {
    let resp = reqwest::Client::new()
        .post(format!("http://{addr}/api/predict"))
        .multipart(form)
        .send()
        .await
        .unwrap();
    let status = resp.status();
    (status, resp.json().await.unwrap())
}

fn error_code(body: &Value) -> &str {
    body["error"]["code"].as_str().unwrap()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_predictions_match_direct_inference() {
    let m = models();
    let addr = start(args(&m.dir)).await;
    let ids = ["original", "fp32opt", "fp16", "int8"];
    let mut tasks = Vec::new();
    for i in 0..8u64 {
        let class = if i % 2 == 0 { SynthClass::Monkeypox } else { SynthClass::Others };
        let bytes = png(class, 500 + i);
        let id = ids[i as usize % 4];
        let bundle = m.bundles.iter().find(|b| b.variant().id() == id).unwrap();
        let want = predict(bundle, &bytes).unwrap();
        tasks.push(tokio::spawn(async move {
            let (status, body) = post(addr, form(Some(bytes), Some(id))).await;
            (status, body, want, id)
        }));
    }
    for t in tasks {
        let (status, body, want, id) = t.await.unwrap();
        assert_eq!(status, StatusCode::OK, "{body}");
        assert_eq!(body["label"], want.label);
        assert_eq!(body["model"], id);
        let conf = body["confidence"].as_f64().unwrap() as f32;
        assert_eq!(conf, want.confidence);
        assert!((0.5..=1.0).contains(&conf));
        assert!(body["latency_ms"].as_f64().unwrap() >= 0.0);
        assert!(body.get("image_echo").is_none());
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn predictions_are_deterministic_and_echo_on_request() {
    let m = models();
    let addr = start(args(&m.dir)).await;
    let bytes = png(SynthClass::Monkeypox, 77);
    let (_, a) = post(addr, form(Some(bytes.clone()), Some("int8"))).await;
    let (_, b) = post(addr, form(Some(bytes.clone()), Some("int8"))).await;
    assert_eq!((&a["label"], &a["confidence"]), (&b["label"], &b["confidence"]));

    let (status, c) = post(addr, form(Some(bytes), Some("int8")).text("echo", "true")).await;
    assert_eq!(status, StatusCode::OK);
    assert!(c["image_echo"].as_str().unwrap().starts_with("data:image/png;base64,"));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn health_and_model_listing() {
    let m = models();
    let addr = start(args(&m.dir)).await;
    let health: Value = reqwest::get(format!("http://{addr}/api/health")).await.unwrap().json().await.unwrap();
    assert_eq!(health["variants"], 4);
    assert_eq!(health["service"], "edgeclass-gateway");

    let list: Vec<Value> = reqwest::get(format!("http://{addr}/api/models")).await.unwrap().json().await.unwrap();
    let ids: Vec<_> = list.iter().map(|e| e["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["original", "fp32opt", "fp16", "int8"]);
    for (entry, bundle) in list.iter().zip(&m.bundles) {
        let size = bundle.size();
        assert_eq!(entry["size_bytes"], size.container_bytes);
        assert_eq!(entry["payload_bytes"], size.payload_bytes);
        assert_eq!(entry["classes"], serde_json::json!(["Monkeypox", "Others"]));
        assert_eq!(entry["precision"], bundle.variant().tag());
    }
    let fp32 = list[1]["payload_bytes"].as_f64().unwrap();
    assert_eq!(list[2]["payload_bytes"].as_f64().unwrap() / fp32, 0.5);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn error_codes() {
    let m = models();
    let addr = start(args(&m.dir)).await;
    let good = png(SynthClass::Others, 1);

    let (s, b) = post(addr, form(Some(good.clone()), Some("int4"))).await;
    assert_eq!((s, error_code(&b)), (StatusCode::NOT_FOUND, "unknown-model"));

    let (s, b) = post(addr, form(None, Some("int8"))).await;
    assert_eq!((s, error_code(&b)), (StatusCode::UNPROCESSABLE_ENTITY, "missing-field"));
    let (s, b) = post(addr, form(Some(good), None)).await;
    assert_eq!((s, error_code(&b)), (StatusCode::UNPROCESSABLE_ENTITY, "missing-field"));

    let (s, b) = post(addr, form(Some(b"definitely not an image".to_vec()), Some("fp16"))).await;
    assert_eq!((s, error_code(&b)), (StatusCode::BAD_REQUEST, "undecodable-image"));

    let (s, b) = post(addr, form(Some(vec![0u8; 10 * 1024 * 1024 + 1]), Some("int8"))).await;
    assert_eq!((s, error_code(&b)), (StatusCode::PAYLOAD_TOO_LARGE, "payload-too-large"));

    let resp = reqwest::Client::new()
        .post(format!("http://{addr}/api/predict"))
        .header("content-type", "application/json")
        .body("{}")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
    assert_eq!(error_code(&resp.json().await.unwrap()), "invalid-multipart");

    let resp = reqwest::get(format!("http://{addr}/api/nope")).await.unwrap();
    assert_eq!(resp.status(), StatusCode::NOT_FOUND);
    assert_eq!(error_code(&resp.json().await.unwrap()), "not-found");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn static_assets_and_spa_fallback() {
    let m = models();
    let web = tempfile::tempdir().unwrap();
    std::fs::write(web.path().join("index.html"), "<html>ui</html>").unwrap();
    std::fs::write(web.path().join("app.js"), "console.log(1)").unwrap();
    let addr = start(ServeArgs {
        static_dir: Some(web.path().to_path_buf()),
        ..args(&m.dir)
    })
    .await;
    let text = |p: &'static str| async move { reqwest::get(format!("http://{addr}{p}")).await.unwrap().text().await.unwrap() };
    assert_eq!(text("/").await, "<html>ui</html>");
    assert_eq!(text("/app.js").await, "console.log(1)");
    assert_eq!(text("/results/42").await, "<html>ui</html>");
    let health = reqwest::get(format!("http://{addr}/api/health")).await.unwrap();
    assert_eq!(health.status(), StatusCode::OK);

    let bare = start(args(&m.dir)).await;
    let page = reqwest::get(format!("http://{bare}/")).await.unwrap();
    assert_eq!(page.status(), StatusCode::OK);
    assert!(page.text().await.unwrap().contains("/api"));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn audit_log_records_hashes_not_images() {
    let m = models();
    let log = tempfile::NamedTempFile::new().unwrap();
    let addr = start(ServeArgs {
        audit_log: Some(log.path().to_path_buf()),
        ..args(&m.dir)
    })
    .await;
    let bytes = png(SynthClass::Monkeypox, 9);
    let (_, body) = post(addr, form(Some(bytes.clone()), Some("fp16"))).await;
    let text = std::fs::read_to_string(log.path()).unwrap();
    let fields: Vec<&str> = text.trim_end().split('\t').collect();
    assert_eq!(fields.len(), 5);
    assert_eq!(fields[1].len(), 64);
    assert_eq!(fields[2], "fp16");
    assert_eq!(fields[3], body["label"]);
    assert!(text.len() < 200);
}

#[tokio::test]
async fn startup_refuses_missing_or_empty_models_dir() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(Server::bind(&args(&tmp.path().join("missing"))).await.is_err());
    assert!(Server::bind(&args(tmp.path())).await.is_err());
    assert!(Registry::load(tmp.path()).is_err());
}
