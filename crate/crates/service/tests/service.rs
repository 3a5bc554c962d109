use std::path::Path;

use privdash_service::api::AppState;
use privdash_service::client::{Client, ClientError};
use privdash_service::config::{FileConfig, ServiceConfig};
use privdash_service::persist::PersistError;
use serde_json::{json, Value};

fn config(state: &Path) -> ServiceConfig {
    let overrides = FileConfig { state_path: Some(state.to_path_buf()), ..Default::default() };
    ServiceConfig::resolve(FileConfig::default(), overrides)
}

/// Starts the service on an ephemeral port and returns its base URL.
fn spawn(state: AppState) -> String {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    listener.set_nonblocking(true).unwrap();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).unwrap();
            privdash_service::serve(listener, state).await.unwrap();
        });
    });
    format!("http://{addr}")
}

#[test]
fn settings_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.json");
    let cfg = config(&path);

    let engine = privdash_service::open_engine(&cfg).unwrap();
    let base = spawn(AppState::new(engine, Some(path.clone())));
    let client = Client::new(&base, None);
    client
        .put_json(
            "/api/settings/location",
            &json!({"global_default": {"mode": "blur", "grid_km": 25}, "exceptions": {"ads": {"mode": "off"}}}),
        )
        .unwrap();
    client.post_json("/api/rpp/passphrase", &json!({"new": "tango7"})).unwrap();
    assert!(path.exists());

    let reopened = privdash_service::open_engine(&cfg).unwrap();
    let base = spawn(AppState::new(reopened, Some(path)));
    let client = Client::new(&base, Some("tango7".into()));
    let loc: Value = serde_json::from_str(&client.get("/api/settings/location").unwrap()).unwrap();
    assert_eq!(loc["settings"]["global_default"], json!({"mode": "blur", "grid_km": 25.0}));
    assert_eq!(loc["settings"]["exceptions"]["ads"], json!({"mode": "off"}));
    let rpp: Value = serde_json::from_str(&client.get("/api/settings/rpp").unwrap()).unwrap();
    assert_eq!(rpp["passphrase_set"], json!(true));

    // Guarded operations now require the saved passphrase.
    let anon = Client::new(&base, None);
    match anon.post_json("/api/settings/pin", &json!({"pin": "1234"})) {
        Err(ClientError::Status { status, body }) => {
            assert_eq!(status, 401, "{body}");
            assert!(body.contains("\"code\""));
        }
        other => panic!("expected 401, got {other:?}"),
    }
}

#[test]
fn corrupt_settings_file_refuses_to_start() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.json");
    std::fs::write(&path, "{\n  \"location\": ,\n}").unwrap();
    let err = privdash_service::open_engine(&config(&path)).err().expect("corrupt file accepted");
    assert!(matches!(err, PersistError::Corrupt { line: 2, .. }), "{err:?}");
    let text = err.to_string();
    assert!(text.contains(&path.display().to_string()), "{text}");
    assert!(text.contains("byte offset"), "{text}");
    // The file is left for the owner to inspect.
    assert_eq!(std::fs::read_to_string(&path).unwrap(), "{\n  \"location\": ,\n}");
}

#[test]
fn missing_device_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(&dir.path().join("state.json"));
    cfg.device_config = Some(dir.path().join("nope.json"));
    let err = privdash_service::open_engine(&cfg).err().expect("missing device config accepted");
    assert!(err.to_string().contains("nope.json"), "{err}");
}

#[test]
fn client_round_trip_over_tcp() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(&dir.path().join("state.json"));
    let base = spawn(AppState::new(privdash_service::open_engine(&cfg).unwrap(), None));
    let client = Client::new(&base, None);

    let sms: Value = serde_json::from_str(
        &client.post_json("/api/device/sms", &json!({"from": "+491701234567", "body": "hi there"})).unwrap(),
    )
    .unwrap();
    assert!(sms["effects"].as_array().unwrap().is_empty());

    let q: Value = serde_json::from_str(&client.get("/api/location/query?app=maps").unwrap()).unwrap();
    assert!(q["lat"].is_number());

    let receipt: Value = serde_json::from_str(
        &client
            .post_json(
                "/api/backup",
                &json!({"stores": ["contacts"], "destination": {"kind": "default_server", "endpoint": "sim://default"}}),
            )
            .unwrap(),
    )
    .unwrap();
    let name = receipt["name"].as_str().unwrap();
    let archive = client.get(&format!("/blobs/default/{name}")).unwrap();
    assert!(archive.starts_with("privdash-backup 1\n"));

    match client.get("/api/stores/nonsense") {
        Err(ClientError::Status { status: 400, .. }) => {}
        other => panic!("expected 400, got {other:?}"),
    }
    let bad = Client::new("http://127.0.0.1:1", None);
    assert!(matches!(bad.get("/api/device"), Err(ClientError::Transport { .. })));
}

#[test]
fn bundled_sample_track_parses() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/data/sample-track.txt")).unwrap();
    let fixes = privdash_core::device::parse_track(&text).unwrap();
    assert_eq!(fixes.len(), 3);
}
