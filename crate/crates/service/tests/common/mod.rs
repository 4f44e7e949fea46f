#![allow(dead_code)]

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use std::thread::JoinHandle;

use gib_core::cohort::{generate_cohort, CohortSpec, PatientRecord};
use gib_core::forest::ForestParams;
use gib_core::guidelines::{ingest_guidelines, HashingEmbedder};
use gib_core::model::{RiskModel, TrainingConfig};
use gib_service::app::{app, AppState};
use gib_service::ServiceConfig;
use serde_json::Value;
use tempfile::TempDir;

pub const FIXTURE_N: usize = 1500;
pub const FIXTURE_SEED: u64 = 2024;

pub fn core_fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

pub fn fixture_patients() -> Vec<PatientRecord> {
    serde_json::from_str(&fs::read_to_string(core_fixture("patients.json")).unwrap()).unwrap()
}

pub fn fixture_spec() -> CohortSpec {
    CohortSpec::synthetic(FIXTURE_N, FIXTURE_SEED, 0.3)
}

/// Artifact, store and patient directory written once per test binary.
pub struct Workspace {
    _dir: TempDir,
    pub root: PathBuf,
    pub artifact: PathBuf,
    pub store: PathBuf,
    pub patients: PathBuf,
}

pub fn workspace() -> &'static Workspace {
    static WS: OnceLock<Workspace> = OnceLock::new();
    WS.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let spec = fixture_spec();
        let records = generate_cohort(&spec).unwrap();
        let config = TrainingConfig {
            forest: ForestParams {
                num_trees: 80,
                seed: 17,
                ..Default::default()
            },
            ..Default::default()
        };
        let model = RiskModel::train(&records, &spec.feature_catalog, &config).unwrap();
        let artifact = root.join("model.json");
        model.save(&artifact).unwrap();
        let doc = fs::read_to_string(core_fixture("ugib_guideline.md")).unwrap();
        let store = root.join("store.json");
        ingest_guidelines(&doc, &HashingEmbedder::default()).unwrap().save(&store).unwrap();
        let patients = root.join("patients");
        fs::create_dir_all(&patients).unwrap();
        fs::copy(core_fixture("patients.json"), patients.join("patients.json")).unwrap();
        Workspace {
            _dir: dir,
            root,
            artifact,
            store,
            patients,
        }
    })
}

pub fn offline_config(transcripts: Option<&Path>) -> ServiceConfig {
    let ws = workspace();
    let mut cfg = ServiceConfig::new(&ws.artifact, &ws.store);
    cfg.patients_dir = Some(ws.patients.clone());
    cfg.transcript_dir = transcripts.map(Path::to_path_buf);
    cfg
}

pub struct TestServer {
    pub base: String,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl TestServer {
    pub fn start(state: AppState) -> Self {
        Self::start_router(app(Arc::new(state)))
    }

    pub fn start_router(router: axum::Router) -> Self {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        listener.set_nonblocking(true).unwrap();
        let addr: SocketAddr = listener.local_addr().unwrap();
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).unwrap();
                axum::serve(listener, router)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await
                    .unwrap();
            });
        });
        TestServer {
            base: format!("http://{addr}"),
            shutdown: Some(tx),
            thread: Some(thread),
        }
    }

    pub fn stop(mut self) {
        self.halt();
    }

    fn halt(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn get(&self, path: &str) -> (u16, Value) {
        let (status, body) = self.get_raw(path);
        (status, serde_json::from_str(&body).unwrap_or(Value::Null))
    }

    pub fn get_raw(&self, path: &str) -> (u16, String) {
        let mut resp = client().get(format!("{}{path}", self.base)).call().unwrap();
        (resp.status().as_u16(), resp.body_mut().read_to_string().unwrap())
    }

    pub fn post(&self, path: &str, body: &Value) -> (u16, Value) {
        let (status, text) = self.post_raw(path, &body.to_string());
        (status, serde_json::from_str(&text).unwrap_or(Value::Null))
    }

    pub fn post_raw(&self, path: &str, body: &str) -> (u16, String) {
        let mut resp = client()
            .post(format!("{}{path}", self.base))
            .header("content-type", "application/json")
            .send(body)
            .unwrap();
        (resp.status().as_u16(), resp.body_mut().read_to_string().unwrap())
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        self.halt();
    }
}

pub fn client() -> ureq::Agent {
    ureq::Agent::config_builder().http_status_as_error(false).build().into()
}

pub fn offline_server() -> TestServer {
    TestServer::start(AppState::load(&offline_config(None), |_| None).unwrap())
}

pub fn open_session(server: &TestServer, patient_id: &str) -> String {
    let (status, body) = server.post("/sessions", &serde_json::json!({ "patient_id": patient_id }));
    assert_eq!(status, 201, "{body}");
    body["id"].as_str().unwrap().to_string()
}
