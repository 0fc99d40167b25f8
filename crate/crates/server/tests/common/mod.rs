#![allow(dead_code)]

use std::path::{Path, PathBuf};

use axum::body::Body;
use axum::http::{HeaderMap, Method, Request, StatusCode};
use axum::Router;
use replicator_core::backend::{Backend, BackendConfig};
use replicator_core::registry::{Dataset, Registry};
use replicator_server::{router, AppState, TemplateStore};
use serde_json::Value;
use sha2::{Digest, Sha256};
use tempfile::TempDir;
use tower::ServiceExt;

pub const REFERENCE_SHA256: &str = "2c4a2477671847a0344b8cd546a3c719d0cc4d0e4532b396e09b64287167c2f1";

pub const SLEEPER: &str = r#"{
  "schema": 1,
  "id": "sleeper",
  "title": "Sleeps",
  "image_ref": "process",
  "entry_command": ["sh", "-c", "sleep 30; echo done > out.txt"],
  "outputs": [{"pattern": "out.txt", "render_hint": "download"}],
  "limits": {"wall_seconds": 60, "cpu_seconds": 60, "memory_bytes": 1073741824}
}
"#;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub struct TestApp {
    pub state: AppState,
    pub app: Router,
    pub dir: TempDir,
}

pub struct Reply {
    pub status: StatusCode,
    pub headers: HeaderMap,
    pub bytes: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.bytes).unwrap_or_else(|e| panic!("not JSON ({e}): {}", String::from_utf8_lossy(&self.bytes)))
    }

    pub fn content_type(&self) -> &str {
        self.headers.get("content-type").and_then(|v| v.to_str().ok()).unwrap_or_default()
    }
}

impl TestApp {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut templates = TemplateStore::new();
        templates.insert(std::fs::read(fixtures().join("heat1d/heat1d.ct.json")).unwrap()).unwrap();
        let mut bc = BackendConfig::new(dir.path().join("jobs"));
        bc.engine = None;
        bc.workers = 2;
        let backend = Backend::new(bc).unwrap();
        let registry = Registry::open(dir.path().join("registry")).unwrap();
        let static_dir = dir.path().join("app");
        std::fs::create_dir_all(&static_dir).unwrap();
        std::fs::write(static_dir.join("index.html"), "<!doctype html><title>replicator</title>\n").unwrap();
        let mut state = AppState::new(templates, backend, registry).with_contract_checking();
        state.static_dir = Some(static_dir);
        Self { app: router(state.clone()), state, dir }
    }

    /// Like [`TestApp::new`] with one more template registered.
    pub fn with_template(extra: &str) -> Self {
        let mut t = Self::new();
        let mut templates = (*t.state.templates).clone();
        templates.insert(extra.as_bytes().to_vec()).unwrap();
        t.state.templates = std::sync::Arc::new(templates);
        t.app = router(t.state.clone());
        t
    }

    pub async fn call(&self, method: Method, uri: &str, body: Option<&Value>) -> Reply {
        let mut req = Request::builder().method(method).uri(uri);
        let body = match body {
            Some(v) => {
                req = req.header("content-type", "application/json");
                Body::from(serde_json::to_vec(v).unwrap())
            }
            None => Body::empty(),
        };
        let resp = self.app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
        let status = resp.status();
        let headers = resp.headers().clone();
        let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec();
        Reply { status, headers, bytes }
    }

    pub async fn get(&self, uri: &str) -> Reply {
        self.call(Method::GET, uri, None).await
    }

    pub async fn post(&self, uri: &str, body: &Value) -> Reply {
        self.call(Method::POST, uri, Some(body)).await
    }

    /// Imports and publishes the pilot dataset.
    pub fn publish_pilot(&self) -> Dataset {
        let d = self.state.registry.import_manifest(&fixtures().join("pilot/pilot.dataset.json")).unwrap();
        self.state.registry.publish(&d.pid).unwrap()
    }

    /// Polls until the job is terminal.
    pub async fn wait_terminal(&self, id: &str) -> Value {
        for _ in 0..60 {
            let r = self.get(&format!("/api/computations/{id}?wait=5000")).await;
            assert_eq!(r.status, StatusCode::OK);
            let job = r.json();
            if !matches!(job["state"].as_str(), Some("queued" | "running")) {
                return job;
            }
        }
        panic!("job {id} did not finish");
    }

    pub fn assert_contract(&self) {
        let checker = self.state.contract.as_ref().unwrap();
        assert!(checker.checked() > 0);
        let v = checker.violations();
        assert!(v.is_empty(), "contract violations: {v:#?}");
    }
}

pub fn enc(s: &str) -> String {
    replicator_server::encode_segment(s)
}
