mod common;

use axum::http::{Method, StatusCode};
use common::*;
use serde_json::{json, Value};

#[tokio::test(flavor = "multi_thread")]
async fn templates_are_listed_and_served_verbatim() {
    let t = TestApp::new();
    let r = t.get("/api/templates").await;
    assert_eq!(r.status, StatusCode::OK);
    let list = r.json();
    assert_eq!(list["templates"].as_array().unwrap().len(), 1);
    assert_eq!(list["templates"][0]["id"], "heat1d");

    let r = t.get("/api/templates/heat1d").await;
    assert_eq!(r.status, StatusCode::OK);
    assert!(r.content_type().starts_with("application/json"));
    assert_eq!(r.bytes, std::fs::read(fixtures().join("heat1d/heat1d.ct.json")).unwrap());

    let r = t.get("/api/templates/nope").await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    assert_eq!(r.json()["code"], "not_found");
    t.assert_contract();
}

#[tokio::test(flavor = "multi_thread")]
async fn default_run_produces_reference_solution() {
    let t = TestApp::new();
    let r = t.post("/api/computations", &json!({"template_id": "heat1d", "bindings": {}})).await;
    assert_eq!(r.status, StatusCode::ACCEPTED);
    let id = r.json()["job_id"].as_str().unwrap().to_owned();
    assert_eq!(r.headers["location"], format!("/api/computations/{id}").as_str());

    let job = t.wait_terminal(&id).await;
    assert_eq!(job["state"], "succeeded", "{job:#}");
    let artifact = job["outputs"].as_array().unwrap().iter().find(|o| o["path"] == "solution.csv").unwrap().clone();

    let r = t.get(&format!("/api/computations/{id}/files/solution.csv")).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.content_type(), "text/csv");
    assert_eq!(sha256(&r.bytes), artifact["checksum"].as_str().unwrap());
    assert_eq!(sha256(&r.bytes), REFERENCE_SHA256);
    assert_eq!(r.bytes.len() as u64, artifact["size_bytes"].as_u64().unwrap());

    let r = t.get(&format!("/api/computations/{id}/logs/stdout")).await;
    assert_eq!(r.status, StatusCode::OK);
    assert!(r.content_type().starts_with("text/plain"));
    assert_eq!(t.get(&format!("/api/computations/{id}/logs/other")).await.status, StatusCode::BAD_REQUEST);

    // Cancelling a finished job changes nothing.
    let r = t.call(Method::DELETE, &format!("/api/computations/{id}"), None).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["outcome"], "already_terminal");
    assert_eq!(t.get(&format!("/api/computations/{id}")).await.json()["state"], "succeeded");

    let list = t.get("/api/computations").await.json();
    assert_eq!(list["jobs"].as_array().unwrap().len(), 1);
    t.assert_contract();
}

#[tokio::test(flavor = "multi_thread")]
async fn out_of_range_binding_is_rejected_with_parameter_name() {
    let t = TestApp::new();
    let r = t.post("/api/computations", &json!({"template_id": "heat1d", "bindings": {"num_cells": 5000}})).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    let e = r.json();
    assert_eq!(e["code"], "validation_failed");
    let details = e["details"].as_array().unwrap();
    assert!(!details.is_empty());
    assert!(details.iter().any(|f| f.to_string().contains("num_cells")), "{e:#}");
    assert!(t.state.backend.list().is_empty());
    t.assert_contract();
}

#[tokio::test(flavor = "multi_thread")]
async fn malformed_submissions() {
    let t = TestApp::new();
    let r = t.post("/api/computations", &json!({"template_id": "nope"})).await;
    assert_eq!((r.status, r.json()["code"].clone()), (StatusCode::NOT_FOUND, json!("not_found")));
    let r = t.post("/api/computations", &json!({"bindings": {}})).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    let r = t.post("/api/computations", &json!({"template_id": "heat1d", "extra": 1})).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    let r = t.post("/api/computations", &json!({"template_id": "heat1d", "runner": "oci"})).await;
    assert_eq!((r.status, r.json()["code"].clone()), (StatusCode::SERVICE_UNAVAILABLE, json!("runner_unavailable")));
    let r = t.call(Method::POST, "/api/computations", None).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    t.assert_contract();
}

#[tokio::test(flavor = "multi_thread")]
async fn unsafe_file_paths_are_rejected() {
    let t = TestApp::new();
    let id = t.post("/api/computations", &json!({"template_id": "heat1d"})).await.json()["job_id"].as_str().unwrap().to_owned();
    t.wait_terminal(&id).await;
    for path in ["../jobs.json", "%2e%2e/x", "a/../../b", "a//b", "%2Fetc%2Fpasswd"] {
        let r = t.get(&format!("/api/computations/{id}/files/{path}")).await;
        assert_eq!(r.status, StatusCode::BAD_REQUEST, "{path}");
        assert_eq!(r.json()["code"], "invalid_path", "{path}");
    }
    let r = t.get(&format!("/api/computations/{id}/files/params.ini")).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND, "undeclared files are not served");
    let r = t.get("/api/computations/nope/files/solution.csv").await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    t.assert_contract();
}

#[tokio::test(flavor = "multi_thread")]
async fn running_job_files_conflict_and_cancel() {
    let t = TestApp::with_template(SLEEPER);
    let id = t.post("/api/computations", &json!({"template_id": "sleeper"})).await.json()["job_id"].as_str().unwrap().to_owned();
    let r = t.get(&format!("/api/computations/{id}/files/out.txt")).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    assert_eq!(r.json()["code"], "not_ready");

    let r = t.call(Method::DELETE, &format!("/api/computations/{id}"), None).await;
    assert_eq!(r.status, StatusCode::OK);
    assert!(matches!(r.json()["outcome"].as_str(), Some("dequeued" | "signalled")));
    let job = t.wait_terminal(&id).await;
    assert_eq!((job["state"].clone(), job["reason"].clone()), (json!("killed"), json!("cancelled")));
    t.assert_contract();
}

#[tokio::test(flavor = "multi_thread")]
async fn long_poll_returns_on_change() {
    let t = TestApp::with_template(SLEEPER);
    let id = t.post("/api/computations", &json!({"template_id": "sleeper"})).await.json()["job_id"].as_str().unwrap().to_owned();
    let first = t.get(&format!("/api/computations/{id}")).await.json();
    let rev = first["revision"].as_u64().unwrap();
    let start = std::time::Instant::now();
    let canceller = {
        let backend = t.state.backend.clone();
        let id = id.clone();
        std::thread::spawn(move || {
            std::thread::sleep(std::time::Duration::from_millis(300));
            backend.cancel(&id).unwrap();
        })
    };
    let later = t.get(&format!("/api/computations/{id}?wait=20000&revision={rev}")).await.json();
    assert!(later["revision"].as_u64().unwrap() > rev);
    assert!(start.elapsed() < std::time::Duration::from_secs(15));
    canceller.join().unwrap();
    t.wait_terminal(&id).await;
    let r = t.get(&format!("/api/computations/{id}?wait=abc")).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    t.assert_contract();
}

#[tokio::test(flavor = "multi_thread")]
async fn dataset_life_cycle() {
    let t = TestApp::new();
    let r = t.post("/api/datasets", &json!({"title": "Toy", "authors": ["A. Author"]})).await;
    assert_eq!(r.status, StatusCode::CREATED);
    let pid = r.json()["pid"].as_str().unwrap().to_owned();
    let p = enc(&pid);

    let r = t.post(&format!("/api/datasets/{p}/files"), &json!({"path": "src/main.c", "kind": "A1_source", "license": "", "content_text": "int main(){}\n"})).await;
    assert_eq!(r.status, StatusCode::CREATED);
    let r = t.post(&format!("/api/datasets/{p}/files"), &json!({"path": "data.bin", "kind": "A4_data", "license": "CC0-1.0", "content_base64": "AAEC"})).await;
    assert_eq!(r.status, StatusCode::CREATED);

    let review = t.get(&format!("/api/datasets/{p}/review")).await.json();
    assert_eq!(review["publishable"], false);
    let r = t.post(&format!("/api/datasets/{p}/publish"), &json!(null)).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    let e = r.json();
    assert_eq!(e["code"], "review_failed");
    assert!(e["details"].as_array().unwrap().iter().any(|f| f["rule"] == "missing-license"));

    // Fix the license, add a link and publish.
    let r = t.post(&format!("/api/datasets/{p}/files"), &json!({"path": "src/main.c", "kind": "A1_source", "license": "MIT", "content_text": "int main(){}\n"})).await;
    assert_eq!(r.status, StatusCode::CREATED);
    let r = t.post(&format!("/api/datasets/{p}/links"), &json!({"file": "data.bin", "relation": "is_derived_from", "target": "src/main.c"})).await;
    assert_eq!(r.status, StatusCode::OK);
    let r = t.call(Method::PATCH, &format!("/api/datasets/{p}"), Some(&json!({"description": "A toy.", "keywords": ["toy"]}))).await;
    assert_eq!(r.status, StatusCode::OK);
    let r = t.post(&format!("/api/datasets/{p}/publish"), &json!(null)).await;
    assert_eq!(r.status, StatusCode::OK, "{}", String::from_utf8_lossy(&r.bytes));
    let published = r.json();
    assert_eq!(published["state"], "published");
    assert!(published["files"].as_array().unwrap().iter().all(|f| f["pid"].is_string()));

    let r = t.post(&format!("/api/datasets/{p}/publish"), &json!(null)).await;
    assert_eq!((r.status, r.json()["code"].clone()), (StatusCode::CONFLICT, json!("frozen_dataset")));

    let r = t.get(&format!("/api/datasets/{p}/files/data.bin")).await;
    assert_eq!(r.bytes, vec![0, 1, 2]);
    let r = t.get(&format!("/api/datasets/{p}/files/nope.txt")).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);

    // Editing a published dataset opens version 2.
    let r = t.call(Method::DELETE, &format!("/api/datasets/{p}/files/data.bin"), None).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["version"], 2);
    let versions = t.get(&format!("/api/datasets/{p}/versions")).await.json();
    assert_eq!(versions["versions"].as_array().unwrap().len(), 2);
    let v1 = t.get(&format!("/api/datasets/{p}?version=1")).await.json();
    assert_eq!(v1["files"].as_array().unwrap().len(), 2);

    let file_pid = published["files"][1]["pid"].as_str().unwrap().to_owned();
    let resolved = t.get(&format!("/api/pids/{}", enc(&file_pid))).await.json();
    assert_eq!(resolved["kind"], "file");
    let content = t.get(resolved["content_url"].as_str().unwrap()).await;
    assert_eq!(content.status, StatusCode::OK);
    assert_eq!(t.get(&format!("/api/pids/{}", enc(&pid))).await.json()["kind"], "dataset");
    assert_eq!(t.get("/api/pids/local:missing").await.json()["code"], "unresolvable");
    assert_eq!(t.get("/api/pids/ftp:x").await.json()["code"], "unknown_scheme");

    let dv = t.get(&format!("/api/datasets/{p}/dataverse?version=1")).await.json();
    assert_eq!(dv["persistentId"], pid.as_str());
    assert_eq!(t.get("/api/datasets").await.json()["datasets"].as_array().unwrap().len(), 1);
    t.assert_contract();
}

#[tokio::test(flavor = "multi_thread")]
async fn pids_with_slashes_round_trip() {
    let t = TestApp::new();
    let pid = "doi:10.1234/replicator.test";
    let r = t.post("/api/datasets", &json!({"pid": pid, "title": "DOI dataset"})).await;
    assert_eq!(r.status, StatusCode::CREATED);
    let r = t.get(&format!("/api/datasets/{}", enc(pid))).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["pid"], pid);
    let r = t.post("/api/datasets", &json!({"pid": pid, "title": "again"})).await;
    assert_eq!((r.status, r.json()["code"].clone()), (StatusCode::CONFLICT, json!("duplicate_pid")));
    t.assert_contract();
}

#[tokio::test(flavor = "multi_thread")]
async fn pilot_is_verifiable_over_the_api() {
    let t = TestApp::new();
    let d = t.publish_pilot();
    let r = t.get(&format!("/api/datasets/{}/ladder", enc(&d.pid))).await;
    assert_eq!(r.status, StatusCode::OK);
    let ladder = r.json();
    assert_eq!(ladder["rung"], "Verifiable", "{ladder:#}");
    assert_eq!(ladder["predicates"].as_array().unwrap().len(), 8);

    let r = t.post(&format!("/api/datasets/{}/verify", enc(&d.pid)), &json!(null)).await;
    assert_eq!(r.status, StatusCode::OK);
    let report = r.json();
    assert_eq!(report["passed"], true, "{report:#}");
    assert_eq!(report["outcomes"][0]["checks"][0]["actual"], REFERENCE_SHA256);
    t.assert_contract();
}

#[tokio::test(flavor = "multi_thread")]
async fn crosswalk_matches_golden_block() {
    let t = TestApp::new();
    let doc = std::fs::read_to_string(fixtures().join("codemeta/codemeta.json")).unwrap();
    let golden: Value = serde_json::from_slice(&std::fs::read(fixtures().join("codemeta/software.block.json")).unwrap()).unwrap();

    let r = t.post("/api/metadata/crosswalk", &json!({"document": doc, "format": "json", "mapping_name": "codemeta"})).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["block"], golden);
    // Defaults pick the CodeMeta mapping for JSON.
    assert_eq!(t.post("/api/metadata/crosswalk", &json!({"document": doc})).await.json()["block"], golden);

    let xml = std::fs::read_to_string(fixtures().join("engmeta/engmeta.xml")).unwrap();
    let eng: Value = serde_json::from_slice(&std::fs::read(fixtures().join("engmeta/engineering.block.json")).unwrap()).unwrap();
    let r = t.post("/api/metadata/crosswalk", &json!({"document": xml, "format": "xml"})).await;
    assert_eq!(r.json()["block"], eng);

    let mut missing: Value = serde_json::from_str(&doc).unwrap();
    missing.as_object_mut().unwrap().remove("name");
    let r = t.post("/api/metadata/crosswalk", &json!({"document": missing.to_string()})).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    let e = r.json();
    assert_eq!(e["code"], "missing_required");
    assert!(e["message"].as_str().unwrap().contains("title"));

    let r = t.post("/api/metadata/crosswalk", &json!({"document": "{nope", "format": "json"})).await;
    assert_eq!(r.json()["code"], "parse_error");
    let bad_map = json!({"source_scheme": "x", "target_block": "b", "rules": [{"source_path": "a[", "target_field": "f", "coercion": "text"}]});
    let r = t.post("/api/metadata/crosswalk", &json!({"document": "{}", "mapping": bad_map})).await;
    assert_eq!(r.json()["code"], "invalid_mapping");

    // Applying to a dataset stores the block.
    let pid = t.post("/api/datasets", &json!({"title": "placeholder"})).await.json()["pid"].as_str().unwrap().to_owned();
    let r = t.post("/api/metadata/crosswalk", &json!({"document": doc, "dataset": pid})).await;
    assert_eq!(r.status, StatusCode::OK);
    let d = &r.json()["dataset"];
    assert_eq!(d["metadata_blocks"]["software"], golden);
    assert_eq!(d["title"], golden["fields"]["title"]["value"]);
    t.assert_contract();
}

#[tokio::test(flavor = "multi_thread")]
async fn explore_opens_session_on_pilot_template() {
    let t = TestApp::new();
    let d = t.publish_pilot();
    let a8 = d.files.iter().find(|f| f.path == "heat1d.ct.json").unwrap();
    let a8_pid = a8.pid.clone().unwrap();
    let r = t.get(&format!("/explore?dataset={}&template={}", enc(&d.pid), enc(&a8_pid))).await;
    assert_eq!(r.status, StatusCode::OK, "{}", String::from_utf8_lossy(&r.bytes));
    let s = r.json();
    assert_eq!(s["template_pid"], a8_pid.as_str());
    assert_eq!(s["template_id"], "heat1d");
    let image = d.files.iter().find(|f| f.path == "container/heat1d-image.tar.gz").unwrap();
    assert_eq!(s["image_pid"], image.pid.clone().unwrap().as_str());
    let token = s["token"].as_str().unwrap().to_owned();
    assert!(s["app_url"].as_str().unwrap().ends_with(&token));

    // The same request yields the same token.
    let again = t.get(&format!("/explore?dataset={}", enc(&d.pid))).await.json();
    assert_eq!(again["token"], token.as_str());

    let session = t.get(s["session_url"].as_str().unwrap()).await;
    assert_eq!(session.status, StatusCode::OK);
    let a8_bytes = std::fs::read(fixtures().join("pilot/heat1d.ct.json")).unwrap();
    assert_eq!(session.json()["template"], serde_json::from_slice::<Value>(&a8_bytes).unwrap());

    // Run through the session with default bindings.
    let r = t.post("/api/computations", &json!({"session": token})).await;
    assert_eq!(r.status, StatusCode::ACCEPTED);
    let job = t.wait_terminal(r.json()["job_id"].as_str().unwrap()).await;
    let out = job["outputs"].as_array().unwrap().iter().find(|o| o["path"] == "solution.csv").unwrap().clone();
    assert_eq!(out["checksum"], REFERENCE_SHA256);
    t.assert_contract();
}

#[tokio::test(flavor = "multi_thread")]
async fn explore_errors() {
    let t = TestApp::new();
    let d = t.publish_pilot();
    let p = enc(&d.pid);
    for bad in ["local:nope", "doi:10.9999/missing", "garbage"] {
        let r = t.get(&format!("/explore?dataset={}", enc(bad))).await;
        assert_eq!(r.status, StatusCode::NOT_FOUND, "{bad}");
        assert_eq!(r.json()["code"], "unresolvable");
    }
    let r = t.get(&format!("/explore?dataset={p}&template=local:nope")).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    let r = t.get(&format!("/explore?dataset={p}&template=src%2Fheat.awk")).await;
    assert_eq!((r.status, r.json()["code"].clone()), (StatusCode::UNPROCESSABLE_ENTITY, json!("invalid_template")));
    assert_eq!(t.get("/explore").await.status, StatusCode::BAD_REQUEST);
    assert_eq!(t.get("/api/sessions/not-a-token").await.status, StatusCode::BAD_REQUEST);

    // No template file at all.
    let pid = t.post("/api/datasets", &json!({"title": "No template"})).await.json()["pid"].as_str().unwrap().to_owned();
    t.post(&format!("/api/datasets/{}/files", enc(&pid)), &json!({"path": "a.txt", "kind": "A4_data", "license": "CC0-1.0", "content_text": "x"})).await;
    let r = t.get(&format!("/explore?dataset={}", enc(&pid))).await;
    assert_eq!((r.status, r.json()["code"].clone()), (StatusCode::UNPROCESSABLE_ENTITY, json!("invalid_template")));

    // A broken template file.
    t.post(&format!("/api/datasets/{}/files", enc(&pid)), &json!({"path": "t.ct.json", "kind": "A8_webapp_template", "license": "MIT", "content_text": "{\"schema\": 1}"})).await;
    let r = t.get(&format!("/explore?dataset={}", enc(&pid))).await;
    let e = r.json();
    assert_eq!((r.status, e["code"].clone()), (StatusCode::UNPROCESSABLE_ENTITY, json!("invalid_template")));
    assert!(!e["details"].as_array().unwrap().is_empty());
    t.assert_contract();
}

#[tokio::test(flavor = "multi_thread")]
async fn unknown_routes_and_methods_answer_with_api_errors() {
    let t = TestApp::new();
    let r = t.get("/api/nothing").await;
    assert_eq!((r.status, r.json()["code"].clone()), (StatusCode::NOT_FOUND, json!("not_found")));
    let r = t.call(Method::PUT, "/api/templates", None).await;
    assert_eq!((r.status, r.json()["code"].clone()), (StatusCode::METHOD_NOT_ALLOWED, json!("method_not_allowed")));
    let r = t.get("/app").await;
    assert_eq!(r.status, StatusCode::OK);
    assert!(r.content_type().starts_with("text/html"));
    assert_eq!(t.get("/app/missing.js").await.status, StatusCode::NOT_FOUND);
    t.assert_contract();
}

#[test]
fn published_openapi_document_is_current() {
    let path = fixtures().join("../docs/openapi.json");
    let generated = replicator_server::openapi_document();
    if std::env::var_os("UPDATE_OPENAPI").is_some() {
        std::fs::write(&path, &generated).unwrap();
    }
    let stored = std::fs::read_to_string(&path).unwrap_or_default();
    assert!(stored == generated, "docs/openapi.json is stale; run `replicator openapi > docs/openapi.json`");
}
