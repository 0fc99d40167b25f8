//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::collections::{BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use common::*;
use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, TestRunner};
use replicator_core::backend::{Backend, BackendConfig, OciRunner};
use replicator_core::registry::{
    classify_ladder, ArtifactFile, ArtifactKind, CrossLink, Dataset, LadderPolicy, LadderRung, Registry, Relation,
    Verification,
};
use replicator_core::sha256_hex;
use replicator_core::substitute::{render_computation, scan_tokens, substitute, BindingSet, BindingValue};
use replicator_core::template::parse_template;
use replicator_server::contract::ENDPOINTS;
use replicator_server::{router, AppState, TemplateStore};
use serde_json::{json, Value};
use tower::ServiceExt;

type Criterion = (&'static str, fn() -> String);

const CRITERIA: [Criterion; 8] = [
    ("reproduction fixture", reproduction),
    ("substitution suite", substitution),
    ("capture and reconstruction", capture),
    ("recipe lints", recipe_lints),
    ("sandbox limits", sandbox_limits),
    ("sustainability ladder", ladder),
    ("metadata crosswalk", crosswalk),
    ("api contract", api_contract),
];

fn main() {
    let mut failed = 0;
    for (i, (name, check)) in CRITERIA.iter().enumerate() {
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check));
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS [{}] {name}: {detail} ({secs:.1}s)", i + 1),
            Err(e) => {
                failed += 1;
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("FAIL [{}] {name}: {} ({secs:.1}s)", i + 1, msg.lines().next().unwrap_or(""));
            }
        }
    }
    println!("{} of {} criteria passed", CRITERIA.len() - failed, CRITERIA.len());
    let optional_failed = match catch_unwind(container_reproduction) {
        Ok(Some(detail)) => {
            println!("PASS [optional] container reproduction: {detail}");
            false
        }
        Ok(None) => {
            println!("SKIP [optional] container reproduction: no container engine found");
            false
        }
        Err(_) => {
            println!("FAIL [optional] container reproduction");
            true
        }
    };
    if failed > 0 || optional_failed {
        std::process::exit(1);
    }
}

fn ok(o: &Output, what: &str) {
    assert_eq!(o.code, 0, "{what} exited {}: {}{}", o.code, o.stdout, o.stderr);
}

fn json_of(text: &str) -> Value {
    serde_json::from_str(text).unwrap_or_else(|e| panic!("not JSON ({e}): {text}"))
}

// ---- 1

fn reproduction() -> String {
    let dir = tempfile::tempdir().unwrap();
    let mut slowest = Duration::ZERO;
    for i in 0..5 {
        let out = dir.path().join(format!("out{i}"));
        let started = Instant::now();
        let o = bin(
            dir.path(),
            &["--work-root", "jobs", "run", heat_template().to_str().unwrap(), "--runner", "process", "--out", out.to_str().unwrap()],
        );
        let took = started.elapsed();
        ok(&o, "run");
        assert!(took < Duration::from_secs(10), "run {i} took {took:?}");
        slowest = slowest.max(took);
        let sum = sha256(&std::fs::read(out.join("solution.csv")).unwrap());
        assert_eq!(sum, REFERENCE_SHA256, "run {i}");
    }
    format!("5 runs byte-identical to the reference, slowest {:.2}s", slowest.as_secs_f64())
}

// ---- 2

fn filler() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 ,.;:=\n\t{}-]{0,20}".prop_filter("no token", |s| scan_tokens(s).is_empty())
}

fn binding_value() -> impl Strategy<Value = BindingValue> {
    prop_oneof![
        (-1.0e6f64..1.0e6).prop_map(BindingValue::Number),
        (-500i64..500).prop_map(|i| BindingValue::Number(i as f64)),
        "[a-zA-Z0-9 ._/-]{0,10}".prop_map(BindingValue::Text),
    ]
}

/// Template text, bound names, and the expected output computed by
/// concatenation.
fn case() -> impl Strategy<Value = (String, BindingSet, String)> {
    (
        proptest::collection::vec("[a-z_][a-z0-9_]{0,5}", 1..5),
        proptest::collection::vec(binding_value(), 5),
        proptest::collection::vec((filler(), 0usize..5, "[ ]{0,2}", "[ ]{0,2}"), 0..8),
        filler(),
    )
        .prop_map(|(names, values, pieces, tail)| {
            let mut b = BindingSet::new();
            for (n, v) in names.iter().zip(&values) {
                b.insert(n.clone(), v.clone());
            }
            let (mut text, mut expected) = (String::new(), String::new());
            for (fill, k, l, r) in pieces {
                let name = &names[k % names.len()];
                let fill = if fill.ends_with('{') { format!("{fill} ") } else { fill };
                text.push_str(&format!("{fill}{{{{{l}{name}{r}}}}}"));
                expected.push_str(&fill);
                expected.push_str(&b.get(name).unwrap().render().unwrap());
            }
            let tail = if tail.starts_with('}') { format!(" {tail}") } else { tail };
            text.push_str(&tail);
            expected.push_str(&tail);
            (text, b, expected)
        })
}

fn substitution() -> String {
    const CASES: u32 = 1000;
    let mut runner = TestRunner::new(ProptestConfig { cases: CASES, failure_persistence: None, ..ProptestConfig::default() });
    runner
        .run(&case(), |(text, b, expected)| {
            let out = substitute(&text, &b).unwrap();
            // Locality: untouched text survives, each token becomes its value.
            prop_assert_eq!(&out, &expected);
            // Closure: no bound token is left.
            prop_assert!(scan_tokens(&out).iter().all(|t| b.get(&t.name).is_none()), "{}", out);
            // Determinism.
            prop_assert_eq!(substitute(&text, &b).unwrap(), out);
            Ok(())
        })
        .unwrap_or_else(|e| panic!("{e}"));

    let b = BindingSet::new().with("num_cells", BindingValue::Number(100.0));
    assert_eq!(substitute("num_cells = {{ num_cells }}", &b).unwrap(), "num_cells = 100");
    let t = parse_template(&std::fs::read_to_string(heat_template()).unwrap()).unwrap();
    let m = render_computation(&t, &b).unwrap();
    let params = m.files.iter().find(|f| f.path == "params.ini").unwrap();
    assert!(params.content.contains("\nnum_cells = 100\n"), "{}", params.content);
    format!("{CASES} random cases for locality, closure and determinism; `{{{{ num_cells }}}}` -> `100`")
}

// ---- 3

fn capture() -> String {
    let tmp = tempfile::tempdir().unwrap();
    let started = Instant::now();
    let ws = three_repo_workspace(tmp.path());
    let plan = tmp.path().join("plan.json");
    let script = tmp.path().join("install.sh");
    ok(&bin(tmp.path(), &["capture", ws.to_str().unwrap(), "-o", plan.to_str().unwrap()]), "capture");
    ok(&bin(tmp.path(), &["emit-install", plan.to_str().unwrap(), "-o", script.to_str().unwrap()]), "emit-install");
    let rebuilt = tmp.path().join("rebuilt");
    let o = Command::new("sh").arg(&script).arg(&rebuilt).output().unwrap();
    assert!(o.status.success(), "install script: {}", String::from_utf8_lossy(&o.stderr));
    let took = started.elapsed();

    let plan = json_of(&std::fs::read_to_string(&plan).unwrap());
    let modules = plan["modules"].as_array().unwrap();
    assert_eq!(modules.len(), 3);
    let dirty: Vec<_> = modules.iter().filter(|m| m["patch"].is_string()).map(|m| m["name"].as_str().unwrap()).collect();
    assert_eq!(dirty, ["solver"]);
    for m in modules {
        let name = m["name"].as_str().unwrap();
        let subdir = m["subdir"].as_str().unwrap();
        assert_eq!(tree_hash(&rebuilt.join(subdir)), tree_hash(&ws.join(name)), "module {name} differs");
    }
    assert!(took < Duration::from_secs(30), "took {took:?}");
    format!("3 modules (1 dirty) rebuilt with identical content hashes in {:.2}s", took.as_secs_f64())
}

// ---- 4

fn rule_ids(dir: &Path, name: &str, recipe: &str) -> Vec<String> {
    let file = dir.join(name);
    std::fs::write(&file, recipe).unwrap();
    let o = bin(dir, &["--json", "lint-recipe", file.to_str().unwrap()]);
    let findings = json_of(&o.stdout)["findings"].as_array().unwrap().clone();
    assert_eq!(o.code, i32::from(!findings.is_empty()));
    findings.iter().map(|f| f["rule"].as_str().unwrap().to_owned()).collect()
}

fn recipe_lints() -> String {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(rule_ids(d, "latest.Dockerfile", "FROM ubuntu:latest\n"), ["CP3-unpinned-base"]);
    assert_eq!(
        rule_ids(d, "native.Dockerfile", "FROM debian:12.5\nRUN gcc -O2 -march=native -o /usr/local/bin/solve solve.c\n"),
        ["CP2-hw-flags"]
    );

    let ws = three_repo_workspace(d);
    let plan = d.join("plan.json");
    ok(&bin(d, &["capture", ws.to_str().unwrap(), "-o", plan.to_str().unwrap()]), "capture");
    let base = "debian:12.5@sha256:6a8bad8d20e1ca5ecbb7a314e51df6fca73fcce19af2778550671bdd1cbe7b43";
    let o = bin(d, &["emit-recipe", plan.to_str().unwrap(), "--base", base]);
    ok(&o, "emit-recipe");
    assert_eq!(rule_ids(d, "Dockerfile", &o.stdout), Vec::<String>::new());
    "CP3-unpinned-base and CP2-hw-flags flagged; emitted recipe has 0 findings".into()
}

// ---- 5

const SLEEPER: &str = r#"{
  "schema": 1, "id": "sleeper", "title": "Sleeps", "image_ref": "process",
  "entry_command": ["sh", "-c", "sleep 60"],
  "limits": {"wall_seconds": 2, "cpu_seconds": 10, "memory_bytes": 268435456}
}"#;

fn writer(abs: &Path) -> String {
    json!({
        "schema": 1, "id": "writer", "title": "Writes", "image_ref": "process",
        "entry_command": ["sh", "-c", format!("echo inside > local.txt; echo outside > {}", abs.display())],
        "outputs": [{"pattern": "**", "render_hint": "download"}]
    })
    .to_string()
}

fn sandbox_limits() -> String {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let work = d.join("w");
    let sleeper = d.join("sleeper.ct.json");
    std::fs::write(&sleeper, SLEEPER).unwrap();
    let started = Instant::now();
    let o = bin(d, &["--json", "--work-root", work.to_str().unwrap(), "run", sleeper.to_str().unwrap()]);
    let took = started.elapsed();
    assert_eq!(o.code, 1, "{}", o.stderr);
    let job = json_of(&o.stdout);
    assert_eq!((job["state"].as_str(), job["reason"].as_str()), (Some("killed"), Some("wall_timeout")), "{job}");
    assert!(took < Duration::from_secs(4), "killed after {took:?}");

    let abs = d.join("outside.txt");
    let w = d.join("writer.ct.json");
    std::fs::write(&w, writer(&abs)).unwrap();
    let o = bin(d, &["--json", "--work-root", work.to_str().unwrap(), "run", w.to_str().unwrap()]);
    ok(&o, "writer");
    let paths: Vec<String> = json_of(&o.stdout)["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a["path"].as_str().unwrap().to_owned())
        .collect();
    assert!(abs.is_file(), "the job did not write outside its workdir");
    assert_eq!(paths, ["local.txt"]);

    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    let app = Api::new(false);
    let status = rt.block_on(async {
        let id = app.post("/api/computations", &json!({"template_id": "heat1d"})).await.1["job_id"].as_str().unwrap().to_owned();
        app.wait(&id).await;
        let (status, body) = app.get(&format!("/api/computations/{id}/files/..%2F..%2Fetc%2Fpasswd")).await;
        assert_eq!(body["code"], "invalid_path");
        status
    });
    assert_eq!(status, StatusCode::BAD_REQUEST);
    app.assert_contract();
    format!("wall limit killed the job after {:.2}s; absolute-path write not collected; `..` request -> 400", took.as_secs_f64())
}

// ---- 6

#[derive(Debug, Clone)]
struct GenFile {
    kind: usize,
    pid: bool,
    open: bool,
    good: bool,
    link: Option<usize>,
}

fn gen_files() -> impl Strategy<Value = (Vec<GenFile>, bool, Option<(usize, usize)>)> {
    let file = (0usize..8, any::<bool>(), any::<bool>(), any::<bool>(), proptest::option::of(0usize..10))
        .prop_map(|(kind, pid, open, good, link)| GenFile { kind, pid, open, good, link });
    (proptest::collection::vec(file, 0..10), any::<bool>(), proptest::option::of((0usize..10, 0usize..10)))
}

fn body(f: &GenFile, i: usize, heat: &str) -> String {
    match (ArtifactKind::ALL[f.kind], f.good) {
        (ArtifactKind::Recipe, true) => "FROM debian:12.5\nRUN echo ok\n".into(),
        (ArtifactKind::Recipe, false) => "FROM debian:latest\n".into(),
        (ArtifactKind::WebappTemplate, true) => heat.into(),
        (ArtifactKind::WebappTemplate, false) => "{ broken".into(),
        (ArtifactKind::Data, _) => format!("data {}", i % 2),
        _ => format!("file {i}"),
    }
}

fn build(files: &[GenFile], described: bool, verification: Option<(usize, usize)>, heat: &str) -> (Dataset, HashMap<String, Vec<u8>>) {
    let mut d = Dataset::new("local:gen", "generated");
    if described {
        d.description = "d".into();
        d.authors = vec!["a".into()];
        d.keywords = vec!["k".into()];
    }
    let mut blobs = HashMap::new();
    let n = files.len();
    for (i, f) in files.iter().enumerate() {
        let text = body(f, i, heat);
        let sum = sha256_hex(text.as_bytes());
        blobs.insert(sum.clone(), text.into_bytes());
        let kind = ArtifactKind::ALL[f.kind];
        let links = match f.link {
            Some(j) if kind == ArtifactKind::Image => vec![CrossLink { relation: Relation::IsDerivedFrom, target: format!("f{}", j % n) }],
            _ => vec![],
        };
        d.files.push(ArtifactFile {
            pid: f.pid.then(|| format!("local:f{i}")),
            path: format!("f{i}"),
            media_type: "application/octet-stream".into(),
            kind,
            license: if f.open { "MIT".into() } else { "LicenseRef-proprietary".into() },
            checksum: Some(sum),
            size_bytes: None,
            stored: true,
            links,
        });
    }
    if let (Some((t, v)), true) = (verification, n > 0) {
        d.verifications.push(Verification {
            template_pid: format!("local:f{}", t % n),
            expected: [("solution.csv".to_owned(), sha256_hex(body(&files[v % n], v % n, heat).as_bytes()))].into(),
        });
    }
    (d, blobs)
}

fn ladder() -> String {
    let tmp = tempfile::tempdir().unwrap();
    let reg = tmp.path().join("reg");
    let r = reg.to_str().unwrap();
    let o = cli(&["--json", "--registry", r, "dataset", "import", fixtures().join("pilot/pilot.dataset.json").to_str().unwrap()]);
    ok(&o, "import");
    let pid = json_of(&o.stdout)["pid"].as_str().unwrap().to_owned();
    ok(&cli(&["--registry", r, "dataset", "publish", &pid]), "publish");
    let o = cli(&["--json", "--registry", r, "dataset", "ladder", &pid]);
    ok(&o, "ladder");
    assert_eq!(json_of(&o.stdout)["rung"], "Verifiable");
    assert_eq!(Registry::open(&reg).unwrap().ladder(&pid, None).unwrap().rung, Some(LadderRung::Verifiable));

    let heat = std::fs::read_to_string(heat_template()).unwrap();
    let policy = LadderPolicy::default();
    let mut runner = TestRunner::new(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() });
    runner
        .run(&(gen_files(), any::<prop::sample::Index>()), |((files, described, verification), pick)| {
            let (d, blobs) = build(&files, described, verification, &heat);
            let blob = |c: &str| blobs.get(c).cloned();
            let a = classify_ladder(&d, &blob, &policy);
            // Cumulative: every rung up to the assigned one holds, the next does not.
            let held = a.rung.map_or(0, |r| r as usize + 1);
            prop_assert_eq!(a.predicates.len(), LadderRung::ALL.len());
            prop_assert!(a.predicates[..held].iter().all(|p| p.holds));
            if held < LadderRung::ALL.len() {
                prop_assert!(!a.predicates[held].holds);
            }
            // Monotone: dropping an artifact never raises the rung.
            if !d.files.is_empty() {
                let mut smaller = d.clone();
                smaller.files.remove(pick.index(d.files.len()));
                prop_assert!(classify_ladder(&smaller, &blob, &policy).rung <= a.rung);
            }
            Ok(())
        })
        .unwrap_or_else(|e| panic!("{e}"));
    "pilot dataset is Verifiable; 200 random datasets cumulative and monotone".into()
}

// ---- 7

fn crosswalk() -> String {
    let doc = fixtures().join("codemeta/codemeta.json");
    let o = cli(&["crosswalk", doc.to_str().unwrap(), "--map", "codemeta"]);
    ok(&o, "crosswalk");
    let golden = json_of(&std::fs::read_to_string(fixtures().join("codemeta/software.block.json")).unwrap());
    assert_eq!(json_of(&o.stdout), golden);

    let tmp = tempfile::tempdir().unwrap();
    let mut broken = json_of(&std::fs::read_to_string(&doc).unwrap());
    broken.as_object_mut().unwrap().remove("name");
    let bad = tmp.path().join("codemeta.json");
    std::fs::write(&bad, broken.to_string()).unwrap();
    let o = cli(&["crosswalk", bad.to_str().unwrap(), "--map", "codemeta"]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("required field `title`"), "{}", o.stderr);
    "golden block reproduced; missing `name` reported as required field `title`".into()
}

// ---- 8

struct Api {
    state: AppState,
    app: axum::Router,
    _dir: tempfile::TempDir,
}

impl Api {
    /// No container engine. No web app unless `frontend`.
    fn new(frontend: bool) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut templates = TemplateStore::new();
        templates.insert(std::fs::read(heat_template()).unwrap()).unwrap();
        let mut bc = BackendConfig::new(dir.path().join("jobs"));
        bc.engine = None;
        let backend = Backend::new(bc).unwrap();
        let registry = Registry::open(dir.path().join("registry")).unwrap();
        let mut state = AppState::new(templates, backend, registry).with_contract_checking();
        if frontend {
            state.static_dir = Some(dir.path().to_path_buf());
        }
        Self { app: router(state.clone()), state, _dir: dir }
    }

    async fn call(&self, method: Method, uri: &str, body: Option<&Value>) -> (StatusCode, Value) {
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
        let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
        (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
    }

    async fn get(&self, uri: &str) -> (StatusCode, Value) {
        self.call(Method::GET, uri, None).await
    }

    async fn post(&self, uri: &str, body: &Value) -> (StatusCode, Value) {
        self.call(Method::POST, uri, Some(body)).await
    }

    async fn wait(&self, id: &str) -> Value {
        for _ in 0..60 {
            let (_, job) = self.get(&format!("/api/computations/{id}?wait=5000")).await;
            if !matches!(job["state"].as_str(), Some("queued" | "running")) {
                return job;
            }
        }
        panic!("job {id} did not finish");
    }

    fn assert_contract(&self) {
        let checker = self.state.contract.as_ref().unwrap();
        let v = checker.violations();
        assert!(v.is_empty(), "{} schema violations, first: {:?}", v.len(), v.first());
    }
}

fn enc(s: &str) -> String {
    replicator_server::encode_segment(s)
}

async fn tour(t: &Api) {
    let pilot = t.state.registry.import_manifest(&fixtures().join("pilot/pilot.dataset.json")).unwrap();
    let pilot = t.state.registry.publish(&pilot.pid).unwrap();
    let pp = enc(&pilot.pid);

    t.get("/api/health").await;
    t.get("/api/openapi.json").await;
    t.get("/api/templates").await;
    t.get("/api/templates/heat1d").await;
    t.get("/api/templates/missing").await;
    let (_, accepted) = t.post("/api/computations", &json!({"template_id": "heat1d", "bindings": {"num_cells": 60}})).await;
    let id = accepted["job_id"].as_str().unwrap().to_owned();
    let job = t.wait(&id).await;
    assert_eq!(job["state"], "succeeded");
    t.post("/api/computations", &json!({"template_id": "heat1d", "bindings": {"num_cells": 1}})).await;
    t.post("/api/computations", &json!({"template_id": "heat1d", "runner": "oci"})).await;
    t.get("/api/computations").await;
    t.get(&format!("/api/computations/{id}/files/solution.csv")).await;
    t.get(&format!("/api/computations/{id}/logs/stdout")).await;
    t.call(Method::DELETE, &format!("/api/computations/{id}"), None).await;

    let (_, created) = t.post("/api/datasets", &json!({"title": "Tour", "authors": ["T"], "keywords": ["k"], "description": "d"})).await;
    let p = enc(created["pid"].as_str().unwrap());
    t.get("/api/datasets").await;
    t.get(&format!("/api/datasets/{p}")).await;
    t.call(Method::PATCH, &format!("/api/datasets/{p}"), Some(&json!({"title": "Tour 2"}))).await;
    let tpl = std::fs::read_to_string(heat_template()).unwrap();
    t.post(&format!("/api/datasets/{p}/files"), &json!({"path": "t.ct.json", "kind": "A8_webapp_template", "license": "MIT", "content_text": tpl})).await;
    t.post(&format!("/api/datasets/{p}/files"), &json!({"path": "x.txt", "kind": "A3_documentation", "license": "", "content_text": "x"})).await;
    t.get(&format!("/api/datasets/{p}/review")).await;
    t.post(&format!("/api/datasets/{p}/publish"), &json!(null)).await;
    t.call(Method::DELETE, &format!("/api/datasets/{p}/files/x.txt"), None).await;
    t.post(&format!("/api/datasets/{p}/links"), &json!({"relation": "references", "target": "doi:10.1234/paper"})).await;
    t.post(&format!("/api/datasets/{p}/verifications"), &json!({"template_pid": "t.ct.json", "expected": {"solution.csv": REFERENCE_SHA256}})).await;
    t.get(&format!("/api/datasets/{p}/files/t.ct.json")).await;
    let (status, _) = t.post(&format!("/api/datasets/{p}/publish"), &json!(null)).await;
    assert_eq!(status, StatusCode::OK);
    t.post(&format!("/api/datasets/{p}/files"), &json!({"path": "y.txt", "kind": "A4_data", "license": "MIT", "content_text": "y"})).await;
    t.post(&format!("/api/datasets/{p}/draft"), &json!(null)).await;
    t.get(&format!("/api/datasets/{p}/versions")).await;
    t.get(&format!("/api/datasets/{p}/ladder?version=1")).await;
    t.get(&format!("/api/datasets/{p}/dataverse")).await;
    t.post(&format!("/api/datasets/{p}/verify?version=1"), &json!(null)).await;
    t.get(&format!("/api/datasets/{pp}/ladder")).await;

    let file_pid = pilot.files[0].pid.clone().unwrap();
    t.get(&format!("/api/pids/{}", enc(&file_pid))).await;
    t.get(&format!("/api/pids/{}/content", enc(&file_pid))).await;
    t.get("/api/pids/local:nothing").await;
    let doc = std::fs::read_to_string(fixtures().join("codemeta/codemeta.json")).unwrap();
    t.post("/api/metadata/crosswalk", &json!({"document": doc})).await;
    t.post("/api/metadata/crosswalk", &json!({"document": "{}"})).await;
    let (_, session) = t.get(&format!("/explore?dataset={pp}")).await;
    t.get(&format!("/api/sessions/{}", session["token"].as_str().unwrap())).await;
    t.get("/explore?dataset=local:nothing").await;
    t.get("/app").await;
    t.get("/app/index.html").await;
    t.get("/nowhere").await;
    t.call(Method::PUT, "/api/templates", None).await;
}

fn api_contract() -> String {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    let t = Api::new(false);
    rt.block_on(tour(&t));
    let checker = t.state.contract.as_ref().unwrap();
    t.assert_contract();
    let documented: BTreeSet<(String, String)> = ENDPOINTS
        .iter()
        .filter(|e| !e.path.starts_with("/app"))
        .map(|e| (e.method.to_owned(), e.path.to_owned()))
        .collect();
    let exercised = checker.exercised();
    let missing: Vec<_> = documented.difference(&exercised).collect();
    assert!(missing.is_empty(), "never answered successfully: {missing:?}");
    let published = std::fs::read_to_string(docs().join("openapi.json")).unwrap();
    assert_eq!(published, replicator_server::openapi_document(), "docs/openapi.json is stale");
    format!(
        "{} responses valid, {} endpoints answered successfully, no web app built, no container engine",
        checker.checked(),
        documented.len()
    )
}

// ---- optional

/// Builds the pilot recipe and reruns the reference inside the image.
/// `None` when no engine is installed.
fn container_reproduction() -> Option<String> {
    let engine = std::env::var("REPLICATOR_ENGINE").unwrap_or_else(|_| "docker".into());
    OciRunner::new(engine.clone()).locate()?;
    let tag = "replicator-heat1d:acceptance";
    let pilot = fixtures().join("pilot");
    let o = Command::new(&engine)
        .args(["build", "-q", "-t", tag, "-f"])
        .arg(pilot.join("container/Dockerfile"))
        .arg(&pilot)
        .output()
        .unwrap();
    assert!(o.status.success(), "build: {}", String::from_utf8_lossy(&o.stderr));

    // The image's entry point runs its own copy of the solver on the
    // arguments it is given.
    let mut t = json_of(&std::fs::read_to_string(heat_template()).unwrap());
    t["image_ref"] = json!(tag);
    t["entry_command"] = json!(["params.ini"]);
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("heat1d-oci.ct.json");
    std::fs::write(&path, t.to_string()).unwrap();
    let out = tmp.path().join("out");
    let o = bin(
        tmp.path(),
        &["--engine", &engine, "--work-root", "jobs", "run", path.to_str().unwrap(), "--runner", "oci", "--out", out.to_str().unwrap()],
    );
    ok(&o, "run --runner oci");
    assert_eq!(sha256(&std::fs::read(out.join("solution.csv")).unwrap()), REFERENCE_SHA256);
    Some(format!("{engine} image reproduces the reference"))
}
