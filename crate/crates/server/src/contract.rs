//! Published response schemas, the endpoint table and the checking
//! middleware used in test mode.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::extract::{MatchedPath, Request, State};
use axum::http::header::CONTENT_TYPE;
use axum::middleware::Next;
use axum::response::Response;
use serde_json::{json, Map, Value};

const API_SCHEMA: &str = include_str!("../schemas/api.schema.json");
const TEMPLATE_SCHEMA: &str = include_str!("../../../docs/computation-template.schema.json");

/// A response body as documented.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Payload {
    /// JSON validated against the named definition.
    Json(&'static str),
    /// Raw bytes of the given media type (`*/*` for any).
    Raw(&'static str),
}

use Payload::{Json as J, Raw};

#[derive(Debug, Clone, Copy)]
pub struct Param {
    pub name: &'static str,
    pub kind: &'static str,
    pub required: bool,
    pub description: &'static str,
}

const fn q(name: &'static str, kind: &'static str, description: &'static str) -> Param {
    Param { name, kind, required: false, description }
}

const fn q_req(name: &'static str, kind: &'static str, description: &'static str) -> Param {
    Param { name, kind, required: true, description }
}

#[derive(Debug, Clone, Copy)]
pub struct Endpoint {
    pub method: &'static str,
    /// Route in router syntax: `{name}` and `{*rest}` captures.
    pub path: &'static str,
    pub summary: &'static str,
    pub query: &'static [Param],
    pub request: Option<&'static str>,
    pub ok: &'static [(u16, Payload)],
    pub errors: &'static [u16],
}

const VERSION_Q: &[Param] = &[q("version", "integer", "Dataset version; latest when absent.")];

pub const ENDPOINTS: &[Endpoint] = &[
    Endpoint { method: "GET", path: "/api/health", summary: "Liveness probe", query: &[], request: None, ok: &[(200, J("Health"))], errors: &[] },
    Endpoint { method: "GET", path: "/api/openapi.json", summary: "This API description", query: &[], request: None, ok: &[(200, J("OpenApi"))], errors: &[] },
    Endpoint { method: "GET", path: "/api/templates", summary: "List computation templates", query: &[], request: None, ok: &[(200, J("TemplateList"))], errors: &[] },
    Endpoint { method: "GET", path: "/api/templates/{id}", summary: "Stored template document, byte for byte", query: &[], request: None, ok: &[(200, J("ComputationTemplate"))], errors: &[404] },
    Endpoint { method: "POST", path: "/api/computations", summary: "Submit a computation", query: &[], request: Some("SubmitRequest"), ok: &[(202, J("JobAccepted"))], errors: &[400, 404, 413, 422, 503] },
    Endpoint { method: "GET", path: "/api/computations", summary: "List jobs", query: &[], request: None, ok: &[(200, J("JobList"))], errors: &[] },
    Endpoint {
        method: "GET",
        path: "/api/computations/{id}",
        summary: "Job status; long-polls with `wait`",
        query: &[
            q("wait", "integer", "Milliseconds to wait for a change (at most 30000)."),
            q("revision", "integer", "Last revision seen; the wait ends when the job's revision is higher."),
        ],
        request: None,
        ok: &[(200, J("Job"))],
        errors: &[400, 404],
    },
    Endpoint { method: "DELETE", path: "/api/computations/{id}", summary: "Cancel a job", query: &[], request: None, ok: &[(200, J("CancelResult"))], errors: &[404] },
    Endpoint { method: "GET", path: "/api/computations/{id}/files/{*path}", summary: "Download an output file", query: &[], request: None, ok: &[(200, Raw("*/*"))], errors: &[400, 404, 409] },
    Endpoint { method: "GET", path: "/api/computations/{id}/logs/{stream}", summary: "Full stdout or stderr log", query: &[], request: None, ok: &[(200, Raw("text/plain"))], errors: &[400, 404] },
    Endpoint { method: "POST", path: "/api/datasets", summary: "Create a dataset draft", query: &[], request: Some("NewDatasetRequest"), ok: &[(201, J("Dataset"))], errors: &[400, 409] },
    Endpoint { method: "GET", path: "/api/datasets", summary: "List datasets (latest versions)", query: &[], request: None, ok: &[(200, J("DatasetList"))], errors: &[] },
    Endpoint { method: "GET", path: "/api/datasets/{pid}", summary: "Dataset record", query: VERSION_Q, request: None, ok: &[(200, J("Dataset"))], errors: &[400, 404] },
    Endpoint { method: "PATCH", path: "/api/datasets/{pid}", summary: "Update citation metadata", query: &[], request: Some("MetadataUpdateRequest"), ok: &[(200, J("Dataset"))], errors: &[400, 404] },
    Endpoint { method: "GET", path: "/api/datasets/{pid}/versions", summary: "All versions", query: &[], request: None, ok: &[(200, J("DatasetVersions"))], errors: &[404] },
    Endpoint { method: "POST", path: "/api/datasets/{pid}/files", summary: "Add or replace a file", query: &[], request: Some("AddFileRequest"), ok: &[(201, J("Dataset"))], errors: &[400, 404, 409, 413] },
    Endpoint { method: "GET", path: "/api/datasets/{pid}/files/{*path}", summary: "Stored file content", query: VERSION_Q, request: None, ok: &[(200, Raw("*/*"))], errors: &[400, 404] },
    Endpoint { method: "DELETE", path: "/api/datasets/{pid}/files/{*path}", summary: "Remove a file from the draft", query: &[], request: None, ok: &[(200, J("Dataset"))], errors: &[400, 404] },
    Endpoint { method: "POST", path: "/api/datasets/{pid}/links", summary: "Add a cross-link", query: &[], request: Some("AddLinkRequest"), ok: &[(200, J("Dataset"))], errors: &[400, 404] },
    Endpoint { method: "POST", path: "/api/datasets/{pid}/verifications", summary: "Declare a verification", query: &[], request: Some("Verification"), ok: &[(200, J("Dataset"))], errors: &[400, 404] },
    Endpoint { method: "POST", path: "/api/datasets/{pid}/draft", summary: "Open a new draft version", query: &[], request: None, ok: &[(200, J("Dataset"))], errors: &[404] },
    Endpoint { method: "POST", path: "/api/datasets/{pid}/publish", summary: "Review and publish the draft", query: &[], request: None, ok: &[(200, J("Dataset"))], errors: &[404, 409, 422] },
    Endpoint { method: "GET", path: "/api/datasets/{pid}/review", summary: "Review checklist findings", query: VERSION_Q, request: None, ok: &[(200, J("ReviewResult"))], errors: &[400, 404] },
    Endpoint { method: "GET", path: "/api/datasets/{pid}/ladder", summary: "Sustainability ladder rung", query: VERSION_Q, request: None, ok: &[(200, J("LadderAssessment"))], errors: &[400, 404] },
    Endpoint { method: "GET", path: "/api/datasets/{pid}/dataverse", summary: "Dataverse-style JSON export", query: VERSION_Q, request: None, ok: &[(200, J("DataverseExport"))], errors: &[400, 404] },
    Endpoint {
        method: "POST",
        path: "/api/datasets/{pid}/verify",
        summary: "Re-run declared verifications",
        query: &[VERSION_Q[0], q("timeout_seconds", "integer", "Per-run limit (default 600).")],
        request: None,
        ok: &[(200, J("VerificationReport"))],
        errors: &[400, 404],
    },
    Endpoint { method: "GET", path: "/api/pids/{pid}", summary: "Resolve a persistent identifier", query: &[], request: None, ok: &[(200, J("ResolvedPid"))], errors: &[400, 404] },
    Endpoint { method: "GET", path: "/api/pids/{pid}/content", summary: "Content of a file identifier", query: &[], request: None, ok: &[(200, Raw("*/*"))], errors: &[400, 404] },
    Endpoint { method: "POST", path: "/api/metadata/crosswalk", summary: "Extract a metadata block; optionally apply it", query: &[], request: Some("CrosswalkRequest"), ok: &[(200, J("CrosswalkResult"))], errors: &[400, 404, 409, 422] },
    Endpoint {
        method: "GET",
        path: "/explore",
        summary: "Open an exploration session for a dataset's computation template",
        query: &[
            q_req("dataset", "string", "Dataset pid."),
            q("template", "string", "Pid or path of the template file; the first one when absent."),
            VERSION_Q[0],
        ],
        request: None,
        ok: &[(200, J("ExploreSession"))],
        errors: &[400, 404, 422],
    },
    Endpoint { method: "GET", path: "/api/sessions/{token}", summary: "Exploration session with its template", query: &[], request: None, ok: &[(200, J("Session"))], errors: &[400, 404, 422] },
    Endpoint { method: "GET", path: "/app", summary: "Single-page app entry", query: &[], request: None, ok: &[(200, Raw("text/html"))], errors: &[404] },
    Endpoint { method: "GET", path: "/app/{*path}", summary: "Single-page app assets", query: &[], request: None, ok: &[(200, Raw("*/*"))], errors: &[404] },
];

pub fn endpoint(method: &str, path: &str) -> Option<&'static Endpoint> {
    ENDPOINTS.iter().find(|e| e.method == method && e.path == path)
}

/// The API definitions with the template schema folded in as
/// `ComputationTemplate`, all under one `$defs`.
pub fn composed_schema() -> Value {
    let mut api: Value = serde_json::from_str(API_SCHEMA).expect("api schema is valid JSON");
    let mut tpl: Value = serde_json::from_str(TEMPLATE_SCHEMA).expect("template schema is valid JSON");
    let tpl_obj = tpl.as_object_mut().expect("template schema is an object");
    let tpl_defs = tpl_obj.remove("$defs").and_then(|d| d.as_object().cloned()).unwrap_or_default();
    tpl_obj.remove("$schema");
    tpl_obj.remove("$id");
    let defs = api["$defs"].as_object_mut().expect("api schema has $defs");
    for (name, def) in tpl_defs {
        if let Some(existing) = defs.get(&name) {
            assert_eq!(existing, &def, "schema definition `{name}` differs between documents");
        }
        defs.insert(name, def);
    }
    defs.insert("ComputationTemplate".into(), tpl);
    api
}

/// One response that did not match its documentation.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub method: String,
    pub route: String,
    pub status: u16,
    pub problem: String,
}

/// Validates responses against [`ENDPOINTS`] and records violations.
pub struct ContractChecker {
    validators: BTreeMap<String, jsonschema::Validator>,
    violations: Mutex<Vec<Violation>>,
    checked: Mutex<usize>,
    /// (method, route) pairs that answered with a success status.
    exercised: Mutex<BTreeSet<(String, String)>>,
}

impl ContractChecker {
    pub fn new() -> Self {
        let schema = composed_schema();
        let defs = schema["$defs"].as_object().cloned().unwrap_or_default();
        let validators = defs
            .keys()
            .map(|name| {
                let root = json!({
                    "$schema": "https://json-schema.org/draft/2020-12/schema",
                    "$ref": format!("#/$defs/{name}"),
                    "$defs": Value::Object(defs.clone()),
                });
                let v = jsonschema::options()
                    .should_validate_formats(true)
                    .build(&root)
                    .unwrap_or_else(|e| panic!("schema `{name}` does not compile: {e}"));
                (name.clone(), v)
            })
            .collect();
        Self { validators, violations: Mutex::default(), checked: Mutex::default(), exercised: Mutex::default() }
    }

    /// Errors of `value` against definition `def`.
    pub fn check(&self, def: &str, value: &Value) -> Vec<String> {
        match self.validators.get(def) {
            Some(v) => v.iter_errors(value).map(|e| format!("{}: {e}", e.instance_path())).collect(),
            None => vec![format!("no schema definition `{def}`")],
        }
    }

    pub fn violations(&self) -> Vec<Violation> {
        self.violations.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }

    /// Documented endpoints that have answered successfully so far.
    pub fn exercised(&self) -> BTreeSet<(String, String)> {
        self.exercised.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }

    /// Number of responses inspected so far.
    pub fn checked(&self) -> usize {
        *self.checked.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn record(&self, method: &str, route: &str, status: u16, problem: String) {
        log::error!("contract violation: {method} {route} -> {status}: {problem}");
        self.violations.lock().unwrap_or_else(|p| p.into_inner()).push(Violation {
            method: method.into(),
            route: route.into(),
            status,
            problem,
        });
    }

    /// Problems with one response; empty when it matches.
    pub fn inspect(&self, method: &str, route: Option<&str>, status: u16, content_type: Option<&str>, body: &[u8]) -> Vec<String> {
        let is_json = content_type.is_some_and(|c| c.starts_with("application/json"));
        let parse = || serde_json::from_slice::<Value>(body).map_err(|e| format!("body is not JSON: {e}"));
        let validate = |def: &str| -> Vec<String> {
            if !is_json {
                return vec![format!("content type {content_type:?} is not application/json")];
            }
            match parse() {
                Ok(v) => self.check(def, &v),
                Err(e) => vec![e],
            }
        };

        if status >= 400 {
            let mut problems = validate("ApiError");
            if let Ok(v) = parse() {
                if v.get("status").and_then(Value::as_u64) != Some(u64::from(status)) {
                    problems.push(format!("`status` field does not equal HTTP status {status}"));
                }
            }
            if let Some(ep) = route.and_then(|r| endpoint(method, r)) {
                if !ep.errors.contains(&status) && !matches!(status, 400 | 405 | 413 | 500) {
                    problems.push(format!("undocumented error status {status}"));
                }
            }
            return problems;
        }
        let Some(route) = route else {
            return vec![format!("success status {status} without a matched route")];
        };
        let Some(ep) = endpoint(method, route) else {
            return vec![format!("route {method} {route} is not in the endpoint table")];
        };
        match ep.ok.iter().find(|(s, _)| *s == status) {
            None => vec![format!("undocumented success status {status}")],
            Some((_, Payload::Json(def))) => validate(def),
            Some((_, Payload::Raw(media))) => match (media, content_type) {
                (&"*/*", Some(_)) => Vec::new(),
                (m, Some(c)) if c.starts_with(m) => Vec::new(),
                (m, c) => vec![format!("content type {c:?} is not {m}")],
            },
        }
    }
}

impl Default for ContractChecker {
    fn default() -> Self {
        Self::new()
    }
}

/// Middleware: buffers each response and checks it against the contract.
pub async fn check_responses(State(checker): State<Arc<ContractChecker>>, req: Request, next: Next) -> Response {
    let method = req.method().as_str().to_owned();
    let route = req.extensions().get::<MatchedPath>().map(|m| m.as_str().to_owned());
    let response = next.run(req).await;
    let (parts, body) = response.into_parts();
    let bytes = match axum::body::to_bytes(body, usize::MAX).await {
        Ok(b) => b,
        Err(e) => {
            checker.record(&method, route.as_deref().unwrap_or("-"), parts.status.as_u16(), format!("unreadable body: {e}"));
            return Response::from_parts(parts, Body::empty());
        }
    };
    let content_type = parts.headers.get(CONTENT_TYPE).and_then(|v| v.to_str().ok());
    let status = parts.status.as_u16();
    for problem in checker.inspect(&method, route.as_deref(), status, content_type, &bytes) {
        checker.record(&method, route.as_deref().unwrap_or("-"), status, problem);
    }
    *checker.checked.lock().unwrap_or_else(|p| p.into_inner()) += 1;
    if let (Some(r), true) = (&route, status < 400) {
        checker.exercised.lock().unwrap_or_else(|p| p.into_inner()).insert((method.clone(), r.clone()));
    }
    Response::from_parts(parts, Body::from(bytes))
}

fn rewrite_refs(v: &mut Value) {
    match v {
        Value::Object(m) => {
            for (k, child) in m.iter_mut() {
                if k == "$ref" {
                    if let Value::String(s) = child {
                        if let Some(rest) = s.strip_prefix("#/$defs/") {
                            *s = format!("#/components/schemas/{}", rest.replace("/$defs/", "/"));
                        }
                    }
                } else {
                    rewrite_refs(child);
                }
            }
        }
        Value::Array(a) => a.iter_mut().for_each(rewrite_refs),
        _ => {}
    }
}

fn openapi_path(route: &str) -> (String, Vec<String>) {
    let mut names = Vec::new();
    let path = route
        .split('/')
        .map(|seg| match seg.strip_prefix('{').and_then(|s| s.strip_suffix('}')) {
            Some(name) => {
                let name = name.trim_start_matches('*');
                names.push(name.to_owned());
                format!("{{{name}}}")
            }
            None => seg.to_owned(),
        })
        .collect::<Vec<_>>()
        .join("/");
    (path, names)
}

fn reason(status: u16) -> &'static str {
    axum::http::StatusCode::from_u16(status).ok().and_then(|s| s.canonical_reason()).unwrap_or("Response")
}

/// OpenAPI 3.1 document generated from the endpoint table and schemas.
pub fn openapi() -> Value {
    let mut schemas = composed_schema()["$defs"].clone();
    rewrite_refs(&mut schemas);
    let mut paths = Map::new();
    for ep in ENDPOINTS {
        let (path, names) = openapi_path(ep.path);
        let mut params: Vec<Value> = names
            .iter()
            .map(|n| {
                json!({"name": n, "in": "path", "required": true, "schema": {"type": "string"},
                       "description": if n == "pid" { "Percent-encoded persistent identifier." } else { "" }})
            })
            .collect();
        params.extend(ep.query.iter().map(|p| {
            json!({"name": p.name, "in": "query", "required": p.required, "schema": {"type": p.kind}, "description": p.description})
        }));
        let mut responses = Map::new();
        for (status, body) in ep.ok {
            let content = match body {
                Payload::Json(def) => json!({"application/json": {"schema": {"$ref": format!("#/components/schemas/{def}")}}}),
                Payload::Raw(media) => json!({ *media: {"schema": {"type": "string", "format": "binary"}}}),
            };
            responses.insert(status.to_string(), json!({"description": reason(*status), "content": content}));
        }
        for status in ep.errors {
            responses.insert(
                status.to_string(),
                json!({"description": reason(*status),
                       "content": {"application/json": {"schema": {"$ref": "#/components/schemas/ApiError"}}}}),
            );
        }
        let mut op = json!({
            "operationId": operation_id(ep),
            "summary": ep.summary,
            "responses": responses,
        });
        if !params.is_empty() {
            op["parameters"] = Value::Array(params);
        }
        if let Some(def) = ep.request {
            op["requestBody"] = json!({"required": true,
                "content": {"application/json": {"schema": {"$ref": format!("#/components/schemas/{def}")}}}});
        }
        let entry = paths.entry(path).or_insert_with(|| json!({}));
        entry[ep.method.to_ascii_lowercase()] = op;
    }
    json!({
        "openapi": "3.1.0",
        "info": {
            "title": "replicator API",
            "version": env!("CARGO_PKG_VERSION"),
            "description": "Templates, computations, datasets, metadata crosswalks and exploration sessions. Every error body is an ApiError.",
        },
        "servers": [{"url": "http://127.0.0.1:8080"}],
        "paths": paths,
        "components": {"schemas": schemas},
    })
}

/// Pretty-printed [`openapi`] with a trailing newline, as stored in `docs/`.
pub fn openapi_document() -> String {
    let mut s = serde_json::to_string_pretty(&openapi()).expect("serializable");
    s.push('\n');
    s
}

fn operation_id(ep: &Endpoint) -> String {
    let mut id = ep.method.to_ascii_lowercase();
    for seg in ep.path.split('/').filter(|s| !s.is_empty() && *s != "api") {
        let word = seg.trim_matches(|c| c == '{' || c == '}' || c == '*');
        let word = if seg.starts_with('{') { format!("by_{word}") } else { word.replace(['.', '-'], "_") };
        id.push('_');
        id.push_str(&word);
    }
    id
}
