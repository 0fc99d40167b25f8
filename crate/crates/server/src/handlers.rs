use std::time::Duration;

use axum::body::Bytes;
use axum::extract::rejection::{BytesRejection, PathRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::header::LOCATION;
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use replicator_core::backend::RunnerChoice;
use replicator_core::crosswalk::{extract, to_dataverse_json, MappingConfig, SourceFormat};
use replicator_core::finding::has_errors;
use replicator_core::paths::check_relative;
use replicator_core::registry::{
    ArtifactFile, ArtifactKind, CoreMetadata, CrossLink, FileSource, NewDataset, NewFile, Relation, Resolved,
    Verification,
};
use replicator_core::substitute::BindingSet;
use replicator_core::template::ComputationTemplate;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::error::{ApiError, ErrorCode};
use crate::session::{open_session, open_token};
use crate::{blocking, body, encode_segment, parse_json, path_rejected, query_rejected, raw, AppState};

type ApiResult<T = Response> = Result<T, ApiError>;

const MAX_WAIT_MS: u64 = 30_000;

fn media_type_of(path: &str) -> String {
    mime_guess::from_path(path).first_or_octet_stream().essence_str().to_owned()
}

pub async fn health() -> Json<Value> {
    Json(json!({"status": "ok", "version": env!("CARGO_PKG_VERSION")}))
}

pub async fn openapi() -> Json<Value> {
    Json(crate::contract::openapi())
}

pub async fn not_found() -> ApiError {
    ApiError::not_found("no such endpoint")
}

pub async fn method_not_allowed() -> ApiError {
    ApiError::new(ErrorCode::MethodNotAllowed, "method not allowed on this endpoint")
}

// ---- templates

pub async fn list_templates(State(s): State<AppState>) -> Json<Value> {
    Json(json!({"templates": s.templates.summaries()}))
}

pub async fn get_template(State(s): State<AppState>, id: Result<Path<String>, PathRejection>) -> ApiResult {
    let Path(id) = id.map_err(path_rejected)?;
    let t = s.templates.get(&id).ok_or_else(|| ApiError::not_found(format!("unknown template `{id}`")))?;
    Ok(raw("application/json", t.bytes.clone()))
}

// ---- computations

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SubmitRequest {
    template_id: Option<String>,
    session: Option<String>,
    #[serde(default)]
    bindings: BindingSet,
    #[serde(default)]
    runner: RunnerChoice,
}

pub async fn submit(State(s): State<AppState>, b: Result<Bytes, BytesRejection>) -> ApiResult {
    let req: SubmitRequest = parse_json(&body(b)?)?;
    let template: ComputationTemplate = match (&req.template_id, &req.session) {
        (Some(id), None) => {
            s.templates.get(id).ok_or_else(|| ApiError::not_found(format!("unknown template `{id}`")))?.template.clone()
        }
        (None, Some(token)) => {
            let (registry, token) = (s.registry.clone(), token.clone());
            blocking(move || open_token(&registry, &token).map(|o| o.template)).await?
        }
        _ => return Err(ApiError::bad_request("give exactly one of `template_id` and `session`")),
    };
    let backend = s.backend.clone();
    let id = blocking(move || Ok(backend.submit_with(&template, &req.bindings, req.runner)?)).await?;
    let status_url = format!("/api/computations/{}", encode_segment(&id));
    let mut r = (StatusCode::ACCEPTED, Json(json!({"job_id": id, "status_url": status_url}))).into_response();
    if let Ok(v) = HeaderValue::from_str(&status_url) {
        r.headers_mut().insert(LOCATION, v);
    }
    Ok(r)
}

pub async fn list_jobs(State(s): State<AppState>) -> Json<Value> {
    Json(json!({"jobs": s.backend.list()}))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaitQuery {
    wait: Option<u64>,
    revision: Option<u64>,
}

pub async fn job_status(
    State(s): State<AppState>,
    id: Result<Path<String>, PathRejection>,
    q: Result<Query<WaitQuery>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    let Path(id) = id.map_err(path_rejected)?;
    let Query(q) = q.map_err(query_rejected)?;
    let backend = s.backend.clone();
    let job = match q.wait {
        Some(ms) if ms > 0 => {
            let timeout = Duration::from_millis(ms.min(MAX_WAIT_MS));
            blocking(move || Ok(backend.wait_change(&id, q.revision, timeout)?)).await?
        }
        _ => backend.status(&id)?,
    };
    Ok(Json(serde_json::to_value(job).map_err(|e| ApiError::internal(e.to_string()))?))
}

pub async fn cancel_job(State(s): State<AppState>, id: Result<Path<String>, PathRejection>) -> ApiResult<Json<Value>> {
    let Path(id) = id.map_err(path_rejected)?;
    let outcome = s.backend.cancel(&id)?;
    Ok(Json(json!({"job_id": id, "outcome": outcome})))
}

pub async fn job_file(
    State(s): State<AppState>,
    p: Result<Path<(String, String)>, PathRejection>,
) -> ApiResult {
    let Path((id, path)) = p.map_err(path_rejected)?;
    check_relative(&path).map_err(|why| ApiError::new(ErrorCode::InvalidPath, format!("`{path}`: {why}")))?;
    let job = s.backend.status(&id)?;
    if !job.state.is_terminal() && !job.intermediate_outputs.iter().any(|o| o.path == path) {
        return Err(ApiError::new(
            ErrorCode::NotReady,
            format!("job `{id}` has not finished and `{path}` is not an intermediate output"),
        ));
    }
    let (file, _) = s.backend.output_path(&id, &path)?;
    let bytes = tokio::fs::read(&file).await.map_err(|e| ApiError::internal(format!("{}: {e}", file.display())))?;
    Ok(raw(&media_type_of(&path), bytes))
}

pub async fn job_log(
    State(s): State<AppState>,
    p: Result<Path<(String, String)>, PathRejection>,
) -> ApiResult {
    let Path((id, stream)) = p.map_err(path_rejected)?;
    let stderr = match stream.as_str() {
        "stdout" => false,
        "stderr" => true,
        other => return Err(ApiError::bad_request(format!("unknown log stream `{other}` (stdout or stderr)"))),
    };
    let path = s.backend.log_path(&id, stderr)?;
    let bytes = match tokio::fs::read(&path).await {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(ApiError::internal(format!("{}: {e}", path.display()))),
    };
    Ok(raw("text/plain; charset=utf-8", bytes))
}

// ---- datasets

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewDatasetBody {
    pid: Option<String>,
    title: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    authors: Vec<String>,
    #[serde(default)]
    keywords: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VersionQuery {
    version: Option<u32>,
}

fn dataset_json(d: impl serde::Serialize) -> ApiResult<Json<Value>> {
    serde_json::to_value(d).map(Json).map_err(|e| ApiError::internal(e.to_string()))
}

pub async fn create_dataset(State(s): State<AppState>, b: Result<Bytes, BytesRejection>) -> ApiResult {
    let req: NewDatasetBody = parse_json(&body(b)?)?;
    let registry = s.registry.clone();
    let d = blocking(move || {
        Ok(registry.create_dataset(NewDataset {
            pid: req.pid,
            title: req.title,
            description: req.description,
            authors: req.authors,
            keywords: req.keywords,
        })?)
    })
    .await?;
    Ok((StatusCode::CREATED, dataset_json(d)?).into_response())
}

pub async fn list_datasets(State(s): State<AppState>) -> ApiResult<Json<Value>> {
    dataset_json(json!({"datasets": s.registry.list()}))
}

pub async fn get_dataset(
    State(s): State<AppState>,
    pid: Result<Path<String>, PathRejection>,
    q: Result<Query<VersionQuery>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    let Path(pid) = pid.map_err(path_rejected)?;
    let Query(q) = q.map_err(query_rejected)?;
    dataset_json(s.registry.get(&pid, q.version)?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MetadataBody {
    title: Option<String>,
    description: Option<String>,
    authors: Option<Vec<String>>,
    keywords: Option<Vec<String>>,
}

pub async fn update_dataset(
    State(s): State<AppState>,
    pid: Result<Path<String>, PathRejection>,
    b: Result<Bytes, BytesRejection>,
) -> ApiResult<Json<Value>> {
    let Path(pid) = pid.map_err(path_rejected)?;
    let m: MetadataBody = parse_json(&body(b)?)?;
    let registry = s.registry.clone();
    let d = blocking(move || {
        let update = CoreMetadata { title: m.title, description: m.description, authors: m.authors, keywords: m.keywords };
        Ok(registry.update_metadata(&pid, update)?)
    })
    .await?;
    dataset_json(d)
}

pub async fn dataset_versions(State(s): State<AppState>, pid: Result<Path<String>, PathRejection>) -> ApiResult<Json<Value>> {
    let Path(pid) = pid.map_err(path_rejected)?;
    dataset_json(json!({"versions": s.registry.versions(&pid)?}))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExternalBody {
    pid: Option<String>,
    checksum: Option<String>,
    size_bytes: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AddFileBody {
    path: String,
    kind: ArtifactKind,
    license: String,
    media_type: Option<String>,
    content_base64: Option<String>,
    content_text: Option<String>,
    external: Option<ExternalBody>,
    #[serde(default)]
    links: Vec<CrossLink>,
}

pub async fn add_file(
    State(s): State<AppState>,
    pid: Result<Path<String>, PathRejection>,
    b: Result<Bytes, BytesRejection>,
) -> ApiResult {
    let Path(pid) = pid.map_err(path_rejected)?;
    let req: AddFileBody = parse_json(&body(b)?)?;
    let source = match (req.content_base64, req.content_text, req.external) {
        (Some(b64), None, None) => FileSource::Bytes(
            STANDARD.decode(b64.as_bytes()).map_err(|e| ApiError::bad_request(format!("`content_base64`: {e}")))?,
        ),
        (None, Some(text), None) => FileSource::Bytes(text.into_bytes()),
        (None, None, Some(x)) => FileSource::External { pid: x.pid, checksum: x.checksum, size_bytes: x.size_bytes },
        _ => {
            return Err(ApiError::bad_request(
                "give exactly one of `content_base64`, `content_text` and `external`",
            ))
        }
    };
    let new = NewFile { path: req.path, kind: req.kind, license: req.license, media_type: req.media_type, source, links: req.links };
    let registry = s.registry.clone();
    let d = blocking(move || Ok(registry.add_file(&pid, new)?)).await?;
    Ok((StatusCode::CREATED, dataset_json(d)?).into_response())
}

pub async fn dataset_file(
    State(s): State<AppState>,
    p: Result<Path<(String, String)>, PathRejection>,
    q: Result<Query<VersionQuery>, QueryRejection>,
) -> ApiResult {
    let Path((pid, path)) = p.map_err(path_rejected)?;
    let Query(q) = q.map_err(query_rejected)?;
    check_relative(&path).map_err(|why| ApiError::new(ErrorCode::InvalidPath, format!("`{path}`: {why}")))?;
    let registry = s.registry.clone();
    blocking(move || {
        let d = registry.get(&pid, q.version)?;
        let f = d.file(&path).ok_or_else(|| ApiError::not_found(format!("dataset `{pid}` has no file `{path}`")))?;
        let bytes = stored_bytes(&registry, f)?;
        Ok(raw(&f.media_type, bytes))
    })
    .await
}

fn stored_bytes(registry: &replicator_core::registry::Registry, f: &ArtifactFile) -> ApiResult<Vec<u8>> {
    f.checksum.as_deref().filter(|_| f.stored).and_then(|c| registry.blob(c)).ok_or_else(|| {
        let at = f.pid.as_deref().unwrap_or("elsewhere");
        ApiError::new(ErrorCode::Unresolvable, format!("the content of `{}` is held outside this registry ({at})", f.path))
    })
}

pub async fn remove_file(
    State(s): State<AppState>,
    p: Result<Path<(String, String)>, PathRejection>,
) -> ApiResult<Json<Value>> {
    let Path((pid, path)) = p.map_err(path_rejected)?;
    let registry = s.registry.clone();
    dataset_json(blocking(move || Ok(registry.remove_file(&pid, &path)?)).await?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AddLinkBody {
    file: Option<String>,
    relation: Relation,
    target: String,
}

pub async fn add_link(
    State(s): State<AppState>,
    pid: Result<Path<String>, PathRejection>,
    b: Result<Bytes, BytesRejection>,
) -> ApiResult<Json<Value>> {
    let Path(pid) = pid.map_err(path_rejected)?;
    let req: AddLinkBody = parse_json(&body(b)?)?;
    let registry = s.registry.clone();
    let d = blocking(move || {
        Ok(registry.add_link(&pid, req.file.as_deref(), CrossLink { relation: req.relation, target: req.target })?)
    })
    .await?;
    dataset_json(d)
}

pub async fn add_verification(
    State(s): State<AppState>,
    pid: Result<Path<String>, PathRejection>,
    b: Result<Bytes, BytesRejection>,
) -> ApiResult<Json<Value>> {
    let Path(pid) = pid.map_err(path_rejected)?;
    let v: Verification = parse_json(&body(b)?)?;
    let registry = s.registry.clone();
    dataset_json(blocking(move || Ok(registry.add_verification(&pid, v)?)).await?)
}

pub async fn open_draft(State(s): State<AppState>, pid: Result<Path<String>, PathRejection>) -> ApiResult<Json<Value>> {
    let Path(pid) = pid.map_err(path_rejected)?;
    let registry = s.registry.clone();
    dataset_json(blocking(move || Ok(registry.open_draft(&pid)?)).await?)
}

pub async fn publish(State(s): State<AppState>, pid: Result<Path<String>, PathRejection>) -> ApiResult<Json<Value>> {
    let Path(pid) = pid.map_err(path_rejected)?;
    let registry = s.registry.clone();
    dataset_json(blocking(move || Ok(registry.publish(&pid)?)).await?)
}

pub async fn review(
    State(s): State<AppState>,
    pid: Result<Path<String>, PathRejection>,
    q: Result<Query<VersionQuery>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    let Path(pid) = pid.map_err(path_rejected)?;
    let Query(q) = q.map_err(query_rejected)?;
    let registry = s.registry.clone();
    let findings = blocking(move || Ok(registry.review(&pid, q.version)?)).await?;
    dataset_json(json!({"publishable": !has_errors(&findings), "findings": findings}))
}

pub async fn ladder(
    State(s): State<AppState>,
    pid: Result<Path<String>, PathRejection>,
    q: Result<Query<VersionQuery>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    let Path(pid) = pid.map_err(path_rejected)?;
    let Query(q) = q.map_err(query_rejected)?;
    let registry = s.registry.clone();
    dataset_json(blocking(move || Ok(registry.ladder(&pid, q.version)?)).await?)
}

pub async fn dataverse(
    State(s): State<AppState>,
    pid: Result<Path<String>, PathRejection>,
    q: Result<Query<VersionQuery>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    let Path(pid) = pid.map_err(path_rejected)?;
    let Query(q) = q.map_err(query_rejected)?;
    Ok(Json(to_dataverse_json(&s.registry.get(&pid, q.version)?)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyQuery {
    version: Option<u32>,
    timeout_seconds: Option<u64>,
}

pub async fn verify(
    State(s): State<AppState>,
    pid: Result<Path<String>, PathRejection>,
    q: Result<Query<VerifyQuery>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    let Path(pid) = pid.map_err(path_rejected)?;
    let Query(q) = q.map_err(query_rejected)?;
    let timeout = Duration::from_secs(q.timeout_seconds.unwrap_or(600).clamp(1, 3600));
    let (registry, backend) = (s.registry.clone(), s.backend.clone());
    let outcomes = blocking(move || Ok(registry.run_verifications(&pid, q.version, &backend, timeout)?)).await?;
    let passed = !outcomes.is_empty() && outcomes.iter().all(|o| o.passed());
    dataset_json(json!({"passed": passed, "outcomes": outcomes}))
}

// ---- persistent identifiers

pub async fn resolve_pid(State(s): State<AppState>, pid: Result<Path<String>, PathRejection>) -> ApiResult<Json<Value>> {
    let Path(pid) = pid.map_err(path_rejected)?;
    let registry = s.registry.clone();
    let resolved = blocking(move || Ok(registry.resolve_pid(&pid)?)).await?;
    let v = match resolved {
        Resolved::Dataset(d) => json!({"kind": "dataset", "dataset": d}),
        Resolved::File { dataset, version, file, blob } => {
            let mut v = json!({"kind": "file", "dataset_pid": dataset, "version": version, "file": file});
            if let (Some(_), Some(p)) = (blob, &file.pid) {
                v["content_url"] = json!(format!("/api/pids/{}/content", encode_segment(p)));
            }
            v
        }
        Resolved::External { url } => json!({"kind": "external", "url": url}),
    };
    Ok(Json(v))
}

pub async fn pid_content(State(s): State<AppState>, pid: Result<Path<String>, PathRejection>) -> ApiResult {
    let Path(pid) = pid.map_err(path_rejected)?;
    let registry = s.registry.clone();
    let (file, bytes) = blocking(move || Ok(registry.read_pid(&pid)?)).await?;
    Ok(raw(&file.media_type, bytes))
}

// ---- crosswalk

#[derive(Deserialize)]
#[serde(rename_all = "lowercase")]
enum MappingName {
    Codemeta,
    Engmeta,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CrosswalkBody {
    document: Option<String>,
    document_base64: Option<String>,
    format: Option<SourceFormat>,
    mapping: Option<MappingConfig>,
    mapping_name: Option<MappingName>,
    dataset: Option<String>,
}

pub async fn crosswalk(State(s): State<AppState>, b: Result<Bytes, BytesRejection>) -> ApiResult<Json<Value>> {
    let req: CrosswalkBody = parse_json(&body(b)?)?;
    let document = match (req.document, req.document_base64) {
        (Some(text), None) => text.into_bytes(),
        (None, Some(b64)) => {
            STANDARD.decode(b64.as_bytes()).map_err(|e| ApiError::bad_request(format!("`document_base64`: {e}")))?
        }
        _ => return Err(ApiError::bad_request("give exactly one of `document` and `document_base64`")),
    };
    let format = req.format.unwrap_or(SourceFormat::Json);
    let mapping = match (req.mapping, req.mapping_name) {
        (Some(m), None) => {
            m.validate()?;
            m
        }
        (None, Some(MappingName::Codemeta)) => MappingConfig::codemeta(),
        (None, Some(MappingName::Engmeta)) => MappingConfig::engmeta(),
        (None, None) => match format {
            SourceFormat::Json => MappingConfig::codemeta(),
            SourceFormat::Xml => MappingConfig::engmeta(),
            SourceFormat::Ini => return Err(ApiError::bad_request("INI documents need an explicit `mapping`")),
        },
        (Some(_), Some(_)) => return Err(ApiError::bad_request("give at most one of `mapping` and `mapping_name`")),
    };
    let block = extract(&document, format, &mapping)?;
    let mut out = json!({"block": block});
    if let Some(pid) = req.dataset {
        let registry = s.registry.clone();
        let block = block.clone();
        let d = blocking(move || Ok(registry.apply_block(&pid, &block)?)).await?;
        out["dataset"] = serde_json::to_value(d).map_err(|e| ApiError::internal(e.to_string()))?;
    }
    Ok(Json(out))
}

// ---- exploration sessions

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExploreQuery {
    dataset: String,
    template: Option<String>,
    version: Option<u32>,
}

pub async fn explore(State(s): State<AppState>, q: Result<Query<ExploreQuery>, QueryRejection>) -> ApiResult<Json<Value>> {
    let Query(q) = q.map_err(query_rejected)?;
    let registry = s.registry.clone();
    let opened = blocking(move || open_session(&registry, &q.dataset, q.version, q.template.as_deref())).await?;
    let token = opened.key.token();
    let mut v = json!({
        "token": token,
        "app_url": format!("/app/#/session/{token}"),
        "session_url": format!("/api/sessions/{token}"),
        "dataset_pid": opened.dataset.pid,
        "version": opened.dataset.version,
        "template_pid": opened.key.template,
        "template_id": opened.template.id,
    });
    if let Some(image) = opened.image {
        v["image_pid"] = json!(image);
    }
    Ok(Json(v))
}

pub async fn get_session(State(s): State<AppState>, token: Result<Path<String>, PathRejection>) -> ApiResult<Json<Value>> {
    let Path(token) = token.map_err(path_rejected)?;
    let registry = s.registry.clone();
    let t = token.clone();
    let opened = blocking(move || open_token(&registry, &t)).await?;
    let template: Value = serde_json::from_slice(&opened.template_bytes)
        .map_err(|e| ApiError::new(ErrorCode::InvalidTemplate, e.to_string()))?;
    let mut v = json!({
        "token": token,
        "dataset_pid": opened.dataset.pid,
        "version": opened.dataset.version,
        "dataset_title": opened.dataset.title,
        "template_pid": opened.key.template,
        "template": template,
    });
    if let Some(image) = opened.image {
        v["image_pid"] = json!(image);
    }
    Ok(Json(v))
}

// ---- single-page app

pub async fn app_index(State(s): State<AppState>) -> ApiResult {
    serve_static(&s, "index.html").await
}

pub async fn app_asset(State(s): State<AppState>, p: Result<Path<String>, PathRejection>) -> ApiResult {
    let Path(path) = p.map_err(path_rejected)?;
    serve_static(&s, &path).await
}

async fn serve_static(s: &AppState, rel: &str) -> ApiResult {
    let dir = s.static_dir.as_ref().ok_or_else(|| ApiError::not_found("the web frontend is not installed"))?;
    let file = replicator_core::paths::join_within(dir, rel)
        .filter(|p| p.is_file())
        .ok_or_else(|| ApiError::not_found(format!("no asset `{rel}`")))?;
    let bytes = tokio::fs::read(&file).await.map_err(|e| ApiError::internal(format!("{}: {e}", file.display())))?;
    let media = mime_guess::from_path(&file).first_or_octet_stream();
    Ok(raw(media.as_ref(), bytes))
}
