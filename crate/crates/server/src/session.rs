//! Exploration sessions: a dataset version plus one of its computation
//! templates, addressed by a self-describing token.
//!
//! Tokens carry the dataset pid, version and template reference, so the
//! server keeps no session table; every lookup re-resolves against the
//! registry. Published versions never change, which keeps a token stable.

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use replicator_core::registry::{ArtifactFile, ArtifactKind, Dataset, Registry, RegistryError, Resolved};
use replicator_core::template::{parse_template, validate_template, ComputationTemplate};
use replicator_core::finding::has_errors;
use replicator_core::Finding;
use serde::{Deserialize, Serialize};

use crate::error::{ApiError, ErrorCode};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionKey {
    #[serde(rename = "d")]
    pub dataset: String,
    #[serde(rename = "v")]
    pub version: u32,
    /// Pid of the template file, or its path when it has none.
    #[serde(rename = "t")]
    pub template: String,
}

impl SessionKey {
    pub fn token(&self) -> String {
        URL_SAFE_NO_PAD.encode(serde_json::to_vec(self).expect("serializable"))
    }

    pub fn from_token(token: &str) -> Result<Self, ApiError> {
        let bad = || ApiError::bad_request("malformed session token");
        let bytes = URL_SAFE_NO_PAD.decode(token).map_err(|_| bad())?;
        serde_json::from_slice(&bytes).map_err(|_| bad())
    }
}

#[derive(Debug, Clone)]
pub struct OpenedSession {
    pub key: SessionKey,
    pub dataset: Dataset,
    pub template_file: ArtifactFile,
    pub template_bytes: Vec<u8>,
    pub template: ComputationTemplate,
    /// Pid (or path) of the dataset's container image, if it has one.
    pub image: Option<String>,
}

fn unresolvable(pid: &str, why: impl std::fmt::Display) -> ApiError {
    ApiError::new(ErrorCode::Unresolvable, format!("cannot resolve `{pid}`: {why}"))
}

fn invalid_template(message: String, details: Vec<Finding>) -> ApiError {
    ApiError::new(ErrorCode::InvalidTemplate, message).with_details(details)
}

fn file_ref(f: &ArtifactFile) -> String {
    f.pid.clone().unwrap_or_else(|| f.path.clone())
}

/// The version an explorer sees by default: the latest published one, or
/// the draft when nothing is published yet.
fn default_version(registry: &Registry, pid: &str) -> Result<Dataset, RegistryError> {
    let versions = registry.versions(pid)?;
    let latest_published = versions.iter().rev().find(|d| d.is_published());
    Ok(latest_published.or(versions.last()).cloned().expect("datasets have a version"))
}

fn find_dataset(registry: &Registry, pid: &str, version: Option<u32>) -> Result<Dataset, ApiError> {
    let result = match version {
        Some(v) => registry.get(pid, Some(v)),
        None => match registry.resolve_pid(pid) {
            Ok(Resolved::Dataset(d)) => default_version(registry, &d.pid),
            Ok(_) => return Err(unresolvable(pid, "the identifier names a file, not a dataset")),
            Err(e) => Err(e),
        },
    };
    result.map_err(|e| match e {
        RegistryError::UnknownDataset(_) | RegistryError::UnknownScheme(_) | RegistryError::Unresolvable { .. } => {
            unresolvable(pid, e)
        }
        other => other.into(),
    })
}

/// Resolves a dataset and its template. `template` is a file pid or path;
/// the dataset's first template file when `None`.
pub fn open_session(
    registry: &Registry,
    dataset_pid: &str,
    version: Option<u32>,
    template: Option<&str>,
) -> Result<OpenedSession, ApiError> {
    let dataset = find_dataset(registry, dataset_pid, version)?;
    let file = match template {
        Some(t) => match dataset.find_file(t) {
            Some(f) => f.clone(),
            None => {
                return Err(match registry.resolve_pid(t) {
                    Ok(_) => invalid_template(format!("`{t}` is not a file of dataset `{}`", dataset.pid), Vec::new()),
                    Err(e) => unresolvable(t, e),
                })
            }
        },
        None => dataset.files_of(ArtifactKind::WebappTemplate).next().cloned().ok_or_else(|| {
            invalid_template(format!("dataset `{}` has no computation template file", dataset.pid), Vec::new())
        })?,
    };
    if file.kind != ArtifactKind::WebappTemplate {
        return Err(invalid_template(format!("`{}` is a {} file, not a computation template", file.path, file.kind), Vec::new()));
    }
    let bytes = file
        .checksum
        .as_deref()
        .filter(|_| file.stored)
        .and_then(|c| registry.blob(c))
        .ok_or_else(|| unresolvable(&file_ref(&file), "the template's bytes are not stored in this registry"))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| invalid_template(format!("`{}` is not UTF-8", file.path), Vec::new()))?;
    let parsed = parse_template(&text).map_err(ApiError::from)?;
    let findings = validate_template(&parsed);
    if has_errors(&findings) {
        return Err(invalid_template(format!("`{}` does not validate", file.path), findings));
    }
    let image = dataset.files_of(ArtifactKind::Image).next().map(file_ref);
    Ok(OpenedSession {
        key: SessionKey { dataset: dataset.pid.clone(), version: dataset.version, template: file_ref(&file) },
        dataset,
        template_file: file,
        template_bytes: bytes,
        template: parsed,
        image,
    })
}

/// Re-opens the session a token names.
pub fn open_token(registry: &Registry, token: &str) -> Result<OpenedSession, ApiError> {
    let key = SessionKey::from_token(token)?;
    open_session(registry, &key.dataset, Some(key.version), Some(&key.template))
}
