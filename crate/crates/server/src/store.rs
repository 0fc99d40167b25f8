//! Templates served under `/api/templates`, kept as the bytes they were
//! loaded from.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use replicator_core::template::{parse_template, ComputationTemplate, TemplateError};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone)]
pub struct StoredTemplate {
    pub bytes: Vec<u8>,
    pub template: ComputationTemplate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TemplateSummary {
    pub id: String,
    pub title: String,
    pub description: String,
    pub image_ref: String,
    pub parameter_count: usize,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Invalid { path: PathBuf, source: TemplateError },
    #[error("{path}: template id `{id}` is already registered")]
    DuplicateId { path: PathBuf, id: String },
}

#[derive(Debug, Clone, Default)]
pub struct TemplateStore {
    by_id: BTreeMap<String, StoredTemplate>,
}

impl TemplateStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads every `*.ct.json` file directly inside `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, StoreError> {
        let io = |source| StoreError::Io { path: dir.to_path_buf(), source };
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(".ct.json")))
            .collect();
        paths.sort();
        let mut store = Self::new();
        for path in paths {
            let bytes = std::fs::read(&path).map_err(|source| StoreError::Io { path: path.clone(), source })?;
            store.insert(bytes).map_err(|e| match e {
                StoreError::Invalid { source, .. } => StoreError::Invalid { path: path.clone(), source },
                StoreError::DuplicateId { id, .. } => StoreError::DuplicateId { path: path.clone(), id },
                other => other,
            })?;
        }
        Ok(store)
    }

    /// Registers a template document; returns its id.
    pub fn insert(&mut self, bytes: Vec<u8>) -> Result<String, StoreError> {
        let text = String::from_utf8_lossy(&bytes);
        let template = parse_template(&text).map_err(|source| StoreError::Invalid { path: PathBuf::new(), source })?;
        let id = template.id.clone();
        if self.by_id.contains_key(&id) {
            return Err(StoreError::DuplicateId { path: PathBuf::new(), id });
        }
        self.by_id.insert(id.clone(), StoredTemplate { bytes, template });
        Ok(id)
    }

    pub fn get(&self, id: &str) -> Option<&StoredTemplate> {
        self.by_id.get(id)
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    pub fn summaries(&self) -> Vec<TemplateSummary> {
        self.by_id
            .values()
            .map(|s| TemplateSummary {
                id: s.template.id.clone(),
                title: s.template.title.clone(),
                description: s.template.description.clone(),
                image_ref: s.template.image_ref.clone(),
                parameter_count: s.template.parameters.len(),
            })
            .collect()
    }
}
