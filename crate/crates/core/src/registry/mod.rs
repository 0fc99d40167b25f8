//! Versioned datasets of research-software artifacts.
//!
//! On disk a registry is a directory with
//!
//! ```text
//! blobs/<sha256>                      file contents, content addressed
//! datasets/<sha256(pid)>/v<N>/dataset.json
//! ```
//!
//! Published versions are written once and never rewritten. Changing a
//! published dataset opens draft version N+1 under the same pid.

mod bag;
mod import;
mod ladder;
mod model;
mod review;
mod verify;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{RwLock, RwLockReadGuard, RwLockWriteGuard};

use chrono::Utc;
use thiserror::Error;

use crate::crosswalk::{merge_block, MetadataBlock};
use crate::finding::{has_errors, Finding};
use crate::paths::check_relative;
use crate::sha256_hex;

pub use bag::export_bag;
pub use import::{DatasetManifest, ExternalFile, ManifestFile};
pub use ladder::{
    classify_ladder, companion_recipes, BlobSource, LadderAssessment, LadderPolicy, LadderRung, PredicateResult,
    DEFAULT_OPEN_LICENSES,
};
pub use model::{ArtifactFile, ArtifactKind, CrossLink, Dataset, DatasetState, Relation, Verification};
pub use review::{default_block_requirements, review_checklist, BlockRequirements};
pub use verify::{OutputCheck, VerificationOutcome};

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("persistent identifier `{0}` is already in use")]
    DuplicatePid(String),
    #[error("dataset `{pid}` version {version} is published and cannot change")]
    FrozenDataset { pid: String, version: u32 },
    #[error("review found {} error(s)", .0.iter().filter(|f| f.is_error()).count())]
    ReviewFailed(Vec<Finding>),
    #[error("unknown dataset `{0}`")]
    UnknownDataset(String),
    #[error("dataset `{pid}` has no version {version}")]
    UnknownVersion { pid: String, version: u32 },
    #[error("dataset `{pid}` has no file `{path}`")]
    UnknownFile { pid: String, path: String },
    #[error("`{0}` has no supported scheme prefix (local:, doi:, swh:)")]
    UnknownScheme(String),
    #[error("cannot resolve `{pid}`: {reason}")]
    Unresolvable { pid: String, reason: String },
    #[error("{0}")]
    InvalidRequest(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Corrupt { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RegistryError + '_ {
    move |source| RegistryError::Io { path: path.to_path_buf(), source }
}

/// What a persistent identifier points to.
#[derive(Debug, Clone, PartialEq)]
pub enum Resolved {
    Dataset(Dataset),
    File {
        dataset: String,
        version: u32,
        file: ArtifactFile,
        /// Location of the stored bytes.
        blob: Option<PathBuf>,
    },
    /// Retrieval location outside the registry.
    External { url: String },
}

/// Resolves identifiers of one scheme that the registry does not hold.
pub trait PidResolver: Send + Sync {
    fn resolve(&self, pid: &str) -> Result<Resolved, RegistryError>;
}

/// Offline default for `doi:` and `swh:`: always unresolvable.
pub struct StubResolver;

impl PidResolver for StubResolver {
    fn resolve(&self, pid: &str) -> Result<Resolved, RegistryError> {
        let scheme = pid.split(':').next().unwrap_or_default();
        Err(RegistryError::Unresolvable {
            pid: pid.to_owned(),
            reason: format!("no resolver for `{scheme}:` identifiers is configured; this registry works offline"),
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct NewDataset {
    pub pid: Option<String>,
    pub title: String,
    pub description: String,
    pub authors: Vec<String>,
    pub keywords: Vec<String>,
}

#[derive(Debug, Clone)]
pub enum FileSource {
    /// Content stored in the registry.
    Bytes(Vec<u8>),
    /// Content held elsewhere, referenced by identifier.
    External { pid: Option<String>, checksum: Option<String>, size_bytes: Option<u64> },
}

#[derive(Debug, Clone)]
pub struct NewFile {
    pub path: String,
    pub kind: ArtifactKind,
    pub license: String,
    /// Guessed from the path when absent.
    pub media_type: Option<String>,
    pub source: FileSource,
    pub links: Vec<CrossLink>,
}

/// Partial update of the citation fields.
#[derive(Debug, Clone, Default)]
pub struct CoreMetadata {
    pub title: Option<String>,
    pub description: Option<String>,
    pub authors: Option<Vec<String>>,
    pub keywords: Option<Vec<String>>,
}

#[derive(Default)]
struct Index {
    /// pid -> versions, ascending
    datasets: BTreeMap<String, Vec<Dataset>>,
}

impl Index {
    fn head(&self, pid: &str) -> Result<&Dataset, RegistryError> {
        self.datasets
            .get(pid)
            .and_then(|v| v.last())
            .ok_or_else(|| RegistryError::UnknownDataset(pid.to_owned()))
    }

    /// Dataset pid owning file pid `pid`, if any.
    fn file_owner(&self, pid: &str) -> Option<&str> {
        self.datasets
            .iter()
            .find(|(_, versions)| versions.iter().any(|d| d.file_by_pid(pid).is_some()))
            .map(|(k, _)| k.as_str())
    }

    fn pid_in_use(&self, pid: &str) -> bool {
        self.datasets.contains_key(pid) || self.file_owner(pid).is_some()
    }
}

pub struct Registry {
    root: PathBuf,
    index: RwLock<Index>,
    resolvers: BTreeMap<String, Box<dyn PidResolver>>,
    policy: LadderPolicy,
    requirements: BlockRequirements,
}

const SCHEMES: &[&str] = &["local", "doi", "swh"];

fn scheme_of(pid: &str) -> Result<&str, RegistryError> {
    match pid.split_once(':') {
        Some((s, rest)) if SCHEMES.contains(&s) && !rest.is_empty() && !pid.contains(char::is_whitespace) => Ok(s),
        _ => Err(RegistryError::UnknownScheme(pid.to_owned())),
    }
}

impl Registry {
    /// Opens (creating if needed) the registry stored under `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, RegistryError> {
        let root = root.into();
        for sub in ["blobs", "datasets"] {
            let p = root.join(sub);
            std::fs::create_dir_all(&p).map_err(io_err(&p))?;
        }
        let mut index = Index::default();
        let datasets_dir = root.join("datasets");
        for entry in std::fs::read_dir(&datasets_dir).map_err(io_err(&datasets_dir))? {
            let dir = entry.map_err(io_err(&datasets_dir))?.path();
            if !dir.is_dir() {
                continue;
            }
            let mut versions = Vec::new();
            for v in std::fs::read_dir(&dir).map_err(io_err(&dir))? {
                let vdir = v.map_err(io_err(&dir))?.path();
                let doc = vdir.join("dataset.json");
                if !doc.is_file() {
                    continue;
                }
                let text = std::fs::read_to_string(&doc).map_err(io_err(&doc))?;
                let d: Dataset = serde_json::from_str(&text)
                    .map_err(|e| RegistryError::Corrupt { path: doc.clone(), message: e.to_string() })?;
                versions.push(d);
            }
            versions.sort_by_key(|d| d.version);
            let Some(first) = versions.first() else { continue };
            let pid = first.pid.clone();
            let contiguous = versions.iter().enumerate().all(|(i, d)| d.version as usize == i + 1 && d.pid == pid);
            if !contiguous {
                return Err(RegistryError::Corrupt { path: dir, message: "versions are not 1..N of one pid".into() });
            }
            index.datasets.insert(pid, versions);
        }
        let mut resolvers: BTreeMap<String, Box<dyn PidResolver>> = BTreeMap::new();
        resolvers.insert("doi".into(), Box::new(StubResolver));
        resolvers.insert("swh".into(), Box::new(StubResolver));
        Ok(Self {
            root,
            index: RwLock::new(index),
            resolvers,
            policy: LadderPolicy::default(),
            requirements: default_block_requirements(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn set_resolver(&mut self, scheme: &str, resolver: Box<dyn PidResolver>) {
        self.resolvers.insert(scheme.to_owned(), resolver);
    }

    pub fn set_policy(&mut self, policy: LadderPolicy) {
        self.policy = policy;
    }

    pub fn policy(&self) -> &LadderPolicy {
        &self.policy
    }

    pub fn set_block_requirements(&mut self, requirements: BlockRequirements) {
        self.requirements = requirements;
    }

    fn read(&self) -> RwLockReadGuard<'_, Index> {
        self.index.read().unwrap_or_else(|p| p.into_inner())
    }

    fn write(&self) -> RwLockWriteGuard<'_, Index> {
        self.index.write().unwrap_or_else(|p| p.into_inner())
    }

    fn dataset_dir(&self, pid: &str) -> PathBuf {
        self.root.join("datasets").join(sha256_hex(pid.as_bytes()))
    }

    fn blob_path(&self, checksum: &str) -> PathBuf {
        self.root.join("blobs").join(checksum)
    }

    fn write_atomic(&self, path: &Path, bytes: &[u8]) -> Result<(), RegistryError> {
        let dir = path.parent().expect("registry paths have a parent");
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let tmp = dir.join(format!(".tmp-{}", uuid::Uuid::new_v4().simple()));
        let mut f = std::fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).and_then(|_| f.sync_all()).map_err(io_err(&tmp))?;
        std::fs::rename(&tmp, path).map_err(io_err(path))
    }

    fn persist(&self, d: &Dataset) -> Result<(), RegistryError> {
        let path = self.dataset_dir(&d.pid).join(format!("v{}", d.version)).join("dataset.json");
        let mut json = serde_json::to_string_pretty(d).expect("dataset serializes");
        json.push('\n');
        self.write_atomic(&path, json.as_bytes())
    }

    fn store_blob(&self, bytes: &[u8]) -> Result<String, RegistryError> {
        let sum = sha256_hex(bytes);
        let path = self.blob_path(&sum);
        if !path.exists() {
            self.write_atomic(&path, bytes)?;
        }
        Ok(sum)
    }

    /// Bytes stored under `checksum`.
    pub fn blob(&self, checksum: &str) -> Option<Vec<u8>> {
        if checksum.len() != 64 || !checksum.bytes().all(|b| b.is_ascii_hexdigit()) {
            return None;
        }
        std::fs::read(self.blob_path(checksum)).ok()
    }

    pub fn create_dataset(&self, new: NewDataset) -> Result<Dataset, RegistryError> {
        let pid = new.pid.unwrap_or_else(|| format!("local:ds-{}", uuid::Uuid::new_v4().simple()));
        scheme_of(&pid)?;
        let mut index = self.write();
        if index.pid_in_use(&pid) {
            return Err(RegistryError::DuplicatePid(pid));
        }
        let mut d = Dataset::new(pid.clone(), new.title);
        d.description = new.description;
        d.authors = new.authors;
        d.keywords = new.keywords;
        self.persist(&d)?;
        index.datasets.insert(pid, vec![d.clone()]);
        Ok(d)
    }

    pub fn get(&self, pid: &str, version: Option<u32>) -> Result<Dataset, RegistryError> {
        let index = self.read();
        let versions = index.datasets.get(pid).ok_or_else(|| RegistryError::UnknownDataset(pid.to_owned()))?;
        match version {
            None => Ok(versions.last().expect("at least one version").clone()),
            Some(v) => versions
                .iter()
                .find(|d| d.version == v)
                .cloned()
                .ok_or(RegistryError::UnknownVersion { pid: pid.to_owned(), version: v }),
        }
    }

    pub fn versions(&self, pid: &str) -> Result<Vec<Dataset>, RegistryError> {
        self.read().datasets.get(pid).cloned().ok_or_else(|| RegistryError::UnknownDataset(pid.to_owned()))
    }

    /// Latest version of every dataset, ordered by pid.
    pub fn list(&self) -> Vec<Dataset> {
        self.read().datasets.values().filter_map(|v| v.last().cloned()).collect()
    }

    /// Runs `f` on the editable head of `pid`, opening a new draft version
    /// first if the head is published.
    fn mutate<T>(
        &self,
        pid: &str,
        f: impl FnOnce(&Index, &mut Dataset) -> Result<T, RegistryError>,
    ) -> Result<(Dataset, T), RegistryError> {
        let mut index = self.write();
        let head = index.head(pid)?;
        let mut draft = head.clone();
        let new_version = head.is_published();
        if new_version {
            draft.version += 1;
            draft.state = DatasetState::Draft;
            draft.published_at = None;
        }
        let out = f(&index, &mut draft)?;
        self.persist(&draft)?;
        let versions = index.datasets.get_mut(pid).expect("head exists");
        if new_version {
            versions.push(draft.clone());
        } else {
            *versions.last_mut().expect("head exists") = draft.clone();
        }
        Ok((draft, out))
    }

    /// Returns the draft head, opening version N+1 if N is published.
    pub fn open_draft(&self, pid: &str) -> Result<Dataset, RegistryError> {
        self.mutate(pid, |_, _| Ok(())).map(|(d, _)| d)
    }

    pub fn update_metadata(&self, pid: &str, update: CoreMetadata) -> Result<Dataset, RegistryError> {
        self.mutate(pid, |_, d| {
            if let Some(t) = update.title {
                d.title = t;
            }
            if let Some(t) = update.description {
                d.description = t;
            }
            if let Some(a) = update.authors {
                d.authors = a;
            }
            if let Some(k) = update.keywords {
                d.keywords = k;
            }
            Ok(())
        })
        .map(|(d, _)| d)
    }

    /// Adds a file, replacing any file with the same path.
    pub fn add_file(&self, pid: &str, new: NewFile) -> Result<Dataset, RegistryError> {
        check_relative(&new.path).map_err(|why| RegistryError::InvalidRequest(format!("file path `{}`: {why}", new.path)))?;
        for l in &new.links {
            validate_link_target(&l.target)?;
        }
        let media_type = new.media_type.clone().unwrap_or_else(|| {
            mime_guess::from_path(&new.path).first_or_octet_stream().essence_str().to_owned()
        });
        let (pid_in, checksum, size_bytes, stored) = match &new.source {
            FileSource::Bytes(bytes) => (None, Some(self.store_blob(bytes)?), Some(bytes.len() as u64), true),
            FileSource::External { pid, checksum, size_bytes } => {
                if let Some(p) = pid {
                    scheme_of(p)?;
                }
                if let Some(c) = checksum {
                    if c.len() != 64 || !c.bytes().all(|b| b.is_ascii_hexdigit()) {
                        return Err(RegistryError::InvalidRequest(format!("checksum `{c}` is not a SHA-256 hex digest")));
                    }
                }
                (pid.clone(), checksum.as_ref().map(|c| c.to_ascii_lowercase()), *size_bytes, false)
            }
        };
        self.mutate(pid, |index, d| {
            if let Some(p) = &pid_in {
                let elsewhere = index.file_owner(p).is_some_and(|owner| owner != d.pid) || index.datasets.contains_key(p);
                let same_draft = d.files.iter().any(|f| f.pid.as_deref() == Some(p) && f.path != new.path);
                if elsewhere || same_draft || *p == d.pid {
                    return Err(RegistryError::DuplicatePid(p.clone()));
                }
            }
            let previous = d.files.iter().position(|f| f.path == new.path);
            // An unchanged stored file keeps its identifier.
            let kept_pid = previous
                .map(|i| &d.files[i])
                .filter(|old| old.stored && stored && old.checksum == checksum)
                .and_then(|old| old.pid.clone());
            let file = ArtifactFile {
                pid: pid_in.clone().or(kept_pid),
                path: new.path.clone(),
                media_type,
                kind: new.kind,
                license: new.license.clone(),
                checksum,
                size_bytes,
                stored,
                links: new.links.clone(),
            };
            match previous {
                Some(i) => d.files[i] = file,
                None => d.files.push(file),
            }
            Ok(())
        })
        .map(|(d, _)| d)
    }

    pub fn remove_file(&self, pid: &str, path: &str) -> Result<Dataset, RegistryError> {
        self.mutate(pid, |_, d| {
            let i = d.files.iter().position(|f| f.path == path).ok_or_else(|| RegistryError::UnknownFile {
                pid: d.pid.clone(),
                path: path.to_owned(),
            })?;
            d.files.remove(i);
            Ok(())
        })
        .map(|(d, _)| d)
    }

    /// Adds a cross-link to the dataset, or to the file with pid or path
    /// `file` when given.
    pub fn add_link(&self, pid: &str, file: Option<&str>, link: CrossLink) -> Result<Dataset, RegistryError> {
        validate_link_target(&link.target)?;
        self.mutate(pid, |_, d| {
            let (owner, links) = match file {
                None => (d.pid.clone(), &mut d.links),
                Some(f) => {
                    let i = d
                        .files
                        .iter()
                        .position(|x| x.pid.as_deref() == Some(f) || x.path == f)
                        .ok_or_else(|| RegistryError::UnknownFile { pid: d.pid.clone(), path: f.to_owned() })?;
                    let owner = d.files[i].pid.clone().unwrap_or_else(|| d.files[i].path.clone());
                    (owner, &mut d.files[i].links)
                }
            };
            if link.target == owner {
                return Err(RegistryError::InvalidRequest(format!("`{owner}` cannot link to itself")));
            }
            if !links.contains(&link) {
                links.push(link);
            }
            Ok(())
        })
        .map(|(d, _)| d)
    }

    pub fn add_verification(&self, pid: &str, v: Verification) -> Result<Dataset, RegistryError> {
        self.mutate(pid, |_, d| {
            match d.verifications.iter_mut().find(|x| x.template_pid == v.template_pid) {
                Some(existing) => *existing = v,
                None => d.verifications.push(v),
            }
            Ok(())
        })
        .map(|(d, _)| d)
    }

    /// Merges a metadata block into the current draft. Unlike the other
    /// mutations this does not open a new version: a published head is an
    /// error.
    pub fn apply_block(&self, pid: &str, block: &MetadataBlock) -> Result<Dataset, RegistryError> {
        let mut index = self.write();
        let head = index.head(pid)?;
        if head.is_published() {
            return Err(RegistryError::FrozenDataset { pid: pid.to_owned(), version: head.version });
        }
        let mut draft = head.clone();
        merge_block(&mut draft, block);
        if &draft != head {
            self.persist(&draft)?;
            *index.datasets.get_mut(pid).and_then(|v| v.last_mut()).expect("head exists") = draft.clone();
        }
        Ok(draft)
    }

    pub fn review(&self, pid: &str, version: Option<u32>) -> Result<Vec<Finding>, RegistryError> {
        let d = self.get(pid, version)?;
        Ok(self.review_dataset(&d))
    }

    pub fn review_dataset(&self, d: &Dataset) -> Vec<Finding> {
        let index = self.read();
        let known = |p: &str| index.pid_in_use(p);
        review_checklist(d, &|c: &str| self.blob(c), &known, &self.requirements)
    }

    pub fn ladder(&self, pid: &str, version: Option<u32>) -> Result<LadderAssessment, RegistryError> {
        let d = self.get(pid, version)?;
        Ok(classify_ladder(&d, &|c: &str| self.blob(c), &self.policy))
    }

    /// Publishes the draft head after a clean review. Stored files without
    /// an identifier get a `local:` pid.
    pub fn publish(&self, pid: &str) -> Result<Dataset, RegistryError> {
        let mut index = self.write();
        let head = index.head(pid)?;
        if head.is_published() {
            return Err(RegistryError::FrozenDataset { pid: pid.to_owned(), version: head.version });
        }
        let mut d = head.clone();
        let known = |p: &str| index.pid_in_use(p);
        let findings = review_checklist(&d, &|c: &str| self.blob(c), &known, &self.requirements);
        if has_errors(&findings) {
            return Err(RegistryError::ReviewFailed(findings));
        }
        for f in d.files.iter_mut().filter(|f| f.pid.is_none() && f.stored) {
            f.pid = Some(format!("local:f-{}", uuid::Uuid::new_v4().simple()));
        }
        d.state = DatasetState::Published;
        d.published_at = Some(Utc::now());
        self.persist(&d)?;
        *index.datasets.get_mut(pid).and_then(|v| v.last_mut()).expect("head exists") = d.clone();
        Ok(d)
    }

    /// Resolves a dataset or file identifier.
    pub fn resolve_pid(&self, pid: &str) -> Result<Resolved, RegistryError> {
        let scheme = scheme_of(pid)?;
        {
            let index = self.read();
            if let Some(d) = index.datasets.get(pid).and_then(|v| v.last()) {
                return Ok(Resolved::Dataset(d.clone()));
            }
            // Latest version holding the file.
            let hit = index.datasets.values().flat_map(|v| v.iter().rev()).find_map(|d| {
                d.file_by_pid(pid).map(|f| (d.pid.clone(), d.version, f.clone()))
            });
            if let Some((dataset, version, file)) = hit {
                let blob = file
                    .checksum
                    .as_deref()
                    .filter(|_| file.stored)
                    .map(|c| self.blob_path(c))
                    .filter(|p| p.is_file());
                if blob.is_none() && scheme == "local" {
                    return Err(RegistryError::Unresolvable {
                        pid: pid.to_owned(),
                        reason: "the file's bytes are not stored in this registry".into(),
                    });
                }
                if blob.is_some() || scheme == "local" {
                    return Ok(Resolved::File { dataset, version, file, blob });
                }
            }
        }
        if scheme == "local" {
            return Err(RegistryError::Unresolvable { pid: pid.to_owned(), reason: "no such identifier in this registry".into() });
        }
        match self.resolvers.get(scheme) {
            Some(r) => r.resolve(pid),
            None => StubResolver.resolve(pid),
        }
    }

    /// Bytes of a file pid that resolves to stored content.
    pub fn read_pid(&self, pid: &str) -> Result<(ArtifactFile, Vec<u8>), RegistryError> {
        match self.resolve_pid(pid)? {
            Resolved::File { file, blob: Some(path), .. } => {
                let bytes = std::fs::read(&path).map_err(io_err(&path))?;
                Ok((file, bytes))
            }
            _ => Err(RegistryError::Unresolvable { pid: pid.to_owned(), reason: "not a stored file".into() }),
        }
    }

    /// Writes version `version` (default: latest) as a BagIt directory at
    /// `dest`.
    pub fn export(&self, pid: &str, version: Option<u32>, dest: &Path) -> Result<(), RegistryError> {
        let d = self.get(pid, version)?;
        export_bag(&d, &|c: &str| self.blob(c), dest)
    }
}

fn validate_link_target(target: &str) -> Result<(), RegistryError> {
    if target.trim().is_empty() {
        return Err(RegistryError::InvalidRequest("link target is empty".into()));
    }
    if target.contains(':') {
        scheme_of(target)?;
    } else {
        check_relative(target).map_err(|why| RegistryError::InvalidRequest(format!("link target `{target}`: {why}")))?;
    }
    Ok(())
}
