//! Workspace capture and the artifacts derived from it.
//!
//! [`capture_workspace`] records every module of a workspace (origin,
//! revision, local changes) into an [`InstallPlan`]. From a plan,
//! [`emit_install_script`] writes a POSIX shell script that rebuilds the
//! workspace and [`emit_container_recipe`] a Dockerfile that runs that script
//! on a pinned base image. [`lint_recipe`] checks any Dockerfile against the
//! container rules.

mod git;
mod manifest;
mod recipe;
mod script;

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::finding::Finding;
use crate::paths::check_relative;

pub use git::{GitInspector, ModuleState, VcsInspector};
pub use manifest::{order_modules, parse_manifest, Manifest, MANIFEST_FILE};
pub use recipe::{
    emit_container_recipe, is_pinned_image, lint_recipe, lint_recipe_file, LintRule, RecipeError,
};
pub use script::emit_install_script;

/// One version-controlled source module of a workspace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleRecord {
    pub name: String,
    pub origin: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub persistent_id: Option<String>,
    pub revision: String,
    /// Output of the VCS diff against `revision`, untracked files included.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch: Option<String>,
    pub subdir: String,
    /// Names of modules that must be installed before this one.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub depends_on: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PackageManager {
    Apt,
    Pip,
    Other(String),
}

impl fmt::Display for PackageManager {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Apt => "apt",
            Self::Pip => "pip",
            Self::Other(name) => name,
        })
    }
}

impl FromStr for PackageManager {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "apt" => Self::Apt,
            "pip" => Self::Pip,
            other => Self::Other(other.to_owned()),
        })
    }
}

impl Serialize for PackageManager {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PackageManager {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(s.parse().unwrap_or_else(|never| match never {}))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PinnedPackage {
    pub manager: PackageManager,
    pub name: String,
    pub version: String,
}

impl PinnedPackage {
    pub fn new(manager: PackageManager, name: &str, version: &str) -> Self {
        Self { manager, name: name.to_owned(), version: version.to_owned() }
    }

    /// The `name<sep>version` spelling the package manager expects.
    pub fn spec(&self) -> String {
        match self.manager {
            PackageManager::Pip => format!("{}=={}", self.name, self.version),
            _ => format!("{}={}", self.name, self.version),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstallPlan {
    /// In dependency order.
    pub modules: Vec<ModuleRecord>,
    #[serde(default)]
    pub system_packages: Vec<PinnedPackage>,
    /// Run once from the install directory after all modules are in place.
    #[serde(default)]
    pub configure_command: String,
    pub created_at: DateTime<Utc>,
}

/// A plan plus the non-fatal observations made while capturing it.
#[derive(Debug, Clone)]
pub struct Capture {
    pub plan: InstallPlan,
    pub warnings: Vec<Finding>,
}

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("{0}: not a working copy")]
    NotAWorkingCopy(PathBuf),
    #[error("{0}: HEAD does not name a commit")]
    DetachedUnknownRevision(PathBuf),
    #[error("the git command-line tool is not available")]
    VcsToolUnavailable,
    #[error("{0}: no remote to fetch from")]
    MissingOrigin(PathBuf),
    #[error("{dir}: `git {command}` failed: {stderr}")]
    Vcs { dir: PathBuf, command: String, stderr: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{file}:{line}: {message}")]
    Manifest { file: String, line: usize, message: String },
    #[error("dependency cycle between modules: {}", .0.join(", "))]
    DependencyCycle(Vec<String>),
}

/// Captures `root` using the system git.
///
/// `manifest` holds the text of a dependency manifest. When it is `None`,
/// `root/deps.txt` is read if it exists.
pub fn capture_workspace(root: &Path, manifest: Option<&str>) -> Result<Capture, CaptureError> {
    capture_workspace_with(&GitInspector::default(), root, manifest)
}

pub fn capture_workspace_with(
    inspector: &dyn VcsInspector,
    root: &Path,
    manifest: Option<&str>,
) -> Result<Capture, CaptureError> {
    let io = |source| CaptureError::Io { path: root.to_path_buf(), source };
    let mut names = Vec::new();
    for entry in std::fs::read_dir(root).map_err(io)? {
        let entry = entry.map_err(io)?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with('.') || !entry.file_type().map_err(io)?.is_dir() {
            continue;
        }
        names.push(name);
    }
    names.sort();

    let mut warnings = Vec::new();
    if names.is_empty() {
        warnings.push(Finding::warning(
            "empty-workspace",
            root.display().to_string(),
            "workspace contains no modules",
        ));
    }

    let manifest_text = match manifest {
        Some(text) => Some(text.to_owned()),
        None => match std::fs::read_to_string(root.join(MANIFEST_FILE)) {
            Ok(text) => Some(text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(source) => {
                return Err(CaptureError::Io { path: root.join(MANIFEST_FILE), source })
            }
        },
    };
    let parsed = match &manifest_text {
        Some(text) => parse_manifest(text)?,
        None => {
            if names.len() > 1 {
                warnings.push(Finding::warning(
                    "no-manifest",
                    root.display().to_string(),
                    format!("no {MANIFEST_FILE}; modules are installed in directory-name order"),
                ));
            }
            Manifest::default()
        }
    };
    let order = order_modules(&names, &parsed)?;

    // Inspection is read-only and independent per module.
    let states: Vec<Result<ModuleState, CaptureError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = order
            .iter()
            .map(|name| {
                let dir = root.join(name);
                scope.spawn(move || inspector.inspect(&dir))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("inspector panicked")).collect()
    });

    let mut modules = Vec::with_capacity(order.len());
    for (name, state) in order.iter().zip(states) {
        let state = state?;
        if !state.published {
            warnings.push(Finding::warning(
                "unpublished-revision",
                name.clone(),
                format!("revision {} is not on any remote-tracking branch", state.revision),
            ));
        }
        modules.push(ModuleRecord {
            name: name.clone(),
            origin: state.origin,
            persistent_id: None,
            revision: state.revision,
            patch: state.patch,
            subdir: name.clone(),
            depends_on: parsed.dependencies_of(name),
        });
    }

    Ok(Capture {
        plan: InstallPlan {
            modules,
            system_packages: Vec::new(),
            configure_command: String::new(),
            created_at: Utc::now(),
        },
        warnings,
    })
}

/// Checks the plan invariants. Emitters assume a plan without errors.
pub fn validate_plan(plan: &InstallPlan) -> Vec<Finding> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    let mut seen_dirs = BTreeSet::new();
    for (i, m) in plan.modules.iter().enumerate() {
        let at = format!("$.modules[{i}]");
        if m.name.is_empty() || !seen.insert(m.name.as_str()) {
            out.push(Finding::error("module-name", &at, format!("module name `{}` is empty or duplicated", m.name)));
        }
        if m.revision.trim().is_empty() {
            out.push(Finding::error("revision", &at, format!("module `{}` has no revision", m.name)));
        }
        if m.origin.trim().is_empty() && m.persistent_id.as_deref().is_none_or(|p| p.trim().is_empty()) {
            out.push(Finding::error("origin", &at, format!("module `{}` has neither origin nor persistent id", m.name)));
        }
        if let Some(pid) = &m.persistent_id {
            if script::pid_url(pid).is_none() {
                out.push(Finding::error("persistent-id", &at, format!("cannot resolve persistent id `{pid}`")));
            }
        }
        if let Err(why) = check_relative(&m.subdir) {
            out.push(Finding::error("subdir", &at, format!("subdir `{}`: {why}", m.subdir)));
        } else if !seen_dirs.insert(m.subdir.as_str()) {
            out.push(Finding::error("subdir", &at, format!("subdir `{}` used twice", m.subdir)));
        }
        for dep in &m.depends_on {
            if !plan.modules[..i].iter().any(|earlier| &earlier.name == dep) {
                out.push(Finding::error(
                    "dependency-order",
                    &at,
                    format!("module `{}` depends on `{dep}`, which is not installed before it", m.name),
                ));
            }
        }
    }
    for (i, p) in plan.system_packages.iter().enumerate() {
        let at = format!("$.system_packages[{i}]");
        if p.version.trim().is_empty() {
            out.push(Finding::error("unpinned-package", &at, format!("package `{}` has no version", p.name)));
        }
        if !is_package_word(&p.name) || !is_package_word(&p.version) {
            out.push(Finding::error("package-spelling", &at, format!("package `{}={}` has unsupported characters", p.name, p.version)));
        }
        if let PackageManager::Other(m) = &p.manager {
            if !is_package_word(m) {
                out.push(Finding::error("package-spelling", &at, format!("package manager `{m}` has unsupported characters")));
            }
        }
    }
    out
}

fn is_package_word(s: &str) -> bool {
    !s.is_empty()
        && s.bytes().all(|b| b.is_ascii_alphanumeric() || b"._+-:~".contains(&b))
        && !s.starts_with('-')
}
