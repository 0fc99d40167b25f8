//! Creating a dataset from a manifest file and the files beside it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    io_err, ArtifactKind, CrossLink, Dataset, FileSource, NewDataset, NewFile, Registry, RegistryError, Verification,
};
use crate::paths::join_within;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    #[serde(default)]
    pub pid: Option<String>,
    pub title: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub authors: Vec<String>,
    #[serde(default)]
    pub keywords: Vec<String>,
    #[serde(default)]
    pub files: Vec<ManifestFile>,
    #[serde(default)]
    pub links: Vec<CrossLink>,
    #[serde(default)]
    pub verifications: Vec<Verification>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    pub path: String,
    pub kind: ArtifactKind,
    pub license: String,
    #[serde(default)]
    pub media_type: Option<String>,
    #[serde(default)]
    pub links: Vec<CrossLink>,
    /// Set for files whose bytes live elsewhere; otherwise the file is read
    /// from `path` relative to the manifest.
    #[serde(default)]
    pub external: Option<ExternalFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalFile {
    pub pid: Option<String>,
    pub checksum: Option<String>,
    pub size_bytes: Option<u64>,
}

impl Registry {
    /// Creates a draft dataset described by the manifest at `path`.
    pub fn import_manifest(&self, path: &Path) -> Result<Dataset, RegistryError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let m: DatasetManifest = serde_path_to_error::deserialize(de)
            .map_err(|e| RegistryError::InvalidRequest(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        self.import(&m, base)
    }

    pub fn import(&self, m: &DatasetManifest, base: &Path) -> Result<Dataset, RegistryError> {
        // Read everything first so a bad path leaves no half-made dataset.
        let mut sources = Vec::with_capacity(m.files.len());
        for f in &m.files {
            sources.push(match &f.external {
                Some(e) => FileSource::External { pid: e.pid.clone(), checksum: e.checksum.clone(), size_bytes: e.size_bytes },
                None => {
                    let p = join_within(base, &f.path).ok_or_else(|| {
                        RegistryError::InvalidRequest(format!("file path `{}` is not a safe relative path", f.path))
                    })?;
                    FileSource::Bytes(std::fs::read(&p).map_err(io_err(&p))?)
                }
            });
        }
        let d = self.create_dataset(NewDataset {
            pid: m.pid.clone(),
            title: m.title.clone(),
            description: m.description.clone(),
            authors: m.authors.clone(),
            keywords: m.keywords.clone(),
        })?;
        let mut d = d;
        for (f, source) in m.files.iter().zip(sources) {
            d = self.add_file(
                &d.pid,
                NewFile {
                    path: f.path.clone(),
                    kind: f.kind,
                    license: f.license.clone(),
                    media_type: f.media_type.clone(),
                    source,
                    links: f.links.clone(),
                },
            )?;
        }
        for l in &m.links {
            d = self.add_link(&d.pid, None, l.clone())?;
        }
        for v in &m.verifications {
            d = self.add_verification(&d.pid, v.clone())?;
        }
        Ok(d)
    }
}
