use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::crosswalk::MetadataBlock;

/// Research-software artifact kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ArtifactKind {
    #[serde(rename = "A1_source")]
    Source,
    #[serde(rename = "A2_instructions")]
    Instructions,
    #[serde(rename = "A3_documentation")]
    Documentation,
    #[serde(rename = "A4_data")]
    Data,
    #[serde(rename = "A5_automation")]
    Automation,
    #[serde(rename = "A6_recipe")]
    Recipe,
    #[serde(rename = "A7_image")]
    Image,
    #[serde(rename = "A8_webapp_template")]
    WebappTemplate,
}

impl ArtifactKind {
    pub const ALL: [ArtifactKind; 8] = [
        Self::Source,
        Self::Instructions,
        Self::Documentation,
        Self::Data,
        Self::Automation,
        Self::Recipe,
        Self::Image,
        Self::WebappTemplate,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Self::Source => "A1_source",
            Self::Instructions => "A2_instructions",
            Self::Documentation => "A3_documentation",
            Self::Data => "A4_data",
            Self::Automation => "A5_automation",
            Self::Recipe => "A6_recipe",
            Self::Image => "A7_image",
            Self::WebappTemplate => "A8_webapp_template",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == s || k.code()[..2] == *s)
    }
}

impl fmt::Display for ArtifactKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Describes,
    IsSupplementTo,
    IsDerivedFrom,
    IsSourceOf,
    Documents,
    References,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CrossLink {
    pub relation: Relation,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactFile {
    /// Minted on publish for stored files; external files bring their own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pid: Option<String>,
    pub path: String,
    pub media_type: String,
    pub kind: ArtifactKind,
    pub license: String,
    /// SHA-256 of the bytes; absent for external files of unknown content.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checksum: Option<String>,
    #[serde(default)]
    pub size_bytes: Option<u64>,
    /// Whether the bytes are held in the registry's blob store.
    #[serde(default)]
    pub stored: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub links: Vec<CrossLink>,
}

impl ArtifactFile {
    /// Has both a persistent identifier and a checksum.
    pub fn is_retrievable(&self) -> bool {
        self.pid.as_deref().is_some_and(|p| !p.is_empty()) && self.checksum.as_deref().is_some_and(|c| !c.is_empty())
    }
}

/// Declares that running a template with default bindings reproduces
/// output files with the given checksums.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verification {
    pub template_pid: String,
    /// output path -> SHA-256
    pub expected: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetState {
    Draft,
    Published,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub pid: String,
    pub version: u32,
    pub state: DatasetState,
    pub title: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub authors: Vec<String>,
    #[serde(default)]
    pub keywords: Vec<String>,
    #[serde(default)]
    pub files: Vec<ArtifactFile>,
    #[serde(default)]
    pub links: Vec<CrossLink>,
    #[serde(default)]
    pub metadata_blocks: BTreeMap<String, MetadataBlock>,
    #[serde(default)]
    pub verifications: Vec<Verification>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub published_at: Option<DateTime<Utc>>,
}

impl Dataset {
    pub fn new(pid: impl Into<String>, title: impl Into<String>) -> Self {
        Self {
            pid: pid.into(),
            version: 1,
            state: DatasetState::Draft,
            title: title.into(),
            description: String::new(),
            authors: Vec::new(),
            keywords: Vec::new(),
            files: Vec::new(),
            links: Vec::new(),
            metadata_blocks: BTreeMap::new(),
            verifications: Vec::new(),
            published_at: None,
        }
    }

    pub fn is_published(&self) -> bool {
        self.state == DatasetState::Published
    }

    pub fn file(&self, path: &str) -> Option<&ArtifactFile> {
        self.files.iter().find(|f| f.path == path)
    }

    pub fn file_by_pid(&self, pid: &str) -> Option<&ArtifactFile> {
        self.files.iter().find(|f| f.pid.as_deref() == Some(pid))
    }

    /// Looks a file up by pid, or by path when no pid matches.
    pub fn find_file(&self, pid_or_path: &str) -> Option<&ArtifactFile> {
        self.file_by_pid(pid_or_path).or_else(|| self.file(pid_or_path))
    }

    pub fn files_of(&self, kind: ArtifactKind) -> impl Iterator<Item = &ArtifactFile> {
        self.files.iter().filter(move |f| f.kind == kind)
    }
}
