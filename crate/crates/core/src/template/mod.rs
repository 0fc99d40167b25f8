//! Computation templates.
//!
//! A template is a single UTF-8 JSON document (`*.ct.json`) that fully
//! configures an interactive computation: the parameters shown to the user,
//! the input files (with `{{ name }}` placeholder tokens and editable
//! regions), the command to run, the outputs to collect and the resource
//! limits of the sandbox.

mod regions;
mod validate;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use regions::{contains_marker, find_regions, EditableRegion, RegionError};
pub use validate::{validate_template, Issue, SOFT_PARAMETER_CAP};
pub(crate) use validate::range_violation as validate_range;

/// Whole-value match of a text parameter's validation pattern. An invalid
/// pattern matches nothing.
pub fn pattern_matches(pattern: &str, value: &str) -> bool {
    validate::anchored(pattern).map(|re| re.is_match(value)).unwrap_or(false)
}

/// Value of the required top-level `"schema"` field.
pub const SCHEMA_VERSION: u32 = 1;

/// Image reference selecting the local process sandbox instead of a container.
pub const PROCESS_IMAGE: &str = "process";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputationTemplate {
    pub schema: u32,
    pub id: String,
    pub title: String,
    #[serde(default)]
    pub description: String,
    pub image_ref: String,
    pub entry_command: Vec<String>,
    #[serde(default)]
    pub parameters: Vec<Parameter>,
    #[serde(default)]
    pub input_files: Vec<FileTemplate>,
    #[serde(default)]
    pub outputs: Vec<OutputDecl>,
    #[serde(default)]
    pub limits: ResourceLimits,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defaults_note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    #[serde(default)]
    pub label: String,
    #[serde(flatten)]
    pub kind: ParameterKind,
    #[serde(default)]
    pub delivery: Delivery,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParameterKind {
    Range {
        min: f64,
        max: f64,
        step: f64,
        default: f64,
    },
    Choice {
        options: Vec<String>,
        default: String,
    },
    Text {
        default: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pattern: Option<String>,
    },
    /// Exposes the editable regions of one input file.
    FileEdit { file: String },
}

impl ParameterKind {
    pub fn name(&self) -> &'static str {
        match self {
            ParameterKind::Range { .. } => "range",
            ParameterKind::Choice { .. } => "choice",
            ParameterKind::Text { .. } => "text",
            ParameterKind::FileEdit { .. } => "file_edit",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Delivery {
    /// Substituted into `{{ name }}` tokens.
    #[default]
    Token,
    /// Exported as the environment variable `PARAM_<NAME>`.
    Env,
}

impl Parameter {
    /// Parameters whose value reaches the program through placeholder tokens.
    pub fn is_token_delivered(&self) -> bool {
        self.delivery == Delivery::Token && !matches!(self.kind, ParameterKind::FileEdit { .. })
    }

    pub fn env_name(&self) -> String {
        format!("PARAM_{}", self.name.to_ascii_uppercase())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileTemplate {
    pub path: String,
    pub content: String,
    #[serde(default = "default_comment_prefix", skip_serializing_if = "is_default_prefix")]
    pub comment_prefix: String,
}

fn default_comment_prefix() -> String {
    "#".to_owned()
}

fn is_default_prefix(p: &String) -> bool {
    p == "#"
}

impl FileTemplate {
    pub fn new(path: impl Into<String>, content: impl Into<String>) -> Self {
        Self { path: path.into(), content: content.into(), comment_prefix: default_comment_prefix() }
    }

    /// Editable regions derived from the marker lines in `content`.
    pub fn editable_regions(&self) -> Result<Vec<EditableRegion>, RegionError> {
        find_regions(&self.content, &self.comment_prefix)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputDecl {
    pub pattern: String,
    pub render_hint: RenderHint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderHint {
    CsvChart,
    Image,
    TextLog,
    Download,
}

/// Sandbox limits. `cpu_seconds` is expected to stay below
/// `wall_seconds` times the parallelism the program uses; this is not
/// enforced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceLimits {
    pub wall_seconds: u64,
    pub cpu_seconds: u64,
    pub memory_bytes: u64,
    #[serde(default)]
    pub network_enabled: bool,
}

impl Default for ResourceLimits {
    fn default() -> Self {
        Self {
            wall_seconds: 300,
            cpu_seconds: 300,
            memory_bytes: 1 << 30,
            network_enabled: false,
        }
    }
}

impl ComputationTemplate {
    pub fn parameter(&self, name: &str) -> Option<&Parameter> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn file(&self, path: &str) -> Option<&FileTemplate> {
        self.input_files.iter().find(|f| f.path == path)
    }

    /// The parameter editing `path`, if any.
    pub fn file_edit_parameter(&self, path: &str) -> Option<&Parameter> {
        self.parameters
            .iter()
            .find(|p| matches!(&p.kind, ParameterKind::FileEdit { file } if file == path))
    }
}

/// `[A-Za-z_][A-Za-z0-9_]*`
pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TemplateError {
    #[error("syntax error at byte {offset} (line {line}, column {column}): {message}")]
    Syntax { offset: usize, line: usize, column: usize, message: String },
    #[error("schema error at {path}: {rule}: {message}")]
    Schema { path: String, rule: String, message: String },
    #[error("token `{{{{ {token} }}}}` in {file} line {line} has no matching parameter")]
    TokenWithoutParameter { token: String, file: String, line: usize },
    #[error("parameter `{name}` is never referenced and is not env-delivered")]
    ParameterUnreferenced { name: String },
    #[error("default of parameter `{name}` violates its constraints: {detail}")]
    DefaultOutOfRange { name: String, detail: String },
}

impl TemplateError {
    pub fn rule(&self) -> &str {
        match self {
            TemplateError::Syntax { .. } => "syntax",
            TemplateError::Schema { rule, .. } => rule,
            TemplateError::TokenWithoutParameter { .. } => "token-without-parameter",
            TemplateError::ParameterUnreferenced { .. } => "parameter-unreferenced",
            TemplateError::DefaultOutOfRange { .. } => "default-out-of-range",
        }
    }

    pub fn to_finding(&self) -> crate::finding::Finding {
        let location = match self {
            TemplateError::Syntax { line, column, .. } => format!("line {line}, column {column}"),
            TemplateError::Schema { path, .. } => path.clone(),
            TemplateError::TokenWithoutParameter { file, line, .. } => format!("{file}:{line}"),
            TemplateError::ParameterUnreferenced { name } | TemplateError::DefaultOutOfRange { name, .. } => {
                format!("$.parameters[{name}]")
            }
        };
        crate::finding::Finding::error(self.rule(), location, self.to_string())
    }
}

/// Parses and validates a template document.
///
/// Returns the first violated rule as an error; warnings are not errors.
pub fn parse_template(document: &str) -> Result<ComputationTemplate, TemplateError> {
    let value: serde_json::Value = serde_json::from_str(document).map_err(|e| {
        let (line, column) = (e.line(), e.column());
        TemplateError::Syntax {
            offset: byte_offset(document, line, column),
            line,
            column,
            message: e.to_string(),
        }
    })?;
    let template: ComputationTemplate =
        serde_path_to_error::deserialize(value).map_err(|e| {
            let path = json_path(&e.path().to_string());
            let message = e.inner().to_string();
            TemplateError::Schema { path, rule: serde_rule(&message).to_owned(), message }
        })?;
    if let Some(issue) = validate::check(&template).into_iter().find(Issue::is_error) {
        return Err(issue.into_error());
    }
    Ok(template)
}

/// Deterministic pretty JSON with a trailing newline.
pub fn serialize_template(template: &ComputationTemplate) -> String {
    let mut out = serde_json::to_string_pretty(template).expect("template serialization is infallible");
    out.push('\n');
    out
}

fn json_path(serde_path: &str) -> String {
    if serde_path == "." || serde_path.is_empty() {
        "$".to_owned()
    } else {
        format!("$.{serde_path}")
    }
}

fn serde_rule(message: &str) -> &'static str {
    if message.starts_with("missing field") {
        "missing-field"
    } else if message.starts_with("unknown variant") {
        "unknown-variant"
    } else if message.starts_with("unknown field") {
        "unknown-field"
    } else {
        "type"
    }
}

/// Converts serde_json's 1-based line/column into a byte offset.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}
