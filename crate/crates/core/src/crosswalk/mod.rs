//! Declarative extraction of metadata blocks from structured documents.
//!
//! A [`MappingConfig`] lists rules of the form *path in the source document
//! → typed field of a block*. Documents in json, xml and ini are read into
//! the same tree shape first (see [`parse_document`]), so one path grammar
//! serves all three.

mod path;
mod source;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::registry::{Dataset, Registry, RegistryError};

pub use path::{evaluate, parse_path, Segment};
pub use source::parse_document;

/// Mapping from CodeMeta JSON to the `software` block.
pub const CODEMETA_MAPPING: &str = include_str!("../../mappings/codemeta.map.json");
/// Mapping from EngMeta-style XML to the `engineering` block.
pub const ENGMETA_MAPPING: &str = include_str!("../../mappings/engmeta.map.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceFormat {
    Json,
    Xml,
    Ini,
}

impl SourceFormat {
    /// Guess from a file name's extension.
    pub fn from_path(path: &std::path::Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "json" | "jsonld" => Some(Self::Json),
            "xml" => Some(Self::Xml),
            "ini" | "cfg" | "conf" | "par" => Some(Self::Ini),
            _ => None,
        }
    }
}

impl fmt::Display for SourceFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Json => "json",
            Self::Xml => "xml",
            Self::Ini => "ini",
        })
    }
}

impl FromStr for SourceFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "json" => Ok(Self::Json),
            "xml" => Ok(Self::Xml),
            "ini" => Ok(Self::Ini),
            other => Err(format!("unknown format `{other}` (expected json, xml or ini)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coercion {
    Text,
    Integer,
    Decimal,
    Date,
    ListOfText,
}

impl fmt::Display for Coercion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Text => "text",
            Self::Integer => "integer",
            Self::Decimal => "decimal",
            Self::Date => "date",
            Self::ListOfText => "list_of_text",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappingRule {
    /// Ignored when `constant` is set.
    #[serde(default)]
    pub source_path: String,
    pub target_field: String,
    pub coercion: Coercion,
    #[serde(default)]
    pub required: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappingConfig {
    #[serde(default = "one")]
    pub version: u32,
    pub source_scheme: String,
    pub target_block: String,
    pub rules: Vec<MappingRule>,
}

fn one() -> u32 {
    1
}

impl MappingConfig {
    pub fn from_json(text: &str) -> Result<Self, CrosswalkError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let m: Self = serde_path_to_error::deserialize(de).map_err(|e| CrosswalkError::InvalidMapping(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn codemeta() -> Self {
        Self::from_json(CODEMETA_MAPPING).expect("bundled mapping is valid")
    }

    pub fn engmeta() -> Self {
        Self::from_json(ENGMETA_MAPPING).expect("bundled mapping is valid")
    }

    /// Target fields must be unique and every path must parse.
    pub fn validate(&self) -> Result<(), CrosswalkError> {
        let bad = |m: String| Err(CrosswalkError::InvalidMapping(m));
        if self.target_block.trim().is_empty() {
            return bad("target_block is empty".into());
        }
        let mut seen = BTreeSet::new();
        for (i, r) in self.rules.iter().enumerate() {
            if r.target_field.trim().is_empty() {
                return bad(format!("rules[{i}]: target_field is empty"));
            }
            if !seen.insert(r.target_field.as_str()) {
                return bad(format!("rules[{i}]: target field `{}` appears more than once", r.target_field));
            }
            match &r.constant {
                Some(c) => {
                    coerce(&r.target_field, r.coercion, &[c])
                        .map_err(|e| CrosswalkError::InvalidMapping(format!("rules[{i}]: constant: {e}")))?;
                }
                None => {
                    parse_path(&r.source_path).map_err(|e| CrosswalkError::InvalidMapping(format!("rules[{i}]: {e}")))?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum FieldValue {
    Text(String),
    Integer(i64),
    Decimal(f64),
    /// `YYYY-MM-DD`
    Date(String),
    ListOfText(Vec<String>),
}

impl FieldValue {
    pub fn coercion(&self) -> Coercion {
        match self {
            Self::Text(_) => Coercion::Text,
            Self::Integer(_) => Coercion::Integer,
            Self::Decimal(_) => Coercion::Decimal,
            Self::Date(_) => Coercion::Date,
            Self::ListOfText(_) => Coercion::ListOfText,
        }
    }

    /// Values as text, one per list element.
    pub fn texts(&self) -> Vec<String> {
        match self {
            Self::Text(s) | Self::Date(s) => vec![s.clone()],
            Self::Integer(n) => vec![n.to_string()],
            Self::Decimal(x) => vec![x.to_string()],
            Self::ListOfText(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetadataBlock {
    pub name: String,
    pub fields: BTreeMap<String, FieldValue>,
}

#[derive(Debug, Error, PartialEq)]
pub enum CrosswalkError {
    #[error("document is not valid {format}: {message}")]
    ParseError { format: SourceFormat, message: String },
    #[error("required field `{field}` is missing (source path `{path}`)")]
    MissingRequired { field: String, path: String },
    #[error("field `{field}`: cannot read {value} as {expected}")]
    CoercionError { field: String, value: String, expected: Coercion },
    #[error("invalid mapping: {0}")]
    InvalidMapping(String),
}

impl CrosswalkError {
    /// The block field the error concerns.
    pub fn field(&self) -> Option<&str> {
        match self {
            Self::MissingRequired { field, .. } | Self::CoercionError { field, .. } => Some(field),
            _ => None,
        }
    }
}

fn show(v: &Value) -> String {
    let s = v.to_string();
    if s.chars().count() > 80 {
        format!("{}…", s.chars().take(80).collect::<String>())
    } else {
        s
    }
}

/// Text of a scalar, or of an object naming something: `#text`, `name`,
/// or `givenName familyName` (person records in CodeMeta and similar).
fn as_text(v: &Value) -> Option<String> {
    let s = match v {
        Value::String(s) => s.trim().to_owned(),
        Value::Number(n) => n.to_string(),
        Value::Bool(b) => b.to_string(),
        Value::Object(m) => {
            if let Some(t) = m.get("#text").or_else(|| m.get("name")).and_then(as_text) {
                t
            } else {
                let part = |k: &str| m.get(k).and_then(as_text).unwrap_or_default();
                let joined = format!("{} {}", part("givenName"), part("familyName"));
                joined.trim().to_owned()
            }
        }
        Value::Array(_) | Value::Null => return None,
    };
    (!s.is_empty()).then_some(s)
}

const NAME_KEYS: &[&str] = &["#text", "name", "givenName", "familyName"];

/// Blank strings, and records whose name keys are all blank, count as
/// absent.
fn present(v: &&Value) -> bool {
    match v {
        Value::String(s) => !s.trim().is_empty(),
        Value::Object(m) => {
            let names: Vec<&Value> = NAME_KEYS.iter().filter_map(|k| m.get(*k)).collect();
            names.is_empty() || names.iter().any(present)
        }
        _ => true,
    }
}

fn coerce(field: &str, c: Coercion, values: &[&Value]) -> Result<Option<FieldValue>, CrosswalkError> {
    let fail = |v: &Value| CrosswalkError::CoercionError { field: field.to_owned(), value: show(v), expected: c };
    if c == Coercion::ListOfText {
        let mut out = Vec::new();
        for v in values {
            match v {
                Value::Array(items) => {
                    for item in items.iter().filter(|i| !i.is_null()).filter(present) {
                        out.push(as_text(item).ok_or_else(|| fail(item))?);
                    }
                }
                other if present(other) => out.push(as_text(other).ok_or_else(|| fail(other))?),
                _ => {}
            }
        }
        return Ok((!out.is_empty()).then_some(FieldValue::ListOfText(out)));
    }
    let one = match values {
        [] => return Ok(None),
        [Value::Array(a)] if a.len() == 1 => &a[0],
        [Value::Array(a)] if a.is_empty() => return Ok(None),
        [v] => *v,
        [first, ..] => {
            return Err(CrosswalkError::CoercionError {
                field: field.to_owned(),
                value: format!("{} values starting with {}", values.len(), show(first)),
                expected: c,
            })
        }
    };
    let v = match c {
        Coercion::Text => FieldValue::Text(as_text(one).ok_or_else(|| fail(one))?),
        Coercion::Integer => {
            let n = match one {
                Value::Number(n) => n.as_i64().or_else(|| n.as_f64().filter(|x| x.fract() == 0.0 && x.abs() < 9.0e15).map(|x| x as i64)),
                Value::String(s) => s.trim().parse().ok(),
                _ => None,
            };
            FieldValue::Integer(n.ok_or_else(|| fail(one))?)
        }
        Coercion::Decimal => {
            let x = match one {
                Value::Number(n) => n.as_f64(),
                Value::String(s) => s.trim().parse::<f64>().ok(),
                _ => None,
            };
            FieldValue::Decimal(x.filter(|x| x.is_finite()).ok_or_else(|| fail(one))?)
        }
        Coercion::Date => {
            let s = match one {
                Value::String(s) => s.trim(),
                _ => return Err(fail(one)),
            };
            let d = NaiveDate::parse_from_str(s, "%Y-%m-%d")
                .ok()
                .or_else(|| DateTime::parse_from_rfc3339(s).ok().map(|d| d.date_naive()))
                .or_else(|| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S").ok().map(|d| d.date()))
                .ok_or_else(|| fail(one))?;
            FieldValue::Date(d.format("%Y-%m-%d").to_string())
        }
        Coercion::ListOfText => unreachable!(),
    };
    Ok(Some(v))
}

/// Applies `m` to an already parsed document tree.
pub fn extract_value(doc: &Value, m: &MappingConfig) -> Result<MetadataBlock, CrosswalkError> {
    m.validate()?;
    let mut block = MetadataBlock { name: m.target_block.clone(), fields: BTreeMap::new() };
    for r in &m.rules {
        let value = match &r.constant {
            Some(c) => coerce(&r.target_field, r.coercion, &[c])?,
            None => {
                let segs = parse_path(&r.source_path).expect("validated");
                let found: Vec<&Value> = evaluate(doc, &segs).into_iter().filter(present).collect();
                coerce(&r.target_field, r.coercion, &found)?
            }
        };
        match value {
            Some(v) => {
                block.fields.insert(r.target_field.clone(), v);
            }
            None if r.required => {
                return Err(CrosswalkError::MissingRequired { field: r.target_field.clone(), path: r.source_path.clone() })
            }
            None => {}
        }
    }
    Ok(block)
}

pub fn extract(document: &[u8], format: SourceFormat, m: &MappingConfig) -> Result<MetadataBlock, CrosswalkError> {
    let doc = parse_document(document, format)?;
    extract_value(&doc, m)
}

/// Top-level keys of `doc` that no rule of `m` reads.
pub fn unmapped_keys(doc: &Value, m: &MappingConfig) -> Vec<String> {
    let used: BTreeSet<String> = m
        .rules
        .iter()
        .filter(|r| r.constant.is_none())
        .filter_map(|r| match parse_path(&r.source_path).ok()?.first()? {
            Segment::Key(k) => Some(k.clone()),
            _ => None,
        })
        .collect();
    match doc {
        Value::Object(map) => map.keys().filter(|k| !used.contains(*k) && !k.starts_with('@')).cloned().collect(),
        _ => Vec::new(),
    }
}

/// CodeMeta JSON through the bundled mapping.
pub fn crosswalk_codemeta(document: &[u8]) -> Result<MetadataBlock, CrosswalkError> {
    let m = MappingConfig::codemeta();
    let doc = parse_document(document, SourceFormat::Json)?;
    for k in unmapped_keys(&doc, &m) {
        log::debug!("codemeta key `{k}` has no mapping; ignored");
    }
    extract_value(&doc, &m)
}

/// Fields that also fill the dataset's own citation metadata.
const CORE_FIELDS: &[&str] = &["title", "description", "authors", "keywords"];

/// Merges `block` into `d`: its fields overwrite same-named fields of the
/// existing block, and `title`, `description`, `authors` and `keywords`
/// also update the dataset itself.
pub fn merge_block(d: &mut Dataset, block: &MetadataBlock) {
    let target = d
        .metadata_blocks
        .entry(block.name.clone())
        .or_insert_with(|| MetadataBlock { name: block.name.clone(), fields: BTreeMap::new() });
    for (k, v) in &block.fields {
        target.fields.insert(k.clone(), v.clone());
    }
    for &field in CORE_FIELDS {
        let Some(v) = block.fields.get(field) else { continue };
        let texts = v.texts();
        match field {
            "title" => d.title = texts.join(" "),
            "description" => d.description = texts.join("\n"),
            "authors" => d.authors = texts,
            _ => d.keywords = texts,
        }
    }
}

/// Merges `block` into the draft of dataset `pid`.
pub fn apply_block(registry: &Registry, pid: &str, block: &MetadataBlock) -> Result<Dataset, RegistryError> {
    registry.apply_block(pid, block)
}

/// Dataverse-style `datasetVersion` document for a dataset's blocks.
pub fn to_dataverse_json(d: &Dataset) -> Value {
    let mut blocks = serde_json::Map::new();
    let mut citation = MetadataBlock { name: "citation".into(), fields: BTreeMap::new() };
    citation.fields.insert("title".into(), FieldValue::Text(d.title.clone()));
    if !d.description.is_empty() {
        citation.fields.insert("dsDescription".into(), FieldValue::Text(d.description.clone()));
    }
    if !d.authors.is_empty() {
        citation.fields.insert("author".into(), FieldValue::ListOfText(d.authors.clone()));
    }
    if !d.keywords.is_empty() {
        citation.fields.insert("keyword".into(), FieldValue::ListOfText(d.keywords.clone()));
    }
    let mut all = d.metadata_blocks.clone();
    let merged = all.entry("citation".into()).or_insert_with(|| MetadataBlock { name: "citation".into(), ..Default::default() });
    for (k, v) in citation.fields {
        merged.fields.entry(k).or_insert(v);
    }
    for (name, b) in &all {
        let fields: Vec<Value> = b
            .fields
            .iter()
            .map(|(k, v)| {
                let (multiple, value) = match v {
                    FieldValue::ListOfText(items) => (true, json!(items)),
                    FieldValue::Integer(n) => (false, json!(n.to_string())),
                    FieldValue::Decimal(x) => (false, json!(x.to_string())),
                    FieldValue::Text(s) | FieldValue::Date(s) => (false, json!(s)),
                };
                json!({"typeName": k, "multiple": multiple, "typeClass": "primitive", "value": value})
            })
            .collect();
        blocks.insert(name.clone(), json!({"fields": fields}));
    }
    json!({
        "persistentId": d.pid,
        "datasetVersion": {"versionNumber": d.version, "metadataBlocks": blocks}
    })
}
