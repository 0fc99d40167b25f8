//! Placeholder scanning and substitution.
//!
//! Tokens follow the grammar `{{` WS* identifier WS* `}}` where WS is a space
//! or tab. Anything else between braces is left untouched; there is no escape
//! syntax, no expressions and no control flow.

use std::collections::BTreeMap;
use std::ops::Range;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::finding::{has_errors, Finding};
use crate::paths::check_relative;
use crate::template::{
    contains_marker, ComputationTemplate, Delivery, ParameterKind, ResourceLimits,
};

static TOKEN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\{\{[ \t]*([A-Za-z_][A-Za-z0-9_]*)[ \t]*\}\}").expect("token regex")
});

/// One placeholder occurrence. `span` is a byte range into the scanned text,
/// `line` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TokenOccurrence {
    pub name: String,
    pub span: Range<usize>,
    pub line: usize,
}

/// Returns every token in `text`, ordered by position.
pub fn scan_tokens(text: &str) -> Vec<TokenOccurrence> {
    let mut line = 1;
    let mut counted = 0;
    TOKEN
        .captures_iter(text)
        .map(|caps| {
            let whole = caps.get(0).expect("group 0");
            line += text[counted..whole.start()].matches('\n').count();
            counted = whole.start();
            TokenOccurrence { name: caps[1].to_owned(), span: whole.range(), line }
        })
        .collect()
}

/// A user-supplied parameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BindingValue {
    Number(f64),
    Text(String),
    /// Replacement bodies for editable regions, keyed by region name.
    Regions(BTreeMap<String, String>),
}

impl BindingValue {
    /// The text substituted for a token, or `None` for region edits.
    pub fn render(&self) -> Option<String> {
        match self {
            BindingValue::Number(n) => Some(format_number(*n)),
            BindingValue::Text(s) => Some(s.clone()),
            BindingValue::Regions(_) => None,
        }
    }
}

/// Formats integral values without a decimal point and everything else in
/// shortest round-trip form.
pub fn format_number(n: f64) -> String {
    if n.fract() == 0.0 && n.abs() < 9.007_199_254_740_992e15 {
        format!("{}", n as i64)
    } else {
        format!("{n}")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BindingSet(pub BTreeMap<String, BindingValue>);

impl BindingSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, value: BindingValue) -> Self {
        self.0.insert(name.to_owned(), value);
        self
    }

    pub fn insert(&mut self, name: impl Into<String>, value: BindingValue) {
        self.0.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&BindingValue> {
        self.0.get(name)
    }
}

/// Default value of every parameter of `t`.
pub fn default_bindings(t: &ComputationTemplate) -> BindingSet {
    let mut set = BindingSet::new();
    for p in &t.parameters {
        let value = match &p.kind {
            ParameterKind::Range { default, .. } => BindingValue::Number(*default),
            ParameterKind::Choice { default, .. } | ParameterKind::Text { default, .. } => {
                BindingValue::Text(default.clone())
            }
            ParameterKind::FileEdit { file } => {
                let regions = t
                    .file(file)
                    .and_then(|f| f.editable_regions().ok().map(|r| (f, r)))
                    .map(|(f, regions)| {
                        regions
                            .into_iter()
                            .map(|r| (r.name, f.content[r.body].to_owned()))
                            .collect()
                    })
                    .unwrap_or_default();
                BindingValue::Regions(regions)
            }
        };
        set.insert(p.name.clone(), value);
    }
    set
}

/// Missing parameters take their defaults; missing regions of a file edit
/// keep their original text.
pub fn fill_defaults(t: &ComputationTemplate, bindings: &BindingSet) -> BindingSet {
    let mut merged = default_bindings(t);
    for (name, value) in &bindings.0 {
        match (merged.0.get_mut(name), value) {
            (Some(BindingValue::Regions(base)), BindingValue::Regions(edits)) => {
                for (region, text) in edits {
                    base.insert(region.clone(), text.clone());
                }
            }
            _ => {
                merged.0.insert(name.clone(), value.clone());
            }
        }
    }
    merged
}

/// Validates `bindings` against `t` after default filling. Empty means every
/// parameter has an admissible value.
pub fn validate_bindings(t: &ComputationTemplate, bindings: &BindingSet) -> Vec<Finding> {
    let mut findings = Vec::new();
    for name in bindings.0.keys() {
        if t.parameter(name).is_none() {
            findings.push(Finding::error(
                "unknown-parameter",
                format!("$.bindings.{name}"),
                format!("`{name}` is not a parameter of template `{}`", t.id),
            ));
        }
    }
    let merged = fill_defaults(t, bindings);
    for p in &t.parameters {
        let at = format!("$.bindings.{}", p.name);
        let Some(value) = merged.get(&p.name) else { continue };
        let mismatch = |expected: &str| {
            Finding::error(
                "type-mismatch",
                at.clone(),
                format!("`{}` expects {expected}", p.name),
            )
        };
        match (&p.kind, value) {
            (ParameterKind::Range { min, max, step, .. }, BindingValue::Number(v)) => {
                if let Err(detail) =
                    crate::template::validate_range(*v, *min, *max, *step)
                {
                    let rule = if v < min || v > max { "out-of-range" } else { "off-step" };
                    findings.push(Finding::error(rule, at, format!("`{}`: {detail}", p.name)));
                }
            }
            (ParameterKind::Range { .. }, _) => findings.push(mismatch("a number")),
            (ParameterKind::Choice { options, .. }, BindingValue::Text(v)) => {
                if !options.contains(v) {
                    findings.push(Finding::error(
                        "not-an-option",
                        at,
                        format!("`{}`: `{v}` is not one of {options:?}", p.name),
                    ));
                }
            }
            (ParameterKind::Choice { .. }, _) => findings.push(mismatch("one of its options")),
            (ParameterKind::Text { pattern, .. }, BindingValue::Text(v)) => {
                let ok = pattern
                    .as_deref()
                    .map(|pat| crate::template::pattern_matches(pat, v))
                    .unwrap_or(true);
                if !ok {
                    findings.push(Finding::error(
                        "pattern-mismatch",
                        at,
                        format!("`{}`: value does not match the validation pattern", p.name),
                    ));
                }
            }
            (ParameterKind::Text { .. }, _) => findings.push(mismatch("text")),
            (ParameterKind::FileEdit { file }, BindingValue::Regions(edits)) => {
                let Some(target) = t.file(file) else { continue };
                let known: Vec<String> = target
                    .editable_regions()
                    .map(|rs| rs.into_iter().map(|r| r.name).collect())
                    .unwrap_or_default();
                for (region, text) in edits {
                    if !known.contains(region) {
                        findings.push(Finding::error(
                            "unknown-region",
                            format!("{at}.{region}"),
                            format!("`{file}` has no editable region `{region}`"),
                        ));
                    } else if contains_marker(text, &target.comment_prefix) {
                        findings.push(Finding::error(
                            "region-violation",
                            format!("{at}.{region}"),
                            format!("edited text for `{region}` contains a region marker line"),
                        ));
                    }
                }
            }
            (ParameterKind::FileEdit { .. }, _) => {
                findings.push(mismatch("an object of region texts"))
            }
        }
    }
    findings
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SubstituteError {
    #[error("token `{name}` on line {line} is unbound")]
    UnboundToken { name: String, line: usize },
    #[error("token `{name}` on line {line} is bound to region edits, not a scalar")]
    NonScalarBinding { name: String, line: usize },
}

/// Replaces every token in `text` with its bound value. Text outside token
/// spans is copied unchanged.
pub fn substitute(text: &str, bindings: &BindingSet) -> Result<String, SubstituteError> {
    replace_tokens(text, |occ| match bindings.get(&occ.name) {
        None => Err(SubstituteError::UnboundToken { name: occ.name.clone(), line: occ.line }),
        Some(v) => v
            .render()
            .map(Some)
            .ok_or_else(|| SubstituteError::NonScalarBinding { name: occ.name.clone(), line: occ.line }),
    })
}

/// Core replacement loop. `lookup` returns `Ok(None)` to leave a token as is.
fn replace_tokens<F>(text: &str, mut lookup: F) -> Result<String, SubstituteError>
where
    F: FnMut(&TokenOccurrence) -> Result<Option<String>, SubstituteError>,
{
    let mut out = String::with_capacity(text.len());
    let mut cursor = 0;
    for occ in scan_tokens(text) {
        if let Some(replacement) = lookup(&occ)? {
            out.push_str(&text[cursor..occ.span.start]);
            out.push_str(&replacement);
            cursor = occ.span.end;
        }
    }
    out.push_str(&text[cursor..]);
    Ok(out)
}

/// Input files, command line and environment ready for the sandbox.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterializedComputation {
    pub image_ref: String,
    pub argv: Vec<String>,
    pub env: BTreeMap<String, String>,
    pub files: Vec<MaterializedFile>,
    pub limits: ResourceLimits,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaterializedFile {
    pub path: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RenderError {
    #[error("bindings are invalid: {}", summarize(.0))]
    InvalidBindings(Vec<Finding>),
    #[error("{file}: {source}")]
    Substitute { file: String, source: SubstituteError },
    #[error("{file}: edit of region `{region}` would change bytes outside the region")]
    RegionViolation { file: String, region: String },
}

fn summarize(findings: &[Finding]) -> String {
    findings.iter().map(|f| f.message.as_str()).collect::<Vec<_>>().join("; ")
}

/// Materializes `t` with `bindings` (defaults fill the gaps).
pub fn render_computation(
    t: &ComputationTemplate,
    bindings: &BindingSet,
) -> Result<MaterializedComputation, RenderError> {
    let findings = validate_bindings(t, bindings);
    if has_errors(&findings) {
        return Err(RenderError::InvalidBindings(findings));
    }
    let merged = fill_defaults(t, bindings);
    // Only declared, token-delivered names are replaced. Undeclared tokens can
    // only come from user-edited region text and are left alone.
    let declared = |occ: &TokenOccurrence| -> Result<Option<String>, SubstituteError> {
        match t.parameter(&occ.name) {
            Some(p) if p.is_token_delivered() => match merged.get(&occ.name) {
                Some(v) => Ok(v.render()),
                None => Err(SubstituteError::UnboundToken { name: occ.name.clone(), line: occ.line }),
            },
            _ => Ok(None),
        }
    };

    let mut files = Vec::with_capacity(t.input_files.len());
    for file in &t.input_files {
        debug_assert!(check_relative(&file.path).is_ok());
        let spliced = match t.file_edit_parameter(&file.path).and_then(|p| merged.get(&p.name)) {
            Some(BindingValue::Regions(edits)) => splice_regions(file, edits)?,
            _ => file.content.clone(),
        };
        let content = replace_tokens(&spliced, declared)
            .map_err(|source| RenderError::Substitute { file: file.path.clone(), source })?;
        files.push(MaterializedFile { path: file.path.clone(), content });
    }

    let argv = t
        .entry_command
        .iter()
        .enumerate()
        .map(|(i, arg)| {
            replace_tokens(arg, declared).map_err(|source| RenderError::Substitute {
                file: format!("entry_command[{i}]"),
                source,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let env = t
        .parameters
        .iter()
        .filter(|p| p.delivery == Delivery::Env)
        .filter_map(|p| Some((p.env_name(), merged.get(&p.name)?.render()?)))
        .collect();

    Ok(MaterializedComputation {
        image_ref: t.image_ref.clone(),
        argv,
        env,
        files,
        limits: t.limits.clone(),
    })
}

/// Replaces region bodies with user text, keeping marker lines and every
/// byte outside the regions.
fn splice_regions(
    file: &crate::template::FileTemplate,
    edits: &BTreeMap<String, String>,
) -> Result<String, RenderError> {
    let violation = |region: &str| RenderError::RegionViolation {
        file: file.path.clone(),
        region: region.to_owned(),
    };
    let regions = file.editable_regions().map_err(|_| violation("*"))?;
    let mut out = String::with_capacity(file.content.len());
    let mut cursor = 0;
    for region in &regions {
        out.push_str(&file.content[cursor..region.body.start]);
        match edits.get(&region.name) {
            Some(text) => {
                if contains_marker(text, &file.comment_prefix) {
                    return Err(violation(&region.name));
                }
                out.push_str(text);
                if !text.is_empty() && !text.ends_with('\n') {
                    out.push('\n');
                }
            }
            None => out.push_str(&file.content[region.body.clone()]),
        }
        cursor = region.body.end;
    }
    out.push_str(&file.content[cursor..]);

    // The result must have the same region structure and identical lines
    // outside the region bodies.
    let check = crate::template::FileTemplate {
        content: out,
        ..file.clone()
    };
    let after = check.editable_regions().map_err(|_| violation("*"))?;
    let outside = |content: &str, rs: &[crate::template::EditableRegion]| {
        let mut parts = Vec::new();
        let mut c = 0;
        for r in rs {
            parts.push(content[c..r.body.start].to_owned());
            c = r.body.end;
        }
        parts.push(content[c..].to_owned());
        parts
    };
    if after.len() != regions.len()
        || outside(&file.content, &regions) != outside(&check.content, &after)
    {
        let name = regions.first().map(|r| r.name.as_str()).unwrap_or("*");
        return Err(violation(name));
    }
    Ok(check.content)
}

#[cfg(test)]
#[path = "substitute_tests.rs"]
mod tests;
