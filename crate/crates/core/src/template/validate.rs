use std::collections::{BTreeMap, BTreeSet};

use globset::GlobBuilder;
use regex::Regex;

use super::{is_identifier, ComputationTemplate, ParameterKind, TemplateError, SCHEMA_VERSION};
use crate::finding::{Finding, Severity};
use crate::paths::check_relative;
use crate::substitute::scan_tokens;

/// More parameters than this yield a warning: a long list of knobs defeats
/// the purpose of a first-contact exploration interface.
pub const SOFT_PARAMETER_CAP: usize = 12;

/// A violated template rule.
#[derive(Debug, Clone, PartialEq)]
pub enum Issue {
    SchemaVersion { found: u32 },
    Schema { path: String, rule: &'static str, message: String },
    TooManyParameters { count: usize },
    DefaultOutOfRange { index: usize, name: String, detail: String },
    TokenWithoutParameter { token: String, file: String, line: usize },
    ParameterUnreferenced { index: usize, name: String },
}

impl Issue {
    fn schema(path: impl Into<String>, rule: &'static str, message: impl Into<String>) -> Self {
        Issue::Schema { path: path.into(), rule, message: message.into() }
    }

    pub fn severity(&self) -> Severity {
        match self {
            Issue::TooManyParameters { .. } => Severity::Warning,
            _ => Severity::Error,
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity() == Severity::Error
    }

    pub fn rule(&self) -> &'static str {
        match self {
            Issue::SchemaVersion { .. } => "schema-version",
            Issue::Schema { rule, .. } => rule,
            Issue::TooManyParameters { .. } => "too-many-parameters",
            Issue::DefaultOutOfRange { .. } => "default-out-of-range",
            Issue::TokenWithoutParameter { .. } => "token-without-parameter",
            Issue::ParameterUnreferenced { .. } => "parameter-unreferenced",
        }
    }

    pub fn to_finding(&self) -> Finding {
        let (location, message) = match self {
            Issue::SchemaVersion { found } => (
                "$.schema".to_owned(),
                format!("unsupported schema version {found}, expected {SCHEMA_VERSION}"),
            ),
            Issue::Schema { path, message, .. } => (path.clone(), message.clone()),
            Issue::TooManyParameters { count } => (
                "$.parameters".to_owned(),
                format!("{count} parameters exceed the recommended maximum of {SOFT_PARAMETER_CAP}"),
            ),
            Issue::DefaultOutOfRange { index, name, detail } => (
                format!("$.parameters[{index}].default"),
                format!("default of `{name}` {detail}"),
            ),
            Issue::TokenWithoutParameter { token, file, line } => (
                format!("{file}:{line}"),
                format!("token `{token}` has no matching parameter"),
            ),
            Issue::ParameterUnreferenced { index, name } => (
                format!("$.parameters[{index}]"),
                format!("parameter `{name}` is not referenced by any token and is not env-delivered"),
            ),
        };
        Finding {
            rule: self.rule().to_owned(),
            severity: self.severity(),
            location,
            message,
        }
    }

    pub fn into_error(self) -> TemplateError {
        match self {
            Issue::TokenWithoutParameter { token, file, line } => {
                TemplateError::TokenWithoutParameter { token, file, line }
            }
            Issue::ParameterUnreferenced { name, .. } => TemplateError::ParameterUnreferenced { name },
            Issue::DefaultOutOfRange { name, detail, .. } => {
                TemplateError::DefaultOutOfRange { name, detail }
            }
            other => {
                let finding = other.to_finding();
                TemplateError::Schema {
                    path: finding.location,
                    rule: finding.rule,
                    message: finding.message,
                }
            }
        }
    }
}

/// Checks every template invariant. An empty list means the template is
/// valid; warnings do not make it invalid.
pub fn validate_template(template: &ComputationTemplate) -> Vec<Finding> {
    check(template).iter().map(Issue::to_finding).collect()
}

pub(crate) fn check(t: &ComputationTemplate) -> Vec<Issue> {
    let mut issues = Vec::new();
    if t.schema != SCHEMA_VERSION {
        issues.push(Issue::SchemaVersion { found: t.schema });
    }
    if t.id.is_empty()
        || !t.id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
    {
        issues.push(Issue::schema("$.id", "id", "id must be non-empty and use [A-Za-z0-9_.-]"));
    }
    if t.image_ref.trim().is_empty() {
        issues.push(Issue::schema("$.image_ref", "image-ref", "image_ref must not be empty"));
    }
    if t.entry_command.is_empty() || t.entry_command[0].is_empty() {
        issues.push(Issue::schema(
            "$.entry_command",
            "entry-command",
            "entry_command needs a non-empty program",
        ));
    }
    check_limits(t, &mut issues);
    check_files(t, &mut issues);
    check_parameters(t, &mut issues);
    check_outputs(t, &mut issues);
    check_tokens(t, &mut issues);
    issues
}

fn check_limits(t: &ComputationTemplate, issues: &mut Vec<Issue>) {
    let l = &t.limits;
    for (field, value) in [
        ("wall_seconds", l.wall_seconds),
        ("cpu_seconds", l.cpu_seconds),
        ("memory_bytes", l.memory_bytes),
    ] {
        if value == 0 {
            issues.push(Issue::schema(
                format!("$.limits.{field}"),
                "limits",
                format!("{field} must be positive"),
            ));
        }
    }
}

fn check_files(t: &ComputationTemplate, issues: &mut Vec<Issue>) {
    let mut seen = BTreeSet::new();
    for (i, file) in t.input_files.iter().enumerate() {
        if let Err(why) = check_relative(&file.path) {
            issues.push(Issue::schema(
                format!("$.input_files[{i}].path"),
                "unsafe-path",
                format!("`{}`: {why}", file.path),
            ));
        }
        if !seen.insert(file.path.as_str()) {
            issues.push(Issue::schema(
                format!("$.input_files[{i}].path"),
                "duplicate-path",
                format!("`{}` is declared twice", file.path),
            ));
        }
        if file.comment_prefix.trim().is_empty() {
            issues.push(Issue::schema(
                format!("$.input_files[{i}].comment_prefix"),
                "comment-prefix",
                "comment prefix must not be blank",
            ));
        } else if let Err(e) = file.editable_regions() {
            issues.push(Issue::schema(
                format!("$.input_files[{i}].content"),
                "region-markers",
                format!("{}: {e}", file.path),
            ));
        }
    }
}

fn check_parameters(t: &ComputationTemplate, issues: &mut Vec<Issue>) {
    if t.parameters.len() > SOFT_PARAMETER_CAP {
        issues.push(Issue::TooManyParameters { count: t.parameters.len() });
    }
    let mut names = BTreeSet::new();
    let mut env_names: BTreeMap<String, &str> = BTreeMap::new();
    let mut edited_files = BTreeSet::new();
    for (i, p) in t.parameters.iter().enumerate() {
        let at = |field: &str| format!("$.parameters[{i}]{field}");
        if !is_identifier(&p.name) {
            issues.push(Issue::schema(
                at(".name"),
                "identifier",
                format!("`{}` is not an identifier", p.name),
            ));
        }
        if !names.insert(p.name.as_str()) {
            issues.push(Issue::schema(
                at(".name"),
                "duplicate-parameter",
                format!("parameter `{}` is declared twice", p.name),
            ));
        }
        if p.delivery == super::Delivery::Env {
            if let Some(other) = env_names.insert(p.env_name(), &p.name) {
                issues.push(Issue::schema(
                    at(".name"),
                    "env-name-collision",
                    format!("`{}` and `{other}` both export {}", p.name, p.env_name()),
                ));
            }
        }
        let out_of_range = |detail: String| Issue::DefaultOutOfRange {
            index: i,
            name: p.name.clone(),
            detail,
        };
        match &p.kind {
            ParameterKind::Range { min, max, step, default } => {
                if !(min.is_finite() && max.is_finite() && step.is_finite() && default.is_finite()) {
                    issues.push(Issue::schema(at(""), "range-bounds", "range values must be finite"));
                } else if min > max || *step <= 0.0 {
                    issues.push(Issue::schema(
                        at(""),
                        "range-bounds",
                        format!("range needs min <= max and step > 0 (min {min}, max {max}, step {step})"),
                    ));
                } else if let Err(detail) = range_violation(*default, *min, *max, *step) {
                    issues.push(out_of_range(detail));
                }
            }
            ParameterKind::Choice { options, default } => {
                let distinct: BTreeSet<_> = options.iter().collect();
                if options.is_empty() || distinct.len() != options.len() {
                    issues.push(Issue::schema(
                        at(".options"),
                        "choice-options",
                        "choice needs a non-empty list of distinct options",
                    ));
                } else if !options.contains(default) {
                    issues.push(out_of_range(format!("`{default}` is not one of the options")));
                }
            }
            ParameterKind::Text { default, pattern } => {
                if let Some(pattern) = pattern {
                    match anchored(pattern) {
                        Err(e) => issues.push(Issue::schema(
                            at(".pattern"),
                            "invalid-pattern",
                            format!("pattern does not compile: {e}"),
                        )),
                        Ok(re) if !re.is_match(default) => {
                            issues.push(out_of_range(format!("`{default}` does not match `{pattern}`")))
                        }
                        Ok(_) => {}
                    }
                }
            }
            ParameterKind::FileEdit { file } => {
                if p.delivery == super::Delivery::Env {
                    issues.push(Issue::schema(
                        at(".delivery"),
                        "file-edit-delivery",
                        "file_edit parameters cannot be env-delivered",
                    ));
                }
                if !edited_files.insert(file.as_str()) {
                    issues.push(Issue::schema(
                        at(".file"),
                        "file-edit-target",
                        format!("`{file}` is already edited by another parameter"),
                    ));
                }
                match t.file(file).map(|f| f.editable_regions()) {
                    None => issues.push(Issue::schema(
                        at(".file"),
                        "file-edit-target",
                        format!("`{file}` is not an input file"),
                    )),
                    Some(Ok(regions)) if regions.is_empty() => issues.push(Issue::schema(
                        at(".file"),
                        "file-edit-target",
                        format!("`{file}` has no editable region"),
                    )),
                    _ => {}
                }
            }
        }
    }
}

fn check_outputs(t: &ComputationTemplate, issues: &mut Vec<Issue>) {
    for (i, out) in t.outputs.iter().enumerate() {
        let at = format!("$.outputs[{i}].pattern");
        let bad_shape = out.pattern.is_empty()
            || out.pattern.starts_with('/')
            || out.pattern.contains('\\')
            || out.pattern.split('/').any(|s| s == ".." || s == ".");
        if bad_shape {
            issues.push(Issue::schema(
                at,
                "output-pattern",
                format!("`{}` must be a relative pattern without `..`", out.pattern),
            ));
        } else if let Err(e) = GlobBuilder::new(&out.pattern).literal_separator(true).build() {
            issues.push(Issue::schema(at, "output-pattern", format!("invalid glob: {e}")));
        }
    }
}

fn check_tokens(t: &ComputationTemplate, issues: &mut Vec<Issue>) {
    let mut referenced = BTreeSet::new();
    let sources = t
        .input_files
        .iter()
        .map(|f| (f.path.clone(), f.content.as_str()))
        .chain(
            t.entry_command
                .iter()
                .enumerate()
                .map(|(i, arg)| (format!("entry_command[{i}]"), arg.as_str())),
        );
    for (source, text) in sources {
        for occ in scan_tokens(text) {
            match t.parameter(&occ.name) {
                None => issues.push(Issue::TokenWithoutParameter {
                    token: occ.name.clone(),
                    file: source.clone(),
                    line: occ.line,
                }),
                Some(p) if !p.is_token_delivered() => issues.push(Issue::schema(
                    format!("{source}:{}", occ.line),
                    "token-delivery",
                    format!("token `{}` refers to a parameter that is not token-delivered", occ.name),
                )),
                Some(_) => {}
            }
            referenced.insert(occ.name);
        }
    }
    for (i, p) in t.parameters.iter().enumerate() {
        if p.is_token_delivered() && !referenced.contains(&p.name) {
            issues.push(Issue::ParameterUnreferenced { index: i, name: p.name.clone() });
        }
    }
}

/// Compiles a validation pattern so that it must match the whole value.
pub(crate) fn anchored(pattern: &str) -> Result<Regex, regex::Error> {
    Regex::new(&format!("^(?:{pattern})$"))
}

/// Checks `value` against a range parameter: bounds and step grid.
pub(crate) fn range_violation(value: f64, min: f64, max: f64, step: f64) -> Result<(), String> {
    if !value.is_finite() {
        return Err("is not a finite number".to_owned());
    }
    if value < min || value > max {
        return Err(format!("{value} is out of range [{min}, {max}]"));
    }
    let steps = (value - min) / step;
    let tolerance = 1e-9 * steps.abs().max(1.0);
    if (steps - steps.round()).abs() > tolerance {
        return Err(format!("{value} is not on the step grid {min} + k*{step}"));
    }
    Ok(())
}
