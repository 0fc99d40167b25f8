//! `--set name=value` parsing, typed by the target parameter.

use std::collections::BTreeMap;

use replicator_core::substitute::{BindingSet, BindingValue};
use replicator_core::template::{ComputationTemplate, ParameterKind};

/// Builds bindings from `--set` arguments.
///
/// Range parameters take numbers, file-edit parameters take
/// `name.region=body` (a body of `@path` is read from that file), everything
/// else is text. Names the template does not declare are passed through as
/// text so the substitution engine reports them.
pub fn parse_sets(t: &ComputationTemplate, sets: &[String]) -> Result<BindingSet, String> {
    let mut out = BindingSet::new();
    let mut regions: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    for s in sets {
        let (key, value) = s.split_once('=').ok_or_else(|| format!("`{s}`: expected name=value"))?;
        let (name, region) = match key.split_once('.') {
            Some((n, r)) => (n, Some(r)),
            None => (key, None),
        };
        let kind = t.parameter(name).map(|p| &p.kind);
        match (kind, region) {
            (Some(ParameterKind::FileEdit { .. }), Some(region)) => {
                let body = match value.strip_prefix('@') {
                    Some(path) => std::fs::read_to_string(path).map_err(|e| format!("`{key}`: {path}: {e}"))?,
                    None => value.to_owned(),
                };
                regions.entry(name.to_owned()).or_default().insert(region.to_owned(), body);
            }
            (Some(ParameterKind::FileEdit { .. }), None) => {
                return Err(format!("`{name}` edits a file; use {name}.<region>=<body>"));
            }
            (_, Some(_)) => return Err(format!("`{key}`: only file-edit parameters take a region")),
            (Some(ParameterKind::Range { .. }), None) => {
                let n: f64 = value.trim().parse().map_err(|_| format!("`{name}` is a range parameter; `{value}` is not a number"))?;
                out.insert(name, BindingValue::Number(n));
            }
            (_, None) => out.insert(name, BindingValue::Text(value.to_owned())),
        }
    }
    for (name, r) in regions {
        out.insert(name, BindingValue::Regions(r));
    }
    Ok(out)
}
