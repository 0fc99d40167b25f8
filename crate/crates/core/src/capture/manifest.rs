//! Dependency manifest: one `A -> B` edge per line, meaning module `A`
//! depends on module `B` and is installed after it. `#` starts a comment.

use std::collections::{BTreeMap, BTreeSet};

use super::CaptureError;

pub const MANIFEST_FILE: &str = "deps.txt";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    /// module -> modules it depends on
    edges: BTreeMap<String, BTreeSet<String>>,
    /// line of first mention, for error messages
    lines: BTreeMap<String, usize>,
}

impl Manifest {
    pub fn dependencies_of(&self, module: &str) -> Vec<String> {
        self.edges.get(module).map(|d| d.iter().cloned().collect()).unwrap_or_default()
    }

    pub fn add_edge(&mut self, module: &str, depends_on: &str) {
        self.edges.entry(module.to_owned()).or_default().insert(depends_on.to_owned());
    }
}

pub fn parse_manifest(text: &str) -> Result<Manifest, CaptureError> {
    let mut m = Manifest::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: &str| CaptureError::Manifest {
            file: MANIFEST_FILE.into(),
            line: i + 1,
            message: message.to_owned(),
        };
        let (a, b) = line.split_once("->").ok_or_else(|| err("expected `A -> B`"))?;
        let (a, b) = (a.trim(), b.trim());
        let word = |s: &str| !s.is_empty() && !s.contains(char::is_whitespace);
        if !word(a) || !word(b) {
            return Err(err("module names must be single words"));
        }
        if a == b {
            return Err(err("a module cannot depend on itself"));
        }
        m.add_edge(a, b);
        for name in [a, b] {
            m.lines.entry(name.to_owned()).or_insert(i + 1);
        }
    }
    Ok(m)
}

/// Orders `names` so that dependencies come first. Ties are broken by name,
/// so the result is unique for a given manifest.
pub fn order_modules(names: &[String], manifest: &Manifest) -> Result<Vec<String>, CaptureError> {
    let known: BTreeSet<&str> = names.iter().map(String::as_str).collect();
    for (name, line) in &manifest.lines {
        if !known.contains(name.as_str()) {
            return Err(CaptureError::Manifest {
                file: MANIFEST_FILE.into(),
                line: *line,
                message: format!("unknown module `{name}`"),
            });
        }
    }

    let mut pending: BTreeMap<&str, usize> = known.iter().map(|n| (*n, 0)).collect();
    let mut dependents: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (module, deps) in &manifest.edges {
        for dep in deps {
            *pending.get_mut(module.as_str()).expect("checked above") += 1;
            dependents.entry(dep.as_str()).or_default().push(module.as_str());
        }
    }

    let mut ready: BTreeSet<&str> = pending.iter().filter(|(_, n)| **n == 0).map(|(k, _)| *k).collect();
    let mut order = Vec::with_capacity(names.len());
    while let Some(next) = ready.pop_first() {
        order.push(next.to_owned());
        for dependent in dependents.get(next).into_iter().flatten() {
            let n = pending.get_mut(dependent).expect("known module");
            *n -= 1;
            if *n == 0 {
                ready.insert(dependent);
            }
        }
    }
    if order.len() != names.len() {
        let placed: BTreeSet<&str> = order.iter().map(String::as_str).collect();
        let stuck = known.iter().filter(|n| !placed.contains(**n)).map(|n| n.to_string()).collect();
        return Err(CaptureError::DependencyCycle(stuck));
    }
    Ok(order)
}
