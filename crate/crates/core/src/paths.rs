//! Relative-path hygiene shared by templates, outputs and the registry.

use std::path::{Component, Path, PathBuf};

/// Checks that `path` is a normalized relative path: `/`-separated, no
/// empty, `.` or `..` segments, no backslashes or NUL bytes.
pub fn check_relative(path: &str) -> Result<(), &'static str> {
    if path.is_empty() {
        return Err("path is empty");
    }
    if path.starts_with('/') {
        return Err("path is absolute");
    }
    if path.contains('\\') || path.contains('\0') {
        return Err("path contains a backslash or NUL byte");
    }
    for segment in path.split('/') {
        match segment {
            "" => return Err("path has an empty segment"),
            "." => return Err("path has a `.` segment"),
            ".." => return Err("path has a `..` segment"),
            _ => {}
        }
    }
    Ok(())
}

pub fn is_safe_relative(path: &str) -> bool {
    check_relative(path).is_ok()
}

/// Joins a checked relative path onto `root`. Returns `None` when the path
/// would leave `root`.
pub fn join_within(root: &Path, relative: &str) -> Option<PathBuf> {
    check_relative(relative).ok()?;
    let joined = root.join(relative);
    let escapes = Path::new(relative)
        .components()
        .any(|c| !matches!(c, Component::Normal(_)));
    (!escapes).then_some(joined)
}

/// Renders a path relative to `root` with `/` separators.
pub fn relative_slash(root: &Path, path: &Path) -> Option<String> {
    let rel = path.strip_prefix(root).ok()?;
    let parts: Vec<String> = rel
        .components()
        .map(|c| match c {
            Component::Normal(s) => Some(s.to_string_lossy().into_owned()),
            _ => None,
        })
        .collect::<Option<_>>()?;
    Some(parts.join("/"))
}
