//! Editable-region markers inside file templates.
//!
//! A region is delimited by two marker lines
//!
//! ```text
//! #%% begin rhs
//! ...editable lines...
//! #%% end rhs
//! ```
//!
//! where `#` is the file's comment prefix. Regions are flat: a `begin` while
//! another region is open is an error.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Where a region sits inside its file. Line numbers are 1-based and refer
/// to the marker lines themselves.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditableRegion {
    pub name: String,
    pub begin_line: usize,
    pub end_line: usize,
    /// Byte range of the editable body (the lines strictly between markers).
    #[serde(skip)]
    pub body: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegionError {
    #[error("line {line}: region `{name}` begins while region `{open}` is still open")]
    Nested { line: usize, name: String, open: String },
    #[error("line {line}: `end {name}` without a matching begin")]
    UnmatchedEnd { line: usize, name: String },
    #[error("line {line}: `end {found}` closes region `{expected}`")]
    MismatchedEnd { line: usize, expected: String, found: String },
    #[error("line {line}: region `{name}` is never closed")]
    Unterminated { line: usize, name: String },
    #[error("line {line}: region `{name}` is declared twice")]
    Duplicate { line: usize, name: String },
}

impl RegionError {
    pub fn line(&self) -> usize {
        match self {
            RegionError::Nested { line, .. }
            | RegionError::UnmatchedEnd { line, .. }
            | RegionError::MismatchedEnd { line, .. }
            | RegionError::Unterminated { line, .. }
            | RegionError::Duplicate { line, .. } => *line,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarkerKind {
    Begin,
    End,
}

/// Parses a single line as a region marker.
pub fn parse_marker<'a>(line: &'a str, prefix: &str) -> Option<(MarkerKind, &'a str)> {
    let rest = line.trim().strip_prefix(prefix)?.strip_prefix("%%")?;
    if !rest.starts_with([' ', '\t']) {
        return None;
    }
    let mut words = rest.split_whitespace();
    let kind = match words.next()? {
        "begin" => MarkerKind::Begin,
        "end" => MarkerKind::End,
        _ => return None,
    };
    let name = words.next()?;
    if words.next().is_some() || !crate::template::is_identifier(name) {
        return None;
    }
    Some((kind, name))
}

/// Finds all editable regions in `content`.
pub fn find_regions(content: &str, prefix: &str) -> Result<Vec<EditableRegion>, RegionError> {
    let mut regions: Vec<EditableRegion> = Vec::new();
    let mut open: Option<(String, usize, usize)> = None;
    let mut offset = 0;
    for (idx, line) in content.split_inclusive('\n').enumerate() {
        let lineno = idx + 1;
        let line_end = offset + line.len();
        match parse_marker(line, prefix) {
            Some((MarkerKind::Begin, name)) => {
                if let Some((open_name, _, _)) = &open {
                    return Err(RegionError::Nested {
                        line: lineno,
                        name: name.to_owned(),
                        open: open_name.clone(),
                    });
                }
                if regions.iter().any(|r| r.name == name) {
                    return Err(RegionError::Duplicate { line: lineno, name: name.to_owned() });
                }
                open = Some((name.to_owned(), lineno, line_end));
            }
            Some((MarkerKind::End, name)) => match open.take() {
                None => {
                    return Err(RegionError::UnmatchedEnd { line: lineno, name: name.to_owned() })
                }
                Some((open_name, _, _)) if open_name != name => {
                    return Err(RegionError::MismatchedEnd {
                        line: lineno,
                        expected: open_name,
                        found: name.to_owned(),
                    })
                }
                Some((open_name, begin_line, body_start)) => regions.push(EditableRegion {
                    name: open_name,
                    begin_line,
                    end_line: lineno,
                    body: body_start..offset,
                }),
            },
            None => {}
        }
        offset = line_end;
    }
    if let Some((name, line, _)) = open {
        return Err(RegionError::Unterminated { line, name });
    }
    Ok(regions)
}

/// True if any line of `text` looks like a region marker.
pub fn contains_marker(text: &str, prefix: &str) -> bool {
    text.split_inclusive('\n').any(|l| parse_marker(l, prefix).is_some())
}
