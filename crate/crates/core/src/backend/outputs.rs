use std::fs::File;
use std::io::{Read, Seek, SeekFrom};
use std::path::Path;

use globset::{GlobBuilder, GlobMatcher};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::paths::relative_slash;
use crate::template::{OutputDecl, RenderHint};

/// A collected output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputArtifact {
    pub path: String,
    pub size_bytes: u64,
    pub checksum: String,
    pub render_hint: RenderHint,
}

/// Result of scanning a workdir.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Collected {
    pub artifacts: Vec<OutputArtifact>,
    pub warnings: Vec<String>,
}

fn matchers(decls: &[OutputDecl]) -> Vec<(GlobMatcher, RenderHint)> {
    decls
        .iter()
        .filter_map(|d| {
            let glob = GlobBuilder::new(&d.pattern).literal_separator(true).build().ok()?;
            Some((glob.compile_matcher(), d.render_hint))
        })
        .collect()
}

/// First matching declaration's render hint for a workdir-relative path.
pub fn match_output(decls: &[OutputDecl], rel: &str) -> Option<RenderHint> {
    matchers(decls).into_iter().find(|(m, _)| m.is_match(rel)).map(|(_, h)| h)
}

/// Captures every regular file under `workdir` whose relative path matches an
/// output declaration. Symbolic links are followed only when their target
/// stays inside `workdir`.
pub fn collect_outputs(decls: &[OutputDecl], workdir: &Path) -> Collected {
    let mut out = Collected::default();
    let matchers = matchers(decls);
    if matchers.is_empty() {
        return out;
    }
    let Ok(root) = workdir.canonicalize() else {
        out.warnings.push(format!("workdir {} is not accessible", workdir.display()));
        return out;
    };
    for entry in walkdir::WalkDir::new(&root).follow_links(false).sort_by_file_name() {
        let entry = match entry {
            Ok(e) => e,
            Err(e) => {
                out.warnings.push(format!("cannot read workdir entry: {e}"));
                continue;
            }
        };
        if entry.file_type().is_dir() {
            continue;
        }
        let Some(rel) = relative_slash(&root, entry.path()) else { continue };
        let Some(hint) = matchers.iter().find(|(m, _)| m.is_match(&rel)).map(|(_, h)| *h) else {
            continue;
        };
        let target = if entry.path_is_symlink() {
            match entry.path().canonicalize() {
                Ok(t) if t.starts_with(&root) && t.is_file() => t,
                Ok(t) if t.starts_with(&root) => continue,
                _ => {
                    out.warnings.push(format!("{rel}: symbolic link does not resolve inside the workdir; ignored"));
                    continue;
                }
            }
        } else if entry.file_type().is_file() {
            entry.path().to_path_buf()
        } else {
            continue;
        };
        match file_digest(&target) {
            Ok((size_bytes, checksum)) => {
                out.artifacts.push(OutputArtifact { path: rel, size_bytes, checksum, render_hint: hint })
            }
            Err(e) => out.warnings.push(format!("{rel}: {e}")),
        }
    }
    out
}

/// Size and SHA-256 of a file, read in chunks.
pub fn file_digest(path: &Path) -> std::io::Result<(u64, String)> {
    let mut f = File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 64 * 1024];
    let mut size = 0u64;
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        size += n as u64;
        h.update(&buf[..n]);
    }
    Ok((size, hex::encode(h.finalize())))
}

/// Last `limit` bytes of a file as text, starting at a character boundary.
pub fn read_tail(path: &Path, limit: u64) -> String {
    let Ok(mut f) = File::open(path) else { return String::new() };
    let len = f.metadata().map(|m| m.len()).unwrap_or(0);
    let start = len.saturating_sub(limit);
    if f.seek(SeekFrom::Start(start)).is_err() {
        return String::new();
    }
    let mut bytes = Vec::with_capacity((len - start) as usize);
    if f.take(limit).read_to_end(&mut bytes).is_err() {
        return String::new();
    }
    // Drop UTF-8 continuation bytes cut off at the front.
    let skip = if start > 0 { bytes.iter().take(3).take_while(|b| (**b & 0xC0) == 0x80).count() } else { 0 };
    String::from_utf8_lossy(&bytes[skip..]).into_owned()
}
