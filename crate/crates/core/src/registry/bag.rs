//! BagIt (RFC 8493) export of one dataset version.

use std::fmt::Write as _;
use std::path::Path;

use super::{io_err, BlobSource, Dataset, RegistryError};
use crate::paths::join_within;
use crate::sha256_hex;

/// Writes `d` as a bag at `dest`, which must not exist or be empty.
/// Stored files go under `data/`; files held elsewhere appear only in the
/// `dataset.json` tag file.
pub fn export_bag(d: &Dataset, blobs: &dyn BlobSource, dest: &Path) -> Result<(), RegistryError> {
    if dest.exists() && std::fs::read_dir(dest).map_err(io_err(dest))?.next().is_some() {
        return Err(RegistryError::InvalidRequest(format!("{} exists and is not empty", dest.display())));
    }
    let data = dest.join("data");
    std::fs::create_dir_all(&data).map_err(io_err(&data))?;

    let mut manifest = Vec::new();
    let (mut octets, mut streams) = (0u64, 0usize);
    for f in d.files.iter().filter(|f| f.stored) {
        let sum = f.checksum.as_deref().unwrap_or_default();
        let bytes = blobs.blob(sum).ok_or_else(|| RegistryError::Unresolvable {
            pid: f.pid.clone().unwrap_or_else(|| f.path.clone()),
            reason: format!("stored bytes {sum} are missing"),
        })?;
        let target = join_within(&data, &f.path)
            .ok_or_else(|| RegistryError::InvalidRequest(format!("file path `{}` is not a safe relative path", f.path)))?;
        if let Some(parent) = target.parent() {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        std::fs::write(&target, &bytes).map_err(io_err(&target))?;
        manifest.push((sha256_hex(&bytes), format!("data/{}", f.path)));
        octets += bytes.len() as u64;
        streams += 1;
    }
    manifest.sort_by(|a, b| a.1.cmp(&b.1));

    let mut tags: Vec<(&str, String)> = Vec::new();
    tags.push(("bagit.txt", "BagIt-Version: 1.0\nTag-File-Character-Encoding: UTF-8\n".into()));
    let mut info = String::new();
    let _ = writeln!(info, "External-Identifier: {}", d.pid);
    let _ = writeln!(info, "Version-Identifier: {}", d.version);
    for line in d.title.lines().filter(|l| !l.trim().is_empty()) {
        let _ = writeln!(info, "Title: {}", line.trim());
    }
    if let Some(at) = d.published_at {
        let _ = writeln!(info, "Bagging-Date: {}", at.format("%Y-%m-%d"));
    }
    let _ = writeln!(info, "Bag-Software-Agent: replicator {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(info, "Payload-Oxum: {octets}.{streams}");
    tags.push(("bag-info.txt", info));
    let manifest_text: String = manifest.iter().map(|(s, p)| format!("{s}  {}\n", escape_path(p))).collect();
    tags.push(("manifest-sha256.txt", manifest_text));
    let mut doc = serde_json::to_string_pretty(d).expect("dataset serializes");
    doc.push('\n');
    tags.push(("dataset.json", doc));

    let mut tagmanifest = String::new();
    for (name, text) in &tags {
        let p = dest.join(name);
        std::fs::write(&p, text).map_err(io_err(&p))?;
        let _ = writeln!(tagmanifest, "{}  {name}", sha256_hex(text.as_bytes()));
    }
    let p = dest.join("tagmanifest-sha256.txt");
    std::fs::write(&p, tagmanifest).map_err(io_err(&p))
}

/// Manifest lines encode CR, LF and `%` in paths.
fn escape_path(p: &str) -> String {
    p.replace('%', "%25").replace('\n', "%0A").replace('\r', "%0D")
}
