use std::collections::{BTreeMap, BTreeSet};

use super::ladder::{companion_recipes, recipe_lints_clean, BlobSource};
use super::model::{ArtifactFile, ArtifactKind, Dataset};
use crate::finding::Finding;
use crate::paths::check_relative;
use crate::template::{parse_template, validate_template};

/// Fields each metadata block must carry, by block name.
pub type BlockRequirements = BTreeMap<String, Vec<String>>;

pub fn default_block_requirements() -> BlockRequirements {
    let mut m = BTreeMap::new();
    m.insert("software".to_owned(), vec!["title".to_owned()]);
    m.insert("citation".to_owned(), vec!["title".to_owned(), "authors".to_owned()]);
    m
}

pub(crate) const PID_SCHEMES: &[&str] = &["local:", "doi:", "swh:"];

/// Checks a dataset before publication. Errors block publishing.
///
/// `known_pid` answers whether a `local:` pid outside this dataset exists in
/// the registry.
pub fn review_checklist(
    d: &Dataset,
    blobs: &dyn BlobSource,
    known_pid: &dyn Fn(&str) -> bool,
    requirements: &BlockRequirements,
) -> Vec<Finding> {
    let mut out = Vec::new();

    if d.title.trim().is_empty() {
        out.push(Finding::error("missing-title", "$.title", "dataset has no title"));
    }
    for (field, empty) in [
        ("description", d.description.trim().is_empty()),
        ("authors", d.authors.iter().all(|a| a.trim().is_empty())),
        ("keywords", d.keywords.iter().all(|k| k.trim().is_empty())),
    ] {
        if empty {
            out.push(Finding::warning("discoverability", format!("$.{field}"), format!("dataset has no {field}")));
        }
    }

    let mut paths = BTreeSet::new();
    let mut pids = BTreeSet::new();
    for (i, f) in d.files.iter().enumerate() {
        let at = format!("$.files[{i}]");
        if f.license.trim().is_empty() {
            out.push(Finding::error("missing-license", &at, format!("file `{}` has no license", f.path)));
        }
        if let Err(why) = check_relative(&f.path) {
            out.push(Finding::error("unsafe-path", &at, format!("file path `{}`: {why}", f.path)));
        }
        if !paths.insert(f.path.as_str()) {
            out.push(Finding::error("duplicate-path", &at, format!("file path `{}` appears twice", f.path)));
        }
        if let Some(pid) = &f.pid {
            if !pids.insert(pid.as_str()) || Some(pid) == Some(&d.pid) {
                out.push(Finding::error("duplicate-pid", &at, format!("persistent identifier `{pid}` is not unique")));
            }
        }
        if f.checksum.is_none() {
            out.push(Finding::warning("missing-checksum", &at, format!("file `{}` has no checksum", f.path)));
        }
    }

    let local_targets: BTreeSet<&str> = d
        .files
        .iter()
        .filter_map(|f| f.pid.as_deref())
        .chain(std::iter::once(d.pid.as_str()))
        .collect();
    let mut check_link = |at: String, owner: Option<&str>, target: &str| {
        if owner == Some(target) {
            out.push(Finding::error("self-link", &at, format!("`{target}` links to itself")));
        } else if !PID_SCHEMES.iter().any(|s| target.starts_with(s)) {
            // Paths of files in the same dataset are accepted as targets.
            if d.file(target).is_none() {
                out.push(Finding::error("broken-link", &at, format!("link target `{target}` is neither a known file nor a persistent identifier")));
            }
        } else if target.starts_with("local:") && !local_targets.contains(target) && !known_pid(target) {
            out.push(Finding::error("broken-link", &at, format!("link target `{target}` does not exist")));
        }
    };
    for (i, l) in d.links.iter().enumerate() {
        check_link(format!("$.links[{i}]"), Some(d.pid.as_str()), &l.target);
    }
    for (i, f) in d.files.iter().enumerate() {
        for (j, l) in f.links.iter().enumerate() {
            let owner = f.pid.as_deref().or(Some(f.path.as_str()));
            check_link(format!("$.files[{i}].links[{j}]"), owner, &l.target);
        }
    }

    for (name, block) in &d.metadata_blocks {
        if let Some(required) = requirements.get(name) {
            for field in required {
                if !block.fields.contains_key(field) {
                    out.push(Finding::error(
                        "missing-block-field",
                        format!("$.metadata_blocks.{name}"),
                        format!("metadata block `{name}` lacks required field `{field}`"),
                    ));
                }
            }
        }
    }

    let all: Vec<&ArtifactFile> = d.files.iter().collect();
    for (i, image) in d.files.iter().enumerate().filter(|(_, f)| f.kind == ArtifactKind::Image) {
        let recipes = companion_recipes(image, &all);
        if recipes.is_empty() {
            out.push(Finding::error(
                "CP1-missing-recipe",
                format!("$.files[{i}]"),
                format!("container image `{}` is published without its build recipe", image.path),
            ));
        } else if !recipes.iter().any(|r| recipe_lints_clean(blobs, r)) {
            out.push(Finding::warning(
                "recipe-lint",
                format!("$.files[{i}]"),
                format!("no recipe of image `{}` lints clean", image.path),
            ));
        }
    }

    for (i, f) in d.files.iter().enumerate().filter(|(_, f)| f.kind == ArtifactKind::WebappTemplate) {
        let at = format!("$.files[{i}]");
        let Some(bytes) = f.checksum.as_deref().and_then(|c| blobs.blob(c)) else {
            out.push(Finding::warning("unchecked-template", &at, format!("template `{}` content is not stored; not validated", f.path)));
            continue;
        };
        let text = String::from_utf8_lossy(&bytes);
        match parse_template(&text) {
            Ok(t) => {
                for finding in validate_template(&t).into_iter().filter(Finding::is_error) {
                    out.push(Finding::error("invalid-template", &at, format!("{}: {}", f.path, finding.message)));
                }
            }
            Err(e) => out.push(Finding::error("invalid-template", &at, format!("{}: {e}", f.path))),
        }
    }

    for (i, v) in d.verifications.iter().enumerate() {
        let at = format!("$.verifications[{i}]");
        match d.find_file(&v.template_pid) {
            Some(f) if f.kind == ArtifactKind::WebappTemplate => {}
            _ => out.push(Finding::error(
                "verification",
                &at,
                format!("verification refers to `{}`, which is not a computation template of this dataset", v.template_pid),
            )),
        }
        if v.expected.is_empty() {
            out.push(Finding::error("verification", &at, "verification lists no expected outputs"));
        }
        for (path, sum) in &v.expected {
            if sum.len() != 64 || !sum.bytes().all(|b| b.is_ascii_hexdigit()) {
                out.push(Finding::error("verification", &at, format!("expected checksum of `{path}` is not a SHA-256 hex digest")));
            } else if !d.files.iter().any(|f| f.kind == ArtifactKind::Data && f.checksum.as_deref() == Some(sum.as_str())) {
                out.push(Finding::warning("verification", &at, format!("no reference data file has the expected checksum of `{path}`")));
            }
        }
    }
    out
}
