use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::model::{ArtifactFile, ArtifactKind, Dataset};
use crate::capture::lint_recipe;
use crate::template::parse_template;

/// Rungs of the sustainability ladder, lowest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LadderRung {
    Packageable,
    Retrievable,
    Discoverable,
    Deployable,
    Repeatable,
    Configurable,
    Derivable,
    Verifiable,
}

impl LadderRung {
    pub const ALL: [LadderRung; 8] = [
        Self::Packageable,
        Self::Retrievable,
        Self::Discoverable,
        Self::Deployable,
        Self::Repeatable,
        Self::Configurable,
        Self::Derivable,
        Self::Verifiable,
    ];
}

/// Read access to stored file contents by checksum.
pub trait BlobSource {
    fn blob(&self, checksum: &str) -> Option<Vec<u8>>;
}

impl<F: Fn(&str) -> Option<Vec<u8>>> BlobSource for F {
    fn blob(&self, checksum: &str) -> Option<Vec<u8>> {
        self(checksum)
    }
}

/// Licenses that allow adaption and redistribution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LadderPolicy {
    pub open_licenses: BTreeSet<String>,
}

pub const DEFAULT_OPEN_LICENSES: &[&str] = &[
    "0BSD", "AGPL-3.0-only", "AGPL-3.0-or-later", "Apache-2.0", "Artistic-2.0", "BSD-2-Clause",
    "BSD-3-Clause", "BSL-1.0", "CC-BY-4.0", "CC-BY-SA-4.0", "CC0-1.0", "CECILL-2.1", "EPL-2.0",
    "EUPL-1.2", "GPL-2.0-only", "GPL-2.0-or-later", "GPL-3.0-only", "GPL-3.0-or-later", "ISC",
    "LGPL-2.1-only", "LGPL-2.1-or-later", "LGPL-3.0-only", "LGPL-3.0-or-later", "MIT", "MPL-2.0",
    "Unlicense", "Zlib",
];

impl Default for LadderPolicy {
    fn default() -> Self {
        Self { open_licenses: DEFAULT_OPEN_LICENSES.iter().map(|s| s.to_string()).collect() }
    }
}

impl LadderPolicy {
    /// Evaluates a simple SPDX expression: `OR` needs one open operand,
    /// `AND` needs all; `WITH` exceptions keep the base license's status.
    pub fn is_open(&self, expression: &str) -> bool {
        let cleaned = expression.replace(['(', ')'], " ");
        let words: Vec<&str> = cleaned.split_whitespace().collect();
        if words.is_empty() {
            return false;
        }
        words
            .split(|w| *w == "OR")
            .any(|conj| {
                !conj.is_empty()
                    && conj.split(|w| *w == "AND").all(|term| match term {
                        [id] | [id, "WITH", _] => self.open_licenses.contains(*id),
                        _ => false,
                    })
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredicateResult {
    pub rung: LadderRung,
    pub holds: bool,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LadderAssessment {
    /// `None` for a dataset without files.
    pub rung: Option<LadderRung>,
    pub predicates: Vec<PredicateResult>,
}

/// A6 files that accompany the A7 image `image`: the ones it links to, or
/// every A6 file in `files` when the image declares no links.
pub fn companion_recipes<'a>(image: &ArtifactFile, files: &[&'a ArtifactFile]) -> Vec<&'a ArtifactFile> {
    let recipes = files.iter().copied().filter(|f| f.kind == ArtifactKind::Recipe);
    if image.links.is_empty() {
        return recipes.collect();
    }
    recipes
        .filter(|r| {
            image.links.iter().any(|l| r.pid.as_deref() == Some(l.target.as_str()) || r.path == l.target)
        })
        .collect()
}

fn content(blobs: &dyn BlobSource, f: &ArtifactFile) -> Option<Vec<u8>> {
    f.checksum.as_deref().and_then(|c| blobs.blob(c))
}

pub(crate) fn recipe_lints_clean(blobs: &dyn BlobSource, f: &ArtifactFile) -> bool {
    content(blobs, f)
        .and_then(|b| String::from_utf8(b).ok())
        .is_some_and(|text| lint_recipe(&text).is_empty())
}

fn template_parameters(blobs: &dyn BlobSource, f: &ArtifactFile) -> Option<usize> {
    let text = String::from_utf8(content(blobs, f)?).ok()?;
    parse_template(&text).ok().map(|t| t.parameters.len())
}

/// Highest rung whose predicate, and that of every rung below, holds.
///
/// Above Packageable only retrievable files (pid and checksum) count, so
/// removing a file can never raise the result.
pub fn classify_ladder(d: &Dataset, blobs: &dyn BlobSource, policy: &LadderPolicy) -> LadderAssessment {
    let retrievable: Vec<&ArtifactFile> = d.files.iter().filter(|f| f.is_retrievable()).collect();
    let of = |k: ArtifactKind| retrievable.iter().copied().filter(move |f| f.kind == k);
    let mut predicates = Vec::with_capacity(8);
    let mut push = |rung, holds: bool, reason: String| predicates.push(PredicateResult { rung, holds, reason });

    push(LadderRung::Packageable, !d.files.is_empty(), format!("{} file(s)", d.files.len()));
    push(
        LadderRung::Retrievable,
        !retrievable.is_empty(),
        format!("{} of {} file(s) have a persistent identifier and checksum", retrievable.len(), d.files.len()),
    );

    let mut missing = Vec::new();
    if d.title.trim().is_empty() {
        missing.push("title");
    }
    if d.description.trim().is_empty() {
        missing.push("description");
    }
    if !d.keywords.iter().any(|k| !k.trim().is_empty()) {
        missing.push("keyword");
    }
    if !d.authors.iter().any(|a| !a.trim().is_empty()) {
        missing.push("author");
    }
    push(
        LadderRung::Discoverable,
        missing.is_empty(),
        if missing.is_empty() { "citation metadata complete".into() } else { format!("missing {}", missing.join(", ")) },
    );

    let deployable = retrievable.iter().find(|f| {
        matches!(f.kind, ArtifactKind::Instructions | ArtifactKind::Automation | ArtifactKind::Recipe | ArtifactKind::Image)
    });
    push(
        LadderRung::Deployable,
        deployable.is_some(),
        match deployable {
            Some(f) => format!("{} `{}`", f.kind, f.path),
            None => "no instructions, automation, recipe or image".into(),
        },
    );

    let repeatable = of(ArtifactKind::Image).find_map(|image| {
        companion_recipes(image, &retrievable)
            .into_iter()
            .find(|r| recipe_lints_clean(blobs, r))
            .map(|r| (image, r))
    });
    push(
        LadderRung::Repeatable,
        repeatable.is_some(),
        match repeatable {
            Some((i, r)) => format!("image `{}` built by clean recipe `{}`", i.path, r.path),
            None => "no image with a lint-clean companion recipe".into(),
        },
    );

    let configurable = of(ArtifactKind::WebappTemplate).find(|f| template_parameters(blobs, f).is_some_and(|n| n >= 1));
    push(
        LadderRung::Configurable,
        configurable.is_some(),
        match configurable {
            Some(f) => format!("template `{}` has parameters", f.path),
            None => "no valid computation template with parameters".into(),
        },
    );

    let derivable = of(ArtifactKind::Source).find(|f| policy.is_open(&f.license));
    push(
        LadderRung::Derivable,
        derivable.is_some(),
        match derivable {
            Some(f) => format!("source `{}` under {}", f.path, f.license),
            None => "no source under an open license".into(),
        },
    );

    let data: Vec<&ArtifactFile> = of(ArtifactKind::Data).collect();
    let verified = d.verifications.iter().find(|v| {
        let template_ok = of(ArtifactKind::WebappTemplate).any(|f| {
            (f.pid.as_deref() == Some(v.template_pid.as_str()) || f.path == v.template_pid)
                && template_parameters(blobs, f).is_some()
        });
        template_ok
            && !v.expected.is_empty()
            && v.expected.values().all(|sum| data.iter().any(|f| f.checksum.as_deref() == Some(sum.as_str())))
    });
    push(
        LadderRung::Verifiable,
        !data.is_empty() && verified.is_some(),
        match verified {
            Some(v) if !data.is_empty() => format!("verification of `{}` matches reference data", v.template_pid),
            _ => "no reference data with a matching verification declaration".into(),
        },
    );

    let held = predicates.iter().take_while(|p| p.holds).count();
    LadderAssessment { rung: held.checked_sub(1).map(|i| LadderRung::ALL[i]), predicates }
}
