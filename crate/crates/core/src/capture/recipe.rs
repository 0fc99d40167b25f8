use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;
use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

use super::{validate_plan, InstallPlan, PackageManager};
use crate::finding::{Finding, Severity};

/// Container rules checked by [`lint_recipe`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LintRule {
    HwFlags,
    UnpinnedBase,
    UnpinnedPkg,
    Cache,
    LargeCopy,
}

impl LintRule {
    pub const ALL: [LintRule; 5] =
        [Self::HwFlags, Self::UnpinnedBase, Self::UnpinnedPkg, Self::Cache, Self::LargeCopy];

    pub fn id(self) -> &'static str {
        match self {
            Self::HwFlags => "CP2-hw-flags",
            Self::UnpinnedBase => "CP3-unpinned-base",
            Self::UnpinnedPkg => "CP3-unpinned-pkg",
            Self::Cache => "CP4-cache",
            Self::LargeCopy => "CP4-large-copy",
        }
    }

    pub fn severity(self) -> Severity {
        match self {
            Self::HwFlags | Self::UnpinnedBase | Self::UnpinnedPkg => Severity::Error,
            Self::Cache | Self::LargeCopy => Severity::Warning,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecipeError {
    #[error("base image `{0}` is not pinned to an explicit tag other than `latest`")]
    UnpinnedBaseImage(String),
    #[error("install plan is invalid: {}", .0.iter().map(|f| f.message.as_str()).collect::<Vec<_>>().join("; "))]
    InvalidPlan(Vec<Finding>),
}

/// True for `name:tag` with a tag other than `latest`, and for digests.
pub fn is_pinned_image(image: &str) -> bool {
    let valid = !image.is_empty()
        && image.bytes().all(|b| b.is_ascii_alphanumeric() || b"._-/:@".contains(&b))
        && !image.starts_with(['-', '/', ':', '@']);
    if !valid {
        return false;
    }
    if let Some((_, digest)) = image.split_once('@') {
        return digest.contains(':') && !digest.ends_with(':');
    }
    let last = image.rsplit('/').next().unwrap_or(image);
    match last.split_once(':') {
        Some((_, tag)) => !tag.is_empty() && tag != "latest",
        None => false,
    }
}

const SCRIPT_DIR: &str = "/opt/replicator";
const MODULE_DIR: &str = "/opt/modules";

/// Emits a Dockerfile that installs the pinned system packages on
/// `base_image` and then runs the plan's install script, which must be
/// placed next to the recipe as `install.sh`.
pub fn emit_container_recipe(plan: &InstallPlan, base_image: &str) -> Result<String, RecipeError> {
    let base_image = base_image.trim();
    if !is_pinned_image(base_image) {
        return Err(RecipeError::UnpinnedBaseImage(base_image.to_owned()));
    }
    let problems: Vec<Finding> = validate_plan(plan).into_iter().filter(Finding::is_error).collect();
    if !problems.is_empty() {
        return Err(RecipeError::InvalidPlan(problems));
    }

    let mut apt = Vec::new();
    let mut pip = Vec::new();
    let mut other: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for p in &plan.system_packages {
        match &p.manager {
            PackageManager::Apt => apt.push(p.spec()),
            PackageManager::Pip => pip.push(p.spec()),
            PackageManager::Other(m) => other.entry(m).or_default().push(p.spec()),
        }
    }

    let mut r = String::new();
    let _ = writeln!(r, "FROM {base_image}\n");
    if !apt.is_empty() {
        r.push_str("ENV DEBIAN_FRONTEND=noninteractive\n");
        r.push_str("RUN apt-get update \\\n && apt-get install -y --no-install-recommends \\\n");
        for spec in &apt {
            let _ = writeln!(r, "      {spec} \\");
        }
        r.push_str(" && rm -rf /var/lib/apt/lists/*\n");
    }
    if !pip.is_empty() {
        let _ = writeln!(r, "RUN python3 -m pip install --no-cache-dir {}", pip.join(" "));
    }
    for (manager, specs) in other {
        // No generic install syntax exists for arbitrary managers.
        let _ = writeln!(r, "# install with {manager}: {}", specs.join(" "));
    }
    let _ = writeln!(r, "\nCOPY install.sh {SCRIPT_DIR}/install.sh");
    let _ = writeln!(r, "WORKDIR {MODULE_DIR}");
    let _ = writeln!(
        r,
        "RUN sh {SCRIPT_DIR}/install.sh {MODULE_DIR} \\\n && rm -rf {SCRIPT_DIR} /root/.cache /tmp/*"
    );
    Ok(r)
}

/// Lints a Dockerfile and reports locations as `Dockerfile:<line>`.
pub fn lint_recipe(recipe: &str) -> Vec<Finding> {
    lint_recipe_file("Dockerfile", recipe)
}

struct Instruction {
    line: usize,
    keyword: String,
    args: String,
}

fn instructions(recipe: &str) -> Vec<Instruction> {
    let mut out = Vec::new();
    let mut current: Option<Instruction> = None;
    for (i, raw) in recipe.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        let trimmed = line.trim_start();
        if trimmed.starts_with('#') || (trimmed.is_empty() && current.is_none()) {
            continue;
        }
        let (body, continued) = match line.trim_end().strip_suffix('\\') {
            Some(body) => (body, true),
            None => (line, false),
        };
        match current.as_mut() {
            Some(ins) => {
                ins.args.push('\n');
                ins.args.push_str(body);
            }
            None => {
                let body = body.trim_start();
                let (keyword, args) = body.split_once(char::is_whitespace).unwrap_or((body, ""));
                current = Some(Instruction { line: i + 1, keyword: keyword.to_ascii_uppercase(), args: args.to_owned() });
            }
        }
        if !continued {
            out.extend(current.take());
        }
    }
    out.extend(current);
    out
}

static HW_FLAG: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"(?:^|[\s"'=;])(-m(?:arch|tune|cpu)=native|-xHost|-march=[A-Za-z0-9_-]*(?:skylake|haswell|broadwell|znver|icelake|sapphirerapids|cascadelake|cooperlake|tigerlake|alderlake|rocketlake)[A-Za-z0-9_-]*|-mavx[0-9a-z_]*|-mfma|-msse4(?:\.[12]|[a-z]*))(?:$|[\s"';])"#).unwrap()
});
static ARG_REF: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\$\{?([A-Za-z_][A-Za-z0-9_]*)(?::-[^}]*)?\}?").unwrap());

pub fn lint_recipe_file(file: &str, recipe: &str) -> Vec<Finding> {
    let mut out = Vec::new();
    let mut push = |rule: LintRule, line: usize, message: String| {
        out.push(Finding {
            rule: rule.id().to_owned(),
            severity: rule.severity(),
            location: format!("{file}:{line}"),
            message,
        });
    };

    let mut args: BTreeMap<String, String> = BTreeMap::new();
    let mut stages: BTreeSet<String> = BTreeSet::new();
    let mut pip_cache_disabled = false;

    for ins in instructions(recipe) {
        let text = ins.args.as_str();
        match ins.keyword.as_str() {
            "ARG" => {
                for decl in text.split_whitespace() {
                    if let Some((k, v)) = decl.split_once('=') {
                        args.insert(k.to_owned(), v.trim_matches('"').to_owned());
                    }
                }
            }
            "FROM" => {
                let words: Vec<&str> = text.split_whitespace().filter(|w| !w.starts_with("--")).collect();
                let Some(image) = words.first() else { continue };
                if let [_, kw, alias, ..] = words.as_slice() {
                    if kw.eq_ignore_ascii_case("as") {
                        stages.insert(alias.to_ascii_lowercase());
                    }
                }
                let resolved = ARG_REF.replace_all(image, |c: &regex::Captures| {
                    args.get(&c[1]).cloned().unwrap_or_else(|| c[0].to_owned())
                });
                if resolved == "scratch" || stages.contains(&resolved.to_ascii_lowercase()) {
                    continue;
                }
                if resolved.contains('$') {
                    push(LintRule::UnpinnedBase, ins.line, format!("base image `{image}` depends on an unset build argument"));
                } else if !is_pinned_image(&resolved) {
                    push(LintRule::UnpinnedBase, ins.line, format!("base image `{resolved}` has no explicit version tag"));
                }
            }
            "ENV" => {
                if text.contains("PIP_NO_CACHE_DIR") {
                    pip_cache_disabled = true;
                }
                if let Some(m) = HW_FLAG.captures(text) {
                    push(LintRule::HwFlags, ins.line, format!("hardware-specific compiler flag `{}`", &m[1]));
                }
            }
            "RUN" => {
                let shell = exec_form(text).unwrap_or_else(|| text.to_owned());
                if let Some(m) = HW_FLAG.captures(&shell) {
                    push(LintRule::HwFlags, ins.line, format!("hardware-specific compiler flag `{}`", &m[1]));
                }
                lint_run(&shell, pip_cache_disabled, &mut |rule, msg| push(rule, ins.line, msg));
            }
            "COPY" | "ADD" => {
                let words: Vec<&str> = text.split_whitespace().collect();
                if words.iter().any(|w| w.starts_with("--from")) {
                    continue;
                }
                let sources = words.iter().filter(|w| !w.starts_with("--")).collect::<Vec<_>>();
                if sources.len() >= 2 && sources[..sources.len() - 1].iter().any(|s| matches!(**s, "." | "./")) {
                    push(LintRule::LargeCopy, ins.line, format!("{} copies the whole build context", ins.keyword));
                }
            }
            _ => {}
        }
    }
    out
}

fn exec_form(args: &str) -> Option<String> {
    let v: Vec<String> = serde_json::from_str(args.trim()).ok()?;
    Some(v.join(" "))
}

/// Splits a shell command line into simple commands at `&&`, `||`, `;`, `|`
/// and newlines, then into words with quotes removed.
fn simple_commands(shell: &str) -> Vec<Vec<String>> {
    let mut commands = vec![Vec::new()];
    let mut word = String::new();
    let mut in_word = false;
    let mut chars = shell.chars().peekable();
    let mut quote: Option<char> = None;
    let flush = |word: &mut String, in_word: &mut bool, commands: &mut Vec<Vec<String>>| {
        if *in_word {
            commands.last_mut().unwrap().push(std::mem::take(word));
            *in_word = false;
        }
    };
    while let Some(c) = chars.next() {
        match (quote, c) {
            (Some(q), c) if c == q => quote = None,
            (Some(_), c) => word.push(c),
            (None, '\'' | '"') => {
                quote = Some(c);
                in_word = true;
            }
            (None, '\\') => {
                if let Some(n) = chars.next() {
                    word.push(n);
                    in_word = true;
                }
            }
            (None, '&' | '|' | ';' | '\n') => {
                flush(&mut word, &mut in_word, &mut commands);
                if chars.peek() == Some(&c) {
                    chars.next();
                }
                if !commands.last().unwrap().is_empty() {
                    commands.push(Vec::new());
                }
            }
            (None, c) if c.is_whitespace() => flush(&mut word, &mut in_word, &mut commands),
            (None, c) => {
                word.push(c);
                in_word = true;
            }
        }
    }
    flush(&mut word, &mut in_word, &mut commands);
    commands.retain(|c| !c.is_empty());
    commands
}

/// Options whose next word is a value, not a package.
const APT_VALUE_OPTS: &[&str] = &["-o", "-t", "--target-release", "-c", "--config-file"];
const PIP_VALUE_OPTS: &[&str] = &[
    "-r", "--requirement", "-c", "--constraint", "-e", "--editable", "-i", "--index-url",
    "--extra-index-url", "-t", "--target", "--prefix", "--root", "-f", "--find-links",
    "--platform", "--python-version", "--implementation", "--abi", "--src", "--trusted-host",
    "--cache-dir", "--progress-bar", "--log",
];

fn operands<'a>(words: &'a [String], value_opts: &[&str]) -> Vec<&'a str> {
    let mut out = Vec::new();
    let mut skip = false;
    for w in words {
        if skip {
            skip = false;
        } else if w.starts_with('-') {
            skip = value_opts.contains(&w.as_str());
        } else {
            out.push(w.as_str());
        }
    }
    out
}

fn lint_run(shell: &str, pip_cache_disabled: bool, push: &mut dyn FnMut(LintRule, String)) {
    let commands = simple_commands(shell);
    let mentions = |needle: &str| commands.iter().flatten().any(|w| w.contains(needle));

    for words in &commands {
        // Skip `sudo`, `env` and leading variable assignments.
        let start = words
            .iter()
            .position(|w| !(w == "sudo" || w == "env" || (w.contains('=') && !w.starts_with('-'))))
            .unwrap_or(words.len());
        let words = &words[start..];
        let Some(tool) = words.first().map(|w| w.rsplit('/').next().unwrap_or(w)) else { continue };

        let (manager, rest): (&str, &[String]) = match tool {
            "apt-get" | "apt" | "aptitude" => ("apt", &words[1..]),
            t if is_pip(t) => ("pip", &words[1..]),
            t if t.starts_with("python") && words.get(1).map(String::as_str) == Some("-m")
                && words.get(2).is_some_and(|m| is_pip(m)) => ("pip", &words[3..]),
            "apk" => ("apk", &words[1..]),
            "conda" | "mamba" | "micromamba" => ("conda", &words[1..]),
            "yum" | "dnf" | "microdnf" => ("yum", &words[1..]),
            _ => continue,
        };
        let subcommand_at = rest.iter().position(|w| !w.starts_with('-'));
        let Some(sub_at) = subcommand_at else { continue };
        let sub = rest[sub_at].as_str();
        let is_install = matches!((manager, sub), (_, "install") | ("apk", "add"));
        if !is_install {
            continue;
        }
        let args = &rest[sub_at + 1..];
        let opts = if manager == "pip" { PIP_VALUE_OPTS } else { APT_VALUE_OPTS };
        for pkg in operands(args, opts) {
            let pinned = match manager {
                "pip" => pkg.contains("==") || pkg.contains('@') || pkg.contains('/') || pkg.ends_with(".whl")
                    || pkg.ends_with(".tar.gz") || pkg.ends_with(".zip"),
                "yum" => pkg.contains('/') || pkg.ends_with(".rpm") || has_rpm_version(pkg),
                "apt" => pkg.contains('=') || pkg.contains('/') || pkg.ends_with(".deb"),
                _ => pkg.contains('='),
            };
            if !pinned {
                push(LintRule::UnpinnedPkg, format!("{manager} package `{pkg}` is not version-pinned"));
            }
        }
        let cleaned = match manager {
            "apt" => mentions("/var/lib/apt/lists"),
            "pip" => pip_cache_disabled || args.iter().any(|a| a == "--no-cache-dir") || mentions("PIP_NO_CACHE_DIR"),
            "apk" => args.iter().any(|a| a == "--no-cache") || mentions("/var/cache/apk"),
            "conda" => commands.iter().any(|c| c.iter().any(|w| w == "clean")),
            _ => commands.iter().any(|c| c.iter().any(|w| w == "clean")) || mentions("/var/cache/"),
        };
        if !cleaned {
            push(LintRule::Cache, format!("{manager} install leaves its package cache in the image layer"));
        }
    }
}

fn is_pip(tool: &str) -> bool {
    tool == "pip" || tool.strip_prefix("pip").is_some_and(|v| v.chars().all(|c| c.is_ascii_digit() || c == '.'))
}

fn has_rpm_version(pkg: &str) -> bool {
    pkg.match_indices('-').any(|(i, _)| pkg[i + 1..].starts_with(|c: char| c.is_ascii_digit()))
}
