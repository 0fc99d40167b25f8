use std::fmt::Write;

use super::InstallPlan;
use crate::sha256_hex;

/// Quotes `s` for a POSIX shell.
pub(crate) fn shell_quote(s: &str) -> String {
    if !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || b"-_./:=@+,%".contains(&b)) {
        return s.to_owned();
    }
    format!("'{}'", s.replace('\'', r"'\''"))
}

/// Download URL for a persistent identifier, or `None` for unknown schemes.
pub(crate) fn pid_url(pid: &str) -> Option<String> {
    let pid = pid.trim();
    if let Some(doi) = pid.strip_prefix("doi:") {
        return (!doi.is_empty()).then(|| format!("https://doi.org/{doi}"));
    }
    if pid.starts_with("swh:1:") {
        return Some(format!("https://archive.softwareheritage.org/api/1/vault/flat/{pid}/raw/"));
    }
    if pid.starts_with("https://") || pid.starts_with("http://") {
        return Some(pid.to_owned());
    }
    None
}

/// Emits a POSIX shell script that rebuilds the captured workspace.
///
/// The script takes the target directory as optional first argument. Modules
/// with a persistent identifier are downloaded as archives, all others are
/// cloned from their origin and checked out at the recorded revision. Local
/// changes are applied from embedded here-documents.
pub fn emit_install_script(plan: &InstallPlan) -> String {
    let mut s = String::new();
    s.push_str("#!/bin/sh\n");
    let _ = writeln!(s, "# Installs {} module(s). Usage: install.sh [target-directory]", plan.modules.len());
    s.push_str("set -eu\n\n");
    s.push_str("dest=${1:-.}\nmkdir -p \"$dest\"\ncd \"$dest\"\n");

    for m in &plan.modules {
        let dir = shell_quote(&m.subdir);
        let _ = writeln!(s, "\n# {}", m.name.replace('\n', " "));
        match m.persistent_id.as_deref().and_then(pid_url) {
            Some(url) => {
                let _ = writeln!(s, "mkdir -p {dir}");
                let _ = writeln!(
                    s,
                    "curl -fsSL {} | tar -xzf - -C {dir} --strip-components=1",
                    shell_quote(&url)
                );
            }
            None => {
                let _ = writeln!(
                    s,
                    "git clone --quiet --no-checkout -- {} {dir}",
                    shell_quote(&m.origin)
                );
                let _ = writeln!(
                    s,
                    "git -C {dir} -c advice.detachedHead=false checkout --quiet --detach {}",
                    shell_quote(&m.revision)
                );
            }
        }
        if let Some(patch) = m.patch.as_deref().filter(|p| !p.is_empty()) {
            // The delimiter embeds a digest of the patch, so the patch cannot
            // contain it as a line.
            let delimiter = format!("REPLICATOR_PATCH_{}", &sha256_hex(patch.as_bytes())[..16]);
            // Discovery stops at the module directory, so archives without
            // `.git` are patched in place rather than through an enclosing
            // repository.
            let _ = writeln!(
                s,
                "(cd {dir} && GIT_CEILING_DIRECTORIES=\"$(dirname \"$PWD\")\" git apply --binary --whitespace=nowarn) <<'{delimiter}'"
            );
            s.push_str(patch);
            if !patch.ends_with('\n') {
                s.push('\n');
            }
            let _ = writeln!(s, "{delimiter}");
        }
    }

    if !plan.configure_command.trim().is_empty() {
        s.push_str("\n# configure\n");
        let _ = writeln!(s, "sh -c {}", shell_quote(&plan.configure_command));
    }
    s
}
