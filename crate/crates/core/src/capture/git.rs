use std::ffi::OsStr;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use super::CaptureError;

/// What a VCS reports about one working copy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModuleState {
    pub origin: String,
    pub revision: String,
    pub patch: Option<String>,
    /// Whether `revision` is reachable from a remote-tracking ref.
    pub published: bool,
}

/// Read-only access to a working copy.
pub trait VcsInspector: Sync {
    fn inspect(&self, dir: &Path) -> Result<ModuleState, CaptureError>;
}

/// Inspects Git working copies through the `git` command-line tool.
#[derive(Debug, Clone)]
pub struct GitInspector {
    program: PathBuf,
}

impl Default for GitInspector {
    fn default() -> Self {
        Self { program: PathBuf::from("git") }
    }
}

// Flags that make diff output independent of user configuration.
const DIFF_FLAGS: &[&str] = &[
    "--binary",
    "--no-color",
    "--no-ext-diff",
    "--no-textconv",
    "--src-prefix=a/",
    "--dst-prefix=b/",
    "--full-index",
];

impl GitInspector {
    pub fn with_program(program: impl Into<PathBuf>) -> Self {
        Self { program: program.into() }
    }

    fn run<I, S>(&self, dir: &Path, args: I, extra_config: &[&str]) -> Result<Output, CaptureError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<OsStr>,
    {
        let mut cmd = Command::new(&self.program);
        cmd.arg("-c").arg("safe.directory=*").arg("-c").arg("core.quotePath=true");
        for c in extra_config {
            cmd.arg("-c").arg(c);
        }
        cmd.args(args)
            .current_dir(dir)
            .env("LC_ALL", "C")
            .env("GIT_OPTIONAL_LOCKS", "0")
            .env("GIT_CONFIG_NOSYSTEM", "1")
            .env_remove("GIT_DIR")
            .env_remove("GIT_WORK_TREE")
            .env_remove("GIT_INDEX_FILE")
            .env_remove("GIT_EXTERNAL_DIFF");
        cmd.output().map_err(|e| match e.kind() {
            ErrorKind::NotFound => CaptureError::VcsToolUnavailable,
            _ => CaptureError::Io { path: dir.to_path_buf(), source: e },
        })
    }

    fn checked(&self, dir: &Path, args: &[&str]) -> Result<Vec<u8>, CaptureError> {
        let out = self.run(dir, args, &[])?;
        if !out.status.success() {
            return Err(vcs_error(dir, args, &out));
        }
        Ok(out.stdout)
    }

    fn origin(&self, dir: &Path) -> Result<String, CaptureError> {
        let out = self.run(dir, ["config", "--get", "remote.origin.url"], &[])?;
        let mut url = trimmed(&out.stdout);
        if url.is_empty() {
            // Fall back to the alphabetically first remote.
            let remotes = self.checked(dir, &["remote"])?;
            let first = String::from_utf8_lossy(&remotes).lines().map(str::to_owned).min();
            let Some(remote) = first else {
                return Err(CaptureError::MissingOrigin(dir.to_path_buf()));
            };
            url = trimmed(&self.checked(dir, &["config", "--get", &format!("remote.{remote}.url")])?);
        }
        // Relative local remotes are resolved against the working copy.
        if url.starts_with("./") || url.starts_with("../") {
            if let Ok(abs) = dir.join(&url).canonicalize() {
                url = abs.to_string_lossy().into_owned();
            }
        }
        Ok(url)
    }

    fn patch(&self, dir: &Path, extra_config: &[&str]) -> Result<Vec<u8>, CaptureError> {
        let mut args: Vec<&str> = vec!["diff"];
        args.extend(DIFF_FLAGS);
        args.extend(["--no-renames", "--no-relative", "--ignore-submodules=all", "HEAD", "--"]);
        let out = self.run(dir, &args, extra_config)?;
        if !out.status.success() {
            return Err(vcs_error(dir, &args, &out));
        }
        let mut patch = out.stdout;

        let untracked = self.checked(dir, &["ls-files", "--others", "--exclude-standard", "-z"])?;
        for file in untracked.split(|&b| b == 0).filter(|f| !f.is_empty()) {
            let file = String::from_utf8_lossy(file).into_owned();
            let mut args: Vec<&str> = vec!["diff", "--no-index"];
            args.extend(DIFF_FLAGS);
            args.extend(["--", "/dev/null", &file]);
            let out = self.run(dir, &args, extra_config)?;
            // `--no-index` exits with 1 when the inputs differ.
            if out.status.code() != Some(1) {
                return Err(vcs_error(dir, &args, &out));
            }
            patch.extend_from_slice(&out.stdout);
        }
        Ok(patch)
    }
}

impl VcsInspector for GitInspector {
    fn inspect(&self, dir: &Path) -> Result<ModuleState, CaptureError> {
        let top = self.run(dir, ["rev-parse", "--show-toplevel"], &[])?;
        let top = PathBuf::from(trimmed(&top.stdout));
        let same = match (top.canonicalize(), dir.canonicalize()) {
            (Ok(a), Ok(b)) => a == b,
            _ => false,
        };
        if !same {
            return Err(CaptureError::NotAWorkingCopy(dir.to_path_buf()));
        }

        let head = self.run(dir, ["rev-parse", "--verify", "--quiet", "HEAD^{commit}"], &[])?;
        let revision = trimmed(&head.stdout);
        if !head.status.success() || revision.is_empty() {
            return Err(CaptureError::DetachedUnknownRevision(dir.to_path_buf()));
        }
        let origin = self.origin(dir)?;

        let mut patch = self.patch(dir, &[])?;
        if std::str::from_utf8(&patch).is_err() {
            // Text files in a legacy encoding: re-diff with every path treated
            // as binary so the patch is ASCII.
            let attributes = std::env::temp_dir().join(format!("replicator-attr-{}", uuid::Uuid::new_v4()));
            std::fs::write(&attributes, "* binary\n")
                .map_err(|source| CaptureError::Io { path: attributes.clone(), source })?;
            let setting = format!("core.attributesFile={}", attributes.display());
            let result = self.patch(dir, &[&setting]);
            let _ = std::fs::remove_file(&attributes);
            patch = result?;
        }
        let patch = String::from_utf8(patch).map_err(|_| CaptureError::Vcs {
            dir: dir.to_path_buf(),
            command: "diff".into(),
            stderr: "patch is not valid UTF-8".into(),
        })?;

        let remote = self.run(dir, ["branch", "--remotes", "--contains", &revision], &[])?;
        let published = remote.status.success() && !trimmed(&remote.stdout).is_empty();

        Ok(ModuleState {
            origin,
            revision,
            patch: (!patch.is_empty()).then_some(patch),
            published,
        })
    }
}

fn trimmed(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).trim().to_owned()
}

fn vcs_error<S: AsRef<OsStr>>(dir: &Path, args: &[S], out: &Output) -> CaptureError {
    CaptureError::Vcs {
        dir: dir.to_path_buf(),
        command: args.iter().map(|a| a.as_ref().to_string_lossy()).collect::<Vec<_>>().join(" "),
        stderr: trimmed(&out.stderr),
    }
}
