//! Capture against real git repositories and rebuild with the emitted script.

use std::os::unix::fs::PermissionsExt;
use std::path::Path;
use std::process::Command;

use replicator_core::capture::{
    capture_workspace, emit_install_script, CaptureError, GitInspector, VcsInspector,
};
use sha2::{Digest, Sha256};

fn git(dir: &Path, args: &[&str]) {
    let out = Command::new("git")
        .args(["-c", "user.name=Test", "-c", "user.email=test@example.org", "-c", "init.defaultBranch=main"])
        .args(args)
        .current_dir(dir)
        .env("GIT_CONFIG_NOSYSTEM", "1")
        .env("HOME", dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "git {args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

/// Recursive content hash: sorted relative paths, entry type, executable
/// bit and bytes. `.git` directories are skipped unless `with_git`.
fn tree_hash(root: &Path, with_git: bool) -> String {
    fn walk(dir: &Path, rel: &str, with_git: bool, h: &mut Sha256) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap()).collect();
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let name = e.file_name().to_string_lossy().into_owned();
            if name == ".git" && !with_git {
                continue;
            }
            let path = e.path();
            let rel = format!("{rel}/{name}");
            let meta = std::fs::symlink_metadata(&path).unwrap();
            if meta.file_type().is_symlink() {
                h.update(format!("L {rel} {}\n", std::fs::read_link(&path).unwrap().display()));
            } else if meta.is_dir() {
                h.update(format!("D {rel}\n"));
                walk(&path, &rel, with_git, h);
            } else {
                let exec = meta.permissions().mode() & 0o111 != 0;
                let bytes = std::fs::read(&path).unwrap();
                h.update(format!("F {rel} {exec} {}\n", bytes.len()));
                h.update(&bytes);
            }
        }
    }
    let mut h = Sha256::new();
    walk(root, "", with_git, &mut h);
    hex::encode(h.finalize())
}

/// Creates `upstream/<name>` with one tagged commit and clones it into
/// `ws/<name>`.
fn module(base: &Path, name: &str, files: &[(&str, &[u8])]) {
    let up = base.join("upstream").join(name);
    std::fs::create_dir_all(&up).unwrap();
    git(&up, &["init", "-q"]);
    for (path, content) in files {
        let p = up.join(path);
        std::fs::create_dir_all(p.parent().unwrap()).unwrap();
        std::fs::write(p, content).unwrap();
    }
    git(&up, &["add", "-A"]);
    git(&up, &["commit", "-q", "-m", "initial"]);
    git(&up, &["tag", "v1.0"]);
    std::fs::create_dir_all(base.join("ws")).unwrap();
    git(&base.join("ws"), &["clone", "-q", up.to_str().unwrap(), name]);
}

fn synthetic_workspace(base: &Path) {
    module(base, "core", &[("README", b"core module\n"), ("src/lib.h", b"#pragma once\nint f();\n")]);
    module(base, "numerics", &[("solver.cc", b"int solve() { return 0; }\n"), ("data/table.bin", &[0, 1, 2, 255, 0])]);
    module(base, "app", &[("main.cc", b"int main() {\n  return 0;\n}\n"), ("legacy.txt", b"caf\xe9\n"), ("gone.txt", b"x\n")]);
    let ws = base.join("ws");
    std::fs::write(ws.join("deps.txt"), "numerics -> core\napp -> numerics\n").unwrap();

    // Dirty module: tracked edits, a deletion, and untracked files of
    // several kinds.
    let app = ws.join("app");
    std::fs::write(app.join("main.cc"), b"int main() {\n  return 42;\n}\n").unwrap();
    std::fs::write(app.join("legacy.txt"), b"na\xefve caf\xe9\n").unwrap();
    std::fs::remove_file(app.join("gone.txt")).unwrap();
    std::fs::create_dir_all(app.join("extra/deep")).unwrap();
    std::fs::write(app.join("extra/deep/params input.ini"), "[grid]\ncells = 100\n").unwrap();
    std::fs::write(app.join("extra/blob.bin"), [0u8, 159, 146, 150, 0, 7]).unwrap();
    std::fs::write(app.join("extra/empty"), b"").unwrap();
    std::fs::write(app.join("run.sh"), "#!/bin/sh\necho run\n").unwrap();
    std::fs::set_permissions(app.join("run.sh"), std::fs::Permissions::from_mode(0o755)).unwrap();
    std::os::unix::fs::symlink("main.cc", app.join("main-link.cc")).unwrap();
    std::fs::write(app.join(".gitignore"), "build/\n").unwrap();
    std::fs::create_dir_all(app.join("build")).unwrap();
    std::fs::write(app.join("build/ignored.o"), b"object").unwrap();
}

#[test]
fn reconstruction_reproduces_every_module() {
    let tmp = tempfile::tempdir().unwrap();
    synthetic_workspace(tmp.path());
    let ws = tmp.path().join("ws");

    let before = tree_hash(&ws, true);
    let cap = capture_workspace(&ws, None).unwrap();
    assert_eq!(tree_hash(&ws, true), before, "capture modified the workspace");

    let plan = &cap.plan;
    let names: Vec<_> = plan.modules.iter().map(|m| m.name.as_str()).collect();
    assert_eq!(names, ["core", "numerics", "app"]);
    assert!(plan.modules[0].patch.is_none());
    assert!(plan.modules[1].patch.is_none());
    let patch = plan.modules[2].patch.as_deref().unwrap();
    assert!(patch.contains("extra/deep/params input.ini") || patch.contains("extra/deep/params\\040input.ini"));
    assert!(!patch.contains("ignored.o"));
    assert!(plan.modules.iter().all(|m| m.revision.len() == 40));
    assert!(cap.warnings.is_empty(), "{:?}", cap.warnings);

    let script = emit_install_script(plan);
    assert_eq!(script, emit_install_script(plan));
    let script_path = tmp.path().join("install.sh");
    std::fs::write(&script_path, &script).unwrap();
    let out_dir = tmp.path().join("rebuilt");
    let out = Command::new("sh").arg(&script_path).arg(&out_dir).output().unwrap();
    assert!(out.status.success(), "install script failed: {}", String::from_utf8_lossy(&out.stderr));

    // The ignored build directory is not part of the captured state.
    std::fs::remove_dir_all(ws.join("app/build")).unwrap();
    for m in &plan.modules {
        assert_eq!(
            tree_hash(&out_dir.join(&m.subdir), false),
            tree_hash(&ws.join(&m.name), false),
            "module {} differs after reconstruction",
            m.name
        );
    }
}

#[test]
fn plain_directory_is_not_a_working_copy() {
    let tmp = tempfile::tempdir().unwrap();
    // Even inside a repository, a subdirectory is not its own working copy.
    git(tmp.path(), &["init", "-q"]);
    std::fs::create_dir(tmp.path().join("sub")).unwrap();
    let err = GitInspector::default().inspect(&tmp.path().join("sub")).unwrap_err();
    assert!(matches!(err, CaptureError::NotAWorkingCopy(_)), "{err}");
}

#[test]
fn repository_without_commits() {
    let tmp = tempfile::tempdir().unwrap();
    git(tmp.path(), &["init", "-q"]);
    let err = GitInspector::default().inspect(tmp.path()).unwrap_err();
    assert!(matches!(err, CaptureError::DetachedUnknownRevision(_)), "{err}");
}

#[test]
fn repository_without_remote() {
    let tmp = tempfile::tempdir().unwrap();
    git(tmp.path(), &["init", "-q"]);
    std::fs::write(tmp.path().join("f"), "x").unwrap();
    git(tmp.path(), &["add", "f"]);
    git(tmp.path(), &["commit", "-q", "-m", "c"]);
    let err = GitInspector::default().inspect(tmp.path()).unwrap_err();
    assert!(matches!(err, CaptureError::MissingOrigin(_)), "{err}");
}

#[test]
fn unpublished_commit_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    module(tmp.path(), "m", &[("a", b"1\n")]);
    let m = tmp.path().join("ws/m");
    std::fs::write(m.join("a"), "2\n").unwrap();
    git(&m, &["commit", "-q", "-am", "local"]);
    let cap = capture_workspace(&tmp.path().join("ws"), None).unwrap();
    assert_eq!(cap.warnings.len(), 1);
    assert_eq!(cap.warnings[0].rule, "unpublished-revision");
}

#[test]
fn missing_tool() {
    let tmp = tempfile::tempdir().unwrap();
    let err = GitInspector::with_program("/nonexistent/git").inspect(tmp.path()).unwrap_err();
    assert!(matches!(err, CaptureError::VcsToolUnavailable));
}
