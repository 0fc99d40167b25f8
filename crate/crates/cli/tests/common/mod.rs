#![allow(dead_code)]

use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};
use std::process::Command;

use sha2::{Digest, Sha256};

pub const REFERENCE_SHA256: &str = "2c4a2477671847a0344b8cd546a3c719d0cc4d0e4532b396e09b64287167c2f1";

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn docs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs")
}

pub fn heat_template() -> PathBuf {
    fixtures().join("heat1d/heat1d.ct.json")
}

pub fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Runs the command in-process.
pub fn cli(args: &[&str]) -> Output {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("replicator").chain(args.iter().copied());
    let code = replicator_cli::run_with(argv, &mut out, &mut err);
    Output { code, stdout: String::from_utf8(out).unwrap(), stderr: String::from_utf8(err).unwrap() }
}

/// Runs the built binary in `cwd`.
pub fn bin(cwd: &Path, args: &[&str]) -> Output {
    let o = Command::new(env!("CARGO_BIN_EXE_replicator"))
        .args(args)
        .current_dir(cwd)
        .env_remove("REPLICATOR_WORKERS")
        .env_remove("REPLICATOR_WORK_ROOT")
        .env_remove("REPLICATOR_REGISTRY_ROOT")
        .output()
        .unwrap();
    Output {
        code: o.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&o.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&o.stderr).into_owned(),
    }
}

pub fn git(dir: &Path, args: &[&str]) {
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

/// Sorted relative paths, entry type, executable bit and bytes. `.git` is
/// skipped.
pub fn tree_hash(root: &Path) -> String {
    fn walk(dir: &Path, rel: &str, h: &mut Sha256) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap()).collect();
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let name = e.file_name().to_string_lossy().into_owned();
            if name == ".git" {
                continue;
            }
            let path = e.path();
            let rel = format!("{rel}/{name}");
            let meta = std::fs::symlink_metadata(&path).unwrap();
            if meta.file_type().is_symlink() {
                h.update(format!("L {rel} {}\n", std::fs::read_link(&path).unwrap().display()));
            } else if meta.is_dir() {
                h.update(format!("D {rel}\n"));
                walk(&path, &rel, h);
            } else {
                let exec = meta.permissions().mode() & 0o111 != 0;
                let bytes = std::fs::read(&path).unwrap();
                h.update(format!("F {rel} {exec} {}\n", bytes.len()));
                h.update(&bytes);
            }
        }
    }
    let mut h = Sha256::new();
    walk(root, "", &mut h);
    hex::encode(h.finalize())
}

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
    std::fs::create_dir_all(base.join("ws")).unwrap();
    git(&base.join("ws"), &["clone", "-q", up.to_str().unwrap(), name]);
}

/// Three clones under `base/ws`; `solver` carries a tracked edit and an
/// untracked file. Returns the workspace path.
pub fn three_repo_workspace(base: &Path) -> PathBuf {
    module(base, "grid", &[("README", b"grid\n"), ("include/grid.hh", b"#pragma once\n")]);
    module(base, "common", &[("common.cc", b"int common() { return 1; }\n")]);
    module(base, "solver", &[("main.cc", b"int main() { return 0; }\n"), ("params.ini", b"[grid]\ncells = 10\n")]);
    let ws = base.join("ws");
    std::fs::write(ws.join("solver/main.cc"), b"int main() { return 1; }\n").unwrap();
    std::fs::create_dir_all(ws.join("solver/extra")).unwrap();
    std::fs::write(ws.join("solver/extra/notes.txt"), b"untracked\n").unwrap();
    ws
}
