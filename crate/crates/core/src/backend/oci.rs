//! Container runner driving a docker/podman-compatible engine CLI.

use std::ffi::OsString;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use super::{KillReason, LogFiles, RunControl, Runner, RunnerError, RunnerReport};
use crate::substitute::MaterializedComputation;

/// Mount point of the job workdir inside the container.
pub const CONTAINER_WORKDIR: &str = "/work";

#[derive(Debug, Clone)]
pub struct OciRunner {
    engine: String,
}

impl OciRunner {
    pub fn new(engine: impl Into<String>) -> Self {
        Self { engine: engine.into() }
    }

    pub fn engine(&self) -> &str {
        &self.engine
    }

    /// Full path of the engine binary, if it can be found.
    pub fn locate(&self) -> Option<PathBuf> {
        let candidate = Path::new(&self.engine);
        if candidate.components().count() > 1 {
            return candidate.is_file().then(|| candidate.to_path_buf());
        }
        let path = std::env::var_os("PATH")?;
        std::env::split_paths(&path).map(|d| d.join(&self.engine)).find(|p| p.is_file())
    }

    fn engine_cmd(&self) -> Command {
        let mut c = Command::new(&self.engine);
        c.env("LC_ALL", "C").stdin(Stdio::null());
        c
    }
}

/// Arguments after the engine name for `run`.
pub fn run_args(m: &MaterializedComputation, workdir: &Path, name: &str) -> Vec<OsString> {
    let mut a: Vec<OsString> = vec!["run".into(), "--name".into(), name.into()];
    if !m.limits.network_enabled {
        a.extend(["--network".into(), "none".into()]);
    }
    let mem = format!("{}b", m.limits.memory_bytes);
    a.extend(["--memory".into(), mem.clone().into(), "--memory-swap".into(), mem.into()]);
    let cpu = m.limits.cpu_seconds;
    a.extend(["--ulimit".into(), format!("cpu={cpu}:{}", cpu + 1).into()]);
    // SAFETY: getuid/getgid cannot fail.
    let (uid, gid) = unsafe { (libc::getuid(), libc::getgid()) };
    a.extend(["--user".into(), format!("{uid}:{gid}").into()]);
    let mut volume = OsString::from(workdir.as_os_str());
    volume.push(format!(":{CONTAINER_WORKDIR}"));
    a.extend(["--volume".into(), volume, "--workdir".into(), CONTAINER_WORKDIR.into()]);
    a.extend(["--env".into(), format!("HOME={CONTAINER_WORKDIR}").into()]);
    for (k, v) in &m.env {
        a.extend(["--env".into(), format!("{k}={v}").into()]);
    }
    a.push(m.image_ref.clone().into());
    a.extend(m.argv.iter().map(OsString::from));
    a
}

impl Runner for OciRunner {
    fn name(&self) -> &'static str {
        "oci"
    }

    fn check_available(&self, image_ref: &str) -> Result<(), RunnerError> {
        match self.locate() {
            Some(_) => Ok(()),
            None => Err(RunnerError::Unavailable(image_ref.to_owned())),
        }
    }

    fn run(
        &self,
        m: &MaterializedComputation,
        workdir: &Path,
        logs: &LogFiles,
        ctl: &RunControl<'_>,
    ) -> Result<RunnerReport, RunnerError> {
        let spawn_err = |e: std::io::Error| RunnerError::SpawnFailure(format!("{}: {e}", self.engine));
        let name = format!("replicator-{}", uuid::Uuid::new_v4().simple());
        let stdout = File::create(&logs.stdout).map_err(spawn_err)?;
        let stderr = File::create(&logs.stderr).map_err(spawn_err)?;
        let started = Instant::now();
        let mut child = self
            .engine_cmd()
            .args(run_args(m, workdir, &name))
            .stdout(stdout)
            .stderr(stderr)
            .spawn()
            .map_err(spawn_err)?;

        let deadline = started + Duration::from_secs(m.limits.wall_seconds);
        let mut reason = None;
        let mut last_tick = started;
        let status = loop {
            if let Some(status) = child.try_wait().map_err(|e| RunnerError::Monitor(e.to_string()))? {
                break status;
            }
            let now = Instant::now();
            if reason.is_none() {
                let stop = if ctl.is_cancelled() {
                    Some((KillReason::Cancelled, "--time=5"))
                } else if now >= deadline {
                    Some((KillReason::WallTimeout, "--time=0"))
                } else {
                    None
                };
                if let Some((why, grace)) = stop {
                    reason = Some(why);
                    let _ = self.engine_cmd().args(["stop", grace, &name]).output();
                }
            }
            if now.duration_since(last_tick) >= ctl.tick_interval {
                last_tick = now;
                ctl.tick();
            }
            std::thread::sleep(Duration::from_millis(50));
        };

        let inspect = self
            .engine_cmd()
            .args(["inspect", "--format", "{{.State.OOMKilled}}", &name])
            .output()
            .ok()
            .map(|o| String::from_utf8_lossy(&o.stdout).trim() == "true");
        let _ = self.engine_cmd().args(["rm", "--force", &name]).output();
        if reason.is_none() && inspect == Some(true) {
            reason = Some(KillReason::Memory);
        }
        let code = status.code().unwrap_or(128 + 9);
        // 125 is the engine's own failure (bad image, bad flags).
        if reason.is_none() && code == 125 {
            return Err(RunnerError::SpawnFailure(super::outputs::read_tail(&logs.stderr, 4096)));
        }
        if reason.is_none() && code == 128 + libc::SIGXCPU {
            reason = Some(KillReason::CpuTimeout);
        }
        Ok(RunnerReport {
            exit_code: reason.is_none().then_some(code),
            kill_reason: reason,
            wall_time_ms: started.elapsed().as_millis() as u64,
            cpu_time_ms: None,
            peak_memory_bytes: None,
            network_isolated: Some(!m.limits.network_enabled),
        })
    }
}
