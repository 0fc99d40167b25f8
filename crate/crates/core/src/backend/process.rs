//! Local process sandbox: a process group in the job workdir with kernel
//! resource limits.
//!
//! Enforcement:
//! * wall time: the monitor kills the process group at the deadline;
//! * CPU time: `RLIMIT_CPU` (soft limit sends `SIGXCPU`, hard limit one
//!   second later `SIGKILL`), inherited by every process of the job;
//! * memory: the resident size of the group is sampled and the group killed
//!   above the limit; `RLIMIT_AS` at four times the limit stops runaway
//!   allocation between samples;
//! * network: a fresh network namespace when the kernel allows it. Without
//!   privileges for that, or off Linux, the job keeps host networking and
//!   the report says so (`network_isolated`).
//!
//! Memory sampling reads `/proc`; elsewhere only `RLIMIT_AS` and the peak
//! reported at exit remain.

use std::fs::File;
use std::os::unix::process::CommandExt;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use super::{KillReason, LogFiles, RunControl, Runner, RunnerError, RunnerReport};
use crate::substitute::MaterializedComputation;

const DEFAULT_PATH: &str = "/usr/local/bin:/usr/bin:/bin";
const POLL: Duration = Duration::from_millis(10);
const MEMORY_SAMPLE: Duration = Duration::from_millis(50);

/// Grace period between `SIGTERM` and `SIGKILL` on cancellation.
pub const CANCEL_GRACE: Duration = Duration::from_secs(5);

#[derive(Debug, Clone)]
pub struct ProcessRunner {
    search_path: String,
}

impl Default for ProcessRunner {
    fn default() -> Self {
        Self { search_path: std::env::var("PATH").unwrap_or_else(|_| DEFAULT_PATH.to_owned()) }
    }
}

impl ProcessRunner {
    /// Uses `search_path` as the job's `PATH`.
    pub fn with_path(search_path: impl Into<String>) -> Self {
        Self { search_path: search_path.into() }
    }
}

fn signal_group(pgid: i32, signal: i32) {
    // SAFETY: plain syscall; ESRCH for an already empty group is fine.
    unsafe {
        libc::killpg(pgid, signal);
    }
}

/// Sum of resident set sizes of all live processes in `pgid`.
fn group_rss(pgid: i32) -> u64 {
    let Ok(dir) = std::fs::read_dir("/proc") else { return 0 };
    let page = page_size();
    let mut total = 0;
    for entry in dir.flatten() {
        let name = entry.file_name();
        let Some(pid) = name.to_str().filter(|s| s.bytes().all(|b| b.is_ascii_digit())) else { continue };
        let Ok(stat) = std::fs::read_to_string(format!("/proc/{pid}/stat")) else { continue };
        // Fields after the parenthesised command name: state ppid pgrp ... rss is field 24.
        let Some(rest) = stat.rsplit_once(')').map(|(_, r)| r) else { continue };
        let fields: Vec<&str> = rest.split_whitespace().collect();
        if fields.get(2).and_then(|g| g.parse::<i32>().ok()) != Some(pgid) {
            continue;
        }
        if let Some(rss) = fields.get(21).and_then(|r| r.parse::<u64>().ok()) {
            total += rss * page;
        }
    }
    total
}

fn page_size() -> u64 {
    // SAFETY: sysconf has no preconditions.
    let n = unsafe { libc::sysconf(libc::_SC_PAGESIZE) };
    if n > 0 {
        n as u64
    } else {
        4096
    }
}

fn same_netns(pid: i32) -> Option<bool> {
    let theirs = std::fs::read_link(format!("/proc/{pid}/ns/net")).ok()?;
    let ours = std::fs::read_link("/proc/self/ns/net").ok()?;
    Some(theirs == ours)
}

impl Runner for ProcessRunner {
    fn name(&self) -> &'static str {
        "process"
    }

    fn check_available(&self, _image_ref: &str) -> Result<(), RunnerError> {
        Ok(())
    }

    fn run(
        &self,
        m: &MaterializedComputation,
        workdir: &Path,
        logs: &LogFiles,
        ctl: &RunControl<'_>,
    ) -> Result<RunnerReport, RunnerError> {
        let Some((program, args)) = m.argv.split_first() else {
            return Err(RunnerError::SpawnFailure("empty command".into()));
        };
        let open = |p: &Path| {
            File::create(p).map_err(|e| RunnerError::SpawnFailure(format!("{}: {e}", p.display())))
        };
        let (stdout, stderr) = (open(&logs.stdout)?, open(&logs.stderr)?);

        let limits = m.limits.clone();
        let cpu = limits.cpu_seconds as libc::rlim_t;
        let address_space = limits.memory_bytes.saturating_mul(4) as libc::rlim_t;
        let isolate = !limits.network_enabled;

        let mut cmd = Command::new(program);
        cmd.args(args)
            .current_dir(workdir)
            .env_clear()
            .env("PATH", &self.search_path)
            .env("HOME", workdir)
            .env("LC_ALL", "C")
            .env("TZ", "UTC")
            .envs(&m.env)
            .stdin(Stdio::null())
            .stdout(stdout)
            .stderr(stderr)
            .process_group(0);
        // SAFETY: the hook only issues async-signal-safe syscalls on values
        // captured by copy.
        unsafe {
            cmd.pre_exec(move || {
                // Never ask for more than the current hard limit, which an
                // unprivileged process cannot raise.
                let set = |resource, soft: libc::rlim_t, hard: libc::rlim_t| {
                    let mut cur = libc::rlimit { rlim_cur: 0, rlim_max: 0 };
                    if libc::getrlimit(resource, &mut cur) != 0 {
                        return Err(std::io::Error::last_os_error());
                    }
                    let hard = hard.min(cur.rlim_max);
                    let lim = libc::rlimit { rlim_cur: soft.min(hard), rlim_max: hard };
                    if libc::setrlimit(resource, &lim) != 0 {
                        return Err(std::io::Error::last_os_error());
                    }
                    Ok(())
                };
                set(libc::RLIMIT_CPU, cpu, cpu + 1)?;
                set(libc::RLIMIT_AS, address_space, address_space)?;
                set(libc::RLIMIT_CORE, 0, 0)?;
                #[cfg(target_os = "linux")]
                if isolate && libc::unshare(libc::CLONE_NEWNET) != 0 {
                    // Unprivileged: a user namespace grants the right to
                    // create the network namespace.
                    let _ = libc::unshare(libc::CLONE_NEWUSER | libc::CLONE_NEWNET);
                }
                #[cfg(not(target_os = "linux"))]
                let _ = isolate;
                Ok(())
            });
        }

        let started = Instant::now();
        let child = cmd
            .spawn()
            .map_err(|e| RunnerError::SpawnFailure(format!("cannot start `{program}`: {e}")))?;
        let pid = child.id() as i32;
        let network_isolated = if limits.network_enabled { None } else { same_netns(pid).map(|same| !same) };

        let deadline = started + Duration::from_secs(limits.wall_seconds);
        let mut reason: Option<KillReason> = None;
        let mut term_sent: Option<Instant> = None;
        let mut killed = false;
        let mut peak_rss = 0u64;
        let mut last_sample = started;
        let mut last_tick = started;

        let (status, usage) = loop {
            let mut status = 0;
            // SAFETY: rusage is plain data; zeroed is a valid value.
            let mut usage: libc::rusage = unsafe { std::mem::zeroed() };
            // SAFETY: pid is our direct child; pointers are valid.
            let r = unsafe { libc::wait4(pid, &mut status, libc::WNOHANG, &mut usage) };
            if r == pid {
                break (status, usage);
            }
            if r < 0 {
                let err = std::io::Error::last_os_error();
                if err.kind() == std::io::ErrorKind::Interrupted {
                    continue;
                }
                signal_group(pid, libc::SIGKILL);
                return Err(RunnerError::Monitor(err.to_string()));
            }

            let now = Instant::now();
            if reason.is_none() {
                if ctl.is_cancelled() {
                    reason = Some(KillReason::Cancelled);
                    signal_group(pid, libc::SIGTERM);
                    term_sent = Some(now);
                } else if now >= deadline {
                    reason = Some(KillReason::WallTimeout);
                    signal_group(pid, libc::SIGKILL);
                    killed = true;
                } else if now.duration_since(last_sample) >= MEMORY_SAMPLE {
                    last_sample = now;
                    let rss = group_rss(pid);
                    peak_rss = peak_rss.max(rss);
                    if rss > limits.memory_bytes {
                        reason = Some(KillReason::Memory);
                        signal_group(pid, libc::SIGKILL);
                        killed = true;
                    }
                }
            } else if !killed && term_sent.is_some_and(|t| now.duration_since(t) >= CANCEL_GRACE) {
                signal_group(pid, libc::SIGKILL);
                killed = true;
            }
            if now.duration_since(last_tick) >= ctl.tick_interval {
                last_tick = now;
                ctl.tick();
            }
            std::thread::sleep(POLL);
        };
        // Leftover members of the group do not outlive the job.
        signal_group(pid, libc::SIGKILL);
        drop(child);

        let wall_time_ms = started.elapsed().as_millis() as u64;
        let cpu_ms = |tv: libc::timeval| tv.tv_sec as u64 * 1000 + tv.tv_usec as u64 / 1000;
        let cpu_time_ms = cpu_ms(usage.ru_utime) + cpu_ms(usage.ru_stime);
        // Kilobytes on Linux, bytes on macOS.
        let rss_unit = if cfg!(target_os = "macos") { 1 } else { 1024 };
        let max_rss = (usage.ru_maxrss.max(0) as u64) * rss_unit;
        let peak_memory_bytes = Some(peak_rss.max(max_rss));

        if reason.is_none() {
            let signal = libc::WIFSIGNALED(status).then(|| libc::WTERMSIG(status));
            let failed = signal.is_some() || libc::WEXITSTATUS(status) != 0;
            if signal == Some(libc::SIGXCPU)
                || (signal == Some(libc::SIGKILL) && cpu_time_ms >= limits.cpu_seconds * 1000)
            {
                reason = Some(KillReason::CpuTimeout);
            } else if failed && max_rss >= limits.memory_bytes {
                reason = Some(KillReason::Memory);
            }
        }

        let exit_code = match reason {
            Some(_) => None,
            None if libc::WIFSIGNALED(status) => Some(128 + libc::WTERMSIG(status)),
            None => Some(libc::WEXITSTATUS(status)),
        };
        Ok(RunnerReport {
            exit_code,
            kill_reason: reason,
            wall_time_ms,
            cpu_time_ms: Some(cpu_time_ms),
            peak_memory_bytes,
            network_isolated,
        })
    }
}
