//! Rerunning a dataset's verification declarations.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ArtifactKind, Registry, RegistryError};
use crate::backend::{Backend, JobState};
use crate::substitute::BindingSet;
use crate::template::parse_template;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputCheck {
    pub path: String,
    pub expected: String,
    /// `None` when the run produced no such output.
    pub actual: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationOutcome {
    pub template_pid: String,
    pub job_id: Option<String>,
    pub state: Option<JobState>,
    pub checks: Vec<OutputCheck>,
    /// Why the template could not be run, if it could not.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl VerificationOutcome {
    pub fn passed(&self) -> bool {
        self.error.is_none()
            && self.state == Some(JobState::Succeeded)
            && !self.checks.is_empty()
            && self.checks.iter().all(|c| c.actual.as_deref() == Some(c.expected.as_str()))
    }
}

impl Registry {
    /// Runs each verification's template with default bindings and compares
    /// output checksums. Each run gets at most `timeout`.
    pub fn run_verifications(
        &self,
        pid: &str,
        version: Option<u32>,
        backend: &Backend,
        timeout: Duration,
    ) -> Result<Vec<VerificationOutcome>, RegistryError> {
        let d = self.get(pid, version)?;
        let mut out = Vec::new();
        for v in &d.verifications {
            let mut outcome = VerificationOutcome {
                template_pid: v.template_pid.clone(),
                job_id: None,
                state: None,
                checks: v
                    .expected
                    .iter()
                    .map(|(path, sum)| OutputCheck { path: path.clone(), expected: sum.clone(), actual: None })
                    .collect(),
                error: None,
            };
            let template = d
                .find_file(&v.template_pid)
                .filter(|f| f.kind == ArtifactKind::WebappTemplate)
                .and_then(|f| f.checksum.as_deref())
                .and_then(|c| self.blob(c))
                .ok_or_else(|| format!("template `{}` is not stored in this dataset", v.template_pid))
                .and_then(|bytes| {
                    parse_template(&String::from_utf8_lossy(&bytes)).map_err(|e| format!("template does not parse: {e}"))
                });
            let template = match template {
                Ok(t) => t,
                Err(e) => {
                    outcome.error = Some(e);
                    out.push(outcome);
                    continue;
                }
            };
            let job = backend
                .submit(&template, &BindingSet::new())
                .and_then(|id| backend.wait(&id, timeout));
            match job {
                Ok(job) => {
                    if !job.state.is_terminal() {
                        let _ = backend.cancel(&job.id);
                        outcome.error = Some(format!("run did not finish within {} s", timeout.as_secs()));
                    }
                    for c in &mut outcome.checks {
                        c.actual = job.outputs.iter().find(|o| o.path == c.path).map(|o| o.checksum.clone());
                    }
                    outcome.job_id = Some(job.id);
                    outcome.state = Some(job.state);
                }
                Err(e) => outcome.error = Some(e.to_string()),
            }
            out.push(outcome);
        }
        Ok(out)
    }
}
