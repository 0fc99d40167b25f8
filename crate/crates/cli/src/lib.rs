//! The `replicator` command.
//!
//! Every subcommand wraps one core or server operation. Exit codes: 0 on
//! success, 1 when the operation reports findings or fails, 2 on usage
//! errors. Diagnostics go to stderr; `--json` switches stdout to JSON.

pub mod bindings;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use replicator_core::backend::{Backend, BackendConfig, Job, JobState, RunnerChoice};
use replicator_core::capture::{
    capture_workspace, emit_container_recipe, emit_install_script, lint_recipe_file, validate_plan, InstallPlan,
};
use replicator_core::crosswalk::{extract, MappingConfig, SourceFormat};
use replicator_core::finding::has_errors;
use replicator_core::registry::{Registry, Resolved};
use replicator_core::substitute::render_computation;
use replicator_core::template::{parse_template, validate_template, ComputationTemplate};
use replicator_core::Finding;
use replicator_server::{AppState, Config};
use serde::Serialize;
use serde_json::json;

#[derive(Debug, Parser)]
#[command(name = "replicator", version, about = "Capture, archive and rerun research software")]
pub struct Cli {
    /// Machine-readable output on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// Job working directories (default from replicator.toml or .replicator/jobs).
    #[arg(long, global = true, value_name = "DIR")]
    pub work_root: Option<PathBuf>,
    /// Dataset registry root.
    #[arg(long, global = true, value_name = "DIR")]
    pub registry: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N", value_parser = clap::value_parser!(u16).range(1..))]
    pub workers: Option<u16>,
    /// Container engine binary, or `none`.
    #[arg(long, global = true, value_name = "BIN")]
    pub engine: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Record the state of every working copy under a directory as an install plan.
    Capture {
        dir: PathBuf,
        /// Module dependency file (`a -> b` lines).
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Write the shell script that rebuilds a captured workspace.
    EmitInstall {
        plan: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Write a container recipe for a captured workspace.
    EmitRecipe {
        plan: PathBuf,
        /// Pinned base image (tag plus digest).
        #[arg(long)]
        base: String,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Check a container recipe for reproducibility problems.
    LintRecipe { file: PathBuf },
    /// Computation template commands.
    #[command(subcommand)]
    Template(TemplateCommand),
    /// Materialize a template: files, command line and environment.
    Render {
        template: PathBuf,
        #[command(flatten)]
        sets: Sets,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run a template locally and wait for it.
    Run {
        template: PathBuf,
        #[command(flatten)]
        sets: Sets,
        #[arg(long, value_enum, default_value_t = Runner::Auto)]
        runner: Runner,
        /// Copy the collected outputs here.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Give up waiting after this many seconds (the job is cancelled).
        #[arg(long, default_value_t = 3600)]
        timeout: u64,
    },
    /// Dataset registry commands.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Extract a metadata block from a CodeMeta, EngMeta or INI document.
    Crosswalk {
        document: PathBuf,
        /// `codemeta`, `engmeta` or a mapping file.
        #[arg(long)]
        map: String,
        /// Source format; guessed from the extension when absent.
        #[arg(long)]
        format: Option<SourceFormat>,
        /// Merge the block into this dataset's draft.
        #[arg(long, value_name = "PID")]
        apply: Option<String>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        bind: Option<std::net::SocketAddr>,
        /// Directory of `*.ct.json` templates to serve.
        #[arg(long)]
        templates: Option<PathBuf>,
        /// Built web app to serve under /app.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
    /// Print the OpenAPI document of the HTTP API.
    Openapi,
}

#[derive(Debug, Subcommand)]
pub enum TemplateCommand {
    /// Parse and check a template.
    Validate { file: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Create a dataset from a manifest and the files next to it.
    Import { manifest: PathBuf },
    List,
    Show {
        pid: String,
        #[arg(long)]
        version: Option<u32>,
    },
    /// Run the publication checklist.
    Review {
        pid: String,
        #[arg(long)]
        version: Option<u32>,
    },
    Publish { pid: String },
    /// Classify on the sustainability ladder.
    Ladder {
        pid: String,
        #[arg(long)]
        version: Option<u32>,
    },
    /// Write a BagIt export.
    Export {
        pid: String,
        dest: PathBuf,
        #[arg(long)]
        version: Option<u32>,
    },
    /// Rerun the dataset's verifications and compare checksums.
    Verify {
        pid: String,
        #[arg(long)]
        version: Option<u32>,
        #[arg(long, default_value_t = 600)]
        timeout: u64,
    },
    /// Resolve a persistent identifier.
    Resolve { pid: String },
}

#[derive(Debug, Args)]
pub struct Sets {
    /// Parameter value, `name=value` or `name.region=body` (repeatable).
    #[arg(long = "set", value_name = "K=V")]
    pub values: Vec<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Runner {
    Auto,
    Process,
    Oci,
}

impl From<Runner> for RunnerChoice {
    fn from(r: Runner) -> Self {
        match r {
            Runner::Auto => RunnerChoice::Auto,
            Runner::Process => RunnerChoice::Process,
            Runner::Oci => RunnerChoice::Oci,
        }
    }
}

/// A failed command: exit status plus the message for stderr.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
    pub findings: Vec<Finding>,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into(), findings: Vec::new() }
    }

    fn error(message: impl std::fmt::Display) -> Self {
        Self { code: 1, message: message.to_string(), findings: Vec::new() }
    }
}

impl<E: std::error::Error> From<E> for Failure {
    fn from(e: E) -> Self {
        Self::error(e)
    }
}

type Outcome = Result<i32, Failure>;

/// Runs the command line `args` (program name first).
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let mut ctx = Ctx { cli: &cli, out };
    match ctx.dispatch() {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            for finding in &f.findings {
                let _ = writeln!(err, "  {finding}");
            }
            f.code
        }
    }
}

struct Ctx<'a> {
    cli: &'a Cli,
    out: &'a mut dyn Write,
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::error(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::error(format!("{}: {e}", path.display())))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn load_template(path: &Path) -> Result<ComputationTemplate, Failure> {
    parse_template(&read_text(path)?).map_err(|e| Failure {
        code: 1,
        message: format!("{}: {e}", path.display()),
        findings: vec![e.to_finding()],
    })
}

fn load_plan(path: &Path) -> Result<InstallPlan, Failure> {
    let text = read_text(path)?;
    let plan: InstallPlan =
        serde_json::from_str(&text).map_err(|e| Failure::error(format!("{}: not an install plan: {e}", path.display())))?;
    let findings = validate_plan(&plan);
    if has_errors(&findings) {
        return Err(Failure { code: 1, message: format!("{}: invalid install plan", path.display()), findings });
    }
    Ok(plan)
}

impl Ctx<'_> {
    fn config(&self) -> Result<Config, Failure> {
        let cwd = std::env::current_dir()?;
        let mut c = Config::discover(&cwd)?;
        if let Some(w) = &self.cli.work_root {
            c.work_root = w.clone();
        }
        if let Some(r) = &self.cli.registry {
            c.registry_root = r.clone();
        }
        if let Some(n) = self.cli.workers {
            c.workers = Some(n.into());
        }
        if let Some(e) = &self.cli.engine {
            c.engine = (!e.is_empty() && e != "none").then(|| e.clone());
        }
        Ok(c)
    }

    fn backend(&self, c: &Config, workers: usize) -> Result<Backend, Failure> {
        let mut bc = BackendConfig::new(&c.work_root);
        bc.workers = workers;
        bc.engine = c.engine.clone();
        Ok(Backend::new(bc)?)
    }

    fn registry(&self) -> Result<Registry, Failure> {
        Ok(Registry::open(self.config()?.registry_root)?)
    }

    fn print(&mut self, text: &str) -> Result<(), Failure> {
        self.out.write_all(text.as_bytes())?;
        Ok(())
    }

    /// Writes `text` to `path`, or stdout when absent.
    fn emit(&mut self, path: Option<&Path>, text: &str) -> Result<(), Failure> {
        match path {
            Some(p) => write_file(p, text),
            None => self.print(text),
        }
    }

    /// Findings as `{"findings": [...]}` or one line each; exit 1 when
    /// `fail` says so.
    fn report(&mut self, findings: &[Finding], fail: bool) -> Outcome {
        if self.cli.json {
            self.print(&to_json(&json!({ "findings": findings })))?;
        } else {
            for f in findings {
                self.print(&format!("{f}\n"))?;
            }
        }
        Ok(i32::from(fail))
    }

    fn dispatch(&mut self) -> Outcome {
        match &self.cli.command {
            Command::Capture { dir, manifest, output } => self.capture(dir, manifest.as_deref(), output.as_deref()),
            Command::EmitInstall { plan, output } => {
                let plan = load_plan(plan)?;
                self.emit(output.as_deref(), &emit_install_script(&plan))?;
                Ok(0)
            }
            Command::EmitRecipe { plan, base, output } => {
                let plan = load_plan(plan)?;
                let recipe = emit_container_recipe(&plan, base)?;
                self.emit(output.as_deref(), &recipe)?;
                Ok(0)
            }
            Command::LintRecipe { file } => {
                let text = read_text(file)?;
                let findings = lint_recipe_file(&file.display().to_string(), &text);
                self.report(&findings, !findings.is_empty())
            }
            Command::Template(TemplateCommand::Validate { file }) => self.validate(file),
            Command::Render { template, sets, output } => {
                let t = load_template(template)?;
                let b = bindings::parse_sets(&t, &sets.values).map_err(Failure::usage)?;
                let m = render_computation(&t, &b)?;
                self.emit(output.as_deref(), &to_json(&m))?;
                Ok(0)
            }
            Command::Run { template, sets, runner, out, timeout } => {
                self.run(template, &sets.values, *runner, out.as_deref(), Duration::from_secs(*timeout))
            }
            Command::Dataset(cmd) => self.dataset(cmd),
            Command::Crosswalk { document, map, format, apply } => self.crosswalk(document, map, *format, apply.as_deref()),
            Command::Serve { bind, templates, static_dir } => self.serve(*bind, templates, static_dir),
            Command::Openapi => {
                self.print(&replicator_server::openapi_document())?;
                Ok(0)
            }
        }
    }

    fn capture(&mut self, dir: &Path, manifest: Option<&Path>, output: Option<&Path>) -> Outcome {
        let manifest = manifest.map(read_text).transpose()?;
        let cap = capture_workspace(dir, manifest.as_deref())?;
        for w in &cap.warnings {
            log::warn!("{w}");
        }
        let findings = validate_plan(&cap.plan);
        let text = if self.cli.json && output.is_none() {
            to_json(&json!({"plan": cap.plan, "warnings": cap.warnings, "findings": findings}))
        } else {
            to_json(&cap.plan)
        };
        self.emit(output, &text)?;
        if has_errors(&findings) {
            return Err(Failure { code: 1, message: "captured plan does not validate".into(), findings });
        }
        Ok(0)
    }

    fn validate(&mut self, file: &Path) -> Outcome {
        let text = read_text(file)?;
        let findings = match parse_template(&text) {
            Ok(t) => validate_template(&t),
            Err(e) => vec![e.to_finding()],
        };
        self.report(&findings, has_errors(&findings))
    }

    fn run(&mut self, template: &Path, sets: &[String], runner: Runner, out: Option<&Path>, timeout: Duration) -> Outcome {
        let t = load_template(template)?;
        let b = bindings::parse_sets(&t, sets).map_err(Failure::usage)?;
        let c = self.config()?;
        let backend = self.backend(&c, c.workers.unwrap_or(1))?;
        let id = backend.submit_with(&t, &b, runner.into())?;
        log::info!("job {id} submitted");
        let mut job = backend.wait(&id, timeout)?;
        if !job.state.is_terminal() {
            backend.cancel(&id)?;
            job = backend.wait(&id, Duration::from_secs(30))?;
        }
        if let Some(dir) = out {
            std::fs::create_dir_all(dir)?;
            for a in &job.outputs {
                let (src, _) = backend.output_path(&id, &a.path)?;
                let dest = dir.join(&a.path);
                if let Some(parent) = dest.parent() {
                    std::fs::create_dir_all(parent)?;
                }
                std::fs::copy(&src, &dest)?;
            }
        }
        if self.cli.json {
            self.print(&to_json(&job))?;
        } else {
            self.print(&job_summary(&job))?;
        }
        Ok(i32::from(job.state != JobState::Succeeded))
    }

    fn dataset(&mut self, cmd: &DatasetCommand) -> Outcome {
        let registry = self.registry()?;
        match cmd {
            DatasetCommand::Import { manifest } => {
                let d = registry.import_manifest(manifest)?;
                if self.cli.json {
                    self.print(&to_json(&d))?;
                } else {
                    self.print(&format!("{} v{} ({} files)\n", d.pid, d.version, d.files.len()))?;
                }
                Ok(0)
            }
            DatasetCommand::List => {
                let all = registry.list();
                if self.cli.json {
                    self.print(&to_json(&all))?;
                } else {
                    for d in all {
                        let state = serde_json::to_value(d.state)?;
                        self.print(&format!("{}\tv{}\t{}\t{}\n", d.pid, d.version, state.as_str().unwrap_or("?"), d.title))?;
                    }
                }
                Ok(0)
            }
            DatasetCommand::Show { pid, version } => {
                self.print(&to_json(&registry.get(pid, *version)?))?;
                Ok(0)
            }
            DatasetCommand::Review { pid, version } => {
                let findings = registry.review(pid, *version)?;
                self.report(&findings, has_errors(&findings))
            }
            DatasetCommand::Publish { pid } => match registry.publish(pid) {
                Ok(d) => {
                    if self.cli.json {
                        self.print(&to_json(&d))?;
                    } else {
                        self.print(&format!("published {} v{}\n", d.pid, d.version))?;
                    }
                    Ok(0)
                }
                Err(replicator_core::registry::RegistryError::ReviewFailed(findings)) => {
                    Err(Failure { code: 1, message: format!("`{pid}` does not pass review"), findings })
                }
                Err(e) => Err(e.into()),
            },
            DatasetCommand::Ladder { pid, version } => {
                let a = registry.ladder(pid, *version)?;
                if self.cli.json {
                    self.print(&to_json(&a))?;
                } else {
                    let rung = a.rung.map_or_else(|| "none".to_owned(), |r| format!("{r:?}"));
                    self.print(&format!("{rung}\n"))?;
                    for p in &a.predicates {
                        let mark = if p.holds { "+" } else { "-" };
                        self.print(&format!("  {mark} {:?}: {}\n", p.rung, p.reason))?;
                    }
                }
                Ok(0)
            }
            DatasetCommand::Export { pid, dest, version } => {
                registry.export(pid, *version, dest)?;
                Ok(0)
            }
            DatasetCommand::Verify { pid, version, timeout } => {
                let c = self.config()?;
                let backend = self.backend(&c, c.workers.unwrap_or(1))?;
                let outcomes = registry.run_verifications(pid, *version, &backend, Duration::from_secs(*timeout))?;
                let passed = !outcomes.is_empty() && outcomes.iter().all(|o| o.passed());
                if self.cli.json {
                    self.print(&to_json(&json!({"passed": passed, "outcomes": outcomes})))?;
                } else {
                    for o in &outcomes {
                        let verdict = if o.passed() { "ok" } else { "FAILED" };
                        self.print(&format!("{}: {verdict}\n", o.template_pid))?;
                        for c in &o.checks {
                            self.print(&format!("  {} expected {} got {}\n", c.path, c.expected, c.actual.as_deref().unwrap_or("nothing")))?;
                        }
                        if let Some(e) = &o.error {
                            self.print(&format!("  {e}\n"))?;
                        }
                    }
                    if outcomes.is_empty() {
                        self.print("no verifications declared\n")?;
                    }
                }
                Ok(i32::from(!passed))
            }
            DatasetCommand::Resolve { pid } => {
                let v = match registry.resolve_pid(pid)? {
                    Resolved::Dataset(d) => json!({"kind": "dataset", "dataset": d}),
                    Resolved::File { dataset, version, file, .. } => {
                        json!({"kind": "file", "dataset_pid": dataset, "version": version, "file": file})
                    }
                    Resolved::External { url } => json!({"kind": "external", "url": url}),
                };
                self.print(&to_json(&v))?;
                Ok(0)
            }
        }
    }

    fn crosswalk(&mut self, document: &Path, map: &str, format: Option<SourceFormat>, apply: Option<&str>) -> Outcome {
        let mapping = match map {
            "codemeta" => MappingConfig::codemeta(),
            "engmeta" => MappingConfig::engmeta(),
            file => {
                let m = MappingConfig::from_json(&read_text(Path::new(file))?)?;
                m.validate()?;
                m
            }
        };
        let format = match format.or_else(|| SourceFormat::from_path(document)) {
            Some(f) => f,
            None => return Err(Failure::usage(format!("cannot tell the format of {}; pass --format", document.display()))),
        };
        let bytes = std::fs::read(document).map_err(|e| Failure::error(format!("{}: {e}", document.display())))?;
        let block = extract(&bytes, format, &mapping)?;
        match apply {
            Some(pid) => {
                let d = self.registry()?.apply_block(pid, &block)?;
                self.print(&to_json(&json!({"block": block, "dataset": d})))?;
            }
            None => self.print(&to_json(&block))?,
        }
        Ok(0)
    }

    fn serve(&mut self, bind: Option<std::net::SocketAddr>, templates: &Option<PathBuf>, static_dir: &Option<PathBuf>) -> Outcome {
        let mut c = self.config()?;
        if let Some(b) = bind {
            c.bind = b;
        }
        if templates.is_some() {
            c.templates_dir = templates.clone();
        }
        if static_dir.is_some() {
            c.static_dir = static_dir.clone();
        }
        let state = AppState::from_config(&c)?;
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
        rt.block_on(replicator_server::serve(state, c.bind))?;
        Ok(0)
    }
}

fn job_summary(job: &Job) -> String {
    let state = match &job.state {
        JobState::Failed { exit_code } => format!("failed (exit {exit_code})"),
        JobState::Killed { reason } => format!("killed ({})", serde_json::to_value(reason).expect("serializable").as_str().unwrap_or("?")),
        other => serde_json::to_value(other).expect("serializable")["state"].as_str().unwrap_or("?").to_owned(),
    };
    let mut s = format!("job {} {state} on {}\n", job.id, job.runner);
    for a in &job.outputs {
        s.push_str(&format!("{}  {}\n", a.checksum, a.path));
    }
    if let Some(e) = &job.error {
        s.push_str(&format!("error: {e}\n"));
    }
    for w in &job.warnings {
        s.push_str(&format!("warning: {w}\n"));
    }
    s
}
