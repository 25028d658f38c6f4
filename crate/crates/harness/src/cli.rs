//! The `repoport` command line: translate, evaluate, score, cluster, report.
//!
//! Exit codes: 0 success, 1 usage, 2 runtime failure, 3 nothing to do.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use repoport_core::atlas::Facet;
use repoport_core::markers::Strictness;
use repoport_core::tokens::Budget;
use repoport_core::{EvalMode, Technique, TranslationTask};

use crate::atlas_io::{build_atlas, categorize, collect_inputs, load_label_map, write_atlas, write_categories, ClusterConfig};
use crate::config::{validate, RunConfig};
use crate::eval::{evaluate_run, EvalJob, Probes, SandboxPolicy};
use crate::gateway::{BackendConfig, API_KEY_ENV};
use crate::manifest::{load_task, LoadedTask};
use crate::pipeline::PipelineConfig;
use crate::report::{consolidate, score_with, write_consolidated, write_score, KappaScope, ScoreReport};
use crate::runs::{translate, RunDir, TranslateJob};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_NOTHING: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{0}")]
    NothingToDo(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
            CliError::NothingToDo(_) => EXIT_NOTHING,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn parse_technique(s: &str) -> Result<Technique, String> {
    Technique::from_slug(s).ok_or_else(|| format!("unknown technique `{s}` (expected non-agentic or top-down)"))
}

fn parse_mode(s: &str) -> Result<EvalMode, String> {
    EvalMode::from_slug(s).ok_or_else(|| format!("unknown mode `{s}` (expected overall or code-only)"))
}

fn parse_kappa_scope(s: &str) -> Result<KappaScope, String> {
    KappaScope::from_slug(s).ok_or_else(|| format!("unknown kappa scope `{s}` (expected countable or all)"))
}

fn parse_facet(s: &str) -> Result<Facet, String> {
    Facet::parse(s).ok_or_else(|| format!("unknown facet `{s}` (expected llm, application or technique)"))
}

#[derive(Debug, Parser)]
#[command(name = "repoport", version, about = "Translate repositories between parallel programming models with an LLM and score the results")]
pub struct Cli {
    /// JSON run configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate translation samples into a run directory.
    Translate(TranslateArgs),
    /// Build and test every sample of a run.
    Evaluate(EvaluateArgs),
    /// Compute pass@k, build@k and token costs.
    Score(ScoreArgs),
    /// Embed and cluster build/run logs for the manual labelling pass.
    Cluster(ClusterArgs),
    /// Join metrics and error categories into one table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    /// Task manifest (repeatable).
    #[arg(long = "task")]
    pub tasks: Vec<PathBuf>,
    /// non-agentic or top-down (repeatable).
    #[arg(long = "technique", value_parser = parse_technique)]
    pub techniques: Vec<Technique>,
    /// mock:<script.json>, openai:<model>@<base-url>, or a backend JSON file.
    /// The API key is read from REPOPORT_API_KEY.
    #[arg(long)]
    pub backend: Option<String>,
    /// Samples per task and technique.
    #[arg(short = 'n', long = "samples")]
    pub n_samples: Option<usize>,
    /// Defaults to runs/<llm>.
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    /// Defaults to the run directory's name.
    #[arg(long)]
    pub run_id: Option<String>,
    #[arg(long)]
    pub context_window: Option<u64>,
    #[arg(long)]
    pub max_output_tokens: Option<u64>,
    /// Stop dispatching once this many tokens are spent.
    #[arg(long)]
    pub max_tokens: Option<u64>,
    /// Stop dispatching after this many seconds.
    #[arg(long)]
    pub max_seconds: Option<u64>,
    #[arg(short = 'j', long)]
    pub parallelism: Option<usize>,
    /// Dependency tool run per source file, e.g. "g++ -MM".
    #[arg(long)]
    pub dep_tool: Option<String>,
    /// Directory of prompt template overrides (system.txt, file_prompt.txt, ...).
    #[arg(long)]
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    /// overall or code-only (repeatable; default both).
    #[arg(long = "mode", value_parser = parse_mode)]
    pub modes: Vec<EvalMode>,
    /// Manifests to use instead of those recorded in run.json.
    #[arg(long = "task")]
    pub tasks: Vec<PathBuf>,
    #[arg(short = 'j', long)]
    pub parallelism: Option<usize>,
    #[arg(long)]
    pub build_timeout: Option<u64>,
    #[arg(long)]
    pub run_timeout: Option<u64>,
    /// Re-evaluate samples that already have an outcome.
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub keep_sandboxes: bool,
    /// Ignore leftover source-model markers.
    #[arg(long)]
    pub lenient_markers: bool,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    /// k for pass@k and build@k (repeatable; default 1).
    #[arg(short = 'k', long = "k")]
    pub ks: Vec<u64>,
    #[arg(long = "mode", value_parser = parse_mode)]
    pub modes: Vec<EvalMode>,
    /// Defaults to <run-dir>/metrics.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Samples averaged into kappa: `countable` (default) or `all`, which
    /// adds samples excluded from metrics.
    #[arg(long = "kappa-over", value_parser = parse_kappa_scope)]
    pub kappa_scope: Option<KappaScope>,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    /// Run directory (repeatable, one per LLM).
    #[arg(long = "run-dir")]
    pub run_dirs: Vec<PathBuf>,
    /// Defaults to <first run-dir>/atlas.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub min_pts: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Cluster only non-pass outcomes.
    #[arg(long)]
    pub failures_only: bool,
    /// Apply a label map and write category tables.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Facet to group category counts by (repeatable).
    #[arg(long = "group-by", value_parser = parse_facet)]
    pub group_by: Vec<Facet>,
    /// Label to drop from category tables (repeatable).
    #[arg(long = "filter")]
    pub filters: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long = "run-dir")]
    pub run_dirs: Vec<PathBuf>,
    #[arg(short = 'k', long = "k")]
    pub ks: Vec<u64>,
    /// Defaults to <first run-dir>/atlas.
    #[arg(long)]
    pub atlas: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Defaults to the first run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long = "kappa-over", value_parser = parse_kappa_scope)]
    pub kappa_scope: Option<KappaScope>,
}

/// Parses arguments and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("repoport: {e}");
            e.code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| CliError::Usage(e.to_string()))?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Translate(a) => cmd_translate(a, &cfg),
        Command::Evaluate(a) => cmd_evaluate(a, &cfg),
        Command::Score(a) => cmd_score(a, &cfg),
        Command::Cluster(a) => cmd_cluster(a, &cfg),
        Command::Report(a) => cmd_report(a, &cfg),
    }
}

fn or_cfg<T: Clone>(flag: Vec<T>, cfg: &[T]) -> Vec<T> {
    if flag.is_empty() {
        cfg.to_vec()
    } else {
        flag
    }
}

fn run_dir(flag: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf, CliError> {
    flag.or_else(|| cfg.run_dir.clone()).ok_or_else(|| CliError::Usage("--run-dir is required".into()))
}

fn run_dirs(flag: Vec<PathBuf>, cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let dirs = if flag.is_empty() { cfg.run_dir.clone().into_iter().collect() } else { flag };
    if dirs.is_empty() {
        return Err(CliError::Usage("--run-dir is required".into()));
    }
    Ok(dirs)
}

fn open_run(dir: &Path) -> Result<RunDir, CliError> {
    RunDir::open(dir).map_err(|e| CliError::NothingToDo(e.to_string()))
}

fn modes(flag: Vec<EvalMode>, cfg: &RunConfig) -> Vec<EvalMode> {
    let mut m = or_cfg(flag, &cfg.modes);
    if m.is_empty() {
        m = vec![EvalMode::Overall, EvalMode::CodeOnly];
    }
    m.sort();
    m.dedup();
    m
}

fn load_templates(dir: &Path, cfg: &mut PipelineConfig) -> Result<(), CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))?;
    for entry in entries.filter_map(Result::ok) {
        let name = entry.file_name().to_string_lossy().into_owned();
        let text = fs::read_to_string(entry.path()).map_err(|e| CliError::Usage(format!("{}: {e}", entry.path().display())))?;
        if !cfg.templates.with_override(&name, &text) {
            return Err(CliError::Usage(format!("{}: unknown template `{name}`", dir.display())));
        }
    }
    Ok(())
}

fn cmd_translate(a: TranslateArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let manifests = or_cfg(a.tasks, &cfg.tasks);
    if manifests.is_empty() {
        return Err(CliError::Usage("at least one --task is required".into()));
    }
    let techniques = or_cfg(a.techniques, &cfg.techniques);
    if techniques.is_empty() {
        return Err(CliError::Usage("at least one --technique is required".into()));
    }
    let n_samples = a.n_samples.or(cfg.n_samples).unwrap_or(1);
    if n_samples == 0 {
        return Err(CliError::Usage("-n must be at least 1".into()));
    }
    validate(&manifests, &cfg.ks, n_samples).map_err(CliError::Usage)?;
    let mut backend: BackendConfig = match a.backend {
        Some(spec) => BackendConfig::parse_spec(&spec),
        None => cfg.backend_config().ok_or_else(|| CliError::Usage("--backend is required".into()))?,
    }
    .map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(w) = a.context_window.or(cfg.context_window) {
        backend.context_window = w;
    }
    if let Some(m) = a.max_output_tokens {
        backend.max_output_tokens = m;
    }
    if matches!(backend.kind, crate::gateway::BackendKind::Openai { .. }) && std::env::var(API_KEY_ENV).is_err() {
        log::warn!("{API_KEY_ENV} is not set; requests go out without credentials");
    }
    let tasks: Vec<LoadedTask> = manifests.iter().map(|m| load_task(m).map_err(|e| CliError::Usage(e.to_string()))).collect::<Result<_, _>>()?;
    let mut pipeline = PipelineConfig {
        context_window: backend.context_window,
        dep_tool: a.dep_tool.map(|s| s.split_whitespace().map(String::from).collect()).or_else(|| cfg.dep_tool.clone()),
        ..PipelineConfig::default()
    };
    if let Some(dir) = a.templates.or_else(|| cfg.templates_dir.clone()) {
        load_templates(&dir, &mut pipeline)?;
    }
    let dir = a.run_dir.or_else(|| cfg.run_dir.clone()).unwrap_or_else(|| PathBuf::from("runs").join(backend.label()));
    let run_id = a.run_id.unwrap_or_else(|| dir.file_name().map_or("run".into(), |n| n.to_string_lossy().into_owned()));
    let job = TranslateJob {
        run: RunDir::new(&dir),
        run_id,
        tasks,
        techniques,
        backend,
        n_samples,
        parallelism: a.parallelism.or(cfg.parallelism).unwrap_or(1),
        pipeline,
        budget: Budget::new(
            a.max_tokens.or(cfg.max_total_tokens),
            a.max_seconds.or(cfg.max_wall_clock_seconds).map(Duration::from_secs),
        ),
    };
    let summary = translate(&job).map_err(runtime)?;
    let statuses: Vec<String> = summary.by_status.iter().map(|(k, v)| format!("{k}={v}")).collect();
    println!(
        "{}: {} generated, {} reused, {} request(s) sent [{}]",
        dir.display(),
        summary.generated,
        summary.reused,
        summary.dispatched,
        statuses.join(" ")
    );
    if summary.completed() == 0 {
        return Err(CliError::Runtime("no sample completed".into()));
    }
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let dir = run_dir(a.run_dir, cfg)?;
    let run = open_run(&dir)?;
    let info = run.info().map_err(runtime)?;
    let manifests: Vec<PathBuf> =
        if a.tasks.is_empty() { info.tasks.iter().map(|t| t.manifest.clone()).collect() } else { a.tasks };
    let mut tasks: BTreeMap<String, TranslationTask> = BTreeMap::new();
    for m in &manifests {
        let t = load_task(m).map_err(runtime)?;
        tasks.insert(t.task.task_id.clone(), t.task);
    }
    if run.samples().map_err(runtime)?.is_empty() {
        return Err(CliError::NothingToDo(format!("{}: no samples to evaluate", dir.display())));
    }
    let defaults = SandboxPolicy::default();
    let policy = SandboxPolicy {
        build_timeout: a.build_timeout.or(cfg.build_timeout_seconds).map_or(defaults.build_timeout, Duration::from_secs),
        run_timeout: a.run_timeout.or(cfg.run_timeout_seconds).map_or(defaults.run_timeout, Duration::from_secs),
        keep_sandboxes: a.keep_sandboxes,
        strictness: if a.lenient_markers { Strictness::Lenient } else { cfg.marker_strictness.unwrap_or_default() },
        ..defaults
    };
    let probes = Probes::new(cfg.build_profiles.clone());
    let job = EvalJob {
        run: &run,
        tasks: &tasks,
        modes: modes(a.modes, cfg),
        policy,
        probes: &probes,
        parallelism: a.parallelism.or(cfg.parallelism).unwrap_or(1),
        force: a.force,
    };
    let s = evaluate_run(&job).map_err(runtime)?;
    let verdicts: Vec<String> = s.by_verdict.iter().map(|(k, v)| format!("{k}={v}")).collect();
    println!(
        "{}: {} evaluated, {} reused, {} excluded, {} untestable [{}]",
        dir.display(),
        s.evaluated,
        s.reused,
        s.excluded,
        s.untestable,
        verdicts.join(" ")
    );
    if s.untestable > 0 {
        eprintln!("repoport: {} evaluation(s) untestable: toolchain probe failed (see untestable.json)", s.untestable);
    }
    if s.evaluated + s.reused + s.untestable == 0 {
        return Err(CliError::NothingToDo("nothing was evaluated".into()));
    }
    Ok(())
}

fn ks(flag: Vec<u64>, cfg: &RunConfig) -> Vec<u64> {
    let k = or_cfg(flag, &cfg.ks);
    if k.is_empty() {
        vec![1]
    } else {
        k
    }
}

fn cmd_score(a: ScoreArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let dir = run_dir(a.run_dir, cfg)?;
    let run = open_run(&dir)?;
    let scope = a.kappa_scope.or(cfg.kappa_over).unwrap_or_default();
    let report = score_with(&run, &ks(a.ks, cfg), &modes(a.modes, cfg), scope).map_err(runtime)?;
    let out = a.out.unwrap_or_else(|| dir.join("metrics"));
    write_score(&out, &report).map_err(runtime)?;
    print!("{}", crate::report::score_text(&report));
    if report.is_empty() {
        eprintln!("repoport: no outcomes to score; wrote an empty report");
    }
    Ok(())
}

fn cmd_cluster(a: ClusterArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let dirs = run_dirs(a.run_dirs, cfg)?;
    let defaults = ClusterConfig::default();
    let cc = ClusterConfig {
        eps: a.eps.unwrap_or(defaults.eps),
        min_pts: a.min_pts.unwrap_or(defaults.min_pts),
        dim: a.dim.unwrap_or(defaults.dim),
        failures_only: a.failures_only,
    };
    if cc.eps.is_nan() || cc.eps <= 0.0 || cc.min_pts == 0 || cc.dim == 0 {
        return Err(CliError::Usage("--eps must be positive; --min-pts and --dim at least 1".into()));
    }
    let mut inputs = Vec::new();
    for d in &dirs {
        inputs.extend(collect_inputs(&open_run(d)?, cc.failures_only).map_err(runtime)?);
    }
    if inputs.is_empty() {
        return Err(CliError::NothingToDo("no evaluation logs to cluster; run `repoport evaluate` first".into()));
    }
    let logs = inputs.iter().map(|i| (i.key.clone(), i.log.clone())).collect();
    let atlas = build_atlas(inputs, &cc);
    let out = a.out.unwrap_or_else(|| dirs[0].join("atlas"));
    write_atlas(&out, &atlas, &logs).map_err(runtime)?;
    let clusters = atlas.clusters();
    let noise = clusters.get(&repoport_core::atlas::NOISE).map_or(0, Vec::len);
    println!(
        "{}: {} log(s), {} cluster(s), {} noise; review clusters/ and edit label_map.template.json",
        out.display(),
        atlas.assignment.len(),
        atlas.cluster_count(),
        noise
    );
    let map = match &a.labels {
        Some(p) => load_label_map(p).map_err(|e| CliError::Usage(e.to_string()))?,
        None => Default::default(),
    };
    let group_by = if a.group_by.is_empty() { vec![Facet::Llm, Facet::Application, Facet::Technique] } else { a.group_by };
    let cats = categorize(&atlas.assignment, &atlas.facets, &map, &group_by, &a.filters);
    for w in &cats.warnings {
        eprintln!("repoport: warning: {w}");
    }
    write_categories(&out, &cats).map_err(runtime)?;
    print!("{}", crate::atlas_io::category_text(&cats.table));
    Ok(())
}

fn cmd_report(a: ReportArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let dirs = run_dirs(a.run_dirs, cfg)?;
    let ks = ks(a.ks, cfg);
    let scope = a.kappa_scope.or(cfg.kappa_over).unwrap_or_default();
    let mut runs: Vec<(RunDir, ScoreReport)> = Vec::new();
    for d in &dirs {
        let run = open_run(d)?;
        let s = score_with(&run, &ks, &[EvalMode::Overall, EvalMode::CodeOnly], scope).map_err(runtime)?;
        runs.push((run, s));
    }
    let atlas = a.atlas.unwrap_or_else(|| dirs[0].join("atlas"));
    let labels = a.labels.as_deref();
    if let Some(p) = labels {
        load_label_map(p).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let c = consolidate(&runs, Some(&atlas), labels).map_err(runtime)?;
    let out = a.out.unwrap_or_else(|| dirs[0].clone());
    write_consolidated(&out, &c).map_err(runtime)?;
    print!("{}", crate::report::consolidated_text(&c));
    Ok(())
}
