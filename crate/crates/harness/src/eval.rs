//! Building and running candidate translations.
//!
//! Each (sample, mode) pair gets a fresh temporary directory. Builds and run
//! cases execute in their own process group with a cleared environment
//! (plus an allowlist) and are killed as a group on timeout.

use std::collections::{BTreeMap, VecDeque};
use std::fs::{self, File};
use std::io::{self, Read};
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use regex::Regex;
use repoport_core::markers::{check_target_model_usage, MarkerReport, Strictness};
use repoport_core::{
    normalize_whitespace, EvalMode, EvalOutcome, Execution, FileKind, GenerationSample, ProgrammingModel, RelPath,
    StdoutMatcher, StepResult, TranslationTask, Verdict,
};
use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use crate::runs::{read_json, write_json, RunDir, RunError};
use crate::snapshot::write_files;

/// Where a sample's own build files are moved in code-only mode.
pub const ARCHIVE_DIR: &str = ".archived-build-files";

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("code-only evaluation of `{0}` needs ground-truth build files")]
    MissingGroundTruth(String),
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
    #[error(transparent)]
    Run(#[from] RunError),
}

fn io_ctx(context: impl Into<String>) -> impl FnOnce(io::Error) -> EvalError {
    let context = context.into();
    move |source| EvalError::Io { context, source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildProfile {
    /// Replaces the task's build command when set.
    #[serde(default)]
    pub build_command_template: Option<Vec<String>>,
    /// Commands that must all exit 0 before a build is attempted.
    pub required_toolchain_probe: Vec<Vec<String>>,
    /// Exit 0 means an accelerator is present.
    #[serde(default)]
    pub device_probe: Option<Vec<String>>,
    #[serde(default)]
    pub environment: BTreeMap<String, String>,
}

fn sh(script: &str) -> Vec<String> {
    vec!["sh".into(), "-c".into(), script.into()]
}

impl BuildProfile {
    pub fn builtin(name: &str) -> Option<BuildProfile> {
        let gpu = Some(vec!["nvidia-smi".to_string(), "-L".to_string()]);
        let probe = match name {
            "openmp" => sh(
                "printf '#include <omp.h>\\nint main(){return omp_get_max_threads()>0?0:1;}\\n' \
                 | ${CXX:-g++} -fopenmp -x c++ - -o /dev/null",
            ),
            "cuda" => vec!["nvcc".into(), "--version".into()],
            "kokkos" => sh("cmake --find-package -DNAME=Kokkos -DCOMPILER_ID=GNU -DLANGUAGE=CXX -DMODE=EXIST"),
            _ => return None,
        };
        Some(BuildProfile {
            build_command_template: None,
            required_toolchain_probe: vec![probe],
            device_probe: gpu,
            environment: BTreeMap::new(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandboxPolicy {
    pub build_timeout: Duration,
    /// Upper bound on any single run case.
    pub run_timeout: Duration,
    pub env_allowlist: Vec<String>,
    /// Leave sandboxes on disk (their paths are logged).
    #[serde(default)]
    pub keep_sandboxes: bool,
    #[serde(default)]
    pub strictness: Strictness,
}

impl Default for SandboxPolicy {
    fn default() -> Self {
        let allow = [
            "PATH", "HOME", "USER", "LANG", "LC_ALL", "TMPDIR", "CC", "CXX", "OMP_NUM_THREADS", "OMP_TARGET_OFFLOAD",
            "LD_LIBRARY_PATH", "LIBRARY_PATH", "CPATH", "CMAKE_PREFIX_PATH", "Kokkos_DIR", "CUDA_HOME",
        ];
        SandboxPolicy {
            build_timeout: Duration::from_secs(300),
            run_timeout: Duration::from_secs(120),
            env_allowlist: allow.iter().map(|s| s.to_string()).collect(),
            keep_sandboxes: false,
            strictness: Strictness::Strict,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub profile: String,
    pub ok: bool,
    pub device: bool,
    pub log: String,
}

/// Toolchain probes, run at most once per profile.
#[derive(Debug, Default)]
pub struct Probes {
    custom: BTreeMap<String, BuildProfile>,
    cache: Mutex<BTreeMap<String, ProbeResult>>,
}

impl Probes {
    pub fn new(custom: BTreeMap<String, BuildProfile>) -> Self {
        Probes { custom, cache: Mutex::new(BTreeMap::new()) }
    }

    pub fn profile(&self, name: &str) -> Option<BuildProfile> {
        self.custom.get(name).cloned().or_else(|| BuildProfile::builtin(name))
    }

    pub fn probe(&self, name: &str, policy: &SandboxPolicy) -> ProbeResult {
        if let Some(r) = self.cache.lock().expect("probe cache").get(name) {
            return r.clone();
        }
        let result = match self.profile(name) {
            None => ProbeResult { profile: name.into(), ok: false, device: false, log: format!("no build profile named `{name}`") },
            Some(p) => {
                let dir = std::env::temp_dir();
                let timeout = Duration::from_secs(60);
                let mut log = String::new();
                let mut ok = true;
                for argv in &p.required_toolchain_probe {
                    let r = run_logged(argv, &dir, timeout, &env_for(policy, &p));
                    log.push_str(&r.log);
                    if !r.ok {
                        ok = false;
                        break;
                    }
                }
                let device = ok
                    && p.device_probe.as_ref().is_some_and(|argv| run_logged(argv, &dir, timeout, &env_for(policy, &p)).ok);
                ProbeResult { profile: name.into(), ok, device, log }
            }
        };
        self.cache.lock().expect("probe cache").insert(name.to_string(), result.clone());
        result
    }
}

fn env_for(policy: &SandboxPolicy, profile: &BuildProfile) -> Vec<(String, String)> {
    let mut env: BTreeMap<String, String> =
        policy.env_allowlist.iter().filter_map(|k| std::env::var(k).ok().map(|v| (k.clone(), v))).collect();
    env.extend(profile.environment.clone());
    env.into_iter().collect()
}

fn resolve_program(program: &str, dir: &Path) -> PathBuf {
    let p = Path::new(program);
    if !p.is_absolute() && program.contains('/') {
        dir.join(p)
    } else {
        p.to_path_buf()
    }
}

struct Finished {
    status: Option<i32>,
    timed_out: bool,
    seconds: f64,
    spawn_error: Option<String>,
}

/// Spawns `argv` in `dir` in a new process group; on timeout the whole
/// group is killed.
fn spawn_wait(argv: &[String], dir: &Path, timeout: Duration, env: &[(String, String)], stdout: Stdio, stderr: Stdio) -> Finished {
    let start = Instant::now();
    let Some((program, args)) = argv.split_first() else {
        return Finished { status: None, timed_out: false, seconds: 0.0, spawn_error: Some("empty command".into()) };
    };
    let mut cmd = Command::new(resolve_program(program, dir));
    cmd.args(args).current_dir(dir).env_clear().envs(env.iter().cloned()).stdin(Stdio::null()).stdout(stdout).stderr(stderr);
    cmd.process_group(0);
    let mut child = match cmd.spawn() {
        Ok(c) => c,
        Err(e) => {
            return Finished { status: None, timed_out: false, seconds: 0.0, spawn_error: Some(format!("cannot run `{program}`: {e}")) }
        }
    };
    let (status, timed_out) = match child.wait_timeout(timeout) {
        Ok(Some(s)) => (s.code(), false),
        Ok(None) => {
            let pgid = child.id() as i32;
            // SAFETY: kill(2) on a process group id we created; no memory involved.
            unsafe {
                libc::kill(-pgid, libc::SIGKILL);
            }
            let _ = child.kill();
            let _ = child.wait();
            (None, true)
        }
        Err(e) => {
            return Finished {
                status: None,
                timed_out: false,
                seconds: start.elapsed().as_secs_f64(),
                spawn_error: Some(format!("waiting for `{program}`: {e}")),
            }
        }
    };
    Finished { status, timed_out, seconds: start.elapsed().as_secs_f64(), spawn_error: None }
}

fn read_lossy(f: &mut File) -> String {
    let mut buf = Vec::new();
    let _ = f.read_to_end(&mut buf);
    String::from_utf8_lossy(&buf).into_owned()
}

/// Runs a command with stdout and stderr interleaved into one log.
pub fn run_logged(argv: &[String], dir: &Path, timeout: Duration, env: &[(String, String)]) -> StepResult {
    let mut log = format!("$ {}\n", argv.join(" "));
    let file = match tempfile::tempfile() {
        Ok(f) => f,
        Err(e) => return StepResult { ok: false, log: format!("{log}cannot create log file: {e}\n"), seconds: 0.0, timed_out: false },
    };
    let (out, err) = match (file.try_clone(), file.try_clone()) {
        (Ok(a), Ok(b)) => (a, b),
        _ => return StepResult { ok: false, log: format!("{log}cannot duplicate log file\n"), seconds: 0.0, timed_out: false },
    };
    let fin = spawn_wait(argv, dir, timeout, env, Stdio::from(out), Stdio::from(err));
    let mut file = file;
    use std::io::Seek;
    let _ = file.rewind();
    log.push_str(&read_lossy(&mut file));
    if let Some(e) = &fin.spawn_error {
        log.push_str(e);
        log.push('\n');
    }
    if fin.timed_out {
        log.push_str(&format!("[timed out after {:.1} s]\n", timeout.as_secs_f64()));
    } else if let Some(code) = fin.status {
        log.push_str(&format!("[exit status {code}]\n"));
    }
    StepResult { ok: fin.status == Some(0) && !fin.timed_out, log, seconds: fin.seconds, timed_out: fin.timed_out }
}

/// Sample files whose name marks them as part of a build system, plus the
/// task's designated build files.
fn is_build_path(path: &RelPath, task: &TranslationTask) -> bool {
    FileKind::infer(path) == FileKind::Build || task.repo.is_build_file(path)
}

/// Writes the candidate into `dir`. In code-only mode the sample's build
/// files move under [`ARCHIVE_DIR`] and the ground-truth ones take their
/// place. Returns notes for the build log.
pub fn materialize_candidate(
    files: &BTreeMap<RelPath, Vec<u8>>,
    task: &TranslationTask,
    mode: EvalMode,
    dir: &Path,
) -> Result<Vec<String>, EvalError> {
    let mut notes = Vec::new();
    match mode {
        EvalMode::Overall => {
            write_files(dir, files.iter().map(|(p, b)| (p, b.as_slice()))).map_err(io_ctx("writing candidate"))?;
        }
        EvalMode::CodeOnly => {
            let gt = task.ground_truth_build_files.as_ref().ok_or_else(|| EvalError::MissingGroundTruth(task.task_id.clone()))?;
            let (build, code): (Vec<_>, Vec<_>) = files.iter().partition(|(p, _)| is_build_path(p, task));
            write_files(dir, code.into_iter().map(|(p, b)| (p, b.as_slice()))).map_err(io_ctx("writing candidate"))?;
            let archive = dir.join(ARCHIVE_DIR);
            for (p, _) in &build {
                notes.push(format!("archived sample build file {p}"));
            }
            write_files(&archive, build.into_iter().map(|(p, b)| (p, b.as_slice()))).map_err(io_ctx("archiving build files"))?;
            write_files(dir, gt.iter().map(|(p, b)| (p, b.as_slice()))).map_err(io_ctx("writing ground truth"))?;
            for p in gt.keys() {
                notes.push(format!("using ground-truth {p}"));
            }
        }
    }
    Ok(notes)
}

pub fn build_candidate(dir: &Path, task: &TranslationTask, profile: &BuildProfile, policy: &SandboxPolicy) -> StepResult {
    let argv = profile.build_command_template.clone().unwrap_or_else(|| task.test_spec.build_command.clone());
    run_logged(&argv, dir, policy.build_timeout, &env_for(policy, profile))
}

pub fn stdout_matches(matcher: &StdoutMatcher, stdout: &str) -> Result<bool, String> {
    match matcher {
        StdoutMatcher::Exact(s) => Ok(normalize_whitespace(stdout) == normalize_whitespace(s)),
        StdoutMatcher::Regex(r) => Regex::new(r).map(|re| re.is_match(stdout)).map_err(|e| format!("bad regex: {e}")),
    }
}

/// Executes every run case. Passes iff each exits with the expected code
/// and its stdout satisfies the matcher.
pub fn run_tests(dir: &Path, task: &TranslationTask, profile: &BuildProfile, policy: &SandboxPolicy) -> StepResult {
    let env = env_for(policy, profile);
    let mut log = String::new();
    let mut ok = true;
    let mut seconds = 0.0;
    for (i, case) in task.test_spec.run_cases.iter().enumerate() {
        let timeout = Duration::from_secs_f64(case.timeout_seconds).min(policy.run_timeout);
        log.push_str(&format!("$ {}\n", case.argv.join(" ")));
        let (Ok(mut out), Ok(mut err)) = (tempfile::tempfile(), tempfile::tempfile()) else {
            log.push_str("cannot create output files\n");
            ok = false;
            continue;
        };
        let (Ok(o2), Ok(e2)) = (out.try_clone(), err.try_clone()) else {
            log.push_str("cannot duplicate output files\n");
            ok = false;
            continue;
        };
        let fin = spawn_wait(&case.argv, dir, timeout, &env, Stdio::from(o2), Stdio::from(e2));
        seconds += fin.seconds;
        use std::io::Seek;
        let _ = out.rewind();
        let _ = err.rewind();
        let stdout = read_lossy(&mut out);
        let stderr = read_lossy(&mut err);
        log.push_str(&stdout);
        if !stdout.is_empty() && !stdout.ends_with('\n') {
            log.push('\n');
        }
        log.push_str(&stderr);
        if !stderr.is_empty() && !stderr.ends_with('\n') {
            log.push('\n');
        }
        let verdict = if let Some(e) = fin.spawn_error {
            Err(e)
        } else if fin.timed_out {
            Err(format!("timeout: case {} exceeded {:.1} s", i + 1, timeout.as_secs_f64()))
        } else if fin.status != Some(task.test_spec.expected_exit_code) {
            Err(format!("case {}: exit status {:?}, expected {}", i + 1, fin.status, task.test_spec.expected_exit_code))
        } else {
            match stdout_matches(&case.expected_stdout, &stdout) {
                Ok(true) => Ok(()),
                Ok(false) => Err(format!("case {}: output mismatch; expected {:?}", i + 1, case.expected_stdout)),
                Err(e) => Err(format!("case {}: {e}", i + 1)),
            }
        };
        match verdict {
            Ok(()) => log.push_str(&format!("[case {} ok]\n", i + 1)),
            Err(e) => {
                ok = false;
                log.push_str(&format!("[{e}]\n"));
            }
        }
    }
    StepResult { ok, log, seconds, timed_out: false }
}

/// Marker check over the candidate's code files.
pub fn check_candidate_markers(
    files: &BTreeMap<RelPath, Vec<u8>>,
    task: &TranslationTask,
    strictness: Strictness,
) -> MarkerReport {
    let texts: Vec<(&RelPath, String)> = files.iter().map(|(p, b)| (p, String::from_utf8_lossy(b).into_owned())).collect();
    check_target_model_usage(texts.iter().map(|(p, t)| (*p, t.as_str())), &task.target_model, Some(&task.source_model), strictness)
}

/// Result of evaluating one sample in one mode.
#[derive(Debug, Clone, PartialEq)]
pub enum ModeResult {
    Outcome(EvalOutcome),
    Untestable(ProbeResult),
}

fn profile_name(model: &ProgrammingModel) -> String {
    model.build_profile.clone().unwrap_or_else(|| model.id.to_string())
}

/// Materialize, build, run and check one sample in one mode. Never fails
/// on candidate problems; those become verdicts.
pub fn evaluate_mode(
    sample: &GenerationSample,
    task: &TranslationTask,
    mode: EvalMode,
    probes: &Probes,
    policy: &SandboxPolicy,
) -> Result<ModeResult, EvalError> {
    let name = profile_name(&task.target_model);
    let probe = probes.probe(&name, policy);
    if !probe.ok {
        return Ok(ModeResult::Untestable(probe));
    }
    let profile = probes.profile(&name).expect("probe succeeded so the profile exists");
    let sandbox = tempfile::Builder::new().prefix("repoport-eval-").tempdir().map_err(io_ctx("creating sandbox"))?;
    let dir = sandbox.path();
    let notes = materialize_candidate(&sample.translated_files, task, mode, dir)?;
    let mut build = build_candidate(dir, task, &profile, policy);
    if !notes.is_empty() {
        build.log = format!("{}\n{}", notes.join("\n"), build.log);
    }
    let run = if build.ok { run_tests(dir, task, &profile, policy) } else { StepResult::skipped("not run: build failed") };
    let markers = check_candidate_markers(&sample.translated_files, task, policy.strictness);
    let verdict = Verdict::compose(&build, &run, markers.used);
    if policy.keep_sandboxes {
        let kept = sandbox.keep();
        log::info!("kept sandbox {}", kept.display());
    }
    Ok(ModeResult::Outcome(EvalOutcome {
        sample_id: sample.sample_id.clone(),
        task_id: task.task_id.clone(),
        technique: sample.technique,
        mode,
        build,
        run,
        target_model_used: markers.used,
        verdict,
        execution: if probe.device { Execution::Device } else { Execution::HostFallback },
    }))
}

fn verdict_log(outcome: &EvalOutcome) -> String {
    let mut s = format!(
        "sample {}\nmode {}\nverdict {}\nbuild ok={} seconds={:.2}{}\nrun ok={} seconds={:.2}\ntarget model used={}\n",
        outcome.sample_id,
        outcome.mode.slug(),
        outcome.verdict.slug(),
        outcome.build.ok,
        outcome.build.seconds,
        if outcome.build.timed_out { " (timed out)" } else { "" },
        outcome.run.ok,
        outcome.run.seconds,
        outcome.target_model_used,
    );
    if outcome.verdict == Verdict::WrongModel {
        s.push_str("no target-model marker found, or source-model markers remain\n");
    }
    s
}

/// Persists an outcome next to its logs: `outcome.json`, `build.log`,
/// `run.log` and, for anything but a pass, `verdict.log`.
pub fn persist_outcome(dir: &Path, outcome: &EvalOutcome) -> Result<(), EvalError> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(io_ctx(dir.display().to_string()))?;
    }
    write_json(&dir.join("outcome.json"), outcome)?;
    fs::write(dir.join("build.log"), &outcome.build.log).map_err(io_ctx("build.log"))?;
    fs::write(dir.join("run.log"), &outcome.run.log).map_err(io_ctx("run.log"))?;
    if !outcome.passed() {
        fs::write(dir.join("verdict.log"), verdict_log(outcome)).map_err(io_ctx("verdict.log"))?;
    }
    Ok(())
}

pub fn persist_untestable(dir: &Path, probe: &ProbeResult) -> Result<(), EvalError> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(io_ctx(dir.display().to_string()))?;
    }
    write_json(&dir.join("untestable.json"), probe)?;
    Ok(())
}

pub fn evaluate_sample(
    sample: &GenerationSample,
    task: &TranslationTask,
    modes: &[EvalMode],
    probes: &Probes,
    policy: &SandboxPolicy,
) -> Vec<Result<ModeResult, EvalError>> {
    modes.iter().map(|&m| evaluate_mode(sample, task, m, probes, policy)).collect()
}

/// What `evaluate_run` did.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub evaluated: usize,
    pub reused: usize,
    /// Samples whose generation status keeps them out of evaluation.
    pub excluded: usize,
    pub untestable: usize,
    pub by_verdict: BTreeMap<String, usize>,
}

pub struct EvalJob<'a> {
    pub run: &'a RunDir,
    pub tasks: &'a BTreeMap<String, TranslationTask>,
    pub modes: Vec<EvalMode>,
    pub policy: SandboxPolicy,
    pub probes: &'a Probes,
    pub parallelism: usize,
    /// Re-evaluate even when an outcome is already on disk.
    pub force: bool,
}

/// Evaluates every stored sample in every requested mode.
pub fn evaluate_run(job: &EvalJob<'_>) -> Result<EvalSummary, EvalError> {
    let mut summary = EvalSummary::default();
    let mut queue = VecDeque::new();
    for stored in job.run.samples()? {
        if stored.meta.status.excludes_from_metrics() {
            summary.excluded += 1;
            continue;
        }
        let Some(task) = job.tasks.get(&stored.meta.task_id) else {
            log::warn!("no task `{}` loaded; skipping {}", stored.meta.task_id, stored.meta.sample_id);
            continue;
        };
        for &mode in &job.modes {
            if mode == EvalMode::CodeOnly && task.ground_truth_build_files.is_none() {
                log::warn!("{}: no ground-truth build files; code-only skipped", task.task_id);
                continue;
            }
            let dir = stored.eval_dir(mode);
            if !job.force {
                if let Ok(o) = read_json::<EvalOutcome>(&dir.join("outcome.json")) {
                    summary.reused += 1;
                    *summary.by_verdict.entry(o.verdict.slug().to_string()).or_default() += 1;
                    continue;
                }
            }
            queue.push_back((stored.clone(), task, mode, dir));
        }
    }
    let queue = Mutex::new(queue);
    let results = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..job.parallelism.max(1) {
            scope.spawn(|| loop {
                let Some((stored, task, mode, dir)) = queue.lock().expect("queue lock").pop_front() else { break };
                log::info!("evaluating {} ({})", stored.meta.sample_id, mode.slug());
                let r = stored.load().map_err(EvalError::from).and_then(|sample| {
                    let r = evaluate_mode(&sample, task, mode, job.probes, &job.policy)?;
                    match &r {
                        ModeResult::Outcome(o) => persist_outcome(&dir, o)?,
                        ModeResult::Untestable(p) => persist_untestable(&dir, p)?,
                    }
                    Ok(r)
                });
                results.lock().expect("results lock").push(r);
            });
        }
    });
    for r in results.into_inner().expect("results lock") {
        match r? {
            ModeResult::Outcome(o) => {
                summary.evaluated += 1;
                *summary.by_verdict.entry(o.verdict.slug().to_string()).or_default() += 1;
            }
            ModeResult::Untestable(_) => summary.untestable += 1,
        }
    }
    Ok(summary)
}

/// A (task, mode) pair whose toolchain probe failed.
pub type Untestable = (String, EvalMode, ProbeResult);

/// Every outcome stored under a run, plus the (task, mode) pairs recorded
/// as untestable.
pub fn stored_outcomes(run: &RunDir) -> Result<(Vec<EvalOutcome>, Vec<Untestable>), EvalError> {
    let mut outcomes = Vec::new();
    let mut untestable = Vec::new();
    for stored in run.samples()? {
        for mode in [EvalMode::Overall, EvalMode::CodeOnly] {
            let dir = stored.eval_dir(mode);
            if dir.join("outcome.json").is_file() {
                outcomes.push(read_json(&dir.join("outcome.json"))?);
            } else if dir.join("untestable.json").is_file() {
                untestable.push((stored.meta.task_id.clone(), mode, read_json(&dir.join("untestable.json"))?));
            }
        }
    }
    Ok((outcomes, untestable))
}
