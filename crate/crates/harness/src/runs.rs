//! Run directories.
//!
//! ```text
//! <run>/run.json
//! <run>/<task>/<technique>/s000/repo/...          assembled sample files
//! <run>/<task>/<technique>/s000/transcript.jsonl  one PromptRecord per line
//! <run>/<task>/<technique>/s000/ledger.json
//! <run>/<task>/<technique>/s000/plan.json         top-down only
//! <run>/<task>/<technique>/s000/status.json       written last
//! <run>/<task>/<technique>/s000/eval/<mode>/...   outcome.json and logs
//! ```
//!
//! A sample whose `status.json` records the same configuration digest and a
//! matching transcript digest is not generated again.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::io::{self, BufRead};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use repoport_core::atlas::sha256_hex;
use repoport_core::tokens::{Budget, TokenLedger};
use repoport_core::{GenerationSample, PromptRecord, RelPath, SampleStatus, Technique};
use serde::{Deserialize, Serialize};

use crate::gateway::{BackendConfig, Gateway};
use crate::manifest::LoadedTask;
use crate::pipeline::{run_sample, sample_id, PipelineConfig, TranslationPlan};
use crate::snapshot::{read_all, write_files, LoadError};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{0}")]
    Load(#[from] LoadError),
    #[error("{0} is not a run directory (no run.json)")]
    NotARun(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_path_buf(), source }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, RunError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| RunError::Json { path: path.to_path_buf(), source })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEntry {
    pub task_id: String,
    pub manifest: PathBuf,
    pub application: String,
}

/// Contents of `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub run_id: String,
    pub llm: String,
    pub backend: BackendConfig,
    pub tasks: Vec<TaskEntry>,
    pub techniques: Vec<Technique>,
    pub n_samples: usize,
}

/// Contents of a sample's `status.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub sample_id: String,
    pub task_id: String,
    pub technique: Technique,
    pub status: SampleStatus,
    pub llm: String,
    pub application: String,
    pub total_tokens: u64,
    pub requests: usize,
    #[serde(default)]
    pub planned_files: Vec<RelPath>,
    #[serde(default)]
    pub extra_files: Vec<RelPath>,
    #[serde(default)]
    pub warnings: Vec<String>,
    pub config_digest: String,
    pub transcript_digest: String,
}

#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn open(root: impl Into<PathBuf>) -> Result<Self, RunError> {
        let d = RunDir::new(root);
        if !d.info_path().is_file() {
            return Err(RunError::NotARun(d.root));
        }
        Ok(d)
    }

    pub fn info_path(&self) -> PathBuf {
        self.root.join("run.json")
    }

    pub fn info(&self) -> Result<RunInfo, RunError> {
        read_json(&self.info_path())
    }

    pub fn sample_dir(&self, task_id: &str, technique: Technique, index: usize) -> PathBuf {
        self.root.join(task_id).join(technique.slug()).join(format!("s{index:03}"))
    }

    /// Every sample directory holding a `status.json`, sorted by path.
    pub fn samples(&self) -> Result<Vec<StoredSample>, RunError> {
        let mut out = Vec::new();
        for task in sorted_dirs(&self.root)? {
            for tech in sorted_dirs(&task)? {
                for sample in sorted_dirs(&tech)? {
                    let status = sample.join("status.json");
                    if status.is_file() {
                        out.push(StoredSample { meta: read_json(&status)?, dir: sample });
                    }
                }
            }
        }
        Ok(out)
    }
}

fn sorted_dirs(dir: &Path) -> Result<Vec<PathBuf>, RunError> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_ok_and(|t| t.is_dir()))
        .map(|e| e.path())
        .collect();
    v.sort();
    Ok(v)
}

#[derive(Debug, Clone)]
pub struct StoredSample {
    pub dir: PathBuf,
    pub meta: SampleMeta,
}

impl StoredSample {
    pub fn repo_dir(&self) -> PathBuf {
        self.dir.join("repo")
    }

    pub fn eval_dir(&self, mode: repoport_core::EvalMode) -> PathBuf {
        self.dir.join("eval").join(mode.slug())
    }

    pub fn transcript(&self) -> Result<Vec<PromptRecord>, RunError> {
        read_transcript(&self.dir.join("transcript.jsonl"))
    }

    pub fn ledger(&self) -> Result<TokenLedger, RunError> {
        read_json(&self.dir.join("ledger.json"))
    }

    /// Reassembles the in-memory sample from disk.
    pub fn load(&self) -> Result<GenerationSample, RunError> {
        let repo = self.repo_dir();
        let translated_files = if repo.is_dir() { read_all(&repo)?.into_iter().collect() } else { BTreeMap::new() };
        Ok(GenerationSample {
            sample_id: self.meta.sample_id.clone(),
            task_id: self.meta.task_id.clone(),
            technique: self.meta.technique,
            translated_files,
            token_ledger: self.ledger()?,
            transcript: self.transcript()?,
            status: self.meta.status,
            planned_files: self.meta.planned_files.clone(),
            extra_files: self.meta.extra_files.clone(),
            warnings: self.meta.warnings.clone(),
        })
    }
}

pub fn read_transcript(path: &Path) -> Result<Vec<PromptRecord>, RunError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for line in io::BufReader::new(f).lines() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| RunError::Json { path: path.to_path_buf(), source })?);
    }
    Ok(out)
}

fn transcript_bytes(records: &[PromptRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        out.extend(serde_json::to_vec(r).expect("serializable"));
        out.push(b'\n');
    }
    out
}

/// Writes a finished sample. `status.json` goes last so an interrupted
/// write is regenerated on the next run.
pub fn write_sample(
    dir: &Path,
    sample: &GenerationSample,
    plan: Option<&TranslationPlan>,
    llm: &str,
    application: &str,
    config_digest: &str,
) -> Result<SampleMeta, RunError> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(io_err(dir))?;
    }
    let repo = dir.join("repo");
    fs::create_dir_all(&repo).map_err(io_err(&repo))?;
    write_files(&repo, sample.translated_files.iter().map(|(p, b)| (p, b.as_slice()))).map_err(io_err(&repo))?;
    let transcript = transcript_bytes(&sample.transcript);
    let tpath = dir.join("transcript.jsonl");
    fs::write(&tpath, &transcript).map_err(io_err(&tpath))?;
    write_json(&dir.join("ledger.json"), &sample.token_ledger)?;
    if let Some(plan) = plan {
        write_json(&dir.join("plan.json"), plan)?;
    }
    let meta = SampleMeta {
        sample_id: sample.sample_id.clone(),
        task_id: sample.task_id.clone(),
        technique: sample.technique,
        status: sample.status,
        llm: llm.to_string(),
        application: application.to_string(),
        total_tokens: sample.total_tokens(),
        requests: sample.transcript.len(),
        planned_files: sample.planned_files.clone(),
        extra_files: sample.extra_files.clone(),
        warnings: sample.warnings.clone(),
        config_digest: config_digest.to_string(),
        transcript_digest: sha256_hex(&transcript),
    };
    write_json(&dir.join("status.json"), &meta)?;
    Ok(meta)
}

/// True when `dir` holds a finished sample for `config_digest` whose
/// transcript is intact. Samples that stopped on a backend failure or the
/// budget are retried.
pub fn is_reusable(dir: &Path, config_digest: &str) -> bool {
    let Ok(meta) = read_json::<SampleMeta>(&dir.join("status.json")) else { return false };
    if meta.config_digest != config_digest || matches!(meta.status, SampleStatus::BackendError | SampleStatus::BudgetExceeded) {
        return false;
    }
    fs::read(dir.join("transcript.jsonl")).is_ok_and(|t| sha256_hex(&t) == meta.transcript_digest)
}

/// Digest of everything that determines a sample's requests.
pub fn config_digest(task: &LoadedTask, technique: Technique, backend: &BackendConfig, cfg: &PipelineConfig, index: usize) -> String {
    let mut h = String::new();
    h.push_str(&serde_json::to_string(&task.manifest).expect("serializable"));
    for f in task.task.repo.files() {
        h.push_str(&format!("\n{} {}", f.path, sha256_hex(&f.content)));
    }
    h.push_str(&format!(
        "\n{}\n{}\n{} {} {} {:?}\n{index}",
        technique.slug(),
        serde_json::to_string(backend).expect("serializable"),
        cfg.context_window,
        cfg.input_fraction,
        cfg.header_lines,
        cfg.dep_tool
    ));
    for (name, text) in cfg.templates.iter() {
        h.push_str(&format!("\n{name} {}", sha256_hex(text.as_bytes())));
    }
    sha256_hex(h.as_bytes())
}

#[derive(Debug, Clone)]
pub struct TranslateJob {
    pub run: RunDir,
    pub run_id: String,
    pub tasks: Vec<LoadedTask>,
    pub techniques: Vec<Technique>,
    pub backend: BackendConfig,
    pub n_samples: usize,
    pub parallelism: usize,
    pub pipeline: PipelineConfig,
    pub budget: Budget,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TranslateSummary {
    pub generated: usize,
    pub reused: usize,
    pub by_status: BTreeMap<String, usize>,
    /// Backend calls made by this invocation, retries included.
    pub dispatched: u64,
}

impl TranslateSummary {
    pub fn completed(&self) -> usize {
        self.by_status.get("complete").copied().unwrap_or(0)
    }
}

fn status_name(s: SampleStatus) -> String {
    serde_json::to_value(s).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

/// Generates every missing sample of the job.
pub fn translate(job: &TranslateJob) -> Result<TranslateSummary, RunError> {
    let backend = job.backend.build().map_err(|e| RunError::Io { path: job.run.root.clone(), source: io::Error::other(e.to_string()) })?;
    let gateway = Gateway::new(backend, &job.backend, job.budget);
    let info = RunInfo {
        run_id: job.run_id.clone(),
        llm: job.backend.label().to_string(),
        backend: job.backend.clone(),
        tasks: job
            .tasks
            .iter()
            .map(|t| TaskEntry {
                task_id: t.task.task_id.clone(),
                manifest: fs::canonicalize(&t.manifest_path).unwrap_or_else(|_| t.manifest_path.clone()),
                application: t.manifest.application().to_string(),
            })
            .collect(),
        techniques: job.techniques.clone(),
        n_samples: job.n_samples,
    };
    write_json(&job.run.info_path(), &info)?;
    let mut queue = VecDeque::new();
    let mut summary = TranslateSummary::default();
    for t in &job.tasks {
        for &tech in &job.techniques {
            for i in 0..job.n_samples {
                let digest = config_digest(t, tech, &job.backend, &job.pipeline, i);
                let dir = job.run.sample_dir(&t.task.task_id, tech, i);
                if is_reusable(&dir, &digest) {
                    summary.reused += 1;
                    let meta: SampleMeta = read_json(&dir.join("status.json"))?;
                    *summary.by_status.entry(status_name(meta.status)).or_default() += 1;
                    continue;
                }
                queue.push_back((t, tech, i, digest, dir));
            }
        }
    }
    let queue = Mutex::new(queue);
    let results: Mutex<Vec<Result<SampleMeta, RunError>>> = Mutex::new(Vec::new());
    let workers = job.parallelism.max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let Some((t, tech, i, digest, dir)) = queue.lock().expect("queue lock").pop_front() else { break };
                let id = sample_id(&t.task.task_id, tech, i);
                log::info!("translating {id}");
                let (sample, plan) = run_sample(tech, &t.task, &gateway, &job.pipeline, &id);
                let r = write_sample(&dir, &sample, plan.as_ref(), job.backend.label(), t.manifest.application(), &digest);
                results.lock().expect("results lock").push(r);
            });
        }
    });
    for r in results.into_inner().expect("results lock") {
        let meta = r?;
        summary.generated += 1;
        *summary.by_status.entry(status_name(meta.status)).or_default() += 1;
    }
    summary.dispatched = gateway.dispatched();
    Ok(summary)
}
