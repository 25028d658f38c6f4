//! Shared domain types.
//!
//! Everything here is immutable once constructed; constructors enforce the
//! invariants (path containment, `c <= b <= N`, `source != target`, ...) so
//! downstream code can rely on them.

use alloc::borrow::Cow;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::path::RelPath;
use crate::tokens::{TokenLedger, Usage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileKind {
    Source,
    Header,
    Build,
    Doc,
    Other,
}

impl FileKind {
    /// Extension/name based classification.
    pub fn infer(path: &RelPath) -> FileKind {
        match path.file_name() {
            "Makefile" | "makefile" | "GNUmakefile" | "CMakeLists.txt" => return FileKind::Build,
            _ => {}
        }
        match path.extension().map(|e| e.to_ascii_lowercase()).as_deref() {
            Some("cu" | "cpp" | "cc" | "cxx" | "c" | "c++") => FileKind::Source,
            Some("h" | "hpp" | "hh" | "hxx" | "cuh" | "inl") => FileKind::Header,
            Some("mk" | "cmake") => FileKind::Build,
            Some("md" | "rst" | "txt") => FileKind::Doc,
            _ => FileKind::Other,
        }
    }

    pub fn is_code(self) -> bool {
        matches!(self, FileKind::Source | FileKind::Header)
    }

    /// Kinds the translation techniques rewrite; everything else is copied
    /// through unchanged.
    pub fn is_translated(self) -> bool {
        matches!(self, FileKind::Source | FileKind::Header | FileKind::Build)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileEntry {
    pub path: RelPath,
    pub content: Vec<u8>,
    pub kind: FileKind,
}

impl FileEntry {
    pub fn text(&self) -> Cow<'_, str> {
        String::from_utf8_lossy(&self.content)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SnapshotError {
    #[error("no files")]
    NoFiles,
    #[error("duplicate path `{0}`")]
    DuplicatePath(RelPath),
    #[error("manifest names build file `{0}` which is not in the repository")]
    UnknownBuildFile(RelPath),
    #[error("manifest names main file `{0}` which is not in the repository")]
    UnknownMainFile(RelPath),
}

/// Immutable view of a source repository.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepoSnapshot {
    root_name: String,
    files: BTreeMap<RelPath, FileEntry>,
    build_files: BTreeSet<RelPath>,
    main_files: BTreeSet<RelPath>,
}

impl RepoSnapshot {
    /// Builds a snapshot from raw file bytes. Files whose inferred kind is
    /// `Build` join `build_files`; files listed in `build_files` are forced to
    /// kind `Build`. `kind_overrides` is applied last for everything else.
    pub fn new(
        root_name: impl Into<String>,
        files: Vec<(RelPath, Vec<u8>)>,
        build_files: impl IntoIterator<Item = RelPath>,
        main_files: impl IntoIterator<Item = RelPath>,
        kind_overrides: &BTreeMap<RelPath, FileKind>,
    ) -> Result<Self, SnapshotError> {
        if files.is_empty() {
            return Err(SnapshotError::NoFiles);
        }
        let mut map = BTreeMap::new();
        for (path, content) in files {
            let kind = kind_overrides.get(&path).copied().unwrap_or_else(|| FileKind::infer(&path));
            if map.contains_key(&path) {
                return Err(SnapshotError::DuplicatePath(path));
            }
            map.insert(path.clone(), FileEntry { path, content, kind });
        }
        let mut build: BTreeSet<RelPath> = BTreeSet::new();
        for p in build_files {
            let entry = map.get_mut(&p).ok_or_else(|| SnapshotError::UnknownBuildFile(p.clone()))?;
            entry.kind = FileKind::Build;
            build.insert(p);
        }
        for entry in map.values() {
            if entry.kind == FileKind::Build {
                build.insert(entry.path.clone());
            }
        }
        let mut main = BTreeSet::new();
        for p in main_files {
            if !map.contains_key(&p) {
                return Err(SnapshotError::UnknownMainFile(p));
            }
            main.insert(p);
        }
        Ok(RepoSnapshot { root_name: root_name.into(), files: map, build_files: build, main_files: main })
    }

    pub fn root_name(&self) -> &str {
        &self.root_name
    }

    /// Files in lexicographic path order.
    pub fn files(&self) -> impl Iterator<Item = &FileEntry> {
        self.files.values()
    }

    pub fn paths(&self) -> impl Iterator<Item = &RelPath> {
        self.files.keys()
    }

    pub fn get(&self, path: &RelPath) -> Option<&FileEntry> {
        self.files.get(path)
    }

    pub fn contains(&self, path: &RelPath) -> bool {
        self.files.contains_key(path)
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn build_files(&self) -> &BTreeSet<RelPath> {
        &self.build_files
    }

    pub fn main_files(&self) -> &BTreeSet<RelPath> {
        &self.main_files
    }

    pub fn is_build_file(&self, path: &RelPath) -> bool {
        self.build_files.contains(path)
    }

    pub fn is_main_file(&self, path: &RelPath) -> bool {
        self.main_files.contains(path)
    }

    /// Files the translation techniques must produce output for.
    pub fn translatable(&self) -> impl Iterator<Item = &FileEntry> {
        self.files.values().filter(|f| f.kind.is_translated())
    }

    /// Files copied into every sample unchanged.
    pub fn passthrough(&self) -> impl Iterator<Item = &FileEntry> {
        self.files.values().filter(|f| !f.kind.is_translated())
    }
}

/// Identifier of a parallel programming model.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelId {
    Cuda,
    OpenmpThreads,
    OpenmpOffload,
    Kokkos,
    Custom(String),
}

impl ModelId {
    pub fn as_str(&self) -> &str {
        match self {
            ModelId::Cuda => "cuda",
            ModelId::OpenmpThreads => "openmp_threads",
            ModelId::OpenmpOffload => "openmp_offload",
            ModelId::Kokkos => "kokkos",
            ModelId::Custom(s) => s,
        }
    }

    pub fn parse(s: &str) -> ModelId {
        match s {
            "cuda" => ModelId::Cuda,
            "openmp_threads" | "openmp-threads" | "omp_threads" => ModelId::OpenmpThreads,
            "openmp_offload" | "openmp-offload" | "omp_offload" => ModelId::OpenmpOffload,
            "kokkos" => ModelId::Kokkos,
            other => ModelId::Custom(other.to_string()),
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for ModelId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ModelId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(ModelId::parse(&String::deserialize(d)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuildSystem {
    Make,
    Cmake,
}

impl BuildSystem {
    pub fn primary_file(self) -> &'static str {
        match self {
            BuildSystem::Make => "Makefile",
            BuildSystem::Cmake => "CMakeLists.txt",
        }
    }
}

/// A programming model plus the textual evidence used to recognise it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgrammingModel {
    pub id: ModelId,
    pub display_name: String,
    /// Signatures whose presence shows the model is in use.
    pub marker_patterns: Vec<String>,
    /// Signatures that only this model uses; finding them in a translation
    /// *away* from this model means the source was not fully converted.
    #[serde(default)]
    pub exclusive_markers: Vec<String>,
    pub build_system: BuildSystem,
    /// Name of the build profile used to evaluate code in this model.
    #[serde(default)]
    pub build_profile: Option<String>,
}

impl ProgrammingModel {
    pub fn builtin(id: &ModelId) -> Option<ProgrammingModel> {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        let m = match id {
            ModelId::Cuda => ProgrammingModel {
                id: id.clone(),
                display_name: "CUDA".into(),
                marker_patterns: s(&["__global__", "<<<"]),
                exclusive_markers: s(&["__global__", "<<<", "cudaMalloc", "cudaMemcpy", "cudaDeviceSynchronize"]),
                build_system: BuildSystem::Make,
                build_profile: Some("cuda".into()),
            },
            ModelId::OpenmpThreads => ProgrammingModel {
                id: id.clone(),
                display_name: "OpenMP Threads".into(),
                marker_patterns: s(&["#pragma omp parallel"]),
                exclusive_markers: Vec::new(),
                build_system: BuildSystem::Make,
                build_profile: Some("openmp".into()),
            },
            ModelId::OpenmpOffload => ProgrammingModel {
                id: id.clone(),
                display_name: "OpenMP Offload".into(),
                marker_patterns: s(&["#pragma omp target"]),
                exclusive_markers: s(&["#pragma omp target"]),
                build_system: BuildSystem::Make,
                build_profile: Some("openmp".into()),
            },
            ModelId::Kokkos => ProgrammingModel {
                id: id.clone(),
                display_name: "Kokkos".into(),
                marker_patterns: s(&["Kokkos::parallel_for", "Kokkos::initialize"]),
                exclusive_markers: s(&["Kokkos::"]),
                build_system: BuildSystem::Cmake,
                build_profile: Some("kokkos".into()),
            },
            ModelId::Custom(_) => return None,
        };
        Some(m)
    }
}

/// How a run case's stdout is compared with the expectation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdoutMatcher {
    /// Equality after [`normalize_whitespace`] on both sides.
    Exact(String),
    /// Regular expression searched in the raw stdout.
    Regex(String),
}

/// Trims each line, collapses internal whitespace runs to one space and
/// drops leading/trailing blank lines.
pub fn normalize_whitespace(text: &str) -> String {
    let lines: Vec<String> = text
        .lines()
        .map(|l| l.split_whitespace().collect::<Vec<_>>().join(" "))
        .collect();
    let start = lines.iter().position(|l| !l.is_empty()).unwrap_or(lines.len());
    let end = lines.iter().rposition(|l| !l.is_empty()).map_or(start, |i| i + 1);
    lines[start..end].join("\n")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunCase {
    pub argv: Vec<String>,
    pub expected_stdout: StdoutMatcher,
    pub timeout_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSpec {
    pub build_command: Vec<String>,
    pub run_cases: Vec<RunCase>,
    #[serde(default)]
    pub expected_exit_code: i32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TaskError {
    #[error("test spec needs at least one run case")]
    NoRunCases,
    #[error("build command is empty")]
    EmptyBuildCommand,
    #[error("run case {0} has an empty argv")]
    EmptyArgv(usize),
    #[error("run case {0} has a non-positive timeout")]
    NonPositiveTimeout(usize),
    #[error("source and target programming model are both `{0}`")]
    SameModel(ModelId),
    #[error("code-only evaluation requested but task `{0}` has no ground-truth build files")]
    MissingGroundTruth(String),
}

impl TestSpec {
    pub fn validate(&self) -> Result<(), TaskError> {
        if self.build_command.is_empty() {
            return Err(TaskError::EmptyBuildCommand);
        }
        if self.run_cases.is_empty() {
            return Err(TaskError::NoRunCases);
        }
        for (i, case) in self.run_cases.iter().enumerate() {
            if case.argv.is_empty() {
                return Err(TaskError::EmptyArgv(i));
            }
            if case.timeout_seconds.is_nan() || case.timeout_seconds <= 0.0 {
                return Err(TaskError::NonPositiveTimeout(i));
            }
        }
        Ok(())
    }
}

/// One benchmark case.
#[derive(Debug, Clone, PartialEq)]
pub struct TranslationTask {
    pub task_id: String,
    pub repo: RepoSnapshot,
    pub source_model: ProgrammingModel,
    pub target_model: ProgrammingModel,
    pub cli_contract: String,
    pub build_contract: String,
    pub test_spec: TestSpec,
    pub ground_truth_build_files: Option<BTreeMap<RelPath, Vec<u8>>>,
    /// Whether doc files (README etc.) are shown as prompt context.
    pub include_docs: bool,
}

impl TranslationTask {
    pub fn validate(&self) -> Result<(), TaskError> {
        if self.source_model.id == self.target_model.id {
            return Err(TaskError::SameModel(self.source_model.id.clone()));
        }
        self.test_spec.validate()
    }

    /// Files shown to the model as context.
    pub fn context_files(&self) -> impl Iterator<Item = &FileEntry> {
        let docs = self.include_docs;
        self.repo.files().filter(move |f| docs || f.kind != FileKind::Doc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Technique {
    NonAgentic,
    TopDown,
}

impl Technique {
    /// Name used for CLI flags and run-directory components.
    pub fn slug(self) -> &'static str {
        match self {
            Technique::NonAgentic => "non-agentic",
            Technique::TopDown => "top-down",
        }
    }

    pub fn from_slug(s: &str) -> Option<Technique> {
        match s {
            "non-agentic" | "non_agentic" => Some(Technique::NonAgentic),
            "top-down" | "top_down" => Some(Technique::TopDown),
            _ => None,
        }
    }
}

impl fmt::Display for Technique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleStatus {
    Complete,
    OutputLimitExceeded,
    BudgetExceeded,
    BackendError,
    /// The prompt did not fit the backend's input budget; the technique
    /// cannot run this task at all.
    ContextOverflow,
}

impl SampleStatus {
    /// Statuses meaning the technique could not carry the task through
    /// (prompt or reply too large, budget spent), as opposed to producing a
    /// wrong translation. Such samples are left out of metrics.
    pub fn excludes_from_metrics(self) -> bool {
        matches!(
            self,
            SampleStatus::ContextOverflow | SampleStatus::BudgetExceeded | SampleStatus::OutputLimitExceeded
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptPurpose {
    TranslateFile,
    InferDeps,
    SummarizeContext,
    ChunkTranslate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

/// One request/response exchange, successful or not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub request_id: String,
    pub purpose: PromptPurpose,
    #[serde(default)]
    pub target_path: Option<RelPath>,
    #[serde(default)]
    pub system_prompt: String,
    pub rendered_prompt: String,
    pub response: String,
    pub usage: Usage,
    pub finish_reason: FinishReason,
    #[serde(default)]
    pub attempts: u32,
    #[serde(default)]
    pub error: Option<String>,
}

/// One complete translation attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSample {
    pub sample_id: String,
    pub task_id: String,
    pub technique: Technique,
    /// Written to `repo/` in the run directory rather than to JSON.
    #[serde(skip)]
    pub translated_files: BTreeMap<RelPath, Vec<u8>>,
    pub token_ledger: TokenLedger,
    #[serde(skip)]
    pub transcript: Vec<PromptRecord>,
    pub status: SampleStatus,
    /// Output paths the plan required.
    #[serde(default)]
    pub planned_files: Vec<RelPath>,
    /// Files the model proposed that were not in the plan.
    #[serde(default)]
    pub extra_files: Vec<RelPath>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl GenerationSample {
    pub fn total_tokens(&self) -> u64 {
        self.token_ledger.total()
    }
}

/// Summary of renames and interface changes passed down to dependents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeSummary {
    pub path: RelPath,
    pub renamed_symbols: Vec<(String, String)>,
    pub interface_notes: String,
    pub produced_by: String,
    /// Set when the reply could not be parsed into renames.
    #[serde(default)]
    pub degraded: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Overall,
    CodeOnly,
}

impl EvalMode {
    pub fn slug(self) -> &'static str {
        match self {
            EvalMode::Overall => "overall",
            EvalMode::CodeOnly => "code_only",
        }
    }

    pub fn from_slug(s: &str) -> Option<EvalMode> {
        match s {
            "overall" => Some(EvalMode::Overall),
            "code_only" | "code-only" => Some(EvalMode::CodeOnly),
            _ => None,
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

/// Where the candidate executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Device,
    HostFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub ok: bool,
    pub log: String,
    pub seconds: f64,
    #[serde(default)]
    pub timed_out: bool,
}

impl StepResult {
    pub fn skipped(reason: &str) -> StepResult {
        StepResult { ok: false, log: reason.to_string(), seconds: 0.0, timed_out: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    BuildFail,
    RunFail,
    WrongModel,
    Timeout,
}

impl Verdict {
    /// `Pass` iff the build and run succeeded and the target model is used.
    /// A build that hit its timeout is reported as `Timeout`; a run-case
    /// timeout is a `RunFail` (the log carries the annotation).
    pub fn compose(build: &StepResult, run: &StepResult, target_model_used: bool) -> Verdict {
        if !build.ok {
            if build.timed_out {
                Verdict::Timeout
            } else {
                Verdict::BuildFail
            }
        } else if !run.ok {
            Verdict::RunFail
        } else if !target_model_used {
            Verdict::WrongModel
        } else {
            Verdict::Pass
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::BuildFail => "build_fail",
            Verdict::RunFail => "run_fail",
            Verdict::WrongModel => "wrong_model",
            Verdict::Timeout => "timeout",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub sample_id: String,
    pub task_id: String,
    pub technique: Technique,
    pub mode: EvalMode,
    pub build: StepResult,
    pub run: StepResult,
    pub target_model_used: bool,
    pub verdict: Verdict,
    pub execution: Execution,
}

impl EvalOutcome {
    pub fn built(&self) -> bool {
        self.build.ok
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    /// Build and run logs joined, as fed to the error atlas.
    pub fn combined_log(&self) -> String {
        let mut s = self.build.log.clone();
        if !self.run.log.is_empty() {
            if !s.is_empty() && !s.ends_with('\n') {
                s.push('\n');
            }
            s.push_str(&self.run.log);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RecordError {
    #[error("record for `{task}` violates c <= b <= N (c={c}, b={b}, N={n})")]
    Ordering { task: String, n: u64, c: u64, b: u64 },
    #[error("token cost must be finite and non-negative")]
    BadKappa,
}

/// Per-task sample counts: `n` generated, `c` correct, `b` buildable, and
/// `kappa` the mean tokens per generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub task_id: String,
    pub n: u64,
    pub c: u64,
    pub b: u64,
    pub kappa: f64,
}

impl MetricRecord {
    pub fn new(task_id: impl Into<String>, n: u64, c: u64, b: u64, kappa: f64) -> Result<Self, RecordError> {
        let task_id = task_id.into();
        if !(c <= b && b <= n) {
            return Err(RecordError::Ordering { task: task_id, n, c, b });
        }
        if !(kappa.is_finite() && kappa >= 0.0) {
            return Err(RecordError::BadKappa);
        }
        Ok(MetricRecord { task_id, n, c, b, kappa })
    }
}
