//! The two translation techniques.
//!
//! Non-agentic: one request per translatable file, each carrying the whole
//! original repository, with nothing passed between files. Top-down: build
//! a dependency graph, translate files in dependency order (splitting the
//! ones that do not fit), and after each file ask for a summary of its
//! changes to hand to the files that depend on it.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;

use repoport_core::chunk::{reassemble, split_file, Chunk};
use repoport_core::deps::{parse_dep_reply, parse_make_deps, scan_includes, translation_order, DepGraph, EdgeOrigin};
use repoport_core::extract::{extract_code_blocks, map_filename, Expected};
use repoport_core::prompt::{ChunkView, PromptBuilder, PromptError, RenderedPrompt, Templates};
use repoport_core::{
    ChangeSummary, FileEntry, FinishReason, GenerationSample, PromptPurpose, RelPath, SampleStatus, Technique,
    TranslationTask,
};
use serde::{Deserialize, Serialize};

use crate::gateway::{ChatResponse, Gateway, GatewayError, Prompt, Session};
use crate::snapshot::write_snapshot;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub context_window: u64,
    /// Share of the context window reserved for the prompt.
    pub input_fraction: f64,
    /// Lines of the original file shown with every chunk after the first.
    pub header_lines: usize,
    /// Optional `-MM` style dependency tool, e.g. `["g++", "-MM"]`, run on
    /// each source file in a scratch copy of the repository.
    pub dep_tool: Option<Vec<String>>,
    pub templates: Templates,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            context_window: 32_768,
            input_fraction: 0.5,
            header_lines: 30,
            dep_tool: None,
            templates: Templates::default(),
        }
    }
}

impl PipelineConfig {
    pub fn input_budget(&self) -> u64 {
        (self.context_window as f64 * self.input_fraction).floor() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationPlan {
    pub order: Vec<RelPath>,
    /// Number of chunks per file, for files translated in more than one piece.
    pub chunked: BTreeMap<RelPath, usize>,
    pub context_budget: u64,
    #[serde(default)]
    pub removed_edges: Vec<(RelPath, RelPath)>,
}

pub fn sample_id(task_id: &str, technique: Technique, index: usize) -> String {
    format!("{task_id}.{}.s{index:03}", technique.slug())
}

/// Tracks the worst thing that happened while producing a sample.
#[derive(Debug, Default)]
struct Trouble {
    overflow: bool,
    budget: bool,
    truncated: bool,
    backend: bool,
}

impl Trouble {
    fn status(&self) -> SampleStatus {
        if self.overflow {
            SampleStatus::ContextOverflow
        } else if self.budget {
            SampleStatus::BudgetExceeded
        } else if self.truncated {
            SampleStatus::OutputLimitExceeded
        } else if self.backend {
            SampleStatus::BackendError
        } else {
            SampleStatus::Complete
        }
    }
}

/// One file produced by a reply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Output {
    pub path: RelPath,
    pub content: String,
    /// Request that produced it.
    pub request_id: String,
}

struct Run<'a> {
    task: &'a TranslationTask,
    gateway: &'a Gateway,
    builder: PromptBuilder<'a>,
    session: Session,
    trouble: Trouble,
    warnings: Vec<String>,
    outputs: Vec<Output>,
}

impl<'a> Run<'a> {
    fn new(task: &'a TranslationTask, gateway: &'a Gateway, cfg: &'a PipelineConfig, sample_id: &str) -> Self {
        Run {
            task,
            gateway,
            builder: PromptBuilder::new(&cfg.templates, gateway.backend().tokenizer(), Some(cfg.input_budget())),
            session: Session::new(sample_id),
            trouble: Trouble::default(),
            warnings: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn mapped(&self, path: &RelPath) -> RelPath {
        map_filename(path, &self.task.source_model, &self.task.target_model)
    }

    /// Sends a prompt. `None` means the caller should move on: the failure
    /// is already recorded. Budget exhaustion sets `trouble.budget`, which
    /// callers check to stop entirely.
    fn send(&mut self, purpose: PromptPurpose, target: &RelPath, p: &RenderedPrompt) -> Option<(ChatResponse, String)> {
        let prompt = Prompt { purpose, target_path: Some(target), system: &p.system, user: &p.user };
        match self.gateway.send(&mut self.session, prompt) {
            Ok(r) => {
                let id = self.session.transcript.last().map(|r| r.request_id.clone()).unwrap_or_default();
                if r.finish_reason == FinishReason::Length {
                    self.trouble.truncated = true;
                    self.warnings.push(format!("{id}: reply for {target} hit the output limit"));
                }
                Some((r, id))
            }
            Err(GatewayError::BudgetExceeded) => {
                self.trouble.budget = true;
                None
            }
            Err(e) => {
                self.trouble.backend = true;
                self.warnings.push(format!("{target}: {e}"));
                None
            }
        }
    }

    /// Extracts files from a reply meant for `target`. Paths are mapped to
    /// target-model names; a block labelled with a path outside the plan is
    /// moved onto the target when only the directory differs.
    fn extract(&mut self, reply: &str, target: &FileEntry, request_id: &str) -> Vec<Output> {
        let mapped = self.mapped(&target.path);
        let original = target.text();
        let expected = [Expected { path: &mapped, original: Some(&original) }];
        let extraction = match extract_code_blocks(reply, Some(&expected)) {
            Ok(x) => x,
            Err(e) => {
                self.warnings.push(format!("{request_id}: {e}"));
                return Vec::new();
            }
        };
        self.warnings.extend(extraction.warnings.into_iter().map(|w| format!("{request_id}: {w}")));
        extraction
            .files
            .into_iter()
            .map(|f| {
                let mut path = self.mapped(&f.inferred_path);
                if path != mapped && !self.task.repo.contains(&path) && path.file_name() == mapped.file_name() {
                    self.warnings.push(format!("{request_id}: treating `{path}` as `{mapped}`"));
                    path = mapped.clone();
                }
                Output { path, content: f.content, request_id: request_id.to_string() }
            })
            .collect()
    }

    fn finish(self, technique: Technique, planned: Vec<RelPath>) -> GenerationSample {
        let Run { task, session, mut trouble, mut warnings, outputs, .. } = self;
        let assembled = assemble_sample(&outputs, task);
        warnings.extend(assembled.warnings);
        if !trouble.overflow && !trouble.budget {
            if assembled.produced == 0 {
                trouble.backend = true;
                warnings.push("no output files".into());
            }
            let missing: Vec<&RelPath> = planned.iter().filter(|p| !assembled.files.contains_key(*p)).collect();
            if !missing.is_empty() {
                trouble.backend = true;
                let list: Vec<&str> = missing.iter().map(|p| p.as_str()).collect();
                warnings.push(format!("missing planned outputs: {}", list.join(", ")));
            }
        }
        let planned_set: BTreeSet<&RelPath> = planned.iter().collect();
        let extra_files = outputs
            .iter()
            .map(|o| &o.path)
            .filter(|p| !planned_set.contains(p))
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        GenerationSample {
            sample_id: session.sample_id.clone(),
            task_id: task.task_id.clone(),
            technique,
            translated_files: assembled.files,
            token_ledger: session.ledger,
            transcript: session.transcript,
            status: trouble.status(),
            planned_files: planned,
            extra_files,
            warnings,
        }
    }
}

/// Result of merging per-file outputs into a sample repository.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assembled {
    pub files: BTreeMap<RelPath, Vec<u8>>,
    /// Number of files that came from replies rather than passthrough.
    pub produced: usize,
    pub warnings: Vec<String>,
}

/// Merges outputs in order (a later write to the same path wins, with a
/// warning), then copies untranslated files such as READMEs through
/// unchanged. Non-empty outputs get a trailing newline.
pub fn assemble_sample(outputs: &[Output], task: &TranslationTask) -> Assembled {
    let mut files: BTreeMap<RelPath, Vec<u8>> = BTreeMap::new();
    let mut origin: BTreeMap<&RelPath, &str> = BTreeMap::new();
    let mut warnings = Vec::new();
    for o in outputs {
        let mut bytes = o.content.clone().into_bytes();
        if !bytes.is_empty() && !bytes.ends_with(b"\n") {
            bytes.push(b'\n');
        }
        if let Some(prev) = origin.insert(&o.path, &o.request_id) {
            warnings.push(format!("`{}` from {} overrides the copy from {prev}", o.path, o.request_id));
        }
        files.insert(o.path.clone(), bytes);
    }
    let produced = files.len();
    for f in task.repo.passthrough() {
        files.entry(f.path.clone()).or_insert_with(|| f.content.clone());
    }
    Assembled { files, produced, warnings }
}

/// Parses a change-summary reply. Lines of the form `old -> new` become
/// renames; everything else is kept as notes. A reply with neither a rename
/// line nor an explicit "none" is flagged degraded and kept whole as notes.
pub fn parse_change_summary(path: &RelPath, reply: &str, produced_by: &str) -> ChangeSummary {
    let mut renames = Vec::new();
    let mut notes = Vec::new();
    for line in reply.lines() {
        let t = line.trim().trim_start_matches(['-', '*', '•']).trim();
        let pair = t.split_once("->").and_then(|(a, b)| {
            let clean = |s: &str| s.trim().trim_matches(|c| c == '`' || c == '"' || c == '\'').trim().to_string();
            let (a, b) = (clean(a), clean(b));
            let ok = |s: &str| !s.is_empty() && !s.contains(char::is_whitespace);
            (ok(&a) && ok(&b)).then_some((a, b))
        });
        match pair {
            Some(p) => renames.push(p),
            None if says_no_renames(line) => {}
            None => notes.push(line),
        }
    }
    let degraded = renames.is_empty() && !reply.lines().any(says_no_renames);
    let interface_notes = if degraded { reply.trim().to_string() } else { notes.join("\n").trim().to_string() };
    ChangeSummary {
        path: path.clone(),
        renamed_symbols: renames,
        interface_notes,
        produced_by: produced_by.to_string(),
        degraded,
    }
}

fn says_no_renames(line: &str) -> bool {
    let t = line.trim().trim_end_matches('.').to_ascii_lowercase();
    t == "none" || t.ends_with(": none") || (t.starts_with("no ") && t.contains("renam"))
}

/// Non-agentic translation of one sample. Every prompt is rendered before
/// anything is sent, so a task whose prompts do not fit costs no tokens.
pub fn run_non_agentic_sample(task: &TranslationTask, gateway: &Gateway, cfg: &PipelineConfig, sample_id: &str) -> GenerationSample {
    let mut run = Run::new(task, gateway, cfg, sample_id);
    let untranslated: BTreeSet<RelPath> = task.repo.paths().cloned().collect();
    let targets: Vec<&FileEntry> = task.repo.translatable().collect();
    let planned: Vec<RelPath> = targets.iter().map(|f| run.mapped(&f.path)).collect::<BTreeSet<_>>().into_iter().collect();
    let mut prompts = Vec::with_capacity(targets.len());
    for f in &targets {
        match run.builder.file_prompt(task, &task.repo, &f.path, &untranslated) {
            Ok(p) => prompts.push(p),
            Err(e) => {
                if matches!(e, PromptError::ContextOverflow { .. }) {
                    run.trouble.overflow = true;
                } else {
                    run.trouble.backend = true;
                }
                run.warnings.push(format!("{}: {e}", f.path));
                return run.finish(Technique::NonAgentic, planned);
            }
        }
    }
    for (f, p) in targets.iter().zip(&prompts) {
        let Some((resp, id)) = run.send(PromptPurpose::TranslateFile, &f.path, p) else {
            if run.trouble.budget {
                break;
            }
            continue;
        };
        let outs = run.extract(&resp.content, f, &id);
        run.outputs.extend(outs);
    }
    run.finish(Technique::NonAgentic, planned)
}

/// Runs `dep_tool` on each code file inside a scratch copy of the repo.
fn tool_edges(task: &TranslationTask, tool: &[String], graph: &mut DepGraph) {
    let Some((program, args)) = tool.split_first() else { return };
    let dir = match tempfile::tempdir() {
        Ok(d) => d,
        Err(e) => {
            graph.warnings.push(format!("dependency tool: {e}"));
            return;
        }
    };
    if let Err(e) = write_snapshot(dir.path(), &task.repo) {
        graph.warnings.push(format!("dependency tool: {e}"));
        return;
    }
    let prefix = format!("{}/", dir.path().display());
    for f in task.repo.files().filter(|f| f.kind.is_code()) {
        let out = Command::new(program).args(args).arg(Path::new(f.path.as_str())).current_dir(dir.path()).output();
        match out {
            Ok(o) if o.status.success() => {
                let text = String::from_utf8_lossy(&o.stdout);
                for d in parse_make_deps(&text, &task.repo, &f.path, &prefix) {
                    if graph.nodes().contains(&d) {
                        let _ = graph.add_edge(&f.path, &d, EdgeOrigin::CompilerTool);
                    }
                }
            }
            Ok(o) => graph.warnings.push(format!(
                "dependency tool failed on {}: {}",
                f.path,
                String::from_utf8_lossy(&o.stderr).lines().next().unwrap_or("")
            )),
            Err(e) => {
                graph.warnings.push(format!("dependency tool `{program}`: {e}"));
                return;
            }
        }
    }
}

/// Builds the dependency graph over the translatable files: textual include
/// scan, the optional compiler tool, and one LLM request per build file.
fn build_dep_graph(run: &mut Run<'_>, cfg: &PipelineConfig) -> Option<DepGraph> {
    let task = run.task;
    let mut graph = DepGraph::new(task.repo.translatable().map(|f| f.path.clone()));
    for p in task.repo.build_files() {
        graph.mark_build(p.clone());
    }
    for f in task.repo.translatable().filter(|f| f.kind.is_code()) {
        let (deps, warns) = scan_includes(f, &task.repo);
        graph.warnings.extend(warns);
        for d in deps {
            if graph.nodes().contains(&d) {
                let _ = graph.add_edge(&f.path, &d, EdgeOrigin::IncludeScan);
            }
        }
    }
    if let Some(tool) = &cfg.dep_tool {
        tool_edges(task, tool, &mut graph);
    }
    for f in task.repo.translatable().filter(|f| task.repo.is_build_file(&f.path)) {
        let p = match run.builder.infer_deps_prompt(task, &task.repo, f) {
            Ok(p) => p,
            Err(e) => {
                run.trouble.overflow |= matches!(e, PromptError::ContextOverflow { .. });
                run.warnings.push(format!("{}: {e}", f.path));
                return None;
            }
        };
        let Some((resp, id)) = run.send(PromptPurpose::InferDeps, &f.path, &p) else {
            if run.trouble.budget {
                return None;
            }
            continue;
        };
        match parse_dep_reply(&resp.content, &task.repo, &f.path) {
            Ok(deps) => {
                for d in deps {
                    if graph.nodes().contains(&d) {
                        let _ = graph.add_edge(&f.path, &d, EdgeOrigin::LlmInferred);
                    }
                }
            }
            Err(()) => run.warnings.push(format!("{id}: could not read a dependency list for {}", f.path)),
        }
    }
    Some(graph)
}

/// Splits `file` so that each chunk plus the prompt around it fits the
/// input budget.
fn plan_chunks(run: &Run<'_>, file: &FileEntry, summaries: &[&ChangeSummary], budget: u64, header: &str) -> Result<Vec<Chunk>, PromptError> {
    let task = run.task;
    let whole = ChunkView { text: &file.text(), index: 0, count: 1, header_context: None };
    let unbounded = PromptBuilder::new(run.builder.templates, run.builder.tokenizer, None);
    let full = unbounded.chunk_prompt(task, &task.repo, &file.path, whole, summaries)?;
    if full.estimated_tokens <= budget {
        return Ok(vec![Chunk {
            parent: file.path.clone(),
            index: 0,
            content: file.text().into_owned(),
            boundary_kind: repoport_core::chunk::BoundaryKind::TopLevelBlock,
        }]);
    }
    let empty = ChunkView { text: "", index: 1, count: 2, header_context: Some(header) };
    let overhead = unbounded.chunk_prompt(task, &task.repo, &file.path, empty, summaries)?.estimated_tokens;
    if overhead >= budget {
        return Err(PromptError::ContextOverflow { needed: overhead, budget });
    }
    Ok(split_file(file, budget - overhead, run.builder.tokenizer))
}

fn head(text: &str, lines: usize) -> String {
    let mut out: String = text.lines().take(lines).collect::<Vec<_>>().join("\n");
    if text.lines().nth(lines).is_some() {
        out.push_str("\n[... truncated ...]");
    }
    out
}

/// The summary prompt, falling back to the first lines of both versions when
/// the whole files do not fit.
fn summary_prompt(run: &Run<'_>, file: &FileEntry, translated: &str, lines: usize) -> Result<RenderedPrompt, PromptError> {
    match run.builder.summarize_prompt(run.task, file, translated) {
        Err(PromptError::ContextOverflow { .. }) => {
            let short = FileEntry { content: head(&file.text(), lines).into_bytes(), ..file.clone() };
            run.builder.summarize_prompt(run.task, &short, &head(translated, lines))
        }
        other => other,
    }
}

/// Top-down translation of one sample.
pub fn run_top_down_sample(
    task: &TranslationTask,
    gateway: &Gateway,
    cfg: &PipelineConfig,
    sample_id: &str,
) -> (GenerationSample, Option<TranslationPlan>) {
    let mut run = Run::new(task, gateway, cfg, sample_id);
    let planned: Vec<RelPath> =
        task.repo.translatable().map(|f| run.mapped(&f.path)).collect::<BTreeSet<_>>().into_iter().collect();
    let Some(graph) = build_dep_graph(&mut run, cfg) else {
        return (run.finish(Technique::TopDown, planned), None);
    };
    run.warnings.extend(graph.warnings.iter().cloned());
    let ordering = translation_order(&graph);
    run.warnings.extend(ordering.warnings.iter().cloned());
    let mut plan = TranslationPlan {
        order: ordering.order.clone(),
        chunked: BTreeMap::new(),
        context_budget: cfg.input_budget(),
        removed_edges: ordering.removed_edges.clone(),
    };
    let mut summaries: BTreeMap<RelPath, ChangeSummary> = BTreeMap::new();
    'files: for path in &ordering.order {
        let file = task.repo.get(path).expect("order only holds repository files");
        let deps: Vec<&ChangeSummary> = graph.dependencies_of(path).filter_map(|(d, _)| summaries.get(d)).collect();
        let text = file.text();
        let header: String = text.lines().take(cfg.header_lines).collect::<Vec<_>>().join("\n");
        let chunks = match plan_chunks(&run, file, &deps, cfg.input_budget(), &header) {
            Ok(c) => c,
            Err(e) => {
                run.trouble.overflow |= matches!(e, PromptError::ContextOverflow { .. });
                run.warnings.push(format!("{path}: {e}"));
                break;
            }
        };
        if chunks.len() > 1 {
            plan.chunked.insert(path.clone(), chunks.len());
        }
        debug_assert_eq!(reassemble(&chunks).as_deref().ok(), Some(&*text));
        let mapped = run.mapped(path);
        let mut pieces: Vec<String> = Vec::new();
        let mut complete = true;
        for c in &chunks {
            let view = ChunkView {
                text: &c.content,
                index: c.index,
                count: chunks.len(),
                header_context: (c.index > 0).then_some(header.as_str()),
            };
            let p = match run.builder.chunk_prompt(task, &task.repo, path, view, &deps) {
                Ok(p) => p,
                Err(e) => {
                    run.trouble.overflow |= matches!(e, PromptError::ContextOverflow { .. });
                    run.warnings.push(format!("{path}: {e}"));
                    break 'files;
                }
            };
            let purpose = if chunks.len() > 1 { PromptPurpose::ChunkTranslate } else { PromptPurpose::TranslateFile };
            let Some((resp, id)) = run.send(purpose, path, &p) else {
                if run.trouble.budget {
                    break 'files;
                }
                complete = false;
                continue;
            };
            let outs = run.extract(&resp.content, file, &id);
            let (main, others): (Vec<Output>, Vec<Output>) = outs.into_iter().partition(|o| o.path == mapped);
            match main.into_iter().last() {
                Some(o) => pieces.push(o.content),
                None => complete = false,
            }
            run.outputs.extend(others);
        }
        if !complete || pieces.is_empty() {
            run.warnings.push(format!("{path}: incomplete translation, not written"));
            continue;
        }
        let translated = pieces.join("\n");
        let last_id = run.session.transcript.last().map(|r| r.request_id.clone()).unwrap_or_default();
        run.outputs.push(Output { path: mapped, content: translated.clone(), request_id: last_id });
        let p = match summary_prompt(&run, file, &translated, cfg.header_lines) {
            Ok(p) => p,
            Err(e) => {
                run.warnings.push(format!("{path}: summary skipped: {e}"));
                continue;
            }
        };
        match run.send(PromptPurpose::SummarizeContext, path, &p) {
            Some((resp, id)) => {
                let s = parse_change_summary(path, &resp.content, &id);
                if s.degraded {
                    run.warnings.push(format!("{id}: summary for {path} has no renames; kept as notes"));
                }
                summaries.insert(path.clone(), s);
            }
            None if run.trouble.budget => break,
            None => {}
        }
    }
    (run.finish(Technique::TopDown, planned), Some(plan))
}

pub fn run_sample(
    technique: Technique,
    task: &TranslationTask,
    gateway: &Gateway,
    cfg: &PipelineConfig,
    sample_id: &str,
) -> (GenerationSample, Option<TranslationPlan>) {
    match technique {
        Technique::NonAgentic => (run_non_agentic_sample(task, gateway, cfg, sample_id), None),
        Technique::TopDown => run_top_down_sample(task, gateway, cfg, sample_id),
    }
}

pub fn run_non_agentic(task: &TranslationTask, gateway: &Gateway, cfg: &PipelineConfig, n_samples: usize) -> Vec<GenerationSample> {
    (0..n_samples)
        .map(|i| run_non_agentic_sample(task, gateway, cfg, &sample_id(&task.task_id, Technique::NonAgentic, i)))
        .collect()
}

pub fn run_top_down(task: &TranslationTask, gateway: &Gateway, cfg: &PipelineConfig, n_samples: usize) -> Vec<GenerationSample> {
    (0..n_samples)
        .map(|i| run_top_down_sample(task, gateway, cfg, &sample_id(&task.task_id, Technique::TopDown, i)).0)
        .collect()
}
