//! Helpers shared by the integration tests: fixture paths and one-call
//! translate / evaluate / score over a fixture task and mock script.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use repoport_core::tokens::Budget;
use repoport_core::{EvalMode, Technique, TranslationTask};
use repoport_harness::eval::{evaluate_run, EvalJob, EvalSummary, Probes, SandboxPolicy};
use repoport_harness::gateway::{BackendConfig, BackendKind};
use repoport_harness::manifest::load_task;
use repoport_harness::pipeline::PipelineConfig;
use repoport_harness::report::{score, ScoreReport};
use repoport_harness::runs::{translate, RunDir, TranslateJob, TranslateSummary};

pub const BOTH: [EvalMode; 2] = [EvalMode::Overall, EvalMode::CodeOnly];

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").canonicalize().expect("fixtures directory")
}

pub fn manifest(task: &str) -> PathBuf {
    fixtures().join(task).join("task.json")
}

pub fn mock(script: &str) -> BackendConfig {
    let mut b = BackendConfig::new(BackendKind::Mock { script: fixtures().join("mock").join(format!("{script}.json")) });
    b.name = Some(script.to_string());
    b.retry.base_delay_ms = 1;
    b
}

pub struct Translation {
    pub technique: Technique,
    pub n_samples: usize,
    pub context_window: Option<u64>,
    pub budget: Budget,
}

impl Default for Translation {
    fn default() -> Self {
        Translation { technique: Technique::NonAgentic, n_samples: 1, context_window: None, budget: Budget::unlimited() }
    }
}

pub fn run_translation(root: &Path, task: &str, script: &str, t: &Translation) -> (RunDir, TranslateSummary) {
    let mut backend = mock(script);
    if let Some(w) = t.context_window {
        backend.context_window = w;
    }
    let run = RunDir::new(root);
    let job = TranslateJob {
        run: run.clone(),
        run_id: script.to_string(),
        tasks: vec![load_task(&manifest(task)).expect("fixture manifest")],
        techniques: vec![t.technique],
        pipeline: PipelineConfig { context_window: backend.context_window, ..PipelineConfig::default() },
        backend,
        n_samples: t.n_samples,
        parallelism: 1,
        budget: t.budget,
    };
    let summary = translate(&job).expect("translate");
    (run, summary)
}

pub fn run_evaluation(run: &RunDir, modes: &[EvalMode]) -> EvalSummary {
    let info = run.info().expect("run.json");
    let tasks: BTreeMap<String, TranslationTask> = info
        .tasks
        .iter()
        .map(|t| {
            let l = load_task(&t.manifest).expect("manifest");
            (l.task.task_id.clone(), l.task)
        })
        .collect();
    let probes = Probes::new(BTreeMap::new());
    let job = EvalJob {
        run,
        tasks: &tasks,
        modes: modes.to_vec(),
        policy: SandboxPolicy::default(),
        probes: &probes,
        parallelism: 2,
        force: false,
    };
    evaluate_run(&job).expect("evaluate")
}

pub fn run_score(run: &RunDir, ks: &[u64], modes: &[EvalMode]) -> ScoreReport {
    score(run, ks, modes).expect("score")
}

/// Whether the host has a C++ compiler with OpenMP.
pub fn openmp_available() -> bool {
    Probes::new(BTreeMap::new()).probe("openmp", &SandboxPolicy::default()).ok
}
