//! Translate, evaluate and score each fixture with its scripted mock.

mod common;

use common::*;
use repoport_core::{EvalMode, SampleStatus, Technique, Verdict};
use repoport_harness::eval::stored_outcomes;

fn verdicts(task: &str, script: &str, technique: Technique) -> Vec<(EvalMode, Verdict)> {
    let d = tempfile::tempdir().unwrap();
    let (run, s) = run_translation(d.path(), task, script, &Translation { technique, ..Translation::default() });
    assert_eq!(s.completed(), 1, "{script} {technique:?}: {s:?}");
    run_evaluation(&run, &BOTH);
    let (outcomes, untestable) = stored_outcomes(&run).unwrap();
    assert!(untestable.is_empty(), "{untestable:?}");
    let mut v: Vec<(EvalMode, Verdict)> = outcomes.iter().map(|o| (o.mode, o.verdict)).collect();
    v.sort_by_key(|(m, _)| m.slug());
    v
}

fn expect(task: &str, script: &str, overall: Verdict, code_only: Verdict) {
    if !openmp_available() {
        eprintln!("skipping {script}: no OpenMP compiler");
        return;
    }
    for technique in [Technique::NonAgentic, Technique::TopDown] {
        let got = verdicts(task, script, technique);
        assert_eq!(got, vec![(EvalMode::CodeOnly, code_only), (EvalMode::Overall, overall)], "{script} {technique:?}");
    }
}

#[test]
fn nanoxor_correct_passes() {
    expect("nanoxor", "nanoxor-correct", Verdict::Pass, Verdict::Pass);
}

#[test]
fn nanoxor_flawed_fails_to_build() {
    expect("nanoxor", "nanoxor-flawed", Verdict::BuildFail, Verdict::BuildFail);
}

#[test]
fn broken_makefile_only_fails_overall() {
    expect("nanoxor", "nanoxor-broken-makefile", Verdict::BuildFail, Verdict::Pass);
}

#[test]
fn wrong_output_is_a_run_failure() {
    expect("nanoxor", "nanoxor-wrong-output", Verdict::RunFail, Verdict::RunFail);
}

#[test]
fn header_only_and_linked_kernels_pass() {
    expect("microxorh", "microxorh-correct", Verdict::Pass, Verdict::Pass);
    expect("microxor", "microxor-correct", Verdict::Pass, Verdict::Pass);
}

#[test]
fn cuda_source_translates_to_offload() {
    expect("nanoxor-cuda", "nanoxor-cuda-correct", Verdict::Pass, Verdict::Pass);
}

#[test]
fn kokkos_without_toolchain_is_untestable() {
    let d = tempfile::tempdir().unwrap();
    let (run, s) = run_translation(d.path(), "nanoxor-kokkos", "nanoxor-kokkos-correct", &Translation::default());
    assert_eq!(s.completed(), 1);
    let sample = &run.samples().unwrap()[0];
    let files = sample.load().unwrap().translated_files;
    let names: Vec<&str> = files.keys().map(|p| p.as_str()).collect();
    assert_eq!(names, vec!["CMakeLists.txt", "README.md", "nanoXOR.cpp"]);
    let summary = run_evaluation(&run, &BOTH);
    let (outcomes, untestable) = stored_outcomes(&run).unwrap();
    if untestable.is_empty() {
        assert!(outcomes.iter().all(|o| o.verdict == Verdict::Pass), "{outcomes:?}");
    } else {
        assert_eq!(summary.untestable, 2);
        assert!(outcomes.is_empty());
        let report = run_score(&run, &[1], &BOTH);
        assert!(report.sections.iter().all(|s| s.untestable_tasks == vec!["nanoxor-kokkos".to_string()]));
    }
}

#[test]
fn tiny_context_window_overflows_and_is_excluded() {
    let d = tempfile::tempdir().unwrap();
    let t = Translation { context_window: Some(64), ..Translation::default() };
    let (run, s) = run_translation(d.path(), "nanoxor", "nanoxor-correct", &t);
    assert_eq!(s.completed(), 0);
    assert_eq!(s.dispatched, 0);
    let meta = run.samples().unwrap()[0].load().unwrap();
    assert_eq!(meta.status, SampleStatus::ContextOverflow);
    let e = run_evaluation(&run, &BOTH);
    assert_eq!((e.evaluated, e.excluded), (0, 1));
    let report = run_score(&run, &[1], &BOTH);
    for section in &report.sections {
        assert!(section.report.per_task.is_empty());
        assert_eq!(section.excluded_tasks[0].task_id, "nanoxor");
    }
}
