//! Metric reports (`<run>/metrics/`) and the consolidated report
//! (`report.{json,txt}`), which may span several runs.
//!
//! Samples whose generation status keeps them out of metrics (context
//! overflow, budget exhaustion, output limit) do not count towards N. A task
//! with no countable samples is listed as excluded; a (task, mode) whose
//! toolchain probe failed is listed as untestable.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use repoport_core::atlas::Facet;
use repoport_core::metrics::{aggregate, mean_token_cost, MetricError, MetricReport, TaskMetrics};
use repoport_core::{EvalMode, EvalOutcome, MetricRecord, Technique};
use serde::{Deserialize, Serialize};

use crate::atlas_io::{categorize, load_label_map, read_atlas, split_key, write_categories, AtlasError};
use crate::eval::stored_outcomes;
use crate::runs::{write_json, RunDir, RunError};
use crate::tables::{csv_string, num, text_table};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("k = {k} exceeds the {n} evaluated samples of task `{task}` ({technique}, {mode})")]
    KTooLarge { task: String, technique: String, mode: String, k: u64, n: u64 },
    #[error("k = {k} exceeds the {n} samples per task of this run")]
    KExceedsRun { k: u64, n: u64 },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
    #[error(transparent)]
    Atlas(#[from] AtlasError),
    #[error("invalid counts: {0}")]
    Record(#[from] repoport_core::RecordError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedTask {
    pub task_id: String,
    /// Generation status counts of the excluded samples.
    pub statuses: BTreeMap<String, usize>,
}

/// Metrics for one (llm, technique, mode).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSection {
    pub llm: String,
    pub technique: Technique,
    pub mode: EvalMode,
    pub report: MetricReport,
    /// Tasks with every sample excluded from metrics.
    pub excluded_tasks: Vec<ExcludedTask>,
    pub untestable_tasks: Vec<String>,
    /// Excluded samples per task, for tasks that still have countable ones.
    pub excluded_samples: BTreeMap<String, usize>,
    /// Countable samples with no stored outcome.
    pub unevaluated_samples: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub run_id: String,
    pub ks: Vec<u64>,
    pub sections: Vec<ScoreSection>,
}

impl ScoreReport {
    pub fn is_empty(&self) -> bool {
        self.sections.iter().all(|s| s.report.per_task.is_empty())
    }

    pub fn section(&self, technique: Technique, mode: EvalMode) -> Option<&ScoreSection> {
        self.sections.iter().find(|s| s.technique == technique && s.mode == mode)
    }

    pub fn task(&self, technique: Technique, mode: EvalMode, task: &str) -> Option<&TaskMetrics> {
        self.section(technique, mode)?.report.per_task.iter().find(|t| t.task_id == task)
    }
}

fn status_name<T: Serialize>(s: &T) -> String {
    serde_json::to_value(s).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

/// Which samples' token totals enter κ.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaScope {
    /// Samples counted in metrics, failed ones included.
    #[default]
    Countable,
    /// Also samples excluded from metrics (context overflow, budget, output
    /// limit).
    All,
}

impl KappaScope {
    pub fn from_slug(s: &str) -> Option<KappaScope> {
        match s {
            "countable" => Some(KappaScope::Countable),
            "all" => Some(KappaScope::All),
            _ => None,
        }
    }
}

#[derive(Default)]
struct Bucket {
    totals: Vec<u64>,
    excluded_totals: Vec<u64>,
    excluded: BTreeMap<String, usize>,
    outcomes: BTreeMap<EvalMode, Vec<EvalOutcome>>,
    untestable: BTreeSet<EvalMode>,
}

/// Scores every technique and mode present in the run, with κ over the
/// countable samples.
pub fn score(run: &RunDir, ks: &[u64], modes: &[EvalMode]) -> Result<ScoreReport, ReportError> {
    score_with(run, ks, modes, KappaScope::Countable)
}

pub fn score_with(run: &RunDir, ks: &[u64], modes: &[EvalMode], kappa_scope: KappaScope) -> Result<ScoreReport, ReportError> {
    let info = run.info()?;
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > info.n_samples as u64) {
        return Err(ReportError::KExceedsRun { k, n: info.n_samples as u64 });
    }
    let samples = run.samples()?;
    let (outcomes, untestable) = stored_outcomes(run)?;
    let mut buckets: BTreeMap<(String, Technique, String), Bucket> = BTreeMap::new();
    let mut owner: BTreeMap<String, (String, Technique, String)> = BTreeMap::new();
    for s in &samples {
        let key = (s.meta.llm.clone(), s.meta.technique, s.meta.task_id.clone());
        let b = buckets.entry(key.clone()).or_default();
        if s.meta.status.excludes_from_metrics() {
            *b.excluded.entry(status_name(&s.meta.status)).or_default() += 1;
            b.excluded_totals.push(s.meta.total_tokens);
        } else {
            b.totals.push(s.meta.total_tokens);
            owner.insert(s.meta.sample_id.clone(), key);
        }
    }
    for o in outcomes {
        if let Some(key) = owner.get(&o.sample_id) {
            let b = buckets.get_mut(key).expect("owner bucket exists");
            b.outcomes.entry(o.mode).or_default().push(o);
        }
    }
    for (task, mode, _) in &untestable {
        for ((_, _, t), b) in buckets.iter_mut() {
            if t == task {
                b.untestable.insert(*mode);
            }
        }
    }
    let mut ks: Vec<u64> = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let mut sections = Vec::new();
    let groups: BTreeSet<(String, Technique)> = buckets.keys().map(|(l, t, _)| (l.clone(), *t)).collect();
    for (llm, technique) in groups {
        for &mode in modes {
            let mut records = Vec::new();
            let mut excluded_tasks = Vec::new();
            let mut untestable_tasks = Vec::new();
            let mut excluded_samples = BTreeMap::new();
            let mut unevaluated_samples = BTreeMap::new();
            for ((l, t, task), b) in &buckets {
                if *l != llm || *t != technique {
                    continue;
                }
                if b.totals.is_empty() {
                    excluded_tasks.push(ExcludedTask { task_id: task.clone(), statuses: b.excluded.clone() });
                    continue;
                }
                if b.untestable.contains(&mode) {
                    untestable_tasks.push(task.clone());
                    continue;
                }
                let got = b.outcomes.get(&mode).map(Vec::as_slice).unwrap_or(&[]);
                if got.is_empty() {
                    continue;
                }
                let n = got.len() as u64;
                if let Some(&k) = ks.iter().find(|&&k| k > n) {
                    return Err(ReportError::KTooLarge {
                        task: task.clone(),
                        technique: technique.slug().into(),
                        mode: mode.slug().into(),
                        k,
                        n,
                    });
                }
                let c = got.iter().filter(|o| o.passed()).count() as u64;
                let built = got.iter().filter(|o| o.built()).count() as u64;
                let spent: Vec<u64> = match kappa_scope {
                    KappaScope::Countable => b.totals.clone(),
                    KappaScope::All => b.totals.iter().chain(&b.excluded_totals).copied().collect(),
                };
                let kappa = mean_token_cost(&spent)?;
                records.push(MetricRecord::new(task.clone(), n, c, built, kappa)?);
                if b.totals.len() as u64 > n {
                    unevaluated_samples.insert(task.clone(), b.totals.len() - n as usize);
                }
                if !b.excluded.is_empty() {
                    excluded_samples.insert(task.clone(), b.excluded.values().sum());
                }
            }
            sections.push(ScoreSection {
                llm: llm.clone(),
                technique,
                mode,
                report: aggregate(&records, &ks),
                excluded_tasks,
                untestable_tasks,
                excluded_samples,
                unevaluated_samples,
            });
        }
    }
    Ok(ScoreReport { run_id: info.run_id, ks, sections })
}

fn metric_header(ks: &[u64]) -> Vec<String> {
    let mut h: Vec<String> = ["llm", "technique", "mode", "task", "n", "c", "b"].iter().map(|s| s.to_string()).collect();
    h.extend(ks.iter().map(|k| format!("pass@{k}")));
    h.extend(ks.iter().map(|k| format!("build@{k}")));
    h.push("kappa".into());
    h.push("e_kappa".into());
    h
}

fn metric_rows(r: &ScoreReport, with_aggregate: bool) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for s in &r.sections {
        let lead = [s.llm.clone(), s.technique.slug().to_string(), s.mode.slug().to_string()];
        for t in &s.report.per_task {
            let mut row: Vec<String> = lead.to_vec();
            row.extend([t.task_id.clone(), t.n.to_string(), t.c.to_string(), t.b.to_string()]);
            row.extend(r.ks.iter().map(|k| num(t.pass_at.get(k).copied())));
            row.extend(r.ks.iter().map(|k| num(t.build_at.get(k).copied())));
            row.push(num(Some(t.kappa)));
            row.push(num(t.expected_token_cost));
            rows.push(row);
        }
        if with_aggregate && !s.report.per_task.is_empty() {
            let a = &s.report.aggregate;
            let mut row: Vec<String> = lead.to_vec();
            row.extend([format!("(mean of {})", a.tasks), "".into(), "".into(), "".into()]);
            row.extend(r.ks.iter().map(|k| num(a.pass_at.get(k).copied())));
            row.extend(r.ks.iter().map(|k| num(a.build_at.get(k).copied())));
            row.push(num(a.mean_kappa));
            row.push(num(a.mean_expected_token_cost));
            rows.push(row);
        }
    }
    rows
}

pub fn score_text(r: &ScoreReport) -> String {
    let mut out = text_table(&metric_header(&r.ks), &metric_rows(r, true));
    for s in &r.sections {
        let tag = format!("{} {} {}", s.llm, s.technique.slug(), s.mode.slug());
        for e in &s.excluded_tasks {
            let st: Vec<String> = e.statuses.iter().map(|(k, v)| format!("{k} x{v}")).collect();
            out.push_str(&format!("[{tag}] excluded task {}: {}\n", e.task_id, st.join(", ")));
        }
        for t in &s.untestable_tasks {
            out.push_str(&format!("[{tag}] untestable task {t}: toolchain probe failed\n"));
        }
        if s.report.aggregate.expected_token_cost_excluded > 0 {
            out.push_str(&format!(
                "[{tag}] e_kappa mean leaves out {} task(s) with pass@1 = 0\n",
                s.report.aggregate.expected_token_cost_excluded
            ));
        }
        for (t, n) in &s.unevaluated_samples {
            out.push_str(&format!("[{tag}] {t}: {n} sample(s) not evaluated\n"));
        }
    }
    out
}

pub fn score_csv(r: &ScoreReport) -> String {
    csv_string(&metric_header(&r.ks), &metric_rows(r, false)).expect("in-memory csv")
}

fn write_text(path: &Path, body: &str) -> Result<(), ReportError> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p).map_err(|source| ReportError::Io { path: p.to_path_buf(), source })?;
    }
    fs::write(path, body).map_err(|source| ReportError::Io { path: path.to_path_buf(), source })
}

/// Writes `metrics.json`, `metrics.txt` and `metrics.csv` into `dir`.
pub fn write_score(dir: &Path, r: &ScoreReport) -> Result<(), ReportError> {
    write_json(&dir.join("metrics.json"), r)?;
    write_text(&dir.join("metrics.txt"), &score_text(r))?;
    write_text(&dir.join("metrics.csv"), &score_csv(r))
}

/// One consolidated row: a task's metrics in each mode plus its failure
/// categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run_id: String,
    pub llm: String,
    pub technique: Technique,
    pub task_id: String,
    pub application: String,
    pub metrics: BTreeMap<String, TaskMetrics>,
    pub categories: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Consolidated {
    pub run_ids: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub label_warnings: Vec<String>,
}

/// Joins scores with atlas categories per (llm, technique, task). Without an
/// atlas directory holding a clustering, categories stay empty.
pub fn consolidate(
    runs: &[(RunDir, ScoreReport)],
    atlas_dir: Option<&Path>,
    label_map: Option<&Path>,
) -> Result<Consolidated, ReportError> {
    let mut rows: BTreeMap<(String, Technique, String), ReportRow> = BTreeMap::new();
    let mut sample_row: BTreeMap<(String, String), (String, Technique, String)> = BTreeMap::new();
    for (run, scores) in runs {
        for s in run.samples()? {
            let key = (scores.run_id.clone(), s.meta.technique, s.meta.task_id.clone());
            sample_row.insert((scores.run_id.clone(), s.meta.sample_id.clone()), key.clone());
            rows.entry(key).or_insert_with(|| ReportRow {
                run_id: scores.run_id.clone(),
                llm: s.meta.llm.clone(),
                technique: s.meta.technique,
                task_id: s.meta.task_id.clone(),
                application: s.meta.application.clone(),
                metrics: BTreeMap::new(),
                categories: BTreeMap::new(),
            });
        }
        for sec in &scores.sections {
            for t in &sec.report.per_task {
                if let Some(row) = rows.get_mut(&(scores.run_id.clone(), sec.technique, t.task_id.clone())) {
                    row.metrics.insert(sec.mode.slug().to_string(), t.clone());
                }
            }
        }
    }
    let mut label_warnings = Vec::new();
    if let Some(atlas_dir) = atlas_dir {
        match read_atlas(atlas_dir) {
            Ok((assignment, facets)) => {
                let map = match label_map {
                    Some(p) => load_label_map(p)?,
                    None => Default::default(),
                };
                let cats = categorize(&assignment, &facets, &map, &[Facet::Llm, Facet::Application, Facet::Technique], &[]);
                write_categories(atlas_dir, &cats)?;
                label_warnings = cats.warnings.clone();
                for (key, label) in &cats.labeled {
                    if map.filters.contains(label) {
                        continue;
                    }
                    let (run_id, sample, _) = split_key(key);
                    if let Some(row) = sample_row.get(&(run_id.to_string(), sample.to_string())).and_then(|k| rows.get_mut(k)) {
                        *row.categories.entry(label.clone()).or_default() += 1;
                    }
                }
            }
            Err(AtlasError::NotClustered(_)) => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(Consolidated {
        run_ids: runs.iter().map(|(_, s)| s.run_id.clone()).collect(),
        rows: rows.into_values().collect(),
        label_warnings,
    })
}

pub fn consolidated_text(c: &Consolidated) -> String {
    let modes = [EvalMode::Overall, EvalMode::CodeOnly];
    let mut header: Vec<String> = ["run", "llm", "technique", "task"].iter().map(|s| s.to_string()).collect();
    for m in modes {
        header.push(format!("{} pass@1", m.slug()));
        header.push(format!("{} build@1", m.slug()));
    }
    header.push("kappa".into());
    header.push("categories".into());
    let rows: Vec<Vec<String>> = c
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![r.run_id.clone(), r.llm.clone(), r.technique.slug().to_string(), r.task_id.clone()];
            for m in modes {
                let t = r.metrics.get(m.slug());
                row.push(num(t.and_then(|t| t.pass_at.get(&1).copied())));
                row.push(num(t.and_then(|t| t.build_at.get(&1).copied())));
            }
            row.push(num(r.metrics.values().next().map(|t| t.kappa)));
            let cats: Vec<String> = r.categories.iter().map(|(l, n)| format!("{l}:{n}")).collect();
            row.push(if cats.is_empty() { "-".into() } else { cats.join(" ") });
            row
        })
        .collect();
    let mut out = text_table(&header, &rows);
    for w in &c.label_warnings {
        out.push_str(&format!("warning: {w}\n"));
    }
    out
}

/// Writes `report.json` and `report.txt` into `dir`.
pub fn write_consolidated(dir: &Path, c: &Consolidated) -> Result<(), ReportError> {
    write_json(&dir.join("report.json"), c)?;
    write_text(&dir.join("report.txt"), &consolidated_text(c))
}
