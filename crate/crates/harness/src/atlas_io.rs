//! Error atlas files under `<run>/atlas/`.
//!
//! ```text
//! atlas/embeddings.jsonl           one LogEmbedding per line
//! atlas/assignments.json           key -> cluster id (-1 = noise)
//! atlas/facets.json                key -> llm, application, technique
//! atlas/clusters/<id>/members.txt  every member key
//! atlas/clusters/<id>/*.log        up to three representative logs
//! atlas/label_map.template.json    starting point for the manual pass
//! atlas/labels.json                final label per key (after `report` or `cluster --labels`)
//! atlas/categories.{csv,txt}       category counts
//! ```
//!
//! Keys have the form `<run_id>/<sample_id>:<mode>`, so one atlas can span
//! several runs (one per LLM).

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use repoport_core::atlas::{
    apply_label_map, category_counts, dbscan, embed_log, unlabeled, CategoryTable, Facet, HashedEmbedder, LabelEntry,
    LabelMap, LogEmbedding, SampleFacets, DEFAULT_DIM, DEFAULT_EPS, DEFAULT_MIN_PTS, NOISE,
};
use repoport_core::{EvalMode, EvalOutcome};
use serde::{Deserialize, Serialize};

use crate::eval::stored_outcomes;
use crate::runs::{read_json, write_json, RunDir, RunError};
use crate::tables::{csv_string, text_table};

pub const REPRESENTATIVES: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum AtlasError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}:{column}: {message}")]
    LabelMap { path: PathBuf, line: usize, column: usize, message: String },
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
    #[error("no clustering found under {0}; run `repoport cluster` first")]
    NotClustered(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> AtlasError + '_ {
    move |source| AtlasError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub eps: f64,
    pub min_pts: usize,
    pub dim: usize,
    /// Leave passing outcomes out of the atlas.
    pub failures_only: bool,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig { eps: DEFAULT_EPS, min_pts: DEFAULT_MIN_PTS, dim: DEFAULT_DIM, failures_only: false }
    }
}

/// One log to cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct AtlasInput {
    pub key: String,
    pub log: String,
    pub facets: SampleFacets,
}

pub fn outcome_key(run_id: &str, o: &EvalOutcome) -> String {
    format!("{run_id}/{}:{}", o.sample_id, o.mode.slug())
}

/// Splits a key into run id, sample id and mode.
pub fn split_key(key: &str) -> (&str, &str, Option<EvalMode>) {
    let (rest, mode) = key.rsplit_once(':').map_or((key, None), |(r, m)| (r, EvalMode::from_slug(m)));
    let (run, sample) = rest.split_once('/').unwrap_or(("", rest));
    (run, sample, mode)
}

/// Logs and facets for every stored outcome of a run.
pub fn collect_inputs(run: &RunDir, failures_only: bool) -> Result<Vec<AtlasInput>, AtlasError> {
    let facets: BTreeMap<String, SampleFacets> = run
        .samples()?
        .into_iter()
        .map(|s| {
            let f = SampleFacets {
                llm: s.meta.llm.clone(),
                application: s.meta.application.clone(),
                technique: s.meta.technique.slug().to_string(),
            };
            (s.meta.sample_id, f)
        })
        .collect();
    let run_id = run.info()?.run_id;
    let (outcomes, _) = stored_outcomes(run)?;
    Ok(outcomes
        .iter()
        .filter(|o| !(failures_only && o.passed()))
        .map(|o| AtlasInput { key: outcome_key(&run_id, o), log: o.combined_log(), facets: facets.get(&o.sample_id).cloned().unwrap_or_default() })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atlas {
    pub embeddings: Vec<LogEmbedding>,
    pub assignment: BTreeMap<String, i64>,
    pub facets: BTreeMap<String, SampleFacets>,
}

impl Atlas {
    pub fn clusters(&self) -> BTreeMap<i64, Vec<&str>> {
        let mut m: BTreeMap<i64, Vec<&str>> = BTreeMap::new();
        for (k, &c) in &self.assignment {
            m.entry(c).or_default().push(k);
        }
        m
    }

    pub fn cluster_count(&self) -> usize {
        self.clusters().keys().filter(|&&c| c != NOISE).count()
    }
}

/// Embeds every input (in key order) and clusters the vectors.
pub fn build_atlas(mut inputs: Vec<AtlasInput>, cfg: &ClusterConfig) -> Atlas {
    inputs.sort_by(|a, b| a.key.cmp(&b.key));
    let embedder = HashedEmbedder { dim: cfg.dim };
    let embeddings: Vec<LogEmbedding> = inputs
        .iter()
        .map(|i| {
            let (_, sample, mode) = split_key(&i.key);
            embed_log(sample, mode.unwrap_or(EvalMode::Overall), &i.log, &embedder)
        })
        .collect();
    let points: Vec<Vec<f64>> = embeddings.iter().map(|e| e.vector.clone()).collect();
    let labels = dbscan(&points, cfg.eps, cfg.min_pts);
    Atlas {
        assignment: inputs.iter().zip(&labels).map(|(i, &l)| (i.key.clone(), l)).collect(),
        facets: inputs.iter().map(|i| (i.key.clone(), i.facets.clone())).collect(),
        embeddings,
    }
}

fn cluster_dir_name(c: i64) -> String {
    if c == NOISE {
        "noise".to_string()
    } else {
        c.to_string()
    }
}

fn file_safe(key: &str) -> String {
    key.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Writes the atlas and its review dump. `logs` supplies the raw log per key.
pub fn write_atlas(dir: &Path, atlas: &Atlas, logs: &BTreeMap<String, String>) -> Result<(), AtlasError> {
    let clusters_dir = dir.join("clusters");
    if clusters_dir.exists() {
        fs::remove_dir_all(&clusters_dir).map_err(io_err(&clusters_dir))?;
    }
    fs::create_dir_all(&clusters_dir).map_err(io_err(&clusters_dir))?;
    let mut lines = String::new();
    for e in &atlas.embeddings {
        lines.push_str(&serde_json::to_string(e).expect("serializable"));
        lines.push('\n');
    }
    let path = dir.join("embeddings.jsonl");
    fs::write(&path, lines).map_err(io_err(&path))?;
    write_json(&dir.join("assignments.json"), &atlas.assignment)?;
    write_json(&dir.join("facets.json"), &atlas.facets)?;
    for (c, members) in atlas.clusters() {
        let cdir = clusters_dir.join(cluster_dir_name(c));
        fs::create_dir_all(&cdir).map_err(io_err(&cdir))?;
        let path = cdir.join("members.txt");
        fs::write(&path, members.join("\n") + "\n").map_err(io_err(&path))?;
        for key in members.iter().take(REPRESENTATIVES) {
            let path = cdir.join(format!("{}.log", file_safe(key)));
            fs::write(&path, logs.get(*key).map(String::as_str).unwrap_or("")).map_err(io_err(&path))?;
        }
    }
    let template = LabelMap {
        labels: atlas
            .clusters()
            .keys()
            .filter(|&&c| c != NOISE)
            .map(|&c| LabelEntry { label: unlabeled(c), clusters: vec![c], samples: vec![] })
            .collect(),
        filters: vec![],
    };
    write_json(&dir.join("label_map.template.json"), &template)?;
    Ok(())
}

/// Cluster assignment and facets, both keyed by atlas key.
pub type StoredAtlas = (BTreeMap<String, i64>, BTreeMap<String, SampleFacets>);

pub fn read_atlas(dir: &Path) -> Result<StoredAtlas, AtlasError> {
    let a = dir.join("assignments.json");
    if !a.is_file() {
        return Err(AtlasError::NotClustered(dir.to_path_buf()));
    }
    Ok((read_json(&a)?, read_json(&dir.join("facets.json"))?))
}

/// Parses a label map, reporting the line and column of any problem.
pub fn parse_label_map(text: &str, path: &Path) -> Result<LabelMap, AtlasError> {
    serde_json::from_str(text).map_err(|e| {
        let msg = e.to_string();
        let message = match msg.rfind(" at line ") {
            Some(i) => msg[..i].to_string(),
            None => msg,
        };
        AtlasError::LabelMap { path: path.to_path_buf(), line: e.line(), column: e.column(), message }
    })
}

pub fn load_label_map(path: &Path) -> Result<LabelMap, AtlasError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_label_map(&text, path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Categories {
    pub labeled: BTreeMap<String, String>,
    pub table: CategoryTable,
    pub warnings: Vec<String>,
}

pub fn categorize(
    assignment: &BTreeMap<String, i64>,
    facets: &BTreeMap<String, SampleFacets>,
    map: &LabelMap,
    group_by: &[Facet],
    extra_filters: &[String],
) -> Categories {
    let (labeled, warnings) = apply_label_map(assignment, map);
    let mut filters = map.filters.clone();
    filters.extend(extra_filters.iter().cloned());
    let table = category_counts(&labeled, facets, group_by, &filters);
    Categories { labeled, table, warnings }
}

fn table_rows(t: &CategoryTable) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header: Vec<String> = t.facets.iter().map(|f| f.name().to_string()).collect();
    header.push("label".into());
    header.push("count".into());
    let rows = t
        .rows
        .iter()
        .map(|r| {
            let mut row = r.key.clone();
            row.push(r.label.clone());
            row.push(r.count.to_string());
            row
        })
        .collect();
    (header, rows)
}

pub fn category_text(t: &CategoryTable) -> String {
    let (h, r) = table_rows(t);
    text_table(&h, &r)
}

pub fn category_csv(t: &CategoryTable) -> String {
    let (h, r) = table_rows(t);
    csv_string(&h, &r).expect("in-memory csv")
}

pub fn write_categories(dir: &Path, c: &Categories) -> Result<(), AtlasError> {
    write_json(&dir.join("labels.json"), &c.labeled)?;
    for (name, body) in [("categories.csv", category_csv(&c.table)), ("categories.txt", category_text(&c.table))] {
        let path = dir.join(name);
        fs::write(&path, body).map_err(io_err(&path))?;
    }
    Ok(())
}
