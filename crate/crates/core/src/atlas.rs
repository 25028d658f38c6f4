//! Failure-log embedding, density clustering and labelling.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::EvalMode;

pub const DEFAULT_DIM: usize = 128;
pub const DEFAULT_EPS: f64 = 0.35;
pub const DEFAULT_MIN_PTS: usize = 3;
pub const NOISE: i64 = -1;

/// Maps a log to a fixed-length vector.
pub trait LogEmbedder {
    fn dim(&self) -> usize;
    fn embed(&self, log: &str) -> Vec<f64>;
}

/// Signed feature hashing of normalized tokens, L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashedEmbedder {
    pub dim: usize,
}

impl Default for HashedEmbedder {
    fn default() -> Self {
        HashedEmbedder { dim: DEFAULT_DIM }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl LogEmbedder for HashedEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, log: &str) -> Vec<f64> {
        let dim = self.dim.max(1);
        let mut v = vec![0.0f64; dim];
        for tok in log_tokens(log) {
            let h = fnv1a(tok.as_bytes());
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[(h % dim as u64) as usize] += sign;
        }
        let norm = libm::sqrt(v.iter().map(|x| x * x).sum());
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

fn is_path_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '/' | '.' | '_' | '-' | '+')
}

/// Replaces absolute paths by `PATH`, `0x...` literals by `HEX`, and drops
/// `:line` / `:line:col` suffixes.
pub fn normalize_log(log: &str) -> String {
    let chars: Vec<char> = log.chars().collect();
    let mut out = String::with_capacity(log.len());
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let at_word_start = i == 0 || !is_path_char(chars[i - 1]);
        if c == '/' && at_word_start && chars.get(i + 1).is_some_and(|&n| is_path_char(n) && n != '/') {
            let mut j = i + 1;
            while j < chars.len() && is_path_char(chars[j]) {
                j += 1;
            }
            out.push_str("PATH");
            i = j;
        } else if c == '0'
            && at_word_start
            && matches!(chars.get(i + 1), Some('x') | Some('X'))
            && chars.get(i + 2).is_some_and(|d| d.is_ascii_hexdigit())
        {
            let mut j = i + 2;
            while j < chars.len() && chars[j].is_ascii_hexdigit() {
                j += 1;
            }
            out.push_str("HEX");
            i = j;
        } else if c == ':' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()) {
            let mut j = i + 1;
            while j < chars.len() && (chars[j].is_ascii_digit() || (chars[j] == ':' && chars.get(j + 1).is_some_and(|d| d.is_ascii_digit()))) {
                j += 1;
            }
            i = j;
        } else {
            out.push(c);
            i += 1;
        }
    }
    out
}

/// Lowercased alphanumeric tokens of the normalized log; purely numeric
/// tokens are dropped.
pub fn log_tokens(log: &str) -> Vec<String> {
    normalize_log(log)
        .split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|t| !t.is_empty() && !t.chars().all(|c| c.is_ascii_digit()))
        .map(|t| t.to_lowercase())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEmbedding {
    pub sample_id: String,
    pub mode: EvalMode,
    pub vector: Vec<f64>,
    /// SHA-256 of the raw log, hex encoded.
    pub source_log_digest: String,
    /// Set for logs with no tokens; the vector is then all zeros.
    pub degenerate: bool,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn embed_log(sample_id: &str, mode: EvalMode, log: &str, embedder: &dyn LogEmbedder) -> LogEmbedding {
    let vector = embedder.embed(log);
    let degenerate = vector.iter().all(|&x| x == 0.0);
    LogEmbedding {
        sample_id: sample_id.to_string(),
        mode,
        vector,
        source_log_digest: sha256_hex(log.as_bytes()),
        degenerate,
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = libm::sqrt(a.iter().map(|x| x * x).sum());
    let nb = libm::sqrt(b.iter().map(|x| x * x).sum());
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices within `eps` (Euclidean, inclusive) of `points[i]`, including `i`.
pub fn region_query(points: &[Vec<f64>], i: usize, eps: f64) -> Vec<usize> {
    let e2 = eps * eps;
    (0..points.len()).filter(|&j| sq_dist(&points[i], &points[j]) <= e2).collect()
}

/// DBSCAN over `points` in input order. A point is core when at least
/// `min_pts` points (itself included) lie within `eps`. Returns one label per
/// point: cluster ids from 0 in discovery order, [`NOISE`] otherwise.
pub fn dbscan(points: &[Vec<f64>], eps: f64, min_pts: usize) -> Vec<i64> {
    const UNSEEN: i64 = i64::MIN;
    let mut labels = vec![UNSEEN; points.len()];
    let mut next = 0i64;
    for p in 0..points.len() {
        if labels[p] != UNSEEN {
            continue;
        }
        let nb = region_query(points, p, eps);
        if nb.len() < min_pts {
            labels[p] = NOISE;
            continue;
        }
        let id = next;
        next += 1;
        labels[p] = id;
        let mut queue: VecDeque<usize> = nb.into_iter().collect();
        while let Some(q) = queue.pop_front() {
            if labels[q] == NOISE {
                labels[q] = id;
            }
            if labels[q] != UNSEEN {
                continue;
            }
            labels[q] = id;
            let qn = region_query(points, q, eps);
            if qn.len() >= min_pts {
                queue.extend(qn);
            }
        }
    }
    labels
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleLabel {
    pub id: String,
    /// Defaults to the enclosing entry's label.
    #[serde(default)]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelEntry {
    pub label: String,
    #[serde(default)]
    pub clusters: Vec<i64>,
    #[serde(default)]
    pub samples: Vec<SampleLabel>,
}

/// Hand-edited mapping from clusters (and individual samples) to final
/// category labels.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelMap {
    #[serde(default)]
    pub labels: Vec<LabelEntry>,
    /// Labels dropped from category tables.
    #[serde(default)]
    pub filters: Vec<String>,
}

pub fn unlabeled(cluster: i64) -> String {
    format!("unlabeled-{cluster}")
}

/// Final label per sample. Cluster labels apply first, then per-sample
/// reassignments. Unmapped clusters become `unlabeled-<id>` and noise becomes
/// `noise`. References to unknown clusters or samples, and clusters given a
/// second label, produce warnings and are ignored.
pub fn apply_label_map(assignment: &BTreeMap<String, i64>, map: &LabelMap) -> (BTreeMap<String, String>, Vec<String>) {
    let mut warnings = Vec::new();
    let known: BTreeSet<i64> = assignment.values().copied().filter(|&c| c != NOISE).collect();
    let mut cluster_label: BTreeMap<i64, &str> = BTreeMap::new();
    for e in &map.labels {
        for &c in &e.clusters {
            if !known.contains(&c) {
                warnings.push(format!("label `{}` references unknown cluster {c}", e.label));
            } else if let Some(prev) = cluster_label.get(&c) {
                if *prev != e.label {
                    warnings.push(format!("cluster {c} already labelled `{prev}`; ignoring `{}`", e.label));
                }
            } else {
                cluster_label.insert(c, &e.label);
            }
        }
    }
    let mut out: BTreeMap<String, String> = assignment
        .iter()
        .map(|(s, &c)| {
            let l = match cluster_label.get(&c) {
                Some(l) => l.to_string(),
                None if c == NOISE => "noise".to_string(),
                None => unlabeled(c),
            };
            (s.clone(), l)
        })
        .collect();
    for e in &map.labels {
        for s in &e.samples {
            match out.get_mut(&s.id) {
                Some(slot) => *slot = s.label.clone().unwrap_or_else(|| e.label.clone()),
                None => warnings.push(format!("reassignment of unknown sample `{}`", s.id)),
            }
        }
    }
    (out, warnings)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Facet {
    Llm,
    Application,
    Technique,
}

impl Facet {
    pub fn parse(s: &str) -> Option<Facet> {
        match s {
            "llm" => Some(Facet::Llm),
            "application" | "app" | "task" => Some(Facet::Application),
            "technique" => Some(Facet::Technique),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Facet::Llm => "llm",
            Facet::Application => "application",
            Facet::Technique => "technique",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleFacets {
    pub llm: String,
    pub application: String,
    pub technique: String,
}

impl SampleFacets {
    fn get(&self, f: Facet) -> &str {
        match f {
            Facet::Llm => &self.llm,
            Facet::Application => &self.application,
            Facet::Technique => &self.technique,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRow {
    /// Facet values, in the order of [`CategoryTable::facets`].
    pub key: Vec<String>,
    pub label: String,
    pub count: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryTable {
    pub facets: Vec<Facet>,
    pub rows: Vec<CountRow>,
}

/// Counts samples per (facet values, label), dropping filtered labels.
/// Samples without metadata are keyed as `unknown`.
pub fn category_counts(
    labeled: &BTreeMap<String, String>,
    meta: &BTreeMap<String, SampleFacets>,
    group_by: &[Facet],
    filters: &[String],
) -> CategoryTable {
    let mut counts: BTreeMap<(Vec<String>, &str), u64> = BTreeMap::new();
    for (sample, label) in labeled {
        if filters.iter().any(|f| f == label) {
            continue;
        }
        let key = group_by
            .iter()
            .map(|&f| meta.get(sample).map_or("unknown", |m| m.get(f)).to_string())
            .collect();
        *counts.entry((key, label)).or_default() += 1;
    }
    CategoryTable {
        facets: group_by.to_vec(),
        rows: counts.into_iter().map(|((key, label), count)| CountRow { key, label: label.to_string(), count }).collect(),
    }
}
