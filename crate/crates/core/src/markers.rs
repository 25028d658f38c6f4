//! Textual detection of which programming model a set of files uses.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::model::{FileKind, ProgrammingModel};
use crate::path::RelPath;

/// Whether leftover source-model markers make the check fail.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strictness {
    /// Only look for target markers.
    Lenient,
    /// Also reject files still carrying markers exclusive to the source model.
    #[default]
    Strict,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerReport {
    pub target_hits: Vec<(RelPath, String)>,
    pub leftover_source: Vec<(RelPath, String)>,
    pub used: bool,
}

/// Collapses whitespace runs to a single space and removes whitespace
/// directly after a `#`, so `#  pragma  omp target` matches `#pragma omp target`.
pub fn normalize_for_markers(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for c in text.chars() {
        if c.is_whitespace() {
            pending_space = true;
            continue;
        }
        if pending_space && !out.is_empty() && !out.ends_with('#') {
            out.push(' ');
        }
        pending_space = false;
        out.push(c);
    }
    out
}

/// Checks that some code file uses one of `target`'s markers and, under
/// [`Strictness::Strict`], that no code file keeps a marker exclusive to
/// `source` (markers the target itself also uses are exempt).
pub fn check_target_model_usage<'a>(
    files: impl IntoIterator<Item = (&'a RelPath, &'a str)>,
    target: &ProgrammingModel,
    source: Option<&ProgrammingModel>,
    strictness: Strictness,
) -> MarkerReport {
    let targets: Vec<String> = target.marker_patterns.iter().map(|m| normalize_for_markers(m)).collect();
    let leftovers: Vec<String> = match (source, strictness) {
        (Some(src), Strictness::Strict) if src.id != target.id => src
            .exclusive_markers
            .iter()
            .map(|m| normalize_for_markers(m))
            .filter(|m| !targets.iter().any(|t| t.contains(m.as_str()) || m.contains(t.as_str())))
            .collect(),
        _ => Vec::new(),
    };
    let mut report = MarkerReport::default();
    for (path, text) in files {
        if !FileKind::infer(path).is_code() {
            continue;
        }
        let norm = normalize_for_markers(text);
        for (t, raw) in targets.iter().zip(&target.marker_patterns) {
            if norm.contains(t.as_str()) {
                report.target_hits.push((path.clone(), raw.clone()));
            }
        }
        for m in &leftovers {
            if norm.contains(m.as_str()) {
                report.leftover_source.push((path.clone(), m.clone()));
            }
        }
    }
    report.used = !report.target_hits.is_empty() && report.leftover_source.is_empty();
    report
}
