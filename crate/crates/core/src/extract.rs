//! Parsing model replies back into files.
//!
//! A reply may hold one or more fenced blocks. A block is labelled by a path
//! in its info string (```` ```cpp src/main.cpp ````) or by a path on the
//! nearest non-empty line above it. Unlabelled blocks are bound to expected
//! paths: directly when exactly one block and one path are left, otherwise
//! by overlap between the symbols the block declares and those declared in
//! each expected file's original text.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::model::{BuildSystem, FileKind, ModelId, ProgrammingModel};
use crate::path::RelPath;
use crate::prompt::fence_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    ExplicitHeader,
    SingleBlockDefault,
    Heuristic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedFile {
    pub inferred_path: RelPath,
    pub content: String,
    pub confidence: Confidence,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExtractError {
    #[error("reply contains no fenced code block")]
    ExtractionFailed,
    #[error("reply has {0} unlabelled code blocks and nothing to bind them to")]
    AmbiguousOutput(usize),
}

/// A path the caller expects in the reply, with the original text used for
/// symbol-overlap binding when available.
#[derive(Debug, Clone, Copy)]
pub struct Expected<'a> {
    pub path: &'a RelPath,
    pub original: Option<&'a str>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Extraction {
    pub files: Vec<ExtractedFile>,
    pub warnings: Vec<String>,
}

#[derive(Debug)]
struct Block {
    label: Option<RelPath>,
    content: String,
    closed: bool,
}

fn fence_len(line: &str) -> usize {
    line.trim_start().chars().take_while(|&c| c == '`').count()
}

fn is_bare_fence(line: &str, min: usize) -> bool {
    let t = line.trim();
    !t.is_empty() && t.chars().all(|c| c == '`') && t.len() >= min
}

const BUILD_NAMES: [&str; 4] = ["Makefile", "makefile", "GNUmakefile", "CMakeLists.txt"];

fn looks_like_path(token: &str) -> bool {
    if token.is_empty() || token.len() > 200 || token.contains(char::is_whitespace) {
        return false;
    }
    if BUILD_NAMES.contains(&token.rsplit('/').next().unwrap_or(token)) {
        return true;
    }
    let Ok(p) = RelPath::new(token) else { return false };
    match p.extension() {
        Some(ext) => {
            ext.chars().all(|c| c.is_ascii_alphanumeric() || c == '+')
                && (FileKind::infer(&p) != FileKind::Other || matches!(ext, "sh" | "py" | "json" | "yaml" | "yml" | "toml" | "in"))
        }
        None => false,
    }
}

fn clean_token(tok: &str) -> &str {
    let tok = match tok.find('=') {
        Some(i) if tok[..i].chars().all(|c| c.is_ascii_alphabetic()) => &tok[i + 1..],
        _ => tok,
    };
    tok.trim_matches(|c: char| matches!(c, '`' | '"' | '\'' | '*' | '_' | ':' | ',' | '(' | ')' | '[' | ']'))
}

fn label_from_info(info: &str, expected: &BTreeSet<&str>) -> Option<RelPath> {
    for raw in info.split_whitespace() {
        for part in raw.split(':') {
            let tok = clean_token(part);
            // bare words such as `makefile` are language tags here
            let pathy = tok.contains(['.', '/']) && looks_like_path(tok);
            if expected.contains(tok) || pathy {
                if let Ok(p) = RelPath::new(tok) {
                    return Some(p);
                }
            }
        }
    }
    None
}

fn label_from_line(line: &str, expected: &BTreeSet<&str>) -> Option<RelPath> {
    let t = line.trim().trim_start_matches(['#', '>', '-', '*', ' ']).trim();
    let t = t.trim_end_matches(':').trim();
    let whole = clean_token(t);
    if expected.contains(whole) || looks_like_path(whole) {
        return RelPath::new(whole).ok();
    }
    let words: Vec<&str> = t.split_whitespace().collect();
    if words.len() > 8 {
        return None;
    }
    let hits: Vec<&str> = words.iter().map(|w| clean_token(w)).filter(|w| expected.contains(w) || looks_like_path(w)).collect();
    match hits.as_slice() {
        [one] => RelPath::new(one).ok(),
        _ => None,
    }
}

fn parse_blocks(response: &str, expected: &BTreeSet<&str>) -> Vec<Block> {
    let lines: Vec<&str> = response.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l)).collect();
    let mut blocks = Vec::new();
    let mut last_text: Option<&str> = None;
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i];
        let n = fence_len(line);
        if n < 3 {
            if !line.trim().is_empty() {
                last_text = Some(line);
            }
            i += 1;
            continue;
        }
        let info = line.trim_start()[n..].trim();
        let label = label_from_info(info, expected).or_else(|| last_text.and_then(|l| label_from_line(l, expected)));
        let mut body: Vec<&str> = Vec::new();
        let mut nested = 0usize;
        let mut closed = false;
        i += 1;
        while i < lines.len() {
            let l = lines[i];
            i += 1;
            if is_bare_fence(l, n) {
                if nested == 0 {
                    closed = true;
                    break;
                }
                nested -= 1;
            } else if fence_len(l) >= n && !l.trim_start()[fence_len(l)..].trim().is_empty() {
                nested += 1;
            }
            body.push(l);
        }
        blocks.push(Block { label, content: body.join("\n"), closed });
        last_text = None;
    }
    blocks
}

/// Identifiers a C/C++/CUDA or Makefile text declares at top level.
pub fn declared_symbols(text: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut depth: i32 = 0;
    for line in text.lines() {
        let trimmed = line.trim();
        if depth == 0 {
            if let Some(rest) = trimmed.strip_prefix("#define") {
                if let Some(name) = rest.split(|c: char| !(c.is_alphanumeric() || c == '_')).find(|s| !s.is_empty()) {
                    out.insert(name.to_string());
                }
            }
            for kw in ["struct ", "class ", "enum ", "typedef ", "using "] {
                if let Some(pos) = trimmed.find(kw) {
                    if let Some(name) = trimmed[pos + kw.len()..].split(|c: char| !(c.is_alphanumeric() || c == '_')).find(|s| !s.is_empty()) {
                        out.insert(name.to_string());
                    }
                }
            }
            if let Some(paren) = trimmed.find('(') {
                let head = &trimmed[..paren];
                if let Some(name) = head.rsplit(|c: char| !(c.is_alphanumeric() || c == '_' || c == ':')).next() {
                    let name = name.rsplit("::").next().unwrap_or(name);
                    if !name.is_empty() && !matches!(name, "if" | "for" | "while" | "switch" | "return" | "sizeof") {
                        out.insert(name.to_string());
                    }
                }
            }
            // make targets
            if !line.starts_with([' ', '\t']) {
                if let Some(colon) = trimmed.find(':') {
                    let target = &trimmed[..colon];
                    if !target.is_empty() && !target.contains(char::is_whitespace) && !trimmed[colon..].starts_with("::") {
                        out.insert(target.to_string());
                    }
                }
            }
        }
        for c in line.chars() {
            match c {
                '{' => depth += 1,
                '}' => depth = (depth - 1).max(0),
                _ => {}
            }
        }
    }
    out
}

fn looks_like_makefile(text: &str) -> bool {
    text.lines().any(|l| l.starts_with('\t')) && text.lines().any(|l| !l.starts_with([' ', '\t', '#']) && l.contains(':'))
}

fn binding_score(block: &str, exp: &Expected<'_>) -> usize {
    let mut score = 0;
    if let Some(orig) = exp.original {
        let a = declared_symbols(block);
        let b = declared_symbols(orig);
        score += a.intersection(&b).count() * 2;
    }
    let kind = FileKind::infer(exp.path);
    if kind == FileKind::Build && (looks_like_makefile(block) || block.contains("cmake_minimum_required")) {
        score += 3;
    }
    if kind == FileKind::Header && (block.contains("#pragma once") || block.contains("#ifndef")) {
        score += 1;
    }
    if kind == FileKind::Source && block.contains("int main") && exp.original.is_some_and(|o| o.contains("int main")) {
        score += 2;
    }
    score
}

/// Parses a reply into files. See the module docs for the binding rules.
pub fn extract_code_blocks(response: &str, expected: Option<&[Expected<'_>]>) -> Result<Extraction, ExtractError> {
    let exp_names: BTreeSet<&str> = expected.unwrap_or(&[]).iter().map(|e| e.path.as_str()).collect();
    let blocks = parse_blocks(response, &exp_names);
    if blocks.is_empty() {
        return Err(ExtractError::ExtractionFailed);
    }
    let mut warnings = Vec::new();
    if blocks.iter().any(|b| !b.closed) {
        warnings.push("reply ends inside an unterminated code block".to_string());
    }
    let mut bound: BTreeMap<usize, (RelPath, Confidence)> = BTreeMap::new();
    for (i, b) in blocks.iter().enumerate() {
        if let Some(l) = &b.label {
            bound.insert(i, (l.clone(), Confidence::ExplicitHeader));
        }
    }
    let unlabelled: Vec<usize> = (0..blocks.len()).filter(|i| !bound.contains_key(i)).collect();
    if !unlabelled.is_empty() {
        match expected {
            None => {
                if bound.is_empty() {
                    return Err(ExtractError::AmbiguousOutput(unlabelled.len()));
                }
            }
            Some(exp) => {
                let taken: BTreeSet<&RelPath> = bound.values().map(|(p, _)| p).collect();
                let open: Vec<&Expected<'_>> = exp.iter().filter(|e| !taken.contains(e.path)).collect();
                if unlabelled.len() == 1 && open.len() == 1 {
                    bound.insert(unlabelled[0], (open[0].path.clone(), Confidence::SingleBlockDefault));
                } else {
                    let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
                    for (bi, &blk) in unlabelled.iter().enumerate() {
                        for (ei, e) in open.iter().enumerate() {
                            let s = binding_score(&blocks[blk].content, e);
                            if s > 0 {
                                pairs.push((s, bi, ei));
                            }
                        }
                    }
                    pairs.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
                    let mut used_b = BTreeSet::new();
                    let mut used_e = BTreeSet::new();
                    for (_, bi, ei) in pairs {
                        if used_b.contains(&bi) || used_e.contains(&ei) {
                            continue;
                        }
                        used_b.insert(bi);
                        used_e.insert(ei);
                        bound.insert(unlabelled[bi], (open[ei].path.clone(), Confidence::Heuristic));
                    }
                    let rest_b: Vec<usize> = (0..unlabelled.len()).filter(|b| !used_b.contains(b)).collect();
                    let rest_e: Vec<usize> = (0..open.len()).filter(|e| !used_e.contains(e)).collect();
                    if !rest_b.is_empty() && rest_b.len() == rest_e.len() {
                        for (bi, ei) in rest_b.into_iter().zip(rest_e) {
                            bound.insert(unlabelled[bi], (open[ei].path.clone(), Confidence::Heuristic));
                        }
                    }
                }
            }
        }
    }
    if bound.is_empty() {
        return Err(ExtractError::AmbiguousOutput(blocks.len()));
    }
    let mut files: Vec<ExtractedFile> = Vec::new();
    for (i, b) in blocks.into_iter().enumerate() {
        let Some((path, confidence)) = bound.remove(&i) else {
            warnings.push(format!("dropped unlabelled code block #{}", i + 1));
            continue;
        };
        if let Some(prev) = files.iter_mut().find(|f| f.inferred_path == path) {
            warnings.push(format!("reply contains `{path}` more than once; keeping the last block"));
            prev.content = b.content;
            prev.confidence = confidence;
        } else {
            files.push(ExtractedFile { inferred_path: path, content: b.content, confidence });
        }
    }
    Ok(Extraction { files, warnings })
}

/// Renders files as a reply with one labelled fence per file. Inverse of
/// [`extract_code_blocks`] given the same paths as `expected`.
pub fn render_labeled_response(files: &[(RelPath, String)]) -> String {
    let mut out = String::new();
    for (path, content) in files {
        let fence = fence_for(content);
        out.push_str(&format!("{path}\n{fence}\n{content}\n{fence}\n\n"));
    }
    out
}

/// Output file name for `path` when translating `source` → `target`:
/// `.cu` → `.cpp` and `.cuh` → `.hpp` when leaving CUDA, and Makefiles
/// become `CMakeLists.txt` for targets built with CMake.
pub fn map_filename(path: &RelPath, source: &ProgrammingModel, target: &ProgrammingModel) -> RelPath {
    if source.id == ModelId::Cuda && target.id != ModelId::Cuda {
        match path.extension() {
            Some("cu") => return path.with_file_name(&format!("{}.cpp", path.file_stem())),
            Some("cuh") => return path.with_file_name(&format!("{}.hpp", path.file_stem())),
            _ => {}
        }
    }
    if matches!(path.file_name(), "Makefile" | "makefile" | "GNUmakefile")
        && target.build_system == BuildSystem::Cmake
        && source.build_system != BuildSystem::Cmake
    {
        return path.with_file_name(BuildSystem::Cmake.primary_file());
    }
    path.clone()
}
