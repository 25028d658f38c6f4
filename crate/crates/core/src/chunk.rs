//! Splitting oversized files into chunks at top-level boundaries.
//!
//! Boundaries are found by a brace-depth scan that understands comments,
//! string and character literals and preprocessor lines. It is not a parser:
//! everything inside a `namespace { ... }` is one unit, for example.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::model::FileEntry;
use crate::path::RelPath;
use crate::tokens::Tokenizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    Function,
    TopLevelBlock,
    HardSplit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub parent: RelPath,
    pub index: usize,
    pub content: String,
    pub boundary_kind: BoundaryKind,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChunkError {
    #[error("no chunks to reassemble")]
    Empty,
    #[error("chunk index {0} is missing")]
    ReassemblyGap(usize),
    #[error("chunk index {0} appears more than once")]
    DuplicateIndex(usize),
    #[error("chunks belong to different files (`{0}` and `{1}`)")]
    MixedParents(RelPath, RelPath),
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Lex {
    Code,
    LineComment,
    BlockComment,
    Str,
    Chr,
}

/// Byte offsets (exclusive ends) at which a top-level unit finishes. Blank
/// and comment-only lines never end a unit, so they travel with the
/// declaration that follows them.
fn unit_ends(text: &str) -> Vec<usize> {
    let mut ends = Vec::new();
    let mut lex = Lex::Code;
    let mut depth: i64 = 0;
    let mut escaped = false;
    let mut line_has_code = false;
    let mut directive = false;
    let mut last_sig: Option<char> = None;
    let mut prev = '\0';
    // state before a '/' that may turn out to open a comment
    let mut before_slash = (None, false);

    let mut finish_line = |end: usize, lex: Lex, depth: i64, has_code: bool, directive: bool, last: Option<char>| {
        let closes = matches!(last, Some('}') | Some(';')) || (directive && last != Some('\\'));
        if lex != Lex::BlockComment && depth <= 0 && has_code && closes {
            ends.push(end);
        }
    };

    for (i, c) in text.char_indices() {
        if c == '\n' {
            finish_line(i + 1, lex, depth, line_has_code, directive, last_sig);
            if matches!(lex, Lex::LineComment | Lex::Str | Lex::Chr) {
                lex = Lex::Code;
            }
            // a backslash-continued directive keeps its directive status
            if !(directive && last_sig == Some('\\')) {
                directive = false;
                line_has_code = false;
            }
            last_sig = None;
            escaped = false;
            prev = c;
            continue;
        }
        match lex {
            Lex::Code => {
                if prev == '/' && c == '/' {
                    lex = Lex::LineComment;
                    (last_sig, line_has_code) = before_slash;
                } else if prev == '/' && c == '*' {
                    lex = Lex::BlockComment;
                    (last_sig, line_has_code) = before_slash;
                    prev = '\0';
                    continue;
                } else if !c.is_whitespace() {
                    if c == '/' {
                        before_slash = (last_sig, line_has_code);
                    }
                    if !line_has_code && c == '#' {
                        directive = true;
                    }
                    line_has_code = true;
                    last_sig = Some(c);
                    match c {
                        '"' => lex = Lex::Str,
                        '\'' => lex = Lex::Chr,
                        '{' if !directive => depth += 1,
                        '}' if !directive => depth -= 1,
                        _ => {}
                    }
                }
            }
            Lex::LineComment => {}
            Lex::BlockComment => {
                if prev == '*' && c == '/' {
                    lex = Lex::Code;
                    prev = '\0';
                    continue;
                }
            }
            Lex::Str | Lex::Chr => {
                let close = if lex == Lex::Str { '"' } else { '\'' };
                if escaped {
                    escaped = false;
                } else if c == '\\' {
                    escaped = true;
                } else if c == close {
                    lex = Lex::Code;
                }
                last_sig = Some(c);
            }
        }
        prev = c;
    }
    if !text.ends_with('\n') {
        finish_line(text.len(), lex, depth, line_has_code, directive, last_sig);
    }
    ends
}

/// Cuts `text` into top-level units covering it exactly. Trailing trivia
/// after the last boundary is attached to the last unit.
fn units(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    for end in unit_ends(text) {
        if end > start {
            out.push(&text[start..end]);
            start = end;
        }
    }
    if start < text.len() {
        match out.last_mut() {
            Some(last) => *last = &text[start - last.len()..],
            None => out.push(text),
        }
    }
    out
}

/// Largest char-boundary prefix of `s` whose count fits, at least one char.
fn fitting_prefix(s: &str, budget: u64, tok: &dyn Tokenizer) -> usize {
    let bounds: Vec<usize> = s.char_indices().map(|(i, _)| i).skip(1).chain(core::iter::once(s.len())).collect();
    let (mut lo, mut hi) = (0usize, bounds.len() - 1);
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if tok.count(&s[..bounds[mid]]) <= budget {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    bounds[lo]
}

/// Splits one unit that is over budget at line boundaries, and lines that
/// are over budget at character boundaries.
fn hard_split<'a>(unit: &'a str, budget: u64, tok: &dyn Tokenizer, out: &mut Vec<&'a str>) {
    let mut start = 0;
    let mut end = 0;
    for line in unit.split_inclusive('\n') {
        let next = end + line.len();
        if tok.count(&unit[start..next]) <= budget {
            end = next;
            continue;
        }
        if end > start {
            out.push(&unit[start..end]);
            start = end;
        }
        if tok.count(line) <= budget {
            end = next;
            continue;
        }
        let mut rest = line;
        while !rest.is_empty() && tok.count(rest) > budget {
            let cut = fitting_prefix(rest, budget, tok);
            out.push(&rest[..cut]);
            rest = &rest[cut..];
        }
        start = next - rest.len();
        end = next;
    }
    if end > start {
        out.push(&unit[start..end]);
    }
}

fn kind_of(piece: &str) -> BoundaryKind {
    if piece.trim_end().ends_with('}') {
        BoundaryKind::Function
    } else {
        BoundaryKind::TopLevelBlock
    }
}

/// Splits `file` into chunks of at most `budget_tokens` (a zero budget is
/// treated as one). Whole top-level units are packed greedily; a unit that
/// alone exceeds the budget is hard-split. Concatenating the chunks in index
/// order gives back the file byte for byte.
pub fn split_file(file: &FileEntry, budget_tokens: u64, tokenizer: &dyn Tokenizer) -> Vec<Chunk> {
    let budget = budget_tokens.max(1);
    let text = file.text();
    let text: &str = &text;
    let mk = |index, content: &str, boundary_kind| Chunk {
        parent: file.path.clone(),
        index,
        content: String::from(content),
        boundary_kind,
    };
    if tokenizer.count(text) <= budget {
        return alloc::vec![mk(0, text, BoundaryKind::Function)];
    }
    let mut pieces: Vec<(&str, BoundaryKind)> = Vec::new();
    let mut start = 0usize;
    let mut end = 0usize;
    for unit in units(text) {
        let next = end + unit.len();
        if tokenizer.count(&text[start..next]) <= budget {
            end = next;
            continue;
        }
        if end > start {
            let p = &text[start..end];
            pieces.push((p, kind_of(p)));
            start = end;
        }
        end = next;
        if tokenizer.count(unit) > budget {
            let mut parts = Vec::new();
            hard_split(unit, budget, tokenizer, &mut parts);
            pieces.extend(parts.into_iter().map(|p| (p, BoundaryKind::HardSplit)));
            start = next;
        }
    }
    if end > start {
        let p = &text[start..end];
        pieces.push((p, kind_of(p)));
    }
    pieces.into_iter().enumerate().map(|(i, (p, k))| mk(i, p, k)).collect()
}

/// Concatenates chunks in index order. Indices must be exactly `0..n`.
pub fn reassemble(chunks: &[Chunk]) -> Result<String, ChunkError> {
    let first = chunks.first().ok_or(ChunkError::Empty)?;
    let mut slots: Vec<Option<&Chunk>> = alloc::vec![None; chunks.len()];
    for c in chunks {
        if c.parent != first.parent {
            return Err(ChunkError::MixedParents(first.parent.clone(), c.parent.clone()));
        }
        match slots.get_mut(c.index) {
            Some(slot @ None) => *slot = Some(c),
            Some(Some(_)) => return Err(ChunkError::DuplicateIndex(c.index)),
            None => {
                let missing = slots.iter().position(Option::is_none).unwrap_or(chunks.len());
                return Err(ChunkError::ReassemblyGap(missing));
            }
        }
    }
    Ok(slots.into_iter().map(|c| c.expect("all slots filled").content.as_str()).collect())
}
