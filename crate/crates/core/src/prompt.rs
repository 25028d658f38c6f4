//! Prompt construction for both translation techniques.
//!
//! Templates are plain text with `{placeholder}` slots. The defaults are
//! compiled in from `templates/`; callers can load edited copies with
//! [`Templates::with_override`].

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::model::{ChangeSummary, FileEntry, RepoSnapshot, TranslationTask};
use crate::path::RelPath;
use crate::tokens::Tokenizer;
use crate::tree::render_file_tree;

/// Names of the template files, in the order [`Templates`] stores them.
pub const TEMPLATE_NAMES: [&str; 7] = [
    "system.txt",
    "file_prompt.txt",
    "main_addendum.txt",
    "build_addendum.txt",
    "topdown_translate.txt",
    "summarize.txt",
    "infer_deps.txt",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    pub system: String,
    pub file_prompt: String,
    pub main_addendum: String,
    pub build_addendum: String,
    pub topdown_translate: String,
    pub summarize: String,
    pub infer_deps: String,
}

impl Default for Templates {
    fn default() -> Self {
        Templates {
            system: include_str!("../templates/system.txt").into(),
            file_prompt: include_str!("../templates/file_prompt.txt").into(),
            main_addendum: include_str!("../templates/main_addendum.txt").into(),
            build_addendum: include_str!("../templates/build_addendum.txt").into(),
            topdown_translate: include_str!("../templates/topdown_translate.txt").into(),
            summarize: include_str!("../templates/summarize.txt").into(),
            infer_deps: include_str!("../templates/infer_deps.txt").into(),
        }
    }
}

impl Templates {
    /// Replaces the template called `name` (one of [`TEMPLATE_NAMES`]).
    /// Returns false for unknown names.
    pub fn with_override(&mut self, name: &str, text: &str) -> bool {
        let text = text.strip_suffix('\n').unwrap_or(text).to_string();
        let slot = match name {
            "system.txt" => &mut self.system,
            "file_prompt.txt" => &mut self.file_prompt,
            "main_addendum.txt" => &mut self.main_addendum,
            "build_addendum.txt" => &mut self.build_addendum,
            "topdown_translate.txt" => &mut self.topdown_translate,
            "summarize.txt" => &mut self.summarize,
            "infer_deps.txt" => &mut self.infer_deps,
            _ => return false,
        };
        *slot = text;
        true
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &str)> {
        TEMPLATE_NAMES.into_iter().zip([
            self.system.as_str(),
            self.file_prompt.as_str(),
            self.main_addendum.as_str(),
            self.build_addendum.as_str(),
            self.topdown_translate.as_str(),
            self.summarize.as_str(),
            self.infer_deps.as_str(),
        ])
    }
}

/// Single-pass `{name}` substitution. Slots without a binding are left as
/// they are, and substituted values are never rescanned, so code containing
/// braces is safe to splice in.
pub fn substitute(template: &str, bindings: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let name_len = after.find(|c: char| !(c.is_ascii_alphanumeric() || c == '_')).unwrap_or(after.len());
        if name_len > 0 && after[name_len..].starts_with('}') {
            let name = &after[..name_len];
            if let Some((_, value)) = bindings.iter().find(|(k, _)| *k == name) {
                out.push_str(value);
                rest = &after[name_len + 1..];
                continue;
            }
        }
        out.push('{');
        rest = after;
    }
    out.push_str(rest);
    out
}

/// A backtick fence longer than any backtick run at the start of a line in
/// `content`.
pub fn fence_for(content: &str) -> String {
    let longest = content
        .lines()
        .map(|l| l.trim_start().chars().take_while(|&c| c == '`').count())
        .max()
        .unwrap_or(0);
    "`".repeat(core::cmp::max(3, longest + 1))
}

/// Wraps `content` in a fence, adding the closing newline if needed.
pub fn fenced(content: &str, info: &str) -> String {
    let fence = fence_for(content);
    let nl = if content.is_empty() || content.ends_with('\n') { "" } else { "\n" };
    format!("{fence}{info}\n{content}{nl}{fence}")
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("`{0}` is not among the untranslated files")]
    TargetNotUntranslated(RelPath),
    #[error("`{0}` is not in the repository")]
    UnknownTarget(RelPath),
    #[error("prompt needs an estimated {needed} tokens but the input budget is {budget}")]
    ContextOverflow { needed: u64, budget: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
    pub estimated_tokens: u64,
}

/// One piece of a file handed to the top-down translation prompt.
#[derive(Debug, Clone, Copy)]
pub struct ChunkView<'a> {
    pub text: &'a str,
    pub index: usize,
    pub count: usize,
    /// First lines of the parent, shown for chunks after the first.
    pub header_context: Option<&'a str>,
}

pub struct PromptBuilder<'a> {
    pub templates: &'a Templates,
    pub tokenizer: &'a dyn Tokenizer,
    /// Input-token allowance; `None` disables the overflow check.
    pub input_budget: Option<u64>,
}

impl<'a> PromptBuilder<'a> {
    pub fn new(templates: &'a Templates, tokenizer: &'a dyn Tokenizer, input_budget: Option<u64>) -> Self {
        PromptBuilder { templates, tokenizer, input_budget }
    }

    fn model_bindings(task: &TranslationTask) -> [(&'static str, &str); 2] {
        [("source_model", task.source_model.display_name.as_str()), ("target_model", task.target_model.display_name.as_str())]
    }

    pub fn system_prompt(&self, task: &TranslationTask) -> String {
        substitute(&self.templates.system, &Self::model_bindings(task))
    }

    fn finish(&self, system: String, user: String) -> Result<RenderedPrompt, PromptError> {
        let estimated_tokens = self.tokenizer.count(&system) + self.tokenizer.count(&user);
        if let Some(budget) = self.input_budget {
            if estimated_tokens > budget {
                return Err(PromptError::ContextOverflow { needed: estimated_tokens, budget });
            }
        }
        Ok(RenderedPrompt { system, user, estimated_tokens })
    }

    fn addenda(&self, task: &TranslationTask, repo: &RepoSnapshot, target: &RelPath) -> String {
        let mut out = String::new();
        if repo.is_main_file(target) {
            out.push_str("\n\n");
            out.push_str(&substitute(&self.templates.main_addendum, &[("cli_contract", task.cli_contract.as_str())]));
        }
        if repo.is_build_file(target) {
            out.push_str("\n\n");
            out.push_str(&substitute(&self.templates.build_addendum, &[("build_contract", task.build_contract.as_str())]));
        }
        out
    }

    /// The non-agentic prompt for `target`: file tree, every untranslated
    /// context file (the target included), the translate instruction and any
    /// main/build addenda.
    pub fn file_prompt(
        &self,
        task: &TranslationTask,
        repo: &RepoSnapshot,
        target: &RelPath,
        untranslated: &BTreeSet<RelPath>,
    ) -> Result<RenderedPrompt, PromptError> {
        if !repo.contains(target) {
            return Err(PromptError::UnknownTarget(target.clone()));
        }
        if !untranslated.contains(target) {
            return Err(PromptError::TargetNotUntranslated(target.clone()));
        }
        let docs = task.include_docs;
        let context: Vec<&FileEntry> = repo
            .files()
            .filter(|f| untranslated.contains(&f.path))
            .filter(|f| docs || f.kind != crate::model::FileKind::Doc || &f.path == target)
            .collect();
        let file_contents = context
            .iter()
            .map(|f| format!("{}\n{}", f.path, fenced(&f.text(), "")))
            .collect::<Vec<_>>()
            .join("\n\n");
        let tree = render_file_tree(repo);
        let addenda = self.addenda(task, repo, target);
        let [src, dst] = Self::model_bindings(task);
        let user = substitute(
            &self.templates.file_prompt,
            &[
                src,
                dst,
                ("file_tree", &tree),
                ("file_contents", &file_contents),
                ("target_path", target.as_str()),
                ("addenda", &addenda),
            ],
        );
        self.finish(self.system_prompt(task), user)
    }

    /// Top-down translation prompt for one chunk (or the whole file when
    /// `chunk.count == 1`), carrying the change summaries of the file's
    /// already-translated dependencies.
    pub fn chunk_prompt(
        &self,
        task: &TranslationTask,
        repo: &RepoSnapshot,
        target: &RelPath,
        chunk: ChunkView<'_>,
        summaries: &[&ChangeSummary],
    ) -> Result<RenderedPrompt, PromptError> {
        if !repo.contains(target) {
            return Err(PromptError::UnknownTarget(target.clone()));
        }
        let tree = render_file_tree(repo);
        let deps = render_summaries(summaries);
        let chunk_label = if chunk.count <= 1 {
            "the full contents".to_string()
        } else {
            format!("chunk {} of {}", chunk.index + 1, chunk.count)
        };
        let header = match chunk.header_context {
            Some(h) if chunk.index > 0 => {
                format!("\n\nFor reference, these are the first lines of the original file:\n\n{}", fenced(h, ""))
            }
            _ => String::new(),
        };
        let code = fenced(chunk.text, "");
        let addenda = self.addenda(task, repo, target);
        let [src, dst] = Self::model_bindings(task);
        let user = substitute(
            &self.templates.topdown_translate,
            &[
                src,
                dst,
                ("file_tree", &tree),
                ("dependency_summaries", &deps),
                ("chunk_label", &chunk_label),
                ("target_path", target.as_str()),
                ("header_context", &header),
                ("code", &code),
                ("addenda", &addenda),
            ],
        );
        self.finish(self.system_prompt(task), user)
    }

    pub fn summarize_prompt(
        &self,
        task: &TranslationTask,
        original: &FileEntry,
        translated: &str,
    ) -> Result<RenderedPrompt, PromptError> {
        let [src, dst] = Self::model_bindings(task);
        let user = substitute(
            &self.templates.summarize,
            &[
                src,
                dst,
                ("target_path", original.path.as_str()),
                ("original", &fenced(&original.text(), "")),
                ("translated", &fenced(translated, "")),
            ],
        );
        self.finish(self.system_prompt(task), user)
    }

    pub fn infer_deps_prompt(&self, task: &TranslationTask, repo: &RepoSnapshot, file: &FileEntry) -> Result<RenderedPrompt, PromptError> {
        let tree = render_file_tree(repo);
        let [src, dst] = Self::model_bindings(task);
        let user = substitute(
            &self.templates.infer_deps,
            &[src, dst, ("file_tree", &tree), ("target_path", file.path.as_str()), ("code", &fenced(&file.text(), ""))],
        );
        self.finish(self.system_prompt(task), user)
    }
}

/// Marker embedded in prompts for each summary; lets transcripts be checked
/// for which summaries a prompt carried.
pub fn summary_tag(summary: &ChangeSummary) -> String {
    format!("[summary:{}]", summary.produced_by)
}

fn render_summaries(summaries: &[&ChangeSummary]) -> String {
    if summaries.is_empty() {
        return "This file has no already-translated dependencies.".to_string();
    }
    let mut out = String::from("This file depends on files that were already translated. Summaries of the changes made to them:");
    for s in summaries {
        out.push_str("\n\n");
        out.push_str(&format!("{} {}\n", summary_tag(s), s.path));
        if s.renamed_symbols.is_empty() {
            out.push_str("Renamed symbols: none\n");
        } else {
            out.push_str("Renamed symbols:\n");
            for (old, new) in &s.renamed_symbols {
                out.push_str(&format!("- {old} -> {new}\n"));
            }
        }
        let notes = s.interface_notes.trim();
        if !notes.is_empty() {
            out.push_str("Notes: ");
            out.push_str(notes);
        }
    }
    out.truncate(out.trim_end().len());
    out
}

/// [`PromptBuilder::system_prompt`] with the default templates.
pub fn build_system_prompt(task: &TranslationTask) -> String {
    let t = Templates::default();
    PromptBuilder::new(&t, &crate::tokens::HeuristicTokenizer, None).system_prompt(task)
}

/// [`PromptBuilder::file_prompt`] with the default templates and no budget;
/// returns the user message.
pub fn build_file_prompt(
    task: &TranslationTask,
    repo: &RepoSnapshot,
    target: &RelPath,
    untranslated: &BTreeSet<RelPath>,
) -> Result<String, PromptError> {
    let t = Templates::default();
    PromptBuilder::new(&t, &crate::tokens::HeuristicTokenizer, None)
        .file_prompt(task, repo, target, untranslated)
        .map(|p| p.user)
}
