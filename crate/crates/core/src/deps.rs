//! Inter-file dependencies and translation ordering.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::model::{FileEntry, RepoSnapshot};
use crate::path::RelPath;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeOrigin {
    IncludeScan,
    CompilerTool,
    LlmInferred,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("edge references unknown node `{0}`")]
    UnknownNode(RelPath),
}

/// Directed graph of `dependent -> dependency` edges over repository files.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepGraph {
    nodes: BTreeSet<RelPath>,
    build_nodes: BTreeSet<RelPath>,
    edges: BTreeMap<RelPath, BTreeMap<RelPath, EdgeOrigin>>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl DepGraph {
    pub fn new(nodes: impl IntoIterator<Item = RelPath>) -> Self {
        DepGraph { nodes: nodes.into_iter().collect(), ..Default::default() }
    }

    /// Marks `node` as a build-system file; such files sort last among
    /// otherwise unconstrained nodes.
    pub fn mark_build(&mut self, node: RelPath) {
        self.build_nodes.insert(node);
    }

    /// Adds `dependent -> dependency`. Self-loops are ignored; an existing
    /// edge keeps its first origin.
    pub fn add_edge(&mut self, dependent: &RelPath, dependency: &RelPath, origin: EdgeOrigin) -> Result<(), GraphError> {
        for n in [dependent, dependency] {
            if !self.nodes.contains(n) {
                return Err(GraphError::UnknownNode(n.clone()));
            }
        }
        if dependent != dependency {
            self.edges.entry(dependent.clone()).or_default().entry(dependency.clone()).or_insert(origin);
        }
        Ok(())
    }

    pub fn remove_edge(&mut self, dependent: &RelPath, dependency: &RelPath) -> Option<EdgeOrigin> {
        let deps = self.edges.get_mut(dependent)?;
        let o = deps.remove(dependency);
        if deps.is_empty() {
            self.edges.remove(dependent);
        }
        o
    }

    pub fn nodes(&self) -> &BTreeSet<RelPath> {
        &self.nodes
    }

    pub fn is_build(&self, node: &RelPath) -> bool {
        self.build_nodes.contains(node)
    }

    pub fn dependencies_of<'a>(&'a self, node: &RelPath) -> impl Iterator<Item = (&'a RelPath, EdgeOrigin)> + 'a {
        self.edges.get(node).into_iter().flat_map(|m| m.iter().map(|(k, v)| (k, *v)))
    }

    /// All edges as `(dependent, dependency, origin)`.
    pub fn edges(&self) -> impl Iterator<Item = (&RelPath, &RelPath, EdgeOrigin)> {
        self.edges.iter().flat_map(|(u, m)| m.iter().map(move |(v, o)| (u, v, *o)))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.values().map(BTreeMap::len).sum()
    }
}

/// Repo-local targets of `#include "..."` directives in `file`, resolved
/// against the including file's directory first and the repository root
/// second. `<...>` includes are ignored. The scan is textual, so includes
/// inside `#ifdef` blocks count. Unresolvable includes are reported in the
/// returned warnings.
pub fn scan_includes(file: &FileEntry, repo: &RepoSnapshot) -> (BTreeSet<RelPath>, Vec<String>) {
    let mut found = BTreeSet::new();
    let mut warnings = Vec::new();
    let text = file.text();
    for line in text.lines() {
        let Some(rest) = line.trim_start().strip_prefix('#') else { continue };
        let Some(rest) = rest.trim_start().strip_prefix("include") else { continue };
        let rest = rest.trim_start();
        let Some(inner) = rest.strip_prefix('"') else { continue };
        let Some(end) = inner.find('"') else { continue };
        let target = &inner[..end];
        let resolved = [file.path.parent(), None]
            .into_iter()
            .filter_map(|dir| RelPath::join_within(dir, target))
            .find(|p| repo.contains(p));
        match resolved {
            Some(p) if p != file.path => {
                found.insert(p);
            }
            Some(_) => {}
            None => warnings.push(format!("{}: include \"{target}\" does not resolve to a repository file", file.path)),
        }
    }
    (found, warnings)
}

/// Parses make-rule dependency output (`-MM` style) into repository paths.
/// `root_prefix` is stripped from absolute paths; paths outside the
/// repository and the file itself are dropped.
pub fn parse_make_deps(output: &str, repo: &RepoSnapshot, file: &RelPath, root_prefix: &str) -> BTreeSet<RelPath> {
    let joined = output.replace("\\\n", " ").replace("\\\r\n", " ");
    let mut out = BTreeSet::new();
    for rule in joined.lines() {
        let Some(colon) = rule.find(": ").or_else(|| rule.strip_suffix(':').map(|r| r.len())) else { continue };
        for tok in rule[colon + 1..].split_whitespace() {
            let tok = tok.strip_prefix(root_prefix).unwrap_or(tok);
            let tok = tok.trim_start_matches('/');
            if let Ok(p) = RelPath::new(tok) {
                if &p != file && repo.contains(&p) {
                    out.insert(p);
                }
            }
        }
    }
    out
}

/// Parses a dependency-listing reply. `Ok(empty)` for an explicit "none";
/// `Err(())` when the reply names no known file and is not "none".
#[allow(clippy::result_unit_err)]
pub fn parse_dep_reply(reply: &str, repo: &RepoSnapshot, file: &RelPath) -> Result<BTreeSet<RelPath>, ()> {
    let mut out = BTreeSet::new();
    let mut said_none = false;
    for tok in reply.split(|c: char| c == ',' || c.is_whitespace()) {
        let tok = tok.trim_matches(|c: char| matches!(c, '`' | '"' | '\'' | '*' | '-' | '.' | ';' | '[' | ']' | '(' | ')'));
        if tok.eq_ignore_ascii_case("none") {
            said_none = true;
            continue;
        }
        if let Ok(p) = RelPath::new(tok) {
            if &p != file && repo.contains(&p) {
                out.insert(p);
            }
        }
    }
    if out.is_empty() && !said_none {
        Err(())
    } else {
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ordering {
    pub order: Vec<RelPath>,
    /// Edges dropped to break cycles, as `(dependent, dependency)`.
    pub removed_edges: Vec<(RelPath, RelPath)>,
    pub warnings: Vec<String>,
}

/// Topological order with dependencies first. Ready nodes are taken
/// non-build files first, then by path. Cycles are broken by repeatedly
/// removing, from the first cycle found, the edge whose dependency is
/// lexicographically greatest (ties: greatest dependent).
pub fn translation_order(graph: &DepGraph) -> Ordering {
    let mut g = graph.clone();
    let mut removed = Vec::new();
    let mut warnings = Vec::new();
    let budget = g.edge_count() + 1;
    for _ in 0..=budget {
        let (order, remaining) = kahn(&g);
        if remaining.is_empty() {
            return Ordering { order, removed_edges: removed, warnings };
        }
        let cycle = find_cycle(&g, &remaining);
        let (u, v) = cycle
            .iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(&b.0)))
            .cloned()
            .expect("a stuck topological sort always leaves a cycle");
        warnings.push(format!("dependency cycle through `{u}` -> `{v}`; dropping that edge"));
        g.remove_edge(&u, &v);
        removed.push((u, v));
    }
    unreachable!("each iteration removes an edge")
}

fn kahn(g: &DepGraph) -> (Vec<RelPath>, BTreeSet<RelPath>) {
    let mut pending: BTreeMap<&RelPath, usize> = g.nodes.iter().map(|n| (n, 0)).collect();
    let mut dependents: BTreeMap<&RelPath, Vec<&RelPath>> = BTreeMap::new();
    for (u, v, _) in g.edges() {
        *pending.get_mut(u).unwrap() += 1;
        dependents.entry(v).or_default().push(u);
    }
    let mut ready: BTreeSet<(bool, &RelPath)> =
        pending.iter().filter(|(_, &d)| d == 0).map(|(n, _)| (g.is_build(n), *n)).collect();
    let mut order = Vec::with_capacity(g.nodes.len());
    while let Some(next) = ready.pop_first() {
        let n = next.1;
        order.push(n.clone());
        for d in dependents.get(n).map(Vec::as_slice).unwrap_or(&[]) {
            let c = pending.get_mut(d).unwrap();
            *c -= 1;
            if *c == 0 {
                ready.insert((g.is_build(d), *d));
            }
        }
    }
    let done: BTreeSet<&RelPath> = order.iter().collect();
    let remaining = g.nodes.iter().filter(|n| !done.contains(n)).cloned().collect();
    (order, remaining)
}

fn find_cycle(g: &DepGraph, remaining: &BTreeSet<RelPath>) -> Vec<(RelPath, RelPath)> {
    let start = remaining.iter().next().expect("non-empty").clone();
    let mut seen: Vec<RelPath> = Vec::new();
    let mut cur = start;
    loop {
        if let Some(pos) = seen.iter().position(|n| *n == cur) {
            let mut cyc: Vec<RelPath> = seen[pos..].to_vec();
            cyc.push(cur);
            return cyc.windows(2).map(|w| (w[0].clone(), w[1].clone())).collect();
        }
        seen.push(cur.clone());
        // every node left over by Kahn has an unprocessed dependency
        let next = g
            .dependencies_of(&cur)
            .map(|(v, _)| v)
            .find(|v| remaining.contains(*v))
            .expect("remaining node without remaining dependency")
            .clone();
        cur = next;
    }
}

/// True iff every edge's dependency comes before its dependent in `order`.
pub fn respects_edges(graph: &DepGraph, order: &[RelPath]) -> bool {
    let pos: BTreeMap<&RelPath, usize> = order.iter().enumerate().map(|(i, p)| (p, i)).collect();
    graph.edges().all(|(u, v, _)| match (pos.get(u), pos.get(v)) {
        (Some(a), Some(b)) => b < a,
        _ => false,
    })
}

/// Lists the repository text-level include graph for C/C++ files only.
pub fn include_graph(repo: &RepoSnapshot) -> DepGraph {
    let mut g = DepGraph::new(repo.paths().cloned());
    for p in repo.build_files() {
        g.mark_build(p.clone());
    }
    for f in repo.files().filter(|f| f.kind.is_code()) {
        let (deps, warns) = scan_includes(f, repo);
        for d in deps {
            g.add_edge(&f.path, &d, EdgeOrigin::IncludeScan).expect("scan only yields repo paths");
        }
        g.warnings.extend(warns);
    }
    g
}

impl core::fmt::Display for EdgeOrigin {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            EdgeOrigin::IncludeScan => "include_scan",
            EdgeOrigin::CompilerTool => "compiler_tool",
            EdgeOrigin::LlmInferred => "llm_inferred",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn p(s: &str) -> RelPath {
        RelPath::new(s).unwrap()
    }

    fn repo(files: &[(&str, &str)]) -> RepoSnapshot {
        RepoSnapshot::new(
            "r",
            files.iter().map(|(a, b)| (p(a), b.as_bytes().to_vec())).collect(),
            [],
            [],
            &BTreeMap::new(),
        )
        .unwrap()
    }

    #[test]
    fn include_resolution() {
        let r = repo(&[("src/main.cpp", "#include \"kernel.h\"\n#include <vector>\n"), ("src/kernel.h", "")]);
        let (deps, w) = scan_includes(r.get(&p("src/main.cpp")).unwrap(), &r);
        assert_eq!(deps, [p("src/kernel.h")].into_iter().collect());
        assert!(w.is_empty());
    }

    #[test]
    fn system_includes_ignored() {
        let r = repo(&[("a.cpp", "#include <vector>\n# include <cstdio>\n")]);
        assert!(scan_includes(r.get(&p("a.cpp")).unwrap(), &r).0.is_empty());
    }

    #[test]
    fn conditional_includes_still_reported() {
        let r = repo(&[("a.cpp", "#ifdef USE_GPU\n#  include \"gpu.h\"\n#endif\n"), ("gpu.h", "")]);
        assert_eq!(scan_includes(r.get(&p("a.cpp")).unwrap(), &r).0.len(), 1);
    }

    #[test]
    fn root_fallback_and_unresolved_warning() {
        let r = repo(&[("src/a.cpp", "#include \"include/b.h\"\n#include \"missing.h\"\n"), ("include/b.h", "")]);
        let (deps, w) = scan_includes(r.get(&p("src/a.cpp")).unwrap(), &r);
        assert_eq!(deps, [p("include/b.h")].into_iter().collect());
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn micro_xor_order() {
        let r = repo(&[
            ("Makefile", "all:\n"),
            ("src/main.cpp", "#include \"kernel.h\"\n"),
            ("src/kernel.cpp", "#include \"kernel.h\"\n"),
            ("src/kernel.h", ""),
        ]);
        let g = include_graph(&r);
        let edges: Vec<(String, String)> = g.edges().map(|(u, v, _)| (u.to_string(), v.to_string())).collect();
        assert_eq!(
            edges,
            vec![("src/kernel.cpp".into(), "src/kernel.h".into()), ("src/main.cpp".into(), "src/kernel.h".into())]
        );
        let o = translation_order(&g);
        assert_eq!(o.order, vec![p("src/kernel.h"), p("src/kernel.cpp"), p("src/main.cpp"), p("Makefile")]);
        assert!(respects_edges(&g, &o.order));
    }

    #[test]
    fn empty_graph_is_lexicographic() {
        let g = DepGraph::new([p("b"), p("a")]);
        assert_eq!(translation_order(&g).order, vec![p("a"), p("b")]);
    }

    #[test]
    fn two_cycle_resolution() {
        let mut g = DepGraph::new([p("a"), p("b")]);
        g.add_edge(&p("a"), &p("b"), EdgeOrigin::LlmInferred).unwrap();
        g.add_edge(&p("b"), &p("a"), EdgeOrigin::LlmInferred).unwrap();
        let o = translation_order(&g);
        assert_eq!(o.order, vec![p("a"), p("b")]);
        assert_eq!(o.removed_edges, vec![(p("a"), p("b"))]);
        assert_eq!(o.warnings.len(), 1);
    }

    #[test]
    fn unknown_nodes_rejected() {
        let mut g = DepGraph::new([p("a")]);
        assert_eq!(g.add_edge(&p("a"), &p("z"), EdgeOrigin::IncludeScan), Err(GraphError::UnknownNode(p("z"))));
    }

    #[test]
    fn make_dep_output() {
        let r = repo(&[("src/main.cpp", ""), ("src/kernel.h", "")]);
        let out = "main.o: /work/r/src/main.cpp /work/r/src/kernel.h \\\n /usr/include/stdio.h\n";
        let deps = parse_make_deps(out, &r, &p("src/main.cpp"), "/work/r/");
        assert_eq!(deps, [p("src/kernel.h")].into_iter().collect());
    }

    #[test]
    fn dep_replies() {
        let r = repo(&[("Makefile", ""), ("src/main.cpp", ""), ("src/kernel.cpp", "")]);
        let mk = p("Makefile");
        let d = parse_dep_reply("src/main.cpp, src/kernel.cpp", &r, &mk).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(parse_dep_reply("- `src/main.cpp`\n", &r, &mk).unwrap().len(), 1);
        assert!(parse_dep_reply("None.", &r, &mk).unwrap().is_empty());
        assert!(parse_dep_reply("I am not sure", &r, &mk).is_err());
    }
}
