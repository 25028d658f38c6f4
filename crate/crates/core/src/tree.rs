//! ASCII file-tree rendering used in prompts.

use alloc::collections::BTreeMap;
use alloc::string::String;

use crate::model::RepoSnapshot;
use crate::path::RelPath;

#[derive(Default)]
struct Dir<'a> {
    entries: BTreeMap<&'a str, Option<Dir<'a>>>,
}

impl<'a> Dir<'a> {
    fn insert(&mut self, segments: &[&'a str]) {
        match segments {
            [] => {}
            [leaf] => {
                self.entries.entry(leaf).or_insert(None);
            }
            [head, rest @ ..] => {
                self.entries.entry(head).or_insert(None).get_or_insert_with(Dir::default).insert(rest);
            }
        }
    }

    fn render(&self, prefix: &str, out: &mut String) {
        let n = self.entries.len();
        for (i, (name, child)) in self.entries.iter().enumerate() {
            let last = i + 1 == n;
            if !out.is_empty() {
                out.push('\n');
            }
            out.push_str(prefix);
            out.push_str(if last { "+-- " } else { "|-- " });
            out.push_str(name);
            if let Some(dir) = child {
                out.push('/');
                let mut next = String::from(prefix);
                next.push_str(if last { "    " } else { "|   " });
                dir.render(&next, out);
            }
        }
    }
}

/// Renders paths as an ASCII tree: `|-- ` for entries, `+-- ` for the last
/// entry of each level, directories suffixed with `/`, entries sorted by
/// name at each level.
pub fn render_paths<'a>(paths: impl IntoIterator<Item = &'a RelPath>) -> String {
    let mut root = Dir::default();
    for p in paths {
        let segs: alloc::vec::Vec<&str> = p.segments().collect();
        root.insert(&segs);
    }
    let mut out = String::new();
    root.render("", &mut out);
    out
}

pub fn render_file_tree(repo: &RepoSnapshot) -> String {
    render_paths(repo.paths())
}
