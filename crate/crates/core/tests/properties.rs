use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use repoport_core::atlas::{dbscan, NOISE};
use repoport_core::chunk::{reassemble, split_file, BoundaryKind};
use repoport_core::deps::{respects_edges, translation_order, DepGraph, EdgeOrigin};
use repoport_core::metrics::{build_at_k, pass_at_k};
use repoport_core::tokens::{HeuristicTokenizer, Tokenizer, WhitespaceTokenizer};
use repoport_core::{FileEntry, FileKind, RelPath};

fn p(s: &str) -> RelPath {
    RelPath::new(s).unwrap()
}

// ---------- pass@k against subset enumeration ----------

/// Fraction of all k-subsets of {0..n} that contain an index < c.
fn enumerate_pass(n: u64, c: u64, k: u64) -> f64 {
    let (mut hit, mut total) = (0u64, 0u64);
    for mask in 0u32..(1u32 << n) {
        if mask.count_ones() as u64 != k {
            continue;
        }
        total += 1;
        if mask & ((1u32 << c) - 1) != 0 {
            hit += 1;
        }
    }
    hit as f64 / total as f64
}

#[test]
fn pass_at_k_equals_enumeration_up_to_twelve() {
    for n in 1..=12u64 {
        for c in 0..=n {
            for k in 1..=n {
                let got = pass_at_k(n, c, k).unwrap();
                let want = enumerate_pass(n, c, k);
                assert!((got - want).abs() <= 1e-12, "N={n} c={c} k={k}: {got} vs {want}");
            }
            assert_eq!(pass_at_k(n, c, 1).unwrap(), c as f64 / n as f64);
        }
    }
}

#[test]
fn ten_choose_four_example() {
    assert!((pass_at_k(10, 3, 4).unwrap() - enumerate_pass(10, 3, 4)).abs() < 1e-12);
    assert!((build_at_k(4, 1, 2).unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn monotone_in_k_and_c() {
    for n in 1..=12u64 {
        for c in 0..=n {
            for k in 1..n {
                assert!(pass_at_k(n, c, k + 1).unwrap() >= pass_at_k(n, c, k).unwrap());
            }
            if c < n {
                for k in 1..=n {
                    assert!(pass_at_k(n, c + 1, k).unwrap() >= pass_at_k(n, c, k).unwrap());
                }
            }
            assert_eq!(pass_at_k(n, c, n).unwrap() == 1.0, c >= 1);
        }
    }
}

#[test]
fn build_at_k_dominates_pass_at_k() {
    let mut rng = StdRng::seed_from_u64(11);
    for _ in 0..1000 {
        let n = rng.random_range(1..=50u64);
        let b = rng.random_range(0..=n);
        let c = rng.random_range(0..=b);
        let k = rng.random_range(1..=n);
        assert!(build_at_k(n, b, k).unwrap() >= pass_at_k(n, c, k).unwrap());
    }
}

// ---------- chunker ----------

#[derive(Debug, Clone)]
enum Item {
    Include(String),
    Global(String),
    Comment(String),
    Blank,
    Func { name: String, body: Vec<String>, nested: bool },
    Struct(String, Vec<String>),
}

fn item_text(it: &Item) -> String {
    match it {
        Item::Include(h) => format!("#include \"{h}.h\"\n"),
        Item::Global(n) => format!("static int {n} = 0; // {{ not a brace\n"),
        Item::Comment(c) => format!("/* {c} }} */\n"),
        Item::Blank => "\n".to_string(),
        Item::Func { name, body, nested } => {
            let mut s = format!("int {name}(int x)\n{{\n");
            for (i, l) in body.iter().enumerate() {
                if *nested && i == body.len() / 2 {
                    s.push_str("  for (int i = 0; i < x; i++) {\n    const char *s = \"}\";\n  }\n");
                }
                s.push_str(&format!("  x += {l};\n"));
            }
            s.push_str("  return x;\n}\n");
            s
        }
        Item::Struct(n, fields) => {
            let mut s = format!("struct {n} {{\n");
            for f in fields {
                s.push_str(&format!("  int {f};\n"));
            }
            s.push_str("};\n");
            s
        }
    }
}

fn ident() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_]{0,6}"
}

fn item() -> impl Strategy<Value = Item> {
    prop_oneof![
        ident().prop_map(Item::Include),
        ident().prop_map(Item::Global),
        "[a-z {}]{0,20}".prop_map(Item::Comment),
        Just(Item::Blank),
        (ident(), prop::collection::vec("[a-z0-9]{1,4}( [+*] [a-z0-9]{1,4}){0,6}", 0..30), any::<bool>())
            .prop_map(|(name, body, nested)| Item::Func { name, body, nested }),
        (ident(), prop::collection::vec(ident(), 1..5)).prop_map(|(n, f)| Item::Struct(n, f)),
    ]
}

fn file_of(items: &[Item]) -> (String, BTreeSet<usize>) {
    let mut text = String::new();
    let mut ends = BTreeSet::new();
    for it in items {
        text.push_str(&item_text(it));
        ends.insert(text.len());
    }
    (text, ends)
}

fn entry(text: &str) -> FileEntry {
    FileEntry { path: p("src/gen.cpp"), content: text.as_bytes().to_vec(), kind: FileKind::Source }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn chunking_round_trips_and_respects_boundaries(
        items in prop::collection::vec(item(), 1..25),
        budget in 8u64..300,
        heuristic in any::<bool>(),
    ) {
        let (text, item_ends) = file_of(&items);
        let tok: &dyn Tokenizer = if heuristic { &HeuristicTokenizer } else { &WhitespaceTokenizer };
        let chunks = split_file(&entry(&text), budget, tok);
        prop_assert_eq!(reassemble(&chunks).unwrap(), text.clone());
        let mut offset = 0;
        for (i, c) in chunks.iter().enumerate() {
            prop_assert_eq!(c.index, i);
            if chunks.len() > 1 && c.boundary_kind != BoundaryKind::HardSplit {
                prop_assert!(tok.count(&c.content) <= budget, "chunk {} over budget", i);
            }
            offset += c.content.len();
            if let Some(next) = chunks.get(i + 1) {
                let interior = c.boundary_kind == BoundaryKind::HardSplit && next.boundary_kind == BoundaryKind::HardSplit;
                prop_assert!(interior || item_ends.contains(&offset), "boundary at {} inside an item", offset);
            }
        }
    }
}

/// All ways of cutting a sequence of unit sizes into consecutive groups.
fn all_groupings(sizes: &[u64]) -> Vec<Vec<u64>> {
    if sizes.is_empty() {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for first in 1..=sizes.len() {
        let head: u64 = sizes[..first].iter().sum();
        for mut rest in all_groupings(&sizes[first..]) {
            rest.insert(0, head);
            out.push(rest);
        }
    }
    out
}

#[test]
fn greedy_result_is_a_valid_boundary_split() {
    let f = |n: &str| {
        let body = vec!["x;"; 96].join(" ");
        format!("void {n}() {{\n{body}\n}}\n")
    };
    let text = format!("{}{}{}", f("f1"), f("f2"), f("f3"));
    let chunks = split_file(&entry(&text), 220, &WhitespaceTokenizer);
    let sizes: Vec<u64> = chunks.iter().map(|c| WhitespaceTokenizer.count(&c.content)).collect();
    assert_eq!(sizes, vec![200, 100]);
    let feasible: Vec<Vec<u64>> =
        all_groupings(&[100, 100, 100]).into_iter().filter(|g| g.iter().all(|&s| s <= 220)).collect();
    assert!(feasible.contains(&sizes));
}

// ---------- dependency order ----------

#[test]
fn order_respects_edges_on_random_dags() {
    let mut rng = StdRng::seed_from_u64(5);
    for round in 0..200 {
        let n = rng.random_range(1..=20usize);
        let names: Vec<RelPath> = (0..n).map(|i| p(&format!("f{:02}_{}.cpp", rng.random_range(0..100), i))).collect();
        // a hidden topological rank makes the graph acyclic
        let mut rank: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            rank.swap(i, rng.random_range(0..=i));
        }
        let mut g = DepGraph::new(names.iter().cloned());
        for i in 0..n {
            for j in 0..n {
                if rank[j] < rank[i] && rng.random_bool(0.2) {
                    g.add_edge(&names[i], &names[j], EdgeOrigin::IncludeScan).unwrap();
                }
            }
        }
        if rng.random_bool(0.3) {
            g.mark_build(names[0].clone());
        }
        let o = translation_order(&g);
        assert!(o.removed_edges.is_empty(), "round {round}");
        assert_eq!(o.order.len(), n);
        assert_eq!(o.order.iter().collect::<BTreeSet<_>>().len(), n);
        assert!(respects_edges(&g, &o.order), "round {round}");
        assert_eq!(translation_order(&g), o, "deterministic");
    }
}

#[test]
fn cycles_are_broken_and_reported() {
    let mut rng = StdRng::seed_from_u64(9);
    for _ in 0..100 {
        let n = rng.random_range(2..=8usize);
        let names: Vec<RelPath> = (0..n).map(|i| p(&format!("n{i}.h"))).collect();
        let mut g = DepGraph::new(names.iter().cloned());
        for i in 0..n {
            for j in 0..n {
                if i != j && rng.random_bool(0.3) {
                    g.add_edge(&names[i], &names[j], EdgeOrigin::LlmInferred).unwrap();
                }
            }
        }
        let o = translation_order(&g);
        let mut kept = g.clone();
        for (u, v) in &o.removed_edges {
            assert!(kept.remove_edge(u, v).is_some());
        }
        assert_eq!(o.order.len(), n);
        assert!(respects_edges(&kept, &o.order));
        assert_eq!(o.warnings.len(), o.removed_edges.len());
    }
}

// ---------- DBSCAN against the definitions ----------

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Core points are those with >= min_pts points within eps. Clusters are the
/// connected components of cores, numbered by their smallest index. A
/// non-core point within eps of a core takes the smallest adjacent cluster
/// id; anything else is noise.
fn brute_force_dbscan(pts: &[Vec<f64>], eps: f64, min_pts: usize) -> Vec<i64> {
    let n = pts.len();
    let adj = |i: usize, j: usize| dist2(&pts[i], &pts[j]) <= eps * eps;
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| adj(i, j)).count() >= min_pts).collect();
    let mut comp = vec![usize::MAX; n];
    for s in 0..n {
        if !core[s] || comp[s] != usize::MAX {
            continue;
        }
        let mut stack = vec![s];
        comp[s] = s;
        while let Some(u) = stack.pop() {
            for v in 0..n {
                if core[v] && comp[v] == usize::MAX && adj(u, v) {
                    comp[v] = s;
                    stack.push(v);
                }
            }
        }
    }
    let roots: BTreeSet<usize> = (0..n).filter(|&i| core[i]).map(|i| comp[i]).collect();
    let id: BTreeMap<usize, i64> = roots.iter().enumerate().map(|(k, &r)| (r, k as i64)).collect();
    (0..n)
        .map(|i| {
            if core[i] {
                id[&comp[i]]
            } else {
                (0..n).filter(|&j| core[j] && adj(i, j)).map(|j| id[&comp[j]]).min().unwrap_or(NOISE)
            }
        })
        .collect()
}

#[test]
fn dbscan_matches_brute_force() {
    let mut rng = StdRng::seed_from_u64(2024);
    for round in 0..30 {
        let n = rng.random_range(1..=50usize);
        let dim = rng.random_range(1..=3usize);
        let centers: Vec<Vec<f64>> = (0..rng.random_range(1..=4)).map(|_| (0..dim).map(|_| rng.random_range(0.0..10.0)).collect()).collect();
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let c = &centers[rng.random_range(0..centers.len())];
                c.iter().map(|x| x + rng.random_range(-1.5..1.5)).collect()
            })
            .collect();
        let eps = rng.random_range(0.3..1.5);
        let min_pts = rng.random_range(1..=5usize);
        assert_eq!(dbscan(&pts, eps, min_pts), brute_force_dbscan(&pts, eps, min_pts), "round {round}");
    }
}

#[test]
fn two_blobs_two_clusters() {
    let mut rng = StdRng::seed_from_u64(1);
    let mut pts = Vec::new();
    for c in [0.0, 10.0] {
        for _ in 0..10 {
            pts.push(vec![c + rng.random_range(-0.2..0.2), c + rng.random_range(-0.2..0.2)]);
        }
    }
    let labels = dbscan(&pts, 0.5, 3);
    assert_eq!(labels, brute_force_dbscan(&pts, 0.5, 3));
    assert_eq!(labels.iter().collect::<BTreeSet<_>>().len(), 2);
    assert!(!labels.contains(&NOISE));
}

#[test]
fn dbscan_partition_invariant_under_permutation() {
    let mut rng = StdRng::seed_from_u64(3);
    let pts: Vec<Vec<f64>> = (0..40).map(|i| vec![(i / 10) as f64 * 5.0 + rng.random_range(0.0..0.5)]).collect();
    let partition = |pts: &[Vec<f64>], keys: &[usize]| {
        let labels = dbscan(pts, 0.6, 3);
        let mut groups: BTreeMap<i64, BTreeSet<usize>> = BTreeMap::new();
        for (i, l) in labels.iter().enumerate() {
            if *l != NOISE {
                groups.entry(*l).or_default().insert(keys[i]);
            }
        }
        groups.into_values().collect::<BTreeSet<_>>()
    };
    let ids: Vec<usize> = (0..pts.len()).collect();
    let base = partition(&pts, &ids);
    let mut perm = ids.clone();
    for i in (1..perm.len()).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| pts[i].clone()).collect();
    assert_eq!(partition(&shuffled, &perm), base);
}
