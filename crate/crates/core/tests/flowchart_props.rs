use std::collections::{BTreeMap, BTreeSet};

use ai_interpret::dsl::PredicateSet;
use ai_interpret::env::{EnvKind, EnvironmentSpec};
use ai_interpret::flowchart::{formula_to_tree, formula_to_tree_structure, render, RenderFormat};
use ai_interpret::lpp::{Formula, Literal};
use ai_interpret::pipeline::{select_tree, CandidateTree};
use proptest::prelude::*;

fn formula(preds: usize) -> impl Strategy<Value = Formula> {
    prop::collection::vec(prop::collection::vec((0..preds, any::<bool>()), 1..4), 0..4).prop_map(|d| {
        Formula::new(d.into_iter().map(|c| c.into_iter().map(|(p, n)| if n { Literal::neg(p) } else { Literal::pos(p) }).collect()).collect())
    })
}

fn candidate(f: Formula) -> CandidateTree {
    CandidateTree {
        clusters: 1,
        seed: 0,
        tree: formula_to_tree_structure(&f),
        formula: f,
        perf_ratio: 1.0,
        estimated_return: 0.0,
        support_fraction: 1.0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dot_is_a_binary_tree(f in formula(60), offset in 0usize..5000) {
        let set = PredicateSet::shipped();
        let env = EnvironmentSpec::build(EnvKind::Increasing);
        let f = Formula::new(f.disjuncts().iter().map(|c| c.iter().map(|l| Literal { predicate: (l.predicate * 97 + offset) % set.len(), ..*l }).collect()).collect());
        let tree = formula_to_tree(&f, &set, &env).unwrap();
        let q = tree.node_count();
        let dot = render(&tree, RenderFormat::Dot);
        let framed = dot.starts_with("digraph flowchart {\n") && dot.ends_with("}\n");
        prop_assert!(framed);
        let lines: Vec<&str> = dot.lines().collect();
        prop_assert_eq!(lines.iter().filter(|l| l.contains("shape=diamond")).count(), q);
        prop_assert_eq!(lines.iter().filter(|l| l.contains("shape=box")).count(), q + 1);
        let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut targets = BTreeSet::new();
        for l in lines.iter().filter(|l| l.contains("->")) {
            let mut it = l.split_whitespace();
            let from = it.next().unwrap().to_string();
            it.next();
            let to = it.next().unwrap().to_string();
            prop_assert!(targets.insert(to.clone()), "two parents for {}", to);
            out.entry(from).or_default().push(l.split("label=").nth(1).unwrap().to_string());
        }
        prop_assert_eq!(targets.len(), 2 * q);
        prop_assert!(!targets.contains("n0"));
        for labels in out.values() {
            prop_assert_eq!(labels, &vec!["\"yes\"];".to_string(), "\"no\"];".to_string()]);
        }
        prop_assert_eq!(render(&tree, RenderFormat::Ascii).lines().count(), 2 * q + 1);
    }

    #[test]
    fn selection_ignores_candidate_order(fs in prop::collection::vec(formula(8), 1..6), r in 0usize..6) {
        let cs: Vec<CandidateTree> = fs.into_iter().map(candidate).collect();
        let chosen = select_tree(&cs).unwrap().formula.clone();
        let mut perm = cs.clone();
        perm.rotate_left(r % cs.len());
        perm.reverse();
        prop_assert_eq!(&select_tree(&perm).unwrap().formula, &chosen);
        let best = select_tree(&cs).unwrap();
        for c in &cs {
            prop_assert!(best.tree.node_count() <= c.tree.node_count());
        }
    }
}
