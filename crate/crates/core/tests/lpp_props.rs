use ai_interpret::dsl::{BinaryMatrix, PredicateSet};
use ai_interpret::flowchart::formula_to_tree_structure;
use ai_interpret::lpp::{extract_dnf, induce_tree, log_likelihood, Formula, Literal};
use ai_interpret::env::{Belief, Computation};
use proptest::prelude::*;

fn assignment(bits: u32) -> impl Fn(usize) -> bool {
    move |i| bits >> i & 1 == 1
}

fn matrix(k: usize, rows: &[(u32, bool)]) -> BinaryMatrix {
    let r: Vec<Vec<bool>> = rows.iter().map(|(b, _)| (0..k).map(|i| b >> i & 1 == 1).collect()).collect();
    BinaryMatrix::from_rows(&r, rows.iter().map(|(_, l)| *l).collect())
}

fn literals(k: usize) -> impl Strategy<Value = Vec<Vec<Literal>>> {
    prop::collection::vec(prop::collection::vec((0..k, any::<bool>()), 1..4), 0..4).prop_map(|d| {
        d.into_iter()
            .map(|c| c.into_iter().map(|(p, n)| if n { Literal::neg(p) } else { Literal::pos(p) }).collect())
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn extracted_dnf_matches_tree(k in 1usize..=12, depth in 1usize..=6, rows in prop::collection::vec((any::<u32>(), any::<bool>()), 1..60)) {
        let rows: Vec<(u32, bool)> = rows.into_iter().map(|(b, l)| (b & ((1 << k) - 1), l)).collect();
        let tree = induce_tree(&matrix(k, &rows), depth).unwrap();
        let f = extract_dnf(&tree);
        for bits in 0u32..(1 << k) {
            prop_assert_eq!(tree.classify(assignment(bits)), f.accepts(assignment(bits)));
        }
    }

    #[test]
    fn truncation_equals_shallower_induction(k in 1usize..=8, rows in prop::collection::vec((any::<u32>(), any::<bool>()), 1..80)) {
        let rows: Vec<(u32, bool)> = rows.into_iter().map(|(b, l)| (b & ((1 << k) - 1), l)).collect();
        let m = matrix(k, &rows);
        let deep = induce_tree(&m, 6).unwrap();
        for d in 1..=6 {
            prop_assert_eq!(deep.truncated(d), induce_tree(&m, d).unwrap());
        }
    }

    #[test]
    fn flowchart_matches_formula(k in 1usize..=12, d in literals(12)) {
        let d: Vec<Vec<Literal>> = d.into_iter().map(|c| c.into_iter().map(|l| Literal { predicate: l.predicate % k, ..l }).collect()).collect();
        let f = Formula::new(d);
        let t = formula_to_tree_structure(&f);
        for bits in 0u32..(1 << k) {
            prop_assert_eq!(t.classify(assignment(bits)), f.accepts(assignment(bits)));
        }
        prop_assert!(t.depth() <= f.distinct_predicates());
    }

    #[test]
    fn canonical_form_ignores_order(d in literals(10), seed in any::<u64>()) {
        let f = Formula::new(d.clone());
        let mut shuffled = d;
        let n = shuffled.len();
        if n > 1 {
            shuffled.rotate_left((seed as usize) % n);
        }
        for c in shuffled.iter_mut() {
            c.reverse();
        }
        prop_assert_eq!(&Formula::new(shuffled), &f);
        prop_assert_eq!(&Formula::new(f.disjuncts().to_vec()), &f);
        for bits in 0u32..(1 << 10) {
            let direct = f.disjuncts().iter().any(|c| c.iter().all(|l| l.holds(bits >> l.predicate & 1 == 1)));
            prop_assert_eq!(f.accepts(assignment(bits)), direct);
        }
    }

    #[test]
    fn render_parse_roundtrip(d in literals(40), offset in 0usize..9000) {
        let set = PredicateSet::shipped();
        let d: Vec<Vec<Literal>> = d.into_iter().map(|c| c.into_iter().map(|l| Literal { predicate: (l.predicate * 211 + offset) % set.len(), ..l }).collect()).collect();
        let f = Formula::new(d);
        prop_assert_eq!(Formula::parse(&set, &f.render(&set)).unwrap(), f.clone());
        prop_assert_eq!(Formula::from_file_str(&set, &f.to_file_string(&set)).unwrap(), f);
    }

    #[test]
    fn duplicated_pairs_square_the_likelihood(masks in prop::collection::vec((1u16..0x1fff, 0usize..12), 1..10)) {
        let b = Belief::initial(12);
        let pairs: Vec<(Belief, Computation)> = masks.iter().map(|(_, n)| (b, Computation::Click(n + 1))).collect();
        let accept = masks[0].0 << 1 | 2;
        let once = log_likelihood(|_| accept, &pairs);
        let mut twice = pairs.clone();
        twice.extend(pairs);
        let both = log_likelihood(|_| accept, &twice);
        if once.is_finite() {
            prop_assert!((both - 2.0 * once).abs() < 1e-9);
            prop_assert!(once <= 0.0);
        } else {
            prop_assert_eq!(both, f64::NEG_INFINITY);
        }
    }
}

#[test]
fn termination_needs_empty_acceptance() {
    let b = Belief::initial(12);
    let stop = [(b, Computation::Terminate)];
    assert_eq!(log_likelihood(|_| 0, &stop), 0.0);
    assert_eq!(log_likelihood(|_| 0b10, &stop), f64::NEG_INFINITY);
    let click = [(b, Computation::Click(1))];
    assert!((log_likelihood(|_| 0b110, &click) + 2f64.ln()).abs() < 1e-12);
    assert_eq!(log_likelihood(|_| 0b100, &click), f64::NEG_INFINITY);
}
