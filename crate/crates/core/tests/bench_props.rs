use std::collections::BTreeMap;

use ai_interpret::bench::{output_entropy, run_benchmark_suite, success_rate, BenchmarkReport, SuiteConfig};
use ai_interpret::dsl::PredicateSet;
use ai_interpret::env::{EnvKind, EnvironmentSpec};
use ai_interpret::interpret::Method;
use ai_interpret::solver::solve;
use proptest::prelude::*;

fn outcomes() -> impl Strategy<Value = Vec<Option<String>>> {
    prop::collection::vec(prop::option::of(0u8..4), 1..30).prop_map(|v| v.into_iter().map(|o| o.map(|c| c.to_string())).collect())
}

proptest! {
    #[test]
    fn entropy_bounds(o in outcomes()) {
        let h = output_entropy(&o);
        prop_assert!(h >= 0.0);
        prop_assert!(h <= (o.len() as f64).ln() + 1e-12);
        let mut classes: Vec<&Option<String>> = o.iter().collect();
        classes.sort();
        classes.dedup();
        prop_assert_eq!(h == 0.0, classes.len() == 1);
        let s = success_rate(&o);
        prop_assert!((0.0..=1.0).contains(&s));
    }

    #[test]
    fn entropy_ignores_order(mut o in outcomes(), r in 0usize..30) {
        let h = output_entropy(&o);
        let n = o.len();
        o.rotate_left(r % n);
        prop_assert!((output_entropy(&o) - h).abs() < 1e-12);
    }
}

#[test]
fn report_regenerates_after_round_trip() {
    let cfg = SuiteConfig {
        envs: vec![EnvKind::Decreasing],
        demo_sizes: vec![8, 16],
        methods: vec![Method::Binary, Method::Lpp],
        runs: 3,
        seed: 11,
        ..SuiteConfig::default()
    };
    let mut cfg = cfg.fast();
    cfg.interpret.rollouts = 2000;
    let set = PredicateSet::shipped();
    let env = EnvironmentSpec::build(EnvKind::Decreasing);
    let tables = BTreeMap::from([(EnvKind::Decreasing, solve(&env).unwrap())]);
    let report = run_benchmark_suite(&cfg, &set, &tables).unwrap();
    assert_eq!(report.cells.len(), 4);
    let text = serde_json::to_string_pretty(&report).unwrap();
    let back: BenchmarkReport = serde_json::from_str(&text).unwrap();
    assert_eq!(serde_json::to_string_pretty(&back.regenerate()).unwrap(), text);
    let again = run_benchmark_suite(&cfg, &set, &tables).unwrap();
    assert_eq!(serde_json::to_string_pretty(&again).unwrap(), text);
}
