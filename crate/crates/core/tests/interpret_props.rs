use ai_interpret::demos::{estimate_mean_return, generate_demonstrations, negative_examples};
use ai_interpret::dsl::PredicateSet;
use ai_interpret::env::{EnvKind, EnvironmentSpec};
use ai_interpret::interpret::{ai_interpret, InterpretConfig, InterpretResult};
use ai_interpret::lpp::{Dataset, FormulaPolicy};
use ai_interpret::solver::solve;

#[test]
fn found_formulas_hold_up_and_runs_repeat() {
    let env = EnvironmentSpec::build(EnvKind::Increasing);
    let table = solve(&env).unwrap();
    let m = table.initial_value();
    let set = PredicateSet::shipped();
    let demos = generate_demonstrations(&env, &table, 32, 5).unwrap();
    let neg = negative_examples(&demos, &table, 1e-9).unwrap();
    let ds = Dataset::from_demos(&env, &set, &demos, &neg).unwrap();
    let cfg = InterpretConfig { mean_expert_reward: m, rollouts: 10_000, clusters: 8, seed: 3, ..InterpretConfig::default() };
    let first = ai_interpret(&ds, &env, &set, &cfg).unwrap();
    assert_eq!(ai_interpret(&ds, &env, &set, &cfg).unwrap(), first);
    let f = first.found().expect("increasing demonstrations are interpretable");
    assert!(f.perf_ratio >= cfg.alpha);
    let fresh = estimate_mean_return(&env, &FormulaPolicy::new(&env, &set, &f.formula), 100_000, 99).unwrap();
    assert!(fresh.mean / m >= cfg.alpha - 3.0 * fresh.stderr / m, "{} vs {}", fresh.mean, m);
}

#[test]
fn observation_only_grammar_has_no_solution() {
    let env = EnvironmentSpec::build(EnvKind::Increasing);
    let table = solve(&env).unwrap();
    let full = PredicateSet::shipped();
    let set = full.restrict(&["is_observed"]).unwrap();
    let demos = generate_demonstrations(&env, &table, 16, 1).unwrap();
    let neg = negative_examples(&demos, &table, 1e-9).unwrap();
    let ds = Dataset::from_demos(&env, &set, &demos, &neg).unwrap();
    let cfg = InterpretConfig { mean_expert_reward: table.initial_value(), rollouts: 5000, clusters: 6, ..InterpretConfig::default() };
    assert!(matches!(ai_interpret(&ds, &env, &set, &cfg).unwrap(), InterpretResult::NoSolution { .. }));
}
