use ai_interpret::env::{Belief, Computation, EnvironmentSpec, TreeStructure};
use ai_interpret::solver::solve;

/// Plain expectimax over observation slots.
fn expectimax(env: &EnvironmentSpec, slots: &mut Vec<Option<i32>>) -> f64 {
    let b = Belief::from_slots(slots, &[]).unwrap();
    let mut best = env.termination_reward(&b) as f64;
    for n in 1..=slots.len() {
        if slots[n - 1].is_none() {
            best = best.max(q_click(env, slots, n));
        }
    }
    best
}

fn q_click(env: &EnvironmentSpec, slots: &mut Vec<Option<i32>>, n: usize) -> f64 {
    let support = env.support_of(n).to_vec();
    let mut sum = 0.0;
    for v in &support {
        slots[n - 1] = Some(*v);
        sum += expectimax(env, slots);
    }
    slots[n - 1] = None;
    -(env.click_cost as f64) + sum / support.len() as f64
}

/// Every assignment of "unobserved or a support value" to the nodes.
fn all_beliefs(env: &EnvironmentSpec) -> Vec<Vec<Option<i32>>> {
    let mut out = vec![vec![]];
    for n in env.tree.reward_nodes() {
        let mut next = Vec::new();
        for s in &out {
            let mut a = s.clone();
            a.push(None);
            next.push(a);
            for v in env.support_of(n) {
                let mut a = s.clone();
                a.push(Some(*v));
                next.push(a);
            }
        }
        out = next;
    }
    out
}

fn check(env: &EnvironmentSpec) {
    let table = solve(env).unwrap();
    for slots in all_beliefs(env) {
        let b = Belief::from_slots(&slots, &[]).unwrap();
        let mut s = slots.clone();
        let v = expectimax(env, &mut s);
        assert!((table.value(&b).unwrap() - v).abs() < 1e-9, "value at {slots:?}");
        for (c, q) in table.q_values(&b).unwrap() {
            let expect = match c {
                Computation::Click(n) => q_click(env, &mut s, n),
                Computation::Terminate => env.termination_reward(&b) as f64,
            };
            assert!((q - expect).abs() < 1e-9, "Q{c:?} at {slots:?}: {q} vs {expect}");
        }
    }
}

#[test]
fn mini_tree_matches_expectimax() {
    let t = TreeStructure::from_parents(&[None, Some(0), Some(1), Some(2), Some(2)]).unwrap();
    let env = EnvironmentSpec::custom(t, vec![vec![-2, 2], vec![-4, 4], vec![-8, 8]], 1).unwrap();
    check(&env);
}

#[test]
fn symmetric_branches_match_expectimax() {
    let t = TreeStructure::from_parents(&[None, Some(0), Some(0), Some(1), Some(2), Some(3), Some(3), Some(4), Some(4)]).unwrap();
    let env = EnvironmentSpec::custom(t, vec![vec![-1, 1], vec![-3, 3], vec![-9, 9]], 1).unwrap();
    check(&env);
}
