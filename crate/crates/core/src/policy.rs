use rand::{Rng, RngCore};

use crate::env::{Belief, Computation, EnvironmentSpec};
use crate::solver::ValueTable;

/// A (possibly stochastic) metalevel policy.
pub trait Policy {
    fn act(&self, env: &EnvironmentSpec, belief: &Belief, rng: &mut dyn RngCore) -> Computation;
}

impl<F> Policy for F
where
    F: Fn(&EnvironmentSpec, &Belief, &mut dyn RngCore) -> Computation,
{
    fn act(&self, env: &EnvironmentSpec, belief: &Belief, rng: &mut dyn RngCore) -> Computation {
        self(env, belief, rng)
    }
}

/// Terminates immediately.
pub struct TerminatePolicy;

impl Policy for TerminatePolicy {
    fn act(&self, _: &EnvironmentSpec, _: &Belief, _: &mut dyn RngCore) -> Computation {
        Computation::Terminate
    }
}

/// Uniform choice among the optimal computations of a solved table.
pub struct OptimalPolicy<'a> {
    pub table: &'a ValueTable,
    pub tie_epsilon: f64,
}

impl<'a> OptimalPolicy<'a> {
    pub fn new(table: &'a ValueTable) -> Self {
        OptimalPolicy { table, tie_epsilon: 1e-9 }
    }
}

impl Policy for OptimalPolicy<'_> {
    fn act(&self, _: &EnvironmentSpec, belief: &Belief, rng: &mut dyn RngCore) -> Computation {
        let best = self
            .table
            .optimal_action_set(belief, self.tie_epsilon)
            .expect("beliefs reached by rollouts are valid");
        best[rng.gen_range(0..best.len())]
    }
}
