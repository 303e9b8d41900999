//! Expert demonstrations, negative examples and Monte Carlo return estimates.
//!
//! Seeding: a master seed drives one ChaCha8 generator per rollout, with the
//! rollout index as the stream id. Any trajectory (or any slice of an
//! estimate) can therefore be regenerated on its own.

use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Belief, Computation, EnvKind, EnvironmentSpec};
use crate::error::{Error, Result};
use crate::policy::{OptimalPolicy, Policy};
use crate::solver::ValueTable;

pub const DEMO_FORMAT_VERSION: u32 = 1;

/// Generator for rollout `index` under `seed`.
pub fn rollout_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<(Belief, Computation)>,
}

impl Trajectory {
    pub fn clicks(&self) -> usize {
        self.steps.iter().filter(|(_, c)| !c.is_terminate()).count()
    }

    /// Belief at termination.
    pub fn final_belief(&self) -> Option<&Belief> {
        self.steps.last().map(|(b, _)| b)
    }

    /// Termination reward of the final belief minus click costs.
    pub fn total_return(&self, env: &EnvironmentSpec) -> i64 {
        let term = self.final_belief().map(|b| env.termination_reward(b)).unwrap_or(0) as i64;
        term - env.click_cost as i64 * self.clicks() as i64
    }

    /// Checks the reveal sequence and the single trailing termination.
    pub fn validate(&self, env: &EnvironmentSpec) -> Result<()> {
        let n = self.steps.len();
        if n == 0 || !self.steps[n - 1].1.is_terminate() {
            return Err(Error::Format("trajectory must end with a termination".into()));
        }
        for k in 0..n {
            let (b, c) = &self.steps[k];
            if !env.is_available(b, *c) {
                return Err(Error::UnavailableComputation(*c));
            }
            if k + 1 < n {
                let node = c.node().ok_or_else(|| Error::Format("termination before the last step".into()))?;
                let next = &self.steps[k + 1].0;
                let v = next.get(node).ok_or_else(|| Error::Format("click not observed in next belief".into()))?;
                if b.observe(node, v) != *next {
                    return Err(Error::Format(format!("inconsistent beliefs at step {}", k + 1)));
                }
            }
        }
        Ok(())
    }
}

/// Runs one episode: samples ground truth, then follows the policy until it
/// terminates.
pub fn rollout(env: &EnvironmentSpec, policy: &dyn Policy, rng: &mut ChaCha8Rng) -> Result<Trajectory> {
    let truth = env.sample_ground_truth(rng);
    let mut belief = env.initial_belief();
    let mut steps = Vec::new();
    loop {
        let c = policy.act(env, &belief, rng);
        let t = env.apply_computation(&belief, c, &truth)?;
        steps.push((belief, c));
        if t.done {
            return Ok(Trajectory { steps });
        }
        belief = t.belief;
    }
}

/// Return and click count of one episode, without recording steps.
pub fn rollout_return(env: &EnvironmentSpec, policy: &dyn Policy, rng: &mut ChaCha8Rng) -> Result<(i64, usize)> {
    let truth = env.sample_ground_truth(rng);
    let mut belief = env.initial_belief();
    let mut total = 0i64;
    let mut clicks = 0;
    loop {
        let c = policy.act(env, &belief, rng);
        let t = env.apply_computation(&belief, c, &truth)?;
        total += t.reward as i64;
        if t.done {
            return Ok((total, clicks));
        }
        clicks += 1;
        belief = t.belief;
    }
}

pub fn sample_trajectory(env: &EnvironmentSpec, policy: &dyn Policy, seed: u64) -> Result<Trajectory> {
    rollout(env, policy, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoPair {
    pub belief: Belief,
    pub computation: Computation,
    pub trajectory: usize,
    pub step: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemonstrationSet {
    pub env_kind: Option<EnvKind>,
    pub seed: u64,
    pub trajectories: Vec<Trajectory>,
    pub pairs: Vec<DemoPair>,
}

impl DemonstrationSet {
    pub fn from_trajectories(env_kind: Option<EnvKind>, seed: u64, trajectories: Vec<Trajectory>) -> Self {
        let pairs = trajectories
            .iter()
            .enumerate()
            .flat_map(|(t, tr)| {
                tr.steps.iter().enumerate().map(move |(s, (b, c))| DemoPair {
                    belief: *b,
                    computation: *c,
                    trajectory: t,
                    step: s,
                })
            })
            .collect();
        DemonstrationSet { env_kind, seed, trajectories, pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Indices of click (non-termination) pairs.
    pub fn click_indices(&self) -> Vec<usize> {
        (0..self.pairs.len()).filter(|&i| !self.pairs[i].computation.is_terminate()).collect()
    }

    /// Writes the line-delimited demonstration format: a header record then
    /// one record per step.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let header = DemoHeader {
            env_kind: self.env_kind,
            x: self.trajectories.len(),
            seed: self.seed,
            format_version: DEMO_FORMAT_VERSION,
        };
        serde_json::to_writer(&mut w, &header)?;
        writeln!(w)?;
        for p in &self.pairs {
            let rec = StepRecord {
                trajectory_id: p.trajectory,
                step_index: p.step,
                belief: p.belief.slots(),
                action: p.computation,
            };
            serde_json::to_writer(&mut w, &rec)?;
            writeln!(w)?;
        }
        Ok(())
    }

    /// Environment recorded in the header line of a demonstration file.
    pub fn peek_env_kind<R: BufRead>(r: R) -> Result<Option<EnvKind>> {
        match r.lines().next() {
            Some(l) => Ok(serde_json::from_str::<DemoHeader>(&l?)?.env_kind),
            None => Err(Error::Format("empty demonstration file".into())),
        }
    }

    /// Reads the format written by [`DemonstrationSet::write_jsonl`]. Reveal
    /// order is reconstructed from the preceding steps of each trajectory.
    pub fn read_jsonl<R: BufRead>(r: R, env: &EnvironmentSpec) -> Result<Self> {
        let mut lines = r.lines();
        let header: DemoHeader = match lines.next() {
            Some(l) => serde_json::from_str(&l?)?,
            None => return Err(Error::Format("empty demonstration file".into())),
        };
        if header.format_version != DEMO_FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {}", header.format_version)));
        }
        let mut trajectories: Vec<Trajectory> = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: StepRecord = serde_json::from_str(&line)?;
            if rec.trajectory_id == trajectories.len() {
                trajectories.push(Trajectory { steps: Vec::new() });
            }
            let tr = trajectories
                .get_mut(rec.trajectory_id)
                .filter(|t| t.steps.len() == rec.step_index)
                .ok_or_else(|| Error::Format("records out of order".into()))?;
            let history: Vec<usize> = tr.steps.iter().filter_map(|(_, c)| c.node()).collect();
            let belief = Belief::from_slots(&rec.belief, &history)?;
            tr.steps.push((belief, rec.action));
        }
        if trajectories.len() != header.x {
            return Err(Error::Format(format!(
                "header announces {} trajectories, found {}",
                header.x,
                trajectories.len()
            )));
        }
        for t in &trajectories {
            t.validate(env)?;
        }
        Ok(DemonstrationSet::from_trajectories(header.env_kind, header.seed, trajectories))
    }
}

#[derive(Serialize, Deserialize)]
struct DemoHeader {
    env_kind: Option<EnvKind>,
    x: usize,
    seed: u64,
    format_version: u32,
}

#[derive(Serialize, Deserialize)]
struct StepRecord {
    trajectory_id: usize,
    step_index: usize,
    belief: Vec<Option<i32>>,
    action: Computation,
}

/// Rolls out the uniform-over-argmax expert `x` times.
pub fn generate_demonstrations(env: &EnvironmentSpec, table: &ValueTable, x: usize, seed: u64) -> Result<DemonstrationSet> {
    if x == 0 {
        return Err(Error::InvalidArgument("at least one demonstration is required".into()));
    }
    let expert = OptimalPolicy::new(table);
    let trajectories = (0..x)
        .map(|i| rollout(env, &expert, &mut rollout_rng(seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(DemonstrationSet::from_trajectories(env.kind, seed, trajectories))
}

/// A sub-optimal click at a demonstrated belief.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NegativePair {
    pub belief: Belief,
    pub computation: Computation,
    /// Index of the demonstrated pair whose belief this came from.
    pub source: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NegativeSet {
    pub pairs: Vec<NegativePair>,
}

/// Every available click whose Q falls more than `tie_epsilon` below the best
/// at a demonstrated belief. Termination is never featurized, so it is not
/// emitted.
pub fn negative_examples(demos: &DemonstrationSet, table: &ValueTable, tie_epsilon: f64) -> Result<NegativeSet> {
    let mut pairs = Vec::new();
    for (i, p) in demos.pairs.iter().enumerate() {
        let q = table.q_values(&p.belief)?;
        let best = q.iter().map(|(_, v)| *v).fold(f64::NEG_INFINITY, f64::max);
        for (c, v) in q {
            if !c.is_terminate() && v < best - tie_epsilon {
                pairs.push(NegativePair { belief: p.belief, computation: c, source: i });
            }
        }
    }
    Ok(NegativeSet { pairs })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReturnEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub mean_clicks: f64,
    pub rollouts: usize,
}

/// Sums over a contiguous block of rollout indices; blocks combine exactly
/// because returns are integers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReturnSums {
    pub n: u64,
    pub sum: i64,
    pub sum_sq: i128,
    pub clicks: u64,
}

impl ReturnSums {
    pub fn merge(self, o: ReturnSums) -> ReturnSums {
        ReturnSums { n: self.n + o.n, sum: self.sum + o.sum, sum_sq: self.sum_sq + o.sum_sq, clicks: self.clicks + o.clicks }
    }

    pub fn estimate(&self) -> ReturnEstimate {
        let n = self.n as f64;
        let mean = self.sum as f64 / n;
        let var = if self.n > 1 {
            ((self.sum_sq as f64) - n * mean * mean).max(0.0) / (n - 1.0)
        } else {
            0.0
        };
        ReturnEstimate { mean, stderr: (var / n).sqrt(), mean_clicks: self.clicks as f64 / n, rollouts: self.n as usize }
    }
}

/// Runs rollouts `range` of the stream family `seed`.
pub fn return_sums(
    env: &EnvironmentSpec,
    policy: &dyn Policy,
    seed: u64,
    range: std::ops::Range<u64>,
) -> Result<ReturnSums> {
    let mut s = ReturnSums::default();
    for i in range {
        let (g, clicks) = rollout_return(env, policy, &mut rollout_rng(seed, i))?;
        s.n += 1;
        s.sum += g;
        s.sum_sq += (g as i128) * (g as i128);
        s.clicks += clicks as u64;
    }
    Ok(s)
}

pub fn estimate_mean_return(env: &EnvironmentSpec, policy: &dyn Policy, rollouts: usize, seed: u64) -> Result<ReturnEstimate> {
    if rollouts == 0 {
        return Err(Error::InvalidArgument("at least one rollout is required".into()));
    }
    Ok(return_sums(env, policy, seed, 0..rollouts as u64)?.estimate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::TreeStructure;
    use crate::policy::TerminatePolicy;
    use rand::RngCore;

    fn tiny() -> (EnvironmentSpec, ValueTable) {
        let t = TreeStructure::from_parents(&[None, Some(0), Some(0), Some(1), Some(2)]).unwrap();
        let env = EnvironmentSpec::custom(t, vec![vec![-1, 1], vec![-6, 6]], 1).unwrap();
        let table = crate::solver::solve(&env).unwrap();
        (env, table)
    }

    #[test]
    fn terminate_policy_trajectory() {
        let env = EnvironmentSpec::build(EnvKind::Increasing);
        let t = sample_trajectory(&env, &TerminatePolicy, 1).unwrap();
        assert_eq!(t.steps.len(), 1);
        assert_eq!(t.total_return(&env), 0);
        let est = estimate_mean_return(&env, &TerminatePolicy, 100, 1).unwrap();
        assert_eq!((est.mean, est.stderr), (0.0, 0.0));
    }

    #[test]
    fn unavailable_choice_is_an_error() {
        let env = EnvironmentSpec::build(EnvKind::Increasing);
        let bad = |_: &EnvironmentSpec, _: &Belief, _: &mut dyn RngCore| Computation::Click(1);
        assert!(sample_trajectory(&env, &bad, 0).is_err());
    }

    #[test]
    fn demonstrations_are_reproducible_and_valid() {
        let (env, table) = tiny();
        let a = generate_demonstrations(&env, &table, 10, 5).unwrap();
        let b = generate_demonstrations(&env, &table, 10, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trajectories.len(), 10);
        for t in &a.trajectories {
            t.validate(&env).unwrap();
        }
        let flat: Vec<_> = a.trajectories.iter().flat_map(|t| t.steps.iter().copied()).collect();
        let pairs: Vec<_> = a.pairs.iter().map(|p| (p.belief, p.computation)).collect();
        assert_eq!(flat, pairs);
    }

    #[test]
    fn negatives_exclude_optimal_actions() {
        let (env, table) = tiny();
        let demos = generate_demonstrations(&env, &table, 20, 2).unwrap();
        let neg = negative_examples(&demos, &table, 1e-9).unwrap();
        for n in &neg.pairs {
            let best = table.optimal_action_set(&n.belief, 1e-9).unwrap();
            assert!(!best.contains(&n.computation));
            assert!(!demos.pairs.iter().any(|p| p.belief == n.belief && p.computation == n.computation));
        }
    }

    #[test]
    fn jsonl_roundtrip() {
        let (env, table) = tiny();
        let demos = generate_demonstrations(&env, &table, 4, 9).unwrap();
        let mut buf = Vec::new();
        demos.write_jsonl(&mut buf).unwrap();
        let back = DemonstrationSet::read_jsonl(&buf[..], &env).unwrap();
        assert_eq!(back, demos);
        let text = String::from_utf8(buf).unwrap();
        let first = text.lines().next().unwrap();
        assert!(first.contains("\"format_version\":1"));
    }

    #[test]
    fn split_estimates_combine_exactly() {
        let env = EnvironmentSpec::build(EnvKind::Decreasing);
        let click_level1 = |_: &EnvironmentSpec, b: &Belief, _: &mut dyn RngCore| {
            (1..=3).find(|&n| !b.is_observed(n)).map(Computation::Click).unwrap_or(Computation::Terminate)
        };
        let whole = return_sums(&env, &click_level1, 4, 0..300).unwrap();
        let parts = [0..70u64, 70..71, 71..300]
            .into_iter()
            .map(|r| return_sums(&env, &click_level1, 4, r).unwrap())
            .fold(ReturnSums::default(), ReturnSums::merge);
        assert_eq!(whole, parts);
    }
}
