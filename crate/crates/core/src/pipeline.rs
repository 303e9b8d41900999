//! End-to-end discovery: solve, demonstrate, pick cluster counts at the
//! elbow, interpret once per count and turn every result into a flowchart.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::clustering::{elbow_candidates, Clusterer, ElbowResult, DEFAULT_GRID};
use crate::demos::{generate_demonstrations, negative_examples, rollout_rng, DemonstrationSet};
use crate::dsl::PredicateSet;
use crate::env::{EnvKind, EnvironmentSpec};
use crate::error::{Error, Result};
use crate::flowchart::{formula_to_tree, FlowTree};
use crate::interpret::{ai_interpret_with, eval_seed, Evaluator, InterpretConfig, InterpretResult};
use crate::lpp::{Dataset, Formula};
use crate::solver::{solve, ValueTable};

/// Independent 64-bit seed for `tag` under a master seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    rollout_rng(seed, tag).next_u64()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Number of demonstrations.
    pub demos: usize,
    /// Number of cluster counts taken from the elbow curve.
    pub k: usize,
    pub grid: Vec<usize>,
    /// Skip the elbow and interpret with this cluster count only.
    pub clusters_override: Option<usize>,
    /// Parameters of every interpretation run; `clusters` and `seed` are
    /// replaced per run and `mean_expert_reward` by the solved value.
    pub interpret: InterpretConfig,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            demos: 64,
            k: 4,
            grid: DEFAULT_GRID.collect(),
            clusters_override: None,
            interpret: InterpretConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CandidateTree {
    pub clusters: usize,
    pub seed: u64,
    pub formula: Formula,
    pub tree: FlowTree,
    pub perf_ratio: f64,
    pub estimated_return: f64,
    pub support_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunDiagnostic {
    pub clusters: usize,
    pub seed: u64,
    pub outcome: String,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSet {
    pub candidates: Vec<CandidateTree>,
    /// Absent when the cluster count was overridden.
    pub elbow: Option<ElbowResult>,
    pub runs: Vec<RunDiagnostic>,
}

/// Everything `discover` built on the way, kept for reports.
pub struct Discovery {
    pub demos: DemonstrationSet,
    pub mean_expert_reward: f64,
    pub result: CandidateSet,
}

/// Cluster counts to interpret with: the override, or the elbow picks
/// within the grid points the data can support.
fn cluster_counts(clusterer: &mut Clusterer, cfg: &PipelineConfig) -> Result<(Vec<usize>, Option<ElbowResult>)> {
    if let Some(n) = cfg.clusters_override {
        if n == 0 {
            return Err(Error::InvalidArgument("cluster override must be positive".into()));
        }
        return Ok((vec![n], None));
    }
    let limit = clusterer.max_clusters();
    let mut grid: Vec<usize> = cfg.grid.iter().copied().filter(|&n| n >= 1 && n <= limit).collect();
    grid.dedup();
    if grid.len() < 2 {
        // Too few distinct clicks for a curve: use every feasible count.
        return Ok((grid.into_iter().take(cfg.k).collect(), None));
    }
    let e = elbow_candidates(clusterer, &grid, cfg.interpret.cut_size, cfg.k)?;
    Ok((e.candidates.clone(), Some(e)))
}

/// Interpretation runs on a prepared dataset. `m` is the expert's expected
/// return from the initial belief.
pub fn discover_on(ds: &Dataset, env: &EnvironmentSpec, set: &PredicateSet, m: f64, cfg: &PipelineConfig) -> Result<CandidateSet> {
    if cfg.k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    let base = InterpretConfig { mean_expert_reward: m, seed: cfg.seed, ..cfg.interpret.clone() };
    base.validate()?;
    let mut clusterer = Clusterer::new(ds, base.heuristic())?;
    let (counts, elbow) = cluster_counts(&mut clusterer, cfg)?;
    let mut eval = Evaluator::new(env, set, base.rollouts, eval_seed(cfg.seed));
    let mut out = CandidateSet { candidates: Vec::new(), elbow, runs: Vec::new() };
    for (j, &n) in counts.iter().enumerate() {
        let run = InterpretConfig { clusters: n, seed: derive_seed(cfg.seed, 2 + j as u64), ..base.clone() };
        let res = ai_interpret_with(&mut clusterer, &mut eval, &run)?;
        match res {
            InterpretResult::Found(f) => {
                out.runs.push(RunDiagnostic { clusters: n, seed: run.seed, outcome: "found".into(), iterations: f.iterations });
                out.candidates.push(CandidateTree {
                    clusters: n,
                    seed: run.seed,
                    tree: formula_to_tree(&f.formula, set, env)?,
                    formula: f.formula,
                    perf_ratio: f.perf_ratio,
                    estimated_return: f.estimated_return,
                    support_fraction: f.support_fraction,
                });
            }
            InterpretResult::NoSolution { reason, iterations } => {
                out.runs.push(RunDiagnostic { clusters: n, seed: run.seed, outcome: reason, iterations });
            }
        }
    }
    Ok(out)
}

/// Full discovery for a benchmark environment.
pub fn discover(kind: EnvKind, set: &PredicateSet, cfg: &PipelineConfig) -> Result<Discovery> {
    let env = EnvironmentSpec::build(kind);
    let table = solve(&env)?;
    discover_with_table(&env, &table, set, cfg)
}

/// [`discover`] with an already solved value table.
pub fn discover_with_table(env: &EnvironmentSpec, table: &ValueTable, set: &PredicateSet, cfg: &PipelineConfig) -> Result<Discovery> {
    let m = table.initial_value();
    let demos = generate_demonstrations(env, table, cfg.demos, cfg.seed)?;
    let neg = negative_examples(&demos, table, cfg.interpret.tie_epsilon)?;
    let ds = Dataset::from_demos(env, set, &demos, &neg)?;
    let result = discover_on(&ds, env, set, m, cfg)?;
    Ok(Discovery { demos, mean_expert_reward: m, result })
}

/// The candidate with the fewest question nodes, then the shallowest, then
/// the first formula in canonical order.
pub fn select_tree(candidates: &[CandidateTree]) -> Result<&CandidateTree> {
    candidates
        .iter()
        .min_by(|a, b| {
            a.tree
                .node_count()
                .cmp(&b.tree.node_count())
                .then(a.tree.depth().cmp(&b.tree.depth()))
                .then(a.formula.cmp(&b.formula))
        })
        .ok_or_else(|| Error::InvalidArgument("no candidate trees to select from".into()))
}
