//! Interpretation methods: adaptive clustering (AI-Interpret), the
//! binary-search ablation and the one-shot LPP baseline.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::{s_split, Clusterer, HeuristicConfig, LikelihoodMode};
use crate::demos::{estimate_mean_return, rollout_rng};
use crate::dsl::PredicateSet;
use crate::env::EnvironmentSpec;
use crate::error::{Error, Result};
use crate::lpp::{lpp_map_depths, Dataset, Formula, FormulaPolicy, DEFAULT_LAMBDA};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpretConfig {
    pub alpha: f64,
    pub delta: f64,
    pub rollouts: usize,
    pub max_depth: usize,
    pub clusters: usize,
    pub cut_size: f64,
    pub split: f64,
    /// Expected return of the expert from the initial belief.
    pub mean_expert_reward: f64,
    pub tie_epsilon: f64,
    pub patience: usize,
    pub seed: u64,
    pub lambda: f64,
    pub likelihood: LikelihoodMode,
    /// Accept at ratio ≥ α − δ instead of ≥ α.
    pub accept_alpha_minus_delta: bool,
}

impl Default for InterpretConfig {
    fn default() -> Self {
        InterpretConfig {
            alpha: 0.7,
            delta: 0.025,
            rollouts: 100_000,
            max_depth: 5,
            clusters: 18,
            cut_size: 0.025,
            split: 0.7,
            mean_expert_reward: 0.0,
            tie_epsilon: 1e-9,
            patience: 8,
            seed: 0,
            lambda: DEFAULT_LAMBDA,
            likelihood: LikelihoodMode::GeometricMean,
            accept_alpha_minus_delta: false,
        }
    }
}

impl InterpretConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha must lie in (0, 1]");
        }
        if !(self.delta >= 0.0) {
            return bad("delta must be nonnegative");
        }
        if self.rollouts == 0 || self.max_depth == 0 || self.clusters == 0 {
            return bad("rollouts, max depth and clusters must be positive");
        }
        if !(self.cut_size >= 0.0 && self.cut_size < 1.0) {
            return bad("cut size must lie in [0, 1)");
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return bad("split must lie in (0, 1)");
        }
        if !(self.mean_expert_reward > 0.0) {
            return bad("mean expert reward must be positive");
        }
        Ok(())
    }

    fn threshold(&self) -> f64 {
        if self.accept_alpha_minus_delta {
            self.alpha - self.delta
        } else {
            self.alpha
        }
    }

    pub fn heuristic(&self) -> HeuristicConfig {
        HeuristicConfig { max_depth: self.max_depth, split: self.split, lambda: self.lambda, mode: self.likelihood, seed: self.seed }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ai,
    Binary,
    Lpp,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ai" => Ok(Method::Ai),
            "binary" => Ok(Method::Binary),
            "lpp" => Ok(Method::Lpp),
            other => Err(Error::InvalidArgument(format!("unknown method {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Found {
    pub formula: Formula,
    pub estimated_return: f64,
    pub perf_ratio: f64,
    pub support_fraction: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum InterpretResult {
    Found(Found),
    NoSolution { reason: String, iterations: usize },
}

impl InterpretResult {
    pub fn found(&self) -> Option<&Found> {
        match self {
            InterpretResult::Found(f) => Some(f),
            InterpretResult::NoSolution { .. } => None,
        }
    }

    /// Performance ratio, 0 without a solution.
    pub fn perf(&self) -> f64 {
        self.found().map_or(0.0, |f| f.perf_ratio)
    }
}

/// A candidate formula with its evaluated return.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub formula: Formula,
    pub depth: usize,
    pub estimated_return: f64,
    pub ratio: f64,
    pub distinct_predicates: usize,
}

/// Rollout evaluation shared by every candidate of one run: the same seed
/// stream for all formulas, memoized by formula.
pub struct Evaluator<'a> {
    env: &'a EnvironmentSpec,
    set: &'a PredicateSet,
    rollouts: usize,
    seed: u64,
    cache: HashMap<Formula, f64>,
}

impl<'a> Evaluator<'a> {
    pub fn new(env: &'a EnvironmentSpec, set: &'a PredicateSet, rollouts: usize, seed: u64) -> Self {
        Evaluator { env, set, rollouts, seed, cache: HashMap::new() }
    }

    pub fn mean_return(&mut self, f: &Formula) -> Result<f64> {
        if let Some(v) = self.cache.get(f) {
            return Ok(*v);
        }
        let p = FormulaPolicy::new(self.env, self.set, f);
        let v = estimate_mean_return(self.env, &p, self.rollouts, self.seed)?.mean;
        self.cache.insert(f.clone(), v);
        Ok(v)
    }
}

/// Candidates for depth bounds 1..=d, the δ filter, and the choice of the
/// fewest-predicate survivor (then higher return, then canonical order).
fn choose(ds: &Dataset, train: &[usize], val: &[usize], cfg: &InterpretConfig, eval: &mut Evaluator) -> Result<Option<Candidate>> {
    let mut cands: Vec<Candidate> = Vec::new();
    for m in lpp_map_depths(ds, train, val, cfg.max_depth, cfg.lambda)?.into_iter().flatten() {
        if cands.iter().any(|c| c.formula == m.formula) {
            continue;
        }
        let r = eval.mean_return(&m.formula)?;
        cands.push(Candidate {
            distinct_predicates: m.formula.distinct_predicates(),
            formula: m.formula,
            depth: m.depth,
            estimated_return: r,
            ratio: r / cfg.mean_expert_reward,
        });
    }
    let top = cands.iter().map(|c| c.ratio).fold(f64::NEG_INFINITY, f64::max);
    Ok(cands
        .into_iter()
        .filter(|c| top < c.ratio + cfg.delta)
        .min_by(|a, b| {
            a.distinct_predicates
                .cmp(&b.distinct_predicates)
                .then(b.ratio.total_cmp(&a.ratio))
                .then(a.formula.cmp(&b.formula))
        }))
}

/// Evaluation seed of a run, distinct from its splitting stream.
pub fn eval_seed(seed: u64) -> u64 {
    seed ^ 0x5e_ed0f_e7a1
}

/// Adaptive clustering interpretation.
pub fn ai_interpret(ds: &Dataset, env: &EnvironmentSpec, set: &PredicateSet, cfg: &InterpretConfig) -> Result<InterpretResult> {
    cfg.validate()?;
    let mut clusterer = Clusterer::new(ds, cfg.heuristic())?;
    let mut eval = Evaluator::new(env, set, cfg.rollouts, eval_seed(cfg.seed));
    ai_interpret_with(&mut clusterer, &mut eval, cfg)
}

/// [`ai_interpret`] over a prepared clustering, so several cluster counts
/// can share one hierarchy and its cached heuristic values.
pub fn ai_interpret_with(clusterer: &mut Clusterer, eval: &mut Evaluator, cfg: &InterpretConfig) -> Result<InterpretResult> {
    cfg.validate()?;
    let ds = clusterer.ds;
    let total = ds.num_pairs() as f64;
    let mut clusters: Vec<(Vec<usize>, f64)> = Vec::new();
    for c in clusterer.clusters(cfg.clusters)? {
        if c.len() as f64 / total >= cfg.cut_size {
            let v = clusterer.value(&c)?;
            clusters.push((c, v));
        }
    }
    let mut rng = rollout_rng(cfg.seed, 1);
    let mut iterations = 0;
    while !clusters.is_empty() {
        iterations += 1;
        let (mut train, mut val) = (Vec::new(), Vec::new());
        for (c, _) in &clusters {
            let (t, v) = s_split(c, cfg.split, &mut rng);
            train.extend(t);
            val.extend(v);
        }
        train.sort_unstable();
        val.sort_unstable();
        if let Some(best) = choose(ds, &train, &val, cfg, eval)? {
            if best.ratio >= cfg.threshold() {
                let support = clusters.iter().map(|(c, _)| c.len()).sum::<usize>() as f64 / total;
                return Ok(InterpretResult::Found(Found {
                    formula: best.formula,
                    estimated_return: best.estimated_return,
                    perf_ratio: best.ratio,
                    support_fraction: support,
                    iterations,
                }));
            }
        }
        // Drop the least valuable cluster; the first one on ties.
        let worst = (0..clusters.len()).min_by(|&a, &b| clusters[a].1.total_cmp(&clusters[b].1).then(a.cmp(&b))).expect("non-empty");
        clusters.remove(worst);
    }
    Ok(InterpretResult::NoSolution { reason: "no formula reached the aspiration ratio on any cluster subset".into(), iterations })
}

fn attempt(ds: &Dataset, pairs: &[usize], cfg: &InterpretConfig, rng: &mut ChaCha8Rng, eval: &mut Evaluator) -> Result<Option<Candidate>> {
    let (train, val) = s_split(pairs, cfg.split, rng);
    Ok(choose(ds, &train, &val, cfg, eval)?.filter(|c| c.ratio >= cfg.threshold()))
}

/// One interpretation attempt on a single split of all pairs.
pub fn lpp_baseline(ds: &Dataset, env: &EnvironmentSpec, set: &PredicateSet, cfg: &InterpretConfig) -> Result<InterpretResult> {
    cfg.validate()?;
    let all: Vec<usize> = (0..ds.num_pairs()).collect();
    let mut rng = rollout_rng(cfg.seed, 1);
    let mut eval = Evaluator::new(env, set, cfg.rollouts, eval_seed(cfg.seed));
    Ok(match attempt(ds, &all, cfg, &mut rng, &mut eval)? {
        Some(c) => InterpretResult::Found(Found {
            formula: c.formula,
            estimated_return: c.estimated_return,
            perf_ratio: c.ratio,
            support_fraction: 1.0,
            iterations: 1,
        }),
        None => InterpretResult::NoSolution { reason: "the one-shot formula missed the aspiration ratio".into(), iterations: 1 },
    })
}

/// Binary search over the size of a random demonstration subset: halve after
/// a failure, grow by half the last change after a success, stop once the
/// step is within `patience` or a success is followed by a failure.
pub fn binary_interpret(ds: &Dataset, env: &EnvironmentSpec, set: &PredicateSet, cfg: &InterpretConfig) -> Result<InterpretResult> {
    cfg.validate()?;
    let all: Vec<usize> = (0..ds.num_pairs()).collect();
    let mut rng = rollout_rng(cfg.seed, 1);
    let mut eval = Evaluator::new(env, set, cfg.rollouts, eval_seed(cfg.seed));
    let mut current = all.clone();
    let mut last: Option<(Candidate, usize)> = None;
    let mut change = 0usize;
    let mut prev_success = false;
    let mut iterations = 0;
    loop {
        iterations += 1;
        let res = attempt(ds, &current, cfg, &mut rng, &mut eval)?;
        let success = res.is_some();
        if let Some(c) = res {
            last = Some((c, current.len()));
        }
        if success {
            if current.len() == all.len() {
                break;
            }
            let step = change.div_ceil(2);
            if step <= cfg.patience {
                break;
            }
            let mut pool = all.clone();
            pool.shuffle(&mut rng);
            pool.truncate((current.len() + step).min(all.len()));
            pool.sort_unstable();
            current = pool;
            change = step;
        } else {
            if prev_success {
                break;
            }
            let keep = current.len() / 2;
            let step = current.len() - keep;
            if keep == 0 || step <= cfg.patience {
                break;
            }
            current.shuffle(&mut rng);
            current.truncate(keep);
            current.sort_unstable();
            change = step;
        }
        prev_success = success;
    }
    Ok(match last {
        Some((c, n)) => InterpretResult::Found(Found {
            formula: c.formula,
            estimated_return: c.estimated_return,
            perf_ratio: c.ratio,
            support_fraction: n as f64 / all.len() as f64,
            iterations,
        }),
        None => InterpretResult::NoSolution { reason: "no subset size produced an acceptable formula".into(), iterations },
    })
}

pub fn interpret(method: Method, ds: &Dataset, env: &EnvironmentSpec, set: &PredicateSet, cfg: &InterpretConfig) -> Result<InterpretResult> {
    match method {
        Method::Ai => ai_interpret(ds, env, set, cfg),
        Method::Binary => binary_interpret(ds, env, set, cfg),
        Method::Lpp => lpp_baseline(ds, env, set, cfg),
    }
}

/// Number of demonstrated pairs the formula's policy can reproduce.
pub fn count_imitated(ds: &Dataset, formula: &Formula) -> usize {
    (0..ds.num_pairs()).filter(|&p| ds.imitates(formula, p)).count()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpretReport {
    pub method: Method,
    pub outcome: String,
    pub formula: Option<String>,
    pub estimated_return: Option<f64>,
    pub perf_ratio: f64,
    pub support_fraction: Option<f64>,
    pub iterations: usize,
    pub reason: Option<String>,
    pub grammar_fingerprint: String,
    pub config: InterpretConfig,
}

impl InterpretReport {
    pub fn new(method: Method, result: &InterpretResult, set: &PredicateSet, cfg: &InterpretConfig) -> Self {
        let base = InterpretReport {
            method,
            outcome: String::new(),
            formula: None,
            estimated_return: None,
            perf_ratio: 0.0,
            support_fraction: None,
            iterations: 0,
            reason: None,
            grammar_fingerprint: set.fingerprint().to_string(),
            config: cfg.clone(),
        };
        match result {
            InterpretResult::Found(f) => InterpretReport {
                outcome: "found".into(),
                formula: Some(f.formula.render(set)),
                estimated_return: Some(f.estimated_return),
                perf_ratio: f.perf_ratio,
                support_fraction: Some(f.support_fraction),
                iterations: f.iterations,
                ..base
            },
            InterpretResult::NoSolution { reason, iterations } => InterpretReport {
                outcome: "no_solution".into(),
                reason: Some(reason.clone()),
                iterations: *iterations,
                ..base
            },
        }
    }
}
