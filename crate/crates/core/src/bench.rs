//! Benchmark suite: every (environment, demonstration count) cell is run
//! several times per method and scored by performance ratio, output entropy
//! and success rate.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::clustering::DEFAULT_GRID;
use crate::demos::{estimate_mean_return, generate_demonstrations, negative_examples};
use crate::dsl::PredicateSet;
use crate::env::{EnvKind, EnvironmentSpec};
use crate::error::{Error, Result};
use crate::flowchart::formula_to_tree_structure;
use crate::interpret::{interpret, InterpretConfig, InterpretResult, Method};
use crate::lpp::{Dataset, Formula, FormulaPolicy};
use crate::pipeline::{derive_seed, discover_on, select_tree, PipelineConfig};
use crate::solver::ValueTable;

/// m_f / m. A run without a formula scores 0 through its caller.
pub fn perf_ratio(m_f: f64, m: f64) -> Result<f64> {
    if !(m > 0.0) {
        return Err(Error::InvalidArgument(format!("expert return must be positive, got {m}")));
    }
    Ok(m_f / m)
}

/// Shannon entropy (nats) of the outcome distribution. `None` marks a
/// failed run; all failures form one class.
pub fn output_entropy(outcomes: &[Option<String>]) -> f64 {
    let mut counts: HashMap<Option<&str>, usize> = HashMap::new();
    for o in outcomes {
        *counts.entry(o.as_deref()).or_default() += 1;
    }
    let n = outcomes.len() as f64;
    let mut ps: Vec<f64> = counts.values().map(|&c| c as f64 / n).collect();
    ps.sort_by(f64::total_cmp);
    -ps.iter().map(|p| p * p.ln()).sum::<f64>() + 0.0
}

pub fn success_rate(outcomes: &[Option<String>]) -> f64 {
    if outcomes.is_empty() {
        return 0.0;
    }
    outcomes.iter().filter(|o| o.is_some()).count() as f64 / outcomes.len() as f64
}

/// Mean and 95% t-interval half width; the width is 0 for fewer than two
/// values or no spread.
pub fn mean_ci95(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return (mean, 0.0);
    }
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("valid degrees of freedom").inverse_cdf(0.975);
    (mean, t * (var / n as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub envs: Vec<EnvKind>,
    pub demo_sizes: Vec<usize>,
    pub methods: Vec<Method>,
    pub runs: usize,
    pub seed: u64,
    /// Cluster counts picked from the elbow for AI-Interpret.
    pub k: usize,
    pub grid: Vec<usize>,
    /// Shared method parameters; `mean_expert_reward` and `seed` are set per run.
    pub interpret: InterpretConfig,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            envs: EnvKind::ALL.to_vec(),
            demo_sizes: vec![8, 64, 128],
            methods: vec![Method::Ai, Method::Binary, Method::Lpp],
            runs: 10,
            seed: 0,
            k: 4,
            grid: DEFAULT_GRID.collect(),
            interpret: InterpretConfig::default(),
        }
    }
}

impl SuiteConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: SuiteConfig = serde_json::from_str(text)?;
        c.check()?;
        Ok(c)
    }

    /// L = 10,000 rollouts and 3 runs.
    pub fn fast(mut self) -> Self {
        self.interpret.rollouts = 10_000;
        self.runs = 3;
        self
    }

    pub fn check(&self) -> Result<()> {
        if self.envs.is_empty() || self.demo_sizes.is_empty() || self.methods.is_empty() {
            return Err(Error::InvalidArgument("suite needs environments, demonstration sizes and methods".into()));
        }
        if self.runs == 0 || self.k == 0 || self.demo_sizes.contains(&0) {
            return Err(Error::InvalidArgument("runs, k and demonstration sizes must be positive".into()));
        }
        InterpretConfig { mean_expert_reward: 1.0, ..self.interpret.clone() }.validate()
    }

    /// Seed of run `run` in cell (`env`, `x`), independent of suite order.
    pub fn run_seed(&self, env: EnvKind, x: usize, run: usize) -> u64 {
        let cell = derive_seed(derive_seed(self.seed, env as u64), x as u64);
        derive_seed(cell, run as u64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub found: bool,
    pub formula: Option<String>,
    pub digest: Option<String>,
    /// Fresh L-rollout estimate of the formula's return; 0 without one.
    pub m_f: f64,
    pub perf: f64,
    pub tree_nodes: Option<usize>,
    pub support_fraction: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub env: EnvKind,
    pub demos: usize,
    pub method: Method,
    pub expert_return: f64,
    pub perf_mean: f64,
    pub perf_ci95: f64,
    pub entropy: f64,
    pub success: f64,
    /// Mean tree size over successful runs.
    pub complexity: Option<f64>,
    pub support: Option<f64>,
    pub runs: Vec<RunRecord>,
}

impl CellReport {
    /// Aggregates from the per-run records alone.
    pub fn aggregate(env: EnvKind, demos: usize, method: Method, expert_return: f64, runs: Vec<RunRecord>) -> Self {
        let perfs: Vec<f64> = runs.iter().map(|r| r.perf).collect();
        let (perf_mean, perf_ci95) = mean_ci95(&perfs);
        let outcomes: Vec<Option<String>> = runs.iter().map(|r| r.digest.clone()).collect();
        let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        CellReport {
            env,
            demos,
            method,
            expert_return,
            perf_mean,
            perf_ci95,
            entropy: output_entropy(&outcomes),
            success: success_rate(&outcomes),
            complexity: mean(runs.iter().filter_map(|r| r.tree_nodes.map(|n| n as f64)).collect()),
            support: mean(runs.iter().filter_map(|r| r.support_fraction).collect()),
            runs,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub perf_mean: f64,
    pub perf_ci95: f64,
    pub success: f64,
    pub entropy: f64,
    pub min_cell_success: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub grammar_fingerprint: String,
    pub config: SuiteConfig,
    pub cells: Vec<CellReport>,
    pub summary: Vec<MethodSummary>,
}

impl BenchmarkReport {
    /// Report from cells, recomputing every aggregate from run records.
    pub fn assemble(grammar_fingerprint: String, config: SuiteConfig, cells: Vec<CellReport>) -> Self {
        let cells: Vec<CellReport> = cells
            .into_iter()
            .map(|c| CellReport::aggregate(c.env, c.demos, c.method, c.expert_return, c.runs))
            .collect();
        let summary = config
            .methods
            .iter()
            .map(|&method| {
                let mine: Vec<&CellReport> = cells.iter().filter(|c| c.method == method).collect();
                let perfs: Vec<f64> = mine.iter().flat_map(|c| c.runs.iter().map(|r| r.perf)).collect();
                let (perf_mean, perf_ci95) = mean_ci95(&perfs);
                let n = mine.len().max(1) as f64;
                MethodSummary {
                    method,
                    perf_mean,
                    perf_ci95,
                    success: mine.iter().map(|c| c.success).sum::<f64>() / n,
                    entropy: mine.iter().map(|c| c.entropy).sum::<f64>() / n,
                    min_cell_success: mine.iter().map(|c| c.success).fold(1.0, f64::min),
                }
            })
            .collect();
        BenchmarkReport { grammar_fingerprint, config, cells, summary }
    }

    /// Recomputes all aggregates from the stored run records.
    pub fn regenerate(&self) -> Self {
        BenchmarkReport::assemble(self.grammar_fingerprint.clone(), self.config.clone(), self.cells.clone())
    }

    pub fn method(&self, m: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == m)
    }

    /// Fixed-width table of the cells, one row per (benchmark, method).
    pub fn table(&self) -> String {
        let mut s = format!("{:<5} {:<11} {:<7} {:>17} {:>6} {:>5} {:>6}\n", "x", "env", "method", "perf", "entr", "succ", "nodes");
        for c in &self.cells {
            s.push_str(&format!(
                "{:<5} {:<11} {:<7} {:>8.2}% ±{:>6.2}% {:>6.2} {:>4.0}% {:>6}\n",
                c.demos,
                c.env.name(),
                method_name(c.method),
                100.0 * c.perf_mean,
                100.0 * c.perf_ci95,
                c.entropy,
                100.0 * c.success,
                c.complexity.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into()),
            ));
        }
        for m in &self.summary {
            s.push_str(&format!(
                "{:<5} {:<11} {:<7} {:>8.2}% ±{:>6.2}% {:>6.2} {:>4.0}%\n",
                "all",
                "average",
                method_name(m.method),
                100.0 * m.perf_mean,
                100.0 * m.perf_ci95,
                m.entropy,
                100.0 * m.success
            ));
        }
        s
    }
}

pub fn method_name(m: Method) -> &'static str {
    match m {
        Method::Ai => "ai",
        Method::Binary => "binary",
        Method::Lpp => "lpp",
    }
}

struct Outcome {
    formula: Formula,
    support: f64,
}

/// One method on one prepared dataset. AI-Interpret goes through the
/// discovery pipeline and keeps the selected tree.
fn run_method(method: Method, ds: &Dataset, env: &EnvironmentSpec, set: &PredicateSet, cfg: &SuiteConfig, m: f64, seed: u64) -> Result<Option<Outcome>> {
    let icfg = InterpretConfig { mean_expert_reward: m, seed, ..cfg.interpret.clone() };
    if method == Method::Ai {
        let pcfg = PipelineConfig {
            demos: 0,
            k: cfg.k,
            grid: cfg.grid.clone(),
            clusters_override: None,
            interpret: icfg,
            seed,
        };
        let cs = discover_on(ds, env, set, m, &pcfg)?;
        return Ok(select_tree(&cs.candidates).ok().map(|c| Outcome { formula: c.formula.clone(), support: c.support_fraction }));
    }
    Ok(match interpret(method, ds, env, set, &icfg)? {
        InterpretResult::Found(f) => Some(Outcome { formula: f.formula, support: f.support_fraction }),
        InterpretResult::NoSolution { .. } => None,
    })
}

struct Job {
    env: EnvKind,
    x: usize,
    run: usize,
}

fn run_job(job: &Job, cfg: &SuiteConfig, set: &PredicateSet, tables: &BTreeMap<EnvKind, ValueTable>) -> Result<Vec<RunRecord>> {
    let env = EnvironmentSpec::build(job.env);
    let table = tables.get(&job.env).ok_or_else(|| Error::InvalidArgument(format!("no value table for {}", job.env)))?;
    let m = table.initial_value();
    let seed = cfg.run_seed(job.env, job.x, job.run);
    let demos = generate_demonstrations(&env, table, job.x, seed)?;
    let neg = negative_examples(&demos, table, cfg.interpret.tie_epsilon)?;
    let ds = Dataset::from_demos(&env, set, &demos, &neg)?;
    let eval_seed = derive_seed(seed, 1);
    let mut out = Vec::new();
    for &method in &cfg.methods {
        let rec = match run_method(method, &ds, &env, set, cfg, m, seed)? {
            Some(o) => {
                let policy = FormulaPolicy::new(&env, set, &o.formula);
                let m_f = estimate_mean_return(&env, &policy, cfg.interpret.rollouts, eval_seed)?.mean;
                RunRecord {
                    run: job.run,
                    seed,
                    found: true,
                    digest: Some(o.formula.digest(set)),
                    formula: Some(o.formula.render(set)),
                    m_f,
                    perf: perf_ratio(m_f, m)?,
                    tree_nodes: Some(formula_to_tree_structure(&o.formula).node_count()),
                    support_fraction: Some(o.support),
                }
            }
            None => RunRecord {
                run: job.run,
                seed,
                found: false,
                formula: None,
                digest: None,
                m_f: 0.0,
                perf: 0.0,
                tree_nodes: None,
                support_fraction: None,
            },
        };
        out.push(rec);
    }
    Ok(out)
}

/// Runs the whole suite. `tables` must hold a solved table for every
/// environment in the suite. Jobs run in parallel; assembly is ordered.
pub fn run_benchmark_suite(cfg: &SuiteConfig, set: &PredicateSet, tables: &BTreeMap<EnvKind, ValueTable>) -> Result<BenchmarkReport> {
    cfg.check()?;
    let mut jobs = Vec::new();
    for &env in &cfg.envs {
        for &x in &cfg.demo_sizes {
            for run in 0..cfg.runs {
                jobs.push(Job { env, x, run });
            }
        }
    }
    let results: Vec<Vec<RunRecord>> = jobs.par_iter().map(|j| run_job(j, cfg, set, tables)).collect::<Result<_>>()?;
    let mut cells = Vec::new();
    for &env in &cfg.envs {
        let m = tables[&env].initial_value();
        for &x in &cfg.demo_sizes {
            for (mi, &method) in cfg.methods.iter().enumerate() {
                let runs = jobs
                    .iter()
                    .zip(&results)
                    .filter(|(j, _)| j.env == env && j.x == x)
                    .map(|(_, r)| r[mi].clone())
                    .collect();
                cells.push(CellReport::aggregate(env, x, method, m, runs));
            }
        }
    }
    Ok(BenchmarkReport::assemble(set.fingerprint().to_string(), cfg.clone(), cells))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_pins() {
        let mut o: Vec<Option<String>> = vec![None; 9];
        o.push(Some("a".into()));
        assert!((output_entropy(&o) - 0.325).abs() < 0.001);
        let d: Vec<Option<String>> = (0..10).map(|i| Some(i.to_string())).collect();
        assert!((output_entropy(&d) - 10f64.ln()).abs() < 1e-12);
        assert_eq!(output_entropy(&vec![Some("f".to_string()); 10]), 0.0);
    }

    #[test]
    fn ratios_and_rates() {
        assert!((perf_ratio(39.17, 39.97).unwrap() - 0.98).abs() < 1e-4);
        assert_eq!(perf_ratio(0.0, 3.0).unwrap(), 0.0);
        assert_eq!(perf_ratio(5.0, 5.0).unwrap(), 1.0);
        assert!(perf_ratio(1.0, 0.0).is_err());
        let o: Vec<Option<String>> = (0..10).map(|i| (i < 7).then(|| "f".to_string())).collect();
        assert!((success_rate(&o) - 0.7).abs() < 1e-12);
        assert_eq!(success_rate(&[None, None]), 0.0);
    }

    #[test]
    fn t_interval() {
        let (m, h) = mean_ci95(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        // t(0.975, 2) = 4.302653
        assert!((h - 4.302653 / 3f64.sqrt()).abs() < 1e-5);
        assert_eq!(mean_ci95(&[0.5; 4]), (0.5, 0.0));
    }
}
