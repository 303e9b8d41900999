//! Acceptance criteria, one PASS/FAIL line each. Runs without the test
//! harness so every line shows up; the exit status is nonzero on any FAIL.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use ai_interpret::bench::{output_entropy, run_benchmark_suite, BenchmarkReport, SuiteConfig};
use ai_interpret::clustering::upgma_cut;
use ai_interpret::demos::{estimate_mean_return, generate_demonstrations, negative_examples};
use ai_interpret::dsl::{BinaryMatrix, PredicateSet};
use ai_interpret::env::{Belief, Computation, EnvKind, EnvironmentSpec, TreeStructure};
use ai_interpret::flowchart::{formula_to_tree_structure, reference_policy};
use ai_interpret::interpret::{ai_interpret, InterpretConfig, Method};
use ai_interpret::lpp::{extract_dnf, induce_tree, Dataset, Formula, FormulaPolicy, Literal};
use ai_interpret::pipeline::derive_seed;
use ai_interpret::solver::{solve, ValueTable};

const ROLLOUTS: usize = 100_000;

struct Tally {
    failed: Vec<String>,
}

impl Tally {
    fn line(&mut self, id: &str, pass: bool, detail: String) {
        println!("{} {id}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed.push(id.to_string());
        }
    }
}

fn tables() -> BTreeMap<EnvKind, ValueTable> {
    EnvKind::ALL.iter().map(|&k| (k, solve(&EnvironmentSpec::build(k)).unwrap())).collect()
}

fn values(t: &mut Tally, tables: &BTreeMap<EnvKind, ValueTable>) {
    for (kind, want) in [(EnvKind::Increasing, 39.97), (EnvKind::Decreasing, 30.14), (EnvKind::Constant, 9.33)] {
        let v = tables[&kind].initial_value();
        t.line(&format!("1.{}", kind.name()), (v - want).abs() <= 0.05, format!("V(b0) = {v:.4}, target {want} ± 0.05"));
    }
}

const HAND: [(EnvKind, &str); 3] = [
    (EnvKind::Increasing, "among(not(is_observed), has_largest_depth) and not(is_previous_observed_max)"),
    (EnvKind::Decreasing, "has_smallest_depth"),
    (
        EnvKind::Constant,
        "not(has_largest_depth) and is_on_best_expected_path and not(max_observed_on_best_path) or has_largest_depth and is_successor_of_max_observed",
    ),
];

fn target_score(kind: EnvKind) -> f64 {
    match kind {
        EnvKind::Increasing => 39.17,
        EnvKind::Decreasing => 28.47,
        EnvKind::Constant => 7.03,
        EnvKind::Different => unreachable!(),
    }
}

fn reference_scores(t: &mut Tally, set: &PredicateSet) {
    for (kind, text) in HAND {
        let env = EnvironmentSpec::build(kind);
        let want = target_score(kind);
        let r = estimate_mean_return(&env, &reference_policy(kind).unwrap(), ROLLOUTS, 7).unwrap();
        t.line(
            &format!("2.{}", kind.name()),
            (r.mean - want).abs() <= 0.3,
            format!("reference strategy scores {:.3} (se {:.3}) over {ROLLOUTS} rollouts, target {want} ± 0.3", r.mean, r.stderr),
        );
        let f = Formula::parse(set, text).unwrap();
        let h = estimate_mean_return(&env, &FormulaPolicy::new(&env, set, &f), ROLLOUTS, 7).unwrap();
        t.line(
            &format!("3.{}", kind.name()),
            (h.mean - want).abs() <= 0.3,
            format!("hand formula scores {:.3} (se {:.3}), target {want} ± 0.3; reference strategy {:.3}", h.mean, h.stderr, r.mean),
        );
    }
}

fn increasing_runs(t: &mut Tally, set: &PredicateSet, table: &ValueTable) {
    let env = EnvironmentSpec::build(EnvKind::Increasing);
    let m = table.initial_value();
    let perfs: Vec<Option<f64>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..10u64)
            .map(|seed| {
                let env = &env;
                s.spawn(move || {
                    let demos = generate_demonstrations(env, table, 64, seed).unwrap();
                    let neg = negative_examples(&demos, table, 1e-9).unwrap();
                    let ds = Dataset::from_demos(env, set, &demos, &neg).unwrap();
                    let cfg = InterpretConfig { mean_expert_reward: m, rollouts: ROLLOUTS, clusters: 18, seed, ..InterpretConfig::default() };
                    ai_interpret(&ds, env, set, &cfg).unwrap().found().map(|f| f.perf_ratio)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let found = perfs.iter().flatten().count();
    let good = perfs.iter().flatten().filter(|p| **p >= 0.9).count();
    let shown: Vec<String> = perfs.iter().map(|p| p.map_or("none".into(), |p| format!("{p:.3}"))).collect();
    t.line("4", found == 10 && good == 10, format!("increasing, 64 demos, 18 clusters: {found}/10 found, {good}/10 with perf ≥ 0.9 [{}]", shown.join(" ")));
}

fn suite_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/suite.json")
}

fn suite(t: &mut Tally, set: &PredicateSet, tables: &BTreeMap<EnvKind, ValueTable>) {
    let full = SuiteConfig::from_json(&std::fs::read_to_string(suite_path()).unwrap()).unwrap();
    for (profile, cfg, limit) in [("fast", full.clone().fast(), 900.0), ("full", full, 7200.0)] {
        let start = Instant::now();
        let report = run_benchmark_suite(&cfg, set, tables).unwrap();
        let secs = start.elapsed().as_secs_f64();
        let cells = report.cells.len() / cfg.methods.len();
        t.line(
            &format!("5.{profile}.time"),
            secs <= limit,
            format!("{profile} profile, {cells} cells x {} runs x {} rollouts, took {secs:.0} s, limit {limit} s", cfg.runs, cfg.interpret.rollouts),
        );
        check_report(t, profile, &report);
    }
}

fn check_report(t: &mut Tally, profile: &str, report: &BenchmarkReport) {
    let low: Vec<String> = report
        .cells
        .iter()
        .filter(|c| c.method == Method::Ai && c.success < 0.8)
        .map(|c| format!("{}-{} {:.2}", c.env.name(), c.demos, c.success))
        .collect();
    let cells = report.cells.iter().filter(|c| c.method == Method::Ai).count();
    t.line(
        &format!("5.{profile}.cell_success"),
        low.is_empty(),
        format!("SUCC(AI) ≥ 0.8 in {}/{cells} cells; below: [{}]", cells - low.len(), low.join(", ")),
    );
    let (ai, bin, lpp) = (report.method(Method::Ai).unwrap(), report.method(Method::Binary).unwrap(), report.method(Method::Lpp).unwrap());
    t.line(
        &format!("5.{profile}.success_order"),
        ai.success > bin.success && bin.success >= lpp.success,
        format!("SUCC ai {:.3} > binary {:.3} ≥ lpp {:.3}", ai.success, bin.success, lpp.success),
    );
    t.line(
        &format!("5.{profile}.perf_order"),
        ai.perf_mean > bin.perf_mean && bin.perf_mean > lpp.perf_mean,
        format!("PERF ai {:.3} > binary {:.3} > lpp {:.3}", ai.perf_mean, bin.perf_mean, lpp.perf_mean),
    );
}

fn entropy(t: &mut Tally) {
    let mut one: Vec<Option<String>> = vec![None; 9];
    one.push(Some("f".into()));
    let a = output_entropy(&one);
    let all: Vec<Option<String>> = (0..10).map(|i| Some(i.to_string())).collect();
    let b = output_entropy(&all);
    t.line("6", (a - 0.325).abs() <= 0.001 && (b - 2.303).abs() <= 0.001, format!("entropy {a:.4} and {b:.4}, targets 0.325 and 2.303 ± 0.001"));
}

/// Deterministic stream of 64-bit draws.
struct Draws(u64, u64);

impl Draws {
    fn next(&mut self) -> u64 {
        self.1 += 1;
        derive_seed(self.0, self.1)
    }

    fn below(&mut self, n: u64) -> u64 {
        self.next() % n
    }
}

fn tree_equivalence(t: &mut Tally) {
    let mut d = Draws(1, 0);
    let mut bad = 0;
    let cases = 200;
    for _ in 0..cases {
        let k = 1 + d.below(12) as usize;
        let rows: Vec<Vec<bool>> = (0..1 + d.below(60)).map(|_| (0..k).map(|_| d.below(2) == 1).collect()).collect();
        let labels = (0..rows.len()).map(|_| d.below(2) == 1).collect();
        let tree = induce_tree(&BinaryMatrix::from_rows(&rows, labels), 1 + d.below(6) as usize).unwrap();
        let f = extract_dnf(&tree);
        if (0u32..1 << k).any(|bits| tree.classify(|i| bits >> i & 1 == 1) != f.accepts(|i| bits >> i & 1 == 1)) {
            bad += 1;
        }
    }
    t.line("7.extract_dnf", bad == 0, format!("extracted formula equals the tree on all inputs in {}/{cases} random trees, k ≤ 12", cases - bad));

    let mut bad = 0;
    for _ in 0..cases {
        let k = 1 + d.below(12) as usize;
        let conj: Vec<Vec<Literal>> = (0..d.below(5))
            .map(|_| {
                (0..1 + d.below(3))
                    .map(|_| {
                        let p = d.below(k as u64) as usize;
                        if d.below(2) == 1 { Literal::neg(p) } else { Literal::pos(p) }
                    })
                    .collect()
            })
            .collect();
        let f = Formula::new(conj);
        let tree = formula_to_tree_structure(&f);
        if (0u32..1 << k).any(|bits| tree.classify(|i| bits >> i & 1 == 1) != f.accepts(|i| bits >> i & 1 == 1)) {
            bad += 1;
        }
    }
    t.line("7.formula_to_tree", bad == 0, format!("flowchart equals its formula on all inputs in {}/{cases} random formulas, k ≤ 12", cases - bad));
}

/// Agglomeration recomputing every average linkage from member lists,
/// ties to the smallest (min member, min member) pair.
fn naive_upgma(v: &[u64], k: usize) -> Vec<Vec<usize>> {
    let mut cl: Vec<Vec<usize>> = (0..v.len()).map(|i| vec![i]).collect();
    while cl.len() > k {
        let mut best: Option<(u64, u64, usize, usize)> = None;
        for i in 0..cl.len() {
            for j in i + 1..cl.len() {
                let s: u64 = cl[i].iter().flat_map(|&a| cl[j].iter().map(move |&b| (v[a] ^ v[b]).count_ones() as u64)).sum();
                let c = (cl[i].len() * cl[j].len()) as u64;
                let better = best.is_none_or(|(bs, bc, _, _)| s * bc < bs * c);
                if better {
                    best = Some((s, c, i, j));
                }
            }
        }
        let (_, _, i, j) = best.unwrap();
        let moved = cl.remove(j);
        cl[i].extend(moved);
        cl[i].sort_unstable();
        cl.sort();
    }
    cl
}

fn upgma_equivalence(t: &mut Tally) {
    let mut d = Draws(2, 0);
    let cases = 300;
    let mut bad = 0;
    for _ in 0..cases {
        let width = 1 + d.below(6);
        let v: Vec<u64> = (0..1 + d.below(8)).map(|_| d.next() & ((1 << width) - 1)).collect();
        let wrapped: Vec<Vec<u64>> = v.iter().map(|&x| vec![x]).collect();
        if (1..=v.len()).any(|k| upgma_cut(&wrapped, k).unwrap().clusters != naive_upgma(&v, k)) {
            bad += 1;
        }
    }
    t.line("7.upgma", bad == 0, format!("clustering equals brute-force agglomeration at every cut in {}/{cases} sets of ≤ 8 vectors", cases - bad));
}

fn expectimax(env: &EnvironmentSpec, slots: &mut Vec<Option<i32>>) -> f64 {
    let b = Belief::from_slots(slots, &[]).unwrap();
    let mut best = env.termination_reward(&b) as f64;
    for n in 1..=slots.len() {
        if slots[n - 1].is_none() {
            let support = env.support_of(n).to_vec();
            let mut sum = 0.0;
            for x in &support {
                slots[n - 1] = Some(*x);
                sum += expectimax(env, slots);
            }
            slots[n - 1] = None;
            best = best.max(sum / support.len() as f64 - env.click_cost as f64);
        }
    }
    best
}

fn solver_equivalence(t: &mut Tally) {
    let tree = TreeStructure::from_parents(&[None, Some(0), Some(1), Some(2), Some(2)]).unwrap();
    let env = EnvironmentSpec::custom(tree, vec![vec![-2, 2], vec![-4, 4], vec![-8, 8]], 1).unwrap();
    let table = solve(&env).unwrap();
    let mut states = vec![vec![]];
    for n in env.tree.reward_nodes() {
        states = states
            .into_iter()
            .flat_map(|s: Vec<Option<i32>>| {
                std::iter::once(None).chain(env.support_of(n).iter().map(|x| Some(*x))).map(move |x| {
                    let mut s = s.clone();
                    s.push(x);
                    s
                })
            })
            .collect();
    }
    let mut worst: f64 = 0.0;
    for s in &states {
        let b = Belief::from_slots(s, &[]).unwrap();
        worst = worst.max((table.value(&b).unwrap() - expectimax(&env, &mut s.clone())).abs());
    }
    let stop = table.q_values(&env.initial_belief()).unwrap().iter().any(|(c, _)| *c == Computation::Terminate);
    t.line("7.solver", worst < 1e-9 && stop, format!("solver equals expectimax on every belief of a 1-1-2 tree ({} beliefs, max error {worst:.1e})", states.len()));
}

fn cli_repeatability(t: &mut Tally) {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cache = dir.join("increasing.vt");
    let run = |args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_ai-interpret")).args(args).output().unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        out.stdout
    };
    let p = |x: &Path| x.to_str().unwrap().to_string();
    let mut files = Vec::new();
    // Same paths both times, since outputs echo them.
    for _ in 0..2 {
        let d = dir.join("out");
        let mut got = vec![run(&["solve", "--env", "increasing", "--cache", &p(&cache)])];
        got.push(run(&["demos", "--env", "increasing", "--n", "16", "--seed", "3", "--out", &p(&d.join("d.jsonl")), "--cache", &p(&cache)]));
        got.push(run(&["pipeline", "--env", "increasing", "--n-demos", "16", "--k", "2", "--seed", "3", "--rollouts", "3000", "--cache", &p(&cache), "--out-dir", &p(&d.join("pipe"))]));
        let mut names: Vec<PathBuf> = std::fs::read_dir(d.join("pipe")).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        for n in names {
            got.push(std::fs::read(n).unwrap());
        }
        got.push(std::fs::read(d.join("d.jsonl")).unwrap());
        std::fs::remove_dir_all(&d).unwrap();
        files.push(got);
    }
    let (same, outputs) = (files[0] == files[1], files[0].len());
    t.line("8", same, format!("{outputs} outputs of solve, demos and pipeline byte-identical across two runs"));
}

fn main() {
    let mut t = Tally { failed: Vec::new() };
    let set = PredicateSet::shipped();
    let tables = tables();
    values(&mut t, &tables);
    reference_scores(&mut t, &set);
    increasing_runs(&mut t, &set, &tables[&EnvKind::Increasing]);
    suite(&mut t, &set, &tables);
    entropy(&mut t);
    tree_equivalence(&mut t);
    upgma_equivalence(&mut t);
    solver_equivalence(&mut t);
    cli_repeatability(&mut t);
    if !t.failed.is_empty() {
        println!("failed: {}", t.failed.join(", "));
        std::process::exit(1);
    }
}
