use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ai_interpret::bench::{run_benchmark_suite, SuiteConfig};
use ai_interpret::clustering::curve_table;
use ai_interpret::demos::{generate_demonstrations, negative_examples, DemonstrationSet};
use ai_interpret::dsl::{GrammarConfig, PredicateSet};
use ai_interpret::env::{EnvKind, EnvironmentSpec};
use ai_interpret::flowchart::{click_agreement, formula_to_tree, render, RenderFormat};
use ai_interpret::interpret::{interpret, InterpretConfig, InterpretReport, InterpretResult, Method};
use ai_interpret::lpp::{Dataset, Formula};
use ai_interpret::pipeline::{discover_on, select_tree, PipelineConfig};
use ai_interpret::solver::{solve, ValueTable};
use ai_interpret::{Error, Result};
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "ai-interpret", version, about = "Optimal Mouselab planning and interpretable strategy discovery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve an environment exactly and print the initial values.
    Solve {
        #[arg(long)]
        env: EnvKind,
        /// Value table cache; read when valid, written otherwise.
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Sample expert demonstrations.
    Demos {
        #[arg(long)]
        env: EnvKind,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Run one interpretation method on a demonstration file.
    Interpret {
        #[arg(long)]
        method: Method,
        #[arg(long)]
        demos: PathBuf,
        #[arg(long)]
        grammar: Option<PathBuf>,
        #[arg(long, default_value_t = 0.7)]
        alpha: f64,
        #[arg(long, default_value_t = 0.025)]
        delta: f64,
        #[arg(long, default_value_t = 100_000)]
        rollouts: usize,
        #[arg(long, default_value_t = 5)]
        max_depth: usize,
        #[arg(long, default_value_t = 18)]
        clusters: usize,
        #[arg(long, default_value_t = 0.025)]
        cut_size: f64,
        #[arg(long, default_value_t = 0.7)]
        split: f64,
        #[arg(long, default_value_t = 8)]
        patience: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Accept formulas at ratio ≥ alpha - delta.
        #[arg(long)]
        alpha_minus_delta: bool,
        /// Environment, when the demonstration file does not record it.
        #[arg(long)]
        env: Option<EnvKind>,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Elbow selection, interpretation per cluster count and flowcharts.
    Pipeline {
        #[arg(long)]
        env: EnvKind,
        #[arg(long, default_value_t = 64)]
        n_demos: usize,
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long)]
        clusters_override: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100_000)]
        rollouts: usize,
        #[arg(long)]
        grammar: Option<PathBuf>,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Benchmark suite over environments, demonstration counts and methods.
    Bench {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        runs: Option<usize>,
        /// 10,000 rollouts and 3 runs.
        #[arg(long)]
        fast: bool,
        /// Directory of value table caches.
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a formula as a flowchart.
    Render {
        #[arg(long)]
        formula: PathBuf,
        #[arg(long)]
        format: RenderFormat,
        #[arg(long)]
        grammar: Option<PathBuf>,
        /// Environment for question wording, when the file does not record it.
        #[arg(long)]
        env: Option<EnvKind>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Click agreement of recorded trajectories with a formula.
    Agreement {
        #[arg(long)]
        formula: PathBuf,
        #[arg(long)]
        trajectories: PathBuf,
        #[arg(long, default_value_t = 1000)]
        simulations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        grammar: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            eprintln!("{}", json!({ "error": { "kind": "usage", "message": msg.trim() } }));
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": { "kind": e.kind(), "message": e.to_string() } }));
            ExitCode::FAILURE
        }
    }
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("json value serializes") + "\n"
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(fs::write(path, text)?)
}

fn value_table(env: &EnvironmentSpec, cache: Option<&Path>) -> Result<ValueTable> {
    if let Some(p) = cache {
        if p.exists() {
            if let Ok(t) = ValueTable::load_cache(env, p) {
                return Ok(t);
            }
        }
    }
    let t = solve(env)?;
    if let Some(p) = cache {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        t.save_cache(p)?;
    }
    Ok(t)
}

fn predicate_set(grammar: Option<&Path>) -> Result<PredicateSet> {
    match grammar {
        Some(p) => PredicateSet::enumerate(&GrammarConfig::load(p)?),
        None => Ok(PredicateSet::shipped()),
    }
}

/// Formula file with the environment recorded next to it.
fn formula_file(f: &Formula, set: &PredicateSet, env: EnvKind) -> Result<Value> {
    let mut v: Value = serde_json::from_str(&f.to_file_string(set))?;
    v["env"] = json!(env);
    Ok(v)
}

/// Reads a formula file, or the formula embedded in an interpretation report.
fn load_formula(path: &Path, set: &PredicateSet) -> Result<(Formula, Option<EnvKind>)> {
    let top: Value = serde_json::from_str(&fs::read_to_string(path)?)?;
    let inner = match top.get("formula_file") {
        Some(Value::Null) => return Err(Error::Format("the report holds no formula".into())),
        Some(v) => v.clone(),
        None => top.clone(),
    };
    let env = top.get("env").or_else(|| inner.get("env")).cloned().map(serde_json::from_value).transpose()?;
    Ok((Formula::from_file_str(set, &inner.to_string())?, env))
}

fn read_demos(path: &Path, env_override: Option<EnvKind>) -> Result<(EnvKind, DemonstrationSet)> {
    let recorded = DemonstrationSet::peek_env_kind(BufReader::new(fs::File::open(path)?))?;
    let kind = env_override
        .or(recorded)
        .ok_or_else(|| Error::InvalidArgument("the demonstration file records no environment; pass --env".into()))?;
    let env = EnvironmentSpec::build(kind);
    Ok((kind, DemonstrationSet::read_jsonl(BufReader::new(fs::File::open(path)?), &env)?))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Solve { env, cache } => {
            let spec = EnvironmentSpec::build(env);
            let t = value_table(&spec, cache.as_deref())?;
            let b0 = spec.initial_belief();
            let q: Vec<Value> = t.q_values(&b0)?.into_iter().map(|(c, q)| json!({ "computation": c, "q": q })).collect();
            print!("{}", pretty(&json!({ "env": env, "value": t.initial_value(), "states": t.state_count(), "initial_q": q })));
        }
        Command::Demos { env, n, seed, out, cache } => {
            let spec = EnvironmentSpec::build(env);
            let t = value_table(&spec, cache.as_deref())?;
            let d = generate_demonstrations(&spec, &t, n, seed)?;
            let mut buf = Vec::new();
            d.write_jsonl(&mut buf)?;
            write(&out, std::str::from_utf8(&buf).expect("json is utf-8"))?;
            let clicks = d.click_indices().len();
            print!("{}", pretty(&json!({ "env": env, "n": n, "seed": seed, "pairs": d.len(), "clicks": clicks, "out": out })));
        }
        Command::Interpret {
            method,
            demos,
            grammar,
            alpha,
            delta,
            rollouts,
            max_depth,
            clusters,
            cut_size,
            split,
            patience,
            seed,
            alpha_minus_delta,
            env,
            cache,
            out,
        } => {
            let set = predicate_set(grammar.as_deref())?;
            let (kind, d) = read_demos(&demos, env)?;
            let spec = EnvironmentSpec::build(kind);
            let t = value_table(&spec, cache.as_deref())?;
            let cfg = InterpretConfig {
                alpha,
                delta,
                rollouts,
                max_depth,
                clusters,
                cut_size,
                split,
                patience,
                seed,
                mean_expert_reward: t.initial_value(),
                accept_alpha_minus_delta: alpha_minus_delta,
                ..InterpretConfig::default()
            };
            cfg.validate()?;
            let neg = negative_examples(&d, &t, cfg.tie_epsilon)?;
            let ds = Dataset::from_demos(&spec, &set, &d, &neg)?;
            let res = interpret(method, &ds, &spec, &set, &cfg)?;
            let mut report = serde_json::to_value(InterpretReport::new(method, &res, &set, &cfg))?;
            report["env"] = json!(kind);
            report["formula_file"] = match &res {
                InterpretResult::Found(f) => formula_file(&f.formula, &set, kind)?,
                InterpretResult::NoSolution { .. } => Value::Null,
            };
            write(&out, &pretty(&report))?;
            print!(
                "{}",
                pretty(&json!({ "outcome": report["outcome"], "formula": report["formula"], "perf_ratio": report["perf_ratio"], "out": out }))
            );
        }
        Command::Pipeline { env, n_demos, k, clusters_override, seed, rollouts, grammar, cache, out_dir } => {
            let set = predicate_set(grammar.as_deref())?;
            let spec = EnvironmentSpec::build(env);
            let t = value_table(&spec, cache.as_deref())?;
            let m = t.initial_value();
            let cfg = PipelineConfig {
                demos: n_demos,
                k,
                clusters_override,
                seed,
                interpret: InterpretConfig { rollouts, ..InterpretConfig::default() },
                ..PipelineConfig::default()
            };
            let d = generate_demonstrations(&spec, &t, n_demos, seed)?;
            let neg = negative_examples(&d, &t, cfg.interpret.tie_epsilon)?;
            let ds = Dataset::from_demos(&spec, &set, &d, &neg)?;
            let cs = discover_on(&ds, &spec, &set, m, &cfg)?;
            fs::create_dir_all(&out_dir)?;
            let mut buf = Vec::new();
            d.write_jsonl(&mut buf)?;
            write(&out_dir.join("demos.jsonl"), std::str::from_utf8(&buf).expect("json is utf-8"))?;
            if let Some(e) = &cs.elbow {
                write(&out_dir.join("cv_curve.tsv"), &curve_table(&e.curve))?;
            }
            let mut entries = Vec::new();
            for (i, c) in cs.candidates.iter().enumerate() {
                let tree = formula_to_tree(&c.formula, &set, &spec)?;
                let stem = format!("candidate_{i}");
                write(&out_dir.join(format!("{stem}.formula.json")), &pretty(&formula_file(&c.formula, &set, env)?))?;
                write(&out_dir.join(format!("{stem}.dot")), &render(&tree, RenderFormat::Dot))?;
                write(&out_dir.join(format!("{stem}.txt")), &render(&tree, RenderFormat::Ascii))?;
                entries.push(json!({
                    "clusters": c.clusters,
                    "seed": c.seed,
                    "formula": c.formula.render(&set),
                    "digest": c.formula.digest(&set),
                    "perf_ratio": c.perf_ratio,
                    "estimated_return": c.estimated_return,
                    "support_fraction": c.support_fraction,
                    "node_count": tree.node_count(),
                    "depth": tree.depth(),
                    "formula_file": format!("{stem}.formula.json"),
                    "dot": format!("{stem}.dot"),
                    "ascii": format!("{stem}.txt"),
                }));
            }
            let selected = match select_tree(&cs.candidates) {
                Ok(c) => {
                    let i = cs.candidates.iter().position(|x| std::ptr::eq(x, c)).expect("selected from the list");
                    let tree = formula_to_tree(&c.formula, &set, &spec)?;
                    write(&out_dir.join("selected.formula.json"), &pretty(&formula_file(&c.formula, &set, env)?))?;
                    write(&out_dir.join("selected.dot"), &render(&tree, RenderFormat::Dot))?;
                    write(&out_dir.join("selected.txt"), &render(&tree, RenderFormat::Ascii))?;
                    json!(i)
                }
                Err(_) => Value::Null,
            };
            let manifest = json!({
                "env": env,
                "expert_return": m,
                "grammar_fingerprint": set.fingerprint(),
                "config": cfg,
                "elbow": cs.elbow,
                "runs": cs.runs,
                "candidates": entries,
                "selected": selected,
            });
            write(&out_dir.join("manifest.json"), &pretty(&manifest))?;
            let formula = selected.as_u64().map(|i| manifest["candidates"][i as usize]["formula"].clone()).unwrap_or(Value::Null);
            print!("{}", pretty(&json!({ "candidates": cs.candidates.len(), "selected": formula, "out_dir": out_dir })));
        }
        Command::Bench { suite, runs, fast, cache_dir, out } => {
            let mut cfg = SuiteConfig::from_json(&fs::read_to_string(&suite)?)?;
            if let Some(r) = runs {
                cfg.runs = r;
            }
            if fast {
                cfg = cfg.fast();
            }
            let set = PredicateSet::shipped();
            let mut tables = BTreeMap::new();
            for &kind in &cfg.envs {
                let cache = cache_dir.as_ref().map(|d| d.join(format!("{}.vt", kind.name())));
                tables.insert(kind, value_table(&EnvironmentSpec::build(kind), cache.as_deref())?);
            }
            let report = run_benchmark_suite(&cfg, &set, &tables)?;
            write(&out, &pretty(&serde_json::to_value(&report)?))?;
            print!("{}", report.table());
        }
        Command::Render { formula, format, grammar, env, out } => {
            let set = predicate_set(grammar.as_deref())?;
            let (f, recorded) = load_formula(&formula, &set)?;
            let kind = env.or(recorded).ok_or_else(|| Error::InvalidArgument("the formula file records no environment; pass --env".into()))?;
            let tree = formula_to_tree(&f, &set, &EnvironmentSpec::build(kind))?;
            write(&out, &render(&tree, format))?;
        }
        Command::Agreement { formula, trajectories, simulations, seed, grammar } => {
            let set = predicate_set(grammar.as_deref())?;
            let (f, recorded) = load_formula(&formula, &set)?;
            let (kind, d) = read_demos(&trajectories, recorded)?;
            let spec = EnvironmentSpec::build(kind);
            let mut per = Vec::new();
            for t in &d.trajectories {
                per.push(click_agreement(t, &f, &set, &spec, simulations, seed)?);
            }
            let mean = per.iter().map(|a| a.ratio).sum::<f64>() / per.len().max(1) as f64;
            print!("{}", pretty(&json!({ "env": kind, "formula": f.render(&set), "mean_agreement": mean, "trajectories": per })));
        }
    }
    Ok(())
}
