//! Question-tree flowcharts for formulas, hand-coded reference strategies
//! and click agreement.

use std::fmt::Write as _;

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::demos::{rollout, rollout_rng, Trajectory};
use crate::dsl::PredicateSet;
use crate::env::{Belief, Computation, EnvKind, EnvironmentSpec, NodeId};
use crate::error::{Error, Result};
use crate::lpp::{pick_bit, Formula, FormulaPolicy, Literal};
use crate::policy::Policy;

pub const CLICK_IT: &str = "Click it";
pub const DONT_CLICK_IT: &str = "Don't click it";

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FlowNode {
    Terminal(bool),
    Question { predicate: usize, text: String, yes: Box<FlowNode>, no: Box<FlowNode> },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlowTree {
    pub root: FlowNode,
}

impl FlowNode {
    fn questions(&self) -> usize {
        match self {
            FlowNode::Terminal(_) => 0,
            FlowNode::Question { yes, no, .. } => 1 + yes.questions() + no.questions(),
        }
    }

    fn depth(&self) -> usize {
        match self {
            FlowNode::Terminal(_) => 0,
            FlowNode::Question { yes, no, .. } => 1 + yes.depth().max(no.depth()),
        }
    }
}

impl FlowTree {
    /// Number of question nodes; terminals are not counted.
    pub fn node_count(&self) -> usize {
        self.root.questions()
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn classify(&self, value: impl Fn(usize) -> bool) -> bool {
        let mut n = &self.root;
        loop {
            match n {
                FlowNode::Terminal(c) => return *c,
                FlowNode::Question { predicate, yes, no, .. } => n = if value(*predicate) { yes } else { no },
            }
        }
    }
}

/// Expands the formula question by question in canonical literal order.
/// Each question keeps, on each branch, the conjunctions still satisfiable,
/// so conjunctions sharing a literal prefix share the questions.
fn expand(conjs: Vec<Vec<Literal>>, text: &dyn Fn(usize) -> String) -> FlowNode {
    if conjs.is_empty() {
        return FlowNode::Terminal(false);
    }
    if conjs.iter().any(|c| c.is_empty()) {
        return FlowNode::Terminal(true);
    }
    let p = conjs[0][0].predicate;
    let branch = |answer: bool| {
        conjs
            .iter()
            .filter_map(|c| match c.iter().position(|l| l.predicate == p) {
                None => Some(c.clone()),
                Some(i) if c[i].holds(answer) => {
                    let mut c = c.clone();
                    c.remove(i);
                    Some(c)
                }
                Some(_) => None,
            })
            .collect::<Vec<_>>()
    };
    let yes = expand(branch(true), text);
    let no = expand(branch(false), text);
    if yes == no {
        return yes;
    }
    FlowNode::Question { predicate: p, text: text(p), yes: Box::new(yes), no: Box::new(no) }
}

/// Question tree without English text.
pub fn formula_to_tree_structure(formula: &Formula) -> FlowTree {
    FlowTree { root: expand(formula.disjuncts().to_vec(), &|_| String::new()) }
}

/// Question tree with each question phrased by the grammar's templates.
pub fn formula_to_tree(formula: &Formula, set: &PredicateSet, env: &EnvironmentSpec) -> Result<FlowTree> {
    let mut texts = std::collections::BTreeMap::new();
    for p in formula.predicates() {
        texts.insert(p, set.english(set.predicate(p), env)?);
    }
    Ok(FlowTree { root: expand(formula.disjuncts().to_vec(), &|p| texts[&p].clone()) })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderFormat {
    Dot,
    Ascii,
}

impl std::str::FromStr for RenderFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot" => Ok(RenderFormat::Dot),
            "ascii" => Ok(RenderFormat::Ascii),
            other => Err(Error::UnknownFormat(other.to_string())),
        }
    }
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

pub fn render(tree: &FlowTree, format: RenderFormat) -> String {
    match format {
        RenderFormat::Dot => render_dot(tree),
        RenderFormat::Ascii => render_ascii(tree),
    }
}

fn render_dot(tree: &FlowTree) -> String {
    fn visit(n: &FlowNode, next: &mut usize, out: &mut String) -> usize {
        let id = *next;
        *next += 1;
        match n {
            FlowNode::Terminal(c) => {
                let label = if *c { CLICK_IT } else { DONT_CLICK_IT };
                writeln!(out, "  n{id} [shape=box, label=\"{label}\"];").unwrap();
            }
            FlowNode::Question { text, yes, no, .. } => {
                writeln!(out, "  n{id} [shape=diamond, label=\"{}\"];", dot_escape(text)).unwrap();
                let y = visit(yes, next, out);
                let f = visit(no, next, out);
                writeln!(out, "  n{id} -> n{y} [label=\"yes\"];").unwrap();
                writeln!(out, "  n{id} -> n{f} [label=\"no\"];").unwrap();
            }
        }
        id
    }
    let mut out = String::from("digraph flowchart {\n");
    visit(&tree.root, &mut 0, &mut out);
    out.push_str("}\n");
    out
}

fn render_ascii(tree: &FlowTree) -> String {
    fn visit(n: &FlowNode, indent: usize, prefix: &str, out: &mut String) {
        let pad = "  ".repeat(indent);
        match n {
            FlowNode::Terminal(c) => {
                writeln!(out, "{pad}{prefix}{}", if *c { CLICK_IT } else { DONT_CLICK_IT }).unwrap();
            }
            FlowNode::Question { text, yes, no, .. } => {
                writeln!(out, "{pad}{prefix}{text}").unwrap();
                visit(yes, indent + 1, "yes: ", out);
                visit(no, indent + 1, "no: ", out);
            }
        }
    }
    let mut out = String::new();
    visit(&tree.root, 0, "", &mut out);
    out
}

fn pick(mask: u16, rng: &mut dyn RngCore) -> Computation {
    if mask == 0 {
        Computation::Terminate
    } else {
        Computation::Click(pick_bit(mask, rng))
    }
}

fn mask_of(nodes: impl Iterator<Item = NodeId>) -> u16 {
    nodes.fold(0, |m, n| m | 1 << n)
}

/// Nodes lying on some path of maximal observed sum.
fn best_path_mask(env: &EnvironmentSpec, b: &Belief) -> u16 {
    let pv = env.path_values(b);
    let best = pv.iter().copied().max().unwrap_or(0);
    env.tree.paths().iter().zip(&pv).filter(|(_, v)| **v == best).fold(0, |m, (p, _)| m | mask_of(p.iter().copied()))
}

/// Hand-coded versions of the known strategies for each environment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReferencePolicy {
    pub kind: EnvKind,
}

pub fn reference_policy(kind: EnvKind) -> Result<ReferencePolicy> {
    match kind {
        EnvKind::Different => Err(Error::InvalidEnvironment("no reference strategy for the different-variance environment".into())),
        _ => Ok(ReferencePolicy { kind }),
    }
}

impl Policy for ReferencePolicy {
    fn act(&self, env: &EnvironmentSpec, b: &Belief, rng: &mut dyn RngCore) -> Computation {
        let tree = &env.tree;
        let unobserved = mask_of(tree.reward_nodes().filter(|&n| !b.is_observed(n)));
        match self.kind {
            // Click the highest-level unobserved nodes until the last
            // revealed value is the best possible one.
            EnvKind::Increasing => {
                if b.last_observed().and_then(|n| b.get(n)) == Some(env.max_value()) {
                    return Computation::Terminate;
                }
                let top = tree.reward_nodes().filter(|n| unobserved >> n & 1 == 1).map(|n| tree.level(n)).max();
                pick(mask_of(tree.reward_nodes().filter(|&n| unobserved >> n & 1 == 1 && Some(tree.level(n)) == top)), rng)
            }
            // Click every level-1 node, then stop.
            EnvKind::Decreasing => pick(unobserved & mask_of(tree.reward_nodes().filter(|&n| tree.level(n) == 1)), rng),
            // Search the inner levels of the best path for the best possible
            // value; once one is found, inspect the leaves above it.
            EnvKind::Constant => {
                let top = env.max_value();
                let ten = tree
                    .reward_nodes()
                    .filter(|&n| !tree.is_leaf(n) && b.get(n) == Some(top))
                    .min_by_key(|&n| b.history().position(|h| h == n));
                let best = best_path_mask(env, b);
                if let Some(t) = ten {
                    let leaves = unobserved & mask_of(tree.reward_nodes().filter(|&n| tree.is_leaf(n) && tree.is_ancestor(t, n)));
                    if leaves != 0 {
                        return pick(leaves, rng);
                    }
                    if best >> t & 1 == 1 {
                        return Computation::Terminate;
                    }
                }
                pick(unobserved & best & mask_of(tree.reward_nodes().filter(|&n| !tree.is_leaf(n))), rng)
            }
            EnvKind::Different => Computation::Terminate,
        }
    }
}

/// Consistency of a trajectory's clicks with a formula's strategy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub consistent: usize,
    pub rejected: usize,
    pub shortfall: usize,
    pub strategy_mean_clicks: f64,
    pub ratio: f64,
}

/// Agreement given per-click acceptance and the strategy's mean click count.
/// Missing clicks (against the rounded mean) count as inconsistent.
pub fn agreement_from_counts(accepted: &[bool], strategy_mean_clicks: f64) -> Agreement {
    let consistent = accepted.iter().filter(|a| **a).count();
    let rejected = accepted.len() - consistent;
    let expected = strategy_mean_clicks.round() as usize;
    let shortfall = expected.saturating_sub(accepted.len());
    let denom = consistent + rejected + shortfall;
    let ratio = if denom == 0 { 1.0 } else { consistent as f64 / denom as f64 };
    Agreement { consistent, rejected, shortfall, strategy_mean_clicks, ratio }
}

pub fn click_agreement(
    trajectory: &Trajectory,
    formula: &Formula,
    set: &PredicateSet,
    env: &EnvironmentSpec,
    simulations: usize,
    seed: u64,
) -> Result<Agreement> {
    if simulations == 0 {
        return Err(Error::InvalidArgument("at least one simulation is required".into()));
    }
    let policy = FormulaPolicy::new(env, set, formula);
    let accepted: Vec<bool> = trajectory
        .steps
        .iter()
        .filter_map(|(b, c)| c.node().map(|n| policy.accepted(b) >> n & 1 == 1))
        .collect();
    let mut clicks = 0usize;
    for i in 0..simulations {
        let mut rng: ChaCha8Rng = rollout_rng(seed, i as u64);
        clicks += rollout(env, &policy, &mut rng)?.clicks();
    }
    Ok(agreement_from_counts(&accepted, clicks as f64 / simulations as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demos::estimate_mean_return;

    #[test]
    fn trivial_trees() {
        let t = formula_to_tree_structure(&Formula::falsum());
        assert_eq!(t.root, FlowNode::Terminal(false));
        assert_eq!(t.node_count(), 0);
        let f = Formula::new(vec![vec![Literal::pos(0), Literal::neg(3)]]);
        let t = formula_to_tree_structure(&f);
        assert_eq!(t.node_count(), 2);
        assert!(t.classify(|p| p == 0));
        assert!(!t.classify(|_| true));
    }

    #[test]
    fn shared_prefix_is_merged() {
        let f = Formula::new(vec![vec![Literal::pos(0), Literal::pos(1)], vec![Literal::pos(0), Literal::pos(2)]]);
        let t = formula_to_tree_structure(&f);
        assert_eq!(t.node_count(), 3);
        assert_eq!(t.depth(), 3);
    }

    #[test]
    fn agreement_arithmetic() {
        let a = agreement_from_counts(&[true, true, true, false], 4.0);
        assert_eq!(a.ratio, 0.75);
        let a = agreement_from_counts(&[true, true], 5.0);
        assert_eq!((a.shortfall, a.ratio), (3, 0.4));
        assert_eq!(agreement_from_counts(&[], 0.2).ratio, 1.0);
    }

    #[test]
    fn decreasing_reference_clicks_level_one() {
        let env = EnvironmentSpec::build(EnvKind::Decreasing);
        let p = reference_policy(EnvKind::Decreasing).unwrap();
        let est = estimate_mean_return(&env, &p, 200, 3).unwrap();
        assert_eq!(est.mean_clicks, 3.0);
        assert!(reference_policy(EnvKind::Different).is_err());
    }

    #[test]
    fn render_is_deterministic() {
        let set = PredicateSet::shipped();
        let env = EnvironmentSpec::build(EnvKind::Decreasing);
        let f = Formula::parse(&set, "has_smallest_depth").unwrap();
        let t = formula_to_tree(&f, &set, &env).unwrap();
        let dot = render(&t, RenderFormat::Dot);
        assert_eq!(dot, render(&t, RenderFormat::Dot));
        assert!(dot.starts_with("digraph"));
        assert!(dot.contains(CLICK_IT) && dot.contains(DONT_CLICK_IT));
        assert_eq!(render(&formula_to_tree_structure(&Formula::falsum()), RenderFormat::Dot).matches("label").count(), 1);
    }
}
