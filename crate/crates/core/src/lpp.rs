//! Logical program policies: decision-tree induction over predicate
//! features, DNF extraction, likelihood and prior, and the induced policies.

use std::collections::HashMap;
use std::fmt;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::demos::{DemonstrationSet, NegativeSet};
use crate::dsl::{BinaryMatrix, Context, EnvInfo, Needs, Predicate, PredicateSet};
use crate::env::{Belief, Computation, EnvironmentSpec, NodeId};
use crate::error::{Error, Result};
use crate::policy::Policy;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Literal {
    pub predicate: usize,
    pub negated: bool,
}

impl Literal {
    pub fn pos(predicate: usize) -> Self {
        Literal { predicate, negated: false }
    }

    pub fn neg(predicate: usize) -> Self {
        Literal { predicate, negated: true }
    }

    pub fn holds(&self, value: bool) -> bool {
        value != self.negated
    }
}

/// Disjunction of conjunctions in canonical form. No disjuncts is False; a
/// single empty conjunction is True.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Formula {
    disjuncts: Vec<Vec<Literal>>,
}

impl Formula {
    pub fn falsum() -> Self {
        Formula { disjuncts: Vec::new() }
    }

    pub fn verum() -> Self {
        Formula { disjuncts: vec![Vec::new()] }
    }

    /// Canonicalizes: literals sorted and deduplicated, contradictory
    /// conjunctions dropped, conjunctions sorted and deduplicated, and any
    /// empty conjunction absorbing the rest.
    pub fn new(disjuncts: Vec<Vec<Literal>>) -> Self {
        let mut out = Vec::new();
        for mut c in disjuncts {
            c.sort();
            c.dedup();
            if c.windows(2).any(|w| w[0].predicate == w[1].predicate) {
                continue;
            }
            if c.is_empty() {
                return Formula::verum();
            }
            out.push(c);
        }
        out.sort();
        out.dedup();
        Formula { disjuncts: out }
    }

    pub fn disjuncts(&self) -> &[Vec<Literal>] {
        &self.disjuncts
    }

    pub fn is_false(&self) -> bool {
        self.disjuncts.is_empty()
    }

    pub fn is_true(&self) -> bool {
        self.disjuncts.len() == 1 && self.disjuncts[0].is_empty()
    }

    pub fn literal_count(&self) -> usize {
        self.disjuncts.iter().map(|c| c.len()).sum()
    }

    /// Sorted distinct predicate indices.
    pub fn predicates(&self) -> Vec<usize> {
        let mut p: Vec<usize> = self.disjuncts.iter().flatten().map(|l| l.predicate).collect();
        p.sort_unstable();
        p.dedup();
        p
    }

    pub fn distinct_predicates(&self) -> usize {
        self.predicates().len()
    }

    /// Value of the formula under an assignment of predicate truth values.
    pub fn accepts(&self, value: impl Fn(usize) -> bool) -> bool {
        self.disjuncts.iter().any(|c| c.iter().all(|l| l.holds(value(l.predicate))))
    }

    /// Accepted-node mask from per-predicate node masks.
    pub fn accepted_mask(&self, mask: impl Fn(usize) -> u16, all: u16) -> u16 {
        let mut acc = 0;
        for c in &self.disjuncts {
            let mut m = all;
            for l in c {
                let v = mask(l.predicate);
                m &= if l.negated { !v } else { v };
                if m == 0 {
                    break;
                }
            }
            acc |= m;
        }
        acc & all
    }

    pub fn render(&self, set: &PredicateSet) -> String {
        if self.is_false() {
            return "False".into();
        }
        if self.is_true() {
            return "True".into();
        }
        self.disjuncts
            .iter()
            .map(|c| {
                c.iter()
                    .map(|l| {
                        let n = set.name(l.predicate);
                        if l.negated {
                            format!("not({n})")
                        } else {
                            n.to_string()
                        }
                    })
                    .collect::<Vec<_>>()
                    .join(" and ")
            })
            .collect::<Vec<_>>()
            .join(" or ")
    }

    /// Parses the text written by [`Formula::render`].
    pub fn parse(set: &PredicateSet, text: &str) -> Result<Self> {
        let text = text.trim();
        match text {
            "False" => return Ok(Formula::falsum()),
            "True" => return Ok(Formula::verum()),
            _ => {}
        }
        let mut disjuncts = Vec::new();
        for conj in text.split(" or ") {
            let mut lits = Vec::new();
            for lit in conj.split(" and ") {
                let lit = lit.trim();
                let l = match set.lookup(lit) {
                    Ok(i) => Literal::pos(i),
                    Err(e) => match lit.strip_prefix("not(").and_then(|r| r.strip_suffix(')')) {
                        Some(inner) => Literal::neg(set.lookup(inner)?),
                        None => return Err(e),
                    },
                };
                lits.push(l);
            }
            disjuncts.push(lits);
        }
        Ok(Formula::new(disjuncts))
    }

    /// Stable digest of the canonical form under a predicate set.
    pub fn digest(&self, set: &PredicateSet) -> String {
        crate::env::hex_digest(format!("{}\n{}", set.fingerprint(), self.render(set)).as_bytes())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TreeNode {
    Leaf(bool),
    Split { predicate: usize, if_false: Box<TreeNode>, if_true: Box<TreeNode>, pos: u64, total: u64 },
}

impl TreeNode {
    fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf(_) => 0,
            TreeNode::Split { if_false, if_true, .. } => 1 + if_false.depth().max(if_true.depth()),
        }
    }

    fn classify(&self, value: &dyn Fn(usize) -> bool) -> bool {
        match self {
            TreeNode::Leaf(l) => *l,
            TreeNode::Split { predicate, if_false, if_true, .. } => {
                if value(*predicate) {
                    if_true.classify(value)
                } else {
                    if_false.classify(value)
                }
            }
        }
    }

    fn truncated(&self, depth: usize) -> TreeNode {
        match self {
            TreeNode::Leaf(l) => TreeNode::Leaf(*l),
            TreeNode::Split { pos, total, .. } if depth == 0 => TreeNode::Leaf(2 * pos > *total),
            TreeNode::Split { predicate, if_false, if_true, pos, total } => collapse(TreeNode::Split {
                predicate: *predicate,
                if_false: Box::new(if_false.truncated(depth - 1)),
                if_true: Box::new(if_true.truncated(depth - 1)),
                pos: *pos,
                total: *total,
            }),
        }
    }
}

fn collapse(node: TreeNode) -> TreeNode {
    if let TreeNode::Split { if_false, if_true, .. } = &node {
        if let (TreeNode::Leaf(a), TreeNode::Leaf(b)) = (if_false.as_ref(), if_true.as_ref()) {
            if a == b {
                return TreeNode::Leaf(*a);
            }
        }
    }
    node
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryDecisionTree {
    pub root: TreeNode,
}

impl BinaryDecisionTree {
    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn classify(&self, value: impl Fn(usize) -> bool) -> bool {
        self.root.classify(&value)
    }

    /// The tree that induction with a smaller depth bound would produce.
    pub fn truncated(&self, depth: usize) -> Self {
        BinaryDecisionTree { root: self.root.truncated(depth) }
    }
}

fn popcount_and(a: &[u64], b: &[u64]) -> u64 {
    a.iter().zip(b).map(|(x, y)| (x & y).count_ones() as u64).sum()
}

/// Weighted Gini impurity of a two-way split as an exact fraction, up to the
/// common factor 2: Σ p(n−p)/n over children.
fn split_impurity(tp: u64, t: u64, fp: u64, f: u64) -> (u128, u128) {
    let num = (tp * (t - tp)) as u128 * f as u128 + (fp * (f - fp)) as u128 * t as u128;
    (num, t as u128 * f as u128)
}

/// Greedy Gini tree over the rows set in `rows`, depth at most `max_depth`.
/// Each impure node takes the best split that leaves both sides non-empty,
/// ties to the lowest column, even when impurity does not drop. Leaves take the majority label, ties negative. Subtrees whose leaves all
/// agree are collapsed.
pub fn induce_tree_on(m: &BinaryMatrix, rows: &[u64], max_depth: usize) -> Result<BinaryDecisionTree> {
    if m.cols() == 0 {
        return Err(Error::NoColumns);
    }
    let words = m.words();
    let mut labels = vec![0u64; words];
    for (i, &l) in m.labels.iter().enumerate() {
        if l {
            labels[i / 64] |= 1 << (i % 64);
        }
    }
    let rows: Vec<u64> = (0..words).map(|w| rows.get(w).copied().unwrap_or(0)).collect();
    Ok(BinaryDecisionTree { root: grow(m, &labels, rows, max_depth) })
}

pub fn induce_tree(m: &BinaryMatrix, max_depth: usize) -> Result<BinaryDecisionTree> {
    let mut rows = vec![u64::MAX; m.words()];
    if !m.rows().is_multiple_of(64) {
        if let Some(last) = rows.last_mut() {
            *last = (1u64 << (m.rows() % 64)) - 1;
        }
    }
    induce_tree_on(m, &rows, max_depth)
}

fn grow(m: &BinaryMatrix, labels: &[u64], rows: Vec<u64>, depth: usize) -> TreeNode {
    let total: u64 = rows.iter().map(|w| w.count_ones() as u64).sum();
    let pos = popcount_and(&rows, labels);
    if pos == 0 || pos == total || depth == 0 {
        return TreeNode::Leaf(2 * pos > total);
    }
    // Only words with rows in this node matter.
    let live: Vec<usize> = (0..rows.len()).filter(|&w| rows[w] != 0).collect();
    let r: Vec<u64> = live.iter().map(|&w| rows[w]).collect();
    let rl: Vec<u64> = live.iter().map(|&w| rows[w] & labels[w]).collect();
    let mut best: Option<(usize, (u128, u128))> = None;
    let mut col = Vec::with_capacity(live.len());
    for j in 0..m.cols() {
        let c = m.column(j);
        col.clear();
        col.extend(live.iter().map(|&w| c[w]));
        let t = popcount_and(&col, &r);
        if t == 0 || t == total {
            continue;
        }
        let tp = popcount_and(&col, &rl);
        let g = split_impurity(tp, t, pos - tp, total - t);
        let better = match &best {
            None => true,
            Some((_, b)) => g.0 * b.1 < b.0 * g.1,
        };
        if better {
            best = Some((j, g));
        }
    }
    let Some((j, _)) = best else {
        return TreeNode::Leaf(2 * pos > total);
    };
    let c = m.column(j);
    let yes: Vec<u64> = rows.iter().zip(c).map(|(a, b)| a & b).collect();
    let no: Vec<u64> = rows.iter().zip(c).map(|(a, b)| a & !b).collect();
    collapse(TreeNode::Split {
        predicate: j,
        if_false: Box::new(grow(m, labels, no, depth - 1)),
        if_true: Box::new(grow(m, labels, yes, depth - 1)),
        pos,
        total,
    })
}

/// One conjunction per positive leaf, reading false branches as negated
/// literals.
pub fn extract_dnf(tree: &BinaryDecisionTree) -> Formula {
    fn walk(node: &TreeNode, path: &mut Vec<Literal>, out: &mut Vec<Vec<Literal>>) {
        match node {
            TreeNode::Leaf(true) => out.push(path.clone()),
            TreeNode::Leaf(false) => {}
            TreeNode::Split { predicate, if_false, if_true, .. } => {
                path.push(Literal::neg(*predicate));
                walk(if_false, path, out);
                path.pop();
                path.push(Literal::pos(*predicate));
                walk(if_true, path, out);
                path.pop();
            }
        }
    }
    let mut out = Vec::new();
    walk(&tree.root, &mut Vec::new(), &mut out);
    Formula::new(out)
}

/// Log-prior penalizing size: −λ per literal.
pub fn formula_prior(formula: &Formula, lambda: f64) -> f64 {
    -lambda * formula.literal_count() as f64
}

/// Predicate structure of a formula, compiled for fast acceptance checks.
#[derive(Clone, Debug)]
pub struct CompiledFormula {
    formula: Formula,
    preds: Vec<Predicate>,
    slot: HashMap<usize, usize>,
    needs: Needs,
}

impl CompiledFormula {
    pub fn new(set: &PredicateSet, formula: &Formula) -> Self {
        let preds_idx = formula.predicates();
        let preds: Vec<Predicate> = preds_idx.iter().map(|&i| set.predicate(i).clone()).collect();
        let needs = preds.iter().fold(Needs::default(), |n, p| n.union(Needs::of(p)));
        let slot = preds_idx.iter().enumerate().map(|(k, &i)| (i, k)).collect();
        CompiledFormula { formula: formula.clone(), preds, slot, needs }
    }

    pub fn formula(&self) -> &Formula {
        &self.formula
    }

    /// Available clicks the formula accepts, as a node mask.
    pub fn accepted(&self, info: &EnvInfo, set: &PredicateSet, belief: &Belief) -> u16 {
        let all = info.all_nodes();
        let avail = all & !belief.observed_mask();
        if self.formula.is_false() {
            return 0;
        }
        let ctx = Context::partial(info, set, belief, &self.needs);
        let masks: Vec<u16> = self.preds.iter().map(|p| ctx.eval(p)).collect();
        self.formula.accepted_mask(|i| masks[self.slot[&i]], all) & avail
    }
}

/// Uniform over accepted clicks; terminates when none is accepted.
pub struct FormulaPolicy<'a> {
    set: &'a PredicateSet,
    info: EnvInfo,
    compiled: CompiledFormula,
}

impl<'a> FormulaPolicy<'a> {
    pub fn new(env: &EnvironmentSpec, set: &'a PredicateSet, formula: &Formula) -> Self {
        FormulaPolicy { set, info: EnvInfo::new(env), compiled: CompiledFormula::new(set, formula) }
    }

    pub fn accepted(&self, belief: &Belief) -> u16 {
        self.compiled.accepted(&self.info, self.set, belief)
    }

    /// Action probabilities: clicks in node order, then termination.
    pub fn distribution(&self, belief: &Belief) -> Vec<(Computation, f64)> {
        let a = self.accepted(belief);
        if a == 0 {
            return vec![(Computation::Terminate, 1.0)];
        }
        let p = 1.0 / a.count_ones() as f64;
        (0..16).filter(|n| a >> n & 1 == 1).map(|n| (Computation::Click(n), p)).collect()
    }
}

pub(crate) fn pick_bit(mask: u16, rng: &mut dyn RngCore) -> NodeId {
    let k = rng.gen_range(0..mask.count_ones());
    let mut m = mask;
    for _ in 0..k {
        m &= m - 1;
    }
    m.trailing_zeros() as NodeId
}

impl Policy for FormulaPolicy<'_> {
    fn act(&self, _: &EnvironmentSpec, belief: &Belief, rng: &mut dyn RngCore) -> Computation {
        let a = self.accepted(belief);
        if a == 0 {
            Computation::Terminate
        } else {
            Computation::Click(pick_bit(a, rng))
        }
    }
}

pub fn induced_policy<'a>(env: &EnvironmentSpec, set: &'a PredicateSet, formula: &Formula) -> FormulaPolicy<'a> {
    FormulaPolicy::new(env, set, formula)
}

/// Weighted vote over formula policies; deterministic argmax with ties to
/// the lowest action (clicks by node, then termination).
pub struct EnsemblePolicy<'a> {
    members: Vec<(FormulaPolicy<'a>, f64)>,
}

pub fn ensemble_policy<'a>(
    env: &EnvironmentSpec,
    set: &'a PredicateSet,
    formulas: &[Formula],
    weights: &[f64],
) -> Result<EnsemblePolicy<'a>> {
    if formulas.is_empty() || formulas.len() != weights.len() {
        return Err(Error::InvalidArgument("one weight per formula is required".into()));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) || weights.iter().all(|w| *w == 0.0) {
        return Err(Error::InvalidArgument("weights must be nonnegative and not all zero".into()));
    }
    Ok(EnsemblePolicy {
        members: formulas.iter().zip(weights).map(|(f, w)| (FormulaPolicy::new(env, set, f), *w)).collect(),
    })
}

impl EnsemblePolicy<'_> {
    pub fn choose(&self, belief: &Belief) -> Computation {
        let mut score: Vec<(Computation, f64)> = Vec::new();
        for (p, w) in &self.members {
            for (c, q) in p.distribution(belief) {
                match score.iter_mut().find(|(d, _)| *d == c) {
                    Some(e) => e.1 += w * q,
                    None => score.push((c, w * q)),
                }
            }
        }
        score.sort_by_key(|(c, _)| match c {
            Computation::Click(n) => *n,
            Computation::Terminate => usize::MAX,
        });
        let best = score.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
        score.into_iter().find(|(_, s)| *s == best).map(|(c, _)| c).unwrap_or(Computation::Terminate)
    }
}

impl Policy for EnsemblePolicy<'_> {
    fn act(&self, _: &EnvironmentSpec, belief: &Belief, _: &mut dyn RngCore) -> Computation {
        self.choose(belief)
    }
}

/// Log-likelihood of pairs under the formula's policy: −∞ as soon as a
/// click is rejected or a termination happens while some click is accepted.
pub fn log_likelihood(accepted: impl Fn(&Belief) -> u16, pairs: &[(Belief, Computation)]) -> f64 {
    let mut ll = 0.0;
    for (b, c) in pairs {
        let a = accepted(b);
        match c {
            Computation::Click(n) => {
                if a >> n & 1 == 0 {
                    return f64::NEG_INFINITY;
                }
                ll -= (a.count_ones() as f64).ln();
            }
            Computation::Terminate => {
                if a != 0 {
                    return f64::NEG_INFINITY;
                }
            }
        }
    }
    ll
}

pub fn demo_likelihood(env: &EnvironmentSpec, set: &PredicateSet, formula: &Formula, pairs: &[(Belief, Computation)]) -> f64 {
    let p = FormulaPolicy::new(env, set, formula);
    log_likelihood(|b| p.accepted(b), pairs).exp()
}

/// Featurized demonstrations: one row per click pair (positive) and per
/// negative pair, plus every predicate's node mask at each distinct belief.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub matrix: BinaryMatrix,
    /// Demonstration pairs: belief id and click (None for termination).
    pub pairs: Vec<(usize, Option<NodeId>)>,
    /// Rows contributed by each pair: its own click row and its negatives.
    pub pair_rows: Vec<Vec<usize>>,
    /// Source pair of each row.
    pub row_pair: Vec<usize>,
    /// Trajectory of each pair; pairs of a trajectory appear in step order.
    pub trajectory: Vec<usize>,
    beliefs: Vec<Belief>,
    masks: Vec<Vec<u16>>,
    all: u16,
}

impl Dataset {
    pub fn new(
        env: &EnvironmentSpec,
        set: &PredicateSet,
        pairs: &[(Belief, Computation)],
        negatives: &[(Belief, Computation, usize)],
    ) -> Result<Self> {
        if set.is_empty() {
            return Err(Error::NoColumns);
        }
        let info = EnvInfo::new(env);
        let mut ids: HashMap<Belief, usize> = HashMap::new();
        let mut beliefs = Vec::new();
        let mut masks = Vec::new();
        let mut id_of = |b: &Belief| {
            *ids.entry(*b).or_insert_with(|| {
                beliefs.push(*b);
                masks.push(set.evaluate_all(&Context::new(&info, set, b)));
                beliefs.len() - 1
            })
        };
        let mut rows: Vec<(usize, NodeId, bool, usize)> = Vec::new();
        let mut dpairs = Vec::with_capacity(pairs.len());
        for (i, (b, c)) in pairs.iter().enumerate() {
            let id = id_of(b);
            dpairs.push((id, c.node()));
            if let Some(n) = c.node() {
                rows.push((id, n, true, i));
            }
        }
        for (b, c, src) in negatives {
            let n = c.node().ok_or(Error::TerminateInFeatures)?;
            if *src >= pairs.len() {
                return Err(Error::InvalidArgument(format!("negative refers to missing pair {src}")));
            }
            rows.push((id_of(b), n, false, *src));
        }
        let words = rows.len().div_ceil(64);
        let mut columns = vec![vec![0u64; words]; set.len()];
        for (r, &(id, n, _, _)) in rows.iter().enumerate() {
            let m = &masks[id];
            for (j, col) in columns.iter_mut().enumerate() {
                if m[j] >> n & 1 == 1 {
                    col[r / 64] |= 1 << (r % 64);
                }
            }
        }
        let mut pair_rows = vec![Vec::new(); pairs.len()];
        for (r, &(_, _, _, src)) in rows.iter().enumerate() {
            pair_rows[src].push(r);
        }
        Ok(Dataset {
            matrix: BinaryMatrix::from_columns(rows.len(), columns, rows.iter().map(|r| r.2).collect()),
            pairs: dpairs,
            pair_rows,
            row_pair: rows.iter().map(|r| r.3).collect(),
            trajectory: (0..pairs.len()).collect(),
            beliefs,
            masks,
            all: info.all_nodes(),
        })
    }

    pub fn from_demos(env: &EnvironmentSpec, set: &PredicateSet, demos: &DemonstrationSet, neg: &NegativeSet) -> Result<Self> {
        let pairs: Vec<_> = demos.pairs.iter().map(|p| (p.belief, p.computation)).collect();
        let negs: Vec<_> = neg.pairs.iter().map(|n| (n.belief, n.computation, n.source)).collect();
        let mut ds = Self::new(env, set, &pairs, &negs)?;
        ds.trajectory = demos.pairs.iter().map(|p| p.trajectory).collect();
        Ok(ds)
    }

    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_click(&self, pair: usize) -> bool {
        self.pairs[pair].1.is_some()
    }

    /// Feature row of a click pair.
    pub fn positive_row(&self, pair: usize) -> Option<usize> {
        if self.is_click(pair) {
            self.pair_rows[pair].first().copied()
        } else {
            None
        }
    }

    pub fn belief(&self, pair: usize) -> &Belief {
        &self.beliefs[self.pairs[pair].0]
    }

    /// Accepted available clicks of `f` at the belief of `pair`.
    pub fn accepted(&self, f: &Formula, pair: usize) -> u16 {
        let id = self.pairs[pair].0;
        let m = &self.masks[id];
        f.accepted_mask(|j| m[j], self.all) & !self.beliefs[id].observed_mask()
    }

    /// Whether the formula's policy puts the demonstrated action in its
    /// argmax at this pair.
    pub fn imitates(&self, f: &Formula, pair: usize) -> bool {
        let a = self.accepted(f, pair);
        match self.pairs[pair].1 {
            Some(n) => a >> n & 1 == 1,
            None => a == 0,
        }
    }

    pub fn log_likelihood(&self, f: &Formula, pairs: &[usize]) -> f64 {
        let mut ll = 0.0;
        for &p in pairs {
            let a = self.accepted(f, p);
            match self.pairs[p].1 {
                Some(n) if a >> n & 1 == 1 => ll -= (a.count_ones() as f64).ln(),
                None if a == 0 => {}
                _ => return f64::NEG_INFINITY,
            }
        }
        ll
    }

    /// Row bitset of the given pairs' click rows and negatives.
    pub fn rows_of(&self, pairs: &[usize]) -> Vec<u64> {
        let mut bits = vec![0u64; self.matrix.words()];
        for &p in pairs {
            for &r in &self.pair_rows[p] {
                bits[r / 64] |= 1 << (r % 64);
            }
        }
        bits
    }
}

/// A MAP candidate: formula, posterior score and validation fit.
#[derive(Clone, Debug, PartialEq)]
pub struct MapFormula {
    pub formula: Formula,
    pub depth: usize,
    pub log_posterior: f64,
    pub log_likelihood: f64,
    /// Geometric-mean per-pair validation likelihood (1 for empty validation).
    pub mean_likelihood: f64,
}

pub const DEFAULT_LAMBDA: f64 = 1.0;

/// Tree induction on the training pairs (and their negatives) for every
/// depth bound 1..=max_depth, each scored on the validation pairs. Entries
/// are None when extraction gives False or validation likelihood is zero.
pub fn lpp_map_depths(ds: &Dataset, train: &[usize], validation: &[usize], max_depth: usize, lambda: f64) -> Result<Vec<Option<MapFormula>>> {
    let tree = induce_tree_on(&ds.matrix, &ds.rows_of(train), max_depth)?;
    Ok((1..=max_depth)
        .map(|rho| {
            let f = extract_dnf(&tree.truncated(rho));
            if f.is_false() {
                return None;
            }
            let ll = ds.log_likelihood(&f, validation);
            if ll == f64::NEG_INFINITY {
                return None;
            }
            let mean = if validation.is_empty() { 1.0 } else { (ll / validation.len() as f64).exp() };
            Some(MapFormula { log_posterior: formula_prior(&f, lambda) + ll, formula: f, depth: rho, log_likelihood: ll, mean_likelihood: mean })
        })
        .collect())
}

pub fn lpp_map(ds: &Dataset, train: &[usize], validation: &[usize], max_depth: usize, lambda: f64) -> Result<Option<MapFormula>> {
    Ok(lpp_map_depths(ds, train, validation, max_depth, lambda)?.pop().flatten())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormulaStats {
    pub distinct_predicates: usize,
    pub literal_count: usize,
    pub tree_nodes: usize,
    pub depth: usize,
}

pub fn formula_stats(formula: &Formula) -> FormulaStats {
    let t = crate::flowchart::formula_to_tree_structure(formula);
    FormulaStats {
        distinct_predicates: formula.distinct_predicates(),
        literal_count: formula.literal_count(),
        tree_nodes: t.node_count(),
        depth: t.depth(),
    }
}

#[derive(Serialize, Deserialize)]
struct FormulaFileLiteral {
    predicate: String,
    negated: bool,
}

#[derive(Serialize, Deserialize)]
struct FormulaFile {
    grammar_fingerprint: String,
    text: String,
    disjuncts: Vec<Vec<FormulaFileLiteral>>,
}

impl Formula {
    pub fn to_file_string(&self, set: &PredicateSet) -> String {
        let file = FormulaFile {
            grammar_fingerprint: set.fingerprint().to_string(),
            text: self.render(set),
            disjuncts: self
                .disjuncts
                .iter()
                .map(|c| c.iter().map(|l| FormulaFileLiteral { predicate: set.name(l.predicate).to_string(), negated: l.negated }).collect())
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("formula serializes") + "\n"
    }

    pub fn from_file_str(set: &PredicateSet, text: &str) -> Result<Self> {
        let file: FormulaFile = serde_json::from_str(text)?;
        if file.grammar_fingerprint != set.fingerprint() {
            return Err(Error::FingerprintMismatch { expected: set.fingerprint().to_string(), found: file.grammar_fingerprint });
        }
        let disjuncts = file
            .disjuncts
            .iter()
            .map(|c| c.iter().map(|l| Ok(Literal { predicate: set.lookup(&l.predicate)?, negated: l.negated })).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(Formula::new(disjuncts))
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.negated {
            write!(f, "¬f{}", self.predicate)
        } else {
            write!(f, "f{}", self.predicate)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn split(p: usize, f: TreeNode, t: TreeNode) -> TreeNode {
        TreeNode::Split { predicate: p, if_false: Box::new(f), if_true: Box::new(t), pos: 0, total: 0 }
    }

    #[test]
    fn canonical_form() {
        let f = Formula::new(vec![vec![Literal::pos(2), Literal::neg(1)], vec![Literal::pos(0)], vec![Literal::neg(1), Literal::pos(2)]]);
        assert_eq!(f.disjuncts(), &[vec![Literal::pos(0)], vec![Literal::neg(1), Literal::pos(2)]]);
        assert_eq!(Formula::new(f.disjuncts().to_vec()), f);
        assert!(Formula::new(vec![vec![Literal::pos(1), Literal::neg(1)]]).is_false());
        assert!(Formula::new(vec![vec![Literal::pos(1)], vec![]]).is_true());
    }

    #[test]
    fn path_reading() {
        let t = BinaryDecisionTree { root: split(1, split(2, TreeNode::Leaf(false), TreeNode::Leaf(true)), TreeNode::Leaf(true)) };
        let f = extract_dnf(&t);
        assert_eq!(f.disjuncts(), &[vec![Literal::pos(1)], vec![Literal::neg(1), Literal::pos(2)]]);
        assert_eq!(f.distinct_predicates(), 2);
        assert_eq!(f.literal_count(), 3);
        assert!(extract_dnf(&BinaryDecisionTree { root: TreeNode::Leaf(false) }).is_false());
    }

    #[test]
    fn all_positive_is_single_leaf() {
        let m = BinaryMatrix::from_rows(&[vec![true, false], vec![false, true]], vec![true, true]);
        assert_eq!(induce_tree(&m, 3).unwrap().root, TreeNode::Leaf(true));
    }

    #[test]
    fn perfect_separator() {
        let rows = vec![vec![false, true], vec![true, false], vec![false, false], vec![true, true]];
        let m = BinaryMatrix::from_rows(&rows, vec![true, false, false, true]);
        let t = induce_tree(&m, 3).unwrap();
        assert_eq!(t.depth(), 1);
        assert!(matches!(t.root, TreeNode::Split { predicate: 1, .. }));
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(t.classify(|j| r[j]), m.labels[i]);
        }
    }

    #[test]
    fn xor_depth_one() {
        // Every split of XOR leaves each side balanced, so both leaves take
        // the negative tie label and training accuracy is one half.
        let rows = vec![vec![false, false], vec![false, true], vec![true, false], vec![true, true]];
        let labels = vec![false, true, true, false];
        let m = BinaryMatrix::from_rows(&rows, labels.clone());
        let t = induce_tree(&m, 1).unwrap();
        let acc = rows.iter().zip(&labels).filter(|(r, l)| t.classify(|j| r[j]) == **l).count();
        assert_eq!(acc, 2);
    }

    #[test]
    fn no_columns_is_an_error() {
        let m = BinaryMatrix::from_columns(2, vec![], vec![true, false]);
        assert!(matches!(induce_tree(&m, 2), Err(Error::NoColumns)));
    }

    #[test]
    fn prior() {
        assert_eq!(formula_prior(&Formula::verum(), 1.0), 0.0);
        let f = Formula::new(vec![vec![Literal::pos(0), Literal::neg(1)], vec![Literal::pos(2)]]);
        assert_eq!(formula_prior(&f, 1.0), -3.0);
    }
}
