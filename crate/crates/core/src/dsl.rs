//! Predicate language over (belief, click) pairs.
//!
//! Six kinds of predicates: base node properties, belief-level general
//! features, and the among family built from conjunctions of base literals
//! (`among(P)`, `among(P, A)`, `all(P, A)`), where `A` is an among-predicate
//! that is never used on its own.
//!
//! Scored among-predicates (depth, expected total, variance, distance) hold
//! for the members of the conjunction set whose score is maximal; the others
//! hold for members that have the property themselves.
//!
//! Every predicate is evaluated to the set of nodes it accepts in a belief,
//! encoded as a bitmask with bit `n` for node `n`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::env::{Belief, Computation, EnvironmentSpec, NodeId, ROOT};
use crate::error::{Error, Result};

pub const DEFAULT_GRAMMAR: &str = include_str!("../grammar/default.json");

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BaseKind {
    IsObserved,
    HasLargestDepth,
    HasSmallestDepth,
    DepthEq2,
    IsRootChild,
    HasParentObserved,
    HasChildObserved,
    IsOnBestExpectedPath,
    HasBestPathThroughMax,
    IsPositiveObserved,
    SiblingObserved,
    BranchFullyObserved,
    AllLeavesOfBranchObserved,
    IsSuccessorOfMaxObserved,
}

impl BaseKind {
    fn from_name(name: &str) -> Option<Self> {
        use BaseKind::*;
        Some(match name {
            "is_observed" => IsObserved,
            "has_largest_depth" => HasLargestDepth,
            "has_smallest_depth" => HasSmallestDepth,
            "depth_eq_2" => DepthEq2,
            "is_root_child" => IsRootChild,
            "has_parent_observed" => HasParentObserved,
            "has_child_observed" => HasChildObserved,
            "is_on_best_expected_path" => IsOnBestExpectedPath,
            "has_best_path_through_max" => HasBestPathThroughMax,
            "is_positive_observed" => IsPositiveObserved,
            "sibling_observed" => SiblingObserved,
            "branch_fully_observed" => BranchFullyObserved,
            "all_leaves_of_branch_observed" => AllLeavesOfBranchObserved,
            "is_successor_of_max_observed" => IsSuccessorOfMaxObserved,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum GeneralKind {
    IsPreviousObservedMax,
    IsPreviousObservedMin,
    IsPreviousObservedPositive,
    ExistsObservedMax,
    ExistsObservedMin,
    CountObservedGe(usize),
    AllLevel1Observed,
    AllLeavesObserved,
    BestPathValuePositive,
    MaxObservedOnBestPath,
    NoClickMadeYet,
    PreviousClickSameBranch,
}

impl GeneralKind {
    fn from_name(name: &str) -> Option<Self> {
        use GeneralKind::*;
        if let Some(k) = name.strip_prefix("count_observed_ge_") {
            return k.parse().ok().map(CountObservedGe);
        }
        Some(match name {
            "is_previous_observed_max" => IsPreviousObservedMax,
            "is_previous_observed_min" => IsPreviousObservedMin,
            "is_previous_observed_positive" => IsPreviousObservedPositive,
            "exists_observed_max" => ExistsObservedMax,
            "exists_observed_min" => ExistsObservedMin,
            "all_level1_observed" => AllLevel1Observed,
            "all_leaves_observed" => AllLeavesObserved,
            "best_path_value_positive" => BestPathValuePositive,
            "max_observed_on_best_path" => MaxObservedOnBestPath,
            "no_click_made_yet" => NoClickMadeYet,
            "previous_click_same_branch" => PreviousClickSameBranch,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum AmongKind {
    HasLargestDepth,
    HasSmallestDepth,
    HasBestExpectedTotal,
    IsClosestToRoot,
    IsClosestToMaxObserved,
    HasParentObserved,
    HasChildObserved,
    HasLargestLevelVariance,
    IsSiblingOfPrevious,
    LiesOnPreviousPath,
    HasPositiveParent,
    HasUnobservedSibling,
}

impl AmongKind {
    fn from_name(name: &str) -> Option<Self> {
        use AmongKind::*;
        Some(match name {
            "has_largest_depth" => HasLargestDepth,
            "has_smallest_depth" => HasSmallestDepth,
            "has_best_expected_total" => HasBestExpectedTotal,
            "is_closest_to_root" => IsClosestToRoot,
            "is_closest_to_max_observed" => IsClosestToMaxObserved,
            "has_parent_observed" => HasParentObserved,
            "has_child_observed" => HasChildObserved,
            "has_largest_level_variance" => HasLargestLevelVariance,
            "is_sibling_of_previous" => IsSiblingOfPrevious,
            "lies_on_previous_path" => LiesOnPreviousPath,
            "has_positive_parent" => HasPositiveParent,
            "has_unobserved_sibling" => HasUnobservedSibling,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaseEntry {
    pub name: String,
    pub yes: String,
    pub no: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjective: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negated_adjective: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhraseEntry {
    pub name: String,
    pub yes: String,
    pub no: String,
}

/// Vocabulary, conjunction width and English templates.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrammarConfig {
    pub width: usize,
    pub base: Vec<BaseEntry>,
    pub general: Vec<PhraseEntry>,
    pub among: Vec<PhraseEntry>,
}

impl GrammarConfig {
    pub fn shipped() -> Self {
        serde_json::from_str(DEFAULT_GRAMMAR).expect("shipped grammar parses")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn fingerprint(&self) -> String {
        crate::env::hex_digest(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    fn validate(&self) -> Result<()> {
        if self.base.is_empty() {
            return Err(Error::EmptyVocabulary("base"));
        }
        if self.general.is_empty() {
            return Err(Error::EmptyVocabulary("general"));
        }
        if self.among.is_empty() {
            return Err(Error::EmptyVocabulary("among"));
        }
        if self.base.len() > 64 || self.general.len() > 64 || self.among.len() > 64 {
            return Err(Error::InvalidArgument("at most 64 items per vocabulary are supported".into()));
        }
        if self.width == 0 || self.width > self.base.len() {
            return Err(Error::InvalidArgument(format!("conjunction width {} out of range", self.width)));
        }
        check_names(self.base.iter().map(|e| e.name.as_str()), |n| BaseKind::from_name(n).is_some())?;
        check_names(self.general.iter().map(|e| e.name.as_str()), |n| GeneralKind::from_name(n).is_some())?;
        check_names(self.among.iter().map(|e| e.name.as_str()), |n| AmongKind::from_name(n).is_some())?;
        Ok(())
    }
}

fn check_names<'a>(names: impl Iterator<Item = &'a str>, known: impl Fn(&str) -> bool) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for n in names {
        if !known(n) {
            return Err(Error::UnknownVocabulary(n.to_string()));
        }
        if !seen.insert(n) {
            return Err(Error::DuplicateVocabulary(n.to_string()));
        }
    }
    Ok(())
}

/// Conjunction of base literals, as bitmasks over base vocabulary indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Conj {
    pub pos: u64,
    pub neg: u64,
}

impl Conj {
    pub fn literals(&self) -> Vec<(usize, bool)> {
        let all = self.pos | self.neg;
        (0..64).filter(|i| all >> i & 1 == 1).map(|i| (i, self.neg >> i & 1 == 1)).collect()
    }

    pub fn width(&self) -> usize {
        (self.pos | self.neg).count_ones() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Predicate {
    Base(usize),
    General(usize),
    Among(Conj),
    AmongWith(Conj, usize),
    AllWith(Conj, usize),
    Not(Box<Predicate>),
}

/// Precomputed tree tables used by every evaluation.
#[derive(Clone, Debug)]
pub struct EnvInfo {
    all: u16,
    level: [i32; 13],
    parent: [usize; 13],
    children: [u16; 13],
    siblings: [u16; 13],
    ancestors: [u16; 13],
    related: [u16; 13],
    branch: [u16; 13],
    branch_leaves: [u16; 13],
    branch_id: [usize; 13],
    dist: [[i32; 13]; 13],
    paths: Vec<u16>,
    paths_through: [u16; 13],
    leaves: u16,
    level1: u16,
    level2: u16,
    spread: [i32; 13],
    max_value: i32,
    min_value: i32,
}

impl EnvInfo {
    pub fn new(env: &EnvironmentSpec) -> Self {
        let t = &env.tree;
        let n = t.num_reward_nodes();
        let mut info = EnvInfo {
            all: (((1u32 << (n + 1)) - 1) & !1) as u16,
            level: [0; 13],
            parent: [0; 13],
            children: [0; 13],
            siblings: [0; 13],
            ancestors: [0; 13],
            related: [0; 13],
            branch: [0; 13],
            branch_leaves: [0; 13],
            branch_id: [0; 13],
            dist: [[0; 13]; 13],
            paths: t.paths().iter().map(|p| mask_of(p)).collect(),
            paths_through: [0; 13],
            leaves: 0,
            level1: 0,
            level2: 0,
            spread: [0; 13],
            max_value: env.max_value(),
            min_value: env.min_value(),
        };
        for v in t.reward_nodes() {
            info.level[v] = t.level(v) as i32;
            info.parent[v] = t.parent(v).unwrap_or(ROOT);
            info.children[v] = mask_of(t.children(v));
            info.siblings[v] = mask_of(&t.siblings(v).collect::<Vec<_>>());
            info.branch_id[v] = t.branch_of(v);
            info.spread[v] = env.support_of(v).iter().map(|x| x * x).sum();
            if t.is_leaf(v) {
                info.leaves |= 1 << v;
            }
            if t.level(v) == 1 {
                info.level1 |= 1 << v;
            }
            if t.level(v) == 2 {
                info.level2 |= 1 << v;
            }
            for u in t.reward_nodes() {
                info.dist[v][u] = t.distance(v, u) as i32;
                if u != v && t.is_ancestor(u, v) {
                    info.ancestors[v] |= 1 << u;
                }
                if u != v && (t.is_ancestor(u, v) || t.is_ancestor(v, u)) {
                    info.related[v] |= 1 << u;
                }
            }
        }
        for v in t.reward_nodes() {
            let b = info.branch_id[v];
            for u in t.reward_nodes() {
                if info.branch_id[u] == b {
                    info.branch[v] |= 1 << u;
                    if t.is_leaf(u) {
                        info.branch_leaves[v] |= 1 << u;
                    }
                }
            }
        }
        for (i, &p) in info.paths.iter().enumerate() {
            for v in bits(p) {
                info.paths_through[v] |= 1 << i;
            }
        }
        info
    }

    /// Mask of every reward node.
    pub fn all_nodes(&self) -> u16 {
        self.all
    }
}

fn mask_of(nodes: &[NodeId]) -> u16 {
    nodes.iter().fold(0, |m, &n| m | 1 << n)
}

fn bits(mask: u16) -> impl Iterator<Item = usize> {
    (0..16).filter(move |i| mask >> i & 1 == 1)
}

const NEVER: i32 = i32::MIN;

#[derive(Clone, Debug)]
enum AmongEval {
    Score([i32; 13]),
    Mask(u16),
}

/// Per-belief values of every vocabulary item.
pub struct Context {
    all: u16,
    base: Vec<u16>,
    general: Vec<bool>,
    among: Vec<AmongEval>,
}

/// Which vocabulary items a group of predicates reads.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Needs {
    base: u64,
    general: u64,
    among: u64,
}

impl Needs {
    pub fn of(p: &Predicate) -> Self {
        let conj = |c: &Conj| Needs { base: c.pos | c.neg, ..Default::default() };
        match p {
            Predicate::Base(i) => Needs { base: 1 << i, ..Default::default() },
            Predicate::General(i) => Needs { general: 1 << i, ..Default::default() },
            Predicate::Among(c) => conj(c),
            Predicate::AmongWith(c, a) | Predicate::AllWith(c, a) => Needs { among: 1 << a, ..conj(c) },
            Predicate::Not(q) => Needs::of(q),
        }
    }

    pub fn union(self, o: Needs) -> Needs {
        Needs { base: self.base | o.base, general: self.general | o.general, among: self.among | o.among }
    }
}

impl Context {
    pub fn new(info: &EnvInfo, set: &PredicateSet, belief: &Belief) -> Self {
        let f = Facts::new(info, belief);
        Context {
            all: info.all,
            base: set.base_kinds.iter().map(|k| f.base(*k)).collect(),
            general: set.general_kinds.iter().map(|k| f.general(*k)).collect(),
            among: set.among_kinds.iter().map(|k| f.among(*k)).collect(),
        }
    }

    /// Evaluates only the items in `needs`; the rest read as empty.
    pub fn partial(info: &EnvInfo, set: &PredicateSet, belief: &Belief, needs: &Needs) -> Self {
        let f = Facts::new(info, belief);
        let on = |m: u64, i: usize| i < 64 && m >> i & 1 == 1;
        Context {
            all: info.all,
            base: set.base_kinds.iter().enumerate().map(|(i, k)| if on(needs.base, i) { f.base(*k) } else { 0 }).collect(),
            general: set.general_kinds.iter().enumerate().map(|(i, k)| on(needs.general, i) && f.general(*k)).collect(),
            among: set
                .among_kinds
                .iter()
                .enumerate()
                .map(|(i, k)| if on(needs.among, i) { f.among(*k) } else { AmongEval::Mask(0) })
                .collect(),
        }
    }

    fn conj(&self, c: &Conj) -> u16 {
        let mut m = self.all;
        let mut p = c.pos;
        while p != 0 {
            m &= self.base[p.trailing_zeros() as usize];
            p &= p - 1;
        }
        let mut q = c.neg;
        while q != 0 {
            m &= !self.base[q.trailing_zeros() as usize];
            q &= q - 1;
        }
        m & self.all
    }

    fn among_with(&self, s: u16, a: usize) -> u16 {
        match &self.among[a] {
            AmongEval::Mask(m) => s & m,
            AmongEval::Score(sc) => {
                let best = bits(s).map(|v| sc[v]).max().unwrap_or(NEVER);
                if best == NEVER {
                    0
                } else {
                    bits(s).filter(|&v| sc[v] == best).fold(0, |m, v| m | 1 << v)
                }
            }
        }
    }

    fn all_with(&self, s: u16, a: usize) -> bool {
        self.among_with(s, a) == s
    }

    fn whole(&self, b: bool) -> u16 {
        if b {
            self.all
        } else {
            0
        }
    }

    /// Nodes accepted by `p` in this belief.
    pub fn eval(&self, p: &Predicate) -> u16 {
        match p {
            Predicate::Base(i) => self.base[*i],
            Predicate::General(i) => self.whole(self.general[*i]),
            Predicate::Among(c) => self.conj(c),
            Predicate::AmongWith(c, a) => self.among_with(self.conj(c), *a),
            Predicate::AllWith(c, a) => self.whole(self.all_with(self.conj(c), *a)),
            Predicate::Not(q) => !self.eval(q) & self.all,
        }
    }
}

/// Belief-derived quantities shared by the vocabulary items.
struct Facts<'a> {
    info: &'a EnvInfo,
    b: &'a Belief,
    observed: u16,
    values: [i32; 13],
    path_values: Vec<i32>,
    best_paths: u16,
    best_nodes: u16,
    max_nodes: u16,
    min_nodes: u16,
    last: Option<NodeId>,
}

impl<'a> Facts<'a> {
    fn new(info: &'a EnvInfo, b: &'a Belief) -> Self {
        let observed = b.observed_mask() & info.all;
        let mut values = [0; 13];
        let mut max_nodes = 0;
        let mut min_nodes = 0;
        for v in bits(observed) {
            values[v] = b.get(v).unwrap_or(0);
            if values[v] == info.max_value {
                max_nodes |= 1 << v;
            }
            if values[v] == info.min_value {
                min_nodes |= 1 << v;
            }
        }
        let path_values: Vec<i32> = info.paths.iter().map(|&p| bits(p & observed).map(|v| values[v]).sum()).collect();
        let best = path_values.iter().copied().max().unwrap_or(0);
        let mut best_paths = 0;
        let mut best_nodes = 0;
        for (i, &pv) in path_values.iter().enumerate() {
            if pv == best {
                best_paths |= 1 << i;
                best_nodes |= info.paths[i];
            }
        }
        Facts { info, b, observed, values, path_values, best_paths, best_nodes, max_nodes, min_nodes, last: b.last_observed() }
    }

    fn nodes_where(&self, f: impl Fn(usize) -> bool) -> u16 {
        bits(self.info.all).filter(|&v| f(v)).fold(0, |m, v| m | 1 << v)
    }

    fn parent_observed(&self, v: usize) -> bool {
        let p = self.info.parent[v];
        p != ROOT && self.observed >> p & 1 == 1
    }

    /// Highest path value among paths through `v`, and whether one of those
    /// best paths passes through an observed maximum.
    fn best_through(&self, v: usize) -> (i32, bool) {
        let through = self.info.paths_through[v];
        let best = bits(through).map(|i| self.path_values[i]).max().unwrap_or(0);
        let hit = bits(through).any(|i| self.path_values[i] == best && self.info.paths[i] & self.max_nodes != 0);
        (best, hit)
    }

    fn last_value(&self) -> Option<i32> {
        self.last.and_then(|v| self.b.get(v))
    }

    fn base(&self, k: BaseKind) -> u16 {
        let i = self.info;
        let o = self.observed;
        match k {
            BaseKind::IsObserved => o,
            BaseKind::HasLargestDepth => i.leaves,
            BaseKind::HasSmallestDepth => i.level1,
            BaseKind::DepthEq2 => i.level2,
            BaseKind::IsRootChild => self.nodes_where(|v| i.parent[v] == ROOT),
            BaseKind::HasParentObserved => self.nodes_where(|v| self.parent_observed(v)),
            BaseKind::HasChildObserved => self.nodes_where(|v| i.children[v] & o != 0),
            BaseKind::IsOnBestExpectedPath => self.best_nodes,
            BaseKind::HasBestPathThroughMax => self.nodes_where(|v| self.best_through(v).1),
            BaseKind::IsPositiveObserved => self.nodes_where(|v| o >> v & 1 == 1 && self.values[v] > 0),
            BaseKind::SiblingObserved => self.nodes_where(|v| i.siblings[v] & o != 0),
            BaseKind::BranchFullyObserved => self.nodes_where(|v| i.branch[v] & !o == 0),
            BaseKind::AllLeavesOfBranchObserved => self.nodes_where(|v| i.branch_leaves[v] & !o == 0),
            BaseKind::IsSuccessorOfMaxObserved => self.nodes_where(|v| i.ancestors[v] & self.max_nodes != 0),
        }
    }

    fn general(&self, k: GeneralKind) -> bool {
        let i = self.info;
        let o = self.observed;
        match k {
            GeneralKind::IsPreviousObservedMax => self.last_value() == Some(i.max_value),
            GeneralKind::IsPreviousObservedMin => self.last_value() == Some(i.min_value),
            GeneralKind::IsPreviousObservedPositive => self.last_value().is_some_and(|x| x > 0),
            GeneralKind::ExistsObservedMax => self.max_nodes != 0,
            GeneralKind::ExistsObservedMin => self.min_nodes != 0,
            GeneralKind::CountObservedGe(k) => o.count_ones() as usize >= k,
            GeneralKind::AllLevel1Observed => i.level1 & !o == 0,
            GeneralKind::AllLeavesObserved => i.leaves & !o == 0,
            GeneralKind::BestPathValuePositive => self.path_values.iter().any(|&x| x > 0),
            GeneralKind::MaxObservedOnBestPath => {
                bits(self.best_paths).any(|p| i.paths[p] & self.max_nodes != 0)
            }
            GeneralKind::NoClickMadeYet => o == 0,
            GeneralKind::PreviousClickSameBranch => {
                let h: Vec<NodeId> = self.b.history().collect();
                h.len() >= 2 && i.branch_id[h[h.len() - 1]] == i.branch_id[h[h.len() - 2]]
            }
        }
    }

    fn score(&self, f: impl Fn(usize) -> i32) -> AmongEval {
        let mut s = [NEVER; 13];
        for v in bits(self.info.all) {
            s[v] = f(v);
        }
        AmongEval::Score(s)
    }

    fn among(&self, k: AmongKind) -> AmongEval {
        let i = self.info;
        let o = self.observed;
        match k {
            AmongKind::HasLargestDepth => self.score(|v| i.level[v]),
            AmongKind::HasSmallestDepth | AmongKind::IsClosestToRoot => self.score(|v| -i.level[v]),
            AmongKind::HasBestExpectedTotal => self.score(|v| self.best_through(v).0),
            AmongKind::IsClosestToMaxObserved => {
                let m = self.max_nodes;
                self.score(|v| bits(m).map(|u| -i.dist[v][u]).max().unwrap_or(NEVER))
            }
            AmongKind::HasParentObserved => AmongEval::Mask(self.nodes_where(|v| self.parent_observed(v))),
            AmongKind::HasChildObserved => AmongEval::Mask(self.nodes_where(|v| i.children[v] & o != 0)),
            AmongKind::HasLargestLevelVariance => self.score(|v| i.spread[v]),
            AmongKind::IsSiblingOfPrevious => AmongEval::Mask(self.last.map(|l| i.siblings[l]).unwrap_or(0)),
            AmongKind::LiesOnPreviousPath => AmongEval::Mask(self.last.map(|l| i.related[l]).unwrap_or(0)),
            AmongKind::HasPositiveParent => AmongEval::Mask(self.nodes_where(|v| {
                let p = i.parent[v];
                self.parent_observed(v) && self.values[p] > 0
            })),
            AmongKind::HasUnobservedSibling => AmongEval::Mask(self.nodes_where(|v| i.siblings[v] & !o != 0)),
        }
    }
}

/// Enumerated predicates in a stable column order.
#[derive(Clone, Debug)]
pub struct PredicateSet {
    config: GrammarConfig,
    base_kinds: Vec<BaseKind>,
    general_kinds: Vec<GeneralKind>,
    among_kinds: Vec<AmongKind>,
    predicates: Vec<Predicate>,
    names: Vec<String>,
    index: HashMap<String, usize>,
    fingerprint: String,
}

impl PredicateSet {
    /// Enumerates base, general, `among(P)`, `among(P, A)` and `all(P, A)`
    /// predicates for every conjunction `P` of up to `width` base literals.
    pub fn enumerate(config: &GrammarConfig) -> Result<Self> {
        config.validate()?;
        let conjs = conjunctions(config.base.len(), config.width);
        let mut predicates = Vec::new();
        predicates.extend((0..config.base.len()).map(Predicate::Base));
        predicates.extend((0..config.general.len()).map(Predicate::General));
        predicates.extend(conjs.iter().map(|c| Predicate::Among(*c)));
        for c in &conjs {
            predicates.extend((0..config.among.len()).map(|a| Predicate::AmongWith(*c, a)));
        }
        for c in &conjs {
            predicates.extend((0..config.among.len()).map(|a| Predicate::AllWith(*c, a)));
        }
        Self::build(config, predicates, config.fingerprint())
    }

    pub fn shipped() -> Self {
        Self::enumerate(&GrammarConfig::shipped()).expect("shipped grammar is valid")
    }

    /// The sub-language made of the named predicates, in the given order.
    pub fn restrict(&self, names: &[&str]) -> Result<Self> {
        let predicates = names
            .iter()
            .map(|n| self.lookup(n).map(|i| self.predicates[i].clone()))
            .collect::<Result<Vec<_>>>()?;
        let fp = crate::env::hex_digest(format!("{}:{}", self.fingerprint, names.join(",")).as_bytes());
        Self::build(&self.config, predicates, fp)
    }

    fn build(config: &GrammarConfig, predicates: Vec<Predicate>, fingerprint: String) -> Result<Self> {
        let mut set = PredicateSet {
            config: config.clone(),
            base_kinds: config.base.iter().map(|e| BaseKind::from_name(&e.name).unwrap()).collect(),
            general_kinds: config.general.iter().map(|e| GeneralKind::from_name(&e.name).unwrap()).collect(),
            among_kinds: config.among.iter().map(|e| AmongKind::from_name(&e.name).unwrap()).collect(),
            predicates: Vec::new(),
            names: Vec::new(),
            index: HashMap::new(),
            fingerprint,
        };
        for p in predicates {
            let name = set.name_of(&p)?;
            if set.index.insert(name.clone(), set.names.len()).is_some() {
                return Err(Error::DuplicateVocabulary(name));
            }
            set.names.push(name);
            set.predicates.push(p);
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.predicates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicates.is_empty()
    }

    pub fn config(&self) -> &GrammarConfig {
        &self.config
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn predicate(&self, i: usize) -> &Predicate {
        &self.predicates[i]
    }

    pub fn predicates(&self) -> &[Predicate] {
        &self.predicates
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn lookup(&self, name: &str) -> Result<usize> {
        self.index.get(name).copied().ok_or_else(|| Error::UnknownVocabulary(name.to_string()))
    }

    /// Count of predicates per kind: base, general, among, among-with, all-with.
    pub fn kind_counts(&self) -> [usize; 5] {
        let mut c = [0; 5];
        for p in &self.predicates {
            c[match p {
                Predicate::Base(_) => 0,
                Predicate::General(_) => 1,
                Predicate::Among(_) => 2,
                Predicate::AmongWith(..) => 3,
                Predicate::AllWith(..) => 4,
                Predicate::Not(_) => continue,
            }] += 1;
        }
        c
    }

    fn check(&self, p: &Predicate) -> Result<()> {
        let base_ok = |c: &Conj| {
            let n = self.config.base.len();
            let all = c.pos | c.neg;
            if c.pos & c.neg != 0 || all == 0 || (n < 64 && all >> n != 0) {
                Err(Error::UnknownVocabulary(format!("conjunction {:#x}/{:#x}", c.pos, c.neg)))
            } else {
                Ok(())
            }
        };
        let among_ok = |a: usize| {
            if a < self.config.among.len() {
                Ok(())
            } else {
                Err(Error::UnknownVocabulary(format!("among predicate #{a}")))
            }
        };
        match p {
            Predicate::Base(i) if *i >= self.config.base.len() => Err(Error::UnknownVocabulary(format!("base predicate #{i}"))),
            Predicate::General(i) if *i >= self.config.general.len() => {
                Err(Error::UnknownVocabulary(format!("general predicate #{i}")))
            }
            Predicate::Among(c) => base_ok(c),
            Predicate::AmongWith(c, a) | Predicate::AllWith(c, a) => base_ok(c).and(among_ok(*a)),
            Predicate::Not(q) => self.check(q),
            _ => Ok(()),
        }
    }

    fn conj_name(&self, c: &Conj) -> String {
        c.literals()
            .iter()
            .map(|&(i, neg)| {
                let n = &self.config.base[i].name;
                if neg {
                    format!("not({n})")
                } else {
                    n.clone()
                }
            })
            .collect::<Vec<_>>()
            .join(" & ")
    }

    /// Canonical textual name, used in formula files.
    pub fn name_of(&self, p: &Predicate) -> Result<String> {
        self.check(p)?;
        Ok(match p {
            Predicate::Base(i) => self.config.base[*i].name.clone(),
            Predicate::General(i) => self.config.general[*i].name.clone(),
            Predicate::Among(c) => format!("among({})", self.conj_name(c)),
            Predicate::AmongWith(c, a) => format!("among({}, {})", self.conj_name(c), self.config.among[*a].name),
            Predicate::AllWith(c, a) => format!("all({}, {})", self.conj_name(c), self.config.among[*a].name),
            Predicate::Not(q) => format!("not({})", self.name_of(q)?),
        })
    }

    /// Accepted-node masks of every predicate, in column order.
    pub fn evaluate_all(&self, ctx: &Context) -> Vec<u16> {
        let mut cache: HashMap<Conj, u16> = HashMap::new();
        let mut conj = |c: &Conj| *cache.entry(*c).or_insert_with(|| ctx.conj(c));
        self.predicates
            .iter()
            .map(|p| match p {
                Predicate::Among(c) => conj(c),
                Predicate::AmongWith(c, a) => ctx.among_with(conj(c), *a),
                Predicate::AllWith(c, a) => ctx.whole(ctx.all_with(conj(c), *a)),
                other => ctx.eval(other),
            })
            .collect()
    }

    /// English question for a predicate, with environment constants filled in.
    pub fn english(&self, p: &Predicate, env: &EnvironmentSpec) -> Result<String> {
        self.check(p)?;
        let (inner, negated) = match p {
            Predicate::Not(q) => match q.as_ref() {
                Predicate::Not(r) => return self.english(r, env),
                q => (q, true),
            },
            q => (q, false),
        };
        let text = match inner {
            Predicate::Base(i) => {
                let e = &self.config.base[*i];
                format!("Is it {}?", if negated { &e.no } else { &e.yes })
            }
            Predicate::General(i) => {
                let e = &self.config.general[*i];
                (if negated { &e.no } else { &e.yes }).clone()
            }
            Predicate::Among(c) => match (self.adjectives(c), c.literals().as_slice()) {
                (Some(adj), _) if !negated => format!("Is it {} {adj} node?", article(&adj)),
                (Some(adj), _) => format!("Is it not {} {adj} node?", article(&adj)),
                (None, [(i, n)]) => {
                    let e = &self.config.base[*i];
                    format!("Is it {}?", if *n != negated { &e.no } else { &e.yes })
                }
                (None, _) if !negated => format!("Is it {}?", self.phrases(c)),
                (None, _) => format!("Is it not both {}?", self.phrases(c)),
            },
            Predicate::AmongWith(c, a) => {
                let e = &self.config.among[*a];
                let what = if negated { &e.no } else { &e.yes };
                match self.adjectives(c) {
                    Some(adj) => format!("Is it {what} among {adj} nodes?"),
                    None => format!("Is it {what} among the nodes that are {}?", self.phrases(c)),
                }
            }
            Predicate::AllWith(c, a) => {
                let e = &self.config.among[*a];
                match (self.adjectives(c), negated) {
                    (Some(adj), false) => format!("Are all {adj} nodes {}?", e.yes),
                    (Some(adj), true) => format!("Is some {adj} node {}?", e.no),
                    (None, false) => format!("Are all nodes that are {} {}?", self.phrases(c), e.yes),
                    (None, true) => format!("Is some node that is {} {}?", self.phrases(c), e.no),
                }
            }
            Predicate::Not(_) => unreachable!("double negation handled above"),
        };
        Ok(text.replace("{max}", &env.max_value().to_string()).replace("{min}", &env.min_value().to_string()))
    }

    fn adjectives(&self, c: &Conj) -> Option<String> {
        let words = c
            .literals()
            .iter()
            .map(|&(i, neg)| {
                let e = &self.config.base[i];
                if neg {
                    e.negated_adjective.clone()
                } else {
                    e.adjective.clone()
                }
            })
            .collect::<Option<Vec<_>>>()?;
        Some(words.join(" "))
    }

    fn phrases(&self, c: &Conj) -> String {
        c.literals()
            .iter()
            .map(|&(i, neg)| {
                let e = &self.config.base[i];
                if neg {
                    e.no.clone()
                } else {
                    e.yes.clone()
                }
            })
            .collect::<Vec<_>>()
            .join(" and ")
    }
}

fn article(word: &str) -> &'static str {
    match word.chars().next() {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

/// Every conjunction of 1..=width distinct base literals: index sets in
/// lexicographic order, then sign patterns with positive before negated.
fn conjunctions(n: usize, width: usize) -> Vec<Conj> {
    let mut out = Vec::new();
    for w in 1..=width {
        let mut idx: Vec<usize> = (0..w).collect();
        loop {
            for signs in 0u64..(1 << w) {
                let mut c = Conj { pos: 0, neg: 0 };
                for (k, &i) in idx.iter().enumerate() {
                    if signs >> (w - 1 - k) & 1 == 1 {
                        c.neg |= 1 << i;
                    } else {
                        c.pos |= 1 << i;
                    }
                }
                out.push(c);
            }
            let mut k = w;
            while k > 0 && idx[k - 1] == n - w + k - 1 {
                k -= 1;
            }
            if k == 0 {
                break;
            }
            idx[k - 1] += 1;
            for j in k..w {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
    out
}

/// Truth value of a predicate on one (belief, click) pair. Terminate is
/// never accepted.
pub fn evaluate(set: &PredicateSet, info: &EnvInfo, p: &Predicate, belief: &Belief, c: Computation) -> bool {
    match c {
        Computation::Click(n) => Context::new(info, set, belief).eval(p) >> n & 1 == 1,
        Computation::Terminate => false,
    }
}

/// Binary feature matrix stored by column, one bit per row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMatrix {
    rows: usize,
    words: usize,
    columns: Vec<Vec<u64>>,
    pub labels: Vec<bool>,
}

impl BinaryMatrix {
    pub fn from_columns(rows: usize, columns: Vec<Vec<u64>>, labels: Vec<bool>) -> Self {
        let words = rows.div_ceil(64);
        debug_assert!(columns.iter().all(|c| c.len() == words));
        BinaryMatrix { rows, words, columns, labels }
    }

    /// Builds a matrix from explicit rows of truth values.
    pub fn from_rows(rows: &[Vec<bool>], labels: Vec<bool>) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let words = rows.len().div_ceil(64);
        let mut columns = vec![vec![0u64; words]; cols];
        for (i, r) in rows.iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                if v {
                    columns[j][i / 64] |= 1 << (i % 64);
                }
            }
        }
        Self::from_columns(rows.len(), columns, labels)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.columns.len()
    }

    pub fn words(&self) -> usize {
        self.words
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.columns[col][row / 64] >> (row % 64) & 1 == 1
    }

    pub fn column(&self, col: usize) -> &[u64] {
        &self.columns[col]
    }

    pub fn row(&self, row: usize) -> Vec<bool> {
        (0..self.cols()).map(|j| self.get(row, j)).collect()
    }

    /// Row as a packed bit vector over columns.
    pub fn row_bits(&self, row: usize) -> Vec<u64> {
        let mut out = vec![0u64; self.cols().div_ceil(64)];
        for j in 0..self.cols() {
            if self.get(row, j) {
                out[j / 64] |= 1 << (j % 64);
            }
        }
        out
    }
}

/// Featurizes click pairs; beliefs shared by several pairs are evaluated once.
pub fn featurize(
    env: &EnvironmentSpec,
    set: &PredicateSet,
    pairs: &[(Belief, Computation)],
    labels: Vec<bool>,
) -> Result<BinaryMatrix> {
    if labels.len() != pairs.len() {
        return Err(Error::InvalidArgument("one label per pair is required".into()));
    }
    let info = EnvInfo::new(env);
    let mut by_belief: HashMap<Belief, usize> = HashMap::new();
    let mut masks: Vec<Vec<u16>> = Vec::new();
    let mut rows = Vec::with_capacity(pairs.len());
    for (b, c) in pairs {
        let n = c.node().ok_or(Error::TerminateInFeatures)?;
        let k = *by_belief.entry(*b).or_insert_with(|| {
            masks.push(set.evaluate_all(&Context::new(&info, set, b)));
            masks.len() - 1
        });
        rows.push((k, n));
    }
    let words = pairs.len().div_ceil(64);
    let mut columns = vec![vec![0u64; words]; set.len()];
    for (i, &(k, n)) in rows.iter().enumerate() {
        for (j, col) in columns.iter_mut().enumerate() {
            if masks[k][j] >> n & 1 == 1 {
                col[i / 64] |= 1 << (i % 64);
            }
        }
    }
    Ok(BinaryMatrix::from_columns(pairs.len(), columns, labels))
}
