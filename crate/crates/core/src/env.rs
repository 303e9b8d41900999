//! Mouselab tree tasks as metalevel MDPs.
//!
//! A belief records which reward nodes have been revealed (and in which
//! order); a computation either clicks an unobserved node at a fixed cost or
//! terminates planning, collecting the expected value of the best path.
//!
//! Node indexing for the 3-1-2 tree: root = 0; level-1 = 1, 2, 3; level-2 =
//! 4, 5, 6 (children of 1, 2, 3); level-3 = 7, 8 (under 4), 9, 10 (under 5),
//! 11, 12 (under 6). All file formats use this order.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type NodeId = usize;

/// Maximum number of reward nodes a tree may carry.
pub const MAX_NODES: usize = 12;

pub const ROOT: NodeId = 0;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Option<NodeId>>", into = "Vec<Option<NodeId>>")]
pub struct TreeStructure {
    parent: Vec<Option<NodeId>>,
    level: Vec<usize>,
    children: Vec<Vec<NodeId>>,
    paths: Vec<Vec<NodeId>>,
    branch: Vec<NodeId>,
    automorphisms: Vec<Vec<NodeId>>,
}

impl TreeStructure {
    /// The tree used in every benchmark environment: three branches, each a
    /// level-1 node with one level-2 child that has two level-3 leaves.
    pub fn three_one_two() -> Self {
        let parents = [
            None,
            Some(0),
            Some(0),
            Some(0),
            Some(1),
            Some(2),
            Some(3),
            Some(4),
            Some(4),
            Some(5),
            Some(5),
            Some(6),
            Some(6),
        ];
        Self::from_parents(&parents).expect("3-1-2 tree is well formed")
    }

    /// Builds a tree from a parent table. Node 0 must be the root and every
    /// other node must name a parent with a smaller index.
    pub fn from_parents(parents: &[Option<NodeId>]) -> Result<Self> {
        let n = parents.len();
        if n < 2 {
            return Err(Error::InvalidTree("tree needs a root and at least one reward node".into()));
        }
        if n - 1 > MAX_NODES {
            return Err(Error::InvalidTree(format!("at most {MAX_NODES} reward nodes are supported")));
        }
        if parents[0].is_some() {
            return Err(Error::InvalidTree("node 0 must be the root".into()));
        }
        let mut level = vec![0; n];
        let mut children = vec![Vec::new(); n];
        let mut branch = vec![ROOT; n];
        for (node, p) in parents.iter().enumerate().skip(1) {
            let p = p.ok_or_else(|| Error::InvalidTree(format!("node {node} has no parent")))?;
            if p >= node {
                return Err(Error::InvalidTree(format!("parent of node {node} must precede it")));
            }
            level[node] = level[p] + 1;
            children[p].push(node);
            branch[node] = if p == ROOT { node } else { branch[p] };
        }
        let mut paths = Vec::new();
        let mut stack = vec![(ROOT, Vec::new())];
        while let Some((node, prefix)) = stack.pop() {
            if node != ROOT && children[node].is_empty() {
                paths.push(prefix);
                continue;
            }
            for &c in children[node].iter().rev() {
                let mut p = prefix.clone();
                p.push(c);
                stack.push((c, p));
            }
        }
        let mut tree = TreeStructure {
            parent: parents.to_vec(),
            level,
            children,
            paths,
            branch,
            automorphisms: Vec::new(),
        };
        tree.automorphisms = tree.compute_automorphisms();
        Ok(tree)
    }

    /// Number of nodes including the root.
    pub fn node_count(&self) -> usize {
        self.parent.len()
    }

    pub fn num_reward_nodes(&self) -> usize {
        self.parent.len() - 1
    }

    pub fn reward_nodes(&self) -> impl Iterator<Item = NodeId> {
        1..self.parent.len()
    }

    pub fn contains(&self, node: NodeId) -> bool {
        node >= 1 && node < self.parent.len()
    }

    pub fn parent(&self, node: NodeId) -> Option<NodeId> {
        self.parent[node]
    }

    pub fn level(&self, node: NodeId) -> usize {
        self.level[node]
    }

    pub fn children(&self, node: NodeId) -> &[NodeId] {
        &self.children[node]
    }

    /// Root-to-leaf chains, root excluded.
    pub fn paths(&self) -> &[Vec<NodeId>] {
        &self.paths
    }

    /// Deepest level of the tree.
    pub fn depth(&self) -> usize {
        self.level.iter().copied().max().unwrap_or(0)
    }

    /// The level-1 ancestor of a node (the node itself when on level 1).
    pub fn branch_of(&self, node: NodeId) -> NodeId {
        self.branch[node]
    }

    pub fn is_leaf(&self, node: NodeId) -> bool {
        node != ROOT && self.children[node].is_empty()
    }

    pub fn siblings(&self, node: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        let p = self.parent[node].unwrap_or(ROOT);
        self.children[p].iter().copied().filter(move |&c| c != node)
    }

    pub fn is_ancestor(&self, anc: NodeId, node: NodeId) -> bool {
        let mut cur = self.parent[node];
        while let Some(p) = cur {
            if p == anc {
                return true;
            }
            cur = self.parent[p];
        }
        false
    }

    /// Number of edges between two nodes.
    pub fn distance(&self, a: NodeId, b: NodeId) -> usize {
        let (mut x, mut y) = (a, b);
        let mut d = 0;
        while x != y {
            if self.level[x] >= self.level[y] {
                x = self.parent[x].unwrap_or(ROOT);
            } else {
                y = self.parent[y].unwrap_or(ROOT);
            }
            d += 1;
        }
        d
    }

    /// All structure-preserving node permutations; `perm[n]` is the image of n.
    pub fn automorphisms(&self) -> &[Vec<NodeId>] {
        &self.automorphisms
    }

    /// Isomorphism signature of the subtree rooted at `node`.
    pub fn shape(&self, node: NodeId) -> String {
        let mut kids: Vec<String> = self.children[node].iter().map(|&c| self.shape(c)).collect();
        kids.sort();
        format!("({})", kids.concat())
    }

    fn compute_automorphisms(&self) -> Vec<Vec<NodeId>> {
        let n = self.node_count();
        self.subtree_maps(ROOT, ROOT)
            .into_iter()
            .map(|pairs| {
                let mut perm = vec![0; n];
                for (s, d) in pairs {
                    perm[s] = d;
                }
                perm
            })
            .collect()
    }

    fn subtree_maps(&self, src: NodeId, dst: NodeId) -> Vec<Vec<(NodeId, NodeId)>> {
        let sc = &self.children[src];
        let dc = &self.children[dst];
        let s_shapes: Vec<String> = sc.iter().map(|&c| self.shape(c)).collect();
        let d_shapes: Vec<String> = dc.iter().map(|&c| self.shape(c)).collect();
        let mut out = Vec::new();
        for order in permutations(dc.len()) {
            if (0..sc.len()).any(|i| s_shapes[i] != d_shapes[order[i]]) {
                continue;
            }
            let mut partial: Vec<Vec<(NodeId, NodeId)>> = vec![vec![(src, dst)]];
            for (i, &s) in sc.iter().enumerate() {
                let sub = self.subtree_maps(s, dc[order[i]]);
                let mut next = Vec::with_capacity(partial.len() * sub.len());
                for p in &partial {
                    for m in &sub {
                        let mut q = p.clone();
                        q.extend_from_slice(m);
                        next.push(q);
                    }
                }
                partial = next;
            }
            out.extend(partial);
        }
        out
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for rest in permutations(n - 1) {
        for pos in 0..=rest.len() {
            let mut p = rest.clone();
            p.insert(pos, n - 1);
            out.push(p);
        }
    }
    out.sort();
    out
}

impl TryFrom<Vec<Option<NodeId>>> for TreeStructure {
    type Error = Error;
    fn try_from(parents: Vec<Option<NodeId>>) -> Result<Self> {
        Self::from_parents(&parents)
    }
}

impl From<TreeStructure> for Vec<Option<NodeId>> {
    fn from(t: TreeStructure) -> Self {
        t.parent
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Increasing,
    Decreasing,
    Constant,
    Different,
}

impl EnvKind {
    pub const ALL: [EnvKind; 4] =
        [EnvKind::Increasing, EnvKind::Decreasing, EnvKind::Constant, EnvKind::Different];

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Increasing => "increasing",
            EnvKind::Decreasing => "decreasing",
            EnvKind::Constant => "constant",
            EnvKind::Different => "different",
        }
    }

    /// Reward support per level (level 1 first).
    pub fn supports(self) -> Vec<Vec<i32>> {
        let s = |v: [i32; 2]| vec![-v[1], -v[0], v[0], v[1]];
        match self {
            EnvKind::Increasing => vec![s([2, 4]), s([4, 8]), s([24, 48])],
            EnvKind::Decreasing => vec![s([24, 48]), s([4, 8]), s([2, 4])],
            EnvKind::Constant => vec![s([5, 10]), s([5, 10]), s([5, 10])],
            EnvKind::Different => vec![s([1, 2]), s([5, 10]), s([10, 20])],
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "increasing" => Ok(EnvKind::Increasing),
            "decreasing" => Ok(EnvKind::Decreasing),
            "constant" => Ok(EnvKind::Constant),
            "different" => Ok(EnvKind::Different),
            other => Err(Error::InvalidArgument(format!("unknown environment kind `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Computation {
    Click(NodeId),
    Terminate,
}

impl Computation {
    pub fn node(self) -> Option<NodeId> {
        match self {
            Computation::Click(n) => Some(n),
            Computation::Terminate => None,
        }
    }

    pub fn is_terminate(self) -> bool {
        matches!(self, Computation::Terminate)
    }
}

/// Observed rewards plus the order in which they were revealed.
///
/// The order only matters to predicates about the most recent observation;
/// values, termination rewards and the solver ignore it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Belief {
    len: u8,
    mask: u16,
    values: [i32; MAX_NODES],
    history: [u8; MAX_NODES],
    n_hist: u8,
}

impl Belief {
    /// The all-unobserved belief over `num_nodes` reward nodes.
    pub fn initial(num_nodes: usize) -> Self {
        assert!(num_nodes <= MAX_NODES);
        Belief { len: num_nodes as u8, mask: 0, values: [0; MAX_NODES], history: [0; MAX_NODES], n_hist: 0 }
    }

    /// Builds a belief from per-node slots (node 1 first). `history` lists
    /// revealed nodes in reveal order; it may be a suffix-free prefix of the
    /// true order or empty when unknown.
    pub fn from_slots(slots: &[Option<i32>], history: &[NodeId]) -> Result<Self> {
        if slots.len() > MAX_NODES {
            return Err(Error::Format(format!("belief has {} slots", slots.len())));
        }
        let mut b = Belief::initial(slots.len());
        for (i, s) in slots.iter().enumerate() {
            if let Some(v) = s {
                b.mask |= 1 << (i + 1);
                b.values[i] = *v;
            }
        }
        for &h in history {
            if !b.is_observed(h) {
                return Err(Error::Format(format!("history names unobserved node {h}")));
            }
            b.history[b.n_hist as usize] = h as u8;
            b.n_hist += 1;
        }
        Ok(b)
    }

    pub fn num_nodes(&self) -> usize {
        self.len as usize
    }

    pub fn get(&self, node: NodeId) -> Option<i32> {
        if self.is_observed(node) {
            Some(self.values[node - 1])
        } else {
            None
        }
    }

    pub fn is_observed(&self, node: NodeId) -> bool {
        node >= 1 && node <= self.len as usize && self.mask & (1 << node) != 0
    }

    /// Bit `n` is set when node `n` is observed.
    pub fn observed_mask(&self) -> u16 {
        self.mask
    }

    pub fn num_observed(&self) -> usize {
        self.mask.count_ones() as usize
    }

    pub fn is_fully_observed(&self) -> bool {
        self.num_observed() == self.len as usize
    }

    pub fn history(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.history[..self.n_hist as usize].iter().map(|&h| h as NodeId)
    }

    pub fn last_observed(&self) -> Option<NodeId> {
        if self.n_hist == 0 {
            None
        } else {
            Some(self.history[self.n_hist as usize - 1] as NodeId)
        }
    }

    /// Returns the belief with `node` revealed to hold `value`.
    pub fn observe(&self, node: NodeId, value: i32) -> Belief {
        debug_assert!(node >= 1 && node <= self.len as usize && !self.is_observed(node));
        let mut b = *self;
        b.mask |= 1 << node;
        b.values[node - 1] = value;
        b.history[b.n_hist as usize] = node as u8;
        b.n_hist += 1;
        b
    }

    pub fn slots(&self) -> Vec<Option<i32>> {
        (1..=self.len as usize).map(|n| self.get(n)).collect()
    }

    /// Same observations, reveal order dropped.
    pub fn without_history(&self) -> Belief {
        let mut b = *self;
        b.history = [0; MAX_NODES];
        b.n_hist = 0;
        b
    }

    fn permuted(&self, perm: &[NodeId]) -> Belief {
        let mut b = Belief::initial(self.len as usize);
        for n in 1..=self.len as usize {
            if let Some(v) = self.get(n) {
                let m = perm[n];
                b.mask |= 1 << m;
                b.values[m - 1] = v;
            }
        }
        for (i, h) in self.history().enumerate() {
            b.history[i] = perm[h] as u8;
        }
        b.n_hist = self.n_hist;
        b
    }

    fn lex_cmp(&self, other: &Belief) -> Ordering {
        self.slots()
            .cmp(&other.slots())
            .then_with(|| self.history().cmp(other.history()))
    }
}

impl Serialize for Belief {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.slots().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Belief {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let slots = Vec::<Option<i32>>::deserialize(d)?;
        Belief::from_slots(&slots, &[]).map_err(serde::de::Error::custom)
    }
}

/// Hidden rewards of one episode.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundTruth {
    rewards: Vec<i32>,
}

impl GroundTruth {
    pub fn new(rewards: Vec<i32>) -> Self {
        GroundTruth { rewards }
    }

    pub fn reward(&self, node: NodeId) -> i32 {
        self.rewards[node - 1]
    }

    pub fn rewards(&self) -> &[i32] {
        &self.rewards
    }
}

/// Result of applying a computation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub belief: Belief,
    pub reward: i32,
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub kind: Option<EnvKind>,
    pub tree: TreeStructure,
    /// Reward support per level, level 1 first.
    pub support: Vec<Vec<i32>>,
    pub click_cost: i32,
    pub discount: f64,
}

impl EnvironmentSpec {
    pub fn build(kind: EnvKind) -> Self {
        EnvironmentSpec {
            kind: Some(kind),
            tree: TreeStructure::three_one_two(),
            support: kind.supports(),
            click_cost: 1,
            discount: 1.0,
        }
    }

    /// An environment over an arbitrary tree, used for small hand-checkable
    /// instances.
    pub fn custom(tree: TreeStructure, support: Vec<Vec<i32>>, click_cost: i32) -> Result<Self> {
        if support.len() != tree.depth() {
            return Err(Error::InvalidEnvironment(format!(
                "tree has {} levels but {} supports were given",
                tree.depth(),
                support.len()
            )));
        }
        for (i, s) in support.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::InvalidEnvironment(format!("level {} has an empty support", i + 1)));
            }
            if s.iter().sum::<i32>() != 0 {
                return Err(Error::InvalidEnvironment(format!("level {} support is not zero-mean", i + 1)));
            }
        }
        if click_cost < 0 {
            return Err(Error::InvalidEnvironment("click cost must be nonnegative".into()));
        }
        Ok(EnvironmentSpec { kind: None, tree, support, click_cost, discount: 1.0 })
    }

    pub fn name(&self) -> String {
        self.kind.map(|k| k.to_string()).unwrap_or_else(|| "custom".into())
    }

    pub fn support_of(&self, node: NodeId) -> &[i32] {
        &self.support[self.tree.level(node) - 1]
    }

    /// Largest reward any node can hold.
    pub fn max_value(&self) -> i32 {
        self.support.iter().flatten().copied().max().unwrap_or(0)
    }

    pub fn min_value(&self) -> i32 {
        self.support.iter().flatten().copied().min().unwrap_or(0)
    }

    pub fn initial_belief(&self) -> Belief {
        Belief::initial(self.tree.num_reward_nodes())
    }

    /// Stable digest of the environment definition.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("environment serializes");
        hex_digest(json.as_bytes())
    }

    pub fn available_computations(&self, belief: &Belief) -> Vec<Computation> {
        let mut out: Vec<Computation> = self
            .tree
            .reward_nodes()
            .filter(|&n| !belief.is_observed(n))
            .map(Computation::Click)
            .collect();
        out.push(Computation::Terminate);
        out
    }

    pub fn is_available(&self, belief: &Belief, c: Computation) -> bool {
        match c {
            Computation::Terminate => true,
            Computation::Click(n) => self.tree.contains(n) && !belief.is_observed(n),
        }
    }

    /// Observed sum along every path (unobserved nodes count as their zero mean).
    pub fn path_values(&self, belief: &Belief) -> Vec<i32> {
        self.tree
            .paths()
            .iter()
            .map(|p| p.iter().map(|&n| belief.get(n).unwrap_or(0)).sum())
            .collect()
    }

    /// Expected return of executing the best plan under this belief.
    pub fn termination_reward(&self, belief: &Belief) -> i32 {
        self.path_values(belief).into_iter().max().unwrap_or(0)
    }

    pub fn outcome_distribution(&self, belief: &Belief, c: Computation) -> Result<Vec<(Belief, f64)>> {
        let node = match c {
            Computation::Click(n) if self.is_available(belief, c) => n,
            _ => return Err(Error::UnavailableComputation(c)),
        };
        let support = self.support_of(node);
        let p = 1.0 / support.len() as f64;
        Ok(support.iter().map(|&v| (belief.observe(node, v), p)).collect())
    }

    pub fn apply_computation(&self, belief: &Belief, c: Computation, truth: &GroundTruth) -> Result<Transition> {
        if !self.is_available(belief, c) {
            return Err(Error::UnavailableComputation(c));
        }
        Ok(match c {
            Computation::Click(n) => Transition {
                belief: belief.observe(n, truth.reward(n)),
                reward: -self.click_cost,
                done: false,
            },
            Computation::Terminate => Transition {
                belief: *belief,
                reward: self.termination_reward(belief),
                done: true,
            },
        })
    }

    pub fn sample_ground_truth<R: Rng + ?Sized>(&self, rng: &mut R) -> GroundTruth {
        let rewards = self
            .tree
            .reward_nodes()
            .map(|n| {
                let s = self.support_of(n);
                s[rng.gen_range(0..s.len())]
            })
            .collect();
        GroundTruth { rewards }
    }

    /// Lexicographically least image of the belief under the tree's symmetry group.
    pub fn canonicalize(&self, belief: &Belief) -> Belief {
        self.tree
            .automorphisms()
            .iter()
            .map(|p| belief.permuted(p))
            .min_by(|a, b| a.lex_cmp(b))
            .unwrap_or(*belief)
    }

    /// All images of the belief under the symmetry group (with repeats).
    pub fn symmetry_images(&self, belief: &Belief) -> Vec<Belief> {
        self.tree.automorphisms().iter().map(|p| belief.permuted(p)).collect()
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
