//! Exact backward induction over the belief DAG.
//!
//! Beliefs are reduced modulo the tree's symmetries before memoization. The
//! root's subtrees ("branches") are grouped into isomorphism classes; every
//! branch state is mapped to a canonical id once, up front, and a belief
//! becomes a sorted tuple of branch ids per class. Sorted tuples are ranked
//! with the combinatorial number system so the memo is a dense array.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::env::{Belief, Computation, EnvironmentSpec, NodeId, MAX_NODES, ROOT};
use crate::error::{Error, Result};

/// Upper bound on the dense memo length.
const MAX_TABLE: u64 = 1 << 27;
const MAX_BRANCH_STATES: u64 = 1 << 20;
const CACHE_MAGIC: &[u8; 8] = b"MLVTAB01";

type Key = [u32; MAX_NODES];

#[derive(Debug)]
struct BranchClass {
    strides: Vec<u32>,
    raw_to_id: Vec<u32>,
    best: Vec<i32>,
    /// Distinct click options per canonical id, each the list of successor ids
    /// (one per equally likely outcome).
    options: Vec<Vec<Vec<u32>>>,
    /// Position of each branch of this class in the key.
    positions: std::ops::Range<usize>,
    stride: u64,
}

impl BranchClass {
    fn n_states(&self) -> usize {
        self.best.len()
    }
}

#[derive(Debug)]
struct Model {
    classes: Vec<BranchClass>,
    /// For each reward node: (branch index in key order, slot, support).
    node_loc: Vec<(usize, usize)>,
    /// Branch slots (nodes in shape-sorted preorder), in key order.
    branch_slots: Vec<Vec<NodeId>>,
    branch_class: Vec<usize>,
    n_branches: usize,
    binom: Vec<Vec<u64>>,
    table_len: u64,
    click_cost: f64,
    supports: Vec<Vec<i32>>,
}

impl Model {
    fn new(env: &EnvironmentSpec) -> Result<Self> {
        let tree = &env.tree;
        let roots: Vec<NodeId> = tree.children(ROOT).to_vec();
        let mut shapes: Vec<(String, NodeId)> = roots.iter().map(|&r| (tree.shape(r), r)).collect();
        shapes.sort();

        let mut classes: Vec<BranchClass> = Vec::new();
        let mut class_shape: Vec<String> = Vec::new();
        let mut branch_slots = Vec::new();
        let mut branch_class = Vec::new();
        let mut node_loc = vec![(usize::MAX, usize::MAX); tree.node_count()];
        for (shape, root) in &shapes {
            let slots = shape_preorder(env, *root);
            if class_shape.last() != Some(shape) {
                let start = branch_slots.len();
                classes.push(build_class(env, &slots, start)?);
                class_shape.push(shape.clone());
            }
            let ci = classes.len() - 1;
            let bi = branch_slots.len();
            for (j, &n) in slots.iter().enumerate() {
                node_loc[n] = (bi, j);
            }
            branch_slots.push(slots);
            branch_class.push(ci);
            classes[ci].positions.end = bi + 1;
        }
        let n_branches = branch_slots.len();

        let max_n = classes.iter().map(|c| c.n_states() + c.positions.len()).max().unwrap_or(1);
        let max_k = classes.iter().map(|c| c.positions.len()).max().unwrap_or(1);
        let binom = binomials(max_n + 1, max_k + 1);
        let mut table_len: u64 = 1;
        for c in classes.iter_mut() {
            let k = c.positions.len();
            let count = binom[c.n_states() + k - 1][k];
            c.stride = table_len;
            table_len = table_len
                .checked_mul(count)
                .filter(|&t| t <= MAX_TABLE)
                .ok_or_else(|| Error::InvalidEnvironment("belief space too large for the exact solver".into()))?;
        }
        Ok(Model {
            classes,
            node_loc,
            branch_slots,
            branch_class,
            n_branches,
            binom,
            table_len,
            click_cost: env.click_cost as f64,
            supports: tree.reward_nodes().map(|n| env.support_of(n).to_vec()).collect(),
        })
    }

    fn rank(&self, key: &Key) -> usize {
        let mut r = 0u64;
        for c in &self.classes {
            let mut cr = 0u64;
            for (i, p) in c.positions.clone().enumerate() {
                cr += self.binom[key[p] as usize + i][i + 1];
            }
            r += cr * c.stride;
        }
        r as usize
    }

    fn termination(&self, key: &Key) -> i32 {
        let mut best = i32::MIN;
        for (b, &ci) in self.branch_class.iter().enumerate() {
            best = best.max(self.classes[ci].best[key[b] as usize]);
        }
        if best == i32::MIN {
            0
        } else {
            best
        }
    }

    /// Replaces branch `pos` with `id` and restores sorted order in its class.
    fn with_branch(&self, key: &Key, pos: usize, id: u32) -> Key {
        let mut k = *key;
        let range = self.classes[self.branch_class[pos]].positions.clone();
        k[pos] = id;
        let mut i = pos;
        while i > range.start && k[i - 1] > k[i] {
            k.swap(i - 1, i);
            i -= 1;
        }
        while i + 1 < range.end && k[i + 1] < k[i] {
            k.swap(i + 1, i);
            i += 1;
        }
        k
    }

    /// Bellman backup of `key` given a lookup for successor values.
    fn backup(&self, key: &Key, child: &mut dyn FnMut(&Key) -> f64) -> f64 {
        let mut best = self.termination(key) as f64;
        for pos in 0..self.n_branches {
            let ci = self.branch_class[pos];
            let class = &self.classes[ci];
            if pos > class.positions.start && key[pos - 1] == key[pos] {
                continue;
            }
            for outcomes in &class.options[key[pos] as usize] {
                let mut sum = 0.0;
                for &nid in outcomes {
                    sum += child(&self.with_branch(key, pos, nid));
                }
                let q = -self.click_cost + sum / outcomes.len() as f64;
                if q > best {
                    best = q;
                }
            }
        }
        best
    }

    fn key_of(&self, belief: &Belief) -> Result<Key> {
        let mut key = [0u32; MAX_NODES];
        for (b, slots) in self.branch_slots.iter().enumerate() {
            let class = &self.classes[self.branch_class[b]];
            let mut raw = 0u32;
            for (j, &n) in slots.iter().enumerate() {
                raw += self.digit(n, belief.get(n))? * class.strides[j];
            }
            key[b] = class.raw_to_id[raw as usize];
        }
        for c in &self.classes {
            key[c.positions.clone()].sort_unstable();
        }
        Ok(key)
    }

    fn digit(&self, node: NodeId, value: Option<i32>) -> Result<u32> {
        match value {
            None => Ok(0),
            Some(v) => self.supports[node - 1]
                .iter()
                .position(|&s| s == v)
                .map(|i| i as u32 + 1)
                .ok_or_else(|| Error::InvalidArgument(format!("value {v} is not in the support of node {node}"))),
        }
    }
}

/// Branch nodes in preorder with children ordered by shape signature, so that
/// isomorphic branches list corresponding nodes at the same positions.
fn shape_preorder(env: &EnvironmentSpec, root: NodeId) -> Vec<NodeId> {
    let tree = &env.tree;
    let mut out = Vec::new();
    let mut stack = vec![root];
    while let Some(n) = stack.pop() {
        out.push(n);
        let mut kids: Vec<(String, NodeId)> = tree.children(n).iter().map(|&c| (tree.shape(c), c)).collect();
        kids.sort();
        for (_, c) in kids.into_iter().rev() {
            stack.push(c);
        }
    }
    out
}

fn build_class(env: &EnvironmentSpec, slots: &[NodeId], start: usize) -> Result<BranchClass> {
    let tree = &env.tree;
    let size = slots.len();
    let local: HashMap<NodeId, usize> = slots.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let radix: Vec<u32> = slots.iter().map(|&n| env.support_of(n).len() as u32 + 1).collect();
    let mut strides = vec![1u32; size];
    let mut total: u64 = 1;
    for j in 0..size {
        strides[j] = total as u32;
        total *= radix[j] as u64;
        if total > MAX_BRANCH_STATES {
            return Err(Error::InvalidEnvironment("branch too large for the exact solver".into()));
        }
    }
    // local children in shape order, grouped by shape
    let kids: Vec<Vec<usize>> = slots
        .iter()
        .map(|&n| {
            let mut k: Vec<(String, usize)> =
                tree.children(n).iter().map(|&c| (tree.shape(c), local[&c])).collect();
            k.sort();
            k.into_iter().map(|(_, c)| c).collect()
        })
        .collect();
    let shapes: Vec<String> = slots.iter().map(|&n| tree.shape(n)).collect();
    let leaf_paths: Vec<Vec<usize>> = tree
        .paths()
        .iter()
        .filter(|p| p.first() == slots.first())
        .map(|p| p.iter().map(|n| local[n]).collect())
        .collect();

    fn canon(u: usize, digits: &[u32], kids: &[Vec<usize>], shapes: &[String]) -> Vec<u32> {
        let mut out = vec![digits[u]];
        let mut i = 0;
        let ks = &kids[u];
        while i < ks.len() {
            let mut j = i;
            while j < ks.len() && shapes[ks[j]] == shapes[ks[i]] {
                j += 1;
            }
            let mut group: Vec<Vec<u32>> = ks[i..j].iter().map(|&c| canon(c, digits, kids, shapes)).collect();
            group.sort();
            for g in group {
                out.extend(g);
            }
            i = j;
        }
        out
    }

    let n_raw = total as usize;
    let mut raw_to_id = vec![0u32; n_raw];
    let mut canon_id: HashMap<u32, u32> = HashMap::new();
    let mut reps: Vec<u32> = Vec::new();
    let mut digits = vec![0u32; size];
    for raw in 0..n_raw {
        let mut r = raw as u32;
        for j in 0..size {
            digits[j] = r % radix[j];
            r /= radix[j];
        }
        let cd = canon(0, &digits, &kids, &shapes);
        let craw: u32 = cd.iter().zip(&strides).map(|(d, s)| d * s).sum();
        let next = reps.len() as u32;
        let id = *canon_id.entry(craw).or_insert_with(|| {
            reps.push(craw);
            next
        });
        raw_to_id[raw] = id;
    }

    let value_of = |raw: u32, j: usize| -> i32 {
        let d = (raw / strides[j]) % radix[j];
        if d == 0 {
            0
        } else {
            env.support_of(slots[j])[d as usize - 1]
        }
    };
    let best: Vec<i32> = reps
        .iter()
        .map(|&raw| {
            leaf_paths
                .iter()
                .map(|p| p.iter().map(|&j| value_of(raw, j)).sum::<i32>())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let options: Vec<Vec<Vec<u32>>> = reps
        .iter()
        .map(|&raw| {
            let mut opts: Vec<Vec<u32>> = (0..size)
                .filter(|&j| (raw / strides[j]).is_multiple_of(radix[j]))
                .map(|j| (1..radix[j]).map(|d| raw_to_id[(raw + d * strides[j]) as usize]).collect())
                .collect();
            opts.sort();
            opts.dedup();
            opts
        })
        .collect();
    Ok(BranchClass { strides, raw_to_id, best, options, positions: start..start, stride: 1 })
}

fn binomials(n: usize, k: usize) -> Vec<Vec<u64>> {
    let mut t = vec![vec![0u64; k + 1]; n + 1];
    for i in 0..=n {
        t[i][0] = 1;
        for j in 1..=k.min(i) {
            t[i][j] = t[i - 1][j - 1].saturating_add(if j < i { t[i - 1][j] } else { 0 });
        }
    }
    t
}

/// Optimal values over all canonical beliefs of one environment.
#[derive(Debug)]
pub struct ValueTable {
    env: EnvironmentSpec,
    model: Model,
    memo: Vec<f64>,
}

/// Solves the metalevel MDP exactly, filling the memo from the initial belief.
pub fn solve(env: &EnvironmentSpec) -> Result<ValueTable> {
    let model = Model::new(env)?;
    let mut memo = vec![f64::NAN; model.table_len as usize];
    let root = model.key_of(&env.initial_belief())?;
    fill(&model, &mut memo, &root);
    Ok(ValueTable { env: env.clone(), model, memo })
}

fn fill(model: &Model, memo: &mut Vec<f64>, key: &Key) -> f64 {
    let r = model.rank(key);
    let v = memo[r];
    if !v.is_nan() {
        return v;
    }
    let v = model.backup(key, &mut |k| fill(model, memo, k));
    memo[r] = v;
    v
}

impl ValueTable {
    pub fn env(&self) -> &EnvironmentSpec {
        &self.env
    }

    /// Number of canonical beliefs with a stored value.
    pub fn state_count(&self) -> usize {
        self.memo.iter().filter(|v| !v.is_nan()).count()
    }

    pub fn initial_value(&self) -> f64 {
        self.value(&self.env.initial_belief()).expect("initial belief is valid")
    }

    pub fn value(&self, belief: &Belief) -> Result<f64> {
        Ok(self.lookup(&self.model.key_of(belief)?))
    }

    fn lookup(&self, key: &Key) -> f64 {
        let v = self.memo[self.model.rank(key)];
        if v.is_nan() {
            self.model.backup(key, &mut |k| self.lookup(k))
        } else {
            v
        }
    }

    /// Q values of every available computation, clicks in node order then
    /// termination.
    pub fn q_values(&self, belief: &Belief) -> Result<Vec<(Computation, f64)>> {
        let key = self.model.key_of(belief)?;
        let mut out = Vec::new();
        for n in self.env.tree.reward_nodes() {
            if belief.is_observed(n) {
                continue;
            }
            let (b, j) = self.model.node_loc[n];
            let slots = &self.model.branch_slots[b];
            let class = &self.model.classes[self.model.branch_class[b]];
            let mut raw = 0u32;
            for (i, &m) in slots.iter().enumerate() {
                raw += self.model.digit(m, belief.get(m))? * class.strides[i];
            }
            // The key is sorted within each class, so locate this branch's
            // current id rather than trusting its index.
            let current = class.raw_to_id[raw as usize];
            let pos = class.positions.clone().find(|&p| key[p] == current).expect("branch id present in key");
            let support = self.env.support_of(n);
            let mut sum = 0.0;
            for d in 1..=support.len() as u32 {
                let id = class.raw_to_id[(raw + d * class.strides[j]) as usize];
                sum += self.lookup(&self.model.with_branch(&key, pos, id));
            }
            out.push((Computation::Click(n), -self.model.click_cost + sum / support.len() as f64));
        }
        out.push((Computation::Terminate, self.env.termination_reward(belief) as f64));
        Ok(out)
    }

    /// Computations whose Q is within `tie_epsilon` of the best. Never empty.
    pub fn optimal_action_set(&self, belief: &Belief, tie_epsilon: f64) -> Result<Vec<Computation>> {
        let q = self.q_values(belief)?;
        let best = q.iter().map(|(_, v)| *v).fold(f64::NEG_INFINITY, f64::max);
        Ok(q.into_iter().filter(|(_, v)| *v >= best - tie_epsilon).map(|(c, _)| c).collect())
    }

    /// Writes `(rank, value)` pairs for every stored belief behind a header
    /// carrying the environment fingerprint.
    pub fn save_cache(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CACHE_MAGIC)?;
        let fp = self.env.fingerprint();
        w.write_all(fp.as_bytes())?;
        w.write_all(&(self.memo.len() as u64).to_le_bytes())?;
        w.write_all(&(self.state_count() as u64).to_le_bytes())?;
        for (i, v) in self.memo.iter().enumerate() {
            if !v.is_nan() {
                w.write_all(&(i as u64).to_le_bytes())?;
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Loads a cache written by [`ValueTable::save_cache`]; fails if it was
    /// produced for a different environment.
    pub fn load_cache(env: &EnvironmentSpec, path: &Path) -> Result<Self> {
        let model = Model::new(env)?;
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(Error::Format("not a value-table cache".into()));
        }
        let mut fp = [0u8; 64];
        r.read_exact(&mut fp)?;
        let found = String::from_utf8_lossy(&fp).into_owned();
        let expected = env.fingerprint();
        if found != expected {
            return Err(Error::FingerprintMismatch { expected, found });
        }
        let mut u = [0u8; 8];
        r.read_exact(&mut u)?;
        let len = u64::from_le_bytes(u);
        if len != model.table_len {
            return Err(Error::Format("cache table size does not match the environment".into()));
        }
        r.read_exact(&mut u)?;
        let count = u64::from_le_bytes(u);
        let mut memo = vec![f64::NAN; len as usize];
        for _ in 0..count {
            r.read_exact(&mut u)?;
            let i = u64::from_le_bytes(u) as usize;
            let mut f = [0u8; 8];
            r.read_exact(&mut f)?;
            *memo
                .get_mut(i)
                .ok_or_else(|| Error::Format("cache index out of range".into()))? = f64::from_le_bytes(f);
        }
        Ok(ValueTable { env: env.clone(), model, memo })
    }
}
