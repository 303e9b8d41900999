//! Average-linkage (UPGMA) clustering of demonstration feature vectors,
//! cluster heuristic values and the elbow rule for choosing cluster counts.

use std::cmp::Ordering;
use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lpp::{lpp_map_depths, Dataset, MapFormula};

/// Exact average distance `sum / count`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Height {
    pub sum: u64,
    pub count: u64,
}

impl Height {
    pub fn value(&self) -> f64 {
        self.sum as f64 / self.count as f64
    }
}

impl Ord for Height {
    fn cmp(&self, o: &Self) -> Ordering {
        (self.sum as u128 * o.count as u128).cmp(&(o.sum as u128 * self.count as u128))
    }
}

impl PartialOrd for Height {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// One merge: clusters are named by their smallest member.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: Height,
}

/// Full agglomeration history of a vector set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Linkage {
    pub n: usize,
    pub merges: Vec<Merge>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterPartition {
    /// Clusters ordered by smallest member; members ascending.
    pub clusters: Vec<Vec<usize>>,
    pub n: usize,
    pub trace: Vec<Merge>,
}

fn hamming(a: &[u64], b: &[u64]) -> u64 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones() as u64).sum()
}

/// Agglomerates bit vectors under average linkage of l1 (Hamming)
/// distances. Ties merge the lexicographically smallest pair of cluster
/// names.
pub fn upgma(vectors: &[Vec<u64>]) -> Result<Linkage> {
    let n = vectors.len();
    if n == 0 {
        return Err(Error::InvalidArgument("no vectors to cluster".into()));
    }
    // sums[i][j] for i < j: total pairwise distance between clusters i and j.
    let mut sums = vec![vec![0u64; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = hamming(&vectors[i], &vectors[j]);
            sums[i][j] = d;
            sums[j][i] = d;
        }
    }
    let mut size = vec![1u64; n];
    let mut active = vec![true; n];
    let h = |sums: &Vec<Vec<u64>>, size: &Vec<u64>, i: usize, j: usize| Height { sum: sums[i][j], count: size[i] * size[j] };
    // best[i]: nearest active j > i (smallest j on ties).
    let scan = |sums: &Vec<Vec<u64>>, size: &Vec<u64>, active: &Vec<bool>, i: usize| {
        let mut best: Option<(Height, usize)> = None;
        for j in i + 1..n {
            if active[j] {
                let d = h(sums, size, i, j);
                if best.is_none_or(|(b, _)| d < b) {
                    best = Some((d, j));
                }
            }
        }
        best
    };
    let mut best: Vec<Option<(Height, usize)>> = (0..n).map(|i| scan(&sums, &size, &active, i)).collect();
    let mut merges = Vec::with_capacity(n - 1);
    for _ in 1..n {
        let mut pick: Option<(Height, usize, usize)> = None;
        for i in 0..n {
            if let (true, Some((d, j))) = (active[i], best[i]) {
                if pick.is_none_or(|(b, _, _)| d < b) {
                    pick = Some((d, i, j));
                }
            }
        }
        let (height, a, b) = pick.expect("two active clusters remain");
        merges.push(Merge { a, b, height });
        active[b] = false;
        for k in 0..n {
            if active[k] && k != a {
                let s = sums[a][k] + sums[b][k];
                sums[a][k] = s;
                sums[k][a] = s;
            }
        }
        size[a] += size[b];
        for i in 0..n {
            if !active[i] {
                best[i] = None;
                continue;
            }
            let stale = match best[i] {
                Some((_, j)) => j == a || j == b,
                None => false,
            };
            if i == a || stale {
                best[i] = scan(&sums, &size, &active, i);
            } else if i < a {
                let d = h(&sums, &size, i, a);
                if let Some((bd, bj)) = best[i] {
                    if d < bd || (d == bd && a < bj) {
                        best[i] = Some((d, a));
                    }
                }
            }
        }
    }
    Ok(Linkage { n, merges })
}

impl Linkage {
    /// Partition left after all but the last `k − 1` merges.
    pub fn cut(&self, k: usize) -> Result<ClusterPartition> {
        if k == 0 || k > self.n {
            return Err(Error::InvalidArgument(format!("cannot cut {} vectors into {k} clusters", self.n)));
        }
        let mut owner: Vec<usize> = (0..self.n).collect();
        let trace = self.merges[..self.n - k].to_vec();
        for m in &trace {
            for o in owner.iter_mut() {
                if *o == m.b {
                    *o = m.a;
                }
            }
        }
        let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for (i, o) in owner.into_iter().enumerate() {
            groups.entry(o).or_default().push(i);
        }
        Ok(ClusterPartition { clusters: groups.into_values().collect(), n: k, trace })
    }
}

pub fn upgma_cut(vectors: &[Vec<u64>], k: usize) -> Result<ClusterPartition> {
    upgma(vectors)?.cut(k)
}

/// Feature rows of a dataset's click pairs, plus the pair index of each.
pub fn click_vectors(ds: &Dataset) -> (Vec<usize>, Vec<Vec<u64>>) {
    let pairs: Vec<usize> = (0..ds.num_pairs()).filter(|&p| ds.is_click(p)).collect();
    let vectors = pairs.iter().map(|&p| ds.matrix.row_bits(ds.positive_row(p).expect("click pair"))).collect();
    (pairs, vectors)
}

/// Maps clusters of click pairs back to dataset pairs and attaches each
/// termination pair to the cluster of its trajectory's previous click, or
/// to the largest cluster (first on ties) when the trajectory has none.
pub fn attach_pairs(ds: &Dataset, click_pairs: &[usize], part: &ClusterPartition) -> Vec<Vec<usize>> {
    let mut clusters: Vec<Vec<usize>> = part.clusters.iter().map(|c| c.iter().map(|&i| click_pairs[i]).collect()).collect();
    let mut cluster_of = HashMap::new();
    for (k, c) in clusters.iter().enumerate() {
        for &p in c {
            cluster_of.insert(p, k);
        }
    }
    let largest = (0..clusters.len()).max_by(|&a, &b| clusters[a].len().cmp(&clusters[b].len()).then(b.cmp(&a))).unwrap_or(0);
    for p in 0..ds.num_pairs() {
        if ds.is_click(p) {
            continue;
        }
        let prev = (0..p).rev().take_while(|&q| ds.trajectory[q] == ds.trajectory[p]).find(|&q| ds.is_click(q));
        let k = prev.and_then(|q| cluster_of.get(&q).copied()).unwrap_or(largest);
        if let Some(c) = clusters.get_mut(k) {
            c.push(p);
        }
    }
    for c in clusters.iter_mut() {
        c.sort_unstable();
    }
    clusters
}

/// Random split into a train part of ⌈split·n⌉ pairs and a validation part.
/// Sets of one or two pairs go entirely to training.
pub fn s_split(pairs: &[usize], split: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut v = pairs.to_vec();
    if v.len() <= 2 {
        return (v, Vec::new());
    }
    v.shuffle(rng);
    let k = ((split * v.len() as f64).ceil() as usize).clamp(1, v.len() - 1);
    let mut val = v.split_off(k);
    v.sort_unstable();
    val.sort_unstable();
    (v, val)
}

/// How a cluster's formula likelihood enters its heuristic value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodMode {
    /// Per-pair geometric mean of the validation likelihood.
    GeometricMean,
    /// Raw product over validation pairs.
    Product,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterValue {
    pub value: f64,
    pub formula: Option<MapFormula>,
}

/// Deterministic split seed for a cluster, independent of where the
/// cluster appears.
fn cluster_seed(seed: u64, members: &[usize]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for m in members {
        h.update((*m as u64).to_le_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is long enough"))
}

#[derive(Clone, Debug)]
pub struct HeuristicConfig {
    pub max_depth: usize,
    pub split: f64,
    pub lambda: f64,
    pub mode: LikelihoodMode,
    pub seed: u64,
}

/// Likelihood of the best-posterior formula over depth bounds, times the
/// cluster's share of all pairs. A cluster without a formula scores 0.
pub fn heuristic_value(ds: &Dataset, cluster: &[usize], cfg: &HeuristicConfig) -> Result<ClusterValue> {
    if cluster.is_empty() {
        return Err(Error::InvalidArgument("empty cluster".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cluster_seed(cfg.seed, cluster));
    let (train, val) = s_split(cluster, cfg.split, &mut rng);
    let best = lpp_map_depths(ds, &train, &val, cfg.max_depth, cfg.lambda)?
        .into_iter()
        .flatten()
        .fold(None::<MapFormula>, |b, f| match b {
            Some(b) if b.log_posterior >= f.log_posterior => Some(b),
            _ => Some(f),
        });
    let share = cluster.len() as f64 / ds.num_pairs() as f64;
    let value = match &best {
        None => 0.0,
        Some(f) => match cfg.mode {
            LikelihoodMode::GeometricMean => f.mean_likelihood * share,
            LikelihoodMode::Product => f.log_likelihood.exp() * share,
        },
    };
    Ok(ClusterValue { value, formula: best })
}

/// Clustering of one dataset with cached heuristic values. Cuts of one
/// hierarchy share most clusters, so each is scored once.
pub struct Clusterer<'a> {
    pub ds: &'a Dataset,
    pub click_pairs: Vec<usize>,
    pub linkage: Linkage,
    cfg: HeuristicConfig,
    cache: HashMap<Vec<usize>, f64>,
}

impl<'a> Clusterer<'a> {
    pub fn new(ds: &'a Dataset, cfg: HeuristicConfig) -> Result<Self> {
        let (click_pairs, vectors) = click_vectors(ds);
        let linkage = upgma(&vectors)?;
        Ok(Clusterer { ds, click_pairs, linkage, cfg, cache: HashMap::new() })
    }

    pub fn max_clusters(&self) -> usize {
        self.linkage.n
    }

    /// Dataset-pair clusters for a cut into `k` clusters.
    pub fn clusters(&self, k: usize) -> Result<Vec<Vec<usize>>> {
        let k = k.min(self.linkage.n);
        Ok(attach_pairs(self.ds, &self.click_pairs, &self.linkage.cut(k)?))
    }

    pub fn value(&mut self, cluster: &[usize]) -> Result<f64> {
        if let Some(v) = self.cache.get(cluster) {
            return Ok(*v);
        }
        let v = heuristic_value(self.ds, cluster, &self.cfg)?.value;
        self.cache.insert(cluster.to_vec(), v);
        Ok(v)
    }

    /// Sum of heuristic values of the clusters holding at least a fraction
    /// `x` of all pairs.
    pub fn clustering_value(&mut self, k: usize, x: f64) -> Result<f64> {
        let total = self.ds.num_pairs() as f64;
        let mut cv = 0.0;
        for c in self.clusters(k)? {
            if c.len() as f64 / total >= x {
                cv += self.value(&c)?;
            }
        }
        Ok(cv)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElbowResult {
    pub candidates: Vec<usize>,
    /// (N, CV) for every grid point.
    pub curve: Vec<(usize, f64)>,
    /// True when no grid step increases CV.
    pub no_elbow: bool,
}

/// Picks the `k` grid points after the largest CV increases, largest first,
/// ties to the smaller N.
pub fn elbow_from_curve(curve: &[(usize, f64)], k: usize) -> Result<ElbowResult> {
    if curve.len() < 2 {
        return Err(Error::InvalidArgument("elbow grid needs at least two points".into()));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("at least one candidate is required".into()));
    }
    let mut inc: Vec<(f64, usize)> = curve.windows(2).map(|w| (w[1].1 - w[0].1, w[1].0)).collect();
    let no_elbow = inc.iter().all(|(d, _)| *d <= 0.0);
    inc.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(ElbowResult { candidates: inc.iter().take(k).map(|x| x.1).collect(), curve: curve.to_vec(), no_elbow })
}

pub fn elbow_candidates(clusterer: &mut Clusterer, grid: &[usize], x: f64, k: usize) -> Result<ElbowResult> {
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("elbow grid must be increasing".into()));
    }
    let curve = grid.iter().map(|&n| Ok((n, clusterer.clustering_value(n, x)?))).collect::<Result<Vec<_>>>()?;
    elbow_from_curve(&curve, k)
}

/// Two-column (N, CV) table.
pub fn curve_table(curve: &[(usize, f64)]) -> String {
    let mut s = String::from("n\tcv\n");
    for (n, v) in curve {
        s.push_str(&format!("{n}\t{v:.6}\n"));
    }
    s
}

pub const DEFAULT_GRID: std::ops::RangeInclusive<usize> = 2..=30;
