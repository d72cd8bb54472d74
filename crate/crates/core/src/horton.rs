//! Horton-Strahler orders, branches, Tokunaga side-branching and Horton ratios.

use std::collections::BTreeMap;

use serde::Serialize;
use smallvec::SmallVec;
use thiserror::Error;

use crate::tree::{Node, NodeId, Tree};

#[derive(Debug, Error, PartialEq)]
pub enum HortonError {
    #[error("Tokunaga indices need a binary tree; node {0} has {1} children")]
    NonBinary(NodeId, usize),
}

/// A tree with the Horton-Strahler order of every node.
#[derive(Debug, Clone)]
pub struct OrderedTree<'a> {
    pub tree: &'a Tree,
    pub order: Vec<u32>,
    /// Order of the root; 0 for the empty tree.
    pub omega: u32,
}

/// Orders by the recursion: a leaf has order 1; a parent takes the largest
/// child order, plus one when that maximum is attained at least twice. On
/// non-binary trees this coincides with the pruning definition.
pub fn assign_orders(tree: &Tree) -> OrderedTree<'_> {
    let mut order = vec![0u32; tree.len()];
    for v in (0..tree.len()).rev() {
        let mut best = 0;
        let mut hits = 0;
        for &c in tree.children(v) {
            match order[c].cmp(&best) {
                std::cmp::Ordering::Greater => {
                    best = order[c];
                    hits = 1;
                }
                std::cmp::Ordering::Equal => hits += 1,
                std::cmp::Ordering::Less => {}
            }
        }
        order[v] = if hits == 0 {
            1
        } else if hits >= 2 {
            best + 1
        } else {
            best
        };
    }
    let omega = order.first().copied().unwrap_or(0);
    OrderedTree { tree, order, omega }
}

/// Orders by iterated pruning: a node removed by the `r`-th pruning has order `r`.
pub fn pruning_orders(tree: &Tree) -> Vec<u32> {
    let mut order = vec![0u32; tree.len()];
    let mut current = tree.clone();
    let mut original: Vec<NodeId> = (0..tree.len()).collect();
    let mut r = 1;
    while !current.is_empty() {
        let (next, map) = current.prune_with_map();
        let mut survives = vec![false; current.len()];
        for &old in &map {
            survives[old] = true;
        }
        for (v, &alive) in survives.iter().enumerate() {
            if !alive {
                order[original[v]] = r;
            }
        }
        original = map.iter().map(|&old| original[old]).collect();
        current = next;
        r += 1;
    }
    order
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub order: u32,
    /// From the initial vertex (nearest the root) to the terminal vertex.
    pub nodes: Vec<NodeId>,
    /// Leaves below the initial vertex.
    pub magnitude: u64,
    /// False when the initial vertex lies on the leftmost or rightmost
    /// root-to-leaf path, i.e. the basin touches the series boundary.
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchSet {
    pub branches: Vec<Branch>,
    /// `counts[r - 1]` is N_r.
    pub counts: Vec<u64>,
    /// `magnitudes[r - 1]` is M_r, the mean magnitude of order-r branches.
    pub magnitudes: Vec<f64>,
}

pub fn branch_decomposition(ot: &OrderedTree) -> BranchSet {
    let tree = ot.tree;
    let n = tree.len();
    let omega = ot.omega as usize;
    let leaves = tree.leaves_below();
    let mut on_spine = vec![false; n];
    for pick_last in [false, true] {
        let mut v = tree.root();
        while let Some(u) = v {
            on_spine[u] = true;
            let ch = tree.children(u);
            v = if pick_last { ch.last() } else { ch.first() }.copied();
        }
    }

    let mut branches = Vec::new();
    let mut counts = vec![0u64; omega];
    let mut mag_sum = vec![0u64; omega];
    for v in 0..n {
        let r = ot.order[v];
        if tree.parent(v).is_some_and(|p| ot.order[p] == r) {
            continue;
        }
        let mut nodes = vec![v];
        let mut u = v;
        while let Some(&c) = tree.children(u).iter().find(|&&c| ot.order[c] == r) {
            nodes.push(c);
            u = c;
        }
        counts[r as usize - 1] += 1;
        mag_sum[r as usize - 1] += leaves[v] as u64;
        branches.push(Branch {
            order: r,
            nodes,
            magnitude: leaves[v] as u64,
            complete: !on_spine[v],
        });
    }
    let magnitudes = counts
        .iter()
        .zip(&mag_sum)
        .map(|(&c, &m)| if c > 0 { m as f64 / c as f64 } else { f64::NAN })
        .collect();
    BranchSet { branches, counts, magnitudes }
}

/// Side-branch counts of one branch: `counts[i - 1]` order-`i` branches join
/// its non-terminal vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchTau {
    pub branch: usize,
    pub order: u32,
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokunagaMatrix {
    pub omega: u32,
    pub complete_only: bool,
    /// Denominators N_j; only complete branches when `complete_only`.
    pub branch_counts: Vec<u64>,
    /// N_ij for i < j.
    pub side_counts: BTreeMap<(u32, u32), u64>,
    /// N_ii: order-i children of terminal vertices of order-(i+1) branches.
    pub merge_counts: Vec<u64>,
    /// Per-branch side counts; empty when built from pooled counts.
    pub tau: Vec<BranchTau>,
}

impl TokunagaMatrix {
    pub fn side_count(&self, i: u32, j: u32) -> u64 {
        self.side_counts.get(&(i, j)).copied().unwrap_or(0)
    }

    /// T_ij = N_ij / N_j; the diagonal is 2 by convention.
    pub fn ratio(&self, i: u32, j: u32) -> Option<f64> {
        if i == 0 || i > j || j > self.omega {
            return None;
        }
        if i == j {
            return Some(2.0);
        }
        let nj = self.branch_counts[j as usize - 1];
        (nj > 0).then(|| self.side_count(i, j) as f64 / nj as f64)
    }

    /// Mean T_k over all pairs `(i, i + k)` with a nonzero denominator,
    /// pooling numerators and denominators.
    pub fn pooled_tk(&self, k: u32) -> Option<f64> {
        let (mut num, mut den) = (0u64, 0u64);
        for j in (k + 1)..=self.omega {
            num += self.side_count(j - k, j);
            den += self.branch_counts[j as usize - 1];
        }
        (den > 0).then(|| num as f64 / den as f64)
    }
}

pub fn tokunaga_matrix(ot: &OrderedTree, complete_only: bool) -> Result<TokunagaMatrix, HortonError> {
    let bs = branch_decomposition(ot);
    tokunaga_from_branches(ot, &bs, complete_only)
}

pub fn tokunaga_from_branches(
    ot: &OrderedTree,
    bs: &BranchSet,
    complete_only: bool,
) -> Result<TokunagaMatrix, HortonError> {
    let tree = ot.tree;
    if let Some(v) = (0..tree.len()).find(|&v| !matches!(tree.children(v).len(), 0 | 2)) {
        return Err(HortonError::NonBinary(v, tree.children(v).len()));
    }
    let omega = ot.omega;
    let mut branch_counts = vec![0u64; omega as usize];
    let mut merge_counts = vec![0u64; omega as usize];
    let mut side_counts = BTreeMap::new();
    let mut tau = Vec::new();
    for (b, br) in bs.branches.iter().enumerate() {
        let j = br.order;
        let terminal = *br.nodes.last().unwrap();
        for &c in tree.children(terminal) {
            merge_counts[ot.order[c] as usize - 1] += 1;
        }
        if complete_only && !br.complete {
            continue;
        }
        branch_counts[j as usize - 1] += 1;
        let mut counts = vec![0u64; j as usize - 1];
        for &v in &br.nodes[..br.nodes.len() - 1] {
            for &c in tree.children(v) {
                let i = ot.order[c];
                if i < j {
                    counts[i as usize - 1] += 1;
                    *side_counts.entry((i, j)).or_insert(0) += 1;
                }
            }
        }
        tau.push(BranchTau { branch: b, order: j, counts });
    }
    Ok(TokunagaMatrix { omega, complete_only, branch_counts, side_counts, merge_counts, tau })
}

/// Additive branch statistics, for pooling over many trees.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HortonCounts {
    pub trees: u64,
    pub branches: Vec<u64>,
    pub complete_branches: Vec<u64>,
    pub magnitude_sum: Vec<u64>,
    pub side: BTreeMap<(u32, u32), u64>,
    pub complete_side: BTreeMap<(u32, u32), u64>,
    pub merges: Vec<u64>,
}

fn add_vec(dst: &mut Vec<u64>, src: &[u64]) {
    if dst.len() < src.len() {
        dst.resize(src.len(), 0);
    }
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn add_map(dst: &mut BTreeMap<(u32, u32), u64>, src: &BTreeMap<(u32, u32), u64>) {
    for (k, v) in src {
        *dst.entry(*k).or_insert(0) += v;
    }
}

impl HortonCounts {
    pub fn from_tree(tree: &Tree) -> Result<Self, HortonError> {
        let ot = assign_orders(tree);
        let bs = branch_decomposition(&ot);
        let all = tokunaga_from_branches(&ot, &bs, false)?;
        let complete = tokunaga_from_branches(&ot, &bs, true)?;
        let mut magnitude_sum = vec![0u64; ot.omega as usize];
        for b in &bs.branches {
            magnitude_sum[b.order as usize - 1] += b.magnitude;
        }
        Ok(HortonCounts {
            trees: 1,
            branches: bs.counts,
            complete_branches: complete.branch_counts,
            magnitude_sum,
            side: all.side_counts,
            complete_side: complete.side_counts,
            merges: all.merge_counts,
        })
    }

    pub fn add(&mut self, other: &HortonCounts) {
        self.trees += other.trees;
        add_vec(&mut self.branches, &other.branches);
        add_vec(&mut self.complete_branches, &other.complete_branches);
        add_vec(&mut self.magnitude_sum, &other.magnitude_sum);
        add_vec(&mut self.merges, &other.merges);
        add_map(&mut self.side, &other.side);
        add_map(&mut self.complete_side, &other.complete_side);
    }

    pub fn omega(&self) -> u32 {
        self.branches.len() as u32
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.branches
            .iter()
            .zip(&self.magnitude_sum)
            .map(|(&n, &m)| if n > 0 { m as f64 / n as f64 } else { f64::NAN })
            .collect()
    }

    pub fn stats(&self) -> HortonStats {
        HortonStats::from_counts(&self.branches, &self.magnitudes())
    }

    pub fn tokunaga(&self, complete_only: bool) -> TokunagaMatrix {
        let mut merge_counts = self.merges.clone();
        merge_counts.resize(self.branches.len(), 0);
        TokunagaMatrix {
            omega: self.omega(),
            complete_only,
            branch_counts: if complete_only {
                let mut c = self.complete_branches.clone();
                c.resize(self.branches.len(), 0);
                c
            } else {
                self.branches.clone()
            },
            side_counts: if complete_only { self.complete_side.clone() } else { self.side.clone() },
            merge_counts,
            tau: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HortonStats {
    pub omega: u32,
    pub n_r: Vec<u64>,
    pub m_r: Vec<f64>,
    /// η_r = N_r / N_{r+1}.
    pub eta_r: Vec<f64>,
    /// M_{r+1} / M_r.
    pub m_ratio: Vec<f64>,
    pub r_b: Option<f64>,
    pub r_m: Option<f64>,
    pub alpha: Option<f64>,
}

impl HortonStats {
    /// Fits use orders `1..=Ω-2` and need at least two of them.
    pub fn from_counts(n_r: &[u64], m_r: &[f64]) -> Self {
        let omega = n_r.len() as u32;
        let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { f64::NAN };
        let eta_r = n_r.windows(2).map(|w| ratio(w[0] as f64, w[1] as f64)).collect();
        let m_ratio = m_r.windows(2).map(|w| ratio(w[1], w[0])).collect();
        let fit_len = n_r.len().saturating_sub(2);
        let (r_b, r_m) = if fit_len >= 2 {
            let xs: Vec<f64> = (1..=fit_len).map(|r| r as f64).collect();
            let ln_n: Vec<f64> = n_r[..fit_len].iter().map(|&n| (n as f64).ln()).collect();
            let ln_m: Vec<f64> = m_r[..fit_len].iter().map(|m| m.ln()).collect();
            (
                Some((-crate::stats::ols_slope(&xs, &ln_n)).exp()),
                Some(crate::stats::ols_slope(&xs, &ln_m).exp()),
            )
        } else {
            (None, None)
        };
        let alpha = match (r_b, r_m) {
            (Some(b), Some(m)) => Some(b.ln() / m.ln()),
            _ => None,
        };
        HortonStats { omega, n_r: n_r.to_vec(), m_r: m_r.to_vec(), eta_r, m_ratio, r_b, r_m, alpha }
    }
}

pub fn horton_stats(bs: &BranchSet) -> HortonStats {
    HortonStats::from_counts(&bs.counts, &bs.magnitudes)
}

/// Branch-count ratio of a Tokunaga self-similar tree with parameters `(a, c)`.
pub fn predicted_rb(a: f64, c: f64) -> f64 {
    let s = 2.0 + c + a;
    (s + (s * s - 8.0 * c).sqrt()) / 2.0
}

/// Flat record of Horton and Tokunaga statistics for JSON output.
#[derive(Debug, Clone, Serialize)]
pub struct StatsRecord {
    pub omega: u32,
    #[serde(rename = "N_r")]
    pub n_r: Vec<u64>,
    #[serde(rename = "M_r")]
    pub m_r: Vec<f64>,
    pub eta_r: Vec<f64>,
    #[serde(rename = "N_ij")]
    pub n_ij: BTreeMap<String, u64>,
    #[serde(rename = "T_ij")]
    pub t_ij: BTreeMap<String, f64>,
    #[serde(rename = "R_B")]
    pub r_b: Option<f64>,
    #[serde(rename = "R_M")]
    pub r_m: Option<f64>,
    pub alpha: Option<f64>,
}

impl StatsRecord {
    pub fn new(stats: &HortonStats, tok: Option<&TokunagaMatrix>) -> Self {
        let mut n_ij = BTreeMap::new();
        let mut t_ij = BTreeMap::new();
        if let Some(tok) = tok {
            for j in 2..=tok.omega {
                for i in 1..j {
                    n_ij.insert(format!("{i},{j}"), tok.side_count(i, j));
                    if let Some(t) = tok.ratio(i, j) {
                        t_ij.insert(format!("{i},{j}"), t);
                    }
                }
            }
        }
        StatsRecord {
            omega: stats.omega,
            n_r: stats.n_r.clone(),
            m_r: stats.m_r.clone(),
            eta_r: stats.eta_r.clone(),
            n_ij,
            t_ij,
            r_b: stats.r_b,
            r_m: stats.r_m,
            alpha: stats.alpha,
        }
    }
}

/// Deterministic Tokunaga tree of order `omega`: every order-j branch carries
/// `round(a c^(k-1))` side branches of order `j - k`, attached as right
/// children along its non-terminal vertices, largest orders nearest the root.
/// Unit edge lengths.
pub fn tokunaga_tree(a: f64, c: f64, omega: u32) -> Tree {
    if omega == 0 {
        return Tree::empty();
    }
    let tk = |k: u32| (a * c.powi(k as i32 - 1)).round() as usize;
    let mut raw: Vec<Node> = Vec::new();
    // Explicit work list: (order, parent slot to fill).
    let new_node = |raw: &mut Vec<Node>, parent: Option<NodeId>| {
        raw.push(Node { parent, children: SmallVec::new(), length: 1.0 });
        let id = raw.len() - 1;
        if let Some(p) = parent {
            raw[p].children.push(id);
        }
        id
    };
    let mut work: Vec<(u32, Option<NodeId>)> = vec![(omega, None)];
    while let Some((j, parent)) = work.pop() {
        let mut v = new_node(&mut raw, parent);
        let mut pending = Vec::new();
        for k in (1..j).rev() {
            for _ in 0..tk(k) {
                // Non-terminal vertex: continuation on the left, side branch on the right.
                let cont = new_node(&mut raw, Some(v));
                pending.push((j - k, v));
                v = cont;
            }
        }
        if j > 1 {
            pending.push((j - 1, v));
            pending.push((j - 1, v));
        }
        work.extend(pending.into_iter().rev().map(|(j, p)| (j, Some(p))));
    }
    Tree::from_arena(raw, Some(0), |_| true).0
}
