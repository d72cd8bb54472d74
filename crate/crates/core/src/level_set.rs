//! Level-set trees of finite time series.
//!
//! A [`Series`] is read as the piecewise-linear function through its samples.
//! Its level-set tree has one leaf per local maximum (boundary maxima
//! included) and one internal vertex per internal local minimum; boundary
//! minima never become vertices. Constant runs count once, at their leftmost
//! sample.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use smallvec::SmallVec;
use thiserror::Error;

use crate::tree::{Node, NodeId, Tree};

#[derive(Debug, Error, PartialEq)]
pub enum LevelSetError {
    #[error("series is empty")]
    Empty,
    #[error("value at index {index} is not finite")]
    NonFinite { index: usize },
    #[error("degenerate series: constant or empty, no local maximum")]
    Degenerate,
    #[error("abscissa {0} lies outside the function domain")]
    OutOfDomain(f64),
}

/// Finite real-valued samples at integer times.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    values: Vec<f64>,
}

impl Series {
    /// Validates that the series is non-empty and finite.
    pub fn new(values: Vec<f64>) -> Result<Self, LevelSetError> {
        if values.is_empty() {
            return Err(LevelSetError::Empty);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(LevelSetError::NonFinite { index });
        }
        Ok(Series { values })
    }

    /// No validation. Pruning may legitimately yield an empty series.
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Series { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Applies `f` pointwise.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Series {
        Series::from_raw(self.values.iter().map(|&v| f(v)).collect())
    }
}

impl From<Series> for Vec<f64> {
    fn from(s: Series) -> Self {
        s.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtremumKind {
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extremum {
    pub index: usize,
    pub value: f64,
    pub kind: ExtremumKind,
    pub boundary: bool,
}

/// Strictly alternating extrema including both boundary points. A single
/// constant run yields one boundary maximum.
pub fn extrema_with_boundary(values: &[f64]) -> Vec<Extremum> {
    // Collapse constant runs to their leftmost sample.
    let mut runs: Vec<(usize, f64)> = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        if runs.last().is_none_or(|&(_, w)| w != v) {
            runs.push((i, v));
        }
    }
    let r = runs.len();
    if r == 0 {
        return Vec::new();
    }
    if r == 1 {
        let (index, value) = runs[0];
        return vec![Extremum { index, value, kind: ExtremumKind::Max, boundary: true }];
    }
    let mut out = Vec::with_capacity(r / 2 + 2);
    for j in 0..r {
        let (index, value) = runs[j];
        let higher_than = |k: usize| value > runs[k].1;
        let kind = if j == 0 {
            if higher_than(1) { ExtremumKind::Max } else { ExtremumKind::Min }
        } else if j == r - 1 {
            if higher_than(r - 2) { ExtremumKind::Max } else { ExtremumKind::Min }
        } else {
            let (l, rr) = (higher_than(j - 1), higher_than(j + 1));
            match (l, rr) {
                (true, true) => ExtremumKind::Max,
                (false, false) => ExtremumKind::Min,
                _ => continue,
            }
        };
        out.push(Extremum { index, value, kind, boundary: j == 0 || j == r - 1 });
    }
    out
}

/// Internal local extrema only, strictly alternating.
pub fn local_extrema(s: &Series) -> Vec<Extremum> {
    extrema_with_boundary(&s.values)
        .into_iter()
        .filter(|e| !e.boundary)
        .collect()
}

/// Level-set tree together with the series point behind every vertex.
#[derive(Debug, Clone)]
pub struct LevelSetTree {
    pub tree: Tree,
    /// Series value at the extremum of each node.
    pub value: Vec<f64>,
    /// Sample index of the extremum of each node.
    pub position: Vec<usize>,
}

/// Builds the level-set tree. Edge lengths are value differences between
/// adjacent extrema. Internal minima with equal values and no lower value
/// between them share a vertex, so ties can produce non-binary vertices.
///
/// Ghost edge: when the lower boundary value lies strictly below every internal
/// minimum, its length is the gap between the lowest internal minimum and that
/// boundary value; otherwise it is 1. With no internal minimum the single leaf
/// sits over the lower boundary value the same way.
pub fn level_set_tree_annotated(s: &Series) -> Result<LevelSetTree, LevelSetError> {
    let v = s.values();
    if v.is_empty() || (v.len() > 1 && v.iter().all(|&x| x == v[0])) {
        return Err(LevelSetError::Degenerate);
    }
    let ext: Vec<Extremum> = extrema_with_boundary(s.values())
        .into_iter()
        .filter(|e| e.kind == ExtremumKind::Max || !e.boundary)
        .collect();
    if ext.is_empty() {
        return Err(LevelSetError::Degenerate);
    }

    // Arena in construction order; relabelled to preorder at the end.
    let mut raw: Vec<Node> = Vec::with_capacity(ext.len());
    let mut value: Vec<f64> = Vec::with_capacity(ext.len());
    let mut position: Vec<usize> = Vec::with_capacity(ext.len());
    let push = |e: &Extremum, raw: &mut Vec<Node>, value: &mut Vec<f64>, position: &mut Vec<usize>| {
        raw.push(Node { parent: None, children: SmallVec::new(), length: 0.0 });
        value.push(e.value);
        position.push(e.index);
        raw.len() - 1
    };
    let attach = |raw: &mut Vec<Node>, parent: NodeId, child: NodeId| {
        raw[parent].children.push(child);
        raw[child].parent = Some(parent);
    };

    let mut cur = push(&ext[0], &mut raw, &mut value, &mut position);
    let mut stack: Vec<NodeId> = Vec::new();
    let mut k = 1;
    while k + 1 < ext.len() {
        let m = &ext[k];
        while let Some(&top) = stack.last() {
            if value[top] > m.value {
                stack.pop();
                attach(&mut raw, top, cur);
                cur = top;
            } else {
                break;
            }
        }
        match stack.last() {
            Some(&top) if value[top] == m.value => attach(&mut raw, top, cur),
            _ => {
                let node = push(m, &mut raw, &mut value, &mut position);
                attach(&mut raw, node, cur);
                stack.push(node);
            }
        }
        cur = push(&ext[k + 1], &mut raw, &mut value, &mut position);
        k += 2;
    }
    while let Some(top) = stack.pop() {
        attach(&mut raw, top, cur);
        cur = top;
    }
    let root = cur;
    for v in 0..raw.len() {
        if let Some(p) = raw[v].parent {
            raw[v].length = value[v] - value[p];
        }
    }
    raw[root].length = ghost_length(s.values(), value[root]);

    let (tree, order) = Tree::from_arena(raw, Some(root), |_| true);
    Ok(LevelSetTree {
        tree,
        value: order.iter().map(|&v| value[v]).collect(),
        position: order.iter().map(|&v| position[v]).collect(),
    })
}

fn ghost_length(values: &[f64], root_value: f64) -> f64 {
    let lo = values[0].min(values[values.len() - 1]);
    if lo < root_value {
        root_value - lo
    } else {
        1.0
    }
}

pub fn level_set_tree(s: &Series) -> Result<Tree, LevelSetError> {
    level_set_tree_annotated(s).map(|t| t.tree)
}

/// Piecewise-linear function with slopes ±1 through the extrema of a series.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtremeFunction {
    /// `(abscissa, height)` at the boundary points and every local extremum.
    pub breakpoints: Vec<(f64, f64)>,
}

impl ExtremeFunction {
    pub fn start_abscissa(&self) -> f64 {
        self.breakpoints[0].0
    }

    pub fn end_abscissa(&self) -> f64 {
        self.breakpoints[self.breakpoints.len() - 1].0
    }

    pub fn heights(&self) -> Vec<f64> {
        self.breakpoints.iter().map(|&(_, h)| h).collect()
    }

    pub fn eval(&self, z: f64) -> Result<f64, LevelSetError> {
        let (lo, hi) = (self.start_abscissa(), self.end_abscissa());
        if !(z >= lo && z <= hi) {
            return Err(LevelSetError::OutOfDomain(z));
        }
        let k = self.segment_of(z);
        let (s0, h0) = self.breakpoints[k];
        if k + 1 == self.breakpoints.len() {
            return Ok(h0);
        }
        let (_, h1) = self.breakpoints[k + 1];
        let slope = if h1 >= h0 { 1.0 } else { -1.0 };
        Ok(h0 + slope * (z - s0))
    }

    /// Index of the last breakpoint at or before `z`.
    fn segment_of(&self, z: f64) -> usize {
        let k = self.breakpoints.partition_point(|&(s, _)| s <= z);
        k.saturating_sub(1)
    }

    /// Infimum over `[a, b]`, `a <= b`, both inside the domain.
    fn inf_between(&self, a: f64, b: f64) -> Result<f64, LevelSetError> {
        let mut lo = self.eval(a)?.min(self.eval(b)?);
        let start = self.segment_of(a) + 1;
        for &(s, h) in &self.breakpoints[start.min(self.breakpoints.len())..] {
            if s >= b {
                break;
            }
            lo = lo.min(h);
        }
        Ok(lo)
    }
}

/// The linear extreme function. Heights are the series values shifted so that
/// the root of the level-set tree sits at the height of its ghost edge; the
/// domain starts at the height of the left boundary value.
pub fn extreme_function(s: &Series) -> Result<ExtremeFunction, LevelSetError> {
    let lst = level_set_tree_annotated(s)?;
    let root_value = lst.value[0];
    let offset = lst.tree.ghost_edge_length().unwrap() - root_value;
    let pts = extrema_with_boundary(s.values());
    let mut breakpoints = Vec::with_capacity(pts.len());
    let mut z = pts[0].value + offset;
    let mut prev = pts[0].value;
    for e in &pts {
        z += (e.value - prev).abs();
        prev = e.value;
        breakpoints.push((z, e.value + offset));
    }
    if breakpoints.len() == 1 {
        // A constant series: a single point of the domain.
        let (z, h) = breakpoints[0];
        breakpoints.push((z, h));
    }
    Ok(ExtremeFunction { breakpoints })
}

/// `d(a, b) = (f(a) - inf) + (f(b) - inf)` with the infimum over `[a∧b, a∨b]`.
pub fn pseudo_distance(f: &ExtremeFunction, a: f64, b: f64) -> Result<f64, LevelSetError> {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let inf = f.inf_between(lo, hi)?;
    Ok((f.eval(a)? - inf) + (f.eval(b)? - inf))
}

/// Values of the internal local minima, in time order.
pub fn prune_series(s: &Series) -> Series {
    Series::from_raw(
        extrema_with_boundary(s.values())
            .into_iter()
            .filter(|e| e.kind == ExtremumKind::Min && !e.boundary)
            .map(|e| e.value)
            .collect(),
    )
}

/// Splitting of a path at its running minimum.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LadderDecomposition {
    /// Completed excursions above the running minimum, shifted to start and end at 0.
    pub excursions: Vec<Series>,
    /// `(start, end)` abscissas of each excursion; ends may be interpolated.
    pub spans: Vec<(f64, f64)>,
    /// Positive drops of the running minimum, one per maximal ladder interval.
    pub falls: Vec<f64>,
    /// A final rise that never came back down to the running minimum.
    pub trailing: Option<Series>,
}

pub fn descending_ladder(s: &Series) -> LadderDecomposition {
    let x = s.values();
    let mut out = LadderDecomposition::default();
    let Some(&first) = x.first() else {
        return out;
    };
    let mut floor = first;
    let mut fall = 0.0;
    let mut exc: Option<(f64, Vec<f64>)> = None;
    for i in 1..x.len() {
        let v = x[i];
        match exc.as_mut() {
            None => match v.partial_cmp(&floor).unwrap() {
                Ordering::Less => {
                    fall += floor - v;
                    floor = v;
                }
                Ordering::Equal => {}
                Ordering::Greater => {
                    if fall > 0.0 {
                        out.falls.push(fall);
                        fall = 0.0;
                    }
                    exc = Some(((i - 1) as f64, vec![0.0, v - floor]));
                }
            },
            Some((start, heights)) => match v.partial_cmp(&floor).unwrap() {
                Ordering::Greater => heights.push(v - floor),
                Ordering::Equal => {
                    heights.push(0.0);
                    let (start, heights) = exc.take().unwrap();
                    out.spans.push((start, i as f64));
                    out.excursions.push(Series::from_raw(heights));
                }
                Ordering::Less => {
                    let prev = x[i - 1];
                    let cross = (i - 1) as f64 + (prev - floor) / (prev - v);
                    heights.push(0.0);
                    let start = *start;
                    let (_, heights) = exc.take().unwrap();
                    out.spans.push((start, cross));
                    out.excursions.push(Series::from_raw(heights));
                    fall = floor - v;
                    floor = v;
                }
            },
        }
    }
    if let Some((_, heights)) = exc {
        out.trailing = Some(Series::from_raw(heights));
    }
    if fall > 0.0 {
        out.falls.push(fall);
    }
    out
}

/// Positions of iterated local minima and maxima.
///
/// `minima[j - 1]` holds the sample indices of the order-`j` local minima
/// (internal minima of the series of order-`(j-1)` minima), and `maxima[j - 1]`
/// the order-`j` maxima (local maxima, boundary included, of the order-`(j-1)`
/// minima series; order 1 uses the series itself).
#[derive(Debug, Clone, PartialEq)]
pub struct ExtremaHierarchy {
    pub minima: Vec<Vec<usize>>,
    pub maxima: Vec<Vec<usize>>,
}

impl ExtremaHierarchy {
    pub fn new(s: &Series) -> Self {
        let mut minima = Vec::new();
        let mut maxima = Vec::new();
        let mut pos: Vec<usize> = (0..s.len()).collect();
        let mut vals: Vec<f64> = s.values().to_vec();
        while !vals.is_empty() {
            let ext = extrema_with_boundary(&vals);
            maxima.push(
                ext.iter()
                    .filter(|e| e.kind == ExtremumKind::Max)
                    .map(|e| pos[e.index])
                    .collect(),
            );
            let mins: Vec<&Extremum> = ext
                .iter()
                .filter(|e| e.kind == ExtremumKind::Min && !e.boundary)
                .collect();
            if mins.is_empty() {
                break;
            }
            let next_pos = mins.iter().map(|e| pos[e.index]).collect::<Vec<_>>();
            vals = mins.iter().map(|e| e.value).collect();
            minima.push(next_pos.clone());
            pos = next_pos;
        }
        ExtremaHierarchy { minima, maxima }
    }

    /// Highest order with at least one maximum.
    pub fn max_order(&self) -> usize {
        self.maxima.len()
    }

    /// Order of a point as a local minimum: the largest `j` with the point in
    /// the order-`j` minima, or 0.
    pub fn minimum_order(&self, index: usize) -> usize {
        self.minima
            .iter()
            .take_while(|level| level.binary_search(&index).is_ok())
            .count()
    }

    fn level<'a>(levels: &'a [Vec<usize>], order: usize) -> &'a [usize] {
        levels.get(order - 1).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Values `M^(j)_k` of the opposite minima of the local minimum at `k`,
    /// for `j = r_k + 1 ..` up to the first order without any maximum. The
    /// opposite side is the minimum of order `j` across the order-`j` apex
    /// from `k`; a side that runs to the series boundary gives `-inf`.
    pub fn opposite_minima(&self, s: &Series, k: usize) -> Vec<f64> {
        let x = s.values();
        let mut out = Vec::new();
        let mut j = self.minimum_order(k) + 1;
        loop {
            let bounds = Self::level(&self.minima, j);
            let apexes = Self::level(&self.maxima, j);
            // Basin of order j around k: (left bound, right bound), either may be open.
            let b = bounds.partition_point(|&t| t < k);
            let left = b.checked_sub(1).map(|q| bounds[q]);
            let right = bounds.get(b).copied();
            let lo = left.map_or(0, |l| l + 1);
            let hi = right.unwrap_or(x.len());
            let a = apexes.partition_point(|&c| c < lo);
            let apex = apexes.get(a).copied().filter(|&c| c < hi);
            let opposite = match apex {
                Some(c) if k < c => right,
                Some(_) => left,
                None => None,
            };
            out.push(opposite.map_or(f64::NEG_INFINITY, |o| x[o]));
            if apexes.is_empty() || opposite.is_none() {
                break;
            }
            j += 1;
        }
        out
    }

    /// Side-branch counts `N_ij` read off the series: an internal minimum of
    /// order `i` that is not a maximum of any minima series joins a branch of
    /// order `j = min{j > i : M^(j)_k <= X_k}`. `M^(j)_k` need not decrease
    /// in `j`, so the first crossing is what matches the tree.
    pub fn side_branch_counts(&self, s: &Series) -> BTreeMap<(u32, u32), u64> {
        let x = s.values();
        let mut merge_points: Vec<usize> = self.maxima.iter().skip(1).flatten().copied().collect();
        merge_points.sort_unstable();
        let mut counts = BTreeMap::new();
        for &k in Self::level(&self.minima, 1) {
            if merge_points.binary_search(&k).is_ok() {
                continue;
            }
            let i = self.minimum_order(k);
            let m = self.opposite_minima(s, k);
            if let Some(off) = m.iter().position(|&v| v <= x[k]) {
                *counts.entry((i as u32, (i + 1 + off) as u32)).or_insert(0) += 1;
            }
        }
        counts
    }

    /// For every complete basin of order `outer`, the number of order-`inner`
    /// basins it contains: interior order-`inner` minima plus one.
    pub fn nested_basin_counts(&self, outer: usize, inner: usize) -> Vec<u64> {
        let inner_pts = Self::level(&self.minima, inner);
        self.basins(outer)
            .basins
            .iter()
            .map(|b| {
                let lo = inner_pts.partition_point(|&t| t <= b.left);
                let hi = inner_pts.partition_point(|&t| t < b.right);
                (hi - lo) as u64 + 1
            })
            .collect()
    }

    pub fn basins(&self, order: usize) -> BasinDecomposition {
        let bounds = self.minima.get(order - 1).map(Vec::as_slice).unwrap_or(&[]);
        let apexes = self.maxima.get(order - 1).map(Vec::as_slice).unwrap_or(&[]);
        let apex_in = |lo: usize, hi: usize| {
            let k = apexes.partition_point(|&a| a <= lo);
            apexes.get(k).copied().filter(|&a| a < hi)
        };
        let basins = bounds
            .windows(2)
            .map(|w| Basin { left: w[0], right: w[1], apex: apex_in(w[0], w[1]).unwrap() })
            .collect();
        BasinDecomposition {
            order,
            basins,
            incomplete_left: bounds.first().map(|&b| b),
            incomplete_right: bounds.last().map(|&b| b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Basin {
    pub left: usize,
    pub right: usize,
    pub apex: usize,
}

/// Basins of one order. The incomplete boundary segments run from the series
/// start to `incomplete_left` and from `incomplete_right` to the series end;
/// without any order-r minimum both are `None` and the whole series is one
/// incomplete basin.
#[derive(Debug, Clone, PartialEq)]
pub struct BasinDecomposition {
    pub order: usize,
    pub basins: Vec<Basin>,
    pub incomplete_left: Option<usize>,
    pub incomplete_right: Option<usize>,
}
