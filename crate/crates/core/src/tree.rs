//! Rooted planar trees with edge lengths.
//!
//! Nodes live in an arena and are addressed by [`NodeId`]. Every tree built
//! through the public constructors is stored in preorder (root first, children
//! in planar order), so two trees with the same planar structure have the same
//! node numbering. The edge above the root is the ghost edge; its length is
//! stored as the root's parent-edge length.

use std::fmt;

use smallvec::SmallVec;
use thiserror::Error;

pub type NodeId = usize;

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("node {node}: edge length {length} is not strictly positive and finite")]
    BadLength { node: NodeId, length: f64 },
    #[error("ghost edge length {0} is not strictly positive and finite")]
    BadGhost(f64),
    #[error("node {node}: parent {parent} does not exist")]
    MissingParent { node: NodeId, parent: NodeId },
    #[error("cycle through node {0}")]
    Cycle(NodeId),
    #[error("node {0} is not connected to the root")]
    Disconnected(NodeId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub parent: Option<NodeId>,
    pub children: SmallVec<[NodeId; 2]>,
    /// Length of the edge towards the parent; for the root this is the ghost edge.
    pub length: f64,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// A finite rooted planar tree, possibly empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

/// Preorder sequence of child counts. Identifies a planar shape uniquely.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ShapeCode(pub Vec<u32>);

impl fmt::Display for ShapeCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|c| c.to_string()).collect();
        write!(f, "[{}]", parts.join(","))
    }
}

fn check_length(node: NodeId, length: f64) -> Result<(), TreeError> {
    if length.is_finite() && length > 0.0 {
        Ok(())
    } else {
        Err(TreeError::BadLength { node, length })
    }
}

impl Tree {
    pub fn empty() -> Self {
        Tree { nodes: Vec::new() }
    }

    /// A single vertex with a ghost edge.
    pub fn singleton(ghost: f64) -> Result<Self, TreeError> {
        Self::from_edges(&[], ghost)
    }

    /// Builds a tree from parent links. Node 0 is the root; `edges[k]` holds
    /// `(parent, length)` for node `k + 1`. Children keep their input order.
    pub fn from_edges(edges: &[(NodeId, f64)], ghost: f64) -> Result<Self, TreeError> {
        if !(ghost.is_finite() && ghost > 0.0) {
            return Err(TreeError::BadGhost(ghost));
        }
        let n = edges.len() + 1;
        let mut parent = vec![None; n];
        let mut length = vec![ghost; n];
        for (k, &(p, w)) in edges.iter().enumerate() {
            let id = k + 1;
            if p >= n {
                return Err(TreeError::MissingParent { node: id, parent: p });
            }
            if p == id {
                return Err(TreeError::Cycle(id));
            }
            check_length(id, w)?;
            parent[id] = Some(p);
            length[id] = w;
        }
        // Every node must reach the root by following parents.
        // 0 = unvisited, 1 = on current walk, 2 = reaches root.
        let mut state = vec![0u8; n];
        state[0] = 2;
        let mut walk = Vec::new();
        for start in 1..n {
            let mut v = start;
            while state[v] == 0 {
                state[v] = 1;
                walk.push(v);
                match parent[v] {
                    Some(p) => v = p,
                    None => return Err(TreeError::Disconnected(v)),
                }
            }
            if state[v] == 1 {
                return Err(TreeError::Cycle(v));
            }
            for u in walk.drain(..) {
                state[u] = 2;
            }
        }
        let mut children: Vec<SmallVec<[NodeId; 2]>> = vec![SmallVec::new(); n];
        for id in 1..n {
            children[parent[id].unwrap()].push(id);
        }
        let raw: Vec<Node> = (0..n)
            .map(|i| Node {
                parent: parent[i],
                children: std::mem::take(&mut children[i]),
                length: length[i],
            })
            .collect();
        Ok(Tree::from_arena(raw, Some(0), |_| true).0)
    }

    /// Rebuilds the subtree of `root` that survives `keep`, in preorder.
    /// Returns the new tree and, for each new node, its id in `raw`.
    pub(crate) fn from_arena(
        raw: Vec<Node>,
        root: Option<NodeId>,
        keep: impl Fn(NodeId) -> bool,
    ) -> (Tree, Vec<NodeId>) {
        let Some(root) = root.filter(|&r| keep(r)) else {
            return (Tree::empty(), Vec::new());
        };
        let mut order = Vec::with_capacity(raw.len());
        let mut stack = vec![root];
        while let Some(v) = stack.pop() {
            order.push(v);
            for &c in raw[v].children.iter().rev() {
                if keep(c) {
                    stack.push(c);
                }
            }
        }
        let mut new_id = vec![usize::MAX; raw.len()];
        for (i, &v) in order.iter().enumerate() {
            new_id[v] = i;
        }
        let nodes = order
            .iter()
            .map(|&v| {
                let old = &raw[v];
                Node {
                    parent: if v == root { None } else { old.parent.map(|p| new_id[p]) },
                    children: old
                        .children
                        .iter()
                        .filter(|&&c| keep(c))
                        .map(|&c| new_id[c])
                        .collect(),
                    length: old.length,
                }
            })
            .collect();
        (Tree { nodes }, order)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> Option<NodeId> {
        if self.nodes.is_empty() {
            None
        } else {
            Some(0)
        }
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id].children
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id].parent
    }

    pub fn ghost_edge_length(&self) -> Option<f64> {
        self.nodes.first().map(|n| n.length)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    /// Sum of all edge lengths, ghost edge included.
    pub fn length(&self) -> f64 {
        self.nodes.iter().map(|n| n.length).sum()
    }

    /// True when every internal vertex has exactly two children.
    pub fn is_binary(&self) -> bool {
        self.nodes.iter().all(|n| n.children.is_empty() || n.children.len() == 2)
    }

    /// Distance from the bottom of the ghost edge to each node.
    pub fn depths(&self) -> Vec<f64> {
        let mut depth = vec![0.0; self.nodes.len()];
        // Preorder storage: parents precede children.
        for (i, n) in self.nodes.iter().enumerate() {
            depth[i] = n.parent.map_or(0.0, |p| depth[p]) + n.length;
        }
        depth
    }

    /// Number of leaves below each node (a leaf counts itself).
    pub fn leaves_below(&self) -> Vec<usize> {
        let mut count = vec![0usize; self.nodes.len()];
        for i in (0..self.nodes.len()).rev() {
            let n = &self.nodes[i];
            count[i] = if n.is_leaf() {
                1
            } else {
                n.children.iter().map(|&c| count[c]).sum()
            };
        }
        count
    }

    /// Same structure with every length (ghost included) set to one.
    pub fn shape(&self) -> Tree {
        let nodes = self
            .nodes
            .iter()
            .map(|n| Node { length: 1.0, ..n.clone() })
            .collect();
        Tree { nodes }
    }

    pub fn shape_code(&self) -> ShapeCode {
        ShapeCode(self.nodes.iter().map(|n| n.children.len() as u32).collect())
    }

    /// Planar structural equality, lengths ignored.
    pub fn same_shape(&self, other: &Tree) -> bool {
        self.nodes.len() == other.nodes.len()
            && self
                .nodes
                .iter()
                .zip(&other.nodes)
                .all(|(a, b)| a.children.len() == b.children.len())
    }

    /// Merges every single-child vertex into the edge below it, adding the
    /// lengths. A single-child root passes its ghost length on to its child.
    pub fn suppress_unary(&self) -> Tree {
        if self.nodes.is_empty() {
            return Tree::empty();
        }
        let mut raw = self.nodes.clone();
        let mut keep = vec![true; raw.len()];
        let mut root = 0;
        // Preorder: by the time we reach v, its parent link is final.
        for v in 0..raw.len() {
            if raw[v].children.len() != 1 {
                continue;
            }
            let c = raw[v].children[0];
            keep[v] = false;
            raw[c].length += raw[v].length;
            match raw[v].parent {
                None => {
                    root = c;
                    raw[c].parent = None;
                }
                Some(p) => {
                    raw[c].parent = Some(p);
                    for slot in raw[p].children.iter_mut() {
                        if *slot == v {
                            *slot = c;
                        }
                    }
                }
            }
        }
        Tree::from_arena(raw, Some(root), |v| keep[v]).0
    }

    /// One pruning step: removes the leaves together with every chain of
    /// single-child vertices hanging on them. Equivalently, a vertex goes
    /// when its subtree is a path.
    pub fn prune(&self) -> Tree {
        self.prune_with_map().0
    }

    /// As [`Tree::prune`], also returning for each surviving node its id in `self`.
    pub fn prune_with_map(&self) -> (Tree, Vec<NodeId>) {
        let is_path = self.path_subtrees();
        Tree::from_arena(self.nodes.clone(), self.root(), |v| !is_path[v])
    }

    fn path_subtrees(&self) -> Vec<bool> {
        let mut is_path = vec![false; self.nodes.len()];
        for v in (0..self.nodes.len()).rev() {
            let ch = &self.nodes[v].children;
            is_path[v] = match ch.len() {
                0 => true,
                1 => is_path[ch[0]],
                _ => false,
            };
        }
        is_path
    }

    /// Sum of edge lengths on the path between two nodes.
    pub fn path_length(&self, a: NodeId, b: NodeId) -> f64 {
        let depth = self.depths();
        let mut ancestors = vec![false; self.nodes.len()];
        let mut v = Some(a);
        while let Some(u) = v {
            ancestors[u] = true;
            v = self.nodes[u].parent;
        }
        let mut lca = b;
        while !ancestors[lca] {
            lca = self.nodes[lca].parent.expect("nodes share the root");
        }
        depth[a] + depth[b] - 2.0 * depth[lca]
    }
}

/// Depth-first contour of a tree as a ±1-slope excursion.
#[derive(Debug, Clone, PartialEq)]
pub struct HarrisPath {
    /// `(abscissa, height)` at every slope change, plus both endpoints.
    pub breakpoints: Vec<(f64, f64)>,
}

impl HarrisPath {
    pub fn heights(&self) -> Vec<f64> {
        self.breakpoints.iter().map(|&(_, h)| h).collect()
    }

    pub fn span(&self) -> f64 {
        match (self.breakpoints.first(), self.breakpoints.last()) {
            (Some(a), Some(b)) => b.0 - a.0,
            _ => 0.0,
        }
    }
}

/// The Harris path starts at abscissa 0 at the bottom of the ghost edge and
/// travels each edge twice, left to right.
pub fn harris_path(tree: &Tree) -> HarrisPath {
    let Some(root) = tree.root() else {
        return HarrisPath { breakpoints: vec![(0.0, 0.0)] };
    };
    // Raw contour points, one per vertex visit; collinear points removed after.
    let mut raw: Vec<(f64, f64)> = vec![(0.0, 0.0)];
    let mut s = 0.0;
    let mut h = 0.0;
    // (node, next child index)
    let mut stack: Vec<(NodeId, usize)> = Vec::new();
    s += tree.node(root).length;
    h += tree.node(root).length;
    raw.push((s, h));
    stack.push((root, 0));
    while let Some(top) = stack.last_mut() {
        let (v, next) = *top;
        let children = tree.children(v);
        if next < children.len() {
            top.1 += 1;
            let c = children[next];
            let w = tree.node(c).length;
            s += w;
            h += w;
            raw.push((s, h));
            stack.push((c, 0));
        } else {
            stack.pop();
            let w = tree.node(v).length;
            s += w;
            h -= w;
            raw.push((s, h));
        }
    }
    let mut breakpoints: Vec<(f64, f64)> = Vec::with_capacity(raw.len());
    for p in raw {
        if breakpoints.len() >= 2 {
            let (_, h1) = breakpoints[breakpoints.len() - 2];
            let (_, h2) = breakpoints[breakpoints.len() - 1];
            if (h2 > h1) == (p.1 > h2) {
                breakpoints.pop();
            }
        }
        breakpoints.push(p);
    }
    if let Some(last) = breakpoints.last_mut() {
        last.1 = 0.0;
    }
    HarrisPath { breakpoints }
}

/// Number of planar binary trees with `leaves` leaves: the Catalan number C(n-1).
pub fn catalan_count(leaves: u64) -> Option<u128> {
    if leaves == 0 {
        return None;
    }
    let m = (leaves - 1) as u128;
    // C(m) = prod_{k=2..m} (m + k) / k, computed exactly.
    let mut c: u128 = 1;
    for k in 0..m {
        c = c.checked_mul(2 * (2 * k + 1))? / (k + 2);
    }
    Some(c)
}

/// Shape codes of every planar binary tree with `leaves` leaves, in a fixed
/// order (left subtree size ascending, then recursively).
pub fn binary_shape_codes(leaves: usize) -> Vec<ShapeCode> {
    fn go(leaves: usize) -> Vec<Vec<u32>> {
        if leaves == 1 {
            return vec![vec![0]];
        }
        let mut out = Vec::new();
        for left in 1..leaves {
            for a in go(left) {
                for b in go(leaves - left) {
                    let mut code = Vec::with_capacity(1 + a.len() + b.len());
                    code.push(2);
                    code.extend(&a);
                    code.extend(&b);
                    out.push(code);
                }
            }
        }
        out
    }
    if leaves == 0 {
        return Vec::new();
    }
    go(leaves).into_iter().map(ShapeCode).collect()
}
