//! Minimal regression-tree representation.
//!
//! A node carries a leaf mean, a split rule `(var, cut)` meaning "go left iff
//! `x[var] < cutpoint(var, cut)`", and parent/child links into the owning
//! tree's arena. Nodes are named on the wire by heap-path ids: the root is 1,
//! the children of `k` are `2k` and `2k + 1`.

use std::fmt::Write as _;
use std::ops::Range;

use thiserror::Error;

/// Heap-path node identifier.
pub type NodeId = u32;

/// Deepest level a node may occupy; keeps every id below 2^31.
pub const MAX_DEPTH: usize = 30;

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("empty variable")]
    EmptyVariable,
    #[error("numcut must be at least 1")]
    ZeroCutpoints,
    #[error("cutpoints for variable {0} are not strictly increasing")]
    NotIncreasing(usize),
    #[error("non-finite value in variable column")]
    NonFinite,
    #[error("node {0} does not exist")]
    NoSuchNode(NodeId),
    #[error("node {0} is not terminal")]
    NotTerminal(NodeId),
    #[error("node {0} is not a nog node")]
    NotNog(NodeId),
    #[error("node {0} is at the maximum depth")]
    TooDeep(NodeId),
    #[error("rule ({var}, {cut}) is outside the cutpoint grid")]
    BadRule { var: u32, cut: u32 },
    #[error("malformed tree text at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Returns `numcut` cutpoints equally spaced strictly inside the range of
/// `column`, or the single value of a constant column.
pub fn build_cutpoints(column: &[f64], numcut: usize) -> Result<Vec<f64>, TreeError> {
    if column.is_empty() {
        return Err(TreeError::EmptyVariable);
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &x in column {
        if !x.is_finite() {
            return Err(TreeError::NonFinite);
        }
        lo = lo.min(x);
        hi = hi.max(x);
    }
    cutpoints_from_range(lo, hi, numcut)
}

/// Cutpoints from an observed `[min, max]` range. Workers and the master
/// both call this so they derive bit-identical grids from the same range.
pub fn cutpoints_from_range(min: f64, max: f64, numcut: usize) -> Result<Vec<f64>, TreeError> {
    if numcut == 0 {
        return Err(TreeError::ZeroCutpoints);
    }
    if !(min.is_finite() && max.is_finite()) {
        return Err(TreeError::NonFinite);
    }
    if min >= max {
        return Ok(vec![min]);
    }
    let width = max - min;
    let denom = (numcut + 1) as f64;
    let mut cuts: Vec<f64> = (1..=numcut)
        .map(|k| min + width * (k as f64) / denom)
        .filter(|&c| c > min && c < max)
        .collect();
    // Very narrow ranges can collapse neighbouring points.
    cuts.dedup();
    if cuts.is_empty() {
        cuts.push(min);
    }
    Ok(cuts)
}

/// Per-variable cutpoint lists. A rule's integer `cut` indexes into these.
#[derive(Clone, Debug, PartialEq)]
pub struct CutpointGrid {
    cuts: Vec<Vec<f64>>,
}

impl CutpointGrid {
    pub fn new(cuts: Vec<Vec<f64>>) -> Result<Self, TreeError> {
        for (v, list) in cuts.iter().enumerate() {
            if list.is_empty() {
                return Err(TreeError::EmptyVariable);
            }
            if list.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(TreeError::NotIncreasing(v));
            }
        }
        Ok(Self { cuts })
    }

    /// Grid from per-variable `(min, max)` ranges.
    pub fn from_ranges(ranges: &[(f64, f64)], numcut: usize) -> Result<Self, TreeError> {
        let cuts = ranges
            .iter()
            .map(|&(lo, hi)| cutpoints_from_range(lo, hi, numcut))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(cuts)
    }

    pub fn num_vars(&self) -> usize {
        self.cuts.len()
    }

    pub fn count(&self, var: usize) -> usize {
        self.cuts[var].len()
    }

    #[inline]
    pub fn value(&self, var: usize, cut: usize) -> f64 {
        self.cuts[var][cut]
    }

    pub fn cuts(&self, var: usize) -> &[f64] {
        &self.cuts[var]
    }
}

/// One node of a tree. Terminal nodes use `mu`; internal nodes use `var`/`cut`.
#[derive(Clone, Debug)]
pub struct TreeNode {
    pub id: NodeId,
    pub mu: f64,
    pub var: u32,
    pub cut: u32,
    parent: Option<usize>,
    left: Option<usize>,
    right: Option<usize>,
}

impl TreeNode {
    fn leaf(id: NodeId, mu: f64, parent: Option<usize>) -> Self {
        Self {
            id,
            mu,
            var: 0,
            cut: 0,
            parent,
            left: None,
            right: None,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.left.is_none()
    }

    pub fn parent(&self) -> Option<usize> {
        self.parent
    }

    pub fn children(&self) -> Option<(usize, usize)> {
        Some((self.left?, self.right?))
    }
}

/// Depth encoded in a heap-path id.
pub fn id_depth(id: NodeId) -> usize {
    debug_assert!(id >= 1);
    (31 - id.leading_zeros()) as usize
}

pub fn parent_id(id: NodeId) -> NodeId {
    id / 2
}

pub fn child_ids(id: NodeId) -> (NodeId, NodeId) {
    (2 * id, 2 * id + 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    Terminal,
    /// Internal nodes whose two children are both terminal.
    Nog,
    Internal,
}

/// Arena-backed binary tree. Slot indices are internal; node ids are stable.
#[derive(Clone, Debug)]
pub struct Tree {
    nodes: Vec<TreeNode>,
    free: Vec<usize>,
}

const ROOT: usize = 0;

impl Tree {
    pub fn new(mu: f64) -> Self {
        Self {
            nodes: vec![TreeNode::leaf(1, mu, None)],
            free: Vec::new(),
        }
    }

    pub fn root(&self) -> usize {
        ROOT
    }

    pub fn node(&self, idx: usize) -> &TreeNode {
        &self.nodes[idx]
    }

    pub fn is_single(&self) -> bool {
        self.nodes[ROOT].is_leaf()
    }

    /// Finds a node by following the id's path bits from the root.
    pub fn find(&self, id: NodeId) -> Option<usize> {
        if id == 0 {
            return None;
        }
        let depth = id_depth(id);
        let mut idx = ROOT;
        for level in (0..depth).rev() {
            let (l, r) = self.nodes[idx].children()?;
            idx = if (id >> level) & 1 == 0 { l } else { r };
        }
        Some(idx)
    }

    /// Slot of the terminal node `x` falls into.
    #[inline]
    pub fn leaf_for(&self, grid: &CutpointGrid, x: &[f64]) -> usize {
        let mut idx = ROOT;
        loop {
            let node = &self.nodes[idx];
            match node.left {
                None => return idx,
                Some(l) => {
                    let var = node.var as usize;
                    idx = if x[var] < grid.value(var, node.cut as usize) {
                        l
                    } else {
                        node.right.unwrap_or(l)
                    };
                }
            }
        }
    }

    #[inline]
    pub fn evaluate(&self, grid: &CutpointGrid, x: &[f64]) -> f64 {
        self.nodes[self.leaf_for(grid, x)].mu
    }

    /// Parent steps to the root.
    pub fn depth(&self, idx: usize) -> usize {
        let mut depth = 0;
        let mut cur = idx;
        while let Some(p) = self.nodes[cur].parent {
            depth += 1;
            cur = p;
        }
        depth
    }

    fn live(&self) -> impl Iterator<Item = usize> + '_ {
        let mut stack = vec![ROOT];
        std::iter::from_fn(move || {
            let idx = stack.pop()?;
            if let Some((l, r)) = self.nodes[idx].children() {
                stack.push(r);
                stack.push(l);
            }
            Some(idx)
        })
    }

    /// Slots of the requested kind in ascending node-id order.
    pub fn nodes_of_kind(&self, kind: NodeKind) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .live()
            .filter(|&idx| {
                let node = &self.nodes[idx];
                match kind {
                    NodeKind::Terminal => node.is_leaf(),
                    NodeKind::Internal => !node.is_leaf(),
                    NodeKind::Nog => match node.children() {
                        Some((l, r)) => self.nodes[l].is_leaf() && self.nodes[r].is_leaf(),
                        None => false,
                    },
                }
            })
            .collect();
        out.sort_unstable_by_key(|&idx| self.nodes[idx].id);
        out
    }

    pub fn leaves(&self) -> Vec<usize> {
        self.nodes_of_kind(NodeKind::Terminal)
    }

    pub fn num_leaves(&self) -> usize {
        self.live().filter(|&i| self.nodes[i].is_leaf()).count()
    }

    pub fn num_nogs(&self) -> usize {
        self.nodes_of_kind(NodeKind::Nog).len()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len() - self.free.len()
    }

    /// Half-open range of cut indices on `var` that keep both children of a
    /// split at `idx` non-empty given the ancestors' rules.
    pub fn cut_range(&self, grid: &CutpointGrid, idx: usize, var: usize) -> Range<usize> {
        let mut lo = 0;
        let mut hi = grid.count(var);
        let mut child = idx;
        while let Some(p) = self.nodes[child].parent {
            let pn = &self.nodes[p];
            if pn.var as usize == var {
                let c = pn.cut as usize;
                if pn.left == Some(child) {
                    hi = hi.min(c);
                } else {
                    lo = lo.max(c + 1);
                }
            }
            child = p;
        }
        lo..hi.max(lo)
    }

    /// Variables that still have at least one usable cutpoint at `idx`.
    pub fn splittable_vars(&self, grid: &CutpointGrid, idx: usize) -> Vec<usize> {
        if self.depth(idx) >= MAX_DEPTH {
            return Vec::new();
        }
        (0..grid.num_vars())
            .filter(|&v| !self.cut_range(grid, idx, v).is_empty())
            .collect()
    }

    pub fn can_split(&self, grid: &CutpointGrid, idx: usize) -> bool {
        self.depth(idx) < MAX_DEPTH
            && (0..grid.num_vars()).any(|v| !self.cut_range(grid, idx, v).is_empty())
    }

    fn alloc(&mut self, node: TreeNode) -> usize {
        match self.free.pop() {
            Some(slot) => {
                self.nodes[slot] = node;
                slot
            }
            None => {
                self.nodes.push(node);
                self.nodes.len() - 1
            }
        }
    }

    /// Splits terminal node `id` with rule `(var, cut)`; returns the child slots.
    pub fn birth(
        &mut self,
        id: NodeId,
        var: u32,
        cut: u32,
        mu_left: f64,
        mu_right: f64,
    ) -> Result<(usize, usize), TreeError> {
        let idx = self.find(id).ok_or(TreeError::NoSuchNode(id))?;
        if !self.nodes[idx].is_leaf() {
            return Err(TreeError::NotTerminal(id));
        }
        if id_depth(id) >= MAX_DEPTH {
            return Err(TreeError::TooDeep(id));
        }
        let (lid, rid) = child_ids(id);
        let l = self.alloc(TreeNode::leaf(lid, mu_left, Some(idx)));
        let r = self.alloc(TreeNode::leaf(rid, mu_right, Some(idx)));
        let node = &mut self.nodes[idx];
        node.var = var;
        node.cut = cut;
        node.left = Some(l);
        node.right = Some(r);
        Ok((l, r))
    }

    /// Collapses the two terminal children of nog node `id`.
    pub fn death(&mut self, id: NodeId, mu: f64) -> Result<usize, TreeError> {
        let idx = self.find(id).ok_or(TreeError::NoSuchNode(id))?;
        let (l, r) = self.nodes[idx].children().ok_or(TreeError::NotNog(id))?;
        if !(self.nodes[l].is_leaf() && self.nodes[r].is_leaf()) {
            return Err(TreeError::NotNog(id));
        }
        self.free.push(l);
        self.free.push(r);
        let node = &mut self.nodes[idx];
        node.left = None;
        node.right = None;
        node.var = 0;
        node.cut = 0;
        node.mu = mu;
        Ok(idx)
    }

    pub fn set_mu(&mut self, idx: usize, mu: f64) {
        self.nodes[idx].mu = mu;
    }

    /// Preorder line form: `i <id> <var> <cut>` or `l <id> <mu>`.
    pub fn to_lines(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.num_nodes());
        for idx in self.live() {
            let n = &self.nodes[idx];
            let mut line = String::new();
            if n.is_leaf() {
                let _ = write!(line, "l {} {}", n.id, n.mu);
            } else {
                let _ = write!(line, "i {} {} {}", n.id, n.var, n.cut);
            }
            out.push(line);
        }
        out
    }

    /// Inverse of [`Tree::to_lines`]; `first_line` is used for error positions.
    pub fn from_lines<S: AsRef<str>>(lines: &[S], first_line: usize) -> Result<Self, TreeError> {
        let mut tree = Tree::new(0.0);
        let mut expected: Vec<NodeId> = vec![1];
        for (k, raw) in lines.iter().enumerate() {
            let line = first_line + k;
            let err = |reason: &str| TreeError::Parse {
                line,
                reason: reason.to_string(),
            };
            let fields: Vec<&str> = raw.as_ref().split_whitespace().collect();
            let want = expected.pop().ok_or_else(|| err("extra node"))?;
            let id: NodeId = fields
                .get(1)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| err("bad node id"))?;
            if id != want {
                return Err(err("node out of preorder"));
            }
            match (fields.first().copied(), fields.len()) {
                (Some("l"), 3) => {
                    let mu: f64 = fields[2].parse().map_err(|_| err("bad mu"))?;
                    let idx = tree.find(id).ok_or_else(|| err("orphan node"))?;
                    tree.set_mu(idx, mu);
                }
                (Some("i"), 4) => {
                    let var: u32 = fields[2].parse().map_err(|_| err("bad var"))?;
                    let cut: u32 = fields[3].parse().map_err(|_| err("bad cut"))?;
                    tree.birth(id, var, cut, 0.0, 0.0)
                        .map_err(|e| err(&e.to_string()))?;
                    let (l, r) = child_ids(id);
                    expected.push(r);
                    expected.push(l);
                }
                _ => return Err(err("expected 'i <id> <v> <c>' or 'l <id> <mu>'")),
            }
        }
        if !expected.is_empty() {
            return Err(TreeError::Parse {
                line: first_line + lines.len(),
                reason: "tree is missing nodes".into(),
            });
        }
        Ok(tree)
    }

    /// Checks every rule against the grid.
    pub fn validate(&self, grid: &CutpointGrid) -> Result<(), TreeError> {
        for idx in self.live() {
            let n = &self.nodes[idx];
            if !n.is_leaf()
                && ((n.var as usize) >= grid.num_vars()
                    || (n.cut as usize) >= grid.count(n.var as usize))
            {
                return Err(TreeError::BadRule {
                    var: n.var,
                    cut: n.cut,
                });
            }
        }
        Ok(())
    }

    /// Structure (ids and rules) ignoring leaf means.
    pub fn same_structure(&self, other: &Tree) -> bool {
        let shape = |t: &Tree| -> Vec<(NodeId, bool, u32, u32)> {
            t.live()
                .map(|i| {
                    let n = &t.nodes[i];
                    (n.id, n.is_leaf(), n.var, n.cut)
                })
                .collect()
        };
        shape(self) == shape(other)
    }
}

impl PartialEq for Tree {
    fn eq(&self, other: &Self) -> bool {
        self.to_lines() == other.to_lines()
    }
}
