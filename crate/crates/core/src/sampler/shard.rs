//! Data-side state of one shard: scaled response, per-row fit and residual.
//!
//! Every statistic is produced per reduction block, summing rows in order,
//! so the same rows always yield the same bits no matter which process owns
//! them.

use std::ops::Range;

use super::stats::{MoveStats, SuffStats};
use crate::tree::{CutpointGrid, Tree};

/// Read-only view of a row-major predictor matrix.
#[derive(Clone, Copy)]
pub struct Rows<'a> {
    x: &'a [f64],
    d: usize,
}

impl<'a> Rows<'a> {
    pub fn new(x: &'a [f64], d: usize) -> Self {
        debug_assert!(d > 0 && x.len() % d == 0);
        Self { x, d }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn len(&self) -> usize {
        self.x.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ShardState {
    y: Vec<f64>,
    fit: Vec<f64>,
    residual: Vec<f64>,
    /// Leaf slot of every row in the tree being updated. Filled on demand by
    /// `cache_leaves`, dropped after any change to that tree.
    slots: Vec<u32>,
    cached: bool,
}

impl ShardState {
    /// Fresh state for a forest whose leaves are all zero.
    pub fn new(y_scaled: Vec<f64>) -> Self {
        let n = y_scaled.len();
        Self {
            residual: y_scaled.clone(),
            y: y_scaled,
            fit: vec![0.0; n],
            slots: Vec::new(),
            cached: false,
        }
    }

    /// Records the leaf of every row under `tree` until the next structural
    /// or leaf-value update. No-op if already cached.
    pub fn cache_leaves(&mut self, rows: Rows<'_>, tree: &Tree, grid: &CutpointGrid) {
        if !self.cached {
            self.slots.clear();
            self.slots.extend((0..self.y.len()).map(|i| tree.leaf_for(grid, rows.row(i)) as u32));
            self.cached = true;
        }
    }

    #[inline]
    fn slot(&self, i: usize, rows: Rows<'_>, tree: &Tree, grid: &CutpointGrid) -> usize {
        if self.cached {
            self.slots[i] as usize
        } else {
            tree.leaf_for(grid, rows.row(i))
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn fit(&self) -> &[f64] {
        &self.fit
    }

    pub fn residual(&self) -> &[f64] {
        &self.residual
    }

    #[inline]
    fn shift(&mut self, i: usize, delta: f64) {
        self.fit[i] += delta;
        self.residual[i] -= delta;
    }

    /// Child stats of a prospective split of terminal slot `node`, using the
    /// partial residual `residual + mu(node)`.
    pub fn birth_stats(
        &self,
        rows: Rows<'_>,
        tree: &Tree,
        grid: &CutpointGrid,
        node: usize,
        var: usize,
        cut: usize,
        blocks: &[Range<usize>],
    ) -> Vec<MoveStats> {
        let mu = tree.node(node).mu;
        let thr = grid.value(var, cut);
        blocks
            .iter()
            .map(|b| {
                let mut s = MoveStats::default();
                for i in b.clone() {
                    if self.slot(i, rows, tree, grid) == node {
                        let x = rows.row(i);
                        let r = self.residual[i] + mu;
                        if x[var] < thr {
                            s.n_left += 1;
                            s.sum_left += r;
                        } else {
                            s.n_right += 1;
                            s.sum_right += r;
                        }
                    }
                }
                s
            })
            .collect()
    }

    /// Stats of the two terminal children of nog slot `node`.
    pub fn death_stats(
        &self,
        rows: Rows<'_>,
        tree: &Tree,
        grid: &CutpointGrid,
        node: usize,
        blocks: &[Range<usize>],
    ) -> Vec<MoveStats> {
        let (l, r) = tree.node(node).children().expect("nog node");
        let (mu_l, mu_r) = (tree.node(l).mu, tree.node(r).mu);
        blocks
            .iter()
            .map(|b| {
                let mut s = MoveStats::default();
                for i in b.clone() {
                    let leaf = self.slot(i, rows, tree, grid);
                    if leaf == l {
                        s.n_left += 1;
                        s.sum_left += self.residual[i] + mu_l;
                    } else if leaf == r {
                        s.n_right += 1;
                        s.sum_right += self.residual[i] + mu_r;
                    }
                }
                s
            })
            .collect()
    }

    /// Applies an accepted BIRTH; `tree` is the tree before the split.
    #[allow(clippy::too_many_arguments)]
    pub fn apply_birth(
        &mut self,
        rows: Rows<'_>,
        tree: &Tree,
        grid: &CutpointGrid,
        node: usize,
        var: usize,
        cut: usize,
        mu_left: f64,
        mu_right: f64,
    ) {
        let old = tree.node(node).mu;
        let thr = grid.value(var, cut);
        for i in 0..self.len() {
            if self.slot(i, rows, tree, grid) == node {
                let new = if rows.row(i)[var] < thr { mu_left } else { mu_right };
                self.shift(i, new - old);
            }
        }
        self.cached = false;
    }

    /// Applies an accepted DEATH; `tree` is the tree before the collapse.
    pub fn apply_death(&mut self, rows: Rows<'_>, tree: &Tree, grid: &CutpointGrid, node: usize, mu: f64) {
        let (l, r) = tree.node(node).children().expect("nog node");
        let (mu_l, mu_r) = (tree.node(l).mu, tree.node(r).mu);
        for i in 0..self.len() {
            let leaf = self.slot(i, rows, tree, grid);
            if leaf == l {
                self.shift(i, mu - mu_l);
            } else if leaf == r {
                self.shift(i, mu - mu_r);
            }
        }
        self.cached = false;
    }

    /// Per-block stats of every terminal node, ascending node id.
    pub fn leaf_stats(
        &self,
        rows: Rows<'_>,
        tree: &Tree,
        grid: &CutpointGrid,
        blocks: &[Range<usize>],
    ) -> Vec<Vec<SuffStats>> {
        let (slot_pos, mus) = leaf_positions(tree);
        blocks
            .iter()
            .map(|b| {
                let mut stats = vec![SuffStats::default(); mus.len()];
                for i in b.clone() {
                    let pos = slot_pos[self.slot(i, rows, tree, grid)];
                    stats[pos].push(self.residual[i] + mus[pos]);
                }
                stats
            })
            .collect()
    }

    /// Replaces every leaf mean of `tree` (ascending id order) by `new_mus`.
    pub fn apply_leaf_values(&mut self, rows: Rows<'_>, tree: &Tree, grid: &CutpointGrid, new_mus: &[f64]) {
        let (slot_pos, mus) = leaf_positions(tree);
        debug_assert_eq!(mus.len(), new_mus.len());
        let deltas: Vec<f64> = new_mus.iter().zip(&mus).map(|(n, o)| n - o).collect();
        for i in 0..self.len() {
            let pos = slot_pos[self.slot(i, rows, tree, grid)];
            self.shift(i, deltas[pos]);
        }
        self.cached = false;
    }

    /// Residual sum of squares per block.
    pub fn residual_ss(&self, blocks: &[Range<usize>]) -> Vec<f64> {
        blocks
            .iter()
            .map(|b| self.residual[b.clone()].iter().map(|r| r * r).sum())
            .collect()
    }
}

/// Maps slot index to leaf position (ascending id) and lists leaf means.
fn leaf_positions(tree: &Tree) -> (Vec<usize>, Vec<f64>) {
    let leaves = tree.leaves();
    let max_slot = leaves.iter().copied().max().unwrap_or(0);
    let mut slot_pos = vec![usize::MAX; max_slot + 1];
    let mut mus = Vec::with_capacity(leaves.len());
    for (pos, &slot) in leaves.iter().enumerate() {
        slot_pos[slot] = pos;
        mus.push(tree.node(slot).mu);
    }
    (slot_pos, mus)
}
