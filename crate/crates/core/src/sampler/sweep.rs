//! One Gibbs sweep over the forest, written against a [`Backend`] that owns
//! the data. The serial sampler and the distributed master run this same
//! code; only where the statistics come from differs.

use std::ops::Range;

use rand::Rng;

use super::moves::{accept_log_ratio, propose, MoveKind};
use super::prior::PriorParams;
use super::shard::{Rows, ShardState};
use super::stats::{draw_mu, draw_sigma, MoveStats, SuffStats};
use crate::error::{Error, Result};
use crate::tree::{CutpointGrid, Tree};

/// Source of data-dependent statistics for a chain. Each statistic comes
/// back as one partial per reduction block, in block order.
pub trait Backend {
    fn birth_stats(&mut self, j: usize, tree: &Tree, node: usize, var: u32, cut: u32)
        -> Result<Vec<MoveStats>>;
    fn death_stats(&mut self, j: usize, tree: &Tree, node: usize) -> Result<Vec<MoveStats>>;
    /// `tree` is the tree before the split is applied.
    #[allow(clippy::too_many_arguments)]
    fn commit_birth(
        &mut self,
        j: usize,
        tree: &Tree,
        node: usize,
        var: u32,
        cut: u32,
        mu_left: f64,
        mu_right: f64,
    ) -> Result<()>;
    fn commit_death(&mut self, j: usize, tree: &Tree, node: usize, mu: f64) -> Result<()>;
    /// Rejected or null proposal.
    fn no_change(&mut self, j: usize) -> Result<()>;
    fn leaf_stats(&mut self, j: usize, tree: &Tree) -> Result<Vec<Vec<SuffStats>>>;
    /// `tree` still holds the old leaf means.
    fn set_leaf_values(&mut self, j: usize, tree: &Tree, mus: &[f64]) -> Result<()>;
    fn residual_ss(&mut self) -> Result<Vec<f64>>;
}

/// Everything about a chain that stays fixed across iterations.
#[derive(Clone, Debug)]
pub struct ChainContext {
    pub prior: PriorParams,
    pub grid: CutpointGrid,
    pub n_total: u64,
    /// Zero the likelihood term in MH ratios.
    pub prior_only: bool,
    /// Hold sigma at this value instead of drawing it.
    pub fixed_sigma: Option<f64>,
}

/// What happened to one tree during a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TreeTrace {
    /// `None` for a null proposal.
    pub kind: Option<MoveKind>,
    pub accepted: bool,
    /// Terminal nodes after the move.
    pub leaves: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepStats {
    pub birth_proposed: u32,
    pub birth_accepted: u32,
    pub death_proposed: u32,
    pub death_accepted: u32,
    pub trees: Vec<TreeTrace>,
}

impl SweepStats {
    pub fn mean_leaves(&self) -> f64 {
        let total: usize = self.trees.iter().map(|t| t.leaves).sum();
        total as f64 / self.trees.len().max(1) as f64
    }
}

/// Sums block partials strictly in block order.
pub fn reduce<T: Copy + Default + std::ops::Add<Output = T>>(parts: &[T]) -> T {
    parts.iter().fold(T::default(), |acc, &p| acc + p)
}

fn reduce_leaves(per_block: &[Vec<SuffStats>], leaves: usize) -> Result<Vec<SuffStats>> {
    let mut total = vec![SuffStats::default(); leaves];
    for block in per_block {
        if block.len() != leaves {
            return Err(Error::LeafCount {
                expected: leaves,
                found: block.len(),
            });
        }
        for (t, s) in total.iter_mut().zip(block) {
            *t += *s;
        }
    }
    Ok(total)
}

/// Structural MH step and leaf-mean Gibbs step for tree `j`.
pub fn update_tree<B: Backend + ?Sized, R: Rng + ?Sized>(
    j: usize,
    forest: &mut [Tree],
    sigma: f64,
    ctx: &ChainContext,
    backend: &mut B,
    rng: &mut R,
) -> Result<TreeTrace> {
    let tau = ctx.prior.tau();
    let proposal = propose(&forest[j], &ctx.grid, rng);
    let mut accepted = false;
    match proposal {
        None => backend.no_change(j)?,
        Some(p) => {
            let tree = &forest[j];
            let idx = tree.find(p.node).expect("proposed node exists");
            let parts = match p.kind {
                MoveKind::Birth => backend.birth_stats(j, tree, idx, p.var, p.cut)?,
                MoveKind::Death => backend.death_stats(j, tree, idx)?,
            };
            let stats = reduce(&parts);
            let log_ratio = accept_log_ratio(&p, &stats, sigma, &ctx.prior, !ctx.prior_only);
            accepted = log_ratio > f64::NEG_INFINITY && rng.random::<f64>().ln() < log_ratio;
            if accepted {
                match p.kind {
                    MoveKind::Birth => {
                        let mu_l = draw_mu(stats.n_left, stats.sum_left, sigma, tau, rng);
                        let mu_r = draw_mu(stats.n_right, stats.sum_right, sigma, tau, rng);
                        backend.commit_birth(j, tree, idx, p.var, p.cut, mu_l, mu_r)?;
                        forest[j].birth(p.node, p.var, p.cut, mu_l, mu_r)?;
                    }
                    MoveKind::Death => {
                        let mu = draw_mu(stats.merged_n(), stats.merged_sum(), sigma, tau, rng);
                        backend.commit_death(j, tree, idx, mu)?;
                        forest[j].death(p.node, mu)?;
                    }
                }
            } else {
                backend.no_change(j)?;
            }
        }
    }

    let leaves = forest[j].leaves();
    let per_block = backend.leaf_stats(j, &forest[j])?;
    let totals = reduce_leaves(&per_block, leaves.len())?;
    let mus: Vec<f64> = totals
        .iter()
        .map(|s| draw_mu(s.n, s.sum, sigma, tau, rng))
        .collect();
    backend.set_leaf_values(j, &forest[j], &mus)?;
    for (&slot, &mu) in leaves.iter().zip(&mus) {
        forest[j].set_mu(slot, mu);
    }
    Ok(TreeTrace {
        kind: proposal.map(|p| p.kind),
        accepted,
        leaves: leaves.len(),
    })
}

/// Updates all trees, then sigma. Sigma is in the scaled response units.
pub fn sweep<B: Backend + ?Sized, R: Rng + ?Sized>(
    forest: &mut [Tree],
    sigma: &mut f64,
    ctx: &ChainContext,
    backend: &mut B,
    rng: &mut R,
) -> Result<SweepStats> {
    let mut out = SweepStats::default();
    for j in 0..forest.len() {
        let t = update_tree(j, forest, *sigma, ctx, backend, rng)?;
        match t.kind {
            Some(MoveKind::Birth) => {
                out.birth_proposed += 1;
                out.birth_accepted += u32::from(t.accepted);
            }
            Some(MoveKind::Death) => {
                out.death_proposed += 1;
                out.death_accepted += u32::from(t.accepted);
            }
            None => out.birth_proposed += 1,
        }
        out.trees.push(t);
    }
    let rss = reduce(&backend.residual_ss()?);
    *sigma = match ctx.fixed_sigma {
        Some(s) => s,
        None => draw_sigma(ctx.n_total, rss, ctx.prior.nu, ctx.prior.lambda, rng),
    };
    Ok(out)
}

/// Backend over locally held rows.
pub struct LocalBackend<'a> {
    pub rows: Rows<'a>,
    pub grid: &'a CutpointGrid,
    pub shard: &'a mut ShardState,
    pub blocks: &'a [Range<usize>],
}

impl Backend for LocalBackend<'_> {
    fn birth_stats(&mut self, _j: usize, tree: &Tree, node: usize, var: u32, cut: u32) -> Result<Vec<MoveStats>> {
        self.shard.cache_leaves(self.rows, tree, self.grid);
        Ok(self
            .shard
            .birth_stats(self.rows, tree, self.grid, node, var as usize, cut as usize, self.blocks))
    }

    fn death_stats(&mut self, _j: usize, tree: &Tree, node: usize) -> Result<Vec<MoveStats>> {
        self.shard.cache_leaves(self.rows, tree, self.grid);
        Ok(self.shard.death_stats(self.rows, tree, self.grid, node, self.blocks))
    }

    fn commit_birth(
        &mut self,
        _j: usize,
        tree: &Tree,
        node: usize,
        var: u32,
        cut: u32,
        mu_left: f64,
        mu_right: f64,
    ) -> Result<()> {
        self.shard.apply_birth(
            self.rows,
            tree,
            self.grid,
            node,
            var as usize,
            cut as usize,
            mu_left,
            mu_right,
        );
        Ok(())
    }

    fn commit_death(&mut self, _j: usize, tree: &Tree, node: usize, mu: f64) -> Result<()> {
        self.shard.apply_death(self.rows, tree, self.grid, node, mu);
        Ok(())
    }

    fn no_change(&mut self, _j: usize) -> Result<()> {
        Ok(())
    }

    fn leaf_stats(&mut self, _j: usize, tree: &Tree) -> Result<Vec<Vec<SuffStats>>> {
        self.shard.cache_leaves(self.rows, tree, self.grid);
        Ok(self.shard.leaf_stats(self.rows, tree, self.grid, self.blocks))
    }

    fn set_leaf_values(&mut self, _j: usize, tree: &Tree, mus: &[f64]) -> Result<()> {
        self.shard.apply_leaf_values(self.rows, tree, self.grid, mus);
        Ok(())
    }

    fn residual_ss(&mut self) -> Result<Vec<f64>> {
        Ok(self.shard.residual_ss(self.blocks))
    }
}

/// Serial chain: forest, sigma and the per-row fit/residual over all rows.
#[derive(Clone, Debug)]
pub struct ChainState {
    pub forest: Vec<Tree>,
    pub sigma: f64,
    pub shard: ShardState,
}

impl ChainState {
    /// `m` zero-leaf trees over an already-scaled response.
    pub fn new(m: usize, y_scaled: Vec<f64>, sigma: f64) -> Self {
        Self {
            forest: vec![Tree::new(0.0); m],
            sigma,
            shard: ShardState::new(y_scaled),
        }
    }

    pub fn fit(&self) -> &[f64] {
        self.shard.fit()
    }

    pub fn residual(&self) -> &[f64] {
        self.shard.residual()
    }
}

/// One full Gibbs iteration on a serial chain. `x` is row-major with
/// `ctx.grid.num_vars()` columns; `blocks` fix the summation order.
pub fn one_iteration<R: Rng + ?Sized>(
    state: &mut ChainState,
    x: &[f64],
    blocks: &[Range<usize>],
    ctx: &ChainContext,
    rng: &mut R,
) -> Result<SweepStats> {
    let mut backend = LocalBackend {
        rows: Rows::new(x, ctx.grid.num_vars()),
        grid: &ctx.grid,
        shard: &mut state.shard,
        blocks,
    };
    sweep(&mut state.forest, &mut state.sigma, ctx, &mut backend, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ctx(d: usize, m: usize, min_leaf: u64) -> ChainContext {
        ChainContext {
            prior: PriorParams {
                m,
                alpha: 0.95,
                beta: 2.0,
                kfac: 2.0,
                nu: 3.0,
                lambda: 0.01,
                min_leaf,
            },
            grid: CutpointGrid::from_ranges(&vec![(-1.0, 1.0); d], 50).unwrap(),
            n_total: 0,
            prior_only: false,
            fixed_sigma: None,
        }
    }

    fn data(n: usize, d: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| 0.3 * (x[i * d] > 0.0) as i32 as f64 - 0.15 + 0.05 * rng.random::<f64>())
            .collect();
        (x, y)
    }

    #[test]
    fn min_leaf_above_n_blocks_growth() {
        let (x, y) = data(20, 2, 1);
        let mut c = ctx(2, 1, 21);
        c.n_total = 20;
        let mut state = ChainState::new(1, y, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let s = one_iteration(&mut state, &x, &[0..20], &c, &mut rng).unwrap();
            assert_eq!(s.birth_accepted, 0);
        }
        assert_eq!(state.forest[0].num_leaves(), 1);
    }

    #[test]
    fn residual_consistency_over_iterations() {
        let (n, d, m) = (200, 3, 10);
        let (x, y) = data(n, d, 3);
        let mut c = ctx(d, m, 5);
        c.n_total = n as u64;
        let mut state = ChainState::new(m, y.clone(), 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let blocks = crate::data::partition(n, 3);
        let mut grew = false;
        for _ in 0..50 {
            one_iteration(&mut state, &x, &blocks, &c, &mut rng).unwrap();
            for i in 0..n {
                let f: f64 = state
                    .forest
                    .iter()
                    .map(|t| t.evaluate(&c.grid, &x[i * d..(i + 1) * d]))
                    .sum();
                assert!((state.residual()[i] - (y[i] - f)).abs() < 1e-8);
            }
            grew |= state.forest.iter().any(|t| t.num_leaves() > 1);
            assert!(state.sigma > 0.0);
        }
        assert!(grew);
    }

    #[test]
    fn same_seed_same_chain() {
        let (n, d, m) = (100, 2, 5);
        let (x, y) = data(n, d, 5);
        let mut c = ctx(d, m, 5);
        c.n_total = n as u64;
        let run = || {
            let mut state = ChainState::new(m, y.clone(), 0.1);
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            let mut sigmas = Vec::new();
            for _ in 0..30 {
                one_iteration(&mut state, &x, &[0..n], &c, &mut rng).unwrap();
                sigmas.push(state.sigma.to_bits());
            }
            (sigmas, state.forest)
        };
        let (a, fa) = run();
        let (b, fb) = run();
        assert_eq!(a, b);
        assert_eq!(fa, fb);
    }
}
