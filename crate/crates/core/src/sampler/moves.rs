//! BIRTH/DEATH proposals and their Metropolis-Hastings log ratios.
//!
//! The structural part of a ratio (tree prior and proposal probabilities) is
//! computed on the control thread from the tree alone; the data enter only
//! through the two children's `(n, sum)`.

use rand::Rng;

use super::prior::{split_prior_prob, PriorParams};
use super::stats::{log_marginal_likelihood, MoveStats};
use crate::tree::{CutpointGrid, NodeId, Tree, MAX_DEPTH};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MoveKind {
    Birth,
    Death,
}

/// Counts describing the smaller/larger tree pair a move connects. For a
/// BIRTH the current tree is the smaller one; for a DEATH, the larger.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TreeContext {
    /// Depth of the node that splits (BIRTH) or collapses (DEATH).
    pub depth: usize,
    /// Terminal nodes in the smaller tree.
    pub small_leaves: usize,
    /// Nog nodes in the larger tree.
    pub large_nogs: usize,
    /// Whether the smaller tree is a single node (forces BIRTH there).
    pub small_is_single: bool,
    pub left_can_split: bool,
    pub right_can_split: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Proposal {
    pub kind: MoveKind,
    /// Node that gains (BIRTH) or loses (DEATH) its children.
    pub node: NodeId,
    /// Rule of the split being created or removed.
    pub var: u32,
    pub cut: u32,
    pub context: TreeContext,
}

/// Probability of proposing BIRTH from a tree.
pub fn birth_prob(single: bool) -> f64 {
    if single {
        1.0
    } else {
        0.5
    }
}

fn children_can_split(
    tree: &Tree,
    grid: &CutpointGrid,
    idx: usize,
    depth: usize,
    var: usize,
    cut: usize,
) -> (bool, bool) {
    if depth + 1 >= MAX_DEPTH {
        return (false, false);
    }
    let other = (0..grid.num_vars())
        .filter(|&v| v != var)
        .any(|v| !tree.cut_range(grid, idx, v).is_empty());
    let range = tree.cut_range(grid, idx, var);
    (other || cut > range.start, other || cut + 1 < range.end)
}

/// Draws a BIRTH or DEATH proposal. `None` is a null proposal: the chosen
/// terminal node has no rule-consistent cutpoint on any variable.
pub fn propose<R: Rng + ?Sized>(tree: &Tree, grid: &CutpointGrid, rng: &mut R) -> Option<Proposal> {
    let single = tree.is_single();
    let birth = single || rng.random::<f64>() < birth_prob(single);
    if birth {
        let leaves = tree.leaves();
        let idx = leaves[rng.random_range(0..leaves.len())];
        let vars = tree.splittable_vars(grid, idx);
        if vars.is_empty() {
            return None;
        }
        let var = vars[rng.random_range(0..vars.len())];
        let cut = rng.random_range(tree.cut_range(grid, idx, var));
        let node = tree.node(idx);
        let depth = tree.depth(idx);
        let sibling_is_leaf = match node.parent() {
            Some(p) => {
                let (l, r) = tree.node(p).children().expect("parent has children");
                let sib = if l == idx { r } else { l };
                tree.node(sib).is_leaf()
            }
            None => false,
        };
        let (left_can_split, right_can_split) = children_can_split(tree, grid, idx, depth, var, cut);
        Some(Proposal {
            kind: MoveKind::Birth,
            node: node.id,
            var: var as u32,
            cut: cut as u32,
            context: TreeContext {
                depth,
                small_leaves: leaves.len(),
                large_nogs: tree.num_nogs() + 1 - usize::from(sibling_is_leaf),
                small_is_single: single,
                left_can_split,
                right_can_split,
            },
        })
    } else {
        let nogs = tree.nodes_of_kind(crate::tree::NodeKind::Nog);
        let idx = nogs[rng.random_range(0..nogs.len())];
        let node = tree.node(idx);
        let (l, r) = node.children().expect("nog has children");
        Some(Proposal {
            kind: MoveKind::Death,
            node: node.id,
            var: node.var,
            cut: node.cut,
            context: TreeContext {
                depth: tree.depth(idx),
                small_leaves: tree.num_leaves() - 1,
                large_nogs: nogs.len(),
                small_is_single: node.parent().is_none(),
                left_can_split: tree.can_split(grid, l),
                right_can_split: tree.can_split(grid, r),
            },
        })
    }
}

/// Log of prior ratio times proposal ratio for going small -> large.
fn log_structure_ratio(ctx: &TreeContext, prior: &PriorParams) -> f64 {
    let p_here = split_prior_prob(ctx.depth, prior.alpha, prior.beta);
    let p_child = split_prior_prob(ctx.depth + 1, prior.alpha, prior.beta);
    let p_left = if ctx.left_can_split { p_child } else { 0.0 };
    let p_right = if ctx.right_can_split { p_child } else { 0.0 };
    // The rule prior (uniform over consistent rules) cancels against the
    // identical rule proposal.
    let prior_ratio = p_here.ln() + (1.0 - p_left).ln() + (1.0 - p_right).ln() - (1.0 - p_here).ln();
    let death_back = 1.0 - birth_prob(false);
    let proposal_ratio = (death_back * ctx.small_leaves as f64).ln()
        - (birth_prob(ctx.small_is_single) * ctx.large_nogs as f64).ln();
    prior_ratio + proposal_ratio
}

/// MH log acceptance ratio for `proposal` given the children's summed stats.
/// With `likelihood == false` the data term is zeroed (prior-only chains).
pub fn accept_log_ratio(
    proposal: &Proposal,
    stats: &MoveStats,
    sigma: f64,
    prior: &PriorParams,
    likelihood: bool,
) -> f64 {
    if proposal.kind == MoveKind::Birth && stats.n_left.min(stats.n_right) < prior.min_leaf {
        return f64::NEG_INFINITY;
    }
    let structure = log_structure_ratio(&proposal.context, prior);
    let lik = if likelihood {
        let tau = prior.tau();
        log_marginal_likelihood(stats.n_left, stats.sum_left, sigma, tau)
            + log_marginal_likelihood(stats.n_right, stats.sum_right, sigma, tau)
            - log_marginal_likelihood(stats.merged_n(), stats.merged_sum(), sigma, tau)
    } else {
        0.0
    };
    match proposal.kind {
        MoveKind::Birth => structure + lik,
        MoveKind::Death => -(structure + lik),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn prior() -> PriorParams {
        PriorParams {
            m: 1,
            alpha: 0.95,
            beta: 2.0,
            kfac: 2.0,
            nu: 3.0,
            lambda: 0.1,
            min_leaf: 5,
        }
    }

    fn grid() -> CutpointGrid {
        CutpointGrid::from_ranges(&[(-1.0, 1.0), (-1.0, 1.0)], 100).unwrap()
    }

    #[test]
    fn single_node_always_births() {
        let g = grid();
        let t = Tree::new(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let p = propose(&t, &g, &mut rng).unwrap();
            assert_eq!(p.kind, MoveKind::Birth);
            assert_eq!(p.node, 1);
        }
    }

    #[test]
    fn left_child_cut_is_truncated() {
        let g = CutpointGrid::from_ranges(&[(-1.0, 1.0)], 100).unwrap();
        let mut t = Tree::new(0.0);
        t.birth(1, 0, 50, 0.0, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut seen = [0usize; 100];
        for _ in 0..20_000 {
            if let Some(p) = propose(&t, &g, &mut rng) {
                if p.kind == MoveKind::Birth && p.node == 2 {
                    seen[p.cut as usize] += 1;
                }
            }
        }
        assert!(seen[50..].iter().all(|&c| c == 0));
        assert!(seen[..50].iter().all(|&c| c > 0));
    }

    #[test]
    fn node_selection_uniform() {
        // Fixed 5-leaf tree; each leaf should be picked for BIRTH w.p. 0.5/5.
        let g = grid();
        let mut t = Tree::new(0.0);
        t.birth(1, 0, 50, 0.0, 0.0).unwrap();
        t.birth(2, 1, 50, 0.0, 0.0).unwrap();
        t.birth(3, 1, 30, 0.0, 0.0).unwrap();
        t.birth(7, 0, 80, 0.0, 0.0).unwrap();
        assert_eq!(t.num_leaves(), 5);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let trials = 100_000;
        let mut counts = std::collections::BTreeMap::new();
        for _ in 0..trials {
            let p = propose(&t, &g, &mut rng).unwrap();
            if p.kind == MoveKind::Birth {
                *counts.entry(p.node).or_insert(0usize) += 1;
            }
        }
        let leaf_ids: Vec<u32> = t.leaves().iter().map(|&i| t.node(i).id).collect();
        assert_eq!(counts.keys().cloned().collect::<Vec<_>>(), leaf_ids);
        let p = 0.1;
        let se = (trials as f64 * p * (1.0 - p)).sqrt();
        for (_, &c) in &counts {
            assert!((c as f64 - trials as f64 * p).abs() < 3.0 * se, "count {c}");
        }
    }

    #[test]
    fn min_leaf_rejects_deterministically() {
        let g = grid();
        let t = Tree::new(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = propose(&t, &g, &mut rng).unwrap();
        let r = accept_log_ratio(&p, &MoveStats::default(), 1.0, &prior(), true);
        assert_eq!(r, f64::NEG_INFINITY);
    }

    #[test]
    fn birth_and_reverse_death_cancel() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pr = PriorParams { min_leaf: 0, ..prior() };
        for trial in 0..200 {
            let mut t = Tree::new(0.0);
            for _ in 0..(trial % 6) {
                if let Some(p) = propose(&t, &g, &mut rng) {
                    if p.kind == MoveKind::Birth {
                        t.birth(p.node, p.var, p.cut, 0.0, 0.0).unwrap();
                    }
                }
            }
            let birth = loop {
                let p = propose(&t, &g, &mut rng).unwrap();
                if p.kind == MoveKind::Birth {
                    break p;
                }
            };
            let stats = MoveStats {
                n_left: 7,
                n_right: 11,
                sum_left: 0.8,
                sum_right: -1.3,
            };
            let forward = accept_log_ratio(&birth, &stats, 0.3, &pr, true);
            let mut grown = t.clone();
            grown
                .birth(birth.node, birth.var, birth.cut, 0.0, 0.0)
                .unwrap();
            // Build the reverse DEATH context exactly as propose() would.
            let idx = grown.find(birth.node).unwrap();
            let (l, r) = grown.node(idx).children().unwrap();
            let death = Proposal {
                kind: MoveKind::Death,
                node: birth.node,
                var: birth.var,
                cut: birth.cut,
                context: TreeContext {
                    depth: grown.depth(idx),
                    small_leaves: grown.num_leaves() - 1,
                    large_nogs: grown.num_nogs(),
                    small_is_single: grown.node(idx).parent().is_none(),
                    left_can_split: grown.can_split(&g, l),
                    right_can_split: grown.can_split(&g, r),
                },
            };
            assert_eq!(death.context, birth.context);
            let backward = accept_log_ratio(&death, &stats, 0.3, &pr, true);
            assert!((forward + backward).abs() < 1e-12);
        }
    }

    #[test]
    fn ratio_reads_only_child_stats() {
        let g = grid();
        let t = Tree::new(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = propose(&t, &g, &mut rng).unwrap();
        let s = MoveStats {
            n_left: 10,
            n_right: 12,
            sum_left: 1.25,
            sum_right: -0.5,
        };
        let a = accept_log_ratio(&p, &s, 0.2, &prior(), true);
        let b = accept_log_ratio(&p, &s.clone(), 0.2, &prior(), true);
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
