//! Worker event loop. A worker holds one shard, mirrors the master's forest
//! and answers requests; it draws no random numbers.

use std::ops::Range;

use super::transport::Transport;
use crate::data::{local_blocks, Dataset};
use crate::error::{Error, Result};
use crate::fit::{forest_hash, DataSummary};
use crate::protocol::{Message, Phase, ProtocolError, PROTOCOL_VERSION};
use crate::sampler::{Rows, ShardState};
use crate::tree::{parent_id, CutpointGrid, Tree};

struct Replica<'a> {
    rows: Rows<'a>,
    grid: CutpointGrid,
    shard: ShardState,
    blocks: Vec<Range<usize>>,
    forest: Vec<Tree>,
    /// Tree the next structural message refers to.
    j: usize,
}

fn unexpected(what: &'static str, msg: &Message) -> Error {
    ProtocolError::Unexpected {
        expected: what,
        found: msg.opcode(),
    }
    .into()
}

impl Replica<'_> {
    fn tree_index(&self) -> Result<usize> {
        if self.j >= self.forest.len() {
            return Err(Error::Cluster(format!("tree index {} beyond forest of {}", self.j, self.forest.len())));
        }
        Ok(self.j)
    }

    fn find(&self, j: usize, id: u32) -> Result<usize> {
        self.forest[j]
            .find(id)
            .ok_or_else(|| Error::Cluster(format!("tree {j} has no node {id}")))
    }

    /// Handles one structural step of tree `j`, starting after the proposal
    /// (or null-proposal REJECT) has been received.
    fn tree_step<T: Transport + ?Sized>(&mut self, link: &mut T, proposal: Message) -> Result<()> {
        let j = self.tree_index()?;
        match proposal {
            Message::Reject => {}
            Message::BirthProposal { node, var, cut } => {
                let idx = self.find(j, node)?;
                let grid = &self.grid;
                if var as usize >= grid.num_vars() || cut as usize >= grid.count(var as usize) {
                    return Err(Error::Cluster(format!("rule ({var}, {cut}) outside grid")));
                }
                self.shard.cache_leaves(self.rows, &self.forest[j], grid);
                let stats =
                    self.shard
                        .birth_stats(self.rows, &self.forest[j], grid, idx, var as usize, cut as usize, &self.blocks);
                for s in stats {
                    link.send(&Message::MoveStats(s))?;
                }
                match link.recv(None)? {
                    Message::BirthAccept { node: n2, var: v2, cut: c2, mu_left, mu_right } => {
                        if (n2, v2, c2) != (node, var, cut) {
                            return Err(Error::Cluster("accept does not match proposal".into()));
                        }
                        self.shard.apply_birth(
                            self.rows,
                            &self.forest[j],
                            grid,
                            idx,
                            var as usize,
                            cut as usize,
                            mu_left,
                            mu_right,
                        );
                        self.forest[j].birth(node, var, cut, mu_left, mu_right)?;
                    }
                    Message::Reject => {}
                    other => return Err(unexpected("BIRTH_ACCEPT or REJECT", &other)),
                }
            }
            Message::DeathProposal { left, right } => {
                let node = parent_id(left);
                if left % 2 != 0 || right != left + 1 {
                    return Err(Error::Cluster(format!("nodes {left}, {right} are not siblings")));
                }
                let idx = self.find(j, node)?;
                if !self.forest[j].node(idx).children().is_some_and(|(l, r)| {
                    self.forest[j].node(l).is_leaf() && self.forest[j].node(r).is_leaf()
                }) {
                    return Err(Error::Cluster(format!("node {node} of tree {j} is not a nog node")));
                }
                self.shard.cache_leaves(self.rows, &self.forest[j], &self.grid);
                for s in self.shard.death_stats(self.rows, &self.forest[j], &self.grid, idx, &self.blocks) {
                    link.send(&Message::MoveStats(s))?;
                }
                match link.recv(None)? {
                    Message::DeathAccept { node: n2, mu } => {
                        if n2 != node {
                            return Err(Error::Cluster("accept does not match proposal".into()));
                        }
                        self.shard.apply_death(self.rows, &self.forest[j], &self.grid, idx, mu);
                        self.forest[j].death(node, mu)?;
                    }
                    Message::Reject => {}
                    other => return Err(unexpected("DEATH_ACCEPT or REJECT", &other)),
                }
            }
            other => return Err(unexpected("a proposal", &other)),
        }

        let tree = &self.forest[j];
        self.shard.cache_leaves(self.rows, tree, &self.grid);
        let leaves = tree.num_leaves();
        for recs in self.shard.leaf_stats(self.rows, tree, &self.grid, &self.blocks) {
            link.send(&Message::MuStats(recs))?;
        }
        let mus = match link.recv(Some(leaves))? {
            Message::MuValues(v) => v,
            other => return Err(unexpected("MU_VALUES", &other)),
        };
        self.shard.apply_leaf_values(self.rows, tree, &self.grid, &mus);
        for (slot, mu) in tree.leaves().into_iter().zip(mus) {
            self.forest[j].set_mu(slot, mu);
        }
        self.j += 1;
        Ok(())
    }
}

/// Serves one shard until SHUTDOWN. `row_start` is the shard's first global
/// row. Any failure is reported to the master as FAULT before returning.
pub fn run_worker<T: Transport + ?Sized>(rank: u32, row_start: u64, shard: &Dataset, link: &mut T) -> Result<()> {
    let out = serve(rank, row_start, shard, link);
    if let Err(e) = &out {
        let _ = link.send(&Message::Fault(format!("worker {rank}: {e}")));
    }
    out
}

fn serve<T: Transport + ?Sized>(rank: u32, row_start: u64, shard: &Dataset, link: &mut T) -> Result<()> {
    let n = shard.n();
    link.send(&Message::Hello {
        version: PROTOCOL_VERSION,
        rank,
        row_start,
        row_count: u32::try_from(n).map_err(|_| ProtocolError::CountOverflow(n as u64))?,
    })?;
    let (n_total, blocks) = match link.recv(None)? {
        Message::ShardMeta { n_total, blocks } => (n_total as usize, blocks as usize),
        Message::Shutdown => return Ok(()),
        other => return Err(unexpected("SHARD_META", &other)),
    };
    let start = row_start as usize;
    let blocks = local_blocks(n_total, blocks, &(start..start + n))
        .ok_or_else(|| Error::config("reduction_blocks", "blocks straddle shard boundaries"))?;
    link.send(&Message::Summary(DataSummary::of(shard.names(), shard.x(), shard.y(), &blocks)))?;
    let setup = match link.recv(None)? {
        Message::Setup(s) => s,
        Message::Shutdown => return Ok(()),
        other => return Err(unexpected("SETUP", &other)),
    };
    let scaling = setup.scaling();
    let mut r = Replica {
        rows: Rows::new(shard.x(), shard.d()),
        grid: setup.grid()?,
        shard: ShardState::new(shard.y().iter().map(|&y| scaling.scale(y)).collect()),
        blocks,
        forest: vec![Tree::new(0.0); setup.m as usize],
        j: 0,
    };

    loop {
        match link.recv(None)? {
            Message::IterBegin { phase: Phase::Trees, .. } => r.j = 0,
            Message::IterBegin { phase: Phase::Sigma, .. } => {
                for rss in r.shard.residual_ss(&r.blocks) {
                    link.send(&Message::RssPartial(rss))?;
                }
            }
            Message::IterBegin { phase: Phase::Verify, .. } => link.send(&Message::ForestHash(forest_hash(&r.forest)))?,
            Message::Shutdown => return Ok(()),
            m @ (Message::BirthProposal { .. } | Message::DeathProposal { .. } | Message::Reject) => r.tree_step(link, m)?,
            other => return Err(unexpected("a request", &other)),
        }
    }
}
