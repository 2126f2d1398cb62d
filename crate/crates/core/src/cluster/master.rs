//! Master side: handshake, request fan-out and rank-ordered gathers. The
//! master holds no rows; everything it knows about the data arrives as
//! summaries and per-block statistics.

use super::transport::Transport;
use crate::data::local_blocks;
use crate::error::{Error, Result};
use crate::fit::{run_chain, ChainBackend, ChainSetup, DataSummary, FitConfig, FitResult};
use crate::protocol::{Message, Phase, ProtocolError, PROTOCOL_VERSION};
use crate::sampler::{Backend, MoveStats, SuffStats};
use crate::tree::{child_ids, Tree};

/// A worker as seen from the master.
struct Link<T> {
    rank: u32,
    transport: T,
    /// Reduction blocks this worker owns.
    blocks: usize,
}

/// [`Backend`] that drives workers over transports.
pub struct RemoteBackend<T: Transport> {
    links: Vec<Link<T>>,
    n_total: u64,
    n_blocks: usize,
    iteration: u32,
}

fn check<T>(rank: u32, msg: Message, what: &'static str, f: impl FnOnce(Message) -> Option<T>) -> Result<T> {
    if let Message::Fault(text) = &msg {
        return Err(Error::Cluster(format!("worker {rank} failed: {text}")));
    }
    let op = msg.opcode();
    f(msg).ok_or_else(|| ProtocolError::Unexpected { expected: what, found: op }.into())
}

impl<T: Transport> RemoteBackend<T> {
    /// Reads HELLO from every transport (any order), sorts by rank, checks
    /// that shards tile the rows, and assigns reduction blocks (default: one
    /// per worker).
    pub fn handshake(transports: Vec<T>, reduction_blocks: Option<usize>) -> Result<Self> {
        let p = transports.len();
        if p == 0 {
            return Err(Error::config("workers", "must be at least 1"));
        }
        let mut hellos = Vec::with_capacity(p);
        for mut t in transports {
            let msg = t.recv(None)?;
            let (version, rank, start, count) = check(0, msg, "HELLO", |m| match m {
                Message::Hello { version, rank, row_start, row_count } => Some((version, rank, row_start, row_count)),
                _ => None,
            })?;
            if version != PROTOCOL_VERSION {
                return Err(ProtocolError::Version(version).into());
            }
            hellos.push((rank, start, count as u64, t));
        }
        hellos.sort_by_key(|h| h.0);
        let mut next = 0u64;
        for (i, h) in hellos.iter().enumerate() {
            if h.0 as usize != i + 1 {
                return Err(Error::Cluster(format!("missing rank {}", i + 1)));
            }
            if h.1 != next || h.2 == 0 {
                return Err(Error::Cluster(format!("rank {} shard does not continue at row {next}", h.0)));
            }
            next += h.2;
        }
        let n_total = next;
        let n_blocks = reduction_blocks.unwrap_or(p);
        let mut links = Vec::with_capacity(p);
        for (rank, start, count, transport) in hellos {
            let range = start as usize..(start + count) as usize;
            let blocks = local_blocks(n_total as usize, n_blocks, &range)
                .ok_or_else(|| {
                    Error::config(
                        "reduction_blocks",
                        format!("{n_blocks} blocks over {n_total} rows do not align with shard of rank {rank}"),
                    )
                })?
                .len();
            links.push(Link { rank, transport, blocks });
        }
        let mut me = Self {
            links,
            n_total,
            n_blocks,
            iteration: 0,
        };
        me.broadcast(&Message::ShardMeta {
            n_total,
            blocks: n_blocks as u32,
        })?;
        Ok(me)
    }

    pub fn workers(&self) -> usize {
        self.links.len()
    }

    pub fn n_total(&self) -> u64 {
        self.n_total
    }

    pub fn blocks(&self) -> usize {
        self.n_blocks
    }

    fn broadcast(&mut self, msg: &Message) -> Result<()> {
        let frame = crate::protocol::encode(msg)?;
        for l in &mut self.links {
            l.transport.send_frame(&frame)?;
        }
        Ok(())
    }

    /// Receives each worker's per-block replies, in rank then block order.
    fn gather<R>(
        &mut self,
        expected_leaves: Option<usize>,
        what: &'static str,
        f: impl Fn(Message) -> Option<R>,
    ) -> Result<Vec<R>> {
        let mut out = Vec::with_capacity(self.n_blocks);
        for l in &mut self.links {
            for _ in 0..l.blocks {
                let msg = l.transport.recv(expected_leaves)?;
                out.push(check(l.rank, msg, what, &f)?);
            }
        }
        Ok(out)
    }

    fn gather_move_stats(&mut self) -> Result<Vec<MoveStats>> {
        self.gather(None, "MOVE_STATS", |m| match m {
            Message::MoveStats(s) => Some(s),
            _ => None,
        })
    }

    /// Best-effort SHUTDOWN to every worker.
    pub fn shutdown(&mut self) {
        for l in &mut self.links {
            let _ = l.transport.send(&Message::Shutdown);
        }
    }
}

impl<T: Transport> Backend for RemoteBackend<T> {
    fn birth_stats(&mut self, _j: usize, tree: &Tree, node: usize, var: u32, cut: u32) -> Result<Vec<MoveStats>> {
        self.broadcast(&Message::BirthProposal {
            node: tree.node(node).id,
            var,
            cut,
        })?;
        self.gather_move_stats()
    }

    fn death_stats(&mut self, _j: usize, tree: &Tree, node: usize) -> Result<Vec<MoveStats>> {
        let (left, right) = child_ids(tree.node(node).id);
        self.broadcast(&Message::DeathProposal { left, right })?;
        self.gather_move_stats()
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
        self.broadcast(&Message::BirthAccept {
            node: tree.node(node).id,
            var,
            cut,
            mu_left,
            mu_right,
        })
    }

    fn commit_death(&mut self, _j: usize, tree: &Tree, node: usize, mu: f64) -> Result<()> {
        self.broadcast(&Message::DeathAccept {
            node: tree.node(node).id,
            mu,
        })
    }

    fn no_change(&mut self, _j: usize) -> Result<()> {
        self.broadcast(&Message::Reject)
    }

    fn leaf_stats(&mut self, _j: usize, tree: &Tree) -> Result<Vec<Vec<SuffStats>>> {
        self.gather(Some(tree.num_leaves()), "MU_STATS", |m| match m {
            Message::MuStats(v) => Some(v),
            _ => None,
        })
    }

    fn set_leaf_values(&mut self, _j: usize, _tree: &Tree, mus: &[f64]) -> Result<()> {
        self.broadcast(&Message::MuValues(mus.to_vec()))
    }

    fn residual_ss(&mut self) -> Result<Vec<f64>> {
        self.broadcast(&Message::IterBegin {
            iteration: self.iteration,
            phase: Phase::Sigma,
        })?;
        self.gather(None, "RSS_PARTIAL", |m| match m {
            Message::RssPartial(x) => Some(x),
            _ => None,
        })
    }
}

impl<T: Transport> ChainBackend for RemoteBackend<T> {
    fn summarize(&mut self) -> Result<DataSummary> {
        let mut parts = Vec::with_capacity(self.links.len());
        for l in &mut self.links {
            let msg = l.transport.recv(None)?;
            let s = check(l.rank, msg, "SUMMARY", |m| match m {
                Message::Summary(s) => Some(s),
                _ => None,
            })?;
            if s.blocks.len() != l.blocks {
                return Err(Error::Cluster(format!("rank {} summarized {} blocks", l.rank, s.blocks.len())));
            }
            parts.push(s);
        }
        DataSummary::merge(parts)
    }

    fn setup(&mut self, setup: &ChainSetup) -> Result<()> {
        self.broadcast(&Message::Setup(setup.clone()))
    }

    fn forest_hashes(&mut self, iteration: u32) -> Result<Vec<u64>> {
        self.broadcast(&Message::IterBegin {
            iteration,
            phase: Phase::Verify,
        })?;
        let mut out = Vec::with_capacity(self.links.len());
        for l in &mut self.links {
            let msg = l.transport.recv(None)?;
            out.push(check(l.rank, msg, "FOREST_HASH", |m| match m {
                Message::ForestHash(h) => Some(h),
                _ => None,
            })?);
        }
        Ok(out)
    }

    fn begin_iteration(&mut self, iteration: u32) -> Result<()> {
        self.iteration = iteration;
        self.broadcast(&Message::IterBegin {
            iteration,
            phase: Phase::Trees,
        })
    }

    fn finish(&mut self) -> Result<()> {
        self.broadcast(&Message::Shutdown)
    }
}

/// Runs the master over connected worker transports. Workers are shut down
/// whether or not the chain succeeds.
pub fn run_master<T: Transport>(cfg: &FitConfig, transports: Vec<T>) -> Result<FitResult> {
    cfg.validate()?;
    let mut backend = RemoteBackend::handshake(transports, cfg.reduction_blocks)?;
    let out = run_chain(cfg, &mut backend, false);
    if out.is_err() {
        backend.shutdown();
    }
    out
}

/// Sums per-rank partials strictly in ascending rank order. Ranks must be
/// exactly `1..=p`.
pub fn reduce_stats<S>(mut partials: Vec<(u32, S)>) -> Result<S>
where
    S: Copy + Default + std::ops::Add<Output = S>,
{
    partials.sort_by_key(|p| p.0);
    let mut total = S::default();
    for (i, (rank, s)) in partials.into_iter().enumerate() {
        if rank as usize != i + 1 {
            return Err(ProtocolError::Malformed(format!("missing partial for rank {}", i + 1)).into());
        }
        total = total + s;
    }
    Ok(total)
}
