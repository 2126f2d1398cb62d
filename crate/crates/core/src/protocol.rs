//! Master/worker wire format.
//!
//! Every message is one opcode byte followed by its payload. Integers are
//! `u32` little-endian and reals are `f64` little-endian unless noted. The
//! sampler messages have fixed payloads, except MU_STATS and MU_VALUES whose
//! record count is the tree's terminal-node count, known to both ends.
//! Control messages carry a `u32` length prefix before their body.

use thiserror::Error;

use crate::fit::{ChainSetup, DataSummary};
use crate::sampler::{MoveKind, MoveStats, SuffStats, TreeTrace};

pub const PROTOCOL_VERSION: u32 = 1;

pub mod opcode {
    pub const BIRTH_PROPOSAL: u8 = 0x01;
    pub const DEATH_PROPOSAL: u8 = 0x02;
    pub const MOVE_STATS: u8 = 0x03;
    pub const BIRTH_ACCEPT: u8 = 0x04;
    pub const DEATH_ACCEPT: u8 = 0x05;
    pub const REJECT: u8 = 0x06;
    pub const MU_STATS: u8 = 0x07;
    pub const MU_VALUES: u8 = 0x08;
    pub const RSS_PARTIAL: u8 = 0x09;
    pub const HELLO: u8 = 0x20;
    pub const SHARD_META: u8 = 0x21;
    pub const SUMMARY: u8 = 0x22;
    pub const SETUP: u8 = 0x23;
    pub const ITER_BEGIN: u8 = 0x24;
    pub const FOREST_HASH: u8 = 0x25;
    pub const SHUTDOWN: u8 = 0x26;
    pub const FAULT: u8 = 0x27;
}

pub const MU_STATS_RECORD: usize = 20;
pub const MU_VALUES_RECORD: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("empty message")]
    Empty,
    #[error("unknown opcode {0:#04x}")]
    UnknownOpcode(u8),
    #[error("payload length mismatch for opcode {opcode:#04x}: expected {expected}, found {found}")]
    LengthMismatch { opcode: u8, expected: usize, found: usize },
    #[error("count {0} does not fit in 32 bits")]
    CountOverflow(u64),
    #[error("expected {expected} leaf records, message has {found}")]
    RecordCount { expected: usize, found: usize },
    #[error("non-zero padding in DEATH_ACCEPT")]
    BadPadding,
    #[error("malformed control body: {0}")]
    Malformed(String),
    #[error("unexpected message {found:#04x} while waiting for {expected}")]
    Unexpected { expected: &'static str, found: u8 },
    #[error("unsupported protocol version {0}")]
    Version(u32),
}

/// Phases announced by ITER_BEGIN.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Phase {
    Trees = 0,
    /// Request for RSS partials.
    Sigma = 1,
    /// Request for a forest hash.
    Verify = 2,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    BirthProposal { node: u32, var: u32, cut: u32 },
    DeathProposal { left: u32, right: u32 },
    MoveStats(MoveStats),
    BirthAccept { node: u32, var: u32, cut: u32, mu_left: f64, mu_right: f64 },
    DeathAccept { node: u32, mu: f64 },
    Reject,
    MuStats(Vec<SuffStats>),
    MuValues(Vec<f64>),
    RssPartial(f64),
    Hello { version: u32, rank: u32, row_start: u64, row_count: u32 },
    ShardMeta { n_total: u64, blocks: u32 },
    Summary(DataSummary),
    Setup(ChainSetup),
    IterBegin { iteration: u32, phase: Phase },
    ForestHash(u64),
    Shutdown,
    Fault(String),
}

/// How many payload bytes follow an opcode on a stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PayloadLen {
    Fixed(usize),
    /// A `u32` length prefix follows.
    Prefixed,
}

/// Payload length for `op`. MU_* messages need the receiver's expected leaf
/// count.
pub fn payload_len(op: u8, expected_leaves: Option<usize>) -> Result<PayloadLen, ProtocolError> {
    use opcode::*;
    Ok(match op {
        BIRTH_PROPOSAL => PayloadLen::Fixed(12),
        DEATH_PROPOSAL => PayloadLen::Fixed(8),
        MOVE_STATS => PayloadLen::Fixed(24),
        BIRTH_ACCEPT | DEATH_ACCEPT => PayloadLen::Fixed(28),
        REJECT => PayloadLen::Fixed(0),
        MU_STATS => PayloadLen::Fixed(MU_STATS_RECORD * leaves_for(op, expected_leaves)?),
        MU_VALUES => PayloadLen::Fixed(MU_VALUES_RECORD * leaves_for(op, expected_leaves)?),
        RSS_PARTIAL => PayloadLen::Fixed(8),
        HELLO | SHARD_META | SUMMARY | SETUP | ITER_BEGIN | FOREST_HASH | SHUTDOWN | FAULT => {
            PayloadLen::Prefixed
        }
        other => return Err(ProtocolError::UnknownOpcode(other)),
    })
}

fn leaves_for(op: u8, expected: Option<usize>) -> Result<usize, ProtocolError> {
    expected.ok_or(ProtocolError::Unexpected {
        expected: "a message with known length",
        found: op,
    })
}

fn count(n: u64) -> Result<u32, ProtocolError> {
    u32::try_from(n).map_err(|_| ProtocolError::CountOverflow(n))
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn ranges(&mut self, r: &[(f64, f64)]) {
        self.u32(r.len() as u32);
        for &(lo, hi) in r {
            self.f64(lo);
            self.f64(hi);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8], ProtocolError> {
        if self.buf.len() - self.pos < k {
            return Err(ProtocolError::Malformed("body too short".into()));
        }
        let s = &self.buf[self.pos..self.pos + k];
        self.pos += k;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, ProtocolError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, ProtocolError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, ProtocolError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, ProtocolError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self, unit: usize) -> Result<usize, ProtocolError> {
        let k = self.u32()? as usize;
        if k.saturating_mul(unit) > self.buf.len() - self.pos {
            return Err(ProtocolError::Malformed("declared count exceeds body".into()));
        }
        Ok(k)
    }
    fn str(&mut self) -> Result<String, ProtocolError> {
        let k = self.len(1)?;
        String::from_utf8(self.take(k)?.to_vec()).map_err(|_| ProtocolError::Malformed("invalid utf-8".into()))
    }
    fn ranges(&mut self) -> Result<Vec<(f64, f64)>, ProtocolError> {
        let k = self.len(16)?;
        (0..k).map(|_| Ok((self.f64()?, self.f64()?))).collect()
    }
    fn finish(&self) -> Result<(), ProtocolError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(ProtocolError::Malformed("trailing bytes".into()))
        }
    }
}

impl Message {
    pub fn opcode(&self) -> u8 {
        use opcode::*;
        match self {
            Message::BirthProposal { .. } => BIRTH_PROPOSAL,
            Message::DeathProposal { .. } => DEATH_PROPOSAL,
            Message::MoveStats(_) => MOVE_STATS,
            Message::BirthAccept { .. } => BIRTH_ACCEPT,
            Message::DeathAccept { .. } => DEATH_ACCEPT,
            Message::Reject => REJECT,
            Message::MuStats(_) => MU_STATS,
            Message::MuValues(_) => MU_VALUES,
            Message::RssPartial(_) => RSS_PARTIAL,
            Message::Hello { .. } => HELLO,
            Message::ShardMeta { .. } => SHARD_META,
            Message::Summary(_) => SUMMARY,
            Message::Setup(_) => SETUP,
            Message::IterBegin { .. } => ITER_BEGIN,
            Message::ForestHash(_) => FOREST_HASH,
            Message::Shutdown => SHUTDOWN,
            Message::Fault(_) => FAULT,
        }
    }

    /// Short name for diagnostics and byte ledgers.
    pub fn name(op: u8) -> &'static str {
        use opcode::*;
        match op {
            BIRTH_PROPOSAL => "BIRTH_PROPOSAL",
            DEATH_PROPOSAL => "DEATH_PROPOSAL",
            MOVE_STATS => "MOVE_STATS",
            BIRTH_ACCEPT => "BIRTH_ACCEPT",
            DEATH_ACCEPT => "DEATH_ACCEPT",
            REJECT => "REJECT",
            MU_STATS => "MU_STATS",
            MU_VALUES => "MU_VALUES",
            RSS_PARTIAL => "RSS_PARTIAL",
            HELLO => "HELLO",
            SHARD_META => "SHARD_META",
            SUMMARY => "SUMMARY",
            SETUP => "SETUP",
            ITER_BEGIN => "ITER_BEGIN",
            FOREST_HASH => "FOREST_HASH",
            SHUTDOWN => "SHUTDOWN",
            FAULT => "FAULT",
            _ => "UNKNOWN",
        }
    }
}

/// Serializes `msg` to opcode + payload (with length prefix for control
/// messages).
pub fn encode(msg: &Message) -> Result<Vec<u8>, ProtocolError> {
    let mut w = Writer(Vec::with_capacity(32));
    w.u8(msg.opcode());
    match msg {
        Message::BirthProposal { node, var, cut } => {
            w.u32(*node);
            w.u32(*var);
            w.u32(*cut);
        }
        Message::DeathProposal { left, right } => {
            w.u32(*left);
            w.u32(*right);
        }
        Message::MoveStats(s) => {
            w.u32(count(s.n_left)?);
            w.u32(count(s.n_right)?);
            w.f64(s.sum_left);
            w.f64(s.sum_right);
        }
        Message::BirthAccept { node, var, cut, mu_left, mu_right } => {
            w.u32(*node);
            w.u32(*var);
            w.u32(*cut);
            w.f64(*mu_left);
            w.f64(*mu_right);
        }
        Message::DeathAccept { node, mu } => {
            w.u32(*node);
            w.f64(*mu);
            w.0.extend_from_slice(&[0u8; 16]);
        }
        Message::Reject | Message::Shutdown => {}
        Message::MuStats(recs) => {
            for r in recs {
                w.u32(count(r.n)?);
                w.f64(r.sum);
                w.f64(r.sumsq);
            }
        }
        Message::MuValues(v) => v.iter().for_each(|&x| w.f64(x)),
        Message::RssPartial(x) => w.f64(*x),
        _ => {}
    }
    if let PayloadLen::Prefixed = payload_len(msg.opcode(), Some(0))? {
        let body = encode_control(msg);
        w.u32(body.len() as u32);
        w.0.extend_from_slice(&body);
    }
    Ok(w.0)
}

/// Encodes MU_STATS checking the record count against the tree.
pub fn encode_mu_stats(recs: &[SuffStats], leaves: usize) -> Result<Vec<u8>, ProtocolError> {
    if recs.len() != leaves {
        return Err(ProtocolError::RecordCount {
            expected: leaves,
            found: recs.len(),
        });
    }
    encode(&Message::MuStats(recs.to_vec()))
}

fn encode_control(msg: &Message) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    match msg {
        Message::Hello { version, rank, row_start, row_count } => {
            w.u32(*version);
            w.u32(*rank);
            w.u64(*row_start);
            w.u32(*row_count);
        }
        Message::ShardMeta { n_total, blocks } => {
            w.u64(*n_total);
            w.u32(*blocks);
        }
        Message::Summary(s) => {
            w.u32(s.names.len() as u32);
            s.names.iter().for_each(|n| w.str(n));
            w.u32(s.blocks.len() as u32);
            for b in &s.blocks {
                w.u64(b.n);
                w.f64(b.sum);
                w.f64(b.sumsq);
            }
            w.f64(s.y_min);
            w.f64(s.y_max);
            w.ranges(&s.col_ranges);
        }
        Message::Setup(s) => {
            w.u32(s.m);
            w.u32(s.numcut);
            w.f64(s.center);
            w.f64(s.range);
            w.ranges(&s.col_ranges);
        }
        Message::IterBegin { iteration, phase } => {
            w.u32(*iteration);
            w.u8(*phase as u8);
        }
        Message::ForestHash(h) => w.u64(*h),
        Message::Fault(text) => w.0.extend_from_slice(text.as_bytes()),
        _ => {}
    }
    w.0
}

/// Decodes a whole message. MU_* record counts are inferred from the
/// length; use [`decode_with`] to check them against a tree.
pub fn decode(bytes: &[u8]) -> Result<Message, ProtocolError> {
    let (&op, payload) = bytes.split_first().ok_or(ProtocolError::Empty)?;
    let leaves = match op {
        opcode::MU_STATS if payload.len() % MU_STATS_RECORD == 0 => Some(payload.len() / MU_STATS_RECORD),
        opcode::MU_VALUES if payload.len() % MU_VALUES_RECORD == 0 => Some(payload.len() / MU_VALUES_RECORD),
        opcode::MU_STATS | opcode::MU_VALUES => {
            return Err(ProtocolError::LengthMismatch {
                opcode: op,
                expected: payload.len() / 8 * 8,
                found: payload.len(),
            })
        }
        _ => None,
    };
    decode_with(bytes, leaves)
}

/// Decodes a whole message whose MU_* record count must be
/// `expected_leaves`.
pub fn decode_with(bytes: &[u8], expected_leaves: Option<usize>) -> Result<Message, ProtocolError> {
    let (&op, payload) = bytes.split_first().ok_or(ProtocolError::Empty)?;
    let expected = match payload_len(op, expected_leaves)? {
        PayloadLen::Fixed(k) => k,
        PayloadLen::Prefixed => {
            if payload.len() < 4 {
                return Err(ProtocolError::LengthMismatch {
                    opcode: op,
                    expected: 4,
                    found: payload.len(),
                });
            }
            4 + u32::from_le_bytes(payload[..4].try_into().unwrap()) as usize
        }
    };
    if payload.len() != expected {
        if matches!(op, opcode::MU_STATS | opcode::MU_VALUES) {
            let unit = if op == opcode::MU_STATS { MU_STATS_RECORD } else { MU_VALUES_RECORD };
            if payload.len() % unit == 0 {
                return Err(ProtocolError::RecordCount {
                    expected: expected / unit,
                    found: payload.len() / unit,
                });
            }
        }
        return Err(ProtocolError::LengthMismatch {
            opcode: op,
            expected,
            found: payload.len(),
        });
    }
    let mut r = Reader { buf: payload, pos: 0 };
    use opcode::*;
    let msg = match op {
        BIRTH_PROPOSAL => Message::BirthProposal {
            node: r.u32()?,
            var: r.u32()?,
            cut: r.u32()?,
        },
        DEATH_PROPOSAL => Message::DeathProposal {
            left: r.u32()?,
            right: r.u32()?,
        },
        MOVE_STATS => Message::MoveStats(MoveStats {
            n_left: r.u32()? as u64,
            n_right: r.u32()? as u64,
            sum_left: r.f64()?,
            sum_right: r.f64()?,
        }),
        BIRTH_ACCEPT => Message::BirthAccept {
            node: r.u32()?,
            var: r.u32()?,
            cut: r.u32()?,
            mu_left: r.f64()?,
            mu_right: r.f64()?,
        },
        DEATH_ACCEPT => {
            let node = r.u32()?;
            let mu = r.f64()?;
            if r.take(16)?.iter().any(|&b| b != 0) {
                return Err(ProtocolError::BadPadding);
            }
            Message::DeathAccept { node, mu }
        }
        REJECT => Message::Reject,
        MU_STATS => Message::MuStats(
            (0..payload.len() / MU_STATS_RECORD)
                .map(|_| {
                    Ok(SuffStats {
                        n: r.u32()? as u64,
                        sum: r.f64()?,
                        sumsq: r.f64()?,
                    })
                })
                .collect::<Result<_, ProtocolError>>()?,
        ),
        MU_VALUES => Message::MuValues(
            (0..payload.len() / MU_VALUES_RECORD)
                .map(|_| r.f64())
                .collect::<Result<_, _>>()?,
        ),
        RSS_PARTIAL => Message::RssPartial(r.f64()?),
        _ => {
            r.u32()?;
            decode_control(op, &mut r)?
        }
    };
    r.finish()?;
    Ok(msg)
}

fn decode_control(op: u8, r: &mut Reader<'_>) -> Result<Message, ProtocolError> {
    use opcode::*;
    Ok(match op {
        HELLO => Message::Hello {
            version: r.u32()?,
            rank: r.u32()?,
            row_start: r.u64()?,
            row_count: r.u32()?,
        },
        SHARD_META => Message::ShardMeta {
            n_total: r.u64()?,
            blocks: r.u32()?,
        },
        SUMMARY => {
            let k = r.len(4)?;
            let names = (0..k).map(|_| r.str()).collect::<Result<_, _>>()?;
            let k = r.len(24)?;
            let blocks = (0..k)
                .map(|_| {
                    Ok(SuffStats {
                        n: r.u64()?,
                        sum: r.f64()?,
                        sumsq: r.f64()?,
                    })
                })
                .collect::<Result<_, ProtocolError>>()?;
            Message::Summary(DataSummary {
                names,
                blocks,
                y_min: r.f64()?,
                y_max: r.f64()?,
                col_ranges: r.ranges()?,
            })
        }
        SETUP => Message::Setup(ChainSetup {
            m: r.u32()?,
            numcut: r.u32()?,
            center: r.f64()?,
            range: r.f64()?,
            col_ranges: r.ranges()?,
        }),
        ITER_BEGIN => {
            let iteration = r.u32()?;
            let phase = match r.u8()? {
                0 => Phase::Trees,
                1 => Phase::Sigma,
                2 => Phase::Verify,
                x => return Err(ProtocolError::Malformed(format!("unknown phase {x}"))),
            };
            Message::IterBegin { iteration, phase }
        }
        FOREST_HASH => Message::ForestHash(r.u64()?),
        SHUTDOWN => Message::Shutdown,
        FAULT => {
            let rest = r.take(r.buf.len() - r.pos)?;
            let text = std::str::from_utf8(rest).map_err(|_| ProtocolError::Malformed("invalid utf-8".into()))?;
            Message::Fault(text.to_owned())
        }
        other => return Err(ProtocolError::UnknownOpcode(other)),
    })
}

/// Payload bytes (opcode excluded) exchanged between the master and all
/// `p` workers in one iteration, one partial per worker. `trace` holds one
/// entry per tree with the leaf count after the move.
pub fn iteration_byte_count(trace: &[TreeTrace], p: usize) -> u64 {
    let per_worker: u64 = trace
        .iter()
        .map(|t| {
            let b = t.leaves as u64;
            let structural = match t.kind {
                None => 0,
                Some(kind) => {
                    let proposal = match kind {
                        MoveKind::Birth => 12,
                        MoveKind::Death => 8,
                    };
                    proposal + 24 + if t.accepted { 28 } else { 0 }
                }
            };
            structural + 20 * b + 8 * b
        })
        .sum::<u64>()
        + 8;
    per_worker * p as u64
}
