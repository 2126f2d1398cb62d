//! Ordered, reliable point-to-point frame channels.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::protocol::{self, decode_with, encode, opcode, Message, PayloadLen};

/// One end of a duplex channel carrying whole encoded messages.
pub trait Transport: Send {
    fn send_frame(&mut self, frame: &[u8]) -> Result<()>;
    /// Next frame. `expected_leaves` sizes MU_* messages on byte streams.
    fn recv_frame(&mut self, expected_leaves: Option<usize>) -> Result<Vec<u8>>;

    fn send(&mut self, msg: &Message) -> Result<()> {
        self.send_frame(&encode(msg)?)
    }

    fn recv(&mut self, expected_leaves: Option<usize>) -> Result<Message> {
        let frame = self.recv_frame(expected_leaves)?;
        Ok(decode_with(&frame, expected_leaves)?)
    }
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn send_frame(&mut self, frame: &[u8]) -> Result<()> {
        (**self).send_frame(frame)
    }
    fn recv_frame(&mut self, expected_leaves: Option<usize>) -> Result<Vec<u8>> {
        (**self).recv_frame(expected_leaves)
    }
}

/// In-process channel end.
pub struct InProcess {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

/// Two connected in-process ends.
pub fn in_process_pair() -> (InProcess, InProcess) {
    let (a_tx, b_rx) = channel();
    let (b_tx, a_rx) = channel();
    (InProcess { tx: a_tx, rx: a_rx }, InProcess { tx: b_tx, rx: b_rx })
}

impl Transport for InProcess {
    fn send_frame(&mut self, frame: &[u8]) -> Result<()> {
        self.tx
            .send(frame.to_vec())
            .map_err(|_| Error::Cluster("peer disconnected".into()))
    }

    fn recv_frame(&mut self, _expected_leaves: Option<usize>) -> Result<Vec<u8>> {
        self.rx.recv().map_err(|_| Error::Cluster("peer disconnected".into()))
    }
}

/// TCP stream end. Frames are delimited by the opcode's payload length.
pub struct Tcp {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl Tcp {
    pub fn new(stream: TcpStream) -> Result<Self> {
        stream.set_nodelay(true)?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
        })
    }

    pub fn connect<A: ToSocketAddrs>(addr: A) -> Result<Self> {
        Self::new(TcpStream::connect(addr)?)
    }
}

/// Accepts `p` worker connections in arrival order.
pub fn accept_workers(listener: &TcpListener, p: usize) -> Result<Vec<Tcp>> {
    (0..p).map(|_| Tcp::new(listener.accept()?.0)).collect()
}

impl Transport for Tcp {
    fn send_frame(&mut self, frame: &[u8]) -> Result<()> {
        self.writer.write_all(frame)?;
        self.writer.flush()?;
        Ok(())
    }

    fn recv_frame(&mut self, expected_leaves: Option<usize>) -> Result<Vec<u8>> {
        let mut op = [0u8; 1];
        self.reader
            .read_exact(&mut op)
            .map_err(|e| Error::Cluster(format!("connection lost: {e}")))?;
        let mut frame = vec![op[0]];
        match protocol::payload_len(op[0], expected_leaves)? {
            PayloadLen::Fixed(k) => {
                frame.resize(1 + k, 0);
                self.reader.read_exact(&mut frame[1..])?;
            }
            PayloadLen::Prefixed => {
                let mut len = [0u8; 4];
                self.reader.read_exact(&mut len)?;
                frame.extend_from_slice(&len);
                let k = u32::from_le_bytes(len) as usize;
                let start = frame.len();
                frame.resize(start + k, 0);
                self.reader.read_exact(&mut frame[start..])?;
            }
        }
        Ok(frame)
    }
}

/// Message count and payload bytes per opcode, both directions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ByteLedger {
    pub sent: BTreeMap<u8, (u64, u64)>,
    pub received: BTreeMap<u8, (u64, u64)>,
}

impl ByteLedger {
    fn record(map: &mut BTreeMap<u8, (u64, u64)>, frame: &[u8]) {
        if let Some((&op, payload)) = frame.split_first() {
            let e = map.entry(op).or_default();
            e.0 += 1;
            e.1 += payload.len() as u64;
        }
    }

    /// Payload bytes of the sampler messages, both directions.
    pub fn sampler_bytes(&self) -> u64 {
        self.sent
            .iter()
            .chain(&self.received)
            .filter(|(&op, _)| op <= opcode::RSS_PARTIAL)
            .map(|(_, &(_, b))| b)
            .sum()
    }

    pub fn clear(&mut self) {
        self.sent.clear();
        self.received.clear();
    }
}

/// Wraps a transport and records every frame in a shared ledger.
pub struct Counting<T> {
    inner: T,
    ledger: Arc<Mutex<ByteLedger>>,
}

impl<T: Transport> Counting<T> {
    pub fn new(inner: T) -> (Self, Arc<Mutex<ByteLedger>>) {
        let ledger = Arc::new(Mutex::new(ByteLedger::default()));
        (
            Self {
                inner,
                ledger: Arc::clone(&ledger),
            },
            ledger,
        )
    }
}

impl<T: Transport> Transport for Counting<T> {
    fn send_frame(&mut self, frame: &[u8]) -> Result<()> {
        ByteLedger::record(&mut self.ledger.lock().unwrap().sent, frame);
        self.inner.send_frame(frame)
    }

    fn recv_frame(&mut self, expected_leaves: Option<usize>) -> Result<Vec<u8>> {
        let frame = self.inner.recv_frame(expected_leaves)?;
        ByteLedger::record(&mut self.ledger.lock().unwrap().received, &frame);
        Ok(frame)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{MoveStats, SuffStats};

    #[test]
    fn in_process_fifo() {
        let (mut a, mut b) = in_process_pair();
        a.send(&Message::Reject).unwrap();
        a.send(&Message::RssPartial(2.5)).unwrap();
        assert_eq!(b.recv(None).unwrap(), Message::Reject);
        assert_eq!(b.recv(None).unwrap(), Message::RssPartial(2.5));
        drop(a);
        assert!(b.recv(None).is_err());
    }

    #[test]
    fn tcp_frames_by_opcode() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let client = std::thread::spawn(move || {
            let mut t = Tcp::connect(addr).unwrap();
            t.send(&Message::MoveStats(MoveStats { n_left: 3, n_right: 4, sum_left: 0.5, sum_right: -1.0 }))
                .unwrap();
            t.send(&Message::MuStats(vec![SuffStats { n: 2, sum: 1.0, sumsq: 0.5 }; 3])).unwrap();
            t.send(&Message::Fault("x".into())).unwrap();
            t.recv(None).unwrap()
        });
        let mut server = accept_workers(&listener, 1).unwrap().pop().unwrap();
        assert!(matches!(server.recv(None).unwrap(), Message::MoveStats(_)));
        assert!(matches!(server.recv(Some(3)).unwrap(), Message::MuStats(v) if v.len() == 3));
        assert_eq!(server.recv(None).unwrap(), Message::Fault("x".into()));
        server.send(&Message::Shutdown).unwrap();
        assert_eq!(client.join().unwrap(), Message::Shutdown);
    }

    #[test]
    fn ledger_counts_payload() {
        let (a, mut b) = in_process_pair();
        let (mut a, ledger) = Counting::new(a);
        a.send(&Message::BirthProposal { node: 1, var: 0, cut: 0 }).unwrap();
        b.send(&Message::MoveStats(MoveStats::default())).unwrap();
        a.recv(None).unwrap();
        a.send(&Message::Shutdown).unwrap();
        let l = ledger.lock().unwrap();
        assert_eq!(l.sampler_bytes(), 36);
        assert_eq!(l.sent[&opcode::BIRTH_PROPOSAL], (1, 12));
    }
}
