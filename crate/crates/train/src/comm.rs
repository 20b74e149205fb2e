//! Gradient averaging across learner workers.
//!
//! Rank 0 collects contributions in rank order, reduces them with
//! [`allreduce_mean`] and sends the identical result back, so every worker
//! applies bit-identical updates. Two transports share this contract:
//! in-process channels and length-prefixed frames over TCP.

use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use zsim_core::Real;

use crate::error::{Result, TrainError};

/// Elementwise mean, summed left to right in the given order.
pub fn allreduce_mean<R: Real>(grads: &[&[R]]) -> Result<Vec<R>> {
    let first = grads
        .first()
        .ok_or_else(|| TrainError::Shape("no gradients to reduce".into()))?;
    if let Some(bad) = grads.iter().find(|g| g.len() != first.len()) {
        return Err(TrainError::Shape(format!(
            "gradient of length {} does not match {}",
            bad.len(),
            first.len()
        )));
    }
    let mut out = first.to_vec();
    for g in &grads[1..] {
        for (o, &v) in out.iter_mut().zip(g.iter()) {
            *o += v;
        }
    }
    let inv = R::one() / R::of_usize(grads.len());
    for o in &mut out {
        *o *= inv;
    }
    Ok(out)
}

/// Synchronization among the learners of one experiment.
pub trait Collective: Send {
    fn rank(&self) -> usize;
    fn size(&self) -> usize;
    /// Replaces `grad` with the mean over all workers.
    fn allreduce_mean(&mut self, grad: &mut Vec<f32>) -> Result<()>;
    /// Every worker receives every worker's value, in rank order.
    fn allgather(&mut self, value: u64) -> Result<Vec<u64>>;
    /// Replaces `params` on every worker with rank 0's copy.
    fn broadcast(&mut self, params: &mut Vec<f32>) -> Result<()>;
}

/// A single worker: every collective is the identity.
#[derive(Clone, Copy, Debug, Default)]
pub struct Solo;

impl Collective for Solo {
    fn rank(&self) -> usize {
        0
    }
    fn size(&self) -> usize {
        1
    }
    fn allreduce_mean(&mut self, _: &mut Vec<f32>) -> Result<()> {
        Ok(())
    }
    fn allgather(&mut self, value: u64) -> Result<Vec<u64>> {
        Ok(vec![value])
    }
    fn broadcast(&mut self, _: &mut Vec<f32>) -> Result<()> {
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Msg {
    Floats(Vec<f32>),
    Words(Vec<u64>),
}

/// Root-side protocol shared by both transports.
trait Link {
    fn send(&mut self, peer: usize, msg: Msg) -> Result<()>;
    fn recv(&mut self, peer: usize) -> Result<Msg>;
}

fn floats(m: Msg) -> Result<Vec<f32>> {
    match m {
        Msg::Floats(v) => Ok(v),
        Msg::Words(_) => Err(TrainError::Transport("expected a float payload".into())),
    }
}

fn words(m: Msg) -> Result<Vec<u64>> {
    match m {
        Msg::Words(v) => Ok(v),
        Msg::Floats(_) => Err(TrainError::Transport("expected an integer payload".into())),
    }
}

fn do_allreduce<L: Link>(
    link: &mut L,
    rank: usize,
    size: usize,
    grad: &mut Vec<f32>,
) -> Result<()> {
    if rank == 0 {
        let mut all = vec![std::mem::take(grad)];
        for peer in 1..size {
            all.push(floats(link.recv(peer)?)?);
        }
        let refs: Vec<&[f32]> = all.iter().map(|g| g.as_slice()).collect();
        *grad = allreduce_mean(&refs)?;
        for peer in 1..size {
            link.send(peer, Msg::Floats(grad.clone()))?;
        }
    } else {
        link.send(0, Msg::Floats(std::mem::take(grad)))?;
        *grad = floats(link.recv(0)?)?;
    }
    Ok(())
}

fn do_allgather<L: Link>(link: &mut L, rank: usize, size: usize, value: u64) -> Result<Vec<u64>> {
    if rank == 0 {
        let mut all = vec![value];
        for peer in 1..size {
            let w = words(link.recv(peer)?)?;
            all.push(
                *w.first()
                    .ok_or_else(|| TrainError::Transport("empty gather payload".into()))?,
            );
        }
        for peer in 1..size {
            link.send(peer, Msg::Words(all.clone()))?;
        }
        Ok(all)
    } else {
        link.send(0, Msg::Words(vec![value]))?;
        words(link.recv(0)?)
    }
}

fn do_broadcast<L: Link>(
    link: &mut L,
    rank: usize,
    size: usize,
    params: &mut Vec<f32>,
) -> Result<()> {
    if rank == 0 {
        for peer in 1..size {
            link.send(peer, Msg::Floats(params.clone()))?;
        }
    } else {
        *params = floats(link.recv(0)?)?;
    }
    Ok(())
}

/// In-process worker endpoint.
pub struct ChannelMember {
    rank: usize,
    size: usize,
    timeout: Duration,
    /// On rank 0: one pair per peer (index = peer). Elsewhere: one pair to rank 0.
    tx: Vec<Option<Sender<Msg>>>,
    rx: Vec<Option<Receiver<Msg>>>,
}

impl ChannelMember {
    /// Endpoints for `size` workers, in rank order.
    pub fn group(size: usize, timeout: Duration) -> Vec<ChannelMember> {
        let mut root = ChannelMember {
            rank: 0,
            size,
            timeout,
            tx: (0..size).map(|_| None).collect(),
            rx: (0..size).map(|_| None).collect(),
        };
        let mut members = Vec::with_capacity(size);
        for peer in 1..size {
            let (to_peer, from_root) = channel();
            let (to_root, from_peer) = channel();
            root.tx[peer] = Some(to_peer);
            root.rx[peer] = Some(from_peer);
            members.push(ChannelMember {
                rank: peer,
                size,
                timeout,
                tx: vec![Some(to_root)],
                rx: vec![Some(from_root)],
            });
        }
        members.insert(0, root);
        members
    }

    fn slot(&self, peer: usize) -> usize {
        if self.rank == 0 {
            peer
        } else {
            0
        }
    }
}

impl Link for ChannelMember {
    fn send(&mut self, peer: usize, msg: Msg) -> Result<()> {
        let i = self.slot(peer);
        self.tx[i]
            .as_ref()
            .ok_or_else(|| TrainError::Transport(format!("no channel to {peer}")))?
            .send(msg)
            .map_err(|_| TrainError::Transport(format!("worker {peer} disconnected")))
    }

    fn recv(&mut self, peer: usize) -> Result<Msg> {
        let i = self.slot(peer);
        let rx = self.rx[i]
            .as_ref()
            .ok_or_else(|| TrainError::Transport(format!("no channel from {peer}")))?;
        rx.recv_timeout(self.timeout).map_err(|e| match e {
            RecvTimeoutError::Timeout => TrainError::Timeout(self.timeout),
            RecvTimeoutError::Disconnected => {
                TrainError::Transport(format!("worker {peer} disconnected"))
            }
        })
    }
}

impl Collective for ChannelMember {
    fn rank(&self) -> usize {
        self.rank
    }
    fn size(&self) -> usize {
        self.size
    }
    fn allreduce_mean(&mut self, grad: &mut Vec<f32>) -> Result<()> {
        let (r, s) = (self.rank, self.size);
        do_allreduce(self, r, s, grad)
    }
    fn allgather(&mut self, value: u64) -> Result<Vec<u64>> {
        let (r, s) = (self.rank, self.size);
        do_allgather(self, r, s, value)
    }
    fn broadcast(&mut self, params: &mut Vec<f32>) -> Result<()> {
        let (r, s) = (self.rank, self.size);
        do_broadcast(self, r, s, params)
    }
}

/// Frame types on the socket transport.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum FrameType {
    /// Connection handshake carrying the sender's rank.
    Hello = 0,
    Grad = 1,
    Params = 2,
    Seq = 3,
    /// Integer payloads (agent-step counts).
    Count = 4,
}

impl FrameType {
    fn from_u8(v: u8) -> Result<Self> {
        Ok(match v {
            0 => Self::Hello,
            1 => Self::Grad,
            2 => Self::Params,
            3 => Self::Seq,
            4 => Self::Count,
            _ => return Err(TrainError::Transport(format!("unknown frame type {v}"))),
        })
    }
}

/// `u8 type | u64 length | payload`, little-endian.
pub fn write_frame<W: Write>(w: &mut W, kind: FrameType, payload: &[u8]) -> Result<()> {
    w.write_u8(kind as u8)?;
    w.write_u64::<LE>(payload.len() as u64)?;
    w.write_all(payload)?;
    w.flush()?;
    Ok(())
}

pub fn read_frame<Rd: Read>(r: &mut Rd) -> Result<(FrameType, Vec<u8>)> {
    let kind = FrameType::from_u8(r.read_u8()?)?;
    let len = r.read_u64::<LE>()? as usize;
    let mut buf = Vec::new();
    r.take(len as u64).read_to_end(&mut buf)?;
    if buf.len() != len {
        return Err(TrainError::Transport("truncated frame".into()));
    }
    Ok((kind, buf))
}

pub fn encode_f32s(v: &[f32]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub fn decode_f32s(b: &[u8]) -> Result<Vec<f32>> {
    if b.len() % 4 != 0 {
        return Err(TrainError::Transport(
            "float payload is not a multiple of 4 bytes".into(),
        ));
    }
    Ok(b.chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn encode_u64s(v: &[u64]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn decode_u64s(b: &[u8]) -> Result<Vec<u64>> {
    if b.len() % 8 != 0 {
        return Err(TrainError::Transport(
            "integer payload is not a multiple of 8 bytes".into(),
        ));
    }
    Ok(b.chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

struct Peer {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

/// Socket endpoint. Rank 0 listens; other ranks connect to it.
pub struct TcpMember {
    rank: usize,
    size: usize,
    /// Indexed by peer rank on rank 0; a single entry elsewhere.
    peers: Vec<Option<Peer>>,
}

fn peer_of(stream: TcpStream, timeout: Duration) -> Result<Peer> {
    stream.set_read_timeout(Some(timeout))?;
    stream.set_nodelay(true)?;
    Ok(Peer {
        reader: BufReader::new(stream.try_clone()?),
        writer: BufWriter::new(stream),
    })
}

impl TcpMember {
    /// Rank 0: accepts `size - 1` workers on `listener`.
    pub fn root(listener: TcpListener, size: usize, timeout: Duration) -> Result<Self> {
        let mut peers: Vec<Option<Peer>> = (0..size).map(|_| None).collect();
        for _ in 1..size {
            let (stream, _) = listener.accept()?;
            let mut peer = peer_of(stream, timeout)?;
            let (kind, body) = read_frame(&mut peer.reader)?;
            let rank = decode_u64s(&body)?.first().copied().unwrap_or(0) as usize;
            if kind != FrameType::Hello || rank == 0 || rank >= size || peers[rank].is_some() {
                return Err(TrainError::Transport(format!(
                    "bad handshake from rank {rank}"
                )));
            }
            peers[rank] = Some(peer);
        }
        Ok(Self {
            rank: 0,
            size,
            peers,
        })
    }

    /// Rank `rank > 0`: connects to the root at `addr`.
    pub fn connect<A: ToSocketAddrs>(
        addr: A,
        rank: usize,
        size: usize,
        timeout: Duration,
    ) -> Result<Self> {
        if rank == 0 || rank >= size {
            return Err(TrainError::Config(format!(
                "rank {rank} cannot connect in a group of {size}"
            )));
        }
        let mut peer = peer_of(TcpStream::connect(addr)?, timeout)?;
        write_frame(
            &mut peer.writer,
            FrameType::Hello,
            &encode_u64s(&[rank as u64]),
        )?;
        Ok(Self {
            rank,
            size,
            peers: vec![Some(peer)],
        })
    }

    fn peer(&mut self, rank: usize) -> Result<&mut Peer> {
        let i = if self.rank == 0 { rank } else { 0 };
        self.peers
            .get_mut(i)
            .and_then(|p| p.as_mut())
            .ok_or_else(|| TrainError::Transport(format!("no connection to rank {rank}")))
    }
}

fn io_to_transport(peer: usize) -> impl Fn(TrainError) -> TrainError {
    move |e| match e {
        TrainError::Io(io)
            if matches!(
                io.kind(),
                std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut
            ) =>
        {
            TrainError::Transport(format!("rank {peer} timed out"))
        }
        TrainError::Io(io) => TrainError::Transport(format!("rank {peer}: {io}")),
        e => e,
    }
}

impl Link for TcpMember {
    fn send(&mut self, peer: usize, msg: Msg) -> Result<()> {
        let p = self.peer(peer)?;
        let res = match &msg {
            Msg::Floats(v) => write_frame(&mut p.writer, FrameType::Grad, &encode_f32s(v)),
            Msg::Words(v) => write_frame(&mut p.writer, FrameType::Count, &encode_u64s(v)),
        };
        res.map_err(io_to_transport(peer))
    }

    fn recv(&mut self, peer: usize) -> Result<Msg> {
        let p = self.peer(peer)?;
        let (kind, body) = read_frame(&mut p.reader).map_err(io_to_transport(peer))?;
        match kind {
            FrameType::Grad | FrameType::Params => Ok(Msg::Floats(decode_f32s(&body)?)),
            FrameType::Count => Ok(Msg::Words(decode_u64s(&body)?)),
            k => Err(TrainError::Transport(format!("unexpected {k:?} frame"))),
        }
    }
}

impl Collective for TcpMember {
    fn rank(&self) -> usize {
        self.rank
    }
    fn size(&self) -> usize {
        self.size
    }
    fn allreduce_mean(&mut self, grad: &mut Vec<f32>) -> Result<()> {
        let (r, s) = (self.rank, self.size);
        do_allreduce(self, r, s, grad)
    }
    fn allgather(&mut self, value: u64) -> Result<Vec<u64>> {
        let (r, s) = (self.rank, self.size);
        do_allgather(self, r, s, value)
    }
    fn broadcast(&mut self, params: &mut Vec<f32>) -> Result<()> {
        let (r, s) = (self.rank, self.size);
        if r == 0 {
            for peer in 1..s {
                let p = self.peer(peer)?;
                write_frame(&mut p.writer, FrameType::Params, &encode_f32s(params))
                    .map_err(io_to_transport(peer))?;
            }
            Ok(())
        } else {
            *params = floats(self.recv(0)?)?;
            Ok(())
        }
    }
}
