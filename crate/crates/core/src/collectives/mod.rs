//! Tree collectives with local or uniform error reporting.
//!
//! In local mode a rank returns as soon as its own part of the tree is done:
//! a broadcast root succeeds once it has forwarded, even if a child died
//! before passing the data on. A rank that fails sends failure markers to
//! the peers waiting on it so that errors travel down (or up) the tree
//! instead of leaving them blocked. In uniform mode every member then runs
//! an agreement on its local success flag and returns the agreed outcome.

pub mod topology;

use std::collections::BTreeSet;

use bytes::{BufMut, Bytes, BytesMut};

use crate::agreement::{self, AgreementKey, Contribution, KIND_COLLECTIVE};
use crate::bits::Bits;
use crate::comm::{classify, CommError, Communicator, ErrorClass, UniformityMode};
use crate::request::{Request, RequestKind};
use crate::simnet::types::{ChannelKey, TagClass};
use crate::simnet::{RankId, Tag};

pub use topology::{build_topology, Topology, TopologyKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CollectiveKind {
    Barrier,
    Bcast,
    Reduce,
    Allreduce,
}

/// Associative and commutative combine operations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ReduceOp {
    /// Wrapping sum over little-endian `i64` lanes.
    Sum,
    /// Maximum over little-endian `i64` lanes.
    Max,
    /// Bytewise AND.
    BitAnd,
}

impl ReduceOp {
    pub fn combine(self, a: &[u8], b: &[u8]) -> Bytes {
        assert_eq!(a.len(), b.len(), "reduce operands differ in length");
        match self {
            ReduceOp::BitAnd => a.iter().zip(b).map(|(x, y)| x & y).collect::<Vec<u8>>().into(),
            ReduceOp::Sum | ReduceOp::Max => {
                assert_eq!(a.len() % 8, 0, "integer reduce needs whole i64 lanes");
                let mut out = BytesMut::with_capacity(a.len());
                for (x, y) in a.chunks_exact(8).zip(b.chunks_exact(8)) {
                    let x = i64::from_le_bytes(x.try_into().unwrap());
                    let y = i64::from_le_bytes(y.try_into().unwrap());
                    let v = if self == ReduceOp::Sum {
                        x.wrapping_add(y)
                    } else {
                        x.max(y)
                    };
                    out.put_i64_le(v);
                }
                out.freeze()
            }
        }
    }
}

/// Arguments of one collective call; must match at every member.
#[derive(Clone, Debug)]
pub struct CollectiveSpec {
    pub kind: CollectiveKind,
    /// Local rank of the root (BCAST and REDUCE only).
    pub root: usize,
    pub op: ReduceOp,
    /// Input buffer: the root's data for BCAST, every member's operand for
    /// the reductions. Ignored for BARRIER.
    pub payload: Bytes,
    /// Bytes charged per data message instead of the payload length.
    pub charge: Option<u64>,
}

impl CollectiveSpec {
    pub fn new(kind: CollectiveKind) -> Self {
        Self {
            kind,
            root: 0,
            op: ReduceOp::Sum,
            payload: Bytes::new(),
            charge: None,
        }
    }

    pub fn root(mut self, root: usize) -> Self {
        self.root = root;
        self
    }

    pub fn op(mut self, op: ReduceOp) -> Self {
        self.op = op;
        self
    }

    pub fn payload(mut self, payload: Bytes) -> Self {
        self.payload = payload;
        self
    }

    pub fn charge(mut self, bytes: u64) -> Self {
        self.charge = Some(bytes);
        self
    }
}

pub fn encode_i64s(v: &[i64]) -> Bytes {
    let mut b = BytesMut::with_capacity(v.len() * 8);
    for x in v {
        b.put_i64_le(*x);
    }
    b.freeze()
}

pub fn decode_i64s(b: &[u8]) -> Vec<i64> {
    b.chunks_exact(8)
        .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

pub(crate) const PHASE_UP: u64 = 0;
pub(crate) const PHASE_DOWN: u64 = 1;

const MARKER: u8 = 0;
const DATA: u8 = 1;

struct Posted {
    seq: u64,
    uniform: bool,
    acked: BTreeSet<RankId>,
    pre: ErrorClass,
}

fn post(comm: &Communicator) -> Posted {
    let (seq, uniform, acked) = comm.state(|s| {
        s.seq.coll += 1;
        (s.seq.coll - 1, s.uniformity == UniformityMode::Uniform, s.acked.clone())
    });
    let (me, cid) = (comm.proc.rank(), comm.cid);
    let pre = comm.proc.with_world(|w| classify(w, me, cid, false));
    Posted {
        seq,
        uniform,
        acked,
        pre,
    }
}

/// Tree messaging for one operation instance on a communicator.
pub(crate) struct Phase<'a> {
    pub comm: &'a Communicator,
    pub class: TagClass,
    pub seq: u64,
    pub charge: Option<u64>,
}

impl Phase<'_> {
    fn tag(&self, phase: u64) -> Tag {
        Tag::internal(self.class, self.seq << 1 | phase)
    }

    fn send(&self, phase: u64, to: RankId, data: Option<&Bytes>) -> Result<(), CommError> {
        let me = self.comm.proc.rank();
        let (payload, size) = match data {
            Some(d) => {
                let mut b = BytesMut::with_capacity(d.len() + 1);
                b.put_u8(DATA);
                b.extend_from_slice(d);
                (b.freeze(), self.charge.unwrap_or(d.len() as u64))
            }
            None => (Bytes::from_static(&[MARKER]), 1),
        };
        let (tag, cid) = (self.tag(phase), self.comm.cid);
        self.comm.proc.with_world(|w| {
            if w.knows_failed(me, to) {
                return Err(CommError::ProcFailed);
            }
            w.send(me, to, tag, cid, payload, size);
            Ok(())
        })
    }

    pub fn markers(&self, phase: u64, to: &[RankId]) {
        for &t in to {
            let _ = self.send(phase, t, None);
        }
    }

    async fn recv(&self, phase: u64, from: RankId) -> Result<Bytes, CommError> {
        let key = ChannelKey {
            src: from,
            tag: self.tag(phase),
            cid: self.comm.cid,
        };
        let m = self.comm.recv_key(key).await?;
        match m.payload.first() {
            Some(&DATA) => Ok(m.payload.slice(1..)),
            _ => Err(CommError::ProcFailed),
        }
    }

    pub fn tree(&self, root: usize) -> (Option<RankId>, Vec<RankId>) {
        let t = build_topology(&self.comm.group, root);
        (t.parent(self.comm.local), t.children(self.comm.local))
    }

    pub async fn bcast(&self, phase: u64, root: usize, data: Option<Bytes>) -> Result<Bytes, CommError> {
        let (parent, children) = self.tree(root);
        let data = match parent {
            None => data.expect("root supplies the data"),
            Some(p) => match self.recv(phase, p).await {
                Ok(d) => d,
                Err(e) => {
                    self.markers(phase, &children);
                    return Err(e);
                }
            },
        };
        let mut failed = false;
        for c in children {
            failed |= self.send(phase, c, Some(&data)).is_err();
        }
        if failed {
            Err(CommError::ProcFailed)
        } else {
            Ok(data)
        }
    }

    /// Returns the reduced value at the root and an empty buffer elsewhere.
    pub async fn reduce(
        &self,
        phase: u64,
        root: usize,
        combine: &dyn Fn(&[u8], &[u8]) -> Bytes,
        mine: Bytes,
    ) -> Result<Bytes, CommError> {
        let (parent, children) = self.tree(root);
        let mut acc = mine;
        for c in children {
            match self.recv(phase, c).await {
                Ok(d) => acc = combine(&acc, &d),
                Err(e) => {
                    if let Some(p) = parent {
                        self.markers(phase, &[p]);
                    }
                    return Err(e);
                }
            }
        }
        match parent {
            None => Ok(acc),
            Some(p) => self.send(phase, p, Some(&acc)).map(|_| Bytes::new()),
        }
    }

    /// Peers this rank owes a message to when it fails before doing its
    /// part.
    pub fn owed(&self, kind: CollectiveKind, root: usize) -> Vec<(u64, RankId)> {
        let up = |r: usize| self.tree(r).0.into_iter().map(|p| (PHASE_UP, p)).collect::<Vec<_>>();
        let down = |r: usize| self.tree(r).1.into_iter().map(|c| (PHASE_DOWN, c)).collect::<Vec<_>>();
        match kind {
            CollectiveKind::Bcast => down(root),
            CollectiveKind::Reduce => up(root),
            CollectiveKind::Allreduce | CollectiveKind::Barrier => {
                let mut v = up(0);
                v.extend(down(0));
                v
            }
        }
    }

    async fn data(&self, spec: &CollectiveSpec) -> Result<Bytes, CommError> {
        match spec.kind {
            CollectiveKind::Bcast => {
                let data = (self.comm.local == spec.root).then(|| spec.payload.clone());
                self.bcast(PHASE_DOWN, spec.root, data).await
            }
            CollectiveKind::Reduce => {
                let op = spec.op;
                self.reduce(PHASE_UP, spec.root, &move |a, b| op.combine(a, b), spec.payload.clone())
                    .await
            }
            CollectiveKind::Allreduce | CollectiveKind::Barrier => {
                let mine = if spec.kind == CollectiveKind::Barrier {
                    Bytes::new()
                } else {
                    spec.payload.clone()
                };
                let op = if spec.kind == CollectiveKind::Barrier {
                    ReduceOp::BitAnd
                } else {
                    spec.op
                };
                let reduced = match self.reduce(PHASE_UP, 0, &move |a, b| op.combine(a, b), mine).await {
                    Ok(v) => v,
                    Err(e) => {
                        let (_, children) = self.tree(0);
                        self.markers(PHASE_DOWN, &children);
                        return Err(e);
                    }
                };
                let root_data = (self.comm.local == 0).then_some(reduced);
                self.bcast(PHASE_DOWN, 0, root_data).await
            }
        }
    }
}

async fn complete(comm: &Communicator, spec: &CollectiveSpec, posted: Posted) -> Result<Bytes, CommError> {
    if posted.pre == ErrorClass::Revoked {
        return Err(CommError::Revoked);
    }
    let phase = Phase {
        comm,
        class: TagClass::Collective,
        seq: posted.seq,
        charge: spec.charge,
    };
    let local = if posted.pre == ErrorClass::ProcFailed {
        for (ph, to) in phase.owed(spec.kind, spec.root) {
            phase.markers(ph, &[to]);
        }
        Err(CommError::ProcFailed)
    } else {
        phase.data(spec).await
    };
    if !posted.uniform || local == Err(CommError::Revoked) {
        return local;
    }
    let key = AgreementKey {
        cid: comm.cid,
        kind: KIND_COLLECTIVE,
        seq: posted.seq,
        sub: 0,
    };
    let contrib = Contribution {
        bits: Bits::from_bools(&[local.is_ok()]),
        max: 0,
    };
    let d = agreement::run(
        &comm.proc,
        key,
        comm.group.clone(),
        contrib,
        posted.acked,
        Some(comm.cid),
    )
    .await?;
    if d.value.bits.get(0) && !d.err {
        local
    } else {
        Err(CommError::ProcFailed)
    }
}

fn check_spec(comm: &Communicator, spec: &CollectiveSpec) {
    assert!(
        spec.root < comm.size(),
        "collective root {} outside communicator",
        spec.root
    );
}

/// Runs one collective. Every live member must call it with the same kind,
/// root and operation. Buffers are only meaningful on success.
pub async fn collective(comm: &Communicator, spec: CollectiveSpec) -> Result<Bytes, CommError> {
    check_spec(comm, &spec);
    let posted = post(comm);
    complete(comm, &spec, posted).await
}

/// Non-blocking [`collective`].
pub fn icollective(comm: &Communicator, spec: CollectiveSpec) -> Request<Result<Bytes, CommError>> {
    check_spec(comm, &spec);
    let posted = post(comm);
    let c = comm.clone();
    Request::spawn(&comm.proc, RequestKind::Icollective, async move {
        complete(&c, &spec, posted).await
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduce_ops() {
        let a = encode_i64s(&[1, -5, 7]);
        let b = encode_i64s(&[2, 3, -9]);
        assert_eq!(decode_i64s(&ReduceOp::Sum.combine(&a, &b)), vec![3, -2, -2]);
        assert_eq!(decode_i64s(&ReduceOp::Max.combine(&a, &b)), vec![2, 3, 7]);
        assert_eq!(
            &ReduceOp::BitAnd.combine(&[0b1100, 0xff], &[0b1010, 0x0f])[..],
            &[0b1000, 0x0f]
        );
    }
}
