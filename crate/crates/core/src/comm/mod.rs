//! Communicators and their error semantics.
//!
//! A [`Communicator`] binds an ordered group of ranks to a [`ContextId`].
//! Two per-communicator info keys select how failures are reported:
//! `mpix_error_range` picks which failures make an operation raise
//! (direct peers only, any group member, or any rank in the job) and
//! `mpix_error_uniform` asks collectives to agree on their outcome.

mod cid;
pub(crate) mod derive;
pub(crate) mod revoke;

use std::collections::BTreeSet;
use std::fmt;
use std::rc::Rc;

use bytes::Bytes;
use thiserror::Error;

use crate::simnet::types::ChannelKey;
use crate::simnet::world::World;
use crate::simnet::{Process, RankId, Tag};

pub(crate) use cid::CidTable;
pub use cid::CID_SPACE;

/// Matches messages to their communicator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ContextId(pub u32);

impl fmt::Display for ContextId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Which failures an operation reports.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum ErrorScope {
    /// Only failures of the operation's own peers.
    #[default]
    Local,
    /// Any failed member of the communicator.
    Group,
    /// Any failed rank in the job.
    Universe,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum UniformityMode {
    #[default]
    Local,
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ErrorClass {
    Success,
    ProcFailed,
    Revoked,
}

/// Failed outcome of a communicator operation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Error)]
pub enum CommError {
    #[error("process failure reported")]
    ProcFailed,
    #[error("communicator revoked")]
    Revoked,
}

impl CommError {
    pub fn class(self) -> ErrorClass {
        match self {
            CommError::ProcFailed => ErrorClass::ProcFailed,
            CommError::Revoked => ErrorClass::Revoked,
        }
    }
}

impl ErrorClass {
    pub fn of<T>(r: &Result<T, CommError>) -> ErrorClass {
        match r {
            Ok(_) => ErrorClass::Success,
            Err(e) => e.class(),
        }
    }

    pub(crate) fn into_result(self) -> Result<(), CommError> {
        match self {
            ErrorClass::Success => Ok(()),
            ErrorClass::ProcFailed => Err(CommError::ProcFailed),
            ErrorClass::Revoked => Err(CommError::Revoked),
        }
    }
}

/// Misuse of the communicator API.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum UsageError {
    #[error("unknown info key {0:?}")]
    UnknownInfoKey(String),
    #[error("invalid value {value:?} for info key {key:?}")]
    InvalidInfoValue { key: String, value: String },
    #[error("the world communicator was already created on this rank")]
    WorldAlreadyCreated,
}

pub const INFO_ERROR_RANGE: &str = "mpix_error_range";
pub const INFO_ERROR_UNIFORM: &str = "mpix_error_uniform";

/// Per-operation-kind sequence numbers; bumped when an operation is posted
/// so that concurrent instances never share message tags.
#[derive(Clone, Debug, Default)]
pub(crate) struct OpSeq {
    pub coll: u64,
    pub agree: u64,
    pub derive: u64,
    pub shrink: u64,
    pub buddy: u64,
}

pub(crate) struct CommState {
    pub group: Rc<[RankId]>,
    pub scope: ErrorScope,
    pub uniformity: UniformityMode,
    pub acked: BTreeSet<RankId>,
    pub seq: OpSeq,
}

impl CommState {
    pub fn new(group: Rc<[RankId]>) -> Self {
        Self {
            group,
            scope: ErrorScope::Local,
            uniformity: UniformityMode::Local,
            acked: BTreeSet::new(),
            seq: OpSeq::default(),
        }
    }
}

/// Error classification at rank `r`. `direct` is true when the operation
/// itself cannot complete because a peer it talks to is known failed.
pub(crate) fn classify(w: &mut World, r: RankId, cid: ContextId, direct: bool) -> ErrorClass {
    let node = &w.nodes[r.index()];
    if node.revoked.contains(&cid) {
        return ErrorClass::Revoked;
    }
    let st = &node.comms[&cid];
    let unacked = |p: &RankId| node.view.contains(*p) && !st.acked.contains(p);
    let group_hit = direct || st.group.iter().any(unacked);
    let universe_hit = group_hit || node.view.iter().any(|p| !st.acked.contains(&p));
    let scope = st.scope;
    w.audit.checks += 1;
    if (direct && !group_hit) || (group_hit && !universe_hit) {
        w.audit.violations += 1;
    }
    let hit = match scope {
        ErrorScope::Local => direct,
        ErrorScope::Group => group_hit,
        ErrorScope::Universe => universe_hit,
    };
    if hit {
        ErrorClass::ProcFailed
    } else {
        ErrorClass::Success
    }
}

/// Handle to a communicator at one rank.
#[derive(Clone)]
pub struct Communicator {
    pub(crate) proc: Process,
    pub(crate) cid: ContextId,
    pub(crate) group: Rc<[RankId]>,
    pub(crate) local: usize,
}

impl fmt::Debug for Communicator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Communicator")
            .field("rank", &self.proc.rank())
            .field("cid", &self.cid)
            .field("group", &self.group)
            .finish()
    }
}

impl Communicator {
    /// The communicator spanning every rank, with context id 0.
    pub fn world(proc: &Process) -> Result<Communicator, UsageError> {
        let me = proc.rank();
        let n = proc.job_size();
        proc.with_world(|w| {
            let node = &mut w.nodes[me.index()];
            if node.world_created {
                return Err(UsageError::WorldAlreadyCreated);
            }
            node.world_created = true;
            Ok(())
        })?;
        let group: Rc<[RankId]> = (0..n).map(RankId::from).collect();
        Ok(Self::register(proc, ContextId(0), group))
    }

    /// Installs state for a freshly agreed communicator at this rank.
    pub(crate) fn register(proc: &Process, cid: ContextId, group: Rc<[RankId]>) -> Communicator {
        let me = proc.rank();
        let local = group
            .iter()
            .position(|&g| g == me)
            .expect("registering rank is a member");
        proc.with_world(|w| {
            let node = &mut w.nodes[me.index()];
            node.cids.mark_used(cid.0);
            let prev = node.comms.insert(cid, CommState::new(group.clone()));
            assert!(prev.is_none(), "context id {cid} already live at rank {me}");
        });
        Communicator {
            proc: proc.clone(),
            cid,
            group,
            local,
        }
    }

    pub fn process(&self) -> &Process {
        &self.proc
    }

    pub fn cid(&self) -> ContextId {
        self.cid
    }

    pub fn group(&self) -> &[RankId] {
        &self.group
    }

    pub fn size(&self) -> usize {
        self.group.len()
    }

    pub fn local_rank(&self) -> usize {
        self.local
    }

    /// Global rank of local rank `i`.
    pub fn rank_of(&self, i: usize) -> RankId {
        self.group[i]
    }

    pub fn scope(&self) -> ErrorScope {
        self.state(|s| s.scope)
    }

    pub fn uniformity(&self) -> UniformityMode {
        self.state(|s| s.uniformity)
    }

    pub(crate) fn state<R>(&self, f: impl FnOnce(&mut CommState) -> R) -> R {
        let (me, cid) = (self.proc.rank(), self.cid);
        self.proc
            .with_world(|w| f(w.nodes[me.index()].comms.get_mut(&cid).expect("live communicator")))
    }

    /// Sets an error-reporting info key. Local; applies to operations
    /// posted afterwards.
    pub fn set_info(&self, key: &str, value: &str) -> Result<(), UsageError> {
        let bad = || UsageError::InvalidInfoValue {
            key: key.to_string(),
            value: value.to_string(),
        };
        match key {
            INFO_ERROR_RANGE => {
                let scope = match value {
                    "local" => ErrorScope::Local,
                    "group" => ErrorScope::Group,
                    "universe" => ErrorScope::Universe,
                    _ => return Err(bad()),
                };
                self.state(|s| s.scope = scope);
            }
            INFO_ERROR_UNIFORM => {
                let u = match value {
                    "false" => UniformityMode::Local,
                    "true" => UniformityMode::Uniform,
                    _ => return Err(bad()),
                };
                self.state(|s| s.uniformity = u);
            }
            _ => return Err(UsageError::UnknownInfoKey(key.to_string())),
        }
        Ok(())
    }

    pub fn is_revoked(&self) -> bool {
        let (me, cid) = (self.proc.rank(), self.cid);
        self.proc.with_world(|w| w.nodes[me.index()].revoked.contains(&cid))
    }

    /// Invalidates the communicator at every live member.
    pub fn revoke(&self) {
        let (me, cid) = (self.proc.rank(), self.cid);
        self.proc.with_world(|w| revoke::start(w, me, cid));
    }

    /// Acknowledges every failure currently known at this rank.
    pub fn failure_ack(&self) {
        let me = self.proc.rank();
        let cid = self.cid;
        self.proc.with_world(|w| {
            let node = &mut w.nodes[me.index()];
            let known: Vec<RankId> = node.view.ranks();
            node.comms.get_mut(&cid).expect("live communicator").acked.extend(known);
        });
    }

    /// Known failures within the scope's range.
    pub fn get_failed(&self) -> Vec<RankId> {
        let me = self.proc.rank();
        let scope = self.scope();
        let group = self.group.clone();
        self.proc.with_world(|w| {
            let view = &w.nodes[me.index()].view;
            match scope {
                ErrorScope::Universe => view.ranks(),
                _ => group.iter().copied().filter(|&g| view.contains(g)).collect(),
            }
        })
    }

    /// Eager point-to-point send; returns once the message is on the wire.
    pub fn send(&self, dst: usize, tag: u32, data: Bytes) -> Result<(), CommError> {
        let size = data.len() as u64;
        self.send_sized(dst, tag, data, size)
    }

    /// As [`Communicator::send`], charging `size` bytes to the link model.
    pub fn send_sized(&self, dst: usize, tag: u32, data: Bytes, size: u64) -> Result<(), CommError> {
        let (me, cid, peer) = (self.proc.rank(), self.cid, self.group[dst]);
        self.proc.with_world(|w| {
            let direct = w.knows_failed(me, peer);
            classify(w, me, cid, direct).into_result()?;
            w.send(me, peer, Tag::user(tag), cid, data, size);
            Ok(())
        })
    }

    /// Receives the next message from local rank `src` with `tag`.
    pub async fn recv(&self, src: usize, tag: u32) -> Result<Bytes, CommError> {
        let peer = self.group[src];
        let key = ChannelKey {
            src: peer,
            tag: Tag::user(tag),
            cid: self.cid,
        };
        self.recv_key(key).await.map(|m| m.payload)
    }

    /// Receive on an arbitrary channel of this communicator, classified
    /// under its error rules.
    pub(crate) async fn recv_key(&self, key: ChannelKey) -> Result<crate::simnet::SimMessage, CommError> {
        let me = self.proc.rank();
        let cid = self.cid;
        let _watch = self.proc.watch(key.src);
        self.proc
            .wait_for(|w| {
                let pre = classify(w, me, cid, false);
                if pre != ErrorClass::Success {
                    return Some(Err(pre.into_result().unwrap_err()));
                }
                if let Some(m) = w.take_message(me, key) {
                    return Some(Ok(m));
                }
                if w.knows_failed(me, key.src) {
                    let c = classify(w, me, cid, true);
                    return Some(Err(c.into_result().unwrap_err()));
                }
                None
            })
            .await
    }
}
