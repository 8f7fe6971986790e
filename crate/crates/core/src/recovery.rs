//! Communicator repair and buddy checkpoints.
//!
//! Shrink runs in two steps. An agreement over the old group settles the
//! failed set: each member contributes a liveness bit per member, so the AND
//! is the union of everyone's failure knowledge, and the same instance's MAX
//! lane carries each member's lowest free context id. The survivors then
//! loop on a flag agreement until the candidate id is free everywhere. If a
//! survivor dies during that loop, the shrink starts over on the old group.
//! Concurrent allocations at one rank hold reservations on their candidate
//! ids and so never settle on the same one.

use std::collections::BTreeSet;
use std::rc::Rc;

use bytes::Bytes;

use crate::agreement::{self, AgreementKey, Contribution, KIND_AGREE, KIND_SHRINK};
use crate::bits::Bits;
use crate::comm::{classify, CommError, Communicator, ContextId, ErrorClass};
use crate::request::{Request, RequestKind};
use crate::simnet::types::{ChannelKey, TagClass};
use crate::simnet::world::World;
use crate::simnet::{Process, RankId, Tag};

/// Sub-instance counter reserved for the standalone allocation entry point.
const CID_SUB_BASE: u32 = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShrinkPhase {
    FailedSetAgree,
    CidAgree,
    Done,
    Failed,
}

#[derive(Debug, PartialEq, Eq)]
pub(crate) enum SettleError {
    /// A participant failed; the caller decides whether to retry.
    Failure,
    Revoked,
}

fn lowest_free(w: &World, r: RankId, floor: u32, block: u32) -> u32 {
    w.nodes[r.index()]
        .cids
        .lowest_free(floor, block)
        .unwrap_or_else(|| panic!("context id space exhausted at rank {r}"))
}

/// Picks this rank's first candidate block and reserves it for `owner`.
pub(crate) fn propose(w: &mut World, r: RankId, block: u32, owner: u64) -> u32 {
    let c = lowest_free(w, r, 0, block);
    let reserved = w.nodes[r.index()].cids.try_reserve(c, block, owner);
    debug_assert!(reserved);
    c
}

/// Agrees on a candidate that is free at every member, starting from the
/// decided proposal `m`. Instances are numbered from `*sub` onward.
#[allow(clippy::too_many_arguments)]
pub(crate) async fn settle(
    proc: &Process,
    base: AgreementKey,
    sub: &mut u32,
    group: Rc<[RankId]>,
    block: u32,
    owner: u64,
    mut m: u32,
    abort_on: Option<ContextId>,
) -> Result<u32, SettleError> {
    let r = proc.rank();
    loop {
        let (ok, next) = proc.with_world(|w| {
            let t = &mut w.nodes[r.index()].cids;
            t.release(owner);
            let ok = t.try_reserve(m, block, owner);
            (ok, lowest_free(w, r, m + 1, block))
        });
        let key = AgreementKey { sub: *sub, ..base };
        *sub += 1;
        let contrib = Contribution {
            bits: Bits::from_bools(&[ok]),
            max: next as u64,
        };
        let d = match agreement::run(proc, key, group.clone(), contrib, BTreeSet::new(), abort_on).await {
            Ok(d) => d,
            Err(_) => {
                proc.with_world(|w| w.nodes[r.index()].cids.release(owner));
                return Err(SettleError::Revoked);
            }
        };
        if !d.excluded.is_empty() {
            proc.with_world(|w| w.nodes[r.index()].cids.release(owner));
            return Err(SettleError::Failure);
        }
        if d.value.bits.get(0) {
            proc.with_world(|w| w.nodes[r.index()].cids.commit(m, block, owner));
            return Ok(m);
        }
        m = d.value.max as u32;
    }
}

/// Allocates one context id over `comm`'s members: each proposes its lowest
/// free id, the maximum is tried, and a busy answer anywhere moves the floor
/// past it. The id is marked used at every member but no communicator is
/// attached to it.
pub async fn cid_allocate(comm: &Communicator) -> Result<ContextId, CommError> {
    let r = comm.proc.rank();
    let seq = comm.state(|s| {
        s.seq.agree += 1;
        s.seq.agree - 1
    });
    let owner = comm.proc.with_world(|w| w.fresh_id());
    let proposal = comm.proc.with_world(|w| propose(w, r, 1, owner));
    let base = AgreementKey {
        cid: comm.cid,
        kind: KIND_AGREE,
        seq,
        sub: CID_SUB_BASE,
    };
    let contrib = Contribution {
        bits: Bits::ones(1),
        max: proposal as u64,
    };
    let d = agreement::run(&comm.proc, base, comm.group.clone(), contrib, BTreeSet::new(), None)
        .await
        .expect("not abortable");
    if !d.excluded.is_empty() {
        comm.proc.with_world(|w| w.nodes[r.index()].cids.release(owner));
        return Err(CommError::ProcFailed);
    }
    let mut sub = CID_SUB_BASE + 1;
    settle(
        &comm.proc,
        base,
        &mut sub,
        comm.group.clone(),
        1,
        owner,
        d.value.max as u32,
        None,
    )
    .await
    .map(ContextId)
    .map_err(|_| CommError::ProcFailed)
}

/// Marks `cid` as taken at this rank, as if some other library held it.
pub fn occupy_context_id(proc: &Process, cid: ContextId) {
    let r = proc.rank();
    proc.with_world(|w| w.nodes[r.index()].cids.mark_used(cid.0));
}

/// Observable progress of a shrink at one rank.
#[derive(Clone, Debug)]
pub struct ShrinkState {
    pub phase: ShrinkPhase,
    pub agreed_failed: BTreeSet<RankId>,
    pub proposed_cid: Option<ContextId>,
    pub restarts: u32,
}

impl Default for ShrinkState {
    fn default() -> Self {
        Self {
            phase: ShrinkPhase::FailedSetAgree,
            agreed_failed: BTreeSet::new(),
            proposed_cid: None,
            restarts: 0,
        }
    }
}

/// Result of a (non-blocking) shrink.
#[derive(Clone, Debug)]
pub struct ShrinkOutcome {
    pub comm: Communicator,
    /// `ProcFailed` when new failures forced the protocol to restart; the
    /// communicator is valid either way.
    pub class: ErrorClass,
    pub state: ShrinkState,
}

struct ShrinkPost {
    parent: Communicator,
    seq: u64,
}

fn post_shrink(comm: &Communicator) -> ShrinkPost {
    let seq = comm.state(|s| {
        s.seq.shrink += 1;
        s.seq.shrink - 1
    });
    ShrinkPost {
        parent: comm.clone(),
        seq,
    }
}

async fn run_shrink(post: ShrinkPost) -> ShrinkOutcome {
    let proc = post.parent.proc.clone();
    let r = proc.rank();
    let group = post.parent.group.clone();
    let base = AgreementKey {
        cid: post.parent.cid,
        kind: KIND_SHRINK,
        seq: post.seq,
        sub: 0,
    };
    let mut sub = 0u32;
    let mut state = ShrinkState::default();
    loop {
        state.phase = ShrinkPhase::FailedSetAgree;
        let owner = proc.with_world(|w| w.fresh_id());
        let (alive, proposal) = proc.with_world(|w| {
            let alive: Vec<bool> = group.iter().map(|&g| !w.knows_failed(r, g)).collect();
            (Bits::from_bools(&alive), propose(w, r, 1, owner))
        });
        let key = AgreementKey { sub, ..base };
        sub += 1;
        let contrib = Contribution {
            bits: alive,
            max: proposal as u64,
        };
        let d = agreement::run(&proc, key, group.clone(), contrib, BTreeSet::new(), None)
            .await
            .expect("not abortable");
        let failed: BTreeSet<RankId> = group
            .iter()
            .enumerate()
            .filter(|(i, g)| !d.value.bits.get(*i) || d.excluded.contains(g))
            .map(|(_, &g)| g)
            .collect();
        let survivors: Rc<[RankId]> = group.iter().copied().filter(|g| !failed.contains(g)).collect();
        state.agreed_failed = failed;
        state.phase = ShrinkPhase::CidAgree;
        state.proposed_cid = Some(ContextId(d.value.max as u32));
        match settle(
            &proc,
            base,
            &mut sub,
            survivors.clone(),
            1,
            owner,
            d.value.max as u32,
            None,
        )
        .await
        {
            Ok(c) => {
                state.phase = ShrinkPhase::Done;
                state.proposed_cid = Some(ContextId(c));
                let comm = Communicator::register(&proc, ContextId(c), survivors);
                let class = if state.restarts > 0 {
                    ErrorClass::ProcFailed
                } else {
                    ErrorClass::Success
                };
                return ShrinkOutcome { comm, class, state };
            }
            Err(_) => state.restarts += 1,
        }
    }
}

impl Communicator {
    /// Builds a communicator of the survivors. Works on revoked
    /// communicators; every survivor gets the same group and context id.
    pub async fn shrink(&self) -> ShrinkOutcome {
        run_shrink(post_shrink(self)).await
    }

    /// Non-blocking [`Communicator::shrink`].
    pub fn ishrink(&self) -> Request<ShrinkOutcome> {
        let post = post_shrink(self);
        Request::spawn(&self.proc, RequestKind::Ishrink, run_shrink(post))
    }
}

/// Buddy of local rank `i` in a group of `n`.
pub fn buddy_index(i: usize, n: usize) -> usize {
    (i + 1) % n
}

/// Stores a copy of `data` at this rank's buddy and keeps the copy sent by
/// the rank whose buddy this is.
pub async fn buddy_store(comm: &Communicator, data: Bytes) -> Result<(), CommError> {
    let size = data.len() as u64;
    buddy_store_sized(comm, data, size).await
}

/// As [`buddy_store`], charging `size` bytes for the dataset whatever the
/// payload length. Restores charge the same size.
pub async fn buddy_store_sized(comm: &Communicator, data: Bytes, size: u64) -> Result<(), CommError> {
    let n = comm.size();
    let seq = comm.state(|s| {
        s.seq.buddy += 1;
        s.seq.buddy - 1
    });
    let (me, cid) = (comm.proc.rank(), comm.cid);
    let tag = Tag::internal(TagClass::Buddy, seq);
    let to = comm.group[buddy_index(comm.local, n)];
    let from = comm.group[(comm.local + n - 1) % n];
    comm.proc.with_world(|w| {
        let direct = w.knows_failed(me, to);
        classify(w, me, cid, direct).into_result()?;
        w.send(me, to, tag, cid, data, size);
        Ok::<_, CommError>(())
    })?;
    let key = ChannelKey { src: from, tag, cid };
    let m = comm.recv_key(key).await?;
    comm.proc.with_world(|w| {
        w.nodes[me.index()].buddy.insert((cid, from), (m.payload, m.size));
    });
    Ok(())
}

/// The copy of `owner`'s data held here, if any.
pub fn buddy_copy(comm: &Communicator, owner: RankId) -> Option<Bytes> {
    let (me, cid) = (comm.proc.rank(), comm.cid);
    comm.proc
        .with_world(|w| w.nodes[me.index()].buddy.get(&(cid, owner)).map(|c| c.0.clone()))
}

fn buddy_entry(comm: &Communicator, owner: RankId) -> Option<(Bytes, u64)> {
    let (me, cid) = (comm.proc.rank(), comm.cid);
    comm.proc
        .with_world(|w| w.nodes[me.index()].buddy.get(&(cid, owner)).cloned())
}

/// Survivor taking over `failed`'s work: the lowest survivor that neither
/// replaces an earlier failed rank nor is the failed rank's buddy. Failed
/// ranks are assigned in ascending order.
pub fn replacement_for(group: &[RankId], failed: &BTreeSet<RankId>, target: RankId) -> Option<RankId> {
    let n = group.len();
    let mut taken = BTreeSet::new();
    for (i, &f) in group.iter().enumerate() {
        if !failed.contains(&f) {
            continue;
        }
        let buddy = group[buddy_index(i, n)];
        let pick = group
            .iter()
            .copied()
            .find(|g| !failed.contains(g) && !taken.contains(g) && *g != buddy);
        if f == target {
            return pick;
        }
        if let Some(p) = pick {
            taken.insert(p);
        }
    }
    None
}

/// Moves `failed`'s checkpoint from its buddy to `replacement` over a raw
/// point-to-point channel that does not depend on any repaired
/// communicator. The buddy returns `None`, the replacement the data, and
/// other ranks return immediately. Fails at the replacement when the buddy
/// is also dead.
pub async fn buddy_restore(
    comm: &Communicator,
    failed: RankId,
    replacement: RankId,
) -> Result<Option<Bytes>, CommError> {
    let n = comm.size();
    let me = comm.proc.rank();
    let idx = comm
        .group
        .iter()
        .position(|&g| g == failed)
        .expect("failed rank is a member");
    let buddy = comm.group[buddy_index(idx, n)];
    let tag = Tag::internal(TagClass::Restore, failed.0 as u64);
    let cid = comm.cid;
    if me == buddy && me == replacement {
        return Ok(buddy_copy(comm, failed));
    }
    if me == buddy {
        let (data, size) = buddy_entry(comm, failed).ok_or(CommError::ProcFailed)?;
        return comm.proc.with_world(|w| {
            if w.knows_failed(me, replacement) {
                return Err(CommError::ProcFailed);
            }
            w.send(me, replacement, tag, cid, data, size);
            Ok(None)
        });
    }
    if me != replacement {
        return Ok(None);
    }
    let _watch = comm.proc.watch(buddy);
    let key = ChannelKey { src: buddy, tag, cid };
    comm.proc
        .wait_for(|w| {
            if let Some(m) = w.take_message(me, key) {
                return Some(Ok(Some(m.payload)));
            }
            w.knows_failed(me, buddy).then_some(Err(CommError::ProcFailed))
        })
        .await
}
