//! Fault-tolerant agreement on an AND of bit flags (plus a MAX lane).
//!
//! Each instance runs over a group `G`. Every participant keeps an excluded
//! set `E` of members it knows failed, and the live members `G \ E` form a
//! binomial tree rooted at the lowest of them. Contributions are reduced up
//! the tree; the root decides and sends the decision to every live member
//! in a single step, itself included, so all local completions coincide.
//!
//! When `E` grows, the participant broadcasts the new set, and the round
//! restarts over the smaller tree. Messages carry their sender's `E`.
//! Smaller sets are stale and ignored. A larger set is adopted. Two
//! incomparable sets are merged and the union is broadcast. A participant
//! that has decided answers any further round traffic with its decision.
//!
//! Safety rests on the transport: failure knowledge about `p` never
//! overtakes messages `p` already sent, so any participant that could start
//! a round excluding a crashed root has first received that root's
//! decision.

use std::collections::{BTreeMap, BTreeSet};
use std::rc::Rc;

use bytes::Bytes;

use crate::bits::Bits;
use crate::collectives::topology;
use crate::comm::{CommError, Communicator, ContextId, ErrorClass};
use crate::request::{Request, RequestKind};
use crate::simnet::types::TagClass;
use crate::simnet::world::World;
use crate::simnet::{Process, RankId, SimMessage, Tag};
use crate::wire::{Decoder, Encoder};

pub(crate) const KIND_AGREE: u8 = 0;
pub(crate) const KIND_COLLECTIVE: u8 = 1;
pub(crate) const KIND_DERIVE: u8 = 2;
pub(crate) const KIND_SHRINK: u8 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub(crate) struct AgreementKey {
    pub cid: ContextId,
    pub kind: u8,
    pub seq: u64,
    pub sub: u32,
}

/// One participant's input: AND-combined flags and a MAX-combined word.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Contribution {
    pub bits: Bits,
    pub max: u64,
}

impl Contribution {
    fn combine(&mut self, other: &Contribution) {
        self.bits.and_assign(&other.bits);
        self.max = self.max.max(other.max);
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Decision {
    pub value: Contribution,
    pub excluded: BTreeSet<RankId>,
    /// Some contributor knew of a failure it had not acknowledged.
    pub err: bool,
}

#[derive(Clone, Debug)]
enum Msg {
    Up {
        excluded: BTreeSet<RankId>,
        value: Contribution,
        err: bool,
    },
    Round {
        excluded: BTreeSet<RankId>,
    },
    Down(Decision),
}

const MSG_UP: u8 = 0;
const MSG_ROUND: u8 = 1;
const MSG_DOWN: u8 = 2;

fn ranks_of(set: &BTreeSet<RankId>) -> Vec<RankId> {
    set.iter().copied().collect()
}

fn encode(key: AgreementKey, msg: &Msg) -> Bytes {
    let e = Encoder::new().u32(key.cid.0).u8(key.kind).u64(key.seq).u32(key.sub);
    match msg {
        Msg::Up { excluded, value, err } => e
            .u8(MSG_UP)
            .ranks(&ranks_of(excluded))
            .bits(&value.bits)
            .u64(value.max)
            .u8(*err as u8)
            .finish(),
        Msg::Round { excluded } => e.u8(MSG_ROUND).ranks(&ranks_of(excluded)).finish(),
        Msg::Down(d) => e
            .u8(MSG_DOWN)
            .ranks(&ranks_of(&d.excluded))
            .bits(&d.value.bits)
            .u64(d.value.max)
            .u8(d.err as u8)
            .finish(),
    }
}

fn decode(payload: Bytes) -> (AgreementKey, Msg) {
    let mut d = Decoder::new(payload);
    let key = AgreementKey {
        cid: ContextId(d.u32()),
        kind: d.u8(),
        seq: d.u64(),
        sub: d.u32(),
    };
    let tag = d.u8();
    let excluded: BTreeSet<RankId> = d.ranks().into_iter().collect();
    let msg = match tag {
        MSG_ROUND => Msg::Round { excluded },
        _ => {
            let value = Contribution {
                bits: d.bits(),
                max: d.u64(),
            };
            let err = d.u8() != 0;
            if tag == MSG_UP {
                Msg::Up { excluded, value, err }
            } else {
                Msg::Down(Decision { value, excluded, err })
            }
        }
    };
    (key, msg)
}

struct Joined {
    group: Rc<[RankId]>,
    contrib: Contribution,
    acked: BTreeSet<RankId>,
    excluded: BTreeSet<RankId>,
    gathered: BTreeMap<RankId, (Contribution, bool)>,
    sent_up: bool,
    watching: Vec<RankId>,
}

#[derive(Default)]
pub(crate) struct AgreementState {
    joined: Option<Joined>,
    buffered: Vec<(RankId, Msg)>,
    decision: Option<Decision>,
    released: bool,
}

struct Tree {
    parent: Option<RankId>,
    children: Vec<RankId>,
    live: Vec<RankId>,
}

fn tree(j: &Joined, me: RankId) -> Tree {
    let live: Vec<RankId> = j.group.iter().copied().filter(|g| !j.excluded.contains(g)).collect();
    let idx = live
        .iter()
        .position(|&g| g == me)
        .expect("live participant is in its own tree");
    Tree {
        parent: topology::binomial_parent(idx).map(|p| live[p]),
        children: topology::binomial_children(idx, live.len())
            .into_iter()
            .map(|c| live[c])
            .collect(),
        live,
    }
}

fn send(w: &mut World, from: RankId, to: RankId, key: AgreementKey, msg: &Msg) {
    w.send_ctl(
        from,
        to,
        Tag::internal(TagClass::Agreement, 0),
        key.cid,
        encode(key, msg),
    );
}

fn state(w: &mut World, r: RankId, key: AgreementKey) -> &mut AgreementState {
    w.nodes[r.index()].agreements.entry(key).or_default()
}

/// Points the link-error probes at the current parent and children.
fn rewatch(w: &mut World, r: RankId, key: AgreementKey) {
    let st = state(w, r, key);
    let Some(j) = st.joined.as_mut() else { return };
    let old = std::mem::take(&mut j.watching);
    let new = if st.decision.is_some() {
        Vec::new()
    } else {
        let t = tree(j, r);
        t.parent.into_iter().chain(t.children).collect()
    };
    j.watching = new.clone();
    for p in new {
        w.watch(r, p);
    }
    for p in old {
        w.unwatch(r, p);
    }
}

fn broadcast_round(w: &mut World, r: RankId, key: AgreementKey) {
    let st = state(w, r, key);
    let j = st.joined.as_ref().expect("joined");
    let excluded = j.excluded.clone();
    let targets: Vec<RankId> = j
        .group
        .iter()
        .copied()
        .filter(|g| *g != r && !excluded.contains(g))
        .collect();
    let msg = Msg::Round { excluded };
    for t in targets {
        send(w, r, t, key, &msg);
    }
}

fn reset_round(w: &mut World, r: RankId, key: AgreementKey) {
    let j = state(w, r, key).joined.as_mut().expect("joined");
    j.gathered.clear();
    j.sent_up = false;
    rewatch(w, r, key);
}

/// Folds a received excluded set into ours. Returns whether the sets are
/// now equal.
fn merge(w: &mut World, r: RankId, key: AgreementKey, theirs: &BTreeSet<RankId>) -> bool {
    let j = state(w, r, key).joined.as_mut().expect("joined");
    if theirs.is_subset(&j.excluded) {
        return *theirs == j.excluded;
    }
    let adopted = j.excluded.is_subset(theirs);
    j.excluded.extend(theirs.iter().copied());
    reset_round(w, r, key);
    if !adopted {
        broadcast_round(w, r, key);
    }
    adopted
}

fn decide(w: &mut World, r: RankId, key: AgreementKey, d: Decision) {
    let st = state(w, r, key);
    if st.decision.is_some() {
        debug_assert_eq!(st.decision.as_ref(), Some(&d), "agreement safety");
        return;
    }
    st.decision = Some(d);
    rewatch(w, r, key);
}

fn release(w: &mut World, r: RankId, key: AgreementKey) {
    let st = state(w, r, key);
    if !st.released {
        st.released = true;
        w.notify(r);
    }
}

fn progress(w: &mut World, r: RankId, key: AgreementKey) {
    let st = state(w, r, key);
    if st.decision.is_some() {
        return;
    }
    let Some(j) = st.joined.as_mut() else { return };
    if j.sent_up {
        return;
    }
    let t = tree(j, r);
    if !t.children.iter().all(|c| j.gathered.contains_key(c)) {
        return;
    }
    let mut value = j.contrib.clone();
    let mut err = !j.excluded.is_subset(&j.acked);
    for c in &t.children {
        let (v, e) = &j.gathered[c];
        value.combine(v);
        err |= e;
    }
    j.sent_up = true;
    let excluded = j.excluded.clone();
    match t.parent {
        Some(p) => send(w, r, p, key, &Msg::Up { excluded, value, err }),
        None => {
            let d = Decision { value, excluded, err };
            decide(w, r, key, d.clone());
            let msg = Msg::Down(d);
            // The root's own copy travels the same link so that every
            // member releases at the same instant.
            for to in t.live {
                send(w, r, to, key, &msg);
            }
        }
    }
}

fn handle(w: &mut World, r: RankId, key: AgreementKey, src: RankId, msg: Msg) {
    let st = state(w, r, key);
    if let Some(d) = st.decision.clone() {
        match msg {
            Msg::Down(theirs) => {
                debug_assert_eq!(theirs, d, "agreement safety");
                if src == r {
                    release(w, r, key);
                }
            }
            _ if src != r => send(w, r, src, key, &Msg::Down(d)),
            _ => {}
        }
        return;
    }
    if st.joined.is_none() {
        st.buffered.push((src, msg));
        return;
    }
    match msg {
        Msg::Down(d) => {
            decide(w, r, key, d);
            release(w, r, key);
        }
        Msg::Round { excluded } => {
            merge(w, r, key, &excluded);
            progress(w, r, key);
        }
        Msg::Up { excluded, value, err } => {
            if merge(w, r, key, &excluded) {
                let j = state(w, r, key).joined.as_mut().expect("joined");
                if tree(j, r).children.contains(&src) {
                    j.gathered.insert(src, (value, err));
                }
            }
            progress(w, r, key);
        }
    }
}

pub(crate) fn on_message(w: &mut World, msg: SimMessage) {
    let (key, m) = decode(msg.payload);
    handle(w, msg.dst, key, msg.src, m);
}

pub(crate) fn on_failure(w: &mut World, r: RankId, peer: RankId) {
    let keys: Vec<AgreementKey> = w.nodes[r.index()]
        .agreements
        .iter()
        .filter(|(_, st)| {
            st.decision.is_none()
                && st
                    .joined
                    .as_ref()
                    .is_some_and(|j| j.group.contains(&peer) && !j.excluded.contains(&peer))
        })
        .map(|(k, _)| *k)
        .collect();
    for key in keys {
        state(w, r, key).joined.as_mut().expect("joined").excluded.insert(peer);
        reset_round(w, r, key);
        broadcast_round(w, r, key);
        progress(w, r, key);
    }
}

/// Enters an instance at rank `r`. `acked` holds failures the caller has
/// acknowledged; they do not set the decision's error flag.
pub(crate) fn join(
    w: &mut World,
    r: RankId,
    key: AgreementKey,
    group: Rc<[RankId]>,
    contrib: Contribution,
    acked: BTreeSet<RankId>,
) {
    let excluded: BTreeSet<RankId> = group.iter().copied().filter(|&g| w.knows_failed(r, g)).collect();
    let st = state(w, r, key);
    assert!(st.joined.is_none(), "agreement instance joined twice");
    let announce = !excluded.is_empty();
    st.joined = Some(Joined {
        group,
        contrib,
        acked,
        excluded,
        gathered: BTreeMap::new(),
        sent_up: false,
        watching: Vec::new(),
    });
    let buffered = std::mem::take(&mut st.buffered);
    rewatch(w, r, key);
    if announce {
        broadcast_round(w, r, key);
    }
    for (src, m) in buffered {
        handle(w, r, key, src, m);
    }
    progress(w, r, key);
}

/// Joins and waits for the decision. With `abort_on` set, a revoke of that
/// communicator ends the wait early (the instance itself keeps running).
pub(crate) async fn run(
    proc: &Process,
    key: AgreementKey,
    group: Rc<[RankId]>,
    contrib: Contribution,
    acked: BTreeSet<RankId>,
    abort_on: Option<ContextId>,
) -> Result<Decision, CommError> {
    let r = proc.rank();
    proc.with_world(|w| join(w, r, key, group, contrib, acked));
    wait(proc, key, abort_on).await
}

pub(crate) async fn wait(
    proc: &Process,
    key: AgreementKey,
    abort_on: Option<ContextId>,
) -> Result<Decision, CommError> {
    let r = proc.rank();
    proc.wait_for(|w| {
        let node = &w.nodes[r.index()];
        let st = &node.agreements[&key];
        if st.released {
            return Some(Ok(st.decision.clone().expect("released implies decided")));
        }
        if abort_on.is_some_and(|c| node.revoked.contains(&c)) {
            return Some(Err(CommError::Revoked));
        }
        None
    })
    .await
}

fn post(comm: &Communicator, flags: &Bits) -> AgreementKey {
    let (seq, acked) = comm.state(|s| {
        s.seq.agree += 1;
        (s.seq.agree - 1, s.acked.clone())
    });
    let key = AgreementKey {
        cid: comm.cid,
        kind: KIND_AGREE,
        seq,
        sub: 0,
    };
    let contrib = Contribution {
        bits: flags.clone(),
        max: 0,
    };
    let (r, group) = (comm.proc.rank(), comm.group.clone());
    comm.proc.with_world(|w| join(w, r, key, group, contrib, acked));
    key
}

fn outcome(d: Decision) -> (Bits, ErrorClass) {
    let class = if d.err {
        ErrorClass::ProcFailed
    } else {
        ErrorClass::Success
    };
    (d.value.bits, class)
}

/// Agrees on the AND of `flags` over the communicator's survivors. Runs on
/// revoked communicators too. Every participant that returns gets the same
/// value and the same class; `ProcFailed` means some participant knew of an
/// unacknowledged member failure, and the value is valid either way.
pub async fn agree(comm: &Communicator, flags: &Bits) -> (Bits, ErrorClass) {
    let key = post(comm, flags);
    let d = wait(&comm.proc, key, None).await.expect("agreement ignores revoke");
    outcome(d)
}

/// Non-blocking [`agree`].
pub fn iagree(comm: &Communicator, flags: &Bits) -> Request<(Bits, ErrorClass)> {
    let key = post(comm, flags);
    let proc = comm.proc.clone();
    Request::spawn(&comm.proc, RequestKind::Iagree, async move {
        outcome(wait(&proc, key, None).await.expect("agreement ignores revoke"))
    })
}
