//! Per-rank protocol state and the callbacks the transport invokes.

use std::collections::{BTreeMap, BTreeSet};
use std::rc::Rc;

use bytes::Bytes;

use crate::agreement::{self, AgreementKey, AgreementState};
use crate::comm::{self, CidTable, CommState, ContextId};
use crate::detector::{self, FailureView, HeartbeatState, Learned};
use crate::simnet::types::TagClass;
use crate::simnet::world::World;
use crate::simnet::{RankId, SimMessage};

/// Tree forward awaiting delivery; on a link error the sender adopts the
/// dead child's subtree.
#[derive(Clone, Debug)]
pub(crate) enum Forward {
    Record {
        origin: RankId,
        failed: RankId,
        child_rel: usize,
    },
    Revoke {
        cid: ContextId,
        group: Rc<[RankId]>,
        origin_idx: usize,
        child_rel: usize,
    },
}

pub(crate) struct Node {
    pub view: FailureView,
    pub hb: HeartbeatState,
    pub disseminated: BTreeSet<(RankId, RankId)>,
    pub forwards: BTreeMap<u64, Forward>,
    pub comms: BTreeMap<ContextId, CommState>,
    pub cids: CidTable,
    pub revoked: BTreeSet<ContextId>,
    pub revoke_forwarded: BTreeSet<(ContextId, usize)>,
    pub agreements: BTreeMap<AgreementKey, AgreementState>,
    /// Buddy copies held here, with the size charged to move them.
    pub buddy: BTreeMap<(ContextId, RankId), (Bytes, u64)>,
    pub world_created: bool,
}

impl Node {
    pub fn new(_rank: RankId, _n: usize) -> Self {
        Self {
            view: FailureView::default(),
            hb: HeartbeatState::new(),
            disseminated: BTreeSet::new(),
            forwards: BTreeMap::new(),
            comms: BTreeMap::new(),
            cids: CidTable::new(),
            revoked: BTreeSet::new(),
            revoke_forwarded: BTreeSet::new(),
            agreements: BTreeMap::new(),
            buddy: BTreeMap::new(),
            world_created: false,
        }
    }
}

pub(crate) fn on_control(world: &mut World, msg: SimMessage) {
    let class = msg.tag.class_byte();
    if class == TagClass::Agreement as u8 {
        agreement::on_message(world, msg);
    } else if class == TagClass::Revoke as u8 {
        comm::revoke::on_message(world, msg);
    } else {
        detector::on_control(world, msg);
    }
}

pub(crate) fn on_failure_learned(world: &mut World, observer: RankId, peer: RankId, via: Learned) {
    if detector::record(world, observer, peer, via) {
        agreement::on_failure(world, observer, peer);
    }
}

pub(crate) fn on_send_failed(world: &mut World, src: RankId, send_id: u64, _dst: RankId) {
    match world.nodes[src.index()].forwards.remove(&send_id) {
        Some(Forward::Record {
            origin,
            failed,
            child_rel,
        }) => detector::adopt_record(world, src, origin, failed, child_rel),
        Some(Forward::Revoke {
            cid,
            group,
            origin_idx,
            child_rel,
        }) => comm::revoke::adopt(world, src, cid, &group, origin_idx, child_rel),
        None => {}
    }
}

pub(crate) fn on_send_delivered(world: &mut World, src: RankId, send_id: u64) {
    world.nodes[src.index()].forwards.remove(&send_id);
}
