//! Reliable revoke broadcast.
//!
//! The revoker floods a binomial tree over the group, rooted at itself. A
//! rank forwards each tree at most once; a forwarder that finds a child dead
//! (known in advance or through a link error) sends to that child's children
//! instead. The message carries the group, so a rank that has not finished
//! creating the communicator can still relay it.

use std::rc::Rc;

use super::ContextId;
use crate::collectives::topology;
use crate::node::Forward;
use crate::simnet::types::TagClass;
use crate::simnet::world::World;
use crate::simnet::{RankId, SimMessage, Tag};
use crate::wire::{Decoder, Encoder};

pub(crate) fn start(w: &mut World, me: RankId, cid: ContextId) {
    let group = w.nodes[me.index()].comms[&cid].group.clone();
    let origin_idx = group.iter().position(|&g| g == me).expect("member");
    mark(w, me, cid);
    forward(w, me, cid, &group, origin_idx);
}

fn mark(w: &mut World, r: RankId, cid: ContextId) {
    if w.nodes[r.index()].revoked.insert(cid) {
        w.notify(r);
    }
}

fn forward(w: &mut World, from: RankId, cid: ContextId, group: &Rc<[RankId]>, origin_idx: usize) {
    if !w.nodes[from.index()].revoke_forwarded.insert((cid, origin_idx)) {
        return;
    }
    let n = group.len();
    let Some(idx) = group.iter().position(|&g| g == from) else {
        return;
    };
    let rel = (idx + n - origin_idx) % n;
    for c in topology::binomial_children(rel, n) {
        send_to(w, from, cid, group, origin_idx, c);
    }
}

fn send_to(w: &mut World, from: RankId, cid: ContextId, group: &Rc<[RankId]>, origin_idx: usize, child_rel: usize) {
    let n = group.len();
    let child = group[(origin_idx + child_rel) % n];
    if w.knows_failed(from, child) {
        adopt(w, from, cid, group, origin_idx, child_rel);
        return;
    }
    let payload = Encoder::new().u32(cid.0).u32(origin_idx as u32).ranks(group).finish();
    if let Some(id) = w.send_ctl(from, child, Tag::internal(TagClass::Revoke, 0), cid, payload) {
        w.nodes[from.index()].forwards.insert(
            id,
            Forward::Revoke {
                cid,
                group: group.clone(),
                origin_idx,
                child_rel,
            },
        );
    }
}

pub(crate) fn adopt(
    w: &mut World,
    from: RankId,
    cid: ContextId,
    group: &Rc<[RankId]>,
    origin_idx: usize,
    child_rel: usize,
) {
    for c in topology::binomial_children(child_rel, group.len()) {
        send_to(w, from, cid, group, origin_idx, c);
    }
}

pub(crate) fn on_message(w: &mut World, msg: SimMessage) {
    let r = msg.dst;
    let mut d = Decoder::new(msg.payload);
    let cid = ContextId(d.u32());
    let origin_idx = d.u32() as usize;
    let group: Rc<[RankId]> = d.ranks().into();
    mark(w, r, cid);
    forward(w, r, cid, &group, origin_idx);
}
