//! Failure knowledge: a heartbeat ring for out-of-band detection, local
//! records for in-band link errors, and tree dissemination of both.
//!
//! Every rank keeps a [`FailureView`]. In-band knowledge comes from link
//! errors on traffic the rank itself posted. With the detector enabled, each
//! rank also sends one heartbeat per period to its ring successor and
//! declares its predecessor failed after `timeout` ticks of silence. A rank
//! that detects a failure first-hand broadcasts it over a binomial tree
//! rooted at itself; heartbeats additionally piggyback the sender's whole
//! view, which repairs any tree branch lost to further crashes.

use std::collections::BTreeMap;

use bytes::Bytes;

use crate::collectives::topology;
use crate::comm::ContextId;
use crate::error::SimError;
use crate::node::Forward;
use crate::simnet::types::TagClass;
use crate::simnet::world::{EventKind, World};
use crate::simnet::{RankId, SimMessage, Tag, VirtualTime};
use crate::wire::{Decoder, Encoder};

/// Heartbeat ring parameters, in ticks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeartbeatConfig {
    pub enabled: bool,
    pub period: u64,
    pub timeout: u64,
}

impl HeartbeatConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn enabled(period: u64, timeout: u64) -> Self {
        Self {
            enabled: true,
            period,
            timeout,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.enabled && !(self.timeout >= self.period && self.period >= 1) {
            return Err(SimError::InvalidConfig(format!(
                "detector needs timeout >= period >= 1 (period={}, timeout={})",
                self.period, self.timeout
            )));
        }
        Ok(())
    }
}

impl Default for HeartbeatConfig {
    fn default() -> Self {
        Self::enabled(5000, 15000)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Pathway {
    InBand,
    OutOfBand,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FailureRecord {
    pub rank: RankId,
    pub detect_time: VirtualTime,
    pub pathway: Pathway,
}

/// How a rank came to know about a failure.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Learned {
    /// Link error on the rank's own traffic.
    InBand,
    /// Heartbeat timeout on the ring predecessor.
    Heartbeat,
    /// Relayed by another rank.
    Remote,
}

impl Learned {
    fn pathway(self) -> Pathway {
        match self {
            Learned::InBand => Pathway::InBand,
            Learned::Heartbeat | Learned::Remote => Pathway::OutOfBand,
        }
    }

    /// First-hand knowledge is broadcast; relayed knowledge is not.
    fn originates(self) -> bool {
        !matches!(self, Learned::Remote)
    }
}

/// Monotone per-observer set of failure records.
#[derive(Clone, Debug, Default)]
pub struct FailureView {
    records: BTreeMap<RankId, FailureRecord>,
}

impl FailureView {
    pub fn contains(&self, r: RankId) -> bool {
        self.records.contains_key(&r)
    }

    pub fn ranks(&self) -> Vec<RankId> {
        self.records.keys().copied().collect()
    }

    pub fn records(&self) -> Vec<FailureRecord> {
        self.records.values().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub(crate) fn iter(&self) -> impl Iterator<Item = RankId> + '_ {
        self.records.keys().copied()
    }

    /// Idempotent; the first record for a rank wins.
    pub(crate) fn insert(&mut self, rec: FailureRecord) -> bool {
        if self.records.contains_key(&rec.rank) {
            return false;
        }
        self.records.insert(rec.rank, rec);
        true
    }
}

#[derive(Clone, Debug)]
pub(crate) struct HeartbeatState {
    pred: Option<RankId>,
    last_heard: VirtualTime,
}

impl HeartbeatState {
    pub fn new() -> Self {
        Self {
            pred: None,
            last_heard: VirtualTime::ZERO,
        }
    }
}

fn ring_neighbor(world: &World, r: RankId, step_back: bool) -> Option<RankId> {
    let n = world.size();
    (1..n)
        .map(|d| {
            let i = if step_back {
                (r.index() + n - d) % n
            } else {
                (r.index() + d) % n
            };
            RankId::from(i)
        })
        .find(|&p| !world.knows_failed(r, p))
}

pub(crate) fn on_heartbeat_tick(world: &mut World, r: RankId) {
    let cfg = world.detector;
    if let Some(succ) = ring_neighbor(world, r, false) {
        let known = world.nodes[r.index()].view.ranks();
        let payload = Encoder::new().ranks(&known).finish();
        world.send_ctl(r, succ, Tag::internal(TagClass::Heartbeat, 0), ContextId(0), payload);
    }
    let pred = ring_neighbor(world, r, true);
    let now = world.now;
    let hb = &mut world.nodes[r.index()].hb;
    if hb.pred != pred {
        hb.pred = pred;
        hb.last_heard = now;
    } else if let Some(p) = pred {
        // Perfect accuracy: silence from a live predecessor is never a
        // failure, it only means the predecessor routes around someone.
        if now.since(hb.last_heard) >= cfg.timeout && !world.is_alive(p) {
            world.learn_failure(r, p, Learned::Heartbeat);
        }
    }
    world.schedule(now.after(cfg.period), EventKind::Heartbeat(r), true);
}

fn on_heartbeat(world: &mut World, msg: SimMessage) {
    let r = msg.dst;
    let now = world.now;
    let hb = &mut world.nodes[r.index()].hb;
    if hb.pred == Some(msg.src) {
        hb.last_heard = now;
    }
    for f in Decoder::new(msg.payload).ranks() {
        if f != r && !world.knows_failed(r, f) {
            world.learn_failure(r, f, Learned::Remote);
        }
    }
}

/// Records a failure at `observer` and starts dissemination if the
/// knowledge is first-hand and the detector runs.
pub(crate) fn record(world: &mut World, observer: RankId, peer: RankId, via: Learned) -> bool {
    let rec = FailureRecord {
        rank: peer,
        detect_time: world.now,
        pathway: via.pathway(),
    };
    if !world.nodes[observer.index()].view.insert(rec) {
        return false;
    }
    if world.detector.enabled && via.originates() {
        forward_record(world, observer, observer, peer);
    }
    true
}

fn record_payload(origin: RankId, failed: RankId) -> Bytes {
    Encoder::new().u32(origin.0).u32(failed.0).finish()
}

/// Sends the record to `from`'s children in the tree rooted at `origin`.
fn forward_record(world: &mut World, from: RankId, origin: RankId, failed: RankId) {
    if !world.nodes[from.index()].disseminated.insert((origin, failed)) {
        return;
    }
    let n = world.size();
    let rel = (from.index() + n - origin.index()) % n;
    for c in topology::binomial_children(rel, n) {
        send_record(world, from, origin, failed, c);
    }
}

fn send_record(world: &mut World, from: RankId, origin: RankId, failed: RankId, child_rel: usize) {
    let n = world.size();
    let child = RankId::from((origin.index() + child_rel) % n);
    if child == failed || world.knows_failed(from, child) {
        // Adopt the dead child's subtree.
        for c in topology::binomial_children(child_rel, n) {
            send_record(world, from, origin, failed, c);
        }
        return;
    }
    let tag = Tag::internal(TagClass::FailureRecord, 0);
    if let Some(id) = world.send_ctl(from, child, tag, ContextId(0), record_payload(origin, failed)) {
        world.nodes[from.index()].forwards.insert(
            id,
            Forward::Record {
                origin,
                failed,
                child_rel,
            },
        );
    }
}

fn on_record(world: &mut World, msg: SimMessage) {
    let r = msg.dst;
    let mut d = Decoder::new(msg.payload);
    let origin = RankId(d.u32());
    let failed = RankId(d.u32());
    if failed == r {
        return;
    }
    world.learn_failure(r, failed, Learned::Remote);
    forward_record(world, r, origin, failed);
}

pub(crate) fn adopt_record(world: &mut World, from: RankId, origin: RankId, failed: RankId, child_rel: usize) {
    let n = world.size();
    for c in topology::binomial_children(child_rel, n) {
        send_record(world, from, origin, failed, c);
    }
}

pub(crate) fn on_control(world: &mut World, msg: SimMessage) {
    if msg.tag.class_byte() == TagClass::Heartbeat as u8 {
        on_heartbeat(world, msg);
    } else {
        on_record(world, msg);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(HeartbeatConfig::default().validate().is_ok());
        assert!(HeartbeatConfig::disabled().validate().is_ok());
        assert!(HeartbeatConfig::enabled(10, 5).validate().is_err());
        assert!(HeartbeatConfig::enabled(0, 0).validate().is_err());
        assert_eq!(
            HeartbeatConfig::default().timeout,
            3 * HeartbeatConfig::default().period
        );
    }

    #[test]
    fn view_insert_is_idempotent() {
        let mut v = FailureView::default();
        let rec = FailureRecord {
            rank: RankId(3),
            detect_time: VirtualTime(5),
            pathway: Pathway::InBand,
        };
        assert!(v.insert(rec));
        assert!(!v.insert(FailureRecord {
            detect_time: VirtualTime(9),
            ..rec
        }));
        assert_eq!(v.records(), vec![rec]);
    }
}
