//! Shared simulation state: clock, event queue, processes and transport.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::task::Waker;

use bytes::Bytes;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::trace::{Trace, TraceKind, TraceRecord};
use super::types::{ChannelKey, ProcState};
use super::{LinkModel, ProcessStatus, RankId, SimMessage, Tag, VirtualTime};
use crate::comm::ContextId;
use crate::detector::{HeartbeatConfig, Learned};
use crate::node::{self, Node};

#[derive(Debug)]
pub(crate) enum EventKind {
    Crash(RankId),
    Deliver { msg: SimMessage, send_id: u64 },
    Timer { rank: RankId, timer: u64 },
    LinkProbe { observer: RankId, peer: RankId },
    Heartbeat(RankId),
}

#[derive(Debug)]
struct Scheduled {
    time: VirtualTime,
    // Crashes sort ahead of every other event scheduled for the same tick.
    class: u8,
    seq: u64,
    daemon: bool,
    kind: EventKind,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time, self.class, self.seq).cmp(&(other.time, other.class, other.seq))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SendState {
    Pending,
    Delivered,
    LinkError(RankId),
}

/// Message counters, split by traffic class.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MessageStats {
    pub user: u64,
    pub collective: u64,
    pub agreement: u64,
    pub revoke: u64,
    pub heartbeat: u64,
    pub dissemination: u64,
    pub other: u64,
}

impl MessageStats {
    pub fn total(&self) -> u64 {
        self.user + self.collective + self.agreement + self.revoke + self.heartbeat + self.dissemination + self.other
    }

    fn bump(&mut self, tag: Tag) {
        use super::types::TagClass as C;
        let b = tag.class_byte();
        let slot = if b == C::User as u8 {
            &mut self.user
        } else if b == C::Collective as u8 {
            &mut self.collective
        } else if b == C::Agreement as u8 {
            &mut self.agreement
        } else if b == C::Revoke as u8 {
            &mut self.revoke
        } else if b == C::Heartbeat as u8 {
            &mut self.heartbeat
        } else if b == C::FailureRecord as u8 {
            &mut self.dissemination
        } else {
            &mut self.other
        };
        *slot += 1;
    }
}

pub(crate) struct Proc {
    pub status: ProcessStatus,
    mailbox: BTreeMap<ChannelKey, VecDeque<SimMessage>>,
    waiters: Vec<Waker>,
    pub rng: ChaCha8Rng,
    fired_timers: Vec<u64>,
}

pub(crate) struct World {
    pub now: VirtualTime,
    pub link: LinkModel,
    pub detector: HeartbeatConfig,
    pub procs: Vec<Proc>,
    pub nodes: Vec<Node>,
    pub stats: MessageStats,
    pub trace: Trace,
    queue: BinaryHeap<Reverse<Scheduled>>,
    seq: u64,
    nondaemon_pending: u64,
    pub events_dispatched: u64,
    next_id: u64,
    inflight: BTreeMap<(RankId, RankId), u32>,
    // Latest scheduled delivery per (src, dst, cid, tag) channel.
    channel_tail: BTreeMap<(RankId, RankId, ContextId, Tag), VirtualTime>,
    pending_learn: BTreeMap<(RankId, RankId), Learned>,
    watchers: BTreeMap<(RankId, RankId), u32>,
    sends: BTreeMap<u64, SendState>,
    pub crash_points: BTreeMap<u64, Vec<RankId>>,
    pub audit: ScopeAudit,
}

/// Counts error-classification points and how many of them broke the
/// nesting LOCAL => GROUP => UNIVERSE.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ScopeAudit {
    pub checks: u64,
    pub violations: u64,
}

impl World {
    pub fn new(n: usize, link: LinkModel, seed: u64, detector: HeartbeatConfig, keep_trace: bool) -> Self {
        let procs = (0..n)
            .map(|r| Proc {
                status: ProcessStatus::alive(),
                mailbox: BTreeMap::new(),
                waiters: Vec::new(),
                rng: ChaCha8Rng::seed_from_u64(seed ^ (r as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)),
                fired_timers: Vec::new(),
            })
            .collect();
        let nodes = (0..n).map(|r| Node::new(RankId::from(r), n)).collect();
        Self {
            now: VirtualTime::ZERO,
            link,
            detector,
            procs,
            nodes,
            stats: MessageStats::default(),
            trace: Trace::new(keep_trace),
            queue: BinaryHeap::new(),
            seq: 0,
            nondaemon_pending: 0,
            events_dispatched: 0,
            next_id: 1,
            inflight: BTreeMap::new(),
            channel_tail: BTreeMap::new(),
            pending_learn: BTreeMap::new(),
            watchers: BTreeMap::new(),
            sends: BTreeMap::new(),
            crash_points: BTreeMap::new(),
            audit: ScopeAudit::default(),
        }
    }

    pub fn size(&self) -> usize {
        self.procs.len()
    }

    pub fn is_alive(&self, r: RankId) -> bool {
        self.procs[r.index()].status.state == ProcState::Alive
    }

    pub fn fresh_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    pub fn schedule(&mut self, time: VirtualTime, kind: EventKind, daemon: bool) {
        debug_assert!(time >= self.now, "event scheduled in the past");
        let class = matches!(kind, EventKind::Crash(_)) as u8 ^ 1;
        self.seq += 1;
        if !daemon {
            self.nondaemon_pending += 1;
        }
        self.queue.push(Reverse(Scheduled {
            time,
            class,
            seq: self.seq,
            daemon,
            kind,
        }));
    }

    pub fn nondaemon_pending(&self) -> u64 {
        self.nondaemon_pending
    }

    pub fn pop_event(&mut self) -> Option<(VirtualTime, EventKind)> {
        let Reverse(ev) = self.queue.pop()?;
        if !ev.daemon {
            self.nondaemon_pending -= 1;
        }
        Some((ev.time, ev.kind))
    }

    pub fn record(&mut self, kind: TraceKind, src: RankId, dst: RankId, tag: Tag, cid: ContextId, size: u64) {
        self.trace.push(TraceRecord {
            time: self.now,
            kind,
            src,
            dst,
            tag,
            cid,
            size,
        });
    }

    // ---- transport ----------------------------------------------------

    /// Posts a message. Returns `None` when the sender is not alive.
    pub fn send(
        &mut self,
        src: RankId,
        dst: RankId,
        tag: Tag,
        cid: ContextId,
        payload: Bytes,
        size: u64,
    ) -> Option<u64> {
        if !self.is_alive(src) {
            return None;
        }
        let send_id = self.fresh_id();
        self.record(TraceKind::Send, src, dst, tag, cid, size);
        self.stats.bump(tag);
        *self.inflight.entry((src, dst)).or_default() += 1;
        // A message never overtakes an earlier one on its channel.
        let tail = self
            .channel_tail
            .entry((src, dst, cid, tag))
            .or_insert(VirtualTime::ZERO);
        let at = self.now.after(self.link.delivery_delay(size)).max(*tail);
        *tail = at;
        let daemon = tag.class_byte() == super::types::TagClass::Heartbeat as u8;
        let msg = SimMessage {
            src,
            dst,
            tag,
            cid,
            size,
            payload,
        };
        self.schedule(at, EventKind::Deliver { msg, send_id }, daemon);
        Some(send_id)
    }

    /// Same as [`World::send`], but the payload length is the charged size.
    pub fn send_ctl(&mut self, src: RankId, dst: RankId, tag: Tag, cid: ContextId, payload: Bytes) -> Option<u64> {
        let size = payload.len() as u64;
        self.send(src, dst, tag, cid, payload, size)
    }

    pub fn track_send(&mut self, send_id: u64) {
        self.sends.insert(send_id, SendState::Pending);
    }

    pub fn send_state(&self, send_id: u64) -> Option<SendState> {
        self.sends.get(&send_id).copied()
    }

    pub fn forget_send(&mut self, send_id: u64) {
        self.sends.remove(&send_id);
    }

    fn deliver(&mut self, msg: SimMessage, send_id: u64) {
        let (src, dst) = (msg.src, msg.dst);
        let chan = (src, dst, msg.cid, msg.tag);
        if self.channel_tail.get(&chan).is_some_and(|&t| t <= self.now) {
            self.channel_tail.remove(&chan);
        }
        if let Some(c) = self.inflight.get_mut(&(src, dst)) {
            *c -= 1;
            if *c == 0 {
                self.inflight.remove(&(src, dst));
            }
        }
        if !self.is_alive(dst) {
            if let Some(s) = self.sends.get_mut(&send_id) {
                *s = SendState::LinkError(dst);
            }
            if self.is_alive(src) {
                self.record(TraceKind::LinkErr, src, dst, msg.tag, msg.cid, 0);
                self.learn_failure(src, dst, Learned::InBand);
                node::on_send_failed(self, src, send_id, dst);
                self.notify(src);
            }
        } else {
            self.record(TraceKind::Deliver, src, dst, msg.tag, msg.cid, msg.size);
            if let Some(s) = self.sends.get_mut(&send_id) {
                *s = SendState::Delivered;
            }
            node::on_send_delivered(self, src, send_id);
            if msg.tag.is_control() {
                node::on_control(self, msg);
            } else {
                let key = ChannelKey {
                    src,
                    tag: msg.tag,
                    cid: msg.cid,
                };
                self.procs[dst.index()].mailbox.entry(key).or_default().push_back(msg);
                self.notify(dst);
            }
            if self.is_alive(src) {
                self.notify(src);
            }
        }
        if !self.inflight.contains_key(&(src, dst)) {
            if let Some(via) = self.pending_learn.remove(&(dst, src)) {
                self.apply_learn(dst, src, via);
            }
        }
    }

    /// Removes the oldest queued message on a channel.
    pub fn take_message(&mut self, rank: RankId, key: ChannelKey) -> Option<SimMessage> {
        let mb = &mut self.procs[rank.index()].mailbox;
        let q = mb.get_mut(&key)?;
        let m = q.pop_front();
        if q.is_empty() {
            mb.remove(&key);
        }
        m
    }

    // ---- task wakeups ---------------------------------------------------

    pub fn register_waiter(&mut self, rank: RankId, waker: &Waker) {
        let w = &mut self.procs[rank.index()].waiters;
        if !w.iter().any(|x| x.will_wake(waker)) {
            w.push(waker.clone());
        }
    }

    /// Wakes every task of `rank` so it re-evaluates what it is blocked on.
    pub fn notify(&mut self, rank: RankId) {
        for w in std::mem::take(&mut self.procs[rank.index()].waiters) {
            w.wake();
        }
    }

    pub fn start_timer(&mut self, rank: RankId, ticks: u64) -> u64 {
        let timer = self.fresh_id();
        self.schedule(self.now.after(ticks), EventKind::Timer { rank, timer }, false);
        timer
    }

    pub fn take_fired(&mut self, rank: RankId, timer: u64) -> bool {
        let f = &mut self.procs[rank.index()].fired_timers;
        if let Some(pos) = f.iter().position(|&t| t == timer) {
            f.swap_remove(pos);
            true
        } else {
            false
        }
    }

    // ---- failures -------------------------------------------------------

    pub fn knows_failed(&self, observer: RankId, peer: RankId) -> bool {
        self.nodes[observer.index()].view.contains(peer)
    }

    /// Registers interest of `observer` in `peer`; a crashed peer then
    /// yields an in-band link error at the observer.
    pub fn watch(&mut self, observer: RankId, peer: RankId) {
        let c = self.watchers.entry((observer, peer)).or_default();
        *c += 1;
        if *c == 1 && !self.is_alive(peer) && !self.knows_failed(observer, peer) {
            let at = self.now.after(self.link.alpha);
            self.schedule(at, EventKind::LinkProbe { observer, peer }, false);
        }
    }

    pub fn unwatch(&mut self, observer: RankId, peer: RankId) {
        if let Some(c) = self.watchers.get_mut(&(observer, peer)) {
            *c -= 1;
            if *c == 0 {
                self.watchers.remove(&(observer, peer));
            }
        }
    }

    /// Failure knowledge about `peer` never overtakes messages `peer` already
    /// put on the wire toward `observer`.
    pub fn learn_failure(&mut self, observer: RankId, peer: RankId, via: Learned) {
        if !self.is_alive(observer) || self.knows_failed(observer, peer) {
            return;
        }
        debug_assert!(!self.is_alive(peer), "accuracy: {peer} is alive");
        if self.inflight.contains_key(&(peer, observer)) {
            self.pending_learn.entry((observer, peer)).or_insert(via);
        } else {
            self.apply_learn(observer, peer, via);
        }
    }

    fn apply_learn(&mut self, observer: RankId, peer: RankId, via: Learned) {
        if self.is_alive(observer) && !self.knows_failed(observer, peer) {
            node::on_failure_learned(self, observer, peer, via);
            self.notify(observer);
        }
    }

    fn crash_now(&mut self, r: RankId) {
        if !self.is_alive(r) {
            return;
        }
        let p = &mut self.procs[r.index()];
        p.status.state = ProcState::Crashed;
        p.status.crash_time = Some(self.now);
        p.mailbox.clear();
        p.waiters.clear();
        self.record(TraceKind::Crash, r, r, Tag(0), ContextId(0), 0);
        let observers: Vec<RankId> = self
            .watchers
            .keys()
            .filter(|(o, p)| *p == r && self.is_alive(*o))
            .map(|(o, _)| *o)
            .collect();
        let at = self.now.after(self.link.alpha);
        for observer in observers {
            self.schedule(at, EventKind::LinkProbe { observer, peer: r }, false);
        }
    }

    /// Dispatches one event at its timestamp. Returns a rank that crashed.
    pub fn dispatch(&mut self, time: VirtualTime, kind: EventKind) -> Option<RankId> {
        debug_assert!(time >= self.now);
        self.now = time;
        self.events_dispatched += 1;
        match kind {
            EventKind::Crash(r) => {
                let was_alive = self.is_alive(r);
                self.crash_now(r);
                return was_alive.then_some(r);
            }
            EventKind::Deliver { msg, send_id } => self.deliver(msg, send_id),
            EventKind::Timer { rank, timer } => {
                if self.is_alive(rank) {
                    self.procs[rank.index()].fired_timers.push(timer);
                    self.notify(rank);
                }
            }
            EventKind::LinkProbe { observer, peer } => {
                let watched = self.watchers.contains_key(&(observer, peer));
                if watched && self.is_alive(observer) && !self.knows_failed(observer, peer) {
                    if self.inflight.contains_key(&(peer, observer)) {
                        // Re-checked once the wire drains.
                        self.pending_learn.entry((observer, peer)).or_insert(Learned::InBand);
                    } else {
                        self.record(TraceKind::LinkErr, observer, peer, Tag(0), ContextId(0), 0);
                        self.learn_failure(observer, peer, Learned::InBand);
                    }
                }
            }
            EventKind::Heartbeat(r) => {
                if self.is_alive(r) {
                    crate::detector::on_heartbeat_tick(self, r);
                }
            }
        }
        None
    }

    /// Crash injected between events (used by schedule enumeration).
    pub fn crash_immediately(&mut self, r: RankId) -> bool {
        let was = self.is_alive(r);
        self.crash_now(r);
        was
    }
}
