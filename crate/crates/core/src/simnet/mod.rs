//! Deterministic discrete-event simulation of a fixed-size job.
//!
//! A [`Simulation`] owns a virtual clock, an event queue ordered by
//! `(time, sequence)`, and one cooperative task per rank. Rank programs are
//! ordinary `async` blocks that receive a [`Process`] handle; they yield
//! whenever they block on a handle and are resumed by the scheduler thread
//! when the event they wait for is dispatched.
//!
//! Transport follows a latency/bandwidth model: a message of `s` bytes
//! posted at time `t` is delivered at `t + alpha + s * beta`. Processes fail
//! by crash-stop. Messages already on the wire when their sender crashes are
//! still delivered; a message reaching a crashed destination turns into a
//! `LINKERR` at the sender.

mod executor;
pub(crate) mod trace;
pub(crate) mod types;
pub(crate) mod world;

use std::cell::{Cell, RefCell};
use std::future::Future;
use std::pin::Pin;
use std::rc::Rc;
use std::task::{Context, Poll};

use bytes::Bytes;
use rand::Rng;

pub use trace::{TraceKind, TraceRecord};
pub use types::{LinkModel, ProcState, ProcessStatus, RankId, SimMessage, Tag, VirtualTime};
pub use world::{MessageStats, ScopeAudit, SendState};

use crate::comm::ContextId;
use crate::detector::{FailureRecord, HeartbeatConfig};
use crate::error::SimError;
use executor::{Executor, LocalFuture, Polled};
use types::ChannelKey;
use world::{EventKind, World};

/// Default livelock guard.
pub const DEFAULT_MAX_EVENTS: u64 = 50_000_000;

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub ranks: usize,
    pub link: LinkModel,
    pub seed: u64,
    pub detector: HeartbeatConfig,
    /// Keep the full event log in memory (the digest is always computed).
    pub trace: bool,
    pub max_events: u64,
}

impl SimConfig {
    pub fn new(ranks: usize) -> Self {
        Self {
            ranks,
            link: LinkModel::default(),
            seed: 0,
            detector: HeartbeatConfig::disabled(),
            trace: false,
            max_events: DEFAULT_MAX_EVENTS,
        }
    }

    pub fn link(mut self, link: LinkModel) -> Self {
        self.link = link;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn detector(mut self, detector: HeartbeatConfig) -> Self {
        self.detector = detector;
        self
    }

    pub fn trace(mut self, on: bool) -> Self {
        self.trace = on;
        self
    }

    pub fn max_events(mut self, max: u64) -> Self {
        self.max_events = max;
        self
    }

    fn validate(&self) -> Result<(), SimError> {
        if self.ranks == 0 {
            return Err(SimError::InvalidConfig("job size must be at least 1".into()));
        }
        if self.ranks > u32::MAX as usize {
            return Err(SimError::InvalidConfig("job size exceeds rank id space".into()));
        }
        if self.link.alpha < 1 {
            return Err(SimError::InvalidConfig("link alpha must be >= 1 tick".into()));
        }
        self.detector.validate()
    }
}

pub(crate) struct Shared {
    pub world: RefCell<World>,
    exec: Executor,
    main_running: RefCell<Vec<bool>>,
    mains_left: Cell<usize>,
    crash_requested: RefCell<Vec<bool>>,
    max_events: u64,
}

impl Shared {
    pub fn spawn_task(&self, rank: RankId, fut: LocalFuture) {
        self.exec.spawn(rank, false, fut);
    }
}

/// A simulated job. Confined to the thread that created it.
pub struct Simulation {
    shared: Rc<Shared>,
}

impl Simulation {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let n = config.ranks;
        let mut world = World::new(n, config.link, config.seed, config.detector, config.trace);
        if config.detector.enabled {
            let first = VirtualTime(config.detector.period);
            for r in 0..n {
                world.schedule(first, EventKind::Heartbeat(RankId::from(r)), true);
            }
        }
        Ok(Self {
            shared: Rc::new(Shared {
                world: RefCell::new(world),
                exec: Executor::default(),
                main_running: RefCell::new(vec![false; n]),
                mains_left: Cell::new(0),
                crash_requested: RefCell::new(vec![false; n]),
                max_events: config.max_events,
            }),
        })
    }

    /// Builds a simulation and spawns `program` once per rank.
    pub fn spawn_job<F, Fut>(config: SimConfig, program: F) -> Result<Self, SimError>
    where
        F: Fn(Process) -> Fut,
        Fut: Future<Output = ()> + 'static,
    {
        let sim = Self::new(config)?;
        for r in 0..sim.size() {
            sim.spawn(RankId::from(r), program(sim.process(RankId::from(r))))?;
        }
        Ok(sim)
    }

    pub fn size(&self) -> usize {
        self.shared.world.borrow().size()
    }

    /// Handle for `rank`, used to build its program.
    pub fn process(&self, rank: RankId) -> Process {
        Process {
            shared: self.shared.clone(),
            id: rank,
        }
    }

    /// Installs the main program of `rank`. One program per rank.
    pub fn spawn<Fut>(&self, rank: RankId, program: Fut) -> Result<(), SimError>
    where
        Fut: Future<Output = ()> + 'static,
    {
        if rank.index() >= self.size() {
            return Err(SimError::InvalidConfig(format!("rank {rank} out of range")));
        }
        let mut running = self.shared.main_running.borrow_mut();
        if running[rank.index()] {
            return Err(SimError::InvalidConfig(format!("rank {rank} already has a program")));
        }
        running[rank.index()] = true;
        self.shared.mains_left.set(self.shared.mains_left.get() + 1);
        self.shared.exec.spawn(rank, true, Box::pin(program));
        Ok(())
    }

    /// Schedules a crash-stop failure of `rank` at virtual time `at`.
    pub fn crash(&self, rank: RankId, at: VirtualTime) -> Result<(), SimError> {
        self.claim_crash(rank)?;
        let mut w = self.shared.world.borrow_mut();
        if at < w.now {
            return Err(SimError::InvalidConfig(format!("crash time {at} is in the past")));
        }
        w.schedule(at, EventKind::Crash(rank), true);
        Ok(())
    }

    /// Crashes `rank` immediately before the event with the given dispatch
    /// index (0-based) is processed.
    pub fn crash_before_event(&self, rank: RankId, index: u64) -> Result<(), SimError> {
        self.claim_crash(rank)?;
        self.shared
            .world
            .borrow_mut()
            .crash_points
            .entry(index)
            .or_default()
            .push(rank);
        Ok(())
    }

    fn claim_crash(&self, rank: RankId) -> Result<(), SimError> {
        let mut req = self.shared.crash_requested.borrow_mut();
        let slot = req
            .get_mut(rank.index())
            .ok_or_else(|| SimError::InvalidConfig(format!("rank {rank} out of range")))?;
        if *slot {
            return Err(SimError::AlreadyCrashed(rank));
        }
        *slot = true;
        Ok(())
    }

    /// Runs until every live rank's program has returned and no non-daemon
    /// event remains. Returns the final clock.
    pub fn run(&self) -> Result<VirtualTime, SimError> {
        let sh = &self.shared;
        loop {
            while let Some(task) = sh.exec.next_ready() {
                let polled = sh.exec.poll(task, |r| sh.world.borrow().is_alive(r));
                if let Polled::Finished { rank, main: true } = polled {
                    sh.main_running.borrow_mut()[rank.index()] = false;
                    sh.mains_left.set(sh.mains_left.get() - 1);
                }
            }
            let mut w = sh.world.borrow_mut();
            if sh.mains_left.get() == 0 && w.nondaemon_pending() == 0 {
                break;
            }
            if w.events_dispatched >= sh.max_events {
                return Err(SimError::Livelock {
                    events: w.events_dispatched,
                    time: w.now,
                });
            }
            let Some((time, kind)) = w.pop_event() else {
                let blocked: Vec<RankId> = sh
                    .main_running
                    .borrow()
                    .iter()
                    .enumerate()
                    .filter(|(_, &m)| m)
                    .map(|(r, _)| RankId::from(r))
                    .collect();
                return Err(SimError::Deadlock {
                    ranks: blocked,
                    time: w.now,
                });
            };
            let mut crashed = Vec::new();
            let index = w.events_dispatched;
            if let Some(victims) = w.crash_points.remove(&index) {
                w.now = time;
                for r in victims {
                    if w.crash_immediately(r) {
                        crashed.push(r);
                    }
                }
            }
            crashed.extend(w.dispatch(time, kind));
            drop(w);
            for r in crashed {
                self.reap(r);
            }
        }
        let now = sh.world.borrow().now;
        Ok(now)
    }

    fn reap(&self, r: RankId) {
        let sh = &self.shared;
        let was_running = std::mem::replace(&mut sh.main_running.borrow_mut()[r.index()], false);
        if was_running {
            sh.mains_left.set(sh.mains_left.get() - 1);
        }
        sh.exec.kill_rank(r);
    }

    pub fn now(&self) -> VirtualTime {
        self.shared.world.borrow().now
    }

    pub fn status(&self, rank: RankId) -> ProcessStatus {
        self.shared.world.borrow().procs[rank.index()].status
    }

    pub fn trace(&self) -> Vec<TraceRecord> {
        self.shared.world.borrow().trace.records().to_vec()
    }

    /// Hash over the complete event log, maintained even when the log
    /// itself is not retained.
    pub fn trace_digest(&self) -> u64 {
        self.shared.world.borrow().trace.digest()
    }

    pub fn stats(&self) -> MessageStats {
        self.shared.world.borrow().stats.clone()
    }

    pub fn events_dispatched(&self) -> u64 {
        self.shared.world.borrow().events_dispatched
    }

    pub fn known_failures(&self, observer: RankId) -> Vec<RankId> {
        self.shared.world.borrow().nodes[observer.index()].view.ranks()
    }

    pub fn failure_records(&self, observer: RankId) -> Vec<FailureRecord> {
        self.shared.world.borrow().nodes[observer.index()].view.records()
    }

    pub fn scope_audit(&self) -> ScopeAudit {
        self.shared.world.borrow().audit
    }
}

impl Drop for Simulation {
    // Tasks own `Process` handles that point back at `Shared`.
    fn drop(&mut self) {
        self.shared.exec.clear();
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
#[error("link error toward rank {0}")]
pub struct LinkError(pub RankId);

/// Per-rank handle given to rank programs.
#[derive(Clone)]
pub struct Process {
    pub(crate) shared: Rc<Shared>,
    id: RankId,
}

impl Process {
    pub fn rank(&self) -> RankId {
        self.id
    }

    pub fn job_size(&self) -> usize {
        self.shared.world.borrow().size()
    }

    pub fn now(&self) -> VirtualTime {
        self.shared.world.borrow().now
    }

    pub fn link(&self) -> LinkModel {
        self.shared.world.borrow().link
    }

    /// Uniform draw from `[lo, hi)` using this rank's seeded generator.
    pub fn random_range(&self, lo: u64, hi: u64) -> u64 {
        self.shared.world.borrow_mut().procs[self.id.index()]
            .rng
            .gen_range(lo..hi)
    }

    pub fn sleep(&self, ticks: u64) -> Sleep {
        Sleep {
            proc: self.clone(),
            ticks,
            timer: None,
        }
    }

    /// Emits a `USER` trace record carrying `code` in the tag field.
    pub fn log(&self, code: u32) {
        let mut w = self.shared.world.borrow_mut();
        w.record(TraceKind::User, self.id, self.id, Tag::user(code), ContextId(0), 0);
    }

    pub fn post_send(&self, dst: RankId, tag: Tag, cid: ContextId, payload: Bytes) -> SendHandle {
        let size = payload.len() as u64;
        self.post_send_sized(dst, tag, cid, payload, size)
    }

    /// Posts a send whose charged size differs from its payload length.
    pub fn post_send_sized(&self, dst: RankId, tag: Tag, cid: ContextId, payload: Bytes, size: u64) -> SendHandle {
        let mut w = self.shared.world.borrow_mut();
        let id = w
            .send(self.id, dst, tag, cid, payload, size)
            .expect("a running task belongs to a live rank");
        w.track_send(id);
        SendHandle {
            shared: self.shared.clone(),
            rank: self.id,
            id,
        }
    }

    pub fn post_recv(&self, src: RankId, tag: Tag, cid: ContextId) -> RecvHandle {
        self.shared.world.borrow_mut().watch(self.id, src);
        RecvHandle {
            shared: self.shared.clone(),
            rank: self.id,
            key: ChannelKey { src, tag, cid },
            done: false,
        }
    }

    /// Failure knowledge of this rank (in-band and out-of-band).
    pub fn known_failures(&self) -> Vec<RankId> {
        self.shared.world.borrow().nodes[self.id.index()].view.ranks()
    }

    pub(crate) fn spawn_local(&self, fut: impl Future<Output = ()> + 'static) {
        self.shared.spawn_task(self.id, Box::pin(fut));
    }

    pub(crate) fn with_world<R>(&self, f: impl FnOnce(&mut World) -> R) -> R {
        f(&mut self.shared.world.borrow_mut())
    }

    /// Resolves with the first `Some` returned by `check`, re-evaluated
    /// every time this rank is woken.
    pub(crate) fn wait_for<'a, T>(
        &'a self,
        mut check: impl FnMut(&mut World) -> Option<T> + 'a,
    ) -> impl Future<Output = T> + 'a {
        std::future::poll_fn(move |cx| {
            let mut w = self.shared.world.borrow_mut();
            match check(&mut w) {
                Some(v) => Poll::Ready(v),
                None => {
                    w.register_waiter(self.id, cx.waker());
                    Poll::Pending
                }
            }
        })
    }

    /// Keeps a link-error probe on `peer` armed while the guard lives.
    pub(crate) fn watch(&self, peer: RankId) -> WatchGuard {
        self.shared.world.borrow_mut().watch(self.id, peer);
        WatchGuard {
            shared: self.shared.clone(),
            rank: self.id,
            peer,
        }
    }
}

pub(crate) struct WatchGuard {
    shared: Rc<Shared>,
    rank: RankId,
    peer: RankId,
}

impl Drop for WatchGuard {
    fn drop(&mut self) {
        if let Ok(mut w) = self.shared.world.try_borrow_mut() {
            w.unwatch(self.rank, self.peer);
        }
    }
}

pub struct Sleep {
    proc: Process,
    ticks: u64,
    timer: Option<u64>,
}

impl Future for Sleep {
    type Output = ();

    fn poll(mut self: Pin<&mut Self>, cx: &mut Context<'_>) -> Poll<()> {
        let rank = self.proc.id;
        let mut w = self.proc.shared.world.borrow_mut();
        match self.timer {
            None => {
                if self.ticks == 0 {
                    return Poll::Ready(());
                }
                let t = w.start_timer(rank, self.ticks);
                w.register_waiter(rank, cx.waker());
                drop(w);
                self.timer = Some(t);
                Poll::Pending
            }
            Some(t) => {
                if w.take_fired(rank, t) {
                    Poll::Ready(())
                } else {
                    w.register_waiter(rank, cx.waker());
                    Poll::Pending
                }
            }
        }
    }
}

/// Completion handle of a posted send.
pub struct SendHandle {
    shared: Rc<Shared>,
    rank: RankId,
    id: u64,
}

impl SendHandle {
    pub fn state(&self) -> SendState {
        self.shared
            .world
            .borrow()
            .send_state(self.id)
            .unwrap_or(SendState::Pending)
    }

    /// Resolves at delivery time, or with the link error at the sender.
    pub fn wait(&self) -> impl Future<Output = Result<(), LinkError>> + '_ {
        std::future::poll_fn(move |cx| match self.state() {
            SendState::Pending => {
                self.shared.world.borrow_mut().register_waiter(self.rank, cx.waker());
                Poll::Pending
            }
            SendState::Delivered => Poll::Ready(Ok(())),
            SendState::LinkError(r) => Poll::Ready(Err(LinkError(r))),
        })
    }
}

impl Drop for SendHandle {
    fn drop(&mut self) {
        if let Ok(mut w) = self.shared.world.try_borrow_mut() {
            w.forget_send(self.id);
        }
    }
}

/// Pending receive; resolves with the first queued message on its channel
/// or with a link error once the source is known crashed in-band.
pub struct RecvHandle {
    shared: Rc<Shared>,
    rank: RankId,
    key: ChannelKey,
    done: bool,
}

impl RecvHandle {
    /// Non-blocking completion check.
    pub fn test(&mut self) -> Option<Result<SimMessage, LinkError>> {
        let mut w = self.shared.world.borrow_mut();
        if let Some(m) = w.take_message(self.rank, self.key) {
            self.done = true;
            return Some(Ok(m));
        }
        if w.nodes[self.rank.index()].view.contains(self.key.src) {
            self.done = true;
            return Some(Err(LinkError(self.key.src)));
        }
        None
    }
}

impl Future for RecvHandle {
    type Output = Result<SimMessage, LinkError>;

    fn poll(mut self: Pin<&mut Self>, cx: &mut Context<'_>) -> Poll<Self::Output> {
        match self.test() {
            Some(r) => Poll::Ready(r),
            None => {
                self.shared.world.borrow_mut().register_waiter(self.rank, cx.waker());
                Poll::Pending
            }
        }
    }
}

impl Drop for RecvHandle {
    fn drop(&mut self) {
        if let Ok(mut w) = self.shared.world.try_borrow_mut() {
            w.unwatch(self.rank, self.key.src);
        }
    }
}
