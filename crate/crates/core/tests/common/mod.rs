#![allow(dead_code)]

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use ulfm_sim::{RankId, VirtualTime};

/// Per-rank result slots shared between rank programs and the test body.
#[derive(Clone)]
pub struct Outcomes<T>(Rc<RefCell<BTreeMap<RankId, T>>>);

impl<T: Clone> Outcomes<T> {
    pub fn new() -> Self {
        Self(Rc::new(RefCell::new(BTreeMap::new())))
    }

    pub fn put(&self, r: RankId, v: T) {
        self.0.borrow_mut().insert(r, v);
    }

    pub fn get(&self, r: RankId) -> Option<T> {
        self.0.borrow().get(&r).cloned()
    }

    pub fn all(&self) -> BTreeMap<RankId, T> {
        self.0.borrow().clone()
    }

    pub fn len(&self) -> usize {
        self.0.borrow().len()
    }
}

pub fn r(i: u32) -> RankId {
    RankId(i)
}

pub fn t(ticks: u64) -> VirtualTime {
    VirtualTime(ticks)
}

pub mod agreement {
    use std::collections::BTreeMap;

    use super::Outcomes;
    use ulfm_sim::{agree, Bits, Communicator, ErrorClass, HeartbeatConfig, LinkModel, RankId, SimConfig, Simulation};

    pub struct Run {
        pub events: u64,
        pub decided: BTreeMap<RankId, (Bits, ErrorClass)>,
        pub survivors: Vec<RankId>,
    }

    /// Rank i contributes all ones except bit i, so bit i of the decision
    /// is clear exactly when i's contribution was included.
    pub fn flags(n: usize, i: usize) -> Bits {
        let mut b = Bits::ones(n);
        b.set(i, false);
        b
    }

    /// One agreement over the world, with crashes injected before the
    /// given event indices.
    pub fn run(n: usize, crashes: &[(RankId, u64)], detector: HeartbeatConfig) -> Run {
        run_jittered(n, crashes, detector, None)
    }

    /// As [`run`]; with a seed, each rank joins after a random delay so
    /// that different seeds interleave the protocol differently.
    pub fn run_jittered(n: usize, crashes: &[(RankId, u64)], detector: HeartbeatConfig, seed: Option<u64>) -> Run {
        let out = Outcomes::new();
        let o = out.clone();
        let cfg = SimConfig::new(n)
            .link(LinkModel::new(10, 1))
            .detector(detector)
            .seed(seed.unwrap_or(0));
        let sim = Simulation::spawn_job(cfg, move |p| {
            let o = o.clone();
            async move {
                let w = Communicator::world(&p).unwrap();
                if seed.is_some() {
                    let d = p.random_range(0, 40);
                    p.sleep(d).await;
                }
                let res = agree(&w, &flags(n, p.rank().index())).await;
                o.put(p.rank(), res);
            }
        })
        .unwrap();
        for &(r, at) in crashes {
            sim.crash_before_event(r, at).unwrap();
        }
        sim.run().unwrap();
        let survivors = (0..n).map(RankId::from).filter(|&r| sim.status(r).is_alive()).collect();
        Run {
            events: sim.events_dispatched(),
            decided: out.all(),
            survivors,
        }
    }

    /// Agreement, validity over survivors, and a uniform class.
    pub fn check(run: &Run) -> Result<(), String> {
        let mut values = run.decided.values();
        let Some(first) = values.next() else {
            return Err("nobody decided".into());
        };
        if let Some(v) = values.find(|v| *v != first) {
            return Err(format!("split decision {first:?} vs {v:?}"));
        }
        for s in &run.survivors {
            if !run.decided.contains_key(s) {
                return Err(format!("survivor {s} did not decide"));
            }
            if first.0.get(s.index()) {
                return Err(format!("survivor {s} contribution missing"));
            }
        }
        Ok(())
    }

    /// Every crash point for up to two victims, for the unjittered
    /// schedule and each jitter seed. Returns (runs, violations).
    pub fn exhaustive(n: usize, seeds: &[u64]) -> (u64, Vec<String>) {
        let mut runs = 0;
        let mut bad = Vec::new();
        for seed in std::iter::once(None).chain(seeds.iter().copied().map(Some)) {
            let (r, b) = exhaustive_one(n, seed);
            runs += r;
            bad.extend(b.into_iter().map(|e| format!("seed {seed:?} {e}")));
        }
        (runs, bad)
    }

    fn exhaustive_one(n: usize, seed: Option<u64>) -> (u64, Vec<String>) {
        let off = HeartbeatConfig::disabled();
        let run = |n, c: &[(RankId, u64)], d| run_jittered(n, c, d, seed);
        let base = run(n, &[], off).events;
        let mut runs = 0;
        let mut bad = Vec::new();
        let mut record = |crashes: &[(RankId, u64)], r: Run| {
            runs += 1;
            if let Err(e) = check(&r) {
                bad.push(format!("{crashes:?}: {e}"));
            }
        };
        for v in 0..n {
            for i in 0..=base {
                let c = [(RankId::from(v), i)];
                record(&c, run(n, &c, off));
            }
        }
        for a in 0..n {
            for b in a + 1..n {
                for i in 0..=base {
                    // The first crash changes the schedule; bound the second
                    // by that run's length.
                    let first = [(RankId::from(a), i)];
                    let len = run(n, &first, off).events;
                    for j in 0..=len.max(base) {
                        let c = [(RankId::from(a), i), (RankId::from(b), j)];
                        record(&c, run(n, &c, off));
                    }
                }
            }
        }
        (runs, bad)
    }
}

pub mod collectives {
    use std::collections::BTreeMap;

    use bytes::Bytes;

    use super::Outcomes;
    use ulfm_sim::collectives::encode_i64s;
    use ulfm_sim::comm::INFO_ERROR_UNIFORM;
    use ulfm_sim::{
        collective, CollectiveKind, CollectiveSpec, CommError, Communicator, HeartbeatConfig, LinkModel, RankId,
        SimConfig, Simulation, UniformityMode, VirtualTime,
    };

    pub const KINDS: [CollectiveKind; 4] = [
        CollectiveKind::Bcast,
        CollectiveKind::Reduce,
        CollectiveKind::Allreduce,
        CollectiveKind::Barrier,
    ];

    pub struct Setup {
        pub n: usize,
        pub kind: CollectiveKind,
        pub root: usize,
        pub mode: UniformityMode,
        pub link: LinkModel,
        pub detector: HeartbeatConfig,
        pub seed: u64,
        /// Bytes charged per data message.
        pub charge: Option<u64>,
        pub crashes: Vec<(RankId, VirtualTime)>,
    }

    impl Setup {
        pub fn new(n: usize, kind: CollectiveKind, mode: UniformityMode) -> Self {
            Self {
                n,
                kind,
                root: 0,
                mode,
                link: LinkModel::new(100, 1),
                detector: HeartbeatConfig::disabled(),
                seed: 0,
                charge: None,
                crashes: Vec::new(),
            }
        }
    }

    pub type Results = BTreeMap<RankId, (Result<Bytes, CommError>, VirtualTime)>;

    /// Rank i contributes the lane value i + 1.
    pub fn input(i: usize) -> Bytes {
        encode_i64s(&[i as i64 + 1])
    }

    pub fn run(s: &Setup) -> Results {
        let out = Outcomes::new();
        let o = out.clone();
        let (kind, root, mode, charge) = (s.kind, s.root, s.mode, s.charge);
        let cfg = SimConfig::new(s.n).link(s.link).detector(s.detector).seed(s.seed);
        let sim = Simulation::spawn_job(cfg, move |p| {
            let o = o.clone();
            async move {
                let w = Communicator::world(&p).unwrap();
                if mode == UniformityMode::Uniform {
                    w.set_info(INFO_ERROR_UNIFORM, "true").unwrap();
                }
                let mut spec = CollectiveSpec::new(kind).root(root).payload(input(p.rank().index()));
                if let Some(c) = charge {
                    spec = spec.charge(c);
                }
                let res = collective(&w, spec).await;
                o.put(p.rank(), (res, p.now()));
            }
        })
        .unwrap();
        for &(r, at) in &s.crashes {
            sim.crash(r, at).unwrap();
        }
        sim.run().unwrap();
        out.all()
    }
}

pub mod shrink {
    use std::collections::{BTreeMap, BTreeSet};

    use super::Outcomes;
    use ulfm_sim::{
        Communicator, ContextId, ErrorClass, HeartbeatConfig, LinkModel, RankId, SimConfig, Simulation, VirtualTime,
    };

    #[derive(Clone, Debug, PartialEq, Eq)]
    pub struct Got {
        pub group: Vec<RankId>,
        pub cid: ContextId,
        pub class: ErrorClass,
        pub agreed_failed: BTreeSet<RankId>,
    }

    pub struct Run {
        pub got: BTreeMap<RankId, Got>,
        /// Crash time of every rank that crashed.
        pub crashed: BTreeMap<RankId, VirtualTime>,
        pub start: VirtualTime,
    }

    /// Every rank shrinks the world at `start`; `crashes` may fall before
    /// or during the shrink.
    pub fn run(
        n: usize,
        seed: u64,
        crashes: &[(RankId, VirtualTime)],
        start: u64,
        nonblocking: bool,
        detector: HeartbeatConfig,
    ) -> Run {
        let out = Outcomes::new();
        let o = out.clone();
        let cfg = SimConfig::new(n)
            .link(LinkModel::new(100, 1))
            .detector(detector)
            .seed(seed);
        let sim = Simulation::spawn_job(cfg, move |p| {
            let o = o.clone();
            async move {
                let w = Communicator::world(&p).unwrap();
                p.sleep(start).await;
                let res = if nonblocking {
                    w.ishrink().wait().await
                } else {
                    w.shrink().await
                };
                o.put(
                    p.rank(),
                    Got {
                        group: res.comm.group().to_vec(),
                        cid: res.comm.cid(),
                        class: res.class,
                        agreed_failed: res.state.agreed_failed,
                    },
                );
            }
        })
        .unwrap();
        for &(r, at) in crashes {
            sim.crash(r, at).unwrap();
        }
        sim.run().unwrap();
        let crashed = (0..n)
            .map(RankId::from)
            .filter_map(|r| sim.status(r).crash_time.map(|t| (r, t)))
            .collect();
        Run {
            got: out.all(),
            crashed,
            start: VirtualTime(start),
        }
    }

    /// Identical results at every survivor, failed set between the crashes
    /// before the start and all crashes, survivors in parent order.
    pub fn check(n: usize, run: &Run) -> Result<(), String> {
        let survivors: Vec<RankId> = (0..n)
            .map(RankId::from)
            .filter(|r| !run.crashed.contains_key(r))
            .collect();
        for s in &survivors {
            if !run.got.contains_key(s) {
                return Err(format!("survivor {s} did not finish"));
            }
        }
        let mut it = run.got.values();
        let first = it.next().ok_or("no result")?;
        for g in it {
            if (&g.group, g.cid, &g.agreed_failed) != (&first.group, first.cid, &first.agreed_failed) {
                return Err(format!("mismatch {first:?} vs {g:?}"));
            }
        }
        let before: BTreeSet<RankId> = run
            .crashed
            .iter()
            .filter(|(_, &t)| t < run.start)
            .map(|(&r, _)| r)
            .collect();
        let all: BTreeSet<RankId> = run.crashed.keys().copied().collect();
        if !before.is_subset(&first.agreed_failed) || !first.agreed_failed.is_subset(&all) {
            return Err(format!(
                "failed set {:?} outside [{before:?}, {all:?}]",
                first.agreed_failed
            ));
        }
        let expect: Vec<RankId> = (0..n)
            .map(RankId::from)
            .filter(|r| !first.agreed_failed.contains(r))
            .collect();
        if first.group != expect {
            return Err(format!("group {:?}, expected {expect:?}", first.group));
        }
        Ok(())
    }

    /// Crashes before and during a shrink of an n-rank world, from a seed.
    pub fn schedule(n: usize, seed: u64) -> (Vec<(RankId, VirtualTime)>, u64) {
        let start = 20_000;
        let k = 1 + (seed % 3) as usize;
        let mut crashes = Vec::new();
        let mut used = BTreeSet::new();
        for j in 0..k {
            let mut r = RankId::from(((seed * 31 + j as u64 * 17) % n as u64) as usize);
            while !used.insert(r) {
                r = RankId::from((r.index() + 1) % n);
            }
            // Alternate between well before the shrink and inside it.
            let at = if (seed + j as u64).is_multiple_of(2) {
                (seed * 97 + j as u64 * 1013) % start
            } else {
                start + (seed * 53 + j as u64 * 311) % 3000
            };
            crashes.push((r, VirtualTime(at)));
        }
        (crashes, start)
    }
}

pub mod scope {
    use std::rc::Rc;

    use super::Outcomes;
    use bytes::Bytes;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use ulfm_sim::comm::INFO_ERROR_RANGE;
    use ulfm_sim::simnet::ScopeAudit;
    use ulfm_sim::{
        collective, CollectiveKind, CollectiveSpec, CommError, Communicator, ErrorClass, ErrorScope, HeartbeatConfig,
        LinkModel, RankId, SimConfig, SimError, Simulation, VirtualTime,
    };

    #[derive(Clone, Copy, Debug)]
    enum Op {
        /// Send to the next rank, receive from the previous one.
        Ring {
            on_sub: bool,
        },
        Allreduce {
            on_sub: bool,
        },
        Ack {
            on_sub: bool,
        },
        Sleep(u64),
    }

    pub const ALPHA: u64 = 100;

    pub fn cfg(n: usize) -> SimConfig {
        SimConfig::new(n)
            .link(LinkModel::new(ALPHA, 0))
            .detector(HeartbeatConfig::enabled(10 * ALPHA, 30 * ALPHA))
    }

    /// Long enough for any single crash to be known everywhere.
    pub const SETTLE: u64 = 200 * ALPHA;

    pub fn scope_value(s: ErrorScope) -> &'static str {
        match s {
            ErrorScope::Local => "local",
            ErrorScope::Group => "group",
            ErrorScope::Universe => "universe",
        }
    }

    /// Ranks 0 and 1 exchange one message after rank 3 has died and everyone
    /// knows it. Returns rank 1's receive outcome.
    pub fn partner_exchange(scope: ErrorScope) -> Result<Bytes, CommError> {
        let out = Outcomes::new();
        let o = out.clone();
        let sim = Simulation::spawn_job(cfg(4), move |p| {
            let o = o.clone();
            async move {
                let w = Communicator::world(&p).unwrap();
                w.set_info(INFO_ERROR_RANGE, scope_value(scope)).unwrap();
                p.sleep(SETTLE).await;
                match w.local_rank() {
                    0 => {
                        let _ = w.send(1, 7, Bytes::from_static(b"ok"));
                    }
                    1 => o.put(p.rank(), w.recv(0, 7).await),
                    _ => {}
                }
            }
        })
        .unwrap();
        sim.crash(RankId(3), VirtualTime(10)).unwrap();
        sim.run().unwrap();
        out.get(RankId(1)).unwrap()
    }

    /// Ranks {0,1} form a library communicator; rank 3 is outside it.
    pub fn library_exchange(scope: ErrorScope) -> ErrorClass {
        let out = Outcomes::new();
        let o = out.clone();
        let sim = Simulation::spawn_job(cfg(4), move |p| {
            let o = o.clone();
            async move {
                let w = Communicator::world(&p).unwrap();
                let color = (p.rank().0 < 2).then_some(1);
                let lib = w.derive(color, 0).await.unwrap();
                p.sleep(SETTLE).await;
                if let Some(lib) = lib {
                    lib.set_info(INFO_ERROR_RANGE, scope_value(scope)).unwrap();
                    if lib.local_rank() == 0 {
                        let _ = lib.send(1, 0, Bytes::new());
                    } else {
                        o.put(p.rank(), ErrorClass::of(&lib.recv(0, 0).await));
                    }
                }
            }
        })
        .unwrap();
        sim.crash(RankId(3), VirtualTime(10 * ALPHA + 5000)).unwrap();
        sim.run().unwrap();
        out.get(RankId(1)).unwrap()
    }

    const SCOPES: [&str; 3] = ["local", "group", "universe"];

    /// A random program of ring exchanges, collectives and acks on the
    /// world and on a two-way split of it, with one or two crashes and a
    /// random error scope per communicator. Returns the audit of every
    /// error classification the run made, and whether the program stalled.
    pub fn random_trace(seed: u64) -> Result<(ScopeAudit, bool), String> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(4..=10usize);
        let world_scope = SCOPES[rng.gen_range(0..3)];
        let sub_scope = SCOPES[rng.gen_range(0..3)];
        let ops: Rc<Vec<Op>> = Rc::new(
            (0..rng.gen_range(4..12))
                .map(|_| {
                    let on_sub = rng.gen_bool(0.5);
                    match rng.gen_range(0..10) {
                        0..=4 => Op::Ring { on_sub },
                        5..=6 => Op::Allreduce { on_sub },
                        7 => Op::Ack { on_sub },
                        _ => Op::Sleep(rng.gen_range(1..2000)),
                    }
                })
                .collect(),
        );
        let cfg = SimConfig::new(n)
            .link(LinkModel::new(100, 1))
            .detector(HeartbeatConfig::enabled(500, 1500))
            .seed(seed)
            .max_events(200_000);
        let sim = Simulation::spawn_job(cfg, move |p| {
            let ops = ops.clone();
            async move {
                let w = Communicator::world(&p).unwrap();
                let sub = w.derive(Some(p.rank().0 % 2), 0).await.ok().flatten();
                let _ = w.set_info(INFO_ERROR_RANGE, world_scope);
                if let Some(s) = &sub {
                    let _ = s.set_info(INFO_ERROR_RANGE, sub_scope);
                }
                for (i, op) in ops.iter().enumerate() {
                    let c = match op {
                        Op::Ring { on_sub } | Op::Allreduce { on_sub } | Op::Ack { on_sub } => match (on_sub, &sub) {
                            (true, Some(s)) => s,
                            _ => &w,
                        },
                        Op::Sleep(d) => {
                            p.sleep(*d).await;
                            continue;
                        }
                    };
                    let me = c.local_rank();
                    let m = c.size();
                    match op {
                        Op::Ring { .. } if m > 1 => {
                            let _ = c.send((me + 1) % m, i as u32, Bytes::new());
                            let _ = c.recv((me + m - 1) % m, i as u32).await;
                        }
                        Op::Allreduce { .. } => {
                            let spec = CollectiveSpec::new(CollectiveKind::Allreduce)
                                .payload(ulfm_sim::collectives::encode_i64s(&[1]));
                            let _ = collective(c, spec).await;
                        }
                        Op::Ack { .. } => c.failure_ack(),
                        _ => {}
                    }
                }
            }
        })
        .map_err(|e| e.to_string())?;
        let crashes = rng.gen_range(1..=2);
        for j in 0..crashes {
            let v = RankId::from((rng.gen_range(0..n) + j) % n);
            let _ = sim.crash(v, VirtualTime(rng.gen_range(0..6000)));
        }
        match sim.run() {
            Ok(_) => Ok((sim.scope_audit(), false)),
            // A rank that acked a failure can wait forever on a peer whose
            // send raised for that same failure. That is the program's
            // deadlock, and the classifications made so far still count.
            Err(SimError::Livelock { .. }) => Ok((sim.scope_audit(), true)),
            Err(e) => Err(format!("seed {seed}: {e}")),
        }
    }
}

pub mod revoke {
    use std::cell::Cell;
    use std::collections::BTreeMap;
    use std::rc::Rc;

    use bytes::Bytes;
    use ulfm_sim::{
        agree, collective, Bits, CollectiveKind, CollectiveSpec, CommError, Communicator, ContextId, ErrorClass,
        HeartbeatConfig, LinkModel, RankId, SimConfig, Simulation, VirtualTime,
    };

    use super::Outcomes;

    pub const ALPHA: u64 = 100;
    pub const HB: HeartbeatConfig = HeartbeatConfig {
        enabled: true,
        period: 10 * ALPHA,
        timeout: 30 * ALPHA,
    };
    /// Slack for a revoke to reach everyone: flood depth plus one detection
    /// when a forwarder has died.
    pub const BOUND: u64 = 2 * HB.timeout + HB.period + 40 * ALPHA;

    #[derive(Clone, Debug)]
    pub struct Seen {
        /// When this rank's loop first got ERR_REVOKED.
        pub revoked_at: VirtualTime,
        /// Operations started with the revoke already known that did not
        /// return ERR_REVOKED.
        pub ops_after: u32,
        /// Send, receive and collective after the revoke all refused.
        pub next_refused: bool,
        pub agree_class: ErrorClass,
        pub shrunk: (Vec<RankId>, ContextId),
        pub fresh_ok: bool,
    }

    pub struct Run {
        pub n: usize,
        pub revoker: RankId,
        pub revoke_at: VirtualTime,
        pub crashed: Option<RankId>,
        pub seen: BTreeMap<RankId, Seen>,
    }

    /// Every rank loops on barriers until one reports ERR_REVOKED; a seeded
    /// rank revokes at a seeded time. A third of the seeds also crash
    /// another rank shortly after the revoke.
    pub fn run(n: usize, seed: u64) -> Run {
        let revoker = RankId::from((seed * 7 % n as u64) as usize);
        let revoke_at = VirtualTime(seed * 131 % 3000 + 1);
        let crashed = seed
            .is_multiple_of(3)
            .then(|| RankId::from(((revoker.index() as u64 + 1 + seed % (n as u64 - 1)) % n as u64) as usize));
        let out = Outcomes::new();
        let o = out.clone();
        let issued = Rc::new(Cell::new(VirtualTime(u64::MAX)));
        let at = issued.clone();
        let cfg = SimConfig::new(n).link(LinkModel::new(ALPHA, 1)).detector(HB).seed(seed);
        let sim = Simulation::spawn_job(cfg, move |p| {
            let o = o.clone();
            let at = at.clone();
            async move {
                let w = Communicator::world(&p).unwrap();
                let me = w.local_rank();
                let mut ops_after = 0;
                let mut rounds = 0;
                loop {
                    if p.rank() == revoker && p.now() >= revoke_at && !w.is_revoked() {
                        w.revoke();
                        at.set(p.now());
                    }
                    let known = w.is_revoked();
                    let res = collective(&w, CollectiveSpec::new(CollectiveKind::Barrier)).await;
                    if known && res != Err(CommError::Revoked) {
                        ops_after += 1;
                    }
                    if res == Err(CommError::Revoked) {
                        break;
                    }
                    rounds += 1;
                    assert!(rounds < 10_000, "rank {} never saw the revoke", p.rank());
                    p.sleep(ALPHA / 2 + p.random_range(0, ALPHA)).await;
                }
                let revoked_at = p.now();
                let next_refused = w.send((me + 1) % w.size(), 0, Bytes::new()) == Err(CommError::Revoked)
                    && w.recv((me + 1) % w.size(), 0).await == Err(CommError::Revoked)
                    && collective(&w, CollectiveSpec::new(CollectiveKind::Bcast)).await == Err(CommError::Revoked);
                let (_, agree_class) = agree(&w, &Bits::ones(1)).await;
                let s = w.shrink().await;
                let fresh_ok = !s.comm.is_revoked();
                o.put(
                    p.rank(),
                    Seen {
                        revoked_at,
                        ops_after,
                        next_refused,
                        agree_class,
                        shrunk: (s.comm.group().to_vec(), s.comm.cid()),
                        fresh_ok,
                    },
                );
            }
        })
        .unwrap();
        if let Some(c) = crashed {
            sim.crash(c, revoke_at.after(ALPHA / 2)).unwrap();
        }
        sim.run().unwrap();
        Run {
            n,
            revoker,
            revoke_at: issued.get(),
            crashed,
            seen: out.all(),
        }
    }

    pub fn check(run: &Run) -> Result<(), String> {
        let live: Vec<RankId> = (0..run.n)
            .map(RankId::from)
            .filter(|&r| Some(r) != run.crashed)
            .collect();
        let first = run.seen.values().next().ok_or("nobody finished")?.shrunk.clone();
        for r in &live {
            let s = run.seen.get(r).ok_or_else(|| format!("rank {r} did not finish"))?;
            if s.revoked_at.ticks() > run.revoke_at.ticks() + BOUND {
                return Err(format!(
                    "rank {r} saw the revoke at {}, issued at {}",
                    s.revoked_at, run.revoke_at
                ));
            }
            if s.ops_after > 0 {
                return Err(format!("rank {r}: {} operations ignored a known revoke", s.ops_after));
            }
            if !s.next_refused {
                return Err(format!("rank {r}: an operation after the revoke was not refused"));
            }
            if run.crashed.is_none() && s.agree_class != ErrorClass::Success {
                return Err(format!("rank {r}: agree returned {:?}", s.agree_class));
            }
            if s.shrunk != first || !s.fresh_ok {
                return Err(format!("rank {r}: shrink gave {:?}, rank 0 side {first:?}", s.shrunk));
            }
        }
        let _ = run.revoker;
        Ok(())
    }
}
