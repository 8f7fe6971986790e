use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::rc::Rc;

use bytes::Bytes;
use rayon::prelude::*;

use super::{BenchConfig, BenchRecord, BenchReport, Metric};
use crate::agreement::agree;
use crate::bits::Bits;
use crate::collectives::{collective, decode_i64s, encode_i64s, CollectiveKind, CollectiveSpec};
use crate::comm::{Communicator, INFO_ERROR_UNIFORM};
use crate::detector::{HeartbeatConfig, Pathway};
use crate::error::SimError;
use crate::recovery::{buddy_restore, buddy_store_sized, replacement_for};
use crate::simnet::{RankId, SimConfig, Simulation, VirtualTime};

/// Ping-pong round trips per latency sample.
const REPS: u64 = 10;
/// Subcommunicators in the concurrent repair family.
const GROUPS: usize = 8;

type Slots<T> = Rc<RefCell<BTreeMap<RankId, T>>>;

/// Per-point context shared by the families.
struct Point<'a> {
    cfg: &'a BenchConfig,
    variant: String,
    size: u64,
    k: usize,
    seed: u64,
    iteration: u32,
    report: BenchReport,
}

impl<'a> Point<'a> {
    fn new(cfg: &'a BenchConfig, variant: impl Into<String>, size: u64, k: usize, iteration: u32) -> Self {
        Self {
            cfg,
            variant: variant.into(),
            size,
            k,
            seed: cfg.seed.wrapping_add(iteration as u64),
            iteration,
            report: BenchReport::default(),
        }
    }

    fn sim_config(&self) -> SimConfig {
        SimConfig::new(self.cfg.ranks)
            .link(self.cfg.link)
            .detector(self.cfg.detector)
            .seed(self.seed)
            .trace(self.cfg.trace)
    }

    fn record(&mut self, metric: Metric, value: f64) {
        self.report.records.push(BenchRecord {
            benchmark: self.cfg.benchmark,
            variant: self.variant.clone(),
            ranks: self.cfg.ranks,
            size_bytes: self.size,
            k: self.k,
            seed: self.seed,
            iteration: self.iteration,
            metric,
            value,
        });
    }

    fn violation(&mut self, msg: impl std::fmt::Display) {
        let label = format!(
            "{} {} size={} k={} iteration={}",
            self.cfg.benchmark, self.variant, self.size, self.k, self.iteration
        );
        self.report.violations.push(format!("{label}: {msg}"));
    }

    /// Runs `sim` and applies the checks common to every family.
    fn run(&mut self, sim: &Simulation) -> Result<VirtualTime, SimError> {
        let end = sim.run()?;
        let audit = sim.scope_audit();
        if audit.violations > 0 {
            self.violation(format!(
                "{} of {} error scope checks not nested",
                audit.violations, audit.checks
            ));
        }
        if self.cfg.trace {
            self.report.traces.push(format!(
                "# benchmark={} variant={} size={} k={} iteration={}",
                self.cfg.benchmark, self.variant, self.size, self.k, self.iteration
            ));
            self.report.traces.extend(sim.trace().iter().map(|r| r.to_string()));
        }
        Ok(end)
    }
}

fn slots<T>() -> Slots<T> {
    Rc::new(RefCell::new(BTreeMap::new()))
}

/// Runs the points in parallel and concatenates their reports in order.
fn gather<P: Sync + Send>(
    points: &[P],
    run: impl Fn(&P) -> Result<BenchReport, SimError> + Sync + Send,
) -> Result<BenchReport, SimError> {
    let parts: Vec<BenchReport> = points.par_iter().map(run).collect::<Result<_, _>>()?;
    let mut out = BenchReport::default();
    for p in parts {
        out.merge(p);
    }
    Ok(out)
}

fn seeded_rank(seed: u64, n: usize) -> RankId {
    // Never rank 0, so the lowest live member stays fixed.
    RankId::from(1 + (seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) >> 33) as usize % (n - 1))
}

// ---- scope_overhead ----------------------------------------------------

pub(super) fn scope_overhead(cfg: &BenchConfig) -> Result<BenchReport, SimError> {
    let points: Vec<(u64, u32)> = cfg
        .sizes
        .iter()
        .flat_map(|&s| (0..cfg.iterations).map(move |i| (s, i)))
        .collect();
    gather(&points, |&(size, it)| {
        let off = overhead_point(cfg, size, it, false)?;
        let on = overhead_point(cfg, size, it, true)?;
        let mut report = BenchReport::default();
        let lat = |r: &BenchReport| {
            r.records
                .iter()
                .find(|x| x.metric == Metric::LatencyTicks)
                .map(|x| x.value)
        };
        if lat(&off) != lat(&on) {
            report.violations.push(format!(
                "scope_overhead size={size} iteration={it}: latency differs with detector on"
            ));
        }
        report.merge(off);
        report.merge(on);
        Ok(report)
    })
}

fn overhead_point(cfg: &BenchConfig, size: u64, it: u32, on: bool) -> Result<BenchReport, SimError> {
    let variant = if on { "detector_on" } else { "detector_off" };
    let mut p = Point::new(cfg, variant, size, 1, it);
    let hb = HeartbeatConfig {
        enabled: on,
        ..cfg.detector
    };
    let n = cfg.ranks;
    // Idle long enough for several whole periods after the ping-pong.
    let pingpong = 2 * REPS * cfg.link.delivery_delay(size);
    let periods = pingpong / hb.period + 4;
    let window = periods * hb.period + hb.period / 2;
    let rtt = slots();
    let out = rtt.clone();
    let sim = Simulation::spawn_job(p.sim_config().detector(hb), move |proc| {
        let out = out.clone();
        async move {
            let w = Communicator::world(&proc).unwrap();
            let me = w.local_rank();
            if me < 2 {
                let start = proc.now();
                for i in 0..REPS as u32 {
                    if me == 0 {
                        w.send_sized(1, i, Bytes::new(), size).unwrap();
                        w.recv(1, i).await.unwrap();
                    } else {
                        w.recv(0, i).await.unwrap();
                        w.send_sized(0, i, Bytes::new(), size).unwrap();
                    }
                }
                out.borrow_mut().insert(proc.rank(), proc.now().since(start));
            }
            let rest = window.saturating_sub(proc.now().ticks());
            proc.sleep(rest).await;
        }
    })?;
    p.run(&sim)?;
    let stats = sim.stats();
    let extra = stats.total() - stats.user;
    let per_period = extra as f64 / periods as f64;
    let rtt = rtt.borrow()[&RankId(0)];
    p.record(Metric::LatencyTicks, rtt as f64 / (2 * REPS) as f64);
    p.record(Metric::MsgCount, per_period);
    let expect = if on { n as u64 * periods } else { 0 };
    if extra != expect {
        p.violation(format!(
            "{extra} detector messages over {periods} periods, expected {expect}"
        ));
    }
    let oob = (0..n)
        .flat_map(|r| sim.failure_records(RankId::from(r)))
        .filter(|f| f.pathway == Pathway::OutOfBand)
        .count();
    if oob > 0 {
        p.violation(format!("{oob} out-of-band records without a crash"));
    }
    Ok(p.report)
}

// ---- uniform_latency ---------------------------------------------------

/// Variant prefix used for a collective kind.
pub fn kind_name(kind: CollectiveKind) -> &'static str {
    match kind {
        CollectiveKind::Barrier => "barrier",
        CollectiveKind::Bcast => "bcast",
        CollectiveKind::Reduce => "reduce",
        CollectiveKind::Allreduce => "allreduce",
    }
}

const KINDS: [CollectiveKind; 4] = [
    CollectiveKind::Bcast,
    CollectiveKind::Reduce,
    CollectiveKind::Allreduce,
    CollectiveKind::Barrier,
];

#[derive(Clone, Copy)]
enum LatencyOp {
    Collective(CollectiveKind, bool),
    Agree,
}

pub(super) fn uniform_latency(cfg: &BenchConfig) -> Result<BenchReport, SimError> {
    let mut points = Vec::new();
    for &size in &cfg.sizes {
        for it in 0..cfg.iterations {
            for kind in KINDS {
                for uniform in [false, true] {
                    points.push((size, it, LatencyOp::Collective(kind, uniform)));
                }
            }
            points.push((size, it, LatencyOp::Agree));
        }
    }
    gather(&points, |&(size, it, op)| latency_point(cfg, size, it, op))
}

fn latency_point(cfg: &BenchConfig, size: u64, it: u32, op: LatencyOp) -> Result<BenchReport, SimError> {
    let variant = match op {
        LatencyOp::Collective(kind, false) => format!("{}_local", kind_name(kind)),
        LatencyOp::Collective(kind, true) => format!("{}_uniform", kind_name(kind)),
        LatencyOp::Agree => "agree".to_string(),
    };
    let mut p = Point::new(cfg, variant, size, 1, it);
    let n = cfg.ranks;
    let done = slots();
    let out = done.clone();
    let sim = Simulation::spawn_job(p.sim_config(), move |proc| {
        let out = out.clone();
        async move {
            let w = Communicator::world(&proc).unwrap();
            let me = proc.rank();
            let res = match op {
                LatencyOp::Agree => {
                    let (_, class) = agree(&w, &Bits::ones(1)).await;
                    class.into_result().map(|_| Bytes::new())
                }
                LatencyOp::Collective(kind, uniform) => {
                    if uniform {
                        w.set_info(INFO_ERROR_UNIFORM, "true").unwrap();
                    }
                    let spec = CollectiveSpec::new(kind)
                        .payload(encode_i64s(&[me.0 as i64 + 1]))
                        .charge(size);
                    collective(&w, spec).await
                }
            };
            out.borrow_mut().insert(me, (res, proc.now()));
        }
    })?;
    p.run(&sim)?;
    let done = done.borrow();
    let times: Vec<u64> = done.values().map(|(_, t)| t.ticks()).collect();
    let (lo, hi) = (*times.iter().min().unwrap(), *times.iter().max().unwrap());
    p.record(Metric::LatencyTicks, hi as f64);
    p.record(Metric::CompletionSpreadTicks, (hi - lo) as f64);
    p.record(Metric::MsgCount, sim.stats().total() as f64);
    let sum: i64 = (1..=n as i64).sum();
    for (r, (res, _)) in done.iter() {
        match (res, op) {
            (Err(e), _) => p.violation(format!("rank {r} failed: {e}")),
            (Ok(v), LatencyOp::Collective(CollectiveKind::Allreduce, _)) if decode_i64s(v) != [sum] => {
                p.violation(format!("rank {r} allreduce result {:?}", decode_i64s(v)))
            }
            (Ok(v), LatencyOp::Collective(CollectiveKind::Reduce, _)) if r.0 == 0 && decode_i64s(v) != [sum] => {
                p.violation(format!("root reduce result {:?}", decode_i64s(v)))
            }
            (Ok(v), LatencyOp::Collective(CollectiveKind::Bcast, _)) if decode_i64s(v) != [1] => {
                p.violation(format!("rank {r} bcast result {:?}", decode_i64s(v)))
            }
            _ => {}
        }
    }
    if matches!(op, LatencyOp::Collective(_, true)) && hi != lo {
        p.violation(format!("uniform completion spread {}", hi - lo));
    }
    Ok(p.report)
}

// ---- ishrink_concurrent ------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq)]
enum Repair {
    Blocking,
    Nonblocking,
}

/// Per-rank result: (group, cid) of every repaired communicator and the
/// completion time.
type Repaired = (Vec<(Vec<RankId>, u32)>, VirtualTime);

pub(super) fn ishrink_concurrent(cfg: &BenchConfig) -> Result<BenchReport, SimError> {
    let mut points = Vec::new();
    for &k in &cfg.k_list {
        for it in 0..cfg.iterations {
            for mode in [Repair::Blocking, Repair::Nonblocking] {
                points.push((k, it, mode));
            }
        }
    }
    gather(&points, |&(k, it, mode)| concurrent_point(cfg, k, it, mode))
}

fn concurrent_job(
    p: &Point,
    k: usize,
    mode: Repair,
    crash: Option<(RankId, VirtualTime)>,
) -> Result<(Simulation, Slots<VirtualTime>, Slots<Repaired>), SimError> {
    let n = p.cfg.ranks;
    let ready = slots();
    let done = slots();
    let (rd, dn) = (ready.clone(), done.clone());
    let start = crash.map(|c| c.1);
    let sim = Simulation::spawn_job(p.sim_config(), move |proc| {
        let (rd, dn) = (rd.clone(), dn.clone());
        async move {
            let w = Communicator::world(&proc).unwrap();
            let color = (proc.rank().index() * GROUPS / n) as u32;
            let group = w.derive(Some(color), 0).await.unwrap().unwrap();
            let mut comms = Vec::with_capacity(k);
            for _ in 0..k {
                comms.push(group.derive(Some(0), 0).await.unwrap().unwrap());
            }
            rd.borrow_mut().insert(proc.rank(), proc.now());
            let Some(t0) = start else { return };
            proc.sleep(t0.since(proc.now())).await;
            let mut out = Vec::with_capacity(k);
            match mode {
                Repair::Blocking => {
                    for c in &comms {
                        let s = c.shrink().await;
                        out.push((s.comm.group().to_vec(), s.comm.cid().0));
                    }
                }
                Repair::Nonblocking => {
                    let reqs: Vec<_> = comms.iter().map(|c| c.ishrink()).collect();
                    for r in &reqs {
                        let s = r.wait().await;
                        out.push((s.comm.group().to_vec(), s.comm.cid().0));
                    }
                }
            }
            dn.borrow_mut().insert(proc.rank(), (out, proc.now()));
        }
    })?;
    if let Some((victim, at)) = crash {
        sim.crash(victim, at)?;
    }
    Ok((sim, ready, done))
}

fn concurrent_point(cfg: &BenchConfig, k: usize, it: u32, mode: Repair) -> Result<BenchReport, SimError> {
    let variant = match mode {
        Repair::Blocking => "blocking",
        Repair::Nonblocking => "nonblocking",
    };
    let mut p = Point::new(cfg, variant, 0, k, it);
    let n = cfg.ranks;
    let victim = seeded_rank(p.seed, n);
    // The setup is deterministic, so a crash-free dry run tells when every
    // rank holds its communicators.
    let (dry, ready, _) = concurrent_job(&p, k, mode, None)?;
    dry.run()?;
    let t0 = ready.borrow().values().max().copied().unwrap().after(1);
    let (sim, _, done) = concurrent_job(&p, k, mode, Some((victim, t0)))?;
    p.run(&sim)?;
    let done = done.borrow();
    let end = done.values().map(|(_, t)| *t).max().unwrap();
    let total = end.since(t0);
    p.record(Metric::PerCommRepairTicks, total as f64 / k as f64);
    p.record(Metric::TotalRecoveryTicks, total as f64);
    for r in (0..n).map(RankId::from).filter(|&r| r != victim) {
        let Some((comms, _)) = done.get(&r) else {
            p.violation(format!("rank {r} did not finish"));
            continue;
        };
        for (group, cid) in comms {
            if group.contains(&victim) {
                p.violation(format!("rank {r}: repaired comm {cid} still holds {victim}"));
            }
            for m in group {
                if !done.get(m).is_some_and(|(c, _)| c.contains(&(group.clone(), *cid))) {
                    p.violation(format!("rank {m} disagrees on comm {cid}"));
                }
            }
        }
    }
    Ok(p.report)
}

// ---- ishrink_ckpt ------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq)]
enum Recovery {
    ShrinkOnly,
    ReloadOnly,
    Serialized,
    Overlapped,
}

impl Recovery {
    fn name(self) -> &'static str {
        match self {
            Recovery::ShrinkOnly => "shrink_only",
            Recovery::ReloadOnly => "reload_only",
            Recovery::Serialized => "serialized",
            Recovery::Overlapped => "overlapped",
        }
    }
}

fn fingerprint(r: RankId) -> Bytes {
    Bytes::from(format!("dataset of rank {r}"))
}

pub(super) fn ishrink_ckpt(cfg: &BenchConfig) -> Result<BenchReport, SimError> {
    let mut points = Vec::new();
    for &size in &cfg.sizes {
        for it in 0..cfg.iterations {
            for mode in [
                Recovery::ShrinkOnly,
                Recovery::ReloadOnly,
                Recovery::Serialized,
                Recovery::Overlapped,
            ] {
                points.push((size, it, mode));
            }
        }
    }
    gather(&points, |&(size, it, mode)| ckpt_point(cfg, size, it, mode))
}

/// Result at each rank: the restored dataset, if this rank received one.
type Restored = (Option<Bytes>, VirtualTime);

fn ckpt_job(
    p: &Point,
    mode: Recovery,
    victim: RankId,
    start: Option<(VirtualTime, VirtualTime)>,
) -> Result<(Simulation, Slots<VirtualTime>, Slots<Restored>), SimError> {
    let size = p.size;
    let ready = slots();
    let done = slots();
    let (rd, dn) = (ready.clone(), done.clone());
    let sim = Simulation::spawn_job(p.sim_config(), move |proc| {
        let (rd, dn) = (rd.clone(), dn.clone());
        async move {
            let w = Communicator::world(&proc).unwrap();
            buddy_store_sized(&w, fingerprint(proc.rank()), size).await.unwrap();
            rd.borrow_mut().insert(proc.rank(), proc.now());
            let Some((_, begin)) = start else { return };
            proc.sleep(begin.since(proc.now())).await;
            let failed = BTreeSet::from([victim]);
            let repl = replacement_for(w.group(), &failed, victim).expect("a replacement exists");
            let restored = match mode {
                Recovery::ShrinkOnly => {
                    w.shrink().await;
                    None
                }
                Recovery::ReloadOnly => buddy_restore(&w, victim, repl).await.unwrap(),
                Recovery::Serialized => {
                    w.shrink().await;
                    buddy_restore(&w, victim, repl).await.unwrap()
                }
                Recovery::Overlapped => {
                    let req = w.ishrink();
                    let got = buddy_restore(&w, victim, repl).await.unwrap();
                    req.wait().await;
                    got
                }
            };
            dn.borrow_mut().insert(proc.rank(), (restored, proc.now()));
        }
    })?;
    if let Some((crash, _)) = start {
        sim.crash(victim, crash)?;
    }
    Ok((sim, ready, done))
}

fn ckpt_point(cfg: &BenchConfig, size: u64, it: u32, mode: Recovery) -> Result<BenchReport, SimError> {
    let mut p = Point::new(cfg, mode.name(), size, 1, it);
    let n = cfg.ranks;
    let victim = seeded_rank(p.seed, n);
    let (dry, ready, _) = ckpt_job(&p, mode, victim, None)?;
    dry.run()?;
    let crash = ready.borrow().values().max().copied().unwrap().after(1);
    // Recovery begins once the failure would have been reported.
    let begin = crash.after(2 * cfg.link.alpha);
    let (sim, _, done) = ckpt_job(&p, mode, victim, Some((crash, begin)))?;
    p.run(&sim)?;
    let done = done.borrow();
    let end = done.values().map(|(_, t)| *t).max().unwrap();
    p.record(Metric::TotalRecoveryTicks, end.since(begin) as f64);
    let repl = replacement_for(
        &(0..n).map(RankId::from).collect::<Vec<_>>(),
        &BTreeSet::from([victim]),
        victim,
    )
    .unwrap();
    if mode != Recovery::ShrinkOnly {
        match done.get(&repl) {
            Some((Some(d), _)) if *d == fingerprint(victim) => {}
            other => p.violation(format!("replacement {repl} restored {other:?}")),
        }
    }
    if done.len() != n - 1 {
        p.violation(format!("{} of {} survivors finished", done.len(), n - 1));
    }
    Ok(p.report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_victim_is_never_rank_zero() {
        for s in 0..500 {
            let r = seeded_rank(s, 7);
            assert!(r.0 >= 1 && r.0 < 7);
        }
    }
}
