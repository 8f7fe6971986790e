//! Workloads timed by the criterion benches under `benches/`.

use std::collections::BTreeSet;

use ulfm_sim::collectives::encode_i64s;
use ulfm_sim::comm::INFO_ERROR_UNIFORM;
use ulfm_sim::{
    agree, collective, Bits, CollectiveKind, CollectiveSpec, Communicator, RankId, SimConfig, Simulation, VirtualTime,
};

fn config(n: usize, seed: u64) -> SimConfig {
    SimConfig::new(n).seed(seed)
}

/// One agreement over all `n` ranks. Returns the number of events dispatched.
pub fn agree_once(n: usize, seed: u64) -> u64 {
    let sim = Simulation::spawn_job(config(n, seed), |proc| async move {
        let w = Communicator::world(&proc).unwrap();
        agree(&w, &Bits::ones(8)).await;
    })
    .unwrap();
    sim.run().unwrap();
    sim.events_dispatched()
}

/// A shrink of the world after `crashes` ranks fail at time zero.
pub fn shrink_after(n: usize, crashes: usize, seed: u64) -> u64 {
    let sim = Simulation::spawn_job(config(n, seed), |proc| async move {
        let w = Communicator::world(&proc).unwrap();
        w.shrink().await;
    })
    .unwrap();
    let victims: BTreeSet<usize> = (0..crashes).map(|i| 1 + (i * 7 + seed as usize) % (n - 1)).collect();
    for v in victims {
        sim.crash(RankId::from(v), VirtualTime::ZERO).unwrap();
    }
    sim.run().unwrap();
    sim.events_dispatched()
}

/// One collective of `kind` with `size` bytes charged per message.
pub fn collective_once(n: usize, kind: CollectiveKind, size: u64, uniform: bool) -> u64 {
    let sim = Simulation::spawn_job(config(n, 1), move |proc| async move {
        let w = Communicator::world(&proc).unwrap();
        if uniform {
            w.set_info(INFO_ERROR_UNIFORM, "true").unwrap();
        }
        let spec = CollectiveSpec::new(kind)
            .payload(encode_i64s(&[proc.rank().0 as i64]))
            .charge(size);
        collective(&w, spec).await.unwrap();
    })
    .unwrap();
    sim.run().unwrap();
    sim.events_dispatched()
}
