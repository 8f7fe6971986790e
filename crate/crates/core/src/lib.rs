//! Fault-tolerant message passing over a deterministic discrete-event
//! simulator.
//!
//! A [`Simulation`] hosts a job of ranks, each running an async program
//! against a [`Process`]. Programs build [`Communicator`]s on top of it and
//! use the failure-aware operations: scoped error raising, revoke,
//! agreement, collectives with local or uniform completion, shrink, split
//! and buddy checkpoints. Virtual time only advances through the event
//! queue, so every run with the same seed is bit-identical.
//!
//! ```
//! use ulfm_sim::{agree, Bits, Communicator, RankId, SimConfig, Simulation, VirtualTime};
//!
//! # fn main() -> Result<(), ulfm_sim::SimError> {
//! let sim = Simulation::spawn_job(SimConfig::new(8).seed(7), |p| async move {
//!     let world = Communicator::world(&p).unwrap();
//!     let (bits, _) = agree(&world, &Bits::ones(1)).await;
//!     assert!(bits.get(0));
//!     let repaired = world.shrink().await;
//!     assert_eq!(repaired.comm.size(), 7);
//! })?;
//! sim.crash(RankId(3), VirtualTime(150))?;
//! sim.run()?;
//! # Ok(())
//! # }
//! ```

pub mod agreement;
pub mod bench;
pub mod bits;
pub mod collectives;
pub mod comm;
pub mod detector;
pub mod error;
mod node;
pub mod recovery;
pub mod request;
pub mod simnet;
mod wire;

pub use agreement::{agree, iagree};
pub use bits::Bits;
pub use collectives::{collective, icollective, CollectiveKind, CollectiveSpec, ReduceOp};
pub use comm::{CommError, Communicator, ContextId, ErrorClass, ErrorScope, UniformityMode, UsageError};
pub use detector::{FailureRecord, HeartbeatConfig, Pathway};
pub use error::SimError;
pub use recovery::{ShrinkOutcome, ShrinkPhase, ShrinkState};
pub use request::{Request, RequestKind};
pub use simnet::{LinkModel, Process, RankId, SimConfig, Simulation, Tag, VirtualTime};
