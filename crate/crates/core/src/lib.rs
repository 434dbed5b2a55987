//! Slot-synchronous simulation and analysis of multi-queue multi-server
//! systems whose queue/server links are random ON-OFF channels.
//!
//! The crate is `no_std` and only needs `alloc`. It contains:
//!
//! * [`model`]: connectivity, arrival and allocation types,
//! * [`policy`]: server-ordering / queue-selection allocation policies
//!   (AS/LCQ and the heuristic comparison policies),
//! * [`engine`]: the slotted backlog recursion and run statistics,
//! * [`capacity`]: capacity-region membership, the margin `m` and the
//!   Lyapunov occupancy bound,
//! * [`diagnostics`]: empirical stability, drift and conservation checks,
//! * [`oracle`]: exact stationary mean occupancy of tiny systems.
//!
//! IO, configuration files and the command line live in the `lcqsim` crate.
#![no_std]
#![forbid(unsafe_code)]
// `!(x < y)` is used on purpose so that NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod capacity;
pub mod diagnostics;
pub mod engine;
mod error;
pub mod model;
pub mod oracle;
pub mod policy;
pub mod rng;

pub use capacity::{CapacityReport, RateVector};
pub use diagnostics::{StabilityEstimate, Verdict, VerdictConfig};
pub use engine::{run_simulation, RunOptions, RunStats, Simulator, SlotRecord, SystemConfig};
pub use error::{Error, Result};
pub use model::{AllocationMatrix, ArrivalModel, ConnectivityMatrix, ConnectivityModel, QueueState};
pub use policy::{PolicySpec, QueueSelection, ServerOrdering, UpdateMode};
pub use rng::Streams;
