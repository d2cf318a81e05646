//! Link-level Monte-Carlo simulator for buffer-aided cooperative MIMO
//! relaying with max-min distance relay selection.
//!
//! Three protocols are simulated over Rayleigh block fading with BPSK and
//! exhaustive ML detection:
//!
//! * `switched-max-link`: per slot, either direct transmission or the best
//!   source-relay / relay-destination link, whichever has the larger minimum
//!   candidate distance;
//! * `max-link`: always the best available relay link;
//! * `direct`: conventional MIMO from source to destination.

pub mod channel;
pub mod detection;
pub mod engine;
pub mod model;
pub mod selection;
pub mod sweep;

#[cfg(test)]
mod testutil;

pub use engine::{run_simulation, run_simulation_with, DecisionCounts, NetworkState, RunResult};
pub use model::{Fallback, Protocol, SimConfig};
