//! Deterministic discrete-event simulator for comparing content distribution
//! models: plain WWW unicast, a BitTorrent-like swarm, and a hybrid model that
//! augments the swarm with island-scoped multicast plus a chunk handshake for
//! unicast repair.
//!
//! The crate is organized around six pieces:
//!
//! * [`topology`] — network graphs, static routing, multicast scope
//! * [`engine`] — event queue, links, drop-tail queues, loss, CBR, reliable flows
//! * [`chunking`] — piece maker/assembler with digest verification
//! * [`protocols`] — the three distribution models as state machines
//! * [`metrics`] — per-link byte/stress ledgers, completion records, CSV export
//! * [`experiment`] — seeded multi-run experiments, sweeps, and model comparison

pub mod chunking;
pub mod engine;
pub mod experiment;
pub mod metrics;
pub mod protocols;
pub mod rng;
pub mod time;
pub mod topology;

pub use time::SimTime;
