//! Byzantine-tolerant atomic storage with proofs of writing.
//!
//! Single-writer (PoWerStore) and multi-writer (M-PoWerStore) variants over
//! `S = 3t + 1` servers, with erasure-coded values, sans-IO server and client
//! state machines, a deterministic network simulator and a linearizability
//! checker.

pub mod codec;
pub mod crypto;
pub mod erasure;
pub mod predicates;
pub mod types;
pub mod server;
pub mod client;
pub mod simnet;
pub mod checker;
pub mod scenario;
