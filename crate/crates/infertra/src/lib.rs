//! Trajectory inference on road networks.
//!
//! Given a directed road network and a database of historical trajectories,
//! the engine learns a network mobility model (time-binned edge affinities
//! plus speed profiles) offline, then answers online queries about sparse
//! observations: destination-biased random walks with restarts produce an
//! *uncertain trajectory* — an edge-weighted subgraph whose weights are
//! traversal marginals — from which most-likely routes, per-node visit
//! likelihoods, location-at-time and time-at-node distributions all follow.
//!
//! Modules mirror the pipeline: [`network`] and [`trajectory`] hold the
//! data model, [`nmm`] the offline learning, [`inference`] the sampler,
//! [`uncertain`] the result type and its query surface, [`oracle`] the slow
//! exact reference implementations, [`eval`] the scoring harness and
//! [`datagen`] synthetic inputs.

pub mod datagen;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod inference;
pub mod network;
pub mod nmm;
pub mod oracle;
pub mod time;
pub mod trajectory;
pub mod uncertain;

pub use error::{Error, Result};

/// Runs `f` inside a dedicated rayon pool of `threads` workers
/// (`0` = one worker per CPU).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool");
    pool.install(f)
}

/// Derives a per-item seed from a base seed and a string key (FNV-1a), so
/// batch runs give every item its own reproducible stream.
pub fn inference_seed(base: u64, key: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ base;
    for b in key.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
