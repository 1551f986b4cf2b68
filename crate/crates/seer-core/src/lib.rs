//! Deterministic discrete-event simulation of a Raft cluster with
//! prediction-based leader election.
//!
//! The crate is organized bottom-up:
//!
//! - [`topology`]: network graphs (geographic edge lists, fat trees) and
//!   one-way propagation delays.
//! - [`predictors`]: per-replica performance prediction models (ordinary
//!   least squares, elastic net, and a small multilayer perceptron) behind a
//!   common facade with text serialization.
//! - [`novelty`]: local-outlier-factor based novelty detection over sampled
//!   system states.
//! - [`simnet`]: the event queue, per-replica resource state, workload and
//!   injection traces, and the run event log.
//! - [`raft`]: the replica consensus state machine.
//! - [`metrics`]: observation collection, smoothing, and training-sample
//!   assembly.
//! - [`elector`]: the prediction-driven leader election controller.
//! - [`scenario`]: flat key-value run configuration.
//! - [`sim`]: wiring of all of the above into a single deterministic run,
//!   plus the always-on safety auditor.
//! - [`report`]: summary statistics, ECDFs, and CSV emission.
//! - [`harness`]: single runs, paired runs, and parameter-grid campaigns.

pub mod elector;
pub mod harness;
pub mod metrics;
pub mod novelty;
pub mod predictors;
pub mod raft;
pub mod report;
pub mod scenario;
pub mod sim;
pub mod simnet;
pub mod topology;

mod rng;

pub use rng::derive_rng;
