//! Seeded city-scale taxi fleet simulation and planning.
//!
//! The crate is organised bottom-up:
//!
//! * [`graph`] holds the immutable street network with its sector partition.
//! * [`sim`] is the discrete-time episode engine (requests, state, transition, stage cost).
//! * [`events`] turns review and title embeddings into one dense feature per sector.
//! * [`predict`] is the hourly demand predictor (a small feed-forward network trained with Adam)
//!   together with the historical-average baseline and the percent-error metric.
//! * [`assign`] converts hourly predictions into minute-level arrival processes and
//!   intersection-level pickup/drop-off distributions.
//! * [`policy`] has the planners: greedy, instantaneous assignment, one-agent-at-a-time
//!   rollout and the full-information auction oracle.
//! * [`harness`] wires everything into reproducible benchmarks.

// `!(x >= 0.0)` style checks reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assign;
pub mod error;
pub mod events;
pub mod graph;
pub mod harness;
pub mod policy;
pub mod predict;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
pub use graph::{CityGraph, NodeId, Route, SectorId};
pub use sim::{Control, PolicyTrace, Request, RequestId, SystemState};
