//! Tools for fully-actuated multirotors whose arms rotate about their own
//! long axis: hover-efficiency analysis of arm layouts, SQP control
//! allocation with a pseudoinverse baseline, and a closed-loop flight
//! simulator for sweep maneuvers.

pub mod allocation;
pub mod efficiency;
pub mod error;
pub mod export;
pub mod geometry;
pub mod simulation;
pub mod spatial;

pub use error::{Error, Result};
