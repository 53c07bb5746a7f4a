//! Hitting times, return times and hitting positions of rare events in
//! ergodic interval maps, simulated and checked against exact limit laws.

pub mod dynsys;
pub mod error;
pub mod experiment;
pub mod gmtheory;
pub mod inducing;
pub mod limits;
pub mod processes;
pub mod rare_events;
pub mod stats;

pub use error::{Error, Result};
