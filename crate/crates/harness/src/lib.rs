//! Scenario-driven simulator for observer-based attack detection on
//! networked control loops: scenario configuration, two-node lockstep
//! execution over in-process or TCP transport, the wire codec, adversary
//! placement, CSV/JSON reporting and the identity suites.

pub mod adversary;
pub mod codec;
pub mod error;
pub mod nodes;
pub mod report;
pub mod runner;
pub mod scenario;
pub mod verify;

pub use error::{HarnessError, Result};
