//! Balls-into-bins allocation processes over exact integer loads, with checkers for
//! allocation conditions, exact one-step expectation oracles, couplings and a
//! seeded experiment harness.

pub mod coupling;
pub mod error;
pub mod framework;
pub mod harness;
pub mod oracle;
pub mod process;
mod serde_ratio;
pub mod state;

pub use error::{Error, Result};
pub use process::{AllocationEvent, ProcessConfig, ProcessState, StopRule, TraceMode};
pub use state::{LoadState, PotentialReport, Rational, ScaledLoads};
