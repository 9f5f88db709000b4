//! Scenario-driven simulator for the strategy validation protocol: agent policies, the epoch
//! engine, the event log, log verification, replay and metrics.

pub mod engine;
pub mod events;
pub mod metrics;
pub mod policy;
pub mod replay;
pub mod rng;
pub mod scenario;
pub mod verify;

pub use engine::{run, RunOutput};
pub use events::{Event, EventLog, Record};
pub use scenario::Scenario;
