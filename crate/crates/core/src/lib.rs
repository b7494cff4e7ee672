//! Perception scheduling engine: decides per frame which perception modules
//! to run by weighing entropy-based information gain against inference cost,
//! plus a virtual-time harness for comparing scheduling policies.

pub mod change;
pub mod config;
pub mod engine;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod reward;
pub mod scene;
pub mod scheduler;
pub mod toolkit;
pub mod tracker;

pub use error::{Error, Result};
