//! Discrete-event simulation of RRC signaling load in a UMTS radio access
//! network, with paging states, fast dormancy and KPI reporting.

pub mod audit;
pub mod config;
pub mod dormancy;
pub mod engine;
pub mod kpi;
pub mod mobility;
pub mod radio;
pub mod rng;
pub mod rrc;
pub mod runner;
pub mod sim;
pub mod traffic;

pub use config::{ConfigError, ConfigSource, ScenarioConfig};
pub use engine::{CellId, Effect, EventKind, SimTime, UeId};
pub use kpi::{compare, DeltaTable, KpiReport};
pub use rrc::RrcState;
pub use sim::{simulate, SimError, SimOptions, SimOutput, Simulation};
