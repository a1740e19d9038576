//! Deterministic multi-miner network simulation.
//!
//! - [`config`]: declarative TOML scenario descriptions.
//! - [`engine`]: the tick loop — production draws, message delays,
//!   partitions, injections, cutoff changes, and the full observer.
//! - [`report`]: the comparable outcome record of one run.
//! - [`dump`]: the replayable chain dump file format.
//! - [`verify`]: independent replay and strong-rule validation of dumps.
//! - [`scenarios`]: the built-in scenario catalog.

pub mod config;
pub mod dump;
pub mod engine;
pub mod report;
pub mod scenarios;
pub mod verify;

pub use config::ScenarioConfig;
pub use dump::{read_dump, write_dump, ChainDump, VerdictRecord};
pub use engine::{run_scenario, RunError, SimOutcome};
pub use report::RunReport;
pub use scenarios::{scenario_names, scenario_toml};
pub use verify::{replay_dump, verify_dump};
