//! Grid-forming hybrid angle control of dc-ac converters: averaged plant
//! models, controller laws, a fixed-step simulator, equilibrium and
//! energy-function analysis, and the scenario runner behind the `hac` CLI.

pub mod analysis;
pub mod closed_loop;
pub mod config;
pub mod control;
pub mod error;
pub mod frames;
pub mod plant;
pub mod plot;
pub mod scenario;
pub mod sim;

pub use config::{parse_config, parse_config_with_overrides, Config};
pub use error::{Error, Result};
pub use scenario::{run_scenario, OutputOptions, RunReport, ScenarioName, ScenarioRun};
