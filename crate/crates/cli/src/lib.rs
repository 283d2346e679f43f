//! Scenario runner for qdyne-core: JSON configs, named presets and the
//! simulate / analyze / scaling / resolve / sweep pipelines behind the `qdyne` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod presets;
pub mod report;
pub mod scenario;

pub use config::Config;
pub use error::CliError;
pub use scenario::Scenario;
