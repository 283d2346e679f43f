//! Run reports: the scenario echo, the command result, artifact paths and timings.
//! Everything except `timings` is a deterministic function of config and seeds.

use std::path::Path;

use serde::Serialize;

use crate::config::Config;
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timings {
    pub wall_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport<T: Serialize> {
    pub command: String,
    pub scenario: Config,
    pub result: T,
    pub artifacts: Vec<String>,
    pub timings: Timings,
}

impl<T: Serialize> RunReport<T> {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `report.json` into `dir` and records it among the artifacts.
    pub fn write(&mut self, dir: &Path) -> Result<String, CliError> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("report.json");
        let shown = path.display().to_string();
        if !self.artifacts.contains(&shown) {
            self.artifacts.push(shown.clone());
        }
        std::fs::write(&path, self.to_json())?;
        Ok(shown)
    }
}

/// The report with `timings` removed, for reproducibility comparisons.
pub fn without_timings(json: &str) -> Result<serde_json::Value, serde_json::Error> {
    let mut v: serde_json::Value = serde_json::from_str(json)?;
    if let Some(obj) = v.as_object_mut() {
        obj.remove("timings");
    }
    Ok(v)
}
