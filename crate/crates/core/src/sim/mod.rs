//! Domain simulators driven by the gate.

pub mod building;
pub mod power;
pub mod traffic;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::GovernanceConfig;
use crate::gating::{GateError, RunMode, SimulationReport};
use crate::monitors::MonitorError;
use crate::report::Table;

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Gate(#[from] GateError),
    #[error(transparent)]
    Monitor(#[from] MonitorError),
    /// A property the run is supposed to guarantee did not hold.
    #[error("invariant breached: {0}")]
    Invariant(String),
}

impl CaseError {
    pub fn is_invariant(&self) -> bool {
        matches!(self, CaseError::Invariant(_))
    }
}

/// Read a JSON scenario file.
pub fn load_scenario<T: DeserializeOwned>(path: &Path) -> Result<T, CaseError> {
    let text = std::fs::read_to_string(path).map_err(|source| CaseError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| CaseError::Scenario(format!("{}: {e}", path.display())))
}

/// The three evaluation cases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    Power,
    Building,
    Traffic,
}

impl Case {
    pub const ALL: [Case; 3] = [Case::Power, Case::Building, Case::Traffic];

    pub fn as_str(self) -> &'static str {
        match self {
            Case::Power => "power",
            Case::Building => "building",
            Case::Traffic => "traffic",
        }
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Case {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Case::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown case `{s}` (expected power, building or traffic)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CaseScenario {
    Power(power::PowerScenario),
    Building(building::BuildingScenario),
    Traffic(traffic::TrafficScenario),
}

impl CaseScenario {
    /// Built-in calibrated fixture. The building day has no random inputs,
    /// so `seed` only affects power and traffic.
    pub fn fixture(case: Case, seed: Option<u64>) -> Self {
        match case {
            Case::Power => CaseScenario::Power(power::fixture(seed.unwrap_or(power::DEFAULT_SEED))),
            Case::Building => CaseScenario::Building(building::cold_day()),
            Case::Traffic => CaseScenario::Traffic(traffic::fixture(seed.unwrap_or(traffic::DEFAULT_SEED))),
        }
    }

    pub fn load(case: Case, path: &Path) -> Result<Self, CaseError> {
        Ok(match case {
            Case::Power => CaseScenario::Power(load_scenario(path)?),
            Case::Building => CaseScenario::Building(load_scenario(path)?),
            Case::Traffic => CaseScenario::Traffic(load_scenario(path)?),
        })
    }

    pub fn case(&self) -> Case {
        match self {
            CaseScenario::Power(_) => Case::Power,
            CaseScenario::Building(_) => Case::Building,
            CaseScenario::Traffic(_) => Case::Traffic,
        }
    }

    pub fn to_json(&self) -> Result<String, serde_json::Error> {
        match self {
            CaseScenario::Power(s) => serde_json::to_string_pretty(s),
            CaseScenario::Building(s) => serde_json::to_string_pretty(s),
            CaseScenario::Traffic(s) => serde_json::to_string_pretty(s),
        }
    }
}

#[derive(Debug, Clone)]
pub enum CaseOutcome {
    Power(power::PowerCase),
    Building(building::BuildingCase),
    Traffic(traffic::TrafficCase),
}

impl CaseOutcome {
    pub fn run(&self) -> &SimulationReport {
        match self {
            CaseOutcome::Power(c) => &c.run,
            CaseOutcome::Building(c) => &c.run,
            CaseOutcome::Traffic(c) => &c.run,
        }
    }

    pub fn tables(&self) -> Vec<Table> {
        match self {
            CaseOutcome::Power(c) => vec![c.table()],
            CaseOutcome::Building(c) => vec![c.table()],
            CaseOutcome::Traffic(c) => vec![c.delay_table(), c.headway_table()],
        }
    }
}

pub fn run_case(scenario: &CaseScenario, config: &GovernanceConfig, mode: RunMode) -> Result<CaseOutcome, CaseError> {
    Ok(match scenario {
        CaseScenario::Power(s) => CaseOutcome::Power(power::run_power_case(s, config, mode)?),
        CaseScenario::Building(s) => CaseOutcome::Building(building::run_building_case(s, config, mode)?),
        CaseScenario::Traffic(s) => CaseOutcome::Traffic(traffic::run_traffic_case(s, config, mode)?),
    })
}

pub(crate) fn sim_error(step: usize, message: impl Into<String>) -> GateError {
    GateError::Simulation {
        step,
        message: message.into(),
    }
}

/// Linear-interpolated percentile (`p` in [0, 100]) of unsorted data.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = p / 100.0 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (rank - lo as f64)
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}
