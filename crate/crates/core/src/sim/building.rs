//! Single-zone community center on a winter day.
//!
//! A 1R1C envelope at 15-minute steps with an ideal heating controller that
//! drives the zone to its setpoint within capacity. The baseline scheduler
//! sets back at 20:00; seniors stay until 22:00. Staff can assert protected
//! occupancy over an interval, and the comfort fallback then holds a 20 °C
//! floor and ventilates to keep CO2 under 1000 ppm.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Domain, GovernanceConfig};
use crate::gating::{
    run_gated, ControlPolicy, FallbackBinding, GateClock, GateError, PolicyId, RunMode, Simulation, SimulationReport,
};
use crate::monitors::{accessibility_downtime, MonitorVector};
use crate::report::Table;
use crate::sim::{sim_error, CaseError};
use crate::Seconds;

pub const STEPS: usize = 96;
pub const STEP_HOURS: f64 = 0.25;
pub const STEP_SECONDS: Seconds = 900;
/// Steps the accessibility monitor looks ahead.
pub const LOOKAHEAD_STEPS: usize = 4;

pub const COMFORT_BOUNDS: &str = "comfort_bounds";
pub const NO_NIGHT_SETBACK_PROTECTED: &str = "no_night_setback_protected";
pub const PROTECTED_GROUP: &str = "seniors";

const TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum BuildingError {
    #[error("non-finite input to thermal step: {0}")]
    NonFinite(&'static str),
    #[error("time step must be positive")]
    NonPositiveStep,
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingParams {
    /// K per kW.
    pub thermal_resistance: f64,
    /// kWh per K.
    pub thermal_capacitance: f64,
    /// kW per occupant.
    pub internal_gain_per_occupant: f64,
    /// Constant internal gains (lighting, equipment), kW.
    pub base_gains: f64,
    /// kW thermal.
    pub hvac_heat_capacity: f64,
    pub hvac_cop: f64,
    /// Non-HVAC electrical load, kW.
    pub base_load: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VentilationParams {
    pub zone_volume_m3: f64,
    /// CO2 exhaled per occupant, m³/h.
    pub co2_per_occupant_m3h: f64,
    pub outdoor_co2_ppm: f64,
    /// Scheduled outdoor-air flow while the building is in occupied mode.
    pub scheduled_flow_m3h: f64,
    pub max_flow_m3h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComfortBounds {
    pub t_min_occupied: f64,
    pub t_max_occupied: f64,
    pub co2_max: f64,
}

impl Default for ComfortBounds {
    fn default() -> Self {
        ComfortBounds {
            t_min_occupied: 20.0,
            t_max_occupied: 24.0,
            co2_max: 1000.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetbackSchedule {
    pub comfort_c: f64,
    pub setback_c: f64,
    /// Seconds after midnight.
    pub occupied_from: Seconds,
    pub setback_from: Seconds,
}

impl Default for SetbackSchedule {
    fn default() -> Self {
        SetbackSchedule {
            comfort_c: 21.0,
            setback_c: 15.0,
            occupied_from: 6 * 3600,
            setback_from: 20 * 3600,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancySchedule {
    pub occupants: Vec<u32>,
    pub protected_present: Vec<bool>,
}

/// Staff assertion of protected occupancy over `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assertion {
    pub start: Seconds,
    pub end: Seconds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingScenario {
    pub scenario_id: String,
    pub params: BuildingParams,
    pub ventilation: VentilationParams,
    #[serde(default)]
    pub comfort: ComfortBounds,
    #[serde(default)]
    pub schedule: SetbackSchedule,
    /// Hourly outdoor temperature, 24 values.
    pub outdoor_temp_c: Vec<f64>,
    pub occupancy: OccupancySchedule,
    #[serde(default)]
    pub assertions: Vec<Assertion>,
    pub initial_temp_c: f64,
    pub initial_co2_ppm: f64,
}

impl BuildingScenario {
    pub fn validate(&self) -> Result<(), BuildingError> {
        let bad = |m: String| Err(BuildingError::Invalid(m));
        let p = &self.params;
        for (name, v) in [
            ("thermal_resistance", p.thermal_resistance),
            ("thermal_capacitance", p.thermal_capacitance),
            ("internal_gain_per_occupant", p.internal_gain_per_occupant),
            ("hvac_heat_capacity", p.hvac_heat_capacity),
            ("hvac_cop", p.hvac_cop),
            ("base_load", p.base_load),
            ("zone_volume_m3", self.ventilation.zone_volume_m3),
            ("max_flow_m3h", self.ventilation.max_flow_m3h),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.ventilation.max_flow_m3h * STEP_HOURS >= self.ventilation.zone_volume_m3 {
            return bad("ventilation would exchange the whole zone within one step".into());
        }
        if self.comfort.t_min_occupied >= self.comfort.t_max_occupied {
            return bad("t_min_occupied must be below t_max_occupied".into());
        }
        if self.outdoor_temp_c.len() != 24 {
            return bad(format!(
                "{} outdoor temperatures, expected 24",
                self.outdoor_temp_c.len()
            ));
        }
        let occ = &self.occupancy;
        if occ.occupants.len() != STEPS || occ.protected_present.len() != STEPS {
            return bad(format!("occupancy must have {STEPS} steps"));
        }
        if let Some(t) = (0..STEPS).find(|&t| occ.protected_present[t] && occ.occupants[t] == 0) {
            return bad(format!("step {t}: protected occupants present in an empty building"));
        }
        let horizon = STEPS as Seconds * STEP_SECONDS;
        for a in &self.assertions {
            if a.end < a.start || a.end > horizon {
                return bad(format!("assertion [{}, {}) outside the day", a.start, a.end));
            }
        }
        Ok(())
    }

    pub fn outdoor(&self, step: usize) -> f64 {
        self.outdoor_temp_c[(step / 4).min(23)]
    }

    pub fn asserted(&self, step: usize) -> bool {
        let t = step as Seconds * STEP_SECONDS;
        self.assertions.iter().any(|a| a.start <= t && t < a.end)
    }

    /// Protected occupants present and asserted by staff.
    pub fn known_protected(&self, step: usize) -> bool {
        self.occupancy.protected_present[step] && self.asserted(step)
    }
}

fn day_occupancy() -> OccupancySchedule {
    let mut occupants = vec![0; STEPS];
    let mut protected_present = vec![false; STEPS];
    for t in 0..STEPS {
        let hour = t / 4;
        if (8..14).contains(&hour) {
            occupants[t] = 30;
        } else if (14..22).contains(&hour) {
            occupants[t] = 20;
            protected_present[t] = true;
        }
    }
    OccupancySchedule {
        occupants,
        protected_present,
    }
}

fn outdoor_profile(mean: f64, swing: f64) -> Vec<f64> {
    (0..24)
        .map(|h| mean + swing * (2.0 * std::f64::consts::PI * (h as f64 + 0.5 - 9.0) / 24.0).sin())
        .collect()
}

/// Cold day: -12 °C mean, seniors from 14:00 until 22:00, staff assert
/// occupancy 20:00–22:00.
pub fn cold_day() -> BuildingScenario {
    BuildingScenario {
        scenario_id: "building-cold-day".into(),
        params: BuildingParams {
            thermal_resistance: 0.1,
            thermal_capacitance: 100.0,
            internal_gain_per_occupant: 0.1,
            base_gains: 5.0,
            hvac_heat_capacity: 600.0,
            hvac_cop: 1.07,
            base_load: 11.0,
        },
        ventilation: VentilationParams {
            zone_volume_m3: 3000.0,
            co2_per_occupant_m3h: 0.018,
            outdoor_co2_ppm: 420.0,
            scheduled_flow_m3h: 1500.0,
            max_flow_m3h: 6000.0,
        },
        comfort: ComfortBounds::default(),
        schedule: SetbackSchedule::default(),
        outdoor_temp_c: outdoor_profile(-12.0, 3.0),
        occupancy: day_occupancy(),
        assertions: vec![Assertion {
            start: 20 * 3600,
            end: 22 * 3600,
        }],
        initial_temp_c: 15.0,
        initial_co2_ppm: 420.0,
    }
}

/// Mild day: same building at 18 °C mean, where setback never reaches the
/// comfort floor before the seniors leave.
pub fn mild_day() -> BuildingScenario {
    BuildingScenario {
        scenario_id: "building-mild-day".into(),
        outdoor_temp_c: outdoor_profile(18.0, 2.0),
        initial_temp_c: 19.0,
        ..cold_day()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoneState {
    pub temp_c: f64,
    pub co2_ppm: f64,
}

/// One explicit step of the zone model.
///
/// `T' = T + dt/C · (hvac + gains·occupants + base_gains − (T − T_out)/R)`;
/// CO2 rises with occupant generation and falls with outdoor-air exchange.
#[allow(clippy::too_many_arguments)]
pub fn step_thermal(
    state: ZoneState,
    params: &BuildingParams,
    vent: &VentilationParams,
    outdoor_temp: f64,
    hvac_output_kw: f64,
    occupants: u32,
    ventilation_m3h: f64,
    dt_hours: f64,
) -> Result<ZoneState, BuildingError> {
    if !(dt_hours > 0.0) {
        return Err(BuildingError::NonPositiveStep);
    }
    for (name, v) in [
        ("temperature", state.temp_c),
        ("co2", state.co2_ppm),
        ("outdoor temperature", outdoor_temp),
        ("hvac output", hvac_output_kw),
        ("ventilation", ventilation_m3h),
    ] {
        if !v.is_finite() {
            return Err(BuildingError::NonFinite(name));
        }
    }
    let gains = params.internal_gain_per_occupant * occupants as f64 + params.base_gains;
    let loss = (state.temp_c - outdoor_temp) / params.thermal_resistance;
    let temp = state.temp_c + dt_hours / params.thermal_capacitance * (hvac_output_kw + gains - loss);
    let generation = vent.co2_per_occupant_m3h * occupants as f64 * 1e6 / vent.zone_volume_m3;
    let removal = ventilation_m3h / vent.zone_volume_m3 * (state.co2_ppm - vent.outdoor_co2_ppm);
    Ok(ZoneState {
        temp_c: temp,
        co2_ppm: state.co2_ppm + dt_hours * (generation - removal),
    })
}

/// Heat needed to land exactly on `setpoint` at the end of the step,
/// clipped to `[0, capacity]`.
pub fn heating_for_setpoint(
    state: ZoneState,
    params: &BuildingParams,
    outdoor_temp: f64,
    occupants: u32,
    setpoint: f64,
    dt_hours: f64,
) -> f64 {
    let gains = params.internal_gain_per_occupant * occupants as f64 + params.base_gains;
    let loss = (state.temp_c - outdoor_temp) / params.thermal_resistance;
    let needed = (setpoint - state.temp_c) * params.thermal_capacitance / dt_hours - gains + loss;
    needed.clamp(0.0, params.hvac_heat_capacity)
}

/// Outdoor-air flow that keeps end-of-step CO2 at or under `target`.
pub fn ventilation_for_co2(
    state: ZoneState,
    vent: &VentilationParams,
    occupants: u32,
    target: f64,
    dt_hours: f64,
) -> f64 {
    let generation = vent.co2_per_occupant_m3h * occupants as f64 * 1e6 / vent.zone_volume_m3;
    let excess = state.co2_ppm + dt_hours * generation - target;
    let lever = dt_hours * (state.co2_ppm - vent.outdoor_co2_ppm) / vent.zone_volume_m3;
    if excess <= 0.0 {
        0.0
    } else if lever <= 0.0 {
        vent.max_flow_m3h
    } else {
        (excess / lever).min(vent.max_flow_m3h)
    }
}

/// Setpoint at `time_of_day` seconds after midnight.
pub fn baseline_scheduler(schedule: &SetbackSchedule, time_of_day: Seconds) -> f64 {
    let tod = time_of_day % 86_400;
    if schedule.occupied_from <= tod && tod < schedule.setback_from {
        schedule.comfort_c
    } else {
        schedule.setback_c
    }
}

/// Per-step setpoint floor implied by staff assertions: the comfort minimum
/// wherever protected occupants are present and asserted.
pub fn r2o_occupancy_override(scenario: &BuildingScenario) -> Vec<Option<f64>> {
    (0..STEPS)
        .map(|t| scenario.known_protected(t).then_some(scenario.comfort.t_min_occupied))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HvacCommand {
    pub setpoint_c: f64,
    pub ventilation_m3h: f64,
}

fn scheduled_command(scenario: &BuildingScenario, step: usize) -> HvacCommand {
    let tod = step as Seconds * STEP_SECONDS;
    let s = &scenario.schedule;
    let occupied = s.occupied_from <= tod % 86_400 && tod % 86_400 < s.setback_from;
    HvacCommand {
        setpoint_c: baseline_scheduler(s, tod),
        ventilation_m3h: if occupied {
            scenario.ventilation.scheduled_flow_m3h
        } else {
            0.0
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub setpoint_c: f64,
    pub hvac_kw: f64,
    pub ventilation_m3h: f64,
    /// Zone state at the end of the step.
    pub temp_c: f64,
    pub co2_ppm: f64,
}

#[derive(Debug, Clone)]
pub struct BuildingState {
    pub scenario: BuildingScenario,
    pub zone: ZoneState,
    pub history: Vec<StepRecord>,
}

impl BuildingState {
    fn advance(&self, zone: ZoneState, step: usize, cmd: HvacCommand) -> Result<(ZoneState, f64), BuildingError> {
        let scn = &self.scenario;
        let occupants = scn.occupancy.occupants[step];
        let outdoor = scn.outdoor(step);
        let hvac = heating_for_setpoint(zone, &scn.params, outdoor, occupants, cmd.setpoint_c, STEP_HOURS);
        let vent = cmd.ventilation_m3h.clamp(0.0, scn.ventilation.max_flow_m3h);
        let next = step_thermal(
            zone,
            &scn.params,
            &scn.ventilation,
            outdoor,
            hvac,
            occupants,
            vent,
            STEP_HOURS,
        )?;
        Ok((next, hvac))
    }

    fn uncomfortable(&self, temp: f64) -> bool {
        let c = &self.scenario.comfort;
        temp < c.t_min_occupied - TOL || temp > c.t_max_occupied + TOL
    }

    /// Discomfort intervals of asserted protected occupancy so far.
    fn observed_events(&self) -> Vec<(Seconds, Seconds)> {
        self.history
            .iter()
            .filter(|r| self.scenario.known_protected(r.step) && self.uncomfortable(r.temp_c))
            .map(|r| {
                let s = r.step as Seconds * STEP_SECONDS;
                (s, s + STEP_SECONDS)
            })
            .collect()
    }
}

pub struct BuildingSim {
    state: BuildingState,
}

impl BuildingSim {
    pub fn new(scenario: BuildingScenario) -> Self {
        let zone = ZoneState {
            temp_c: scenario.initial_temp_c,
            co2_ppm: scenario.initial_co2_ppm,
        };
        BuildingSim {
            state: BuildingState {
                scenario,
                zone,
                history: Vec::with_capacity(STEPS),
            },
        }
    }

    pub fn into_history(self) -> Vec<StepRecord> {
        self.state.history
    }
}

impl Simulation for BuildingSim {
    type State = BuildingState;
    type Action = HvacCommand;

    fn domain(&self) -> Domain {
        Domain::Buildings
    }

    fn scenario_id(&self) -> String {
        self.state.scenario.scenario_id.clone()
    }

    fn clock(&self) -> GateClock {
        GateClock {
            step_seconds: STEP_SECONDS,
            horizon_steps: STEPS,
        }
    }

    fn state(&self) -> &BuildingState {
        &self.state
    }

    /// Trailing downtime plus the discomfort the candidate, followed by the
    /// schedule, would cause over the next hour.
    fn predict(&self, step: usize, candidate: &HvacCommand) -> Result<Option<MonitorVector>, GateError> {
        let st = &self.state;
        let now = step as Seconds * STEP_SECONDS;
        let mut minutes =
            accessibility_downtime(&st.observed_events(), now).map_err(|e| sim_error(step, e.to_string()))?;
        let mut zone = st.zone;
        for k in step..(step + LOOKAHEAD_STEPS).min(STEPS) {
            let cmd = if k == step {
                *candidate
            } else {
                scheduled_command(&st.scenario, k)
            };
            zone = st.advance(zone, k, cmd).map_err(|e| sim_error(k, e.to_string()))?.0;
            if st.scenario.known_protected(k) && st.uncomfortable(zone.temp_c) {
                minutes += STEP_SECONDS as f64 / 60.0;
            }
        }
        let mut m = MonitorVector::quiet(step);
        m.accessibility.insert(PROTECTED_GROUP.into(), minutes);
        Ok(Some(m))
    }

    fn apply(&mut self, step: usize, action: &HvacCommand) -> Result<(), GateError> {
        let (next, hvac) = self
            .state
            .advance(self.state.zone, step, *action)
            .map_err(|e| sim_error(step, e.to_string()))?;
        self.state.zone = next;
        self.state.history.push(StepRecord {
            step,
            setpoint_c: action.setpoint_c,
            hvac_kw: hvac,
            ventilation_m3h: action
                .ventilation_m3h
                .clamp(0.0, self.state.scenario.ventilation.max_flow_m3h),
            temp_c: next.temp_c,
            co2_ppm: next.co2_ppm,
        });
        Ok(())
    }

    fn observe(&self, step: usize) -> Result<MonitorVector, GateError> {
        let now = (step + 1) as Seconds * STEP_SECONDS;
        let minutes =
            accessibility_downtime(&self.state.observed_events(), now).map_err(|e| sim_error(step, e.to_string()))?;
        let mut m = MonitorVector::quiet(step);
        m.accessibility.insert(PROTECTED_GROUP.into(), minutes);
        Ok(m)
    }
}

/// Time-of-day setback schedule.
pub struct SetbackPolicy;

impl ControlPolicy<BuildingState> for SetbackPolicy {
    type Action = HvacCommand;

    fn policy_id(&self) -> PolicyId {
        PolicyId::new("setback-scheduler", "1.0")
    }

    fn decide(&mut self, step: usize, state: &BuildingState) -> HvacCommand {
        scheduled_command(&state.scenario, step)
    }
}

pub struct BuildingFallbacks {
    floors: Vec<Option<f64>>,
}

impl BuildingFallbacks {
    /// Floors are brought forward by the look-ahead so the zone is already
    /// at the comfort minimum when asserted occupancy begins.
    pub fn new(scenario: &BuildingScenario) -> Self {
        let asserted = r2o_occupancy_override(scenario);
        let floors = (0..STEPS)
            .map(|t| {
                asserted[t..(t + LOOKAHEAD_STEPS).min(STEPS)]
                    .iter()
                    .flatten()
                    .copied()
                    .reduce(f64::max)
            })
            .collect();
        BuildingFallbacks { floors }
    }
}

impl FallbackBinding<BuildingState> for BuildingFallbacks {
    type Action = HvacCommand;

    fn supports(&self, name: &str) -> bool {
        name == COMFORT_BOUNDS || name == NO_NIGHT_SETBACK_PROTECTED
    }

    fn act(&mut self, name: &str, step: usize, state: &BuildingState) -> HvacCommand {
        let scn = &state.scenario;
        let mut cmd = scheduled_command(scn, step);
        let guarded = if name == NO_NIGHT_SETBACK_PROTECTED {
            scn.occupancy.protected_present[step].then_some(scn.schedule.comfort_c)
        } else {
            self.floors[step]
        };
        if let Some(floor) = guarded {
            cmd.setpoint_c = cmd.setpoint_c.max(floor);
            let occupants = scn.occupancy.occupants[step];
            let target = scn.comfort.co2_max - 50.0;
            let needed = ventilation_for_co2(state.zone, &scn.ventilation, occupants, target, STEP_HOURS);
            cmd.ventilation_m3h = cmd.ventilation_m3h.max(needed);
        }
        cmd
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingReport {
    pub discomfort_hours_protected: u32,
    pub energy_kwh: f64,
    pub energy_delta_kwh: f64,
    pub min_temp_protected_c: Option<f64>,
    pub max_co2_protected_ppm: Option<f64>,
}

/// Whole occupied hours in which any step ends outside the comfort band
/// while protected occupants are present.
pub fn discomfort_hours(scenario: &BuildingScenario, history: &[StepRecord]) -> u32 {
    let c = &scenario.comfort;
    let mut hours: Vec<usize> = history
        .iter()
        .filter(|r| scenario.occupancy.protected_present[r.step])
        .filter(|r| r.temp_c < c.t_min_occupied - TOL || r.temp_c > c.t_max_occupied + TOL)
        .map(|r| r.step / 4)
        .collect();
    hours.dedup();
    hours.len() as u32
}

/// Electrical energy: HVAC heat over COP plus base load, per step.
pub fn energy_kwh(scenario: &BuildingScenario, history: &[StepRecord]) -> f64 {
    let p = &scenario.params;
    history
        .iter()
        .map(|r| r.hvac_kw * STEP_HOURS / p.hvac_cop + p.base_load * STEP_HOURS)
        .sum()
}

impl BuildingReport {
    fn from_history(scenario: &BuildingScenario, history: &[StepRecord], reference: Option<f64>) -> Self {
        let energy = energy_kwh(scenario, history);
        let protected: Vec<_> = history
            .iter()
            .filter(|r| scenario.occupancy.protected_present[r.step])
            .collect();
        BuildingReport {
            discomfort_hours_protected: discomfort_hours(scenario, history),
            energy_kwh: energy,
            energy_delta_kwh: reference.map_or(0.0, |r| energy - r),
            min_temp_protected_c: protected.iter().map(|r| r.temp_c).reduce(f64::min),
            max_co2_protected_ppm: protected.iter().map(|r| r.co2_ppm).reduce(f64::max),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BuildingCase {
    pub baseline: BuildingReport,
    pub gated: BuildingReport,
    pub baseline_history: Vec<StepRecord>,
    pub gated_history: Vec<StepRecord>,
    /// Seconds after midnight at which the first override engaged.
    pub trigger_time: Option<Seconds>,
    pub run: SimulationReport,
}

/// Ungated schedule alone, for comparison.
pub fn run_baseline(scenario: &BuildingScenario) -> Result<Vec<StepRecord>, CaseError> {
    let mut sim = BuildingSim::new(scenario.clone());
    let mut policy = SetbackPolicy;
    for step in 0..STEPS {
        let cmd = policy.decide(step, sim.state());
        sim.apply(step, &cmd)?;
    }
    Ok(sim.into_history())
}

pub fn run_building_case(
    scenario: &BuildingScenario,
    config: &GovernanceConfig,
    mode: RunMode,
) -> Result<BuildingCase, CaseError> {
    scenario.validate().map_err(|e| CaseError::Scenario(e.to_string()))?;
    let baseline_history = run_baseline(scenario)?;
    let mut sim = BuildingSim::new(scenario.clone());
    let run = run_gated(
        &mut sim,
        &mut SetbackPolicy,
        &mut BuildingFallbacks::new(scenario),
        config,
        mode,
    )?;
    let gated_history = sim.into_history();
    let baseline = BuildingReport::from_history(scenario, &baseline_history, None);
    let gated = BuildingReport::from_history(scenario, &gated_history, Some(baseline.energy_kwh));
    let trigger_time = run.audit.records().first().map(|r| r.started_at);
    Ok(BuildingCase {
        baseline,
        gated,
        baseline_history,
        gated_history,
        trigger_time,
        run,
    })
}

impl BuildingCase {
    pub fn table(&self) -> Table {
        let second = match self.run.mode {
            RunMode::Actuated => "R2O override",
            RunMode::Shadow => "R2O (shadow)",
        };
        Table::new(
            "Comfort-energy trade-off",
            ["Metric", "Baseline", second],
            vec![
                vec![
                    "Senior discomfort-hours (occupied)".into(),
                    self.baseline.discomfort_hours_protected.to_string(),
                    self.gated.discomfort_hours_protected.to_string(),
                ],
                vec![
                    "Whole-building energy (kWh)".into(),
                    format!("{:.1}", self.baseline.energy_kwh),
                    format!("{:.1}", self.gated.energy_kwh),
                ],
                vec![
                    "Energy delta (kWh)".into(),
                    String::new(),
                    format!("{:+.1}", self.gated.energy_delta_kwh),
                ],
            ],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::default_config;

    fn params() -> (BuildingParams, VentilationParams) {
        let s = cold_day();
        (s.params, s.ventilation)
    }

    #[test]
    fn equilibrium_holds() {
        let (mut p, v) = params();
        p.base_gains = 0.0;
        let z = ZoneState {
            temp_c: 5.0,
            co2_ppm: 420.0,
        };
        let next = step_thermal(z, &p, &v, 5.0, 0.0, 0, 0.0, STEP_HOURS).unwrap();
        assert_eq!(next, z);
    }

    #[test]
    fn steady_heating_balances_loss() {
        let (mut p, v) = params();
        p.base_gains = 0.0;
        let z = ZoneState {
            temp_c: 20.0,
            co2_ppm: 420.0,
        };
        let hvac = (20.0 - -10.0) / p.thermal_resistance;
        let next = step_thermal(z, &p, &v, -10.0, hvac, 0, 0.0, STEP_HOURS).unwrap();
        assert!((next.temp_c - 20.0).abs() < 1e-12);
    }

    #[test]
    fn half_steps_agree_to_first_order() {
        let (p, v) = params();
        let z = ZoneState {
            temp_c: 21.0,
            co2_ppm: 600.0,
        };
        let dt = 0.02;
        let one = step_thermal(z, &p, &v, -12.0, 50.0, 20, 0.0, dt).unwrap();
        let half = step_thermal(z, &p, &v, -12.0, 50.0, 20, 0.0, dt / 2.0).unwrap();
        let two = step_thermal(half, &p, &v, -12.0, 50.0, 20, 0.0, dt / 2.0).unwrap();
        assert!((one.temp_c - two.temp_c).abs() < 1e-3);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (p, v) = params();
        let z = ZoneState {
            temp_c: f64::NAN,
            co2_ppm: 420.0,
        };
        assert_eq!(
            step_thermal(z, &p, &v, 0.0, 0.0, 0, 0.0, 0.25),
            Err(BuildingError::NonFinite("temperature"))
        );
        let z = ZoneState {
            temp_c: 20.0,
            co2_ppm: 420.0,
        };
        assert_eq!(
            step_thermal(z, &p, &v, 0.0, 0.0, 0, 0.0, 0.0),
            Err(BuildingError::NonPositiveStep)
        );
    }

    #[test]
    fn schedule_lookup() {
        let s = SetbackSchedule::default();
        assert_eq!(baseline_scheduler(&s, 19 * 3600 + 45 * 60), 21.0);
        assert_eq!(baseline_scheduler(&s, 20 * 3600), 15.0);
        assert_eq!(baseline_scheduler(&s, 3 * 3600), 15.0);
    }

    #[test]
    fn ventilation_meets_target() {
        let (_, v) = params();
        let z = ZoneState {
            temp_c: 20.0,
            co2_ppm: 990.0,
        };
        let q = ventilation_for_co2(z, &v, 20, 950.0, STEP_HOURS);
        let (p, _) = params();
        let next = step_thermal(z, &p, &v, 0.0, 0.0, 20, q, STEP_HOURS).unwrap();
        assert!((next.co2_ppm - 950.0).abs() < 1e-9);
    }

    #[test]
    fn assertion_outside_occupancy_changes_nothing() {
        let mut s = cold_day();
        s.assertions = vec![Assertion {
            start: 23 * 3600,
            end: 24 * 3600,
        }];
        let case = run_building_case(&s, &default_config(), RunMode::Actuated).unwrap();
        assert_eq!(case.baseline_history, case.gated_history);
        assert_eq!(case.gated.energy_delta_kwh, 0.0);
    }

    #[test]
    fn validation_catches_empty_protected_steps() {
        let mut s = cold_day();
        s.occupancy.occupants[90] = 0;
        s.occupancy.protected_present[90] = true;
        assert!(s.validate().is_err());
    }
}
