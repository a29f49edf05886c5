//! Feeder load shedding over one day at 15-minute resolution.
//!
//! The baseline dispatch curtails in merit order of group cost weights; with
//! the protected group weighted cheaper it sheds protected feeders first.
//! The equity fallback holds each step's total curtailment fixed and splits
//! it between groups in proportion to demand, capped so the normalized harm
//! ratio stays under the disparity threshold, then rotates the outage across
//! feeders within each group.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Domain, GovernanceConfig};
use crate::gating::{
    run_gated, ActionSource, ActiveWindow, ControlPolicy, FallbackBinding, GateClock, GateError, PolicyId, RunMode,
    Simulation, SimulationReport,
};
use crate::monitors::{disparity_ratio, window_disparity, GroupOutcome, MonitorVector};
use crate::report::Table;
use crate::sim::{sim_error, CaseError};
use crate::Seconds;

pub const STEPS: usize = 96;
pub const STEP_HOURS: f64 = 0.25;
pub const STEP_SECONDS: Seconds = 900;
pub const DEFAULT_SEED: u64 = 2024;

pub const EQUITY_ROTATIONS: &str = "equity_rotations";
pub const N1_DETERMINISTIC: &str = "n-1_deterministic";

const EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum PowerError {
    #[error("step {step}: shortfall {shortfall:.3} MWh exceeds curtailable load {curtailable:.3} MWh")]
    Infeasible {
        step: usize,
        shortfall: f64,
        curtailable: f64,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Protected,
    General,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtectedService {
    Clinic,
    Elevator,
    #[default]
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeederLoad {
    pub feeder_id: String,
    pub group: Group,
    #[serde(default)]
    pub protected_service: ProtectedService,
    /// MWh per step.
    pub demand: Vec<f64>,
    pub min_service_fraction: f64,
}

impl FeederLoad {
    /// Clinic and elevator feeders are held at their minimum service.
    pub fn is_reserved(&self) -> bool {
        self.protected_service != ProtectedService::None
    }

    pub fn floor(&self, t: usize) -> f64 {
        self.demand[t] * self.min_service_fraction
    }

    pub fn curtailable(&self, t: usize) -> f64 {
        self.demand[t] - self.floor(t)
    }
}

/// Per-group curtailment cost; the cheaper group is shed first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupWeights {
    pub protected: f64,
    pub general: f64,
}

impl Default for GroupWeights {
    fn default() -> Self {
        GroupWeights {
            protected: 0.5,
            general: 1.0,
        }
    }
}

impl GroupWeights {
    fn of(&self, g: Group) -> f64 {
        match g {
            Group::Protected => self.protected,
            Group::General => self.general,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerScenario {
    pub scenario_id: String,
    #[serde(default)]
    pub seed: u64,
    pub feeders: Vec<FeederLoad>,
    /// Deliverable MWh per step.
    pub capacity: Vec<f64>,
    #[serde(default)]
    pub weights: GroupWeights,
}

impl PowerScenario {
    pub fn validate(&self) -> Result<(), PowerError> {
        let bad = |m: String| Err(PowerError::Invalid(m));
        if self.capacity.len() != STEPS {
            return bad(format!("capacity has {} steps, expected {STEPS}", self.capacity.len()));
        }
        if self.capacity.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return bad("capacity must be finite and nonnegative".into());
        }
        if !(self.weights.protected > 0.0 && self.weights.general > 0.0) {
            return bad("group weights must be positive".into());
        }
        for f in &self.feeders {
            if f.demand.len() != STEPS {
                return bad(format!(
                    "feeder {} has {} demand steps, expected {STEPS}",
                    f.feeder_id,
                    f.demand.len()
                ));
            }
            if f.demand.iter().any(|d| !d.is_finite() || *d < 0.0) {
                return bad(format!("feeder {} has negative or non-finite demand", f.feeder_id));
            }
            if !(0.0..=1.0).contains(&f.min_service_fraction) {
                return bad(format!("feeder {} min_service_fraction outside [0, 1]", f.feeder_id));
            }
        }
        Ok(())
    }

    pub fn total_demand(&self, t: usize) -> f64 {
        self.feeders.iter().map(|f| f.demand[t]).sum()
    }

    /// Energy that must be shed at step `t`.
    pub fn deficit(&self, t: usize) -> f64 {
        (self.total_demand(t) - self.capacity[t]).max(0.0)
    }

    pub fn has_shortfall(&self) -> bool {
        (0..STEPS).any(|t| self.deficit(t) > 0.0)
    }

    /// Scale the shortfall by `factor` while keeping demand fixed.
    pub fn with_shortfall_scaled(&self, factor: f64) -> PowerScenario {
        let mut out = self.clone();
        for t in 0..STEPS {
            let d = self.deficit(t);
            if d > 0.0 {
                out.capacity[t] = self.total_demand(t) - d * factor;
            }
        }
        out
    }
}

/// Hourly load shape shared by all feeders, peaking in the evening.
const SHAPE: [f64; 24] = [
    0.62, 0.58, 0.56, 0.55, 0.56, 0.60, 0.68, 0.78, 0.84, 0.86, 0.87, 0.88, 0.88, 0.87, 0.88, 0.92, 0.97, 1.00, 1.00,
    0.99, 0.98, 0.96, 0.85, 0.72,
];

/// Shortfall window, 16:00 to 22:00.
pub const SHORTFALL_STEPS: std::ops::Range<usize> = 64..88;

/// Energy shed per shortfall step in the calibrated fixture.
pub const SHORTFALL_PER_STEP: f64 = 76.5 / 24.0;

/// The calibrated day: four protected feeders (a clinic and an elevator
/// bank held at 80% minimum service, two residential feeders with no
/// floor) and eight general feeders. General demand is about 3.02 times
/// protected demand, and 76.5 MWh must be shed between 16:00 and 22:00.
pub fn fixture(seed: u64) -> PowerScenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec: [(&str, Group, ProtectedService, f64, f64); 12] = [
        ("clinic", Group::Protected, ProtectedService::Clinic, 0.30, 0.8),
        ("elevators", Group::Protected, ProtectedService::Elevator, 0.20, 0.8),
        ("res-p1", Group::Protected, ProtectedService::None, 1.05, 0.0),
        ("res-p2", Group::Protected, ProtectedService::None, 1.00, 0.0),
        ("gen-1", Group::General, ProtectedService::None, 1.05, 0.0),
        ("gen-2", Group::General, ProtectedService::None, 0.98, 0.0),
        ("gen-3", Group::General, ProtectedService::None, 0.92, 0.0),
        ("gen-4", Group::General, ProtectedService::None, 1.01, 0.0),
        ("gen-5", Group::General, ProtectedService::None, 0.89, 0.0),
        ("gen-6", Group::General, ProtectedService::None, 0.96, 0.0),
        ("gen-7", Group::General, ProtectedService::None, 0.94, 0.0),
        ("gen-8", Group::General, ProtectedService::None, 0.956, 0.0),
    ];
    let feeders: Vec<FeederLoad> = spec
        .iter()
        .map(|&(id, group, service, peak, msf)| FeederLoad {
            feeder_id: id.into(),
            group,
            protected_service: service,
            demand: (0..STEPS)
                .map(|t| peak * SHAPE[t / 4] * (1.0 + 0.03 * rng.gen_range(-1.0..1.0)))
                .collect(),
            min_service_fraction: msf,
        })
        .collect();
    let mut scenario = PowerScenario {
        scenario_id: format!("power-fixture-{seed}"),
        seed,
        feeders,
        capacity: vec![12.0; STEPS],
        weights: GroupWeights::default(),
    };
    for t in SHORTFALL_STEPS {
        scenario.capacity[t] = scenario.total_demand(t) - SHORTFALL_PER_STEP;
    }
    scenario
}

/// Curtailed MWh, indexed `[feeder][step]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurtailmentPlan {
    pub curtailment: Vec<Vec<f64>>,
}

impl CurtailmentPlan {
    pub fn zeros(feeders: usize) -> Self {
        CurtailmentPlan {
            curtailment: vec![vec![0.0; STEPS]; feeders],
        }
    }

    pub fn step(&self, t: usize) -> Vec<f64> {
        self.curtailment.iter().map(|c| c[t]).collect()
    }

    pub fn set_step(&mut self, t: usize, values: &[f64]) {
        for (c, v) in self.curtailment.iter_mut().zip(values) {
            c[t] = *v;
        }
    }

    pub fn step_total(&self, t: usize) -> f64 {
        self.curtailment.iter().map(|c| c[t]).sum()
    }

    pub fn total(&self) -> f64 {
        self.curtailment.iter().flatten().sum()
    }
}

/// Merit-order curtailment for one step.
pub fn baseline_step(
    feeders: &[FeederLoad],
    t: usize,
    deficit: f64,
    weights: GroupWeights,
) -> Result<Vec<f64>, PowerError> {
    let mut order: Vec<usize> = (0..feeders.len()).collect();
    order.sort_by(|&a, &b| {
        weights
            .of(feeders[a].group)
            .total_cmp(&weights.of(feeders[b].group))
            .then(a.cmp(&b))
    });
    let mut out = vec![0.0; feeders.len()];
    let mut remaining = deficit;
    for i in order {
        if remaining <= 0.0 {
            break;
        }
        let take = remaining.min(feeders[i].curtailable(t));
        out[i] = take;
        remaining -= take;
    }
    if remaining > EPS {
        return Err(PowerError::Infeasible {
            step: t,
            shortfall: deficit,
            curtailable: deficit - remaining,
        });
    }
    Ok(out)
}

/// Cost-weighted greedy dispatch over the whole day.
pub fn baseline_dispatch(
    feeders: &[FeederLoad],
    capacity: &[f64],
    weights: GroupWeights,
) -> Result<CurtailmentPlan, PowerError> {
    let mut plan = CurtailmentPlan::zeros(feeders.len());
    for (t, cap) in capacity.iter().enumerate().take(STEPS) {
        let demand: f64 = feeders.iter().map(|f| f.demand[t]).sum();
        let deficit = (demand - cap).max(0.0);
        plan.set_step(t, &baseline_step(feeders, t, deficit, weights)?);
    }
    Ok(plan)
}

fn group_members(feeders: &[FeederLoad], g: Group) -> (Vec<usize>, Vec<usize>) {
    feeders
        .iter()
        .enumerate()
        .filter(|(_, f)| f.group == g)
        .map(|(i, _)| i)
        .partition(|&i| !feeders[i].is_reserved())
}

/// Shed `amount` from group `g`: rotate over unreserved feeders starting at
/// `t mod n`, then take reserved feeders down to their floors.
fn rotate_within(feeders: &[FeederLoad], g: Group, t: usize, amount: f64, out: &mut [f64]) -> f64 {
    let (open, reserved) = group_members(feeders, g);
    let mut remaining = amount;
    let n = open.len();
    let rotated = (0..n).map(|k| open[(t + k) % n]);
    for i in rotated.chain(reserved) {
        if remaining <= 0.0 {
            break;
        }
        let take = remaining.min(feeders[i].curtailable(t));
        out[i] += take;
        remaining -= take;
    }
    remaining
}

/// One step of equity-capped rotation.
///
/// `ratio_cap` bounds the protected/general curtailment ratio relative to
/// demand: with `r = min(P_t/G_t, ratio_cap)` the split satisfies
/// `x_P <= tau * r * x_G`. Passing the ratio of the groups' summed demand
/// over the intended window makes the cap hold for the window as a whole.
/// Returns the curtailment and a note when feasibility forced the split
/// past the cap.
pub fn equity_rotation_step(
    feeders: &[FeederLoad],
    t: usize,
    deficit: f64,
    tau: f64,
    ratio_cap: Option<f64>,
) -> Result<(Vec<f64>, Option<String>), PowerError> {
    let mut out = vec![0.0; feeders.len()];
    if deficit <= 0.0 {
        return Ok((out, None));
    }
    let sum =
        |g: Group, f: &dyn Fn(&FeederLoad) -> f64| -> f64 { feeders.iter().filter(|x| x.group == g).map(f).sum() };
    let p = sum(Group::Protected, &|x| x.demand[t]);
    let gd = sum(Group::General, &|x| x.demand[t]);
    let cap_p = sum(Group::Protected, &|x| x.curtailable(t));
    let cap_g = sum(Group::General, &|x| x.curtailable(t));
    if deficit > cap_p + cap_g + EPS {
        return Err(PowerError::Infeasible {
            step: t,
            shortfall: deficit,
            curtailable: cap_p + cap_g,
        });
    }

    let mut note = None;
    let x_p = if gd <= 0.0 {
        deficit
    } else if p <= 0.0 {
        0.0
    } else {
        let q = p / gd;
        let r = ratio_cap.map_or(q, |c| c.min(q));
        let proportional = deficit * q / (1.0 + q);
        let capped = deficit * tau * r / (1.0 + tau * r);
        let target = proportional.min(capped);
        let lo = (deficit - cap_g).max(0.0);
        if target + EPS < lo {
            note = Some(format!(
                "step {t}: general curtailable load {cap_g:.3} MWh cannot absorb the capped split; \
                 protected share raised from {target:.3} to {lo:.3} MWh"
            ));
        }
        target.max(lo).min(cap_p)
    };
    let left_p = rotate_within(feeders, Group::Protected, t, x_p, &mut out);
    let left_g = rotate_within(feeders, Group::General, t, deficit - x_p + left_p, &mut out);
    if left_g > EPS {
        // General ran out; put the rest back on protected feeders.
        rotate_within(feeders, Group::Protected, t, left_g, &mut out);
    }
    Ok((out, note))
}

/// Ratio of protected to general demand summed over `steps`, if both are
/// present.
pub fn demand_ratio(feeders: &[FeederLoad], steps: std::ops::Range<usize>) -> Option<f64> {
    let mut p = 0.0;
    let mut g = 0.0;
    for f in feeders {
        let s: f64 = f.demand[steps.clone()].iter().sum();
        match f.group {
            Group::Protected => p += s,
            Group::General => g += s,
        }
    }
    (p > 0.0 && g > 0.0).then(|| p / g)
}

/// Equity rotation over the whole day. Reserved feeders are those serving a
/// clinic or elevators.
pub fn equity_rotation_fallback(
    feeders: &[FeederLoad],
    capacity: &[f64],
    tau: f64,
) -> Result<(CurtailmentPlan, Vec<String>), PowerError> {
    let mut plan = CurtailmentPlan::zeros(feeders.len());
    let mut notes = Vec::new();
    let cap = demand_ratio(feeders, 0..STEPS);
    for (t, c) in capacity.iter().enumerate().take(STEPS) {
        let demand: f64 = feeders.iter().map(|f| f.demand[t]).sum();
        let (step, note) = equity_rotation_step(feeders, t, (demand - c).max(0.0), tau, cap)?;
        plan.set_step(t, &step);
        notes.extend(note);
    }
    Ok((plan, notes))
}

/// Deterministic dispatch with protected-load exemptions: general feeders
/// first, then unreserved protected feeders, reserved feeders only down to
/// their floors.
pub fn n1_deterministic_step(feeders: &[FeederLoad], t: usize, deficit: f64) -> Vec<f64> {
    let mut out = vec![0.0; feeders.len()];
    let mut remaining = deficit;
    let rank = |f: &FeederLoad| match (f.group, f.is_reserved()) {
        (Group::General, false) => 0,
        (Group::Protected, false) => 1,
        (_, true) => 2,
    };
    let mut order: Vec<usize> = (0..feeders.len()).collect();
    order.sort_by_key(|&i| (rank(&feeders[i]), i));
    for i in order {
        if remaining <= 0.0 {
            break;
        }
        let take = remaining.min(feeders[i].curtailable(t));
        out[i] = take;
        remaining -= take;
    }
    out
}

/// Per-group harm and baseline for one step of curtailment.
pub fn step_outcomes(feeders: &[FeederLoad], t: usize, curtailment: &[f64]) -> (GroupOutcome, GroupOutcome) {
    let mut p = GroupOutcome::new("protected", true, 0.0, 0.0);
    let mut g = GroupOutcome::new("general", false, 0.0, 0.0);
    for (f, c) in feeders.iter().zip(curtailment) {
        let o = if f.group == Group::Protected { &mut p } else { &mut g };
        o.harm += c;
        o.baseline += f.demand[t];
    }
    (p, g)
}

/// Monitor readings for a curtailment vector at step `t`.
///
/// Disparity is 1 when either group has no demand. The hazard proxy is the
/// share of clinic/elevator feeders served below their minimum, per hour.
pub fn step_monitors(feeders: &[FeederLoad], t: usize, curtailment: &[f64]) -> MonitorVector {
    let (p, g) = step_outcomes(feeders, t, curtailment);
    let mut m = MonitorVector::quiet(t);
    if p.baseline > 0.0 && g.baseline > 0.0 {
        m.disparity = disparity_ratio(&p, &g).unwrap_or(1.0);
    }
    let reserved: Vec<_> = feeders
        .iter()
        .zip(curtailment)
        .filter(|(f, _)| f.is_reserved())
        .collect();
    if !reserved.is_empty() {
        let below = reserved
            .iter()
            .filter(|(f, c)| f.demand[t] - **c < f.floor(t) - EPS)
            .count();
        m.hazard_per_hour = below as f64 / reserved.len() as f64 / STEP_HOURS;
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerReport {
    pub ens_total: f64,
    pub ens_protected: f64,
    pub ens_general: f64,
    /// Day disparity; 1 when a group is absent.
    #[serde(with = "crate::float_repr")]
    pub disparity: f64,
    pub disparity_applicable: bool,
    /// Feeder-steps where a clinic or elevator feeder fell below its floor.
    pub protected_min_violations: usize,
}

impl PowerReport {
    pub fn from_plan(feeders: &[FeederLoad], plan: &CurtailmentPlan) -> Self {
        let series: Vec<_> = (0..STEPS).map(|t| step_outcomes(feeders, t, &plan.step(t))).collect();
        let ens_protected: f64 = series.iter().map(|s| s.0.harm).sum();
        let ens_general: f64 = series.iter().map(|s| s.1.harm).sum();
        let applicable = series.iter().any(|s| s.0.baseline > 0.0) && series.iter().any(|s| s.1.baseline > 0.0);
        let disparity = if applicable {
            window_disparity(&series).unwrap_or(1.0)
        } else {
            1.0
        };
        let protected_min_violations = feeders
            .iter()
            .zip(&plan.curtailment)
            .filter(|(f, _)| f.is_reserved())
            .map(|(f, c)| (0..STEPS).filter(|&t| f.demand[t] - c[t] < f.floor(t) - EPS).count())
            .sum();
        PowerReport {
            ens_total: plan.total(),
            ens_protected,
            ens_general,
            disparity,
            disparity_applicable: applicable,
            protected_min_violations,
        }
    }
}

// ---------------------------------------------------------------------------
// Gate plumbing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct PowerState {
    pub scenario: PowerScenario,
    pub applied: CurtailmentPlan,
}

pub struct PowerSim {
    state: PowerState,
}

impl PowerSim {
    pub fn new(scenario: PowerScenario) -> Self {
        let n = scenario.feeders.len();
        PowerSim {
            state: PowerState {
                scenario,
                applied: CurtailmentPlan::zeros(n),
            },
        }
    }

    pub fn into_plan(self) -> CurtailmentPlan {
        self.state.applied
    }
}

impl Simulation for PowerSim {
    type State = PowerState;
    type Action = Vec<f64>;

    fn domain(&self) -> Domain {
        Domain::Power
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

    fn state(&self) -> &PowerState {
        &self.state
    }

    fn predict(&self, step: usize, candidate: &Vec<f64>) -> Result<Option<MonitorVector>, GateError> {
        Ok(Some(step_monitors(&self.state.scenario.feeders, step, candidate)))
    }

    fn apply(&mut self, step: usize, action: &Vec<f64>) -> Result<(), GateError> {
        let scn = &self.state.scenario;
        if action.len() != scn.feeders.len() {
            return Err(sim_error(
                step,
                format!("{} curtailments for {} feeders", action.len(), scn.feeders.len()),
            ));
        }
        for (f, c) in scn.feeders.iter().zip(action) {
            if !(*c >= -EPS && *c <= f.demand[step] + EPS) {
                return Err(sim_error(
                    step,
                    format!("curtailment {c} outside [0, demand] on {}", f.feeder_id),
                ));
            }
        }
        let served = scn.total_demand(step) - action.iter().sum::<f64>();
        if served > scn.capacity[step] + EPS {
            return Err(sim_error(
                step,
                format!("served {served:.6} MWh exceeds capacity {:.6} MWh", scn.capacity[step]),
            ));
        }
        self.state.applied.set_step(step, action);
        Ok(())
    }

    fn observe(&self, step: usize) -> Result<MonitorVector, GateError> {
        Ok(step_monitors(
            &self.state.scenario.feeders,
            step,
            &self.state.applied.step(step),
        ))
    }
}

pub struct BaselinePolicy;

impl ControlPolicy<PowerState> for BaselinePolicy {
    type Action = Vec<f64>;

    fn policy_id(&self) -> PolicyId {
        PolicyId::new("merit-order-dispatch", "1.0")
    }

    fn decide(&mut self, step: usize, state: &PowerState) -> Vec<f64> {
        let scn = &state.scenario;
        let deficit = scn.deficit(step);
        // Infeasible steps shed everything they can; `apply` reports the
        // capacity breach.
        baseline_step(&scn.feeders, step, deficit, scn.weights)
            .unwrap_or_else(|_| scn.feeders.iter().map(|f| f.curtailable(step)).collect())
    }
}

pub struct PowerFallbacks {
    feeders: Vec<FeederLoad>,
    tau: f64,
    ratio_cap: Option<f64>,
    pub notes: Vec<String>,
}

impl PowerFallbacks {
    pub fn new(scenario: &PowerScenario, tau: f64) -> Self {
        PowerFallbacks {
            feeders: scenario.feeders.clone(),
            tau,
            ratio_cap: demand_ratio(&scenario.feeders, 0..STEPS),
            notes: Vec::new(),
        }
    }
}

impl FallbackBinding<PowerState> for PowerFallbacks {
    type Action = Vec<f64>;

    fn supports(&self, name: &str) -> bool {
        name == EQUITY_ROTATIONS || name == N1_DETERMINISTIC
    }

    fn engage(&mut self, name: &str, window: ActiveWindow) {
        if name == EQUITY_ROTATIONS {
            let day = demand_ratio(&self.feeders, 0..STEPS);
            let win = demand_ratio(&self.feeders, window.start_step..window.end_step.min(STEPS));
            self.ratio_cap = match (day, win) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            };
        }
    }

    fn act(&mut self, name: &str, step: usize, state: &PowerState) -> Vec<f64> {
        let deficit = state.scenario.deficit(step);
        if name == N1_DETERMINISTIC {
            return n1_deterministic_step(&self.feeders, step, deficit);
        }
        match equity_rotation_step(&self.feeders, step, deficit, self.tau, self.ratio_cap) {
            Ok((curtail, note)) => {
                self.notes.extend(note);
                curtail
            }
            Err(e) => {
                self.notes.push(e.to_string());
                self.feeders.iter().map(|f| f.curtailable(step)).collect()
            }
        }
    }
}

/// A contiguous run of fallback steps and its cumulative disparity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FallbackWindow {
    pub start_step: usize,
    pub end_step: usize,
    pub fallback: String,
    #[serde(with = "crate::float_repr")]
    pub disparity: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PowerCase {
    pub baseline: PowerReport,
    pub gated: PowerReport,
    pub baseline_plan: CurtailmentPlan,
    pub gated_plan: CurtailmentPlan,
    pub windows: Vec<FallbackWindow>,
    pub feasibility_notes: Vec<String>,
    pub run: SimulationReport,
}

/// Run the ungated baseline and the gated variant on the same day.
///
/// Fails with an invariant error if the variants shed different totals or a
/// rotation window ends above the disparity cap.
pub fn run_power_case(
    scenario: &PowerScenario,
    config: &GovernanceConfig,
    mode: RunMode,
) -> Result<PowerCase, CaseError> {
    scenario.validate().map_err(|e| CaseError::Scenario(e.to_string()))?;
    let baseline_plan = baseline_dispatch(&scenario.feeders, &scenario.capacity, scenario.weights)
        .map_err(|e| CaseError::Scenario(e.to_string()))?;

    let tau = config.thresholds.disparity;
    let mut sim = PowerSim::new(scenario.clone());
    let mut fallbacks = PowerFallbacks::new(scenario, tau);
    let run = run_gated(&mut sim, &mut BaselinePolicy, &mut fallbacks, config, mode)?;
    let gated_plan = sim.into_plan();

    let baseline = PowerReport::from_plan(&scenario.feeders, &baseline_plan);
    let gated = PowerReport::from_plan(&scenario.feeders, &gated_plan);
    if (baseline.ens_total - gated.ens_total).abs() > EPS {
        return Err(CaseError::Invariant(format!(
            "total curtailment differs: baseline {} MWh, gated {} MWh",
            baseline.ens_total, gated.ens_total
        )));
    }

    let mut windows = Vec::new();
    for (start, end) in run.fallback_windows() {
        let fallback = run.trace[start]
            .audit_id
            .as_deref()
            .and_then(|id| run.audit.find(id))
            .map(|r| r.fallback_name.clone())
            .unwrap_or_default();
        let series: Vec<_> = (start..end)
            .map(|t| step_outcomes(&scenario.feeders, t, &gated_plan.step(t)))
            .collect();
        let disparity = window_disparity(&series).unwrap_or(1.0);
        if fallback == EQUITY_ROTATIONS && disparity > tau + EPS {
            return Err(CaseError::Invariant(format!(
                "rotation window {start}..{end} disparity {disparity} above cap {tau}"
            )));
        }
        windows.push(FallbackWindow {
            start_step: start,
            end_step: end,
            fallback,
            disparity,
        });
    }

    Ok(PowerCase {
        baseline,
        gated,
        baseline_plan,
        gated_plan,
        windows,
        feasibility_notes: fallbacks.notes,
        run,
    })
}

impl PowerCase {
    pub fn table(&self) -> Table {
        let row = |name: &str, r: &PowerReport| {
            vec![
                name.to_string(),
                format!("{:.2}", r.ens_total),
                format!("{:.2}", r.ens_protected),
                format!("{:.2}", r.ens_general),
                if r.disparity_applicable {
                    if r.disparity.is_finite() {
                        format!("{:.2}", r.disparity)
                    } else {
                        "inf".into()
                    }
                } else {
                    "n/a".into()
                },
            ]
        };
        let second = match self.run.mode {
            RunMode::Actuated => "R2O",
            RunMode::Shadow => "R2O (shadow)",
        };
        Table::new(
            "Load shedding (MWh)",
            ["Policy", "ENS_total", "ENS_A", "ENS_B", "D"],
            vec![row("Baseline", &self.baseline), row(second, &self.gated)],
        )
    }

    pub fn fallback_steps(&self) -> usize {
        self.run
            .trace
            .iter()
            .filter(|s| s.source == ActionSource::Fallback)
            .count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::default_config;

    fn feeder(id: &str, group: Group, demand: f64, msf: f64) -> FeederLoad {
        FeederLoad {
            feeder_id: id.into(),
            group,
            protected_service: ProtectedService::None,
            demand: vec![demand; STEPS],
            min_service_fraction: msf,
        }
    }

    #[test]
    fn no_shortfall_means_no_curtailment() {
        let f = [
            feeder("a", Group::Protected, 1.0, 0.0),
            feeder("b", Group::General, 1.0, 0.0),
        ];
        let plan = baseline_dispatch(&f, &[5.0; STEPS], GroupWeights::default()).unwrap();
        assert_eq!(plan.total(), 0.0);
        let (eq, notes) = equity_rotation_fallback(&f, &[5.0; STEPS], 1.2).unwrap();
        assert_eq!(eq.total(), 0.0);
        assert!(notes.is_empty());
    }

    #[test]
    fn two_feeder_greedy_sheds_cheaper_group() {
        let f = [
            feeder("p", Group::Protected, 2.0, 0.0),
            feeder("g", Group::General, 2.0, 0.0),
        ];
        let mut cap = vec![4.0; STEPS];
        cap[10] = 3.0;
        let plan = baseline_dispatch(&f, &cap, GroupWeights::default()).unwrap();
        assert_eq!(plan.curtailment[0][10], 1.0);
        assert_eq!(plan.curtailment[1][10], 0.0);
        assert_eq!(plan.total(), 1.0);
    }

    #[test]
    fn infeasible_when_floors_block() {
        let f = [feeder("p", Group::Protected, 1.0, 0.9)];
        let mut cap = vec![1.0; STEPS];
        cap[3] = 0.5;
        let err = baseline_dispatch(&f, &cap, GroupWeights::default()).unwrap_err();
        assert!(matches!(err, PowerError::Infeasible { step: 3, .. }));
    }

    #[test]
    fn rotation_starts_at_step_offset() {
        let f = [
            feeder("g0", Group::General, 1.0, 0.0),
            feeder("g1", Group::General, 1.0, 0.0),
            feeder("g2", Group::General, 1.0, 0.0),
        ];
        let (c, _) = equity_rotation_step(&f, 4, 1.0, 1.2, None).unwrap();
        assert_eq!(c, vec![0.0, 1.0, 0.0]);
        let (c, _) = equity_rotation_step(&f, 5, 1.5, 1.2, None).unwrap();
        assert_eq!(c, vec![0.5, 0.0, 1.0]);
    }

    #[test]
    fn equity_split_is_proportional_when_cap_allows() {
        let f = [
            feeder("p", Group::Protected, 1.0, 0.0),
            feeder("g", Group::General, 3.0, 0.0),
        ];
        let (c, note) = equity_rotation_step(&f, 0, 2.0, 1.2, None).unwrap();
        assert!((c[0] - 0.5).abs() < 1e-12 && (c[1] - 1.5).abs() < 1e-12);
        assert!(note.is_none());
    }

    #[test]
    fn window_cap_tightens_split() {
        let f = [
            feeder("p", Group::Protected, 1.0, 0.0),
            feeder("g", Group::General, 3.0, 0.0),
        ];
        // Window ratio 1/6 instead of the step's 1/3: x_P <= 1.2 * (1/6) * x_G.
        let (c, _) = equity_rotation_step(&f, 0, 2.0, 1.2, Some(1.0 / 6.0)).unwrap();
        assert!((c[0] / c[1] - 0.2).abs() < 1e-12);
        assert!((c[0] + c[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn relaxes_with_note_when_general_cannot_absorb() {
        let f = [
            feeder("p", Group::Protected, 3.0, 0.0),
            feeder("g", Group::General, 1.0, 0.6),
        ];
        let (c, note) = equity_rotation_step(&f, 0, 2.0, 1.2, None).unwrap();
        assert!((c[1] - 0.4).abs() < 1e-12);
        assert!((c[0] - 1.6).abs() < 1e-12);
        assert!(note.unwrap().contains("raised"));
    }

    #[test]
    fn reserved_feeders_keep_floor() {
        let mut clinic = feeder("c", Group::Protected, 1.0, 0.8);
        clinic.protected_service = ProtectedService::Clinic;
        let f = [
            clinic,
            feeder("p", Group::Protected, 1.0, 0.0),
            feeder("g", Group::General, 2.0, 0.0),
        ];
        let (c, _) = equity_rotation_step(&f, 0, 2.0, 1.2, None).unwrap();
        assert!(c[0] <= 0.2 + 1e-12);
        let m = step_monitors(&f, 0, &c);
        assert_eq!(m.hazard_per_hour, 0.0);
        let m = step_monitors(&f, 0, &[0.5, 0.0, 0.0]);
        assert_eq!(m.hazard_per_hour, 4.0);
    }

    #[test]
    fn n1_spares_protected() {
        let mut clinic = feeder("c", Group::Protected, 1.0, 0.8);
        clinic.protected_service = ProtectedService::Elevator;
        let f = [
            clinic,
            feeder("p", Group::Protected, 1.0, 0.0),
            feeder("g", Group::General, 1.0, 0.0),
        ];
        assert_eq!(n1_deterministic_step(&f, 0, 1.5), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn fixture_is_calibrated() {
        let s = fixture(DEFAULT_SEED);
        s.validate().unwrap();
        let base = baseline_dispatch(&s.feeders, &s.capacity, s.weights).unwrap();
        let r = PowerReport::from_plan(&s.feeders, &base);
        assert!(r.disparity >= 5.0, "baseline D {}", r.disparity);
        assert!((r.ens_total - 76.51).abs() <= 7.651);
        let ratio = demand_ratio(&s.feeders, 0..STEPS).unwrap();
        assert!((1.0 / ratio - 3.022).abs() < 0.05, "{}", 1.0 / ratio);
    }

    #[test]
    fn all_protected_population_is_not_applicable() {
        let f = vec![feeder("p", Group::Protected, 2.0, 0.0)];
        let mut cap = vec![2.0; STEPS];
        cap[70] = 1.0;
        let s = PowerScenario {
            scenario_id: "solo".into(),
            seed: 0,
            feeders: f,
            capacity: cap,
            weights: GroupWeights::default(),
        };
        let case = run_power_case(&s, &default_config(), RunMode::Actuated).unwrap();
        assert!(!case.gated.disparity_applicable);
        assert_eq!(case.gated.disparity, 1.0);
        assert_eq!(case.table().rows[1][4], "n/a");
    }

    #[test]
    fn zero_demand_gives_quiet_run() {
        let s = PowerScenario {
            scenario_id: "idle".into(),
            seed: 0,
            feeders: vec![
                feeder("p", Group::Protected, 0.0, 0.0),
                feeder("g", Group::General, 0.0, 0.0),
            ],
            capacity: vec![1.0; STEPS],
            weights: GroupWeights::default(),
        };
        let case = run_power_case(&s, &default_config(), RunMode::Actuated).unwrap();
        assert!(case.run.monitors.iter().all(|m| m.disparity == 1.0));
        assert_eq!(case.run.audit.records().len(), 0);
    }
}
