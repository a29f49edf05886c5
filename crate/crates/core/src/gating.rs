//! The override gate.
//!
//! Every step the gate takes the policy's candidate action and the monitor
//! readings (observed outcome of the previous step, predicted outcome of the
//! candidate). A violation maps to a level through the [`EscalationMap`]; the
//! level's fallback is resolved against the domain catalog, substituted for
//! the candidate, logged, and held until the level's timer runs out.
//! While an override is active it stays in force regardless of the monitors,
//! except that a violation mapping to a more severe level escalates at once
//! and restarts the timer at that level.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{AuditLog, AuditRecord, CloseReason, OpenReason};
use crate::config::{validate_cross_references, ConfigViolation, Domain, GovernanceConfig, OverrideLevel};
use crate::monitors::{evaluate_thresholds, MonitorKind, MonitorVector, Violation};
use crate::Seconds;

#[derive(Debug, Error)]
pub enum GateError {
    #[error("fallback `{name}` for {level} does not resolve in the {domain} catalog; holding last safe action")]
    UnresolvedFallback {
        name: String,
        level: OverrideLevel,
        domain: Domain,
    },
    #[error("config is not valid for {domain}: {}", .violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidConfig {
        domain: Domain,
        violations: Vec<ConfigViolation>,
    },
    #[error("simulation step {step} failed: {message}")]
    Simulation { step: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Actuated,
    Shadow,
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunMode::Actuated => "actuated",
            RunMode::Shadow => "shadow",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSource {
    Policy,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyId {
    pub id: String,
    pub version: String,
}

impl PolicyId {
    pub fn new(id: impl Into<String>, version: impl Into<String>) -> Self {
        PolicyId {
            id: id.into(),
            version: version.into(),
        }
    }
}

/// Maps a state to an action. Must be deterministic given its inputs.
pub trait ControlPolicy<S> {
    type Action;
    fn policy_id(&self) -> PolicyId;
    fn decide(&mut self, step: usize, state: &S) -> Self::Action;
}

/// Steps an override is expected to stay in force, clipped to the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActiveWindow {
    pub start_step: usize,
    pub end_step: usize,
}

/// Concrete fallback controllers for one domain, addressed by catalog name.
pub trait FallbackBinding<S> {
    type Action;
    fn supports(&self, name: &str) -> bool;
    fn engage(&mut self, _name: &str, _window: ActiveWindow) {}
    fn act(&mut self, name: &str, step: usize, state: &S) -> Self::Action;
}

// ---------------------------------------------------------------------------
// Escalation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EscalationRule {
    /// Monitor the rule applies to; `None` matches any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monitor: Option<MonitorKind>,
    /// Consecutive completed windows the same monitor must already have
    /// triggered for this rule to match.
    #[serde(default)]
    pub persistent_windows: u32,
    pub level: OverrideLevel,
}

/// Ordered rules; the first matching rule wins.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EscalationMap {
    pub rules: Vec<EscalationRule>,
    /// Level whose completed windows count toward persistence.
    #[serde(default = "default_window_level")]
    pub window_level: OverrideLevel,
}

fn default_window_level() -> OverrideLevel {
    OverrideLevel::L2
}

impl Default for EscalationMap {
    fn default() -> Self {
        Self::with_persistence(2)
    }
}

impl EscalationMap {
    pub fn with_persistence(windows: u32) -> Self {
        let rule = |monitor, persistent_windows, level| EscalationRule {
            monitor,
            persistent_windows,
            level,
        };
        EscalationMap {
            rules: vec![
                rule(None, windows, OverrideLevel::L3),
                rule(Some(MonitorKind::Disparity), 0, OverrideLevel::L2),
                rule(Some(MonitorKind::Accessibility), 0, OverrideLevel::L2),
                rule(Some(MonitorKind::Quality), 0, OverrideLevel::L2),
                rule(Some(MonitorKind::Hazard), 0, OverrideLevel::L1),
            ],
            window_level: OverrideLevel::L2,
        }
    }

    /// Every monitor kind must be matched by some rule without a persistence
    /// requirement.
    pub fn check_total(&self) -> Result<(), String> {
        for kind in MonitorKind::ALL {
            let covered = self
                .rules
                .iter()
                .any(|r| r.persistent_windows == 0 && r.monitor.is_none_or(|m| m == kind));
            if !covered {
                return Err(format!("no unconditional rule covers `{kind}` violations"));
            }
        }
        Ok(())
    }
}

/// A closed or superseded override, as seen by the escalation map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerEpisode {
    pub level: OverrideLevel,
    pub monitors: Vec<MonitorKind>,
    pub ran_to_expiry: bool,
}

fn persistence(kind: MonitorKind, history: &[TriggerEpisode], window_level: OverrideLevel) -> u32 {
    history
        .iter()
        .rev()
        .take_while(|e| e.ran_to_expiry && e.level >= window_level && e.monitors.contains(&kind))
        .count() as u32
}

/// Level for a nonempty violation list given earlier episodes.
///
/// A map that covers no rule for some violation falls back to L1.
pub fn escalate(current: &[Violation], history: &[TriggerEpisode], map: &EscalationMap) -> OverrideLevel {
    for rule in &map.rules {
        let hit = current.iter().any(|v| {
            rule.monitor.is_none_or(|m| m == v.monitor)
                && persistence(v.monitor, history, map.window_level) >= rule.persistent_windows
        });
        if hit {
            return rule.level;
        }
    }
    OverrideLevel::L1
}

// ---------------------------------------------------------------------------
// Override state
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Override {
    pub level: OverrideLevel,
    pub fallback_alias: String,
    pub fallback_name: String,
    pub started_at: Seconds,
    pub expires_at: Seconds,
    pub trigger: Vec<Violation>,
    pub review_opened: bool,
    pub audit_id: String,
}

/// The current override, if any. The last override is retained after it
/// expires so its evidence stays available.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OverrideState {
    pub active: bool,
    pub current: Option<Override>,
}

impl OverrideState {
    pub fn active_override(&self) -> Option<&Override> {
        if self.active {
            self.current.as_ref()
        } else {
            None
        }
    }
}

/// Deactivate `state` once `now` reaches its expiry.
pub fn expire_overrides(state: &OverrideState, now: Seconds) -> OverrideState {
    match &state.current {
        Some(ov) if state.active && now >= ov.expires_at => OverrideState {
            active: false,
            current: state.current.clone(),
        },
        _ => state.clone(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateDecision<A> {
    pub step: usize,
    pub now: Seconds,
    pub source: ActionSource,
    pub applied_action: A,
    pub active: Option<Override>,
    pub violations: Vec<Violation>,
    /// In shadow mode, the level that would be in force.
    pub shadow_level: Option<OverrideLevel>,
    /// Audit record opened at this step, if any.
    pub opened_audit: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GateClock {
    pub step_seconds: Seconds,
    pub horizon_steps: usize,
}

impl GateClock {
    pub fn time_of(&self, step: usize) -> Seconds {
        step as Seconds * self.step_seconds
    }

    pub fn horizon_end(&self) -> Seconds {
        self.time_of(self.horizon_steps)
    }

    fn window(&self, start: Seconds, end: Seconds) -> ActiveWindow {
        let start_step = (start / self.step_seconds) as usize;
        let end_step = end.div_ceil(self.step_seconds).min(self.horizon_steps as Seconds) as usize;
        ActiveWindow {
            start_step,
            end_step: end_step.max(start_step + 1).min(self.horizon_steps.max(start_step + 1)),
        }
    }
}

/// Single-owner gate for one scenario run.
pub struct Gate<'c, A> {
    config: &'c GovernanceConfig,
    domain: Domain,
    mode: RunMode,
    scenario_id: String,
    policy: PolicyId,
    clock: GateClock,
    state: OverrideState,
    history: Vec<TriggerEpisode>,
    audit: AuditLog,
    last_applied: Option<A>,
    seq: usize,
}

impl<'c, A: Clone> Gate<'c, A> {
    pub fn new(
        config: &'c GovernanceConfig,
        domain: Domain,
        mode: RunMode,
        scenario_id: impl Into<String>,
        policy: PolicyId,
        clock: GateClock,
    ) -> Result<Self, GateError> {
        let violations = validate_cross_references(config, domain);
        if !violations.is_empty() {
            return Err(GateError::InvalidConfig { domain, violations });
        }
        Ok(Gate {
            config,
            domain,
            mode,
            scenario_id: scenario_id.into(),
            policy,
            clock,
            state: OverrideState::default(),
            history: Vec::new(),
            audit: AuditLog::new(),
            last_applied: None,
            seq: 0,
        })
    }

    pub fn state(&self) -> &OverrideState {
        &self.state
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    pub fn history(&self) -> &[TriggerEpisode] {
        &self.history
    }

    /// The action to hold when the gate fails closed.
    pub fn last_safe_action(&self) -> Option<&A> {
        self.last_applied.as_ref()
    }

    fn expire(&mut self, now: Seconds) {
        let next = expire_overrides(&self.state, now);
        if self.state.active && !next.active {
            let ov = next.current.as_ref().expect("expired override retained");
            self.audit.close(&ov.audit_id, ov.expires_at, CloseReason::Expired);
            self.history.push(TriggerEpisode {
                level: ov.level,
                monitors: monitor_kinds(&ov.trigger),
                ran_to_expiry: true,
            });
        }
        self.state = next;
    }

    fn engage<S, F>(
        &mut self,
        level: OverrideLevel,
        violations: Vec<Violation>,
        now: Seconds,
        fallbacks: &mut F,
    ) -> Result<String, GateError>
    where
        F: FallbackBinding<S, Action = A>,
    {
        let spec = self.config.level(level);
        let resolved = self
            .config
            .resolve_fallback(self.domain, &spec.fallback_name)
            .filter(|name| fallbacks.supports(name))
            .ok_or_else(|| GateError::UnresolvedFallback {
                name: spec.fallback_name.clone(),
                level,
                domain: self.domain,
            })?
            .to_string();

        let mut supersedes = None;
        if let Some(prev) = self.state.active_override().cloned() {
            self.audit.close(&prev.audit_id, now, CloseReason::Superseded);
            self.history.push(TriggerEpisode {
                level: prev.level,
                monitors: monitor_kinds(&prev.trigger),
                ran_to_expiry: false,
            });
            supersedes = Some(prev.audit_id);
        }

        self.seq += 1;
        let audit_id = format!("{}-{}-{:04}", self.scenario_id, self.mode, self.seq);
        let expires_at = now + spec.max_duration.as_secs();
        let ov = Override {
            level,
            fallback_alias: spec.fallback_name.clone(),
            fallback_name: resolved.clone(),
            started_at: now,
            expires_at,
            trigger: violations.clone(),
            review_opened: true,
            audit_id: audit_id.clone(),
        };
        self.audit.open(AuditRecord {
            audit_id: audit_id.clone(),
            reason: if supersedes.is_some() {
                OpenReason::Escalated
            } else {
                OpenReason::Engaged
            },
            timestamp: now,
            scenario_id: self.scenario_id.clone(),
            domain: self.domain,
            policy_id: self.policy.id.clone(),
            policy_version: self.policy.version.clone(),
            mode: self.mode,
            level,
            authority: spec.authority,
            fallback_alias: spec.fallback_name.clone(),
            fallback_name: resolved.clone(),
            trigger: violations,
            started_at: now,
            expires_at,
            review_opened: true,
            supersedes,
            closed_at: None,
            close_reason: None,
        });
        fallbacks.engage(&resolved, self.clock.window(now, expires_at));
        self.state = OverrideState {
            active: true,
            current: Some(ov),
        };
        Ok(audit_id)
    }

    /// Run one step of the gate.
    pub fn step<S, F>(
        &mut self,
        step: usize,
        state: &S,
        candidate: A,
        readings: &[MonitorVector],
        fallbacks: &mut F,
    ) -> Result<GateDecision<A>, GateError>
    where
        F: FallbackBinding<S, Action = A>,
    {
        let now = self.clock.time_of(step);
        self.expire(now);

        let violations = merge_violations(
            readings
                .iter()
                .flat_map(|m| evaluate_thresholds(m, &self.config.thresholds)),
        );
        let mut opened = None;
        if !violations.is_empty() {
            let level = escalate(&violations, &self.history, &self.config.escalation);
            let current = self.state.active_override().map(|o| o.level);
            if current.is_none_or(|l| level > l) {
                opened = Some(self.engage(level, violations.clone(), now, fallbacks)?);
            }
        }

        let active = self.state.active_override().cloned();
        let (source, applied, shadow_level) = match (&active, self.mode) {
            (Some(ov), RunMode::Actuated) => {
                let action = fallbacks.act(&ov.fallback_name, step, state);
                (ActionSource::Fallback, action, None)
            }
            (Some(ov), RunMode::Shadow) => (ActionSource::Policy, candidate, Some(ov.level)),
            (None, _) => (ActionSource::Policy, candidate, None),
        };
        self.last_applied = Some(applied.clone());
        Ok(GateDecision {
            step,
            now,
            source,
            applied_action: applied,
            active,
            violations,
            shadow_level,
            opened_audit: opened,
        })
    }

    /// Close whatever is still open at the end of the run.
    pub fn finish(mut self) -> (AuditLog, Vec<TriggerEpisode>) {
        let end = self.clock.horizon_end();
        self.expire(end);
        if let Some(ov) = self.state.active_override() {
            self.audit.close(&ov.audit_id, end, CloseReason::Lifted);
        }
        (self.audit, self.history)
    }
}

fn monitor_kinds(violations: &[Violation]) -> Vec<MonitorKind> {
    let mut kinds: Vec<_> = violations.iter().map(|v| v.monitor).collect();
    kinds.sort();
    kinds.dedup();
    kinds
}

/// Keep the most severe violation per (monitor, subject).
fn merge_violations(all: impl Iterator<Item = Violation>) -> Vec<Violation> {
    let mut out: Vec<Violation> = Vec::new();
    for v in all {
        match out
            .iter_mut()
            .find(|w| w.monitor == v.monitor && w.subject == v.subject)
        {
            Some(w) if v.severity() > w.severity() => *w = v,
            Some(_) => {}
            None => out.push(v),
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Run loop
// ---------------------------------------------------------------------------

/// A steppable simulator the gate can drive.
pub trait Simulation {
    type State;
    type Action: Clone;

    fn domain(&self) -> Domain;
    fn scenario_id(&self) -> String;
    fn clock(&self) -> GateClock;
    fn state(&self) -> &Self::State;
    /// Monitors for the candidate action at `step`, if the domain predicts.
    fn predict(&self, step: usize, candidate: &Self::Action) -> Result<Option<MonitorVector>, GateError>;
    fn apply(&mut self, step: usize, action: &Self::Action) -> Result<(), GateError>;
    /// Monitors for the outcome of the action applied at `step`.
    fn observe(&self, step: usize) -> Result<MonitorVector, GateError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step: usize,
    pub time: Seconds,
    pub source: ActionSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<OverrideLevel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shadow_level: Option<OverrideLevel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit_id: Option<String>,
    pub violations: usize,
}

/// Everything a gated run leaves behind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub scenario_id: String,
    pub domain: Domain,
    pub mode: RunMode,
    pub policy: PolicyId,
    pub step_seconds: Seconds,
    pub trace: Vec<StepTrace>,
    pub monitors: Vec<MonitorVector>,
    pub audit: AuditLog,
    pub history: Vec<TriggerEpisode>,
}

impl SimulationReport {
    pub fn fallback_steps(&self) -> usize {
        self.trace.iter().filter(|s| s.source == ActionSource::Fallback).count()
    }

    pub fn overrides_opened(&self) -> usize {
        self.audit.records().len()
    }

    /// Steps with a fallback in force, in contiguous runs `[start, end)`.
    pub fn fallback_windows(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut start = None;
        for s in &self.trace {
            match (s.source, start) {
                (ActionSource::Fallback, None) => start = Some(s.step),
                (ActionSource::Policy, Some(b)) => {
                    out.push((b, s.step));
                    start = None;
                }
                _ => {}
            }
        }
        if let (Some(b), Some(last)) = (start, self.trace.last()) {
            out.push((b, last.step + 1));
        }
        out
    }
}

/// Drive `sim` under the gate for its whole horizon.
pub fn run_gated<Sim, P, F>(
    sim: &mut Sim,
    policy: &mut P,
    fallbacks: &mut F,
    config: &GovernanceConfig,
    mode: RunMode,
) -> Result<SimulationReport, GateError>
where
    Sim: Simulation,
    P: ControlPolicy<Sim::State, Action = Sim::Action>,
    F: FallbackBinding<Sim::State, Action = Sim::Action>,
{
    let clock = sim.clock();
    let policy_id = policy.policy_id();
    let mut gate = Gate::new(config, sim.domain(), mode, sim.scenario_id(), policy_id.clone(), clock)?;
    let mut trace = Vec::with_capacity(clock.horizon_steps);
    let mut monitors = Vec::with_capacity(clock.horizon_steps);
    let mut observed: Option<MonitorVector> = None;

    for step in 0..clock.horizon_steps {
        let candidate = policy.decide(step, sim.state());
        let mut readings: Vec<MonitorVector> = observed.iter().cloned().collect();
        if let Some(pred) = sim.predict(step, &candidate)? {
            readings.push(pred);
        }
        let decision = match gate.step(step, sim.state(), candidate, &readings, fallbacks) {
            Ok(d) => d,
            Err(err) => {
                if let Some(hold) = gate.last_safe_action().cloned() {
                    sim.apply(step, &hold)?;
                }
                return Err(err);
            }
        };
        sim.apply(step, &decision.applied_action)?;
        let seen = sim.observe(step)?;
        monitors.push(seen.clone());
        observed = Some(seen);
        trace.push(StepTrace {
            step,
            time: decision.now,
            source: decision.source,
            level: decision.active.as_ref().map(|o| o.level),
            shadow_level: decision.shadow_level,
            audit_id: decision.active.as_ref().map(|o| o.audit_id.clone()),
            violations: decision.violations.len(),
        });
    }
    let (audit, history) = gate.finish();
    Ok(SimulationReport {
        scenario_id: sim.scenario_id(),
        domain: sim.domain(),
        mode,
        policy: policy_id,
        step_seconds: clock.step_seconds,
        trace,
        monitors,
        audit,
        history,
    })
}

// ---------------------------------------------------------------------------
// Post-run checks
// ---------------------------------------------------------------------------

/// Every fallback step must sit inside exactly one audit record.
pub fn check_audit_coverage(report: &SimulationReport) -> Result<(), String> {
    for s in report.trace.iter().filter(|s| s.source == ActionSource::Fallback) {
        let covering = report
            .audit
            .records()
            .iter()
            .filter(|r| r.mode == report.mode && r.covers(s.time))
            .count();
        if covering != 1 {
            return Err(format!("step {} covered by {covering} audit records", s.step));
        }
    }
    Ok(())
}

/// No override may outlast its level's maximum duration.
pub fn check_time_bounds(report: &SimulationReport, config: &GovernanceConfig) -> Result<(), String> {
    for r in report.audit.records() {
        let max = config.level(r.level).max_duration.as_secs();
        if r.expires_at - r.started_at > max {
            return Err(format!("{} scheduled past its {} limit", r.audit_id, r.level));
        }
        if let Some(d) = r.duration() {
            if d > max {
                return Err(format!("{} ran {d} s, over its {} limit", r.audit_id, r.level));
            }
        }
    }
    Ok(())
}
