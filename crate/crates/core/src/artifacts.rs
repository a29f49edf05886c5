//! Review artifacts: pre-deployment worksheets, post-incident reports,
//! public notices, the documentation/review gate and threshold sweeps.
//!
//! Everything is rendered as pretty JSON with a fixed field order so the
//! files can be diffed and golden-tested.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{public_notice, AuditRecord, CloseReason, PublicNotice};
use crate::config::{validate_cross_references, Authority, Domain, GovernanceConfig, OverrideLevel};
use crate::gating::{RunMode, SimulationReport};
use crate::monitors::{evaluate_thresholds, Direction, MonitorKind};
use crate::report::Table;
use crate::sim::{run_case, CaseError, CaseOutcome, CaseScenario};
use crate::Seconds;

/// Placeholder for fields a person has to write.
pub const FILL_IN: &str = "TO BE COMPLETED BY REVIEW";

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("override {0} is still open and cannot be reported yet")]
    NotReportable(String),
    #[error("no audit record with id {0}")]
    UnknownAudit(String),
    #[error("override {audit_id} ran {duration_s} s, beyond the {level} limit of {max_s} s")]
    DurationExceeded {
        audit_id: String,
        level: OverrideLevel,
        duration_s: Seconds,
        max_s: Seconds,
    },
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error("serialization failed: {0}")]
    Serialize(#[from] serde_json::Error),
    #[error(transparent)]
    Case(#[from] CaseError),
}

impl ArtifactError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        ArtifactError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// An artifact shows a guarantee was broken, as opposed to bad input.
    pub fn is_invariant(&self) -> bool {
        match self {
            ArtifactError::DurationExceeded { .. } => true,
            ArtifactError::Case(e) => e.is_invariant(),
            _ => false,
        }
    }
}

/// Write `bytes` to `path` via a sibling temporary file and a rename, so
/// readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ArtifactError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| ArtifactError::io(dir, e))?;
    }
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    let mut file = fs::File::create(&tmp).map_err(|e| ArtifactError::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| ArtifactError::io(&tmp, e))?;
    file.sync_all().map_err(|e| ArtifactError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| ArtifactError::io(path, e))
}

fn to_pretty<T: Serialize>(value: &T) -> Result<String, ArtifactError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

// ---------------------------------------------------------------------------
// Pre-deployment worksheet
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorksheetDecision {
    Approved,
    ApprovedWithConditions,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEntry {
    pub name: String,
    pub value: f64,
    pub justification: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorksheetRecord {
    pub system_scope: String,
    pub operator: String,
    pub vendor: String,
    pub control_horizons: Vec<String>,
    pub protected_services: Vec<String>,
    pub monitors: Vec<String>,
    pub thresholds: Vec<ThresholdEntry>,
    pub fallback_validation: String,
    pub shadow_outcomes: String,
    /// Free text; carried verbatim.
    pub roster: String,
    pub agreements: String,
    pub dissent: String,
    pub decision: WorksheetDecision,
    pub conditions: Vec<String>,
}

/// Names of every threshold the configuration sets, as they appear in the
/// governance document.
pub fn threshold_names(config: &GovernanceConfig) -> Vec<(String, f64)> {
    let t = &config.thresholds;
    let mut out = vec![
        ("disparity".to_string(), t.disparity),
        ("safety_risk_per_hr".to_string(), t.hazard_per_hour),
        ("accessibility_downtime_minutes".to_string(), t.accessibility_minutes),
        ("service_quality_default".to_string(), t.quality_default),
    ];
    out.extend(t.quality.iter().map(|(k, v)| (format!("service_quality_min.{k}"), *v)));
    out
}

impl WorksheetRecord {
    /// Worksheet pre-filled from the configuration; human sections carry
    /// the fill-in marker and the decision starts as rejected.
    pub fn template(config: &GovernanceConfig, domain: Domain, system_scope: &str) -> Self {
        let fallbacks = config.fallbacks.for_domain(domain).join(", ");
        WorksheetRecord {
            system_scope: system_scope.to_string(),
            operator: FILL_IN.into(),
            vendor: FILL_IN.into(),
            control_horizons: config
                .levels
                .iter()
                .map(|(l, s)| format!("{l}: up to {} s under {}", s.max_duration.as_secs(), s.fallback_name))
                .collect(),
            protected_services: vec![FILL_IN.into()],
            monitors: MonitorKind::ALL.iter().map(|m| m.as_str().to_string()).collect(),
            thresholds: threshold_names(config)
                .into_iter()
                .map(|(name, value)| ThresholdEntry {
                    name,
                    value,
                    justification: FILL_IN.into(),
                })
                .collect(),
            fallback_validation: format!("Catalog for {domain}: {fallbacks}. {FILL_IN}"),
            shadow_outcomes: FILL_IN.into(),
            roster: FILL_IN.into(),
            agreements: FILL_IN.into(),
            dissent: FILL_IN.into(),
            decision: WorksheetDecision::Rejected,
            conditions: Vec::new(),
        }
    }

    pub fn to_json(&self) -> Result<String, ArtifactError> {
        to_pretty(self)
    }

    /// Problems that make the worksheet incomplete for `config`.
    pub fn problems(&self, config: &GovernanceConfig) -> Vec<String> {
        let mut out: Vec<String> = threshold_names(config)
            .into_iter()
            .filter(|(name, _)| !self.thresholds.iter().any(|t| &t.name == name))
            .map(|(name, _)| format!("threshold `{name}` has no entry"))
            .collect();
        if self.decision == WorksheetDecision::ApprovedWithConditions && self.conditions.is_empty() {
            out.push("approval with conditions lists no conditions".into());
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Post-incident report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentTrigger {
    pub monitor: MonitorKind,
    #[serde(with = "crate::float_repr")]
    pub observed: f64,
    pub bound: f64,
    pub direction: Direction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImmediateAction {
    pub level: OverrideLevel,
    pub authority: Authority,
    pub fallback_alias: String,
    pub fallback_name: String,
    pub started_at: Seconds,
    pub closed_at: Seconds,
    pub close_reason: CloseReason,
    pub duration_s: Seconds,
    pub max_duration_s: Seconds,
}

/// A monitor that was out of bounds while the override was in force.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffectedMetric {
    pub monitor: MonitorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    #[serde(with = "crate::float_repr")]
    pub worst_observed: f64,
    pub bound: f64,
    pub steps_out_of_bounds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootCauses {
    pub technical: String,
    pub organizational: String,
    pub data_pipeline: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoticeDetails {
    pub notice_id: String,
    pub channel: String,
    pub issued_at: Seconds,
    pub in_force_until: Seconds,
    pub languages: Vec<String>,
    pub contacts: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClosureStatus {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentReport {
    pub report_id: String,
    pub audit_id: String,
    pub scenario_id: String,
    pub domain: Domain,
    pub mode: RunMode,
    pub trigger: Vec<IncidentTrigger>,
    pub immediate_action: ImmediateAction,
    pub affected: Vec<AffectedMetric>,
    pub root_causes: RootCauses,
    pub mitigations: Vec<String>,
    pub public_notice: NoticeDetails,
    pub review_stages: Vec<String>,
    pub corrective_actions: ClosureStatus,
}

impl IncidentReport {
    pub fn within_max_duration(&self) -> bool {
        self.immediate_action.duration_s <= self.immediate_action.max_duration_s
    }

    /// Fails if the override outlived its level's limit.
    pub fn check(&self) -> Result<(), ArtifactError> {
        if self.within_max_duration() {
            Ok(())
        } else {
            Err(ArtifactError::DurationExceeded {
                audit_id: self.audit_id.clone(),
                level: self.immediate_action.level,
                duration_s: self.immediate_action.duration_s,
                max_s: self.immediate_action.max_duration_s,
            })
        }
    }

    pub fn to_json(&self) -> Result<String, ArtifactError> {
        to_pretty(self)
    }
}

/// Build the post-incident report for a closed override from the run that
/// produced it. Free-text sections are left as fill-in placeholders.
pub fn generate_incident_report(
    audit_id: &str,
    run: &SimulationReport,
    config: &GovernanceConfig,
) -> Result<IncidentReport, ArtifactError> {
    let record = run
        .audit
        .find(audit_id)
        .ok_or_else(|| ArtifactError::UnknownAudit(audit_id.to_string()))?;
    incident_report_for(record, run, config)
}

fn incident_report_for(
    record: &AuditRecord,
    run: &SimulationReport,
    config: &GovernanceConfig,
) -> Result<IncidentReport, ArtifactError> {
    let (Some(closed_at), Some(close_reason)) = (record.closed_at, record.close_reason) else {
        return Err(ArtifactError::NotReportable(record.audit_id.clone()));
    };
    let max = config.level(record.level).max_duration.as_secs();
    let step = run.step_seconds.max(1);
    let in_force = |t: usize| {
        let time = t as Seconds * step;
        time >= record.started_at && time < closed_at
    };
    let mut affected: BTreeMap<(MonitorKind, Option<String>), AffectedMetric> = BTreeMap::new();
    for m in run.monitors.iter().filter(|m| in_force(m.t)) {
        for v in evaluate_thresholds(m, &config.thresholds) {
            let entry = affected
                .entry((v.monitor, v.subject.clone()))
                .or_insert_with(|| AffectedMetric {
                    monitor: v.monitor,
                    group: v.subject.clone(),
                    worst_observed: v.observed,
                    bound: v.bound,
                    steps_out_of_bounds: 0,
                });
            entry.steps_out_of_bounds += 1;
            let worse = match v.direction {
                Direction::Exceeds => v.observed > entry.worst_observed,
                Direction::FallsBelow => v.observed < entry.worst_observed,
            };
            if worse {
                entry.worst_observed = v.observed;
            }
        }
    }
    let notice = public_notice(record, config);
    Ok(IncidentReport {
        report_id: format!("incident-{}", record.audit_id),
        audit_id: record.audit_id.clone(),
        scenario_id: record.scenario_id.clone(),
        domain: record.domain,
        mode: record.mode,
        trigger: record
            .trigger
            .iter()
            .map(|v| IncidentTrigger {
                monitor: v.monitor,
                observed: v.observed,
                bound: v.bound,
                direction: v.direction,
                subject: v.subject.clone(),
            })
            .collect(),
        immediate_action: ImmediateAction {
            level: record.level,
            authority: record.authority,
            fallback_alias: record.fallback_alias.clone(),
            fallback_name: record.fallback_name.clone(),
            started_at: record.started_at,
            closed_at,
            close_reason,
            duration_s: closed_at - record.started_at,
            max_duration_s: max,
        },
        affected: affected.into_values().collect(),
        root_causes: RootCauses {
            technical: FILL_IN.into(),
            organizational: FILL_IN.into(),
            data_pipeline: FILL_IN.into(),
        },
        mitigations: vec![FILL_IN.into()],
        public_notice: NoticeDetails {
            notice_id: notice.notice_id,
            channel: notice.channel,
            issued_at: notice.issued_at,
            in_force_until: notice.in_force_until,
            languages: vec![FILL_IN.into()],
            contacts: FILL_IN.into(),
        },
        review_stages: config.reviews.post_incident.clone(),
        corrective_actions: ClosureStatus::Open,
    })
}

/// Files written for one run's overrides.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WrittenArtifacts {
    pub incidents: Vec<PathBuf>,
    pub notices: Vec<PathBuf>,
}

/// Write a notice for every override and an incident report for every
/// closed one under `out`. Stops at the first report whose override ran
/// past its limit, after writing that report.
pub fn write_run_artifacts(
    out: &Path,
    run: &SimulationReport,
    config: &GovernanceConfig,
) -> Result<WrittenArtifacts, ArtifactError> {
    let mut written = WrittenArtifacts::default();
    for record in run.audit.records() {
        let notice: PublicNotice = public_notice(record, config);
        let path = out.join("notices").join(format!("{}.json", notice.notice_id));
        write_atomic(&path, to_pretty(&notice)?.as_bytes())?;
        written.notices.push(path);
        if record.is_closed() {
            let report = incident_report_for(record, run, config)?;
            let path = out
                .join("reports")
                .join("incidents")
                .join(format!("{}.json", record.audit_id));
            write_atomic(&path, report.to_json()?.as_bytes())?;
            written.incidents.push(path);
            report.check()?;
        }
    }
    Ok(written)
}

// ---------------------------------------------------------------------------
// Review gate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewGateResult {
    pub checks: Vec<GateCheck>,
}

impl ReviewGateResult {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect()
    }

    pub fn table(&self) -> Table {
        Table::new(
            "Review gate",
            ["Check", "Result", "Detail"],
            self.checks
                .iter()
                .map(|c| {
                    vec![
                        c.name.clone(),
                        if c.passed { "pass" } else { "fail" }.to_string(),
                        c.detail.clone(),
                    ]
                })
                .collect(),
        )
    }
}

/// Files in `dir` whose stem is `stem`, any extension.
fn find_stem(dir: &Path, stem: &str) -> Result<Option<PathBuf>, ArtifactError> {
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(ArtifactError::io(dir, e)),
    };
    let mut hits: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| ArtifactError::io(dir, e))?.path();
        if path.is_file() && path.file_stem().is_some_and(|s| s == stem) {
            hits.push(path);
        }
    }
    hits.sort();
    Ok(hits.into_iter().next())
}

/// Check a workspace against the documentation and review requirements of
/// `config`. The list of checks follows the configuration: every required
/// document and every pre-deployment stage gets one.
pub fn run_review_gate(workspace: &Path, config: &GovernanceConfig) -> Result<ReviewGateResult, ArtifactError> {
    fs::read_dir(workspace).map_err(|e| ArtifactError::io(workspace, e))?;
    let mut checks = Vec::new();
    let docs = workspace.join("docs");
    for (name, required) in [
        ("model_card", config.documentation.model_card),
        ("datasheet", config.documentation.datasheet),
    ] {
        if !required {
            continue;
        }
        let found = find_stem(&docs, name)?;
        checks.push(GateCheck {
            name: name.to_string(),
            passed: found.is_some(),
            detail: match found {
                Some(p) => format!("found {}", p.strip_prefix(workspace).unwrap_or(&p).display()),
                None => format!("missing docs/{name}.*"),
            },
        });
    }
    for stage in &config.reviews.pre_deploy {
        let marker = workspace.join("reviews").join(format!("{stage}.done"));
        let passed = marker.is_file();
        checks.push(GateCheck {
            name: stage.clone(),
            passed,
            detail: if passed {
                format!("found reviews/{stage}.done")
            } else {
                format!("missing reviews/{stage}.done")
            },
        });
    }
    let violations: Vec<String> = Domain::ALL
        .iter()
        .flat_map(|d| validate_cross_references(config, *d))
        .map(|v| v.to_string())
        .collect();
    checks.push(GateCheck {
        name: "cross_references".into(),
        passed: violations.is_empty(),
        detail: if violations.is_empty() {
            "thresholds, levels and fallbacks consistent".into()
        } else {
            violations.join("; ")
        },
    });
    Ok(ReviewGateResult { checks })
}

// ---------------------------------------------------------------------------
// Sensitivity sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParameter {
    #[serde(rename = "tau_D")]
    TauD,
    #[serde(rename = "tau_A")]
    TauA,
}

impl SweepParameter {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParameter::TauD => "tau_D",
            SweepParameter::TauA => "tau_A",
        }
    }

    fn apply(self, config: &GovernanceConfig, value: f64) -> Result<GovernanceConfig, ArtifactError> {
        let ok = match self {
            SweepParameter::TauD => value.is_finite() && value >= 1.0,
            SweepParameter::TauA => value.is_finite() && value > 0.0,
        };
        if !ok {
            return Err(ArtifactError::InvalidSweep(format!(
                "{} = {value} is outside its valid range",
                self.as_str()
            )));
        }
        let mut c = config.clone();
        match self {
            SweepParameter::TauD => c.thresholds.disparity = value,
            SweepParameter::TauA => c.thresholds.accessibility_minutes = value,
        }
        Ok(c)
    }
}

impl std::str::FromStr for SweepParameter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tau_D" | "tau_d" => Ok(SweepParameter::TauD),
            "tau_A" | "tau_a" => Ok(SweepParameter::TauA),
            _ => Err(format!("unknown sweep parameter `{s}` (expected tau_D or tau_A)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub harm: f64,
    pub efficiency: f64,
    pub overrides: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub scenario_id: String,
    pub parameter: SweepParameter,
    pub harm_metric: String,
    pub efficiency_metric: String,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn table(&self) -> Table {
        Table::new(
            format!("Sensitivity of {} to {}", self.scenario_id, self.parameter.as_str()),
            [
                self.parameter.as_str().to_string(),
                self.harm_metric.clone(),
                self.efficiency_metric.clone(),
                "overrides".to_string(),
            ],
            self.rows
                .iter()
                .map(|r| {
                    vec![
                        crate::float_repr::fmt(r.value),
                        format!("{:.3}", r.harm),
                        format!("{:.3}", r.efficiency),
                        r.overrides.to_string(),
                    ]
                })
                .collect(),
        )
    }
}

/// Harm and efficiency metric of a gated outcome, with their labels.
fn headline(outcome: &CaseOutcome) -> ((&'static str, f64), (&'static str, f64)) {
    match outcome {
        CaseOutcome::Power(c) => (("disparity", c.gated.disparity), ("ens_total_mwh", c.gated.ens_total)),
        CaseOutcome::Building(c) => (
            ("discomfort_hours", c.gated.discomfort_hours_protected as f64),
            ("energy_kwh", c.gated.energy_kwh),
        ),
        CaseOutcome::Traffic(c) => (
            ("ped_wait_median_s", c.gated.ped_wait_median_s),
            ("veh_delay_mean_s", c.gated.vehicle_delay_mean_s),
        ),
    }
}

/// Run the gated case once per value of `parameter`, in the given order.
pub fn sensitivity_sweep(
    scenario: &CaseScenario,
    parameter: SweepParameter,
    values: &[f64],
    config: &GovernanceConfig,
) -> Result<SweepTable, ArtifactError> {
    let configs = values
        .iter()
        .map(|v| parameter.apply(config, *v))
        .collect::<Result<Vec<_>, _>>()?;
    let probe = CaseOutcome::labels(scenario.case());
    let mut table = SweepTable {
        scenario_id: scenario_id(scenario),
        parameter,
        harm_metric: probe.0.into(),
        efficiency_metric: probe.1.into(),
        rows: Vec::with_capacity(values.len()),
    };
    for (value, cfg) in values.iter().zip(&configs) {
        let outcome = run_case(scenario, cfg, RunMode::Actuated)?;
        let ((_, harm), (_, efficiency)) = headline(&outcome);
        table.rows.push(SweepRow {
            value: *value,
            harm,
            efficiency,
            overrides: outcome.run().overrides_opened(),
        });
    }
    Ok(table)
}

fn scenario_id(scenario: &CaseScenario) -> String {
    match scenario {
        CaseScenario::Power(s) => s.scenario_id.clone(),
        CaseScenario::Building(s) => s.scenario_id.clone(),
        CaseScenario::Traffic(s) => s.scenario_id.clone(),
    }
}

impl CaseOutcome {
    /// Harm and efficiency metric names reported by sweeps for `case`.
    pub fn labels(case: crate::sim::Case) -> (&'static str, &'static str) {
        use crate::sim::Case;
        match case {
            Case::Power => ("disparity", "ens_total_mwh"),
            Case::Building => ("discomfort_hours", "energy_kwh"),
            Case::Traffic => ("ped_wait_median_s", "veh_delay_mean_s"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audit::{AuditLog, OpenReason};
    use crate::config::default_config;
    use crate::gating::{PolicyId, StepTrace};
    use crate::monitors::{MonitorVector, Violation};

    const HOUR: Seconds = 3600;

    fn record(duration: Option<Seconds>) -> AuditRecord {
        AuditRecord {
            audit_id: "s-actuated-0001".into(),
            reason: OpenReason::Engaged,
            timestamp: 0,
            scenario_id: "s".into(),
            domain: Domain::Power,
            policy_id: "p".into(),
            policy_version: "1".into(),
            mode: RunMode::Actuated,
            level: OverrideLevel::L2,
            authority: Authority::MunicipalPause,
            fallback_alias: "municipal_safe".into(),
            fallback_name: "equity_rotations".into(),
            trigger: vec![Violation {
                monitor: MonitorKind::Disparity,
                observed: 1.5,
                bound: 1.2,
                direction: Direction::Exceeds,
                subject: None,
            }],
            started_at: 0,
            expires_at: 72 * HOUR,
            review_opened: true,
            supersedes: None,
            closed_at: duration,
            close_reason: duration.map(|_| CloseReason::Expired),
        }
    }

    fn run_with(rec: AuditRecord, monitors: Vec<MonitorVector>) -> SimulationReport {
        let mut audit = AuditLog::new();
        let closed = rec.closed_at.zip(rec.close_reason);
        let id = rec.audit_id.clone();
        audit.open(rec);
        if let Some((t, reason)) = closed {
            audit.close(&id, t, reason);
        }
        SimulationReport {
            scenario_id: "s".into(),
            domain: Domain::Power,
            mode: RunMode::Actuated,
            policy: PolicyId::new("p", "1"),
            step_seconds: HOUR,
            trace: Vec::<StepTrace>::new(),
            monitors,
            audit,
            history: Vec::new(),
        }
    }

    #[test]
    fn duration_limit_is_inclusive() {
        let cfg = default_config();
        let ok = generate_incident_report("s-actuated-0001", &run_with(record(Some(72 * HOUR)), vec![]), &cfg).unwrap();
        assert!(ok.check().is_ok());
        let late =
            generate_incident_report("s-actuated-0001", &run_with(record(Some(73 * HOUR)), vec![]), &cfg).unwrap();
        let err = late.check().unwrap_err();
        assert!(err.is_invariant());
        assert!(err.to_string().contains("262800"));
    }

    #[test]
    fn open_override_not_reportable() {
        let err = generate_incident_report("s-actuated-0001", &run_with(record(None), vec![]), &default_config())
            .unwrap_err();
        assert!(matches!(err, ArtifactError::NotReportable(_)));
        let err = generate_incident_report("nope", &run_with(record(None), vec![]), &default_config()).unwrap_err();
        assert!(matches!(err, ArtifactError::UnknownAudit(_)));
    }

    #[test]
    fn affected_metrics_from_monitors_in_force() {
        let mut ms: Vec<MonitorVector> = (0..6).map(MonitorVector::quiet).collect();
        ms[1].disparity = 1.4;
        ms[2].disparity = 2.0;
        ms[5].disparity = 9.0; // after the override closed
        let report = generate_incident_report(
            "s-actuated-0001",
            &run_with(record(Some(4 * HOUR)), ms),
            &default_config(),
        )
        .unwrap();
        assert_eq!(report.affected.len(), 1);
        assert_eq!(report.affected[0].worst_observed, 2.0);
        assert_eq!(report.affected[0].steps_out_of_bounds, 2);
        assert_eq!(report.trigger[0].monitor, MonitorKind::Disparity);
        assert_eq!(report.root_causes.technical, FILL_IN);
    }

    #[test]
    fn quiet_window_has_no_affected_groups() {
        let ms: Vec<MonitorVector> = (0..3).map(MonitorVector::quiet).collect();
        let report = generate_incident_report(
            "s-actuated-0001",
            &run_with(record(Some(2 * HOUR)), ms),
            &default_config(),
        )
        .unwrap();
        assert!(report.affected.is_empty());
        assert!(report.to_json().unwrap().contains("\"affected\": []"));
    }

    #[test]
    fn worksheet_names_every_threshold() {
        let mut cfg = default_config();
        cfg.thresholds.quality.insert("bus_headway".into(), 0.8);
        let mut ws = WorksheetRecord::template(&cfg, Domain::Transport, "signals");
        assert!(ws.problems(&cfg).is_empty());
        ws.thresholds.retain(|t| t.name != "service_quality_min.bus_headway");
        assert_eq!(
            ws.problems(&cfg),
            vec!["threshold `service_quality_min.bus_headway` has no entry"]
        );
        ws = WorksheetRecord::template(&cfg, Domain::Transport, "signals");
        ws.decision = WorksheetDecision::ApprovedWithConditions;
        assert_eq!(ws.problems(&cfg).len(), 1);
        let json = serde_json::to_string(&ws).unwrap();
        assert!(json.contains("\"decision\":\"approved_with_conditions\""));
    }

    #[test]
    fn atomic_write_replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a/b/out.txt");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "second");
        assert_eq!(fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn sweep_rejects_out_of_range_values() {
        let scn = CaseScenario::fixture(crate::sim::Case::Power, None);
        let err = sensitivity_sweep(&scn, SweepParameter::TauD, &[0.5], &default_config()).unwrap_err();
        assert!(matches!(err, ArtifactError::InvalidSweep(_)));
        let empty = sensitivity_sweep(&scn, SweepParameter::TauD, &[], &default_config()).unwrap();
        assert!(empty.rows.is_empty());
        assert_eq!(empty.table().rows.len(), 0);
    }
}
