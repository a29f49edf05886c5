//! Append-only audit log and public notices for override events.
//!
//! Each override produces one `override_opened` line when it engages and one
//! `override_closed` line when it expires, is superseded by a higher level, or
//! is lifted at the end of a run. Lines are newline-delimited JSON with a
//! fixed field order.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Authority, Domain, GovernanceConfig, OverrideLevel};
use crate::gating::RunMode;
use crate::monitors::{Direction, Violation};
use crate::Seconds;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serialization(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpenReason {
    Engaged,
    Escalated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloseReason {
    Expired,
    Superseded,
    /// The run ended while the override was still active.
    Lifted,
}

/// One override, from engagement to close.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub audit_id: String,
    pub reason: OpenReason,
    pub timestamp: Seconds,
    pub scenario_id: String,
    pub domain: Domain,
    pub policy_id: String,
    pub policy_version: String,
    pub mode: RunMode,
    pub level: OverrideLevel,
    pub authority: Authority,
    pub fallback_alias: String,
    pub fallback_name: String,
    pub trigger: Vec<Violation>,
    pub started_at: Seconds,
    pub expires_at: Seconds,
    pub review_opened: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supersedes: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed_at: Option<Seconds>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub close_reason: Option<CloseReason>,
}

impl AuditRecord {
    pub fn is_closed(&self) -> bool {
        self.closed_at.is_some()
    }

    /// Whether the override was in force at `t`.
    pub fn covers(&self, t: Seconds) -> bool {
        self.started_at <= t && self.closed_at.map_or(t < self.expires_at, |end| t < end)
    }

    pub fn duration(&self) -> Option<Seconds> {
        self.closed_at.map(|end| end - self.started_at)
    }
}

/// One line of the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AuditEvent {
    OverrideOpened(AuditRecord),
    OverrideClosed {
        audit_id: String,
        timestamp: Seconds,
        reason: CloseReason,
    },
}

/// In-memory audit trail with its append-only line rendering.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditLog {
    records: Vec<AuditRecord>,
    events: Vec<AuditEvent>,
}

impl AuditLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    pub fn events(&self) -> &[AuditEvent] {
        &self.events
    }

    pub fn find(&self, audit_id: &str) -> Option<&AuditRecord> {
        self.records.iter().find(|r| r.audit_id == audit_id)
    }

    pub(crate) fn open(&mut self, record: AuditRecord) {
        self.events.push(AuditEvent::OverrideOpened(record.clone()));
        self.records.push(record);
    }

    pub(crate) fn close(&mut self, audit_id: &str, at: Seconds, reason: CloseReason) {
        if let Some(rec) = self
            .records
            .iter_mut()
            .find(|r| r.audit_id == audit_id && r.closed_at.is_none())
        {
            rec.closed_at = Some(at);
            rec.close_reason = Some(reason);
            self.events.push(AuditEvent::OverrideClosed {
                audit_id: audit_id.to_string(),
                timestamp: at,
                reason,
            });
        }
    }

    pub fn to_jsonl(&self) -> Result<String, AuditError> {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Append every event to `path`, creating it if needed.
    pub fn append_to(&self, path: &Path) -> Result<(), AuditError> {
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        file.write_all(self.to_jsonl()?.as_bytes())?;
        file.flush()?;
        Ok(())
    }

    /// Rebuild records from log lines.
    pub fn from_jsonl(text: &str) -> Result<Self, AuditError> {
        let mut log = AuditLog::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            match serde_json::from_str::<AuditEvent>(line)? {
                AuditEvent::OverrideOpened(rec) => log.open(rec),
                AuditEvent::OverrideClosed {
                    audit_id,
                    timestamp,
                    reason,
                } => log.close(&audit_id, timestamp, reason),
            }
        }
        Ok(log)
    }
}

/// Plain-language notice published for each override.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublicNotice {
    pub notice_id: String,
    pub audit_id: String,
    pub channel: String,
    pub issued_at: Seconds,
    pub scenario_id: String,
    pub domain: Domain,
    pub level: OverrideLevel,
    pub authority: Authority,
    pub summary: String,
    pub rationale: Vec<String>,
    pub thresholds: Vec<NoticeThreshold>,
    pub fallback: String,
    pub fallback_description: String,
    pub in_force_until: Seconds,
    pub review: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoticeThreshold {
    pub monitor: String,
    pub bound: f64,
}

pub fn fallback_description(name: &str) -> &'static str {
    match name {
        "n-1_deterministic" => "Deterministic contingency dispatch with exemptions for clinics and elevators.",
        "equity_rotations" => {
            "Rotating curtailment that caps the gap in unserved energy between groups and keeps protected feeders at minimum service."
        }
        "comfort_bounds" => "Temperature held between 20 and 24 C and CO2 below 1000 ppm while protected occupants are present.",
        "no_night_setback_protected" => "Night setback disabled while protected occupants are present.",
        "fixed_time_ped_recall" => {
            "Fixed-time signal plans with a pedestrian walk every cycle (red at most 60 s) and priority for corridor buses running behind schedule."
        }
        "tsp_enabled" => {
            "Fixed-time signal plans with pedestrian recall and priority for every bus on the designated corridor."
        }
        _ => "Pre-validated fallback control.",
    }
}

fn plain_monitor(v: &Violation) -> String {
    let subject = v.subject.as_deref().map(|s| format!(" for {s}")).unwrap_or_default();
    let verb = match v.direction {
        Direction::Exceeds => "reached or exceeded",
        Direction::FallsBelow => "fell to or below",
    };
    let observed = crate::float_repr::fmt(v.observed);
    match v.monitor {
        crate::monitors::MonitorKind::Disparity => {
            format!(
                "Disparity in harm between groups {verb} the cap ({observed} vs {})",
                v.bound
            )
        }
        crate::monitors::MonitorKind::Hazard => {
            format!(
                "Predicted hazard rate {verb} the limit ({observed} vs {} per hour)",
                v.bound
            )
        }
        crate::monitors::MonitorKind::Accessibility => format!(
            "Accessibility downtime{subject} {verb} the limit ({observed} vs {} minutes in 24 h)",
            v.bound
        ),
        crate::monitors::MonitorKind::Quality => {
            format!("Service quality{subject} {verb} the floor ({observed} vs {})", v.bound)
        }
    }
}

pub fn public_notice(record: &AuditRecord, config: &GovernanceConfig) -> PublicNotice {
    let t = &config.thresholds;
    let who = match record.level {
        OverrideLevel::L1 => "the duty operator",
        OverrideLevel::L2 => "the municipal controller",
        OverrideLevel::L3 => "the civic board",
    };
    PublicNotice {
        notice_id: format!("notice-{}", record.audit_id),
        audit_id: record.audit_id.clone(),
        channel: config.publishing.notices.clone(),
        issued_at: record.started_at,
        scenario_id: record.scenario_id.clone(),
        domain: record.domain,
        level: record.level,
        authority: record.authority,
        summary: format!(
            "Automated {} control was placed under a {} override by {who}.",
            record.domain, record.level
        ),
        rationale: record.trigger.iter().map(plain_monitor).collect(),
        thresholds: vec![
            NoticeThreshold {
                monitor: "disparity".into(),
                bound: t.disparity,
            },
            NoticeThreshold {
                monitor: "risk".into(),
                bound: t.hazard_per_hour,
            },
            NoticeThreshold {
                monitor: "accessibility".into(),
                bound: t.accessibility_minutes,
            },
            NoticeThreshold {
                monitor: "quality_SLA".into(),
                bound: t.quality_default,
            },
        ],
        fallback: record.fallback_name.clone(),
        fallback_description: fallback_description(&record.fallback_name).to_string(),
        in_force_until: record.expires_at,
        review: format!(
            "A review is opened; post-incident stages: {}.",
            config.reviews.post_incident.join(", ")
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::default_config;
    use crate::monitors::MonitorKind;

    fn record() -> AuditRecord {
        AuditRecord {
            audit_id: "case1-0001".into(),
            reason: OpenReason::Engaged,
            timestamp: 900,
            scenario_id: "case1".into(),
            domain: Domain::Power,
            policy_id: "merit_order".into(),
            policy_version: "1".into(),
            mode: RunMode::Actuated,
            level: OverrideLevel::L2,
            authority: Authority::MunicipalPause,
            fallback_alias: "municipal_safe".into(),
            fallback_name: "equity_rotations".into(),
            trigger: vec![Violation {
                monitor: MonitorKind::Disparity,
                observed: 1.3,
                bound: 1.2,
                direction: Direction::Exceeds,
                subject: None,
            }],
            started_at: 900,
            expires_at: 900 + 72 * 3600,
            review_opened: true,
            supersedes: None,
            closed_at: None,
            close_reason: None,
        }
    }

    #[test]
    fn golden_lines() {
        let mut log = AuditLog::new();
        log.open(record());
        log.close("case1-0001", 1800, CloseReason::Lifted);
        let text = log.to_jsonl().unwrap();
        let expected = concat!(
            r#"{"event":"override_opened","audit_id":"case1-0001","reason":"engaged","timestamp":900,"scenario_id":"case1","domain":"power","policy_id":"merit_order","policy_version":"1","mode":"actuated","level":"L2","authority":"municipal_pause","fallback_alias":"municipal_safe","fallback_name":"equity_rotations","trigger":[{"monitor":"disparity","observed":1.3,"bound":1.2,"direction":"exceeds"}],"started_at":900,"expires_at":260100,"review_opened":true}"#,
            "\n",
            r#"{"event":"override_closed","audit_id":"case1-0001","timestamp":1800,"reason":"lifted"}"#,
            "\n"
        );
        assert_eq!(text, expected);
        let back = AuditLog::from_jsonl(&text).unwrap();
        assert_eq!(back, log);
        assert_eq!(back.records()[0].duration(), Some(900));
    }

    #[test]
    fn infinite_observation_survives_round_trip() {
        let mut rec = record();
        rec.trigger[0].observed = f64::INFINITY;
        let mut log = AuditLog::new();
        log.open(rec);
        let text = log.to_jsonl().unwrap();
        assert!(text.contains(r#""observed":"inf""#));
        let back = AuditLog::from_jsonl(&text).unwrap();
        assert_eq!(back.records()[0].trigger[0].observed, f64::INFINITY);
    }

    #[test]
    fn append_only_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.jsonl");
        let mut log = AuditLog::new();
        log.open(record());
        log.append_to(&path).unwrap();
        log.append_to(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn coverage_window() {
        let mut rec = record();
        assert!(rec.covers(900));
        assert!(!rec.covers(899));
        rec.closed_at = Some(1800);
        assert!(rec.covers(1799));
        assert!(!rec.covers(1800));
    }

    #[test]
    fn notice_fields() {
        let notice = public_notice(&record(), &default_config());
        assert_eq!(notice.channel, "open_data_portal");
        assert_eq!(notice.rationale.len(), 1);
        assert!(notice.rationale[0].contains("1.3 vs 1.2"));
        assert_eq!(notice.in_force_until, 900 + 72 * 3600);
    }
}
