//! Governance-as-code configuration.
//!
//! The canonical document is a YAML tree rooted at `governance:` carrying
//! override thresholds, level definitions, per-domain fallback catalogs,
//! documentation requirements, review stages, and publishing channels.
//! Parsing is strict by default: any key the schema does not know is an
//! error. Lenient mode collects those keys as warnings instead.
//!
//! Beyond the keys of the canonical document the schema accepts a few
//! optional extensions under `governance.r2o`:
//!
//! * `thresholds.service_quality_default` and `thresholds.service_quality_min`
//!   (per-service floor for the quality index, default 0.9),
//! * `aliases` (per-domain table joining level fallback names such as
//!   `municipal_safe` to catalog entries),
//! * `escalation` (the violation-to-level map).

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gating::EscalationMap;

/// The governance document shipped as the reference configuration.
pub const CANONICAL_DOCUMENT: &str = include_str!("../fixtures/governance.yaml");

/// Quality floor applied to any service without an explicit entry.
pub const DEFAULT_QUALITY_MIN: f64 = 0.9;

const HOUR: u64 = 3600;
const DAY: u64 = 24 * HOUR;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("parse error: {0}")]
    ParseNoLocation(String),
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("validation error at `{path}`: {message}")]
    Validation { path: String, message: String },
    #[error("unrecognized keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot serialize config: {0}")]
    Serialize(String),
}

impl ConfigError {
    fn schema(path: &str, message: impl Into<String>) -> Self {
        ConfigError::Schema {
            path: path.to_string(),
            message: message.into(),
        }
    }

    fn validation(path: &str, message: impl Into<String>) -> Self {
        ConfigError::Validation {
            path: path.to_string(),
            message: message.into(),
        }
    }
}

/// Control domain of a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Power,
    Buildings,
    Transport,
}

impl Domain {
    pub const ALL: [Domain; 3] = [Domain::Power, Domain::Buildings, Domain::Transport];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Power => "power",
            Domain::Buildings => "buildings",
            Domain::Transport => "transport",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Override level, ordered by severity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OverrideLevel {
    L1,
    L2,
    L3,
}

impl OverrideLevel {
    pub const ALL: [OverrideLevel; 3] = [OverrideLevel::L1, OverrideLevel::L2, OverrideLevel::L3];

    pub fn authority(self) -> Authority {
        match self {
            OverrideLevel::L1 => Authority::OperatorStop,
            OverrideLevel::L2 => Authority::MunicipalPause,
            OverrideLevel::L3 => Authority::CivicBoardHold,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OverrideLevel::L1 => "L1",
            OverrideLevel::L2 => "L2",
            OverrideLevel::L3 => "L3",
        }
    }
}

impl fmt::Display for OverrideLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Authority {
    OperatorStop,
    MunicipalPause,
    CivicBoardHold,
}

impl Authority {
    pub fn as_str(self) -> &'static str {
        match self {
            Authority::OperatorStop => "operator_stop",
            Authority::MunicipalPause => "municipal_pause",
            Authority::CivicBoardHold => "civic_board_hold",
        }
    }
}

/// Trigger thresholds. Hazard is per hour, accessibility downtime is minutes
/// per trailing 24 h, disparity and quality are dimensionless.
#[derive(Debug, Clone, PartialEq)]
pub struct Thresholds {
    pub disparity: f64,
    pub hazard_per_hour: f64,
    pub accessibility_minutes: f64,
    pub quality_default: f64,
    pub quality: BTreeMap<String, f64>,
}

impl Thresholds {
    /// Minimum quality index for `service`.
    pub fn quality_min(&self, service: &str) -> f64 {
        self.quality.get(service).copied().unwrap_or(self.quality_default)
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            disparity: 1.2,
            hazard_per_hour: 1.0e-4,
            accessibility_minutes: 30.0,
            quality_default: DEFAULT_QUALITY_MIN,
            quality: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelSpec {
    pub level: OverrideLevel,
    pub authority: Authority,
    pub fallback_name: String,
    pub max_duration: Duration,
}

/// Ordered fallback identifiers per domain.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FallbackCatalog {
    pub entries: BTreeMap<Domain, Vec<String>>,
}

impl FallbackCatalog {
    pub fn for_domain(&self, domain: Domain) -> &[String] {
        self.entries.get(&domain).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn contains(&self, domain: Domain, name: &str) -> bool {
        self.for_domain(domain).iter().any(|n| n == name)
    }
}

/// Join between level fallback names (`safe_local`, ...) and catalog entries.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AliasTable {
    pub entries: BTreeMap<Domain, BTreeMap<String, String>>,
}

impl AliasTable {
    pub fn lookup(&self, domain: Domain, alias: &str) -> Option<&str> {
        self.entries.get(&domain).and_then(|m| m.get(alias)).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocumentationRequirements {
    pub model_card: bool,
    pub datasheet: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReviewStages {
    pub pre_deploy: Vec<String>,
    pub post_incident: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Publishing {
    pub notices: String,
    pub metrics: Vec<String>,
}

/// Parsed governance configuration. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct GovernanceConfig {
    pub thresholds: Thresholds,
    pub levels: BTreeMap<OverrideLevel, LevelSpec>,
    pub fallbacks: FallbackCatalog,
    pub aliases: AliasTable,
    pub escalation: EscalationMap,
    pub documentation: DocumentationRequirements,
    pub reviews: ReviewStages,
    pub publishing: Publishing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParseOptions {
    /// Reject unrecognized keys (`true`) or collect them as warnings.
    pub strict: bool,
    /// Fill missing sections from the defaults instead of failing.
    pub fill_defaults: bool,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            strict: true,
            fill_defaults: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Parsed {
    pub config: GovernanceConfig,
    pub warnings: Vec<String>,
}

/// A cross-reference or invariant problem found by [`validate_cross_references`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfigViolation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

// ---------------------------------------------------------------------------
// Raw document
// ---------------------------------------------------------------------------

#[derive(Debug, Default, Serialize, Deserialize)]
struct RawRoot {
    #[serde(skip_serializing_if = "Option::is_none")]
    governance: Option<RawGovernance>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct RawGovernance {
    #[serde(skip_serializing_if = "Option::is_none")]
    r2o: Option<RawR2o>,
    #[serde(skip_serializing_if = "Option::is_none")]
    documentation: Option<RawDocumentation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reviews: Option<RawReviews>,
    #[serde(skip_serializing_if = "Option::is_none")]
    publishing: Option<RawPublishing>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct RawR2o {
    #[serde(skip_serializing_if = "Option::is_none")]
    thresholds: Option<RawThresholds>,
    #[serde(skip_serializing_if = "Option::is_none")]
    levels: Option<BTreeMap<String, RawLevel>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fallbacks: Option<BTreeMap<String, Vec<String>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    aliases: Option<BTreeMap<String, BTreeMap<String, String>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    escalation: Option<EscalationMap>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct RawThresholds {
    #[serde(skip_serializing_if = "Option::is_none")]
    disparity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    safety_risk_per_hr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    accessibility_downtime_minutes: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    service_quality_default: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    service_quality_min: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct RawLevel {
    #[serde(skip_serializing_if = "Option::is_none")]
    fallback: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_duration_hours: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_duration_days: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct RawDocumentation {
    #[serde(skip_serializing_if = "Option::is_none")]
    model_card: Option<Requirement>,
    #[serde(skip_serializing_if = "Option::is_none")]
    datasheet: Option<Requirement>,
}

/// `required` / `optional`, or a plain boolean.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(untagged)]
enum Requirement {
    Flag(bool),
    Word(RequirementWord),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum RequirementWord {
    Required,
    Optional,
}

impl Requirement {
    fn is_required(self) -> bool {
        match self {
            Requirement::Flag(b) => b,
            Requirement::Word(RequirementWord::Required) => true,
            Requirement::Word(RequirementWord::Optional) => false,
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct RawReviews {
    #[serde(skip_serializing_if = "Option::is_none")]
    pre_deploy: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    post_incident: Option<Vec<String>>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct RawPublishing {
    #[serde(skip_serializing_if = "Option::is_none")]
    notices: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    metrics: Option<Vec<String>>,
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

/// Parse with default options (strict, no default filling).
pub fn parse_config(document: &str) -> Result<GovernanceConfig, ConfigError> {
    parse_config_with(document, ParseOptions::default()).map(|p| p.config)
}

pub fn parse_config_with(document: &str, options: ParseOptions) -> Result<Parsed, ConfigError> {
    let raw: RawRoot = serde_yaml::from_str(document).map_err(yaml_error)?;
    let mut unknown = Vec::new();
    let given: serde_yaml::Value = serde_yaml::from_str(document).map_err(yaml_error)?;
    let known = serde_yaml::to_value(&raw).map_err(|e| ConfigError::Serialize(e.to_string()))?;
    collect_unknown(&given, &known, "", &mut unknown);

    if options.strict && !unknown.is_empty() {
        return Err(ConfigError::UnknownKeys(unknown));
    }
    let warnings = unknown
        .into_iter()
        .map(|k| format!("unrecognized key `{k}` ignored"))
        .collect();
    let config = Builder {
        fill: options.fill_defaults,
    }
    .build(raw)?;
    Ok(Parsed { config, warnings })
}

pub fn load_config(path: &Path, options: ParseOptions) -> Result<Parsed, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config_with(&text, options)
}

/// Keys present in `given` that did not survive the typed round trip.
fn collect_unknown(given: &serde_yaml::Value, known: &serde_yaml::Value, prefix: &str, out: &mut Vec<String>) {
    use serde_yaml::Value;
    let join = |k: &str| {
        if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{prefix}.{k}")
        }
    };
    match (given, known) {
        (Value::Mapping(g), Value::Mapping(k)) => {
            for (key, value) in g {
                let name = match key {
                    Value::String(s) => s.clone(),
                    other => serde_yaml::to_string(other).unwrap_or_default().trim().to_string(),
                };
                match k.get(key) {
                    Some(kv) => collect_unknown(value, kv, &join(&name), out),
                    None if value.is_null() => {}
                    None => out.push(join(&name)),
                }
            }
        }
        (Value::Sequence(g), Value::Sequence(k)) => {
            for (i, (gv, kv)) in g.iter().zip(k).enumerate() {
                collect_unknown(gv, kv, &join(&i.to_string()), out);
            }
        }
        _ => {}
    }
}

fn yaml_error(err: serde_yaml::Error) -> ConfigError {
    match err.location() {
        Some(loc) => ConfigError::Parse {
            line: loc.line(),
            column: loc.column(),
            message: err.to_string(),
        },
        None => ConfigError::ParseNoLocation(err.to_string()),
    }
}

struct Builder {
    fill: bool,
}

impl Builder {
    fn require<T>(&self, value: Option<T>, path: &str, default: impl FnOnce() -> T) -> Result<T, ConfigError> {
        match value {
            Some(v) => Ok(v),
            None if self.fill => Ok(default()),
            None => Err(ConfigError::schema(path, "missing required key")),
        }
    }

    fn build(&self, raw: RawRoot) -> Result<GovernanceConfig, ConfigError> {
        let defaults = default_parts();
        let gov = raw
            .governance
            .ok_or_else(|| ConfigError::schema("governance", "missing required key"))?;
        let r2o = gov
            .r2o
            .ok_or_else(|| ConfigError::schema("governance.r2o", "missing required key"))?;

        let thresholds = self.thresholds(r2o.thresholds)?;
        let levels = self.levels(r2o.levels, &defaults.levels)?;
        let fallbacks = match r2o.fallbacks {
            Some(map) => catalog_from_raw(map)?,
            None if self.fill => defaults.fallbacks.clone(),
            None => return Err(ConfigError::schema("governance.r2o.fallbacks", "missing required key")),
        };
        let aliases = match r2o.aliases {
            Some(map) => alias_table_from_raw(map)?,
            None => default_aliases(),
        };
        let escalation = r2o.escalation.unwrap_or_default();
        escalation
            .check_total()
            .map_err(|m| ConfigError::validation("governance.r2o.escalation", m))?;

        let documentation = self.require(gov.documentation, "governance.documentation", RawDocumentation::default)?;
        let documentation = DocumentationRequirements {
            model_card: self
                .require(documentation.model_card, "governance.documentation.model_card", || {
                    Requirement::Flag(true)
                })?
                .is_required(),
            datasheet: self
                .require(documentation.datasheet, "governance.documentation.datasheet", || {
                    Requirement::Flag(true)
                })?
                .is_required(),
        };
        let reviews = self.require(gov.reviews, "governance.reviews", RawReviews::default)?;
        let reviews = ReviewStages {
            pre_deploy: self.require(reviews.pre_deploy, "governance.reviews.pre_deploy", || {
                defaults.reviews.pre_deploy.clone()
            })?,
            post_incident: self.require(reviews.post_incident, "governance.reviews.post_incident", || {
                defaults.reviews.post_incident.clone()
            })?,
        };
        let publishing = self.require(gov.publishing, "governance.publishing", RawPublishing::default)?;
        let publishing = Publishing {
            notices: self.require(publishing.notices, "governance.publishing.notices", || {
                defaults.publishing.notices.clone()
            })?,
            metrics: self.require(publishing.metrics, "governance.publishing.metrics", || {
                defaults.publishing.metrics.clone()
            })?,
        };

        Ok(GovernanceConfig {
            thresholds,
            levels,
            fallbacks,
            aliases,
            escalation,
            documentation,
            reviews,
            publishing,
        })
    }

    fn thresholds(&self, raw: Option<RawThresholds>) -> Result<Thresholds, ConfigError> {
        let base = "governance.r2o.thresholds";
        let raw = self.require(raw, base, RawThresholds::default)?;
        let d = Thresholds::default();
        let disparity = self.require(raw.disparity, &format!("{base}.disparity"), || d.disparity)?;
        let hazard = self.require(raw.safety_risk_per_hr, &format!("{base}.safety_risk_per_hr"), || {
            d.hazard_per_hour
        })?;
        let access = self.require(
            raw.accessibility_downtime_minutes,
            &format!("{base}.accessibility_downtime_minutes"),
            || d.accessibility_minutes,
        )?;
        let quality_default = raw.service_quality_default.unwrap_or(DEFAULT_QUALITY_MIN);
        let quality = raw.service_quality_min.unwrap_or_default();

        for (key, value) in [
            ("disparity", disparity),
            ("safety_risk_per_hr", hazard),
            ("accessibility_downtime_minutes", access),
            ("service_quality_default", quality_default),
        ] {
            check_threshold(&format!("{base}.{key}"), value)?;
        }
        for (svc, value) in &quality {
            check_threshold(&format!("{base}.service_quality_min.{svc}"), *value)?;
        }
        Ok(Thresholds {
            disparity,
            hazard_per_hour: hazard,
            accessibility_minutes: access,
            quality_default,
            quality,
        })
    }

    fn levels(
        &self,
        raw: Option<BTreeMap<String, RawLevel>>,
        defaults: &BTreeMap<OverrideLevel, LevelSpec>,
    ) -> Result<BTreeMap<OverrideLevel, LevelSpec>, ConfigError> {
        let base = "governance.r2o.levels";
        let Some(raw) = raw else {
            return if self.fill {
                Ok(defaults.clone())
            } else {
                Err(ConfigError::schema(base, "missing required key"))
            };
        };
        let mut out = BTreeMap::new();
        for (key, level_raw) in raw {
            let level = parse_level(&key)
                .ok_or_else(|| ConfigError::schema(&format!("{base}.{key}"), "level must be one of L1, L2, L3"))?;
            let path = format!("{base}.{key}");
            let fallback_name = self.require(level_raw.fallback, &format!("{path}.fallback"), || {
                defaults[&level].fallback_name.clone()
            })?;
            let max_duration = match (level_raw.max_duration_hours, level_raw.max_duration_days) {
                (Some(_), Some(_)) => {
                    return Err(ConfigError::schema(
                        &path,
                        "give either max_duration_hours or max_duration_days, not both",
                    ))
                }
                (Some(h), None) => duration_from(&format!("{path}.max_duration_hours"), h, HOUR)?,
                (None, Some(d)) => duration_from(&format!("{path}.max_duration_days"), d, DAY)?,
                (None, None) if self.fill => defaults[&level].max_duration,
                (None, None) => {
                    return Err(ConfigError::schema(
                        &format!("{path}.max_duration_hours"),
                        "missing required key",
                    ))
                }
            };
            out.insert(
                level,
                LevelSpec {
                    level,
                    authority: level.authority(),
                    fallback_name,
                    max_duration,
                },
            );
        }
        for level in OverrideLevel::ALL {
            if !out.contains_key(&level) {
                if self.fill {
                    out.insert(level, defaults[&level].clone());
                } else {
                    return Err(ConfigError::schema(&format!("{base}.{level}"), "missing required key"));
                }
            }
        }
        Ok(out)
    }
}

fn check_threshold(path: &str, value: f64) -> Result<(), ConfigError> {
    if !value.is_finite() {
        return Err(ConfigError::validation(path, "threshold must be finite"));
    }
    if value < 0.0 {
        return Err(ConfigError::validation(
            path,
            format!("threshold must not be negative, got {value}"),
        ));
    }
    Ok(())
}

fn duration_from(path: &str, value: f64, unit: u64) -> Result<Duration, ConfigError> {
    if !value.is_finite() || value <= 0.0 {
        return Err(ConfigError::validation(
            path,
            format!("duration must be positive, got {value}"),
        ));
    }
    Ok(Duration::from_secs((value * unit as f64).round() as u64))
}

fn parse_level(key: &str) -> Option<OverrideLevel> {
    match key {
        "L1" => Some(OverrideLevel::L1),
        "L2" => Some(OverrideLevel::L2),
        "L3" => Some(OverrideLevel::L3),
        _ => None,
    }
}

fn parse_domain(key: &str) -> Option<Domain> {
    Domain::ALL.into_iter().find(|d| d.as_str() == key)
}

fn catalog_from_raw(map: BTreeMap<String, Vec<String>>) -> Result<FallbackCatalog, ConfigError> {
    let mut entries = BTreeMap::new();
    for (key, list) in map {
        let domain = parse_domain(&key).ok_or_else(|| {
            ConfigError::schema(
                &format!("governance.r2o.fallbacks.{key}"),
                "domain must be one of power, buildings, transport",
            )
        })?;
        entries.insert(domain, list);
    }
    Ok(FallbackCatalog { entries })
}

fn alias_table_from_raw(map: BTreeMap<String, BTreeMap<String, String>>) -> Result<AliasTable, ConfigError> {
    let mut entries = BTreeMap::new();
    for (key, table) in map {
        let domain = parse_domain(&key).ok_or_else(|| {
            ConfigError::schema(
                &format!("governance.r2o.aliases.{key}"),
                "domain must be one of power, buildings, transport",
            )
        })?;
        entries.insert(domain, table);
    }
    Ok(AliasTable { entries })
}

// ---------------------------------------------------------------------------
// Defaults
// ---------------------------------------------------------------------------

struct DefaultParts {
    levels: BTreeMap<OverrideLevel, LevelSpec>,
    fallbacks: FallbackCatalog,
    reviews: ReviewStages,
    publishing: Publishing,
}

fn default_parts() -> DefaultParts {
    let level = |level: OverrideLevel, name: &str, secs: u64| LevelSpec {
        level,
        authority: level.authority(),
        fallback_name: name.to_string(),
        max_duration: Duration::from_secs(secs),
    };
    let levels = BTreeMap::from([
        (OverrideLevel::L1, level(OverrideLevel::L1, "safe_local", 4 * HOUR)),
        (OverrideLevel::L2, level(OverrideLevel::L2, "municipal_safe", 72 * HOUR)),
        (OverrideLevel::L3, level(OverrideLevel::L3, "civic_safe", 30 * DAY)),
    ]);
    let strings = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let fallbacks = FallbackCatalog {
        entries: BTreeMap::from([
            (Domain::Power, strings(&["n-1_deterministic", "equity_rotations"])),
            (
                Domain::Buildings,
                strings(&["comfort_bounds", "no_night_setback_protected"]),
            ),
            (Domain::Transport, strings(&["fixed_time_ped_recall", "tsp_enabled"])),
        ]),
    };
    DefaultParts {
        levels,
        fallbacks,
        reviews: ReviewStages {
            pre_deploy: strings(&["scenario_walkthrough", "shadow_mode", "civic_tabletop"]),
            post_incident: strings(&["blameless_review", "public_report"]),
        },
        publishing: Publishing {
            notices: "open_data_portal".to_string(),
            metrics: strings(&["disparity", "risk", "accessibility", "quality_SLA"]),
        },
    }
}

/// Default join from level fallback names to catalog entries.
///
/// Power routes the disparity levels to `equity_rotations` since that is the
/// fallback that caps normalized harm; the other domains take the first entry
/// for `safe_local`/`municipal_safe` and the second for `civic_safe`.
pub fn default_aliases() -> AliasTable {
    let table = |pairs: [(&str, &str); 3]| {
        pairs
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect::<BTreeMap<_, _>>()
    };
    AliasTable {
        entries: BTreeMap::from([
            (
                Domain::Power,
                table([
                    ("safe_local", "n-1_deterministic"),
                    ("municipal_safe", "equity_rotations"),
                    ("civic_safe", "equity_rotations"),
                ]),
            ),
            (
                Domain::Buildings,
                table([
                    ("safe_local", "comfort_bounds"),
                    ("municipal_safe", "comfort_bounds"),
                    ("civic_safe", "no_night_setback_protected"),
                ]),
            ),
            (
                Domain::Transport,
                table([
                    ("safe_local", "fixed_time_ped_recall"),
                    ("municipal_safe", "fixed_time_ped_recall"),
                    ("civic_safe", "tsp_enabled"),
                ]),
            ),
        ]),
    }
}

/// The canonical document with every optional extension at its default.
pub fn default_config() -> GovernanceConfig {
    parse_config(CANONICAL_DOCUMENT).expect("canonical governance document parses")
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

pub fn serialize_config(config: &GovernanceConfig) -> Result<String, ConfigError> {
    let levels = config
        .levels
        .iter()
        .map(|(level, spec)| {
            let secs = spec.max_duration.as_secs();
            let (hours, days) = if *level == OverrideLevel::L3 && secs % DAY == 0 {
                (None, Some((secs / DAY) as f64))
            } else {
                (Some(secs as f64 / HOUR as f64), None)
            };
            (
                level.to_string(),
                RawLevel {
                    fallback: Some(spec.fallback_name.clone()),
                    max_duration_hours: hours,
                    max_duration_days: days,
                },
            )
        })
        .collect();
    let fallbacks = config
        .fallbacks
        .entries
        .iter()
        .map(|(d, list)| (d.to_string(), list.clone()))
        .collect();
    let aliases = config
        .aliases
        .entries
        .iter()
        .map(|(d, m)| (d.to_string(), m.clone()))
        .collect();
    let word = |b: bool| {
        Requirement::Word(if b {
            RequirementWord::Required
        } else {
            RequirementWord::Optional
        })
    };
    let raw = RawRoot {
        governance: Some(RawGovernance {
            r2o: Some(RawR2o {
                thresholds: Some(RawThresholds {
                    disparity: Some(config.thresholds.disparity),
                    safety_risk_per_hr: Some(config.thresholds.hazard_per_hour),
                    accessibility_downtime_minutes: Some(config.thresholds.accessibility_minutes),
                    service_quality_default: Some(config.thresholds.quality_default),
                    service_quality_min: if config.thresholds.quality.is_empty() {
                        None
                    } else {
                        Some(config.thresholds.quality.clone())
                    },
                }),
                levels: Some(levels),
                fallbacks: Some(fallbacks),
                aliases: Some(aliases),
                escalation: Some(config.escalation.clone()),
            }),
            documentation: Some(RawDocumentation {
                model_card: Some(word(config.documentation.model_card)),
                datasheet: Some(word(config.documentation.datasheet)),
            }),
            reviews: Some(RawReviews {
                pre_deploy: Some(config.reviews.pre_deploy.clone()),
                post_incident: Some(config.reviews.post_incident.clone()),
            }),
            publishing: Some(RawPublishing {
                notices: Some(config.publishing.notices.clone()),
                metrics: Some(config.publishing.metrics.clone()),
            }),
        }),
    };
    serde_yaml::to_string(&raw).map_err(|e| ConfigError::Serialize(e.to_string()))
}

// ---------------------------------------------------------------------------
// Cross-reference validation
// ---------------------------------------------------------------------------

impl GovernanceConfig {
    pub fn level(&self, level: OverrideLevel) -> &LevelSpec {
        &self.levels[&level]
    }

    /// Resolve a level fallback name to a catalog entry for `domain`.
    ///
    /// A name that is itself a catalog entry resolves to itself; otherwise the
    /// alias table is consulted and the target must be in the catalog.
    pub fn resolve_fallback(&self, domain: Domain, name: &str) -> Option<&str> {
        if let Some(entry) = self.fallbacks.for_domain(domain).iter().find(|e| *e == name) {
            return Some(entry.as_str());
        }
        let target = self.aliases.lookup(domain, name)?;
        self.fallbacks
            .for_domain(domain)
            .iter()
            .find(|e| *e == target)
            .map(String::as_str)
    }

    pub fn resolve_level_fallback(&self, domain: Domain, level: OverrideLevel) -> Option<&str> {
        self.resolve_fallback(domain, &self.level(level).fallback_name)
    }
}

/// Every reason `config` is not usable for `domain`. Empty means usable.
pub fn validate_cross_references(config: &GovernanceConfig, domain: Domain) -> Vec<ConfigViolation> {
    let mut out = Vec::new();
    let base = "governance.r2o.thresholds";
    let t = &config.thresholds;
    for (key, value) in [
        ("disparity", t.disparity),
        ("safety_risk_per_hr", t.hazard_per_hour),
        ("accessibility_downtime_minutes", t.accessibility_minutes),
    ] {
        if !(value.is_finite() && value > 0.0) {
            out.push(ConfigViolation {
                path: format!("{base}.{key}"),
                message: format!("threshold must be positive, got {value}"),
            });
        }
    }
    let quality = std::iter::once(("service_quality_default".to_string(), t.quality_default))
        .chain(t.quality.iter().map(|(k, v)| (format!("service_quality_min.{k}"), *v)));
    for (key, value) in quality {
        if !(value > 0.0 && value <= 1.0) {
            out.push(ConfigViolation {
                path: format!("{base}.{key}"),
                message: format!("quality floor must lie in (0, 1], got {value}"),
            });
        }
    }

    let mut previous: Option<(OverrideLevel, Duration)> = None;
    for (level, spec) in &config.levels {
        if let Some((prev_level, prev)) = previous {
            if spec.max_duration <= prev {
                out.push(ConfigViolation {
                    path: format!("governance.r2o.levels.{level}"),
                    message: format!("max duration must exceed that of {prev_level}"),
                });
            }
        }
        previous = Some((*level, spec.max_duration));
    }

    if config.fallbacks.for_domain(domain).is_empty() {
        out.push(ConfigViolation {
            path: format!("governance.r2o.fallbacks.{domain}"),
            message: "no fallback catalog for domain".to_string(),
        });
    }
    for (level, spec) in &config.levels {
        if config.resolve_fallback(domain, &spec.fallback_name).is_none() {
            let reason = match config.aliases.lookup(domain, &spec.fallback_name) {
                Some(target) => format!(
                    "fallback `{}` maps to `{target}`, which is not in the {domain} catalog",
                    spec.fallback_name
                ),
                None => format!(
                    "fallback `{}` has no {domain} catalog entry or alias",
                    spec.fallback_name
                ),
            };
            out.push(ConfigViolation {
                path: format!("governance.r2o.levels.{level}.fallback"),
                message: reason,
            });
        }
    }
    out
}

/// Extra requirement for actuated runs: a shadow-mode trial is part of the
/// pre-deployment review.
pub fn validate_for_actuation(config: &GovernanceConfig) -> Vec<ConfigViolation> {
    if config.reviews.pre_deploy.iter().any(|s| s == "shadow_mode") {
        Vec::new()
    } else {
        vec![ConfigViolation {
            path: "governance.reviews.pre_deploy".to_string(),
            message: "actuated runs require a `shadow_mode` pre-deployment stage".to_string(),
        }]
    }
}
