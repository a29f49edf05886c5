//! Monitor vector: disparity, hazard, accessibility downtime, service quality.
//!
//! Comparisons are boundary-inclusive: `D >= tau_D`, `R >= tau_R`,
//! `A >= tau_A` and `Q <= tau_Q` are all violations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Thresholds;
use crate::Seconds;

/// Length of the accessibility downtime window.
pub const ACCESSIBILITY_WINDOW: Seconds = 24 * 3600;

#[derive(Debug, Error, PartialEq)]
pub enum MonitorError {
    #[error("baseline for group `{group}` must be positive, got {value}")]
    NonPositiveBaseline { group: String, value: f64 },
    #[error("harm for group `{group}` must be nonnegative, got {value}")]
    NegativeHarm { group: String, value: f64 },
    #[error("window is empty")]
    EmptyWindow,
    #[error("interval [{start}, {end}) is reversed")]
    ReversedInterval { start: Seconds, end: Seconds },
    #[error("hazard proxy must be nonnegative, got {0}")]
    NegativeHazard(f64),
}

/// Harm and baseline of one group over one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupOutcome {
    pub group_id: String,
    pub protected: bool,
    pub harm: f64,
    pub baseline: f64,
}

impl GroupOutcome {
    pub fn new(group_id: impl Into<String>, protected: bool, harm: f64, baseline: f64) -> Self {
        GroupOutcome {
            group_id: group_id.into(),
            protected,
            harm,
            baseline,
        }
    }

    fn check(&self) -> Result<(), MonitorError> {
        if !(self.baseline > 0.0) {
            return Err(MonitorError::NonPositiveBaseline {
                group: self.group_id.clone(),
                value: self.baseline,
            });
        }
        if !(self.harm >= 0.0) {
            return Err(MonitorError::NegativeHarm {
                group: self.group_id.clone(),
                value: self.harm,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonitorKind {
    Disparity,
    Hazard,
    Accessibility,
    Quality,
}

impl MonitorKind {
    pub const ALL: [MonitorKind; 4] = [
        MonitorKind::Disparity,
        MonitorKind::Hazard,
        MonitorKind::Accessibility,
        MonitorKind::Quality,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MonitorKind::Disparity => "disparity",
            MonitorKind::Hazard => "hazard",
            MonitorKind::Accessibility => "accessibility",
            MonitorKind::Quality => "quality",
        }
    }

    pub fn direction(self) -> Direction {
        match self {
            MonitorKind::Quality => Direction::FallsBelow,
            _ => Direction::Exceeds,
        }
    }
}

impl fmt::Display for MonitorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Exceeds,
    FallsBelow,
}

/// Monitor readings at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorVector {
    pub t: usize,
    #[serde(with = "crate::float_repr")]
    pub disparity: f64,
    pub hazard_per_hour: f64,
    /// Group -> downtime minutes in the trailing 24 h.
    pub accessibility: BTreeMap<String, f64>,
    /// Service -> quality index in [0, 1].
    pub quality: BTreeMap<String, f64>,
}

impl MonitorVector {
    /// A vector with no disparity, no hazard, and no groups or services.
    pub fn quiet(t: usize) -> Self {
        MonitorVector {
            t,
            disparity: 1.0,
            hazard_per_hour: 0.0,
            accessibility: BTreeMap::new(),
            quality: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub monitor: MonitorKind,
    #[serde(with = "crate::float_repr")]
    pub observed: f64,
    pub bound: f64,
    pub direction: Direction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
}

impl Violation {
    /// How far past the bound, relative to the bound.
    pub fn severity(&self) -> f64 {
        let gap = match self.direction {
            Direction::Exceeds => self.observed - self.bound,
            Direction::FallsBelow => self.bound - self.observed,
        };
        if self.bound > 0.0 {
            gap / self.bound
        } else {
            gap
        }
    }
}

/// Normalized-harm ratio between `protected` and `complement`.
///
/// Zero harm in both groups is defined as no disparity (1.0); harm in the
/// protected group only gives `f64::INFINITY`.
pub fn disparity_ratio(protected: &GroupOutcome, complement: &GroupOutcome) -> Result<f64, MonitorError> {
    protected.check()?;
    complement.check()?;
    Ok(ratio_of_rates(
        protected.harm / protected.baseline,
        complement.harm / complement.baseline,
    ))
}

fn ratio_of_rates(protected_rate: f64, complement_rate: f64) -> f64 {
    if complement_rate == 0.0 {
        if protected_rate == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        protected_rate / complement_rate
    }
}

/// Cumulative disparity over a window: harms and baselines are summed per
/// group before the ratio is taken.
pub fn window_disparity(series: &[(GroupOutcome, GroupOutcome)]) -> Result<f64, MonitorError> {
    if series.is_empty() {
        return Err(MonitorError::EmptyWindow);
    }
    let (mut hp, mut bp, mut hc, mut bc) = (0.0, 0.0, 0.0, 0.0);
    for (p, c) in series {
        for g in [p, c] {
            if !(g.harm >= 0.0) {
                return Err(MonitorError::NegativeHarm {
                    group: g.group_id.clone(),
                    value: g.harm,
                });
            }
            if g.baseline < 0.0 {
                return Err(MonitorError::NonPositiveBaseline {
                    group: g.group_id.clone(),
                    value: g.baseline,
                });
            }
        }
        hp += p.harm;
        bp += p.baseline;
        hc += c.harm;
        bc += c.baseline;
    }
    let total_p = GroupOutcome::new(&series[0].0.group_id, true, hp, bp);
    let total_c = GroupOutcome::new(&series[0].1.group_id, false, hc, bc);
    disparity_ratio(&total_p, &total_c)
}

/// Outage minutes of one group inside `[now - 24 h, now]`.
///
/// Overlapping intervals are merged first so no minute counts twice.
pub fn accessibility_downtime(events: &[(Seconds, Seconds)], now: Seconds) -> Result<f64, MonitorError> {
    let window_start = now.saturating_sub(ACCESSIBILITY_WINDOW);
    let mut clipped = Vec::with_capacity(events.len());
    for &(start, end) in events {
        if end < start {
            return Err(MonitorError::ReversedInterval { start, end });
        }
        let s = start.max(window_start);
        let e = end.min(now);
        if e > s {
            clipped.push((s, e));
        }
    }
    clipped.sort_unstable();
    let mut total = 0;
    let mut current: Option<(Seconds, Seconds)> = None;
    for (s, e) in clipped {
        current = match current {
            Some((cs, ce)) if s <= ce => Some((cs, ce.max(e))),
            Some((cs, ce)) => {
                total += ce - cs;
                Some((s, e))
            }
            None => Some((s, e)),
        };
    }
    if let Some((cs, ce)) = current {
        total += ce - cs;
    }
    Ok(total as f64 / 60.0)
}

/// Scenario-supplied hazard proxy, checked and passed through.
pub fn hazard_rate(proxy: f64) -> Result<f64, MonitorError> {
    if proxy >= 0.0 {
        Ok(proxy)
    } else {
        Err(MonitorError::NegativeHazard(proxy))
    }
}

/// One violation per crossed bound.
pub fn evaluate_thresholds(m: &MonitorVector, tau: &Thresholds) -> Vec<Violation> {
    let mut out = Vec::new();
    if m.disparity >= tau.disparity {
        out.push(Violation {
            monitor: MonitorKind::Disparity,
            observed: m.disparity,
            bound: tau.disparity,
            direction: Direction::Exceeds,
            subject: None,
        });
    }
    if m.hazard_per_hour >= tau.hazard_per_hour {
        out.push(Violation {
            monitor: MonitorKind::Hazard,
            observed: m.hazard_per_hour,
            bound: tau.hazard_per_hour,
            direction: Direction::Exceeds,
            subject: None,
        });
    }
    for (group, minutes) in &m.accessibility {
        if *minutes >= tau.accessibility_minutes {
            out.push(Violation {
                monitor: MonitorKind::Accessibility,
                observed: *minutes,
                bound: tau.accessibility_minutes,
                direction: Direction::Exceeds,
                subject: Some(group.clone()),
            });
        }
    }
    for (service, q) in &m.quality {
        let bound = tau.quality_min(service);
        if *q <= bound {
            out.push(Violation {
                monitor: MonitorKind::Quality,
                observed: *q,
                bound,
                direction: Direction::FallsBelow,
                subject: Some(service.clone()),
            });
        }
    }
    out
}

/// Delimited export: `t, D_t, R_t, A_t:<group>..., Q_t:<service>...`.
pub fn monitors_to_csv(series: &[MonitorVector]) -> String {
    let groups: BTreeSet<&String> = series.iter().flat_map(|m| m.accessibility.keys()).collect();
    let services: BTreeSet<&String> = series.iter().flat_map(|m| m.quality.keys()).collect();
    let mut out = String::from("t,D_t,R_t");
    for g in &groups {
        let _ = write!(out, ",A_t:{g}");
    }
    for s in &services {
        let _ = write!(out, ",Q_t:{s}");
    }
    out.push('\n');
    for m in series {
        let _ = write!(
            out,
            "{},{},{}",
            m.t,
            crate::float_repr::fmt(m.disparity),
            m.hazard_per_hour
        );
        for g in &groups {
            match m.accessibility.get(*g) {
                Some(v) => {
                    let _ = write!(out, ",{v}");
                }
                None => out.push(','),
            }
        }
        for s in &services {
            match m.quality.get(*s) {
                Some(v) => {
                    let _ = write!(out, ",{v}");
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn g(h: f64, b: f64) -> GroupOutcome {
        GroupOutcome::new("g", true, h, b)
    }
    fn c(h: f64, b: f64) -> GroupOutcome {
        GroupOutcome::new("c", false, h, b)
    }

    #[test]
    fn equal_normalized_harm_is_one() {
        assert_eq!(disparity_ratio(&g(0.5 * 7.0, 7.0), &c(0.5 * 3.0, 3.0)).unwrap(), 1.0);
    }

    #[test]
    fn direct_arithmetic() {
        assert_eq!(disparity_ratio(&g(2.0, 10.0), &c(1.0, 10.0)).unwrap(), 2.0);
    }

    #[test]
    fn table_one_baseline_ratio() {
        // Baseline ratio b_B/b_A = 3.022 reproduces D = 5.61 from ENS_A and ENS_B.
        let b_a = 100.0;
        let d = disparity_ratio(&g(49.72, b_a), &c(26.78, 3.022 * b_a)).unwrap();
        assert!((d - 5.61).abs() < 0.01, "{d}");
    }

    #[test]
    fn zero_harm_conventions() {
        assert_eq!(disparity_ratio(&g(0.0, 1.0), &c(0.0, 1.0)).unwrap(), 1.0);
        assert_eq!(disparity_ratio(&g(1.0, 1.0), &c(0.0, 1.0)).unwrap(), f64::INFINITY);
        assert_eq!(disparity_ratio(&g(0.0, 1.0), &c(1.0, 1.0)).unwrap(), 0.0);
    }

    #[test]
    fn bad_inputs() {
        assert!(matches!(
            disparity_ratio(&g(1.0, 0.0), &c(1.0, 1.0)),
            Err(MonitorError::NonPositiveBaseline { .. })
        ));
        assert!(matches!(
            disparity_ratio(&g(-1.0, 1.0), &c(1.0, 1.0)),
            Err(MonitorError::NegativeHarm { .. })
        ));
        assert_eq!(window_disparity(&[]), Err(MonitorError::EmptyWindow));
    }

    #[test]
    fn window_of_one_matches_step() {
        let step = (g(3.0, 11.0), c(2.0, 13.0));
        assert_eq!(
            window_disparity(std::slice::from_ref(&step)).unwrap(),
            disparity_ratio(&step.0, &step.1).unwrap()
        );
    }

    #[test]
    fn window_matches_summation_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(96);
        let series: Vec<_> = (0..96)
            .map(|_| {
                (
                    g(rng.gen_range(0.0..5.0), rng.gen_range(1.0..9.0)),
                    c(rng.gen_range(0.0..5.0), rng.gen_range(1.0..9.0)),
                )
            })
            .collect();
        // Oracle: sum each column independently, then divide.
        let hp: f64 = series.iter().map(|s| s.0.harm).sum();
        let bp: f64 = series.iter().map(|s| s.0.baseline).sum();
        let hc: f64 = series.iter().map(|s| s.1.harm).sum();
        let bc: f64 = series.iter().map(|s| s.1.baseline).sum();
        let expected = (hp / bp) / (hc / bc);
        let got = window_disparity(&series).unwrap();
        assert!(((got - expected) / expected).abs() < 1e-12);
    }

    #[test]
    fn capped_steps_with_common_baseline_ratio_stay_under_cap() {
        // Baselines move together (b_c = 3 b_g every step), which is the case
        // where summing the per-step cap bounds the window ratio.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let series: Vec<_> = (0..rng.gen_range(1..96))
                .map(|_| {
                    let bg: f64 = rng.gen_range(0.5..2.0);
                    let bc = 3.0 * bg;
                    let hc: f64 = rng.gen_range(0.0..1.0) * bc;
                    let hg = (rng.gen_range(0.0..1.0) * bg).min(1.2 * bg * hc / bc);
                    (g(hg, bg), c(hc, bc))
                })
                .collect();
            assert!(window_disparity(&series).unwrap() <= 1.2 + 1e-9);
        }
    }

    #[test]
    fn capped_steps_do_not_bound_window_when_baselines_shift() {
        // Every step obeys h_g/b_g <= tau * h_c/b_c, yet the window ratio is
        // far above tau because the second step adds complement baseline
        // without harm.
        let series = [(g(1.0, 1.0), c(1.0, 1.0)), (g(0.0, 1.0), c(0.0, 100.0))];
        for (p, q) in &series {
            assert!(p.harm / p.baseline <= 1.2 * q.harm / q.baseline || p.harm == 0.0);
        }
        assert!((window_disparity(&series).unwrap() - 50.5).abs() < 1e-9);
    }

    #[test]
    fn downtime_cases() {
        let day = ACCESSIBILITY_WINDOW;
        let now = 2 * day;
        assert_eq!(accessibility_downtime(&[], now).unwrap(), 0.0);
        assert_eq!(accessibility_downtime(&[(now - 3600, now - 1800)], now).unwrap(), 30.0);
        // Straddles the window start by 10 minutes; 20 minutes fall inside.
        let start = now - day - 600;
        assert_eq!(accessibility_downtime(&[(start, start + 1800)], now).unwrap(), 20.0);
        // Overlaps are merged.
        assert_eq!(
            accessibility_downtime(&[(now - 3600, now - 1800), (now - 2400, now - 1200)], now).unwrap(),
            40.0
        );
        assert!(matches!(
            accessibility_downtime(&[(10, 5)], now),
            Err(MonitorError::ReversedInterval { .. })
        ));
    }

    #[test]
    fn hazard_pass_through() {
        let tau = Thresholds::default();
        assert_eq!(hazard_rate(0.0).unwrap(), 0.0);
        let mut m = MonitorVector::quiet(0);
        m.hazard_per_hour = hazard_rate(1e-4).unwrap();
        assert_eq!(evaluate_thresholds(&m, &tau).len(), 1);
        m.hazard_per_hour = hazard_rate(5e-5).unwrap();
        assert!(evaluate_thresholds(&m, &tau).is_empty());
        assert!(hazard_rate(-1.0).is_err());
    }

    #[test]
    fn boundary_is_violation() {
        let tau = Thresholds::default();
        let mut m = MonitorVector::quiet(0);
        m.disparity = 1.2;
        let v = evaluate_thresholds(&m, &tau);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].monitor, MonitorKind::Disparity);
        m.disparity = 5.61;
        assert_eq!(evaluate_thresholds(&m, &tau)[0].observed, 5.61);
        m.disparity = 1.0;
        m.accessibility.insert("seniors".into(), 29.0);
        m.quality.insert("bus".into(), 0.95);
        assert!(evaluate_thresholds(&m, &tau).is_empty());
        m.quality.insert("bus".into(), 0.9);
        let v = evaluate_thresholds(&m, &tau);
        assert_eq!(v[0].direction, Direction::FallsBelow);
        assert_eq!(v[0].subject.as_deref(), Some("bus"));
    }

    #[test]
    fn csv_export_has_group_columns() {
        let mut m = MonitorVector::quiet(3);
        m.accessibility.insert("seniors".into(), 15.0);
        m.quality.insert("bus".into(), 1.0);
        let csv = monitors_to_csv(&[m, MonitorVector::quiet(4)]);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("t,D_t,R_t,A_t:seniors,Q_t:bus"));
        assert_eq!(lines.next(), Some("3,1,0,15,1"));
        assert_eq!(lines.next(), Some("4,1,0,,"));
    }

    fn vector() -> impl Strategy<Value = MonitorVector> {
        (0.0..3.0f64, 0.0..3e-4f64, 0.0..90.0f64, 0.0..1.0f64).prop_map(|(d, r, a, q)| {
            let mut m = MonitorVector::quiet(0);
            m.disparity = d;
            m.hazard_per_hour = r;
            m.accessibility.insert("g".into(), a);
            m.quality.insert("s".into(), q);
            m
        })
    }

    proptest! {
        #[test]
        fn symmetry(hg in 0.01..10.0f64, bg in 0.1..10.0f64, hc in 0.01..10.0f64, bc in 0.1..10.0f64) {
            let ab = disparity_ratio(&g(hg, bg), &c(hc, bc)).unwrap();
            let ba = disparity_ratio(&c(hc, bc), &g(hg, bg)).unwrap();
            prop_assert!((ab * ba - 1.0).abs() < 1e-12);
        }

        #[test]
        fn scale_invariance(hg in 0.01..10.0f64, bg in 0.1..10.0f64, hc in 0.01..10.0f64, bc in 0.1..10.0f64, k in 0.001..1000.0f64) {
            let base = disparity_ratio(&g(hg, bg), &c(hc, bc)).unwrap();
            let scaled = disparity_ratio(&g(hg * k, bg * k), &c(hc, bc)).unwrap();
            prop_assert!(((scaled - base) / base).abs() < 1e-12);
        }

        #[test]
        fn looser_thresholds_never_add_violations(m in vector(), dd in 0.0..1.0f64, dr in 0.0..1e-4f64, da in 0.0..30.0f64, dq in 0.0..0.5f64) {
            let tight = Thresholds::default();
            let mut loose = tight.clone();
            loose.disparity += dd;
            loose.hazard_per_hour += dr;
            loose.accessibility_minutes += da;
            loose.quality_default -= dq;
            let a = evaluate_thresholds(&m, &tight);
            let b = evaluate_thresholds(&m, &loose);
            prop_assert!(b.len() <= a.len());
            for v in &b {
                prop_assert!(a.iter().any(|w| w.monitor == v.monitor && w.subject == v.subject));
            }
        }
    }
}
