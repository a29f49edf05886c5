//! Signalized 4×4 street grid with pedestrians and one bus line.
//!
//! Point queues at 1 s resolution. Every intersection has four straight-only
//! approaches and three phases: north–south green, east–west green, and an
//! exclusive pedestrian walk. A clearance interval separates phases. The
//! baseline max-pressure controller serves pedestrians only on demand, which
//! starves them under heavy traffic; the fallback runs a fixed ring with a
//! walk every cycle and grants buses priority along the corridor row.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Domain, GovernanceConfig};
use crate::gating::{
    run_gated, ActionSource, ActiveWindow, ControlPolicy, FallbackBinding, GateClock, GateError, PolicyId, RunMode,
    Simulation, SimulationReport,
};
use crate::monitors::{accessibility_downtime, MonitorVector};
use crate::report::Table;
use crate::sim::{mean, percentile, sim_error, CaseError};
use crate::Seconds;

pub const FIXED_TIME_PED_RECALL: &str = "fixed_time_ped_recall";
pub const TSP_ENABLED: &str = "tsp_enabled";
pub const SENSITIVE_GROUP: &str = "sensitive_sites";
pub const HEADWAY_SERVICE: &str = "bus_headway";
pub const DEFAULT_SEED: u64 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    NsGreen,
    EwGreen,
    PedWalk,
}

impl Phase {
    fn index(self) -> usize {
        match self {
            Phase::NsGreen => 0,
            Phase::EwGreen => 1,
            Phase::PedWalk => 2,
        }
    }
}

/// Direction of travel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dir {
    Eastbound,
    Westbound,
    Northbound,
    Southbound,
}

impl Dir {
    pub const ALL: [Dir; 4] = [Dir::Eastbound, Dir::Westbound, Dir::Northbound, Dir::Southbound];

    fn index(self) -> usize {
        self as usize
    }

    pub fn phase(self) -> Phase {
        match self {
            Dir::Eastbound | Dir::Westbound => Phase::EwGreen,
            Dir::Northbound | Dir::Southbound => Phase::NsGreen,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridNetwork {
    pub size: usize,
    /// Free-flow travel time of boundary entry links, seconds.
    pub entry_travel_s: Seconds,
    /// Free-flow travel time between column `c` and `c + 1`.
    pub ew_block_s: Vec<Seconds>,
    /// Free-flow travel time between row `r` and `r + 1`.
    pub ns_block_s: Vec<Seconds>,
    /// Vehicles per second per approach while green.
    pub saturation_flow: f64,
    /// Row whose eastbound links carry the bus line.
    pub corridor_row: usize,
    /// `(row, col)` of intersections near elder centers, clinics, schools.
    pub sensitive_sites: Vec<(usize, usize)>,
}

impl GridNetwork {
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.size + col
    }

    pub fn count(&self) -> usize {
        self.size * self.size
    }

    /// Next intersection downstream of `i` in direction `d`.
    pub fn downstream(&self, i: usize, d: Dir) -> Option<usize> {
        let (r, c) = (i / self.size, i % self.size);
        match d {
            Dir::Eastbound => (c + 1 < self.size).then(|| self.index(r, c + 1)),
            Dir::Westbound => c.checked_sub(1).map(|c| self.index(r, c)),
            Dir::Southbound => (r + 1 < self.size).then(|| self.index(r + 1, c)),
            Dir::Northbound => r.checked_sub(1).map(|r| self.index(r, c)),
        }
    }

    /// First intersection reached from boundary entry `line` in direction `d`.
    pub fn entry(&self, d: Dir, line: usize) -> usize {
        let last = self.size - 1;
        match d {
            Dir::Eastbound => self.index(line, 0),
            Dir::Westbound => self.index(line, last),
            Dir::Southbound => self.index(0, line),
            Dir::Northbound => self.index(last, line),
        }
    }

    /// Free-flow time of the link that ends at approach `d` of `i`.
    pub fn travel_time(&self, i: usize, d: Dir) -> Seconds {
        let (r, c) = (i / self.size, i % self.size);
        let last = self.size - 1;
        match d {
            Dir::Eastbound if c > 0 => self.ew_block_s[c - 1],
            Dir::Westbound if c < last => self.ew_block_s[c],
            Dir::Southbound if r > 0 => self.ns_block_s[r - 1],
            Dir::Northbound if r < last => self.ns_block_s[r],
            _ => self.entry_travel_s,
        }
    }

    pub fn corridor(&self) -> Vec<usize> {
        (0..self.size).map(|c| self.index(self.corridor_row, c)).collect()
    }

    pub fn is_sensitive(&self, i: usize) -> bool {
        self.sensitive_sites.iter().any(|&(r, c)| self.index(r, c) == i)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryDemand {
    pub dir: Dir,
    pub line: usize,
    /// Vehicles per second, one value per demand period.
    pub rates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficDemand {
    pub period_s: Seconds,
    pub vehicles: Vec<EntryDemand>,
    /// Pedestrians per second at each intersection's crosswalks, per period.
    pub pedestrians: Vec<Vec<f64>>,
    /// Riders per second arriving at each bus stop.
    pub boarding_rate: f64,
    pub headway_target_s: Seconds,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalParams {
    pub min_green_s: Seconds,
    pub max_green_s: Seconds,
    pub clearance_s: Seconds,
    pub walk_s: Seconds,
    /// Oldest pedestrian wait that places a walk call.
    pub ped_max_wait_s: Seconds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedTimePlan {
    pub walk_s: Seconds,
    pub ns_green_s: Seconds,
    pub ew_green_s: Seconds,
    /// Shortest north–south green left after drift recovery.
    pub min_green_s: Seconds,
}

impl FixedTimePlan {
    pub fn cycle(&self, clearance: Seconds) -> Seconds {
        self.walk_s + self.ns_green_s + self.ew_green_s + 3 * clearance
    }

    /// Pedestrian red of an undisturbed cycle.
    pub fn nominal_red(&self, clearance: Seconds) -> Seconds {
        self.cycle(clearance) - self.walk_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TspParams {
    pub max_extension_s: Seconds,
    /// A bus due at the stop line within this many seconds is detected.
    pub detection_s: Seconds,
    /// North–south green served before an early east–west green.
    pub early_green_after_s: Seconds,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BusParams {
    pub dispatch_jitter_s: f64,
    pub base_dwell_s: f64,
    pub boarding_s_per_rider: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorParams {
    pub ped_window_s: Seconds,
    pub ped_wait_limit_s: f64,
    pub headway_window_s: Seconds,
    pub headway_tolerance_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficScenario {
    pub scenario_id: String,
    pub seed: u64,
    pub horizon_s: Seconds,
    pub network: GridNetwork,
    pub demand: TrafficDemand,
    pub signal: SignalParams,
    pub fixed_time: FixedTimePlan,
    pub tsp: TspParams,
    pub bus: BusParams,
    pub monitor: MonitorParams,
}

impl TrafficScenario {
    pub fn validate(&self) -> Result<(), CaseError> {
        let bad = |m: String| Err(CaseError::Scenario(m));
        let n = &self.network;
        if n.size < 2 {
            return bad("grid must be at least 2×2".into());
        }
        if n.corridor_row >= n.size {
            return bad(format!("corridor row {} outside the grid", n.corridor_row));
        }
        if n.sensitive_sites.iter().any(|&(r, c)| r >= n.size || c >= n.size) {
            return bad("sensitive site outside the grid".into());
        }
        if n.ew_block_s.len() != n.size - 1 || n.ns_block_s.len() != n.size - 1 {
            return bad(format!(
                "a {0}×{0} grid needs {1} block times per axis",
                n.size,
                n.size - 1
            ));
        }
        let times = n.ew_block_s.iter().chain(&n.ns_block_s).chain([&n.entry_travel_s]);
        if !(n.saturation_flow > 0.0) || times.into_iter().any(|t| *t < 2) {
            return bad("saturation flow must be positive and link travel times at least 2 s".into());
        }
        let d = &self.demand;
        if d.period_s == 0 || d.headway_target_s == 0 {
            return bad("demand period and headway target must be positive".into());
        }
        for e in &d.vehicles {
            if e.line >= n.size {
                return bad(format!("entry line {} outside the grid", e.line));
            }
            if e.rates.is_empty() || e.rates.iter().any(|r| !(*r >= 0.0)) {
                return bad("vehicle rates must be nonnegative".into());
            }
        }
        if d.pedestrians.len() != n.count() {
            return bad(format!(
                "{} pedestrian series for {} intersections",
                d.pedestrians.len(),
                n.count()
            ));
        }
        if d.pedestrians.iter().flatten().any(|r| !(*r >= 0.0)) || !(d.boarding_rate >= 0.0) {
            return bad("pedestrian rates must be nonnegative".into());
        }
        let s = &self.signal;
        if s.min_green_s > s.max_green_s || s.walk_s == 0 {
            return bad("min green must not exceed max green; walk must be positive".into());
        }
        Ok(())
    }

    fn period(&self, t: Seconds) -> usize {
        (t / self.demand.period_s) as usize
    }

    fn rate(series: &[f64], period: usize) -> f64 {
        series.get(period).or(series.last()).copied().unwrap_or(0.0)
    }

    /// Scenario with crosswalk and stop demand removed.
    pub fn without_pedestrians(&self) -> TrafficScenario {
        let mut s = self.clone();
        s.scenario_id = format!("{}-no-peds", self.scenario_id);
        for series in &mut s.demand.pedestrians {
            series.iter_mut().for_each(|r| *r = 0.0);
        }
        s.demand.boarding_rate = 0.0;
        s
    }
}

const PROFILE: [f64; 12] = [0.85, 0.95, 1.0, 1.05, 1.1, 1.1, 1.05, 1.0, 0.95, 0.9, 0.9, 0.85];

/// Three-hour peak on a grid with a heavy east–west arterial pattern and
/// three sensitive sites along and beside the bus corridor.
pub fn fixture(seed: u64) -> TrafficScenario {
    let size = 4;
    let series = |base: f64| PROFILE.iter().map(|m| base * m).collect::<Vec<_>>();
    let mut vehicles = Vec::new();
    for line in 0..size {
        vehicles.push(EntryDemand {
            dir: Dir::Eastbound,
            line,
            rates: series(0.14),
        });
        vehicles.push(EntryDemand {
            dir: Dir::Westbound,
            line,
            rates: series(0.14),
        });
        vehicles.push(EntryDemand {
            dir: Dir::Southbound,
            line,
            rates: series(0.08),
        });
        vehicles.push(EntryDemand {
            dir: Dir::Northbound,
            line,
            rates: series(0.08),
        });
    }
    TrafficScenario {
        scenario_id: format!("traffic-fixture-{seed}"),
        seed,
        horizon_s: 3 * 3600,
        network: GridNetwork {
            size,
            entry_travel_s: 20,
            ew_block_s: vec![18, 30, 38],
            ns_block_s: vec![38, 30, 18],
            saturation_flow: 0.5,
            corridor_row: 1,
            sensitive_sites: vec![(1, 1), (1, 2), (2, 1)],
        },
        demand: TrafficDemand {
            period_s: 900,
            vehicles,
            pedestrians: vec![series(0.025); size * size],
            boarding_rate: 0.1,
            headway_target_s: 300,
        },
        signal: SignalParams {
            min_green_s: 10,
            max_green_s: 60,
            clearance_s: 2,
            walk_s: 10,
            ped_max_wait_s: 170,
        },
        fixed_time: FixedTimePlan {
            walk_s: 10,
            ns_green_s: 18,
            ew_green_s: 22,
            min_green_s: 10,
        },
        tsp: TspParams {
            max_extension_s: 10,
            detection_s: 20,
            early_green_after_s: 0,
        },
        bus: BusParams {
            dispatch_jitter_s: 40.0,
            base_dwell_s: 10.0,
            boarding_s_per_rider: 2.5,
        },
        monitor: MonitorParams {
            ped_window_s: 900,
            ped_wait_limit_s: 60.0,
            headway_window_s: 1800,
            headway_tolerance_s: 120.0,
        },
    }
}

// ---------------------------------------------------------------------------
// State
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub id: u64,
    pub entered: Seconds,
    pub joined: Seconds,
    pub delay: Seconds,
    pub bus: Option<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct Approach {
    pub queue: VecDeque<Vehicle>,
    /// Vehicles on the upstream link with their stop-line arrival time.
    pub transit: Vec<(Seconds, Vehicle)>,
    credit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalState {
    pub phase: Phase,
    /// Seconds served in `phase` since its clearance ended.
    pub elapsed: Seconds,
    /// Seconds of this green during which the conflicting vehicle phase
    /// had traffic waiting; drives the max-green limit.
    pub call_s: Seconds,
    /// Remaining all-red before `next` starts.
    pub clearance_left: Seconds,
    pub next: Phase,
}

impl SignalState {
    pub fn new(phase: Phase) -> Self {
        SignalState {
            phase,
            elapsed: 0,
            call_s: 0,
            clearance_left: 0,
            next: phase,
        }
    }

    pub fn in_clearance(&self) -> bool {
        self.clearance_left > 0
    }

    /// Phase actually serving this second, if any.
    pub fn serving(&self) -> Option<Phase> {
        (!self.in_clearance()).then_some(self.phase)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Crosswalks {
    pub waiting: VecDeque<Seconds>,
    acc: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TrafficStats {
    pub generated: u64,
    pub exited: u64,
    pub car_delays: Vec<f64>,
    /// Signal delay of each bus that completed the corridor.
    pub bus_delays: Vec<f64>,
    /// `(served_at, wait)` at sensitive sites.
    pub sensitive_waits: Vec<(Seconds, f64)>,
    /// Walk intervals per intersection.
    pub walks: Vec<Vec<(Seconds, Seconds)>>,
    /// Bus departure times per stop, in departure order.
    pub departures: Vec<Vec<Seconds>>,
    /// Times buses cleared each corridor intersection.
    pub bus_passes: Vec<Vec<Seconds>>,
    /// Green seconds per intersection per phase.
    pub green_time: Vec<[Seconds; 3]>,
    /// Intervals during which the rolling pedestrian median exceeded the limit.
    pub downtime: Vec<(Seconds, Seconds)>,
}

#[derive(Debug, Clone)]
pub struct TrafficState {
    pub scenario: TrafficScenario,
    pub now: Seconds,
    /// `[intersection][direction]`.
    pub approaches: Vec<[Approach; 4]>,
    pub signals: Vec<SignalState>,
    pub crosswalks: Vec<Crosswalks>,
    pub stats: TrafficStats,
    entry_acc: Vec<f64>,
    bus_dispatch: Vec<Seconds>,
    next_bus: usize,
    next_id: u64,
}

impl TrafficState {
    pub fn new(scenario: TrafficScenario) -> Self {
        let n = scenario.network.count();
        let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
        let entry_acc = (0..scenario.demand.vehicles.len())
            .map(|_| rng.gen_range(0.0..1.0))
            .collect();
        let crosswalks = (0..n)
            .map(|_| Crosswalks {
                waiting: VecDeque::new(),
                acc: rng.gen_range(0.0..1.0),
            })
            .collect();
        let h = scenario.demand.headway_target_s as f64;
        let j = scenario.bus.dispatch_jitter_s;
        let mut bus_dispatch = Vec::new();
        let mut k = 0;
        loop {
            let jitter = if j > 0.0 { rng.gen_range(-j..=j) } else { 0.0 };
            let t = ((k as f64 + 0.5) * h + jitter).round().max(0.0) as Seconds;
            if t >= scenario.horizon_s {
                break;
            }
            bus_dispatch.push(t);
            k += 1;
        }
        let size = scenario.network.size;
        TrafficState {
            approaches: (0..n).map(|_| Default::default()).collect(),
            signals: vec![SignalState::new(Phase::NsGreen); n],
            crosswalks,
            stats: TrafficStats {
                walks: vec![Vec::new(); n],
                departures: vec![Vec::new(); size],
                bus_passes: vec![Vec::new(); size],
                green_time: vec![[0; 3]; n],
                ..Default::default()
            },
            entry_acc,
            bus_dispatch,
            next_bus: 0,
            next_id: 0,
            now: 0,
            scenario,
        }
    }

    pub fn queue_len(&self, i: usize, d: Dir) -> usize {
        self.approaches[i][d.index()].queue.len()
    }

    pub fn vehicles_in_network(&self) -> u64 {
        self.approaches
            .iter()
            .flatten()
            .map(|a| (a.queue.len() + a.transit.len()) as u64)
            .sum()
    }

    fn oldest_ped_wait(&self, i: usize) -> Option<Seconds> {
        self.crosswalks[i].waiting.front().map(|&a| self.now.saturating_sub(a))
    }

    /// A bus is queued at, or due within the detection horizon at, the
    /// corridor approach of `i`. With `late_only`, the bus also has to be
    /// behind: the previous bus crossed `i` at least one headway ago.
    pub fn bus_near(&self, i: usize, horizon: Seconds, late_only: bool) -> bool {
        let a = &self.approaches[i][Dir::Eastbound.index()];
        let near = a.queue.iter().any(|v| v.bus.is_some())
            || a.transit
                .iter()
                .any(|(due, v)| v.bus.is_some() && *due <= self.now + horizon);
        let col = i % self.scenario.network.size;
        let late = || {
            self.stats.bus_passes[col]
                .last()
                .is_none_or(|p| self.now - p >= self.scenario.demand.headway_target_s)
        };
        near && (!late_only || late())
    }

    fn spawn(&mut self, t: Seconds) {
        let scn = &self.scenario;
        let period = scn.period(t);
        let mut new = Vec::new();
        for (k, e) in scn.demand.vehicles.iter().enumerate() {
            self.entry_acc[k] += TrafficScenario::rate(&e.rates, period);
            while self.entry_acc[k] >= 1.0 {
                self.entry_acc[k] -= 1.0;
                new.push((scn.network.entry(e.dir, e.line), e.dir, None));
            }
        }
        while self.next_bus < self.bus_dispatch.len() && self.bus_dispatch[self.next_bus] <= t {
            let row = scn.network.corridor_row;
            new.push((
                scn.network.entry(Dir::Eastbound, row),
                Dir::Eastbound,
                Some(self.next_bus),
            ));
            self.next_bus += 1;
        }
        for (i, d, bus) in new {
            let v = Vehicle {
                id: self.next_id,
                entered: t,
                joined: t,
                delay: 0,
                bus,
            };
            self.next_id += 1;
            self.stats.generated += 1;
            self.push_link(i, d, v, t);
        }
    }

    /// Put `v` on the link toward approach `(i, d)`, entering it at `t`.
    fn push_link(&mut self, i: usize, d: Dir, v: Vehicle, t: Seconds) {
        let due = t + self.scenario.network.travel_time(i, d);
        self.approaches[i][d.index()].transit.push((due, v));
    }

    /// Dwell at stop `stop` for a bus arriving at `arrive`; riders accumulate
    /// since the previous departure. Buses cannot overtake at a stop.
    fn board(&mut self, stop: usize, arrive: Seconds) -> Seconds {
        let deps = &mut self.stats.departures[stop];
        let last = deps.last().copied();
        let h = self.scenario.demand.headway_target_s;
        let since = arrive.saturating_sub(last.unwrap_or(arrive.saturating_sub(h)));
        let riders = self.scenario.demand.boarding_rate * since as f64;
        let dwell = self.scenario.bus.base_dwell_s + self.scenario.bus.boarding_s_per_rider * riders;
        let depart = (arrive + dwell.round() as Seconds).max(last.unwrap_or(0));
        deps.push(depart);
        depart
    }

    fn arrive(&mut self, t: Seconds) {
        for a in self.approaches.iter_mut().flatten() {
            if a.transit.iter().all(|(due, _)| *due > t) {
                continue;
            }
            a.transit.sort_by_key(|(due, v)| (*due, v.id));
            let split = a.transit.partition_point(|(due, _)| *due <= t);
            for (_, mut v) in a.transit.drain(..split) {
                v.joined = t;
                a.queue.push_back(v);
            }
        }
    }

    fn pedestrians(&mut self, t: Seconds) {
        let period = self.scenario.period(t);
        for i in 0..self.crosswalks.len() {
            let rate = TrafficScenario::rate(&self.scenario.demand.pedestrians[i], period);
            let cw = &mut self.crosswalks[i];
            cw.acc += rate;
            while cw.acc >= 1.0 {
                cw.acc -= 1.0;
                cw.waiting.push_back(t);
            }
        }
    }

    fn update_signals(&mut self, t: Seconds, desired: &[Phase]) {
        let clearance = self.scenario.signal.clearance_s;
        for (i, want) in desired.iter().enumerate() {
            let s = &mut self.signals[i];
            if s.in_clearance() {
                s.clearance_left -= 1;
                if s.clearance_left == 0 {
                    s.phase = s.next;
                    s.elapsed = 0;
                    s.call_s = 0;
                    if s.phase == Phase::PedWalk {
                        self.stats.walks[i].push((t, t));
                    }
                }
            } else if *want != s.phase {
                if s.phase == Phase::PedWalk {
                    if let Some(w) = self.stats.walks[i].last_mut() {
                        w.1 = t;
                    }
                }
                s.next = *want;
                s.clearance_left = clearance;
                if clearance == 0 {
                    s.phase = *want;
                    s.elapsed = 0;
                    s.call_s = 0;
                    if s.phase == Phase::PedWalk {
                        self.stats.walks[i].push((t, t));
                    }
                }
            }
            for a in self.approaches[i].iter_mut() {
                if s.serving().is_none_or(|p| p == Phase::PedWalk) {
                    a.credit = 0.0;
                }
            }
        }
    }

    fn serve(&mut self, t: Seconds) {
        let n = self.signals.len();
        let sat = self.scenario.network.saturation_flow;
        for i in 0..n {
            let Some(phase) = self.signals[i].serving() else {
                continue;
            };
            self.signals[i].elapsed += 1;
            self.stats.green_time[i][phase.index()] += 1;
            let calling = Dir::ALL
                .iter()
                .any(|d| d.phase() != phase && !self.approaches[i][d.index()].queue.is_empty());
            if phase != Phase::PedWalk && calling {
                self.signals[i].call_s += 1;
            }
            if phase == Phase::PedWalk {
                let sensitive = self.scenario.network.is_sensitive(i);
                if let Some(w) = self.stats.walks[i].last_mut() {
                    w.1 = t + 1;
                }
                while let Some(arrival) = self.crosswalks[i].waiting.pop_front() {
                    if sensitive {
                        self.stats.sensitive_waits.push((t, (t - arrival) as f64));
                    }
                }
                continue;
            }
            for d in Dir::ALL {
                if d.phase() != phase {
                    self.approaches[i][d.index()].credit = 0.0;
                    continue;
                }
                let a = &mut self.approaches[i][d.index()];
                a.credit += sat;
                let mut out = Vec::new();
                while a.credit >= 1.0 {
                    let Some(mut v) = a.queue.pop_front() else {
                        break;
                    };
                    a.credit -= 1.0;
                    v.delay += t - v.joined;
                    out.push(v);
                }
                a.credit = a.credit.min(1.0);
                for v in out {
                    let next = self.scenario.network.downstream(i, d);
                    let mut enter = t;
                    if v.bus.is_some() {
                        // Far-side stop halfway along the next link.
                        let col = i % self.scenario.network.size;
                        self.stats.bus_passes[col].push(t);
                        let link = next.map_or(self.scenario.network.entry_travel_s, |j| {
                            self.scenario.network.travel_time(j, d)
                        });
                        enter = self.board(col, t + link / 2) - link / 2;
                    }
                    match next {
                        Some(j) => self.push_link(j, d, v, enter),
                        None => {
                            self.stats.exited += 1;
                            match v.bus {
                                None => self.stats.car_delays.push(v.delay as f64),
                                Some(_) => self.stats.bus_delays.push(v.delay as f64),
                            }
                        }
                    }
                }
            }
        }
    }

    /// Median pedestrian wait at sensitive sites over the rolling window,
    /// counting pedestrians still waiting at their current age.
    pub fn rolling_ped_median(&self, now: Seconds) -> Option<f64> {
        let window = self.scenario.monitor.ped_window_s;
        let from = now.saturating_sub(window);
        let waits = &self.stats.sensitive_waits;
        let start = waits.partition_point(|(at, _)| *at < from);
        let mut sample: Vec<f64> = waits[start..].iter().map(|(_, w)| *w).collect();
        for (i, cw) in self.crosswalks.iter().enumerate() {
            if self.scenario.network.is_sensitive(i) {
                sample.extend(cw.waiting.iter().map(|a| now.saturating_sub(*a) as f64));
            }
        }
        (!sample.is_empty()).then(|| percentile(&sample, 50.0))
    }

    /// Share of recent stop departures whose headway is within tolerance.
    pub fn headway_compliance(&self, now: Seconds) -> f64 {
        let m = &self.scenario.monitor;
        let h = self.scenario.demand.headway_target_s as f64;
        let from = now.saturating_sub(m.headway_window_s);
        let mut total = 0;
        let mut ok = 0;
        for deps in &self.stats.departures {
            for w in deps.windows(2) {
                if w[1] > from && w[1] <= now {
                    total += 1;
                    if ((w[1] - w[0]) as f64 - h).abs() <= m.headway_tolerance_s {
                        ok += 1;
                    }
                }
            }
        }
        if total == 0 {
            1.0
        } else {
            ok as f64 / total as f64
        }
    }

    fn tick(&mut self, desired: &[Phase]) {
        let t = self.now;
        self.spawn(t);
        self.arrive(t);
        self.pedestrians(t);
        self.update_signals(t, desired);
        self.serve(t);
        self.now = t + 1;
        let over = self
            .rolling_ped_median(self.now)
            .is_some_and(|m| m > self.scenario.monitor.ped_wait_limit_s);
        if over {
            match self.stats.downtime.last_mut() {
                Some(last) if last.1 == t => last.1 = t + 1,
                _ => self.stats.downtime.push((t, t + 1)),
            }
        }
    }

    pub fn monitors(&self, step: usize) -> Result<MonitorVector, GateError> {
        let mut m = MonitorVector::quiet(step);
        let minutes =
            accessibility_downtime(&self.stats.downtime, self.now).map_err(|e| sim_error(step, e.to_string()))?;
        m.accessibility.insert(SENSITIVE_GROUP.into(), minutes);
        m.quality
            .insert(HEADWAY_SERVICE.into(), self.headway_compliance(self.now));
        Ok(m)
    }
}

// ---------------------------------------------------------------------------
// Controllers
// ---------------------------------------------------------------------------

/// Pressure of the north–south and east–west phases at intersection `i`:
/// queued vehicles on the approaches a phase serves minus those queued at
/// the approaches they feed.
pub fn phase_pressures(state: &TrafficState, i: usize) -> [f64; 2] {
    let net = &state.scenario.network;
    let mut p = [0.0; 2];
    for d in Dir::ALL {
        let up = state.queue_len(i, d) as f64;
        let down = net.downstream(i, d).map_or(0.0, |j| state.queue_len(j, d) as f64);
        p[d.phase().index()] += up - down;
    }
    p
}

/// Max-pressure switching rule for one intersection. The walk is served
/// only on a pedestrian call, placed once the oldest waiting pedestrian has
/// waited `ped_max_wait_s`.
pub fn pressure_decision(
    signal: SignalState,
    pressures: [f64; 2],
    oldest_ped_wait: Option<Seconds>,
    params: &SignalParams,
) -> Phase {
    if signal.in_clearance() {
        return signal.next;
    }
    let best = if pressures[1] > pressures[0] {
        Phase::EwGreen
    } else {
        Phase::NsGreen
    };
    match signal.phase {
        Phase::PedWalk if signal.elapsed < params.walk_s => Phase::PedWalk,
        Phase::PedWalk => best,
        current => {
            if signal.elapsed < params.min_green_s {
                return current;
            }
            if oldest_ped_wait.is_some_and(|w| w >= params.ped_max_wait_s) {
                return Phase::PedWalk;
            }
            let other = if current == Phase::NsGreen {
                Phase::EwGreen
            } else {
                Phase::NsGreen
            };
            let (cur, alt) = (pressures[current.index()], pressures[other.index()]);
            if alt > cur || (signal.call_s >= params.max_green_s && alt > 0.0) {
                other
            } else {
                current
            }
        }
    }
}

/// Baseline decisions for every intersection.
pub fn adaptive_control_step(state: &TrafficState) -> Vec<Phase> {
    (0..state.signals.len())
        .map(|i| {
            pressure_decision(
                state.signals[i],
                phase_pressures(state, i),
                state.oldest_ped_wait(i),
                &state.scenario.signal,
            )
        })
        .collect()
}

/// Longest pedestrian red the fixed plan may ever produce.
pub const PED_RED_LIMIT_S: Seconds = 60;

/// Cycle clock of the coordinated fixed-time plan.
///
/// Each intersection runs walk, north–south, east–west, each preceded by a
/// clearance. Intersections on alternating squares of the lattice run half a
/// cycle apart, which gives two-way progression on every street when a link
/// takes half a cycle to traverse. Priority extensions and early greens move
/// an intersection's clock; the drift is paid back inside later north–south
/// greens, never at the expense of the walk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ring {
    plan: FixedTimePlan,
    clearance: Seconds,
    /// Start of the current cycle per intersection.
    pub origin: Vec<i64>,
    nominal: Vec<i64>,
    /// Seconds added to the current pedestrian red.
    pub stretch: Vec<Seconds>,
    /// Priority extension granted in the current red.
    pub extension: Vec<Seconds>,
    /// North–south green cut short for a bus in the current red.
    pub early_green: Vec<bool>,
}

impl Ring {
    /// Plan for a `size`×`size` grid whose first cycle starts at `start`.
    pub fn coordinated(size: usize, plan: FixedTimePlan, clearance: Seconds, start: Seconds) -> Self {
        let cycle = plan.cycle(clearance) as i64;
        let origin: Vec<i64> = (0..size * size)
            .map(|i| {
                let parity = (i / size + i % size) % 2;
                start as i64 - parity as i64 * cycle / 2
            })
            .collect();
        Ring {
            plan,
            clearance,
            nominal: origin.clone(),
            stretch: vec![0; origin.len()],
            extension: vec![0; origin.len()],
            early_green: vec![false; origin.len()],
            origin,
        }
    }

    fn cycle(&self) -> i64 {
        self.plan.cycle(self.clearance) as i64
    }

    /// Position within the cycle.
    pub fn local(&self, i: usize, now: Seconds) -> Seconds {
        (now as i64 - self.origin[i]).rem_euclid(self.cycle()) as Seconds
    }

    /// How far behind the coordinated plan the intersection runs.
    pub fn drift(&self, i: usize) -> i64 {
        let c = self.cycle();
        let d = (self.origin[i] - self.nominal[i]).rem_euclid(c);
        if d > c / 2 {
            d - c
        } else {
            d
        }
    }

    fn walk_end(&self) -> Seconds {
        self.clearance + self.plan.walk_s
    }

    fn ns_end(&self) -> Seconds {
        self.walk_end() + self.clearance + self.plan.ns_green_s
    }

    pub fn target(&self, i: usize, now: Seconds) -> Phase {
        let tau = self.local(i, now);
        if tau < self.walk_end() {
            Phase::PedWalk
        } else if tau < self.ns_end() {
            Phase::NsGreen
        } else {
            Phase::EwGreen
        }
    }

    /// Seconds the current red may still be stretched.
    fn slack(&self, i: usize) -> Seconds {
        PED_RED_LIMIT_S.saturating_sub(self.plan.nominal_red(self.clearance) + self.stretch[i])
    }

    /// Hold the current second: the cycle clock does not advance.
    fn hold(&mut self, i: usize) {
        self.origin[i] += 1;
        self.stretch[i] += 1;
    }

    /// Jump to the end of the north–south green.
    fn cut_ns(&mut self, i: usize, now: Seconds) {
        let tau = self.local(i, now);
        self.origin[i] -= (self.ns_end() - tau) as i64;
    }

    /// Seconds of north–south green served so far while the ring is in its
    /// north–south part (zero during the leading clearance).
    fn ns_served(&self, i: usize, now: Seconds) -> Option<Seconds> {
        let tau = self.local(i, now);
        let green = self.walk_end() + self.clearance;
        (tau >= self.walk_end() && tau < self.ns_end()).then(|| tau.saturating_sub(green))
    }
}

/// Phase decisions of the fixed ring at `now`, after paying back drift
/// within the north–south green.
pub fn fixed_time_ped_recall_step(ring: &mut Ring, now: Seconds) -> Vec<Phase> {
    for i in 0..ring.origin.len() {
        let tau = ring.local(i, now);
        if tau == ring.walk_end() {
            ring.stretch[i] = 0;
            ring.extension[i] = 0;
            ring.early_green[i] = false;
        }
        let drift = ring.drift(i);
        if let Some(served) = ring.ns_served(i, now) {
            let spare = ring.plan.ns_green_s.saturating_sub(ring.plan.min_green_s);
            let remaining = ring.ns_end() - ring.local(i, now);
            if drift > 0 && remaining <= (drift as Seconds).min(spare) && served >= ring.plan.min_green_s {
                ring.cut_ns(i, now);
            }
        } else if tau == ring.ns_end() && drift < 0 && !ring.early_green[i] && ring.slack(i) > 0 {
            ring.hold(i);
        }
    }
    (0..ring.origin.len()).map(|i| ring.target(i, now)).collect()
}

/// Transit priority on corridor intersections with a bus detected: hold the
/// east–west green up to the extension cap, or cut a north–south green short
/// once it has run its minimum. Must run before the ring step of the same
/// second.
pub fn tsp_adjust(tsp: &TspParams, ring: &mut Ring, now: Seconds, corridor: &[usize], bus_near: &[bool]) {
    for (&i, &near) in corridor.iter().zip(bus_near) {
        if !near {
            continue;
        }
        if ring.local(i, now) == 0 {
            // East–west green just ran out.
            if ring.extension[i] < tsp.max_extension_s && ring.slack(i) > 0 {
                ring.hold(i);
                ring.extension[i] += 1;
            }
        } else if ring.ns_served(i, now).is_some_and(|s| s >= tsp.early_green_after_s) {
            ring.cut_ns(i, now);
            ring.early_green[i] = true;
        }
    }
}

// ---------------------------------------------------------------------------
// Gate plumbing
// ---------------------------------------------------------------------------

pub struct TrafficSim {
    state: TrafficState,
}

impl TrafficSim {
    pub fn new(scenario: TrafficScenario) -> Self {
        TrafficSim {
            state: TrafficState::new(scenario),
        }
    }

    pub fn into_state(self) -> TrafficState {
        self.state
    }
}

impl Simulation for TrafficSim {
    type State = TrafficState;
    type Action = Vec<Phase>;

    fn domain(&self) -> Domain {
        Domain::Transport
    }

    fn scenario_id(&self) -> String {
        self.state.scenario.scenario_id.clone()
    }

    fn clock(&self) -> GateClock {
        GateClock {
            step_seconds: 1,
            horizon_steps: self.state.scenario.horizon_s as usize,
        }
    }

    fn state(&self) -> &TrafficState {
        &self.state
    }

    fn predict(&self, _: usize, _: &Vec<Phase>) -> Result<Option<MonitorVector>, GateError> {
        Ok(None)
    }

    fn apply(&mut self, step: usize, action: &Vec<Phase>) -> Result<(), GateError> {
        if action.len() != self.state.signals.len() {
            return Err(sim_error(
                step,
                format!("{} phases for {} signals", action.len(), self.state.signals.len()),
            ));
        }
        if self.state.now != step as Seconds {
            return Err(sim_error(step, format!("simulation clock at {}", self.state.now)));
        }
        self.state.tick(action);
        Ok(())
    }

    fn observe(&self, step: usize) -> Result<MonitorVector, GateError> {
        self.state.monitors(step)
    }
}

pub struct PressurePolicy;

impl ControlPolicy<TrafficState> for PressurePolicy {
    type Action = Vec<Phase>;

    fn policy_id(&self) -> PolicyId {
        PolicyId::new("max-pressure", "1.0")
    }

    fn decide(&mut self, _: usize, state: &TrafficState) -> Vec<Phase> {
        adaptive_control_step(state)
    }
}

pub struct TrafficFallbacks {
    size: usize,
    ring: Ring,
}

impl TrafficFallbacks {
    pub fn new(scenario: &TrafficScenario) -> Self {
        let size = scenario.network.size;
        TrafficFallbacks {
            size,
            ring: Ring::coordinated(size, scenario.fixed_time, scenario.signal.clearance_s, 0),
        }
    }
}

impl FallbackBinding<TrafficState> for TrafficFallbacks {
    type Action = Vec<Phase>;

    fn supports(&self, name: &str) -> bool {
        name == FIXED_TIME_PED_RECALL || name == TSP_ENABLED
    }

    fn engage(&mut self, _: &str, window: ActiveWindow) {
        let Ring { plan, clearance, .. } = self.ring;
        self.ring = Ring::coordinated(self.size, plan, clearance, window.start_step as Seconds);
    }

    fn act(&mut self, name: &str, _: usize, state: &TrafficState) -> Vec<Phase> {
        let scn = &state.scenario;
        let corridor = scn.network.corridor();
        // The municipal plan favours only buses running behind; the civic
        // plan favours every bus.
        let late_only = name == FIXED_TIME_PED_RECALL;
        let near: Vec<bool> = corridor
            .iter()
            .map(|&i| state.bus_near(i, scn.tsp.detection_s, late_only))
            .collect();
        tsp_adjust(&scn.tsp, &mut self.ring, state.now, &corridor, &near);
        fixed_time_ped_recall_step(&mut self.ring, state.now)
    }
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficReport {
    pub vehicle_delay_mean_s: f64,
    pub vehicle_delay_median_s: f64,
    pub ped_wait_mean_s: f64,
    pub ped_wait_median_s: f64,
    pub headway_dev_mean_min: f64,
    pub headway_dev_median_min: f64,
    pub headway_dev_p95_min: f64,
    pub bus_signal_delay_mean_s: f64,
    pub vehicles_generated: u64,
    pub vehicles_exited: u64,
    pub vehicles_in_network: u64,
    pub peds_served_sensitive: usize,
    pub peds_waiting_sensitive: usize,
}

/// Absolute headway deviations in minutes at every stop departure after
/// the first.
pub fn headway_deviations(departures: &[Vec<Seconds>], target_s: Seconds) -> Vec<f64> {
    departures
        .iter()
        .flat_map(|d| {
            d.windows(2)
                .map(|w| ((w[1] - w[0]) as f64 - target_s as f64).abs() / 60.0)
        })
        .collect()
}

impl TrafficReport {
    pub fn from_state(state: &TrafficState) -> Self {
        let s = &state.stats;
        let waits: Vec<f64> = s.sensitive_waits.iter().map(|(_, w)| *w).collect();
        let net = &state.scenario.network;
        // Departures booked past the horizon never happened.
        let departures: Vec<Vec<Seconds>> = s
            .departures
            .iter()
            .map(|d| d.iter().copied().filter(|t| *t < state.scenario.horizon_s).collect())
            .collect();
        let dev = headway_deviations(&departures, state.scenario.demand.headway_target_s);
        TrafficReport {
            vehicle_delay_mean_s: mean(&s.car_delays),
            vehicle_delay_median_s: percentile(&s.car_delays, 50.0),
            ped_wait_mean_s: mean(&waits),
            ped_wait_median_s: percentile(&waits, 50.0),
            headway_dev_mean_min: mean(&dev),
            headway_dev_median_min: percentile(&dev, 50.0),
            headway_dev_p95_min: percentile(&dev, 95.0),
            bus_signal_delay_mean_s: mean(&s.bus_delays),
            vehicles_generated: s.generated,
            vehicles_exited: s.exited,
            vehicles_in_network: state.vehicles_in_network(),
            peds_served_sensitive: waits.len(),
            peds_waiting_sensitive: (0..net.count())
                .filter(|&i| net.is_sensitive(i))
                .map(|i| state.crosswalks[i].waiting.len())
                .sum(),
        }
    }
}

/// Longest pedestrian red at any intersection while a fallback was in
/// force, measured from the later of the last walk and the engagement.
pub fn max_ped_red_under_fallback(state: &TrafficState, windows: &[(usize, usize)]) -> Option<Seconds> {
    let mut worst: Option<Seconds> = None;
    for &(start, end) in windows {
        let (start, end) = (start as Seconds, end as Seconds);
        for walks in &state.stats.walks {
            let mut red_from = start;
            for &(ws, we) in walks.iter().filter(|(ws, we)| *we > start && *ws < end) {
                if ws > red_from {
                    worst = Some(worst.unwrap_or(0).max(ws - red_from));
                }
                red_from = red_from.max(we);
            }
            if end > red_from {
                worst = Some(worst.unwrap_or(0).max(end - red_from));
            }
        }
    }
    worst
}

#[derive(Debug, Clone, Serialize)]
pub struct TrafficCase {
    pub baseline: TrafficReport,
    pub gated: TrafficReport,
    pub max_ped_red_fallback_s: Option<Seconds>,
    pub baseline_green: Vec<[Seconds; 3]>,
    pub run: SimulationReport,
}

/// Run the baseline controller alone.
pub fn run_baseline(scenario: &TrafficScenario) -> Result<TrafficState, CaseError> {
    let mut sim = TrafficSim::new(scenario.clone());
    let mut policy = PressurePolicy;
    for step in 0..scenario.horizon_s as usize {
        let a = policy.decide(step, sim.state());
        sim.apply(step, &a)?;
    }
    Ok(sim.into_state())
}

pub fn run_traffic_case(
    scenario: &TrafficScenario,
    config: &GovernanceConfig,
    mode: RunMode,
) -> Result<TrafficCase, CaseError> {
    scenario.validate()?;
    let base_state = run_baseline(scenario)?;
    let mut sim = TrafficSim::new(scenario.clone());
    let run = run_gated(
        &mut sim,
        &mut PressurePolicy,
        &mut TrafficFallbacks::new(scenario),
        config,
        mode,
    )?;
    let gated_state = sim.into_state();
    for st in [&base_state, &gated_state] {
        if st.stats.generated != st.stats.exited + st.vehicles_in_network() {
            return Err(CaseError::Invariant(format!(
                "vehicle count mismatch: {} generated, {} exited, {} in network",
                st.stats.generated,
                st.stats.exited,
                st.vehicles_in_network()
            )));
        }
    }
    let max_red = max_ped_red_under_fallback(&gated_state, &run.fallback_windows());
    if let Some(red) = max_red {
        if red > 61 {
            return Err(CaseError::Invariant(format!(
                "pedestrian red of {red} s under the fallback"
            )));
        }
    }
    Ok(TrafficCase {
        baseline: TrafficReport::from_state(&base_state),
        gated: TrafficReport::from_state(&gated_state),
        max_ped_red_fallback_s: max_red,
        baseline_green: base_state.stats.green_time.clone(),
        run,
    })
}

impl TrafficCase {
    fn label(&self) -> &'static str {
        match self.run.mode {
            RunMode::Actuated => "R2O",
            RunMode::Shadow => "R2O (shadow)",
        }
    }

    /// Vehicle delay and pedestrian wait, seconds.
    pub fn delay_table(&self) -> Table {
        let row = |name: &str, r: &TrafficReport| {
            vec![
                name.to_string(),
                format!("{:.1}", r.vehicle_delay_mean_s),
                format!("{:.1}", r.vehicle_delay_median_s),
                format!("{:.1}", r.ped_wait_mean_s),
                format!("{:.1}", r.ped_wait_median_s),
            ]
        };
        Table::new(
            "Traffic performance (s)",
            [
                "Policy",
                "Veh mean delay",
                "Veh median delay",
                "Ped mean wait",
                "Ped median wait",
            ],
            vec![row("Baseline", &self.baseline), row(self.label(), &self.gated)],
        )
    }

    /// Bus headway deviation, minutes.
    pub fn headway_table(&self) -> Table {
        let row = |name: &str, r: &TrafficReport| {
            vec![
                name.to_string(),
                format!("{:.2}", r.headway_dev_mean_min),
                format!("{:.2}", r.headway_dev_median_min),
                format!("{:.2}", r.headway_dev_p95_min),
            ]
        };
        Table::new(
            "Transit headway deviation (min)",
            ["Policy", "Mean", "Median", "95th pct"],
            vec![row("Baseline", &self.baseline), row(self.label(), &self.gated)],
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

    fn params() -> SignalParams {
        fixture(DEFAULT_SEED).signal
    }

    fn green(phase: Phase, elapsed: Seconds) -> SignalState {
        SignalState {
            elapsed,
            call_s: elapsed,
            ..SignalState::new(phase)
        }
    }

    #[test]
    fn zero_pressure_holds_phase() {
        for p in [Phase::NsGreen, Phase::EwGreen] {
            assert_eq!(pressure_decision(green(p, 30), [0.0; 2], None, &params()), p);
        }
    }

    #[test]
    fn heavier_approach_wins() {
        let d = pressure_decision(green(Phase::EwGreen, 15), [10.0, 2.0], None, &params());
        assert_eq!(d, Phase::NsGreen);
        let d = pressure_decision(green(Phase::PedWalk, 10), [10.0, 2.0], None, &params());
        assert_eq!(d, Phase::NsGreen);
    }

    #[test]
    fn min_green_and_clearance_respected() {
        let d = pressure_decision(green(Phase::EwGreen, 5), [10.0, 2.0], None, &params());
        assert_eq!(d, Phase::EwGreen);
        let s = SignalState {
            clearance_left: 1,
            next: Phase::PedWalk,
            ..SignalState::new(Phase::EwGreen)
        };
        assert_eq!(pressure_decision(s, [10.0, 0.0], None, &params()), Phase::PedWalk);
    }

    #[test]
    fn max_green_counts_from_the_conflicting_call() {
        let resting = SignalState {
            elapsed: 90,
            ..SignalState::new(Phase::NsGreen)
        };
        assert_eq!(pressure_decision(resting, [1.0, 1.0], None, &params()), Phase::NsGreen);
        let called = SignalState { call_s: 60, ..resting };
        assert_eq!(pressure_decision(called, [1.0, 1.0], None, &params()), Phase::EwGreen);
    }

    #[test]
    fn max_out_forces_walk() {
        let d = pressure_decision(green(Phase::NsGreen, 12), [10.0, 0.0], Some(170), &params());
        assert_eq!(d, Phase::PedWalk);
    }

    fn ring(size: usize, start: Seconds) -> Ring {
        let scn = fixture(DEFAULT_SEED);
        Ring::coordinated(size, scn.fixed_time, scn.signal.clearance_s, start)
    }

    fn run_ring(ring: &mut Ring, from: Seconds, to: Seconds, near: bool) -> Vec<Phase> {
        let tsp = fixture(DEFAULT_SEED).tsp;
        (from..to)
            .map(|t| {
                tsp_adjust(&tsp, ring, t, &[0], &[near]);
                fixed_time_ped_recall_step(ring, t)[0]
            })
            .collect()
    }

    fn count(v: &[Phase], p: Phase) -> usize {
        v.iter().filter(|x| **x == p).count()
    }

    #[test]
    fn ring_cycles_walk_ns_ew() {
        let plan = fixture(DEFAULT_SEED).fixed_time;
        assert_eq!(plan.cycle(2), 56);
        assert_eq!(plan.nominal_red(2), 46);
        assert!(plan.nominal_red(2) + fixture(DEFAULT_SEED).tsp.max_extension_s <= PED_RED_LIMIT_S);
        let mut r = ring(1, 100);
        let d = run_ring(&mut r, 100, 156, false);
        assert!(d[..12].iter().all(|p| *p == Phase::PedWalk));
        assert!(d[12..32].iter().all(|p| *p == Phase::NsGreen));
        assert!(d[32..].iter().all(|p| *p == Phase::EwGreen));
        assert_eq!(run_ring(&mut r, 156, 157, false), vec![Phase::PedWalk]);
    }

    #[test]
    fn alternate_squares_run_half_a_cycle_apart() {
        let r = ring(2, 0);
        assert_eq!(r.local(0, 0), 0);
        assert_eq!(r.local(1, 0), 28);
        assert_eq!(r.local(2, 0), 28);
        assert_eq!(r.local(3, 0), 0);
    }

    #[test]
    fn tsp_leaves_plan_alone_without_bus() {
        let mut a = ring(1, 0);
        let b = ring(1, 0);
        let d = run_ring(&mut a, 0, 500, false);
        assert_eq!(a, b);
        assert_eq!(count(&d, Phase::PedWalk), 9 * 12);
    }

    #[test]
    fn tsp_extends_green_for_a_bus_at_phase_end() {
        let mut r = ring(1, 0);
        run_ring(&mut r, 0, 56, false);
        // Bus detected as the east–west green runs out: held up to the cap.
        let d = run_ring(&mut r, 56, 67, true);
        assert_eq!(count(&d[..10], Phase::EwGreen), 10);
        assert_eq!(d[10], Phase::PedWalk);
        assert_eq!(r.drift(0), 10);
    }

    #[test]
    fn tsp_early_green_skips_north_south() {
        let mut r = ring(1, 0);
        let d = run_ring(&mut r, 0, 14, false);
        assert_eq!(d[12], Phase::NsGreen);
        let d = run_ring(&mut r, 14, 15, true);
        assert_eq!(d, vec![Phase::EwGreen]);
        assert!(r.drift(0) < 0);
    }

    #[test]
    fn drift_recovers_without_breaching_red_bound() {
        let mut r = ring(1, 0);
        run_ring(&mut r, 0, 56, false);
        run_ring(&mut r, 56, 67, true);
        assert_eq!(r.drift(0), 10);
        let d = run_ring(&mut r, 67, 400, false);
        assert_eq!(r.drift(0), 0);
        let mut red = 0;
        let mut worst = 0;
        for p in d {
            red = if p == Phase::PedWalk { 0 } else { red + 1 };
            worst = worst.max(red);
        }
        assert!(worst <= PED_RED_LIMIT_S);
        // Early green leaves the clock ahead; held north–south greens repay it.
        let mut r = ring(1, 0);
        run_ring(&mut r, 0, 14, false);
        run_ring(&mut r, 14, 15, true);
        run_ring(&mut r, 15, 600, false);
        assert_eq!(r.drift(0), 0);
    }

    #[test]
    fn bus_detection_horizon() {
        let scn = fixture(DEFAULT_SEED);
        let horizon = scn.tsp.detection_s;
        let mut st = TrafficState::new(scn);
        let i = st.scenario.network.corridor()[1];
        st.now = 1000;
        let bus = Vehicle {
            id: 1,
            entered: 900,
            joined: 900,
            delay: 0,
            bus: Some(0),
        };
        st.approaches[i][Dir::Eastbound.index()]
            .transit
            .push((1000 + horizon + 5, bus.clone()));
        assert!(!st.bus_near(i, horizon, false));
        st.approaches[i][Dir::Eastbound.index()].transit[0].0 = 1005;
        assert!(st.bus_near(i, horizon, false));
        // Previous bus crossed a minute ago: this one is early.
        st.stats.bus_passes[1].push(940);
        assert!(!st.bus_near(i, horizon, true));
        st.stats.bus_passes[1] = vec![600];
        assert!(st.bus_near(i, horizon, true));
    }

    #[test]
    fn downstream_and_entries() {
        let net = fixture(DEFAULT_SEED).network;
        assert_eq!(net.downstream(net.index(1, 3), Dir::Eastbound), None);
        assert_eq!(net.downstream(net.index(1, 2), Dir::Eastbound), Some(net.index(1, 3)));
        assert_eq!(net.downstream(net.index(0, 2), Dir::Northbound), None);
        assert_eq!(net.entry(Dir::Northbound, 2), net.index(3, 2));
        assert_eq!(net.corridor(), vec![4, 5, 6, 7]);
    }

    #[test]
    fn red_measured_from_engagement() {
        let mut st = TrafficState::new(fixture(DEFAULT_SEED));
        st.stats.walks = vec![vec![]; 16];
        st.stats.walks[0] = vec![(0, 10), (112, 122), (180, 190)];
        // Other intersections never walk inside [100, 200): red 100 s.
        assert_eq!(max_ped_red_under_fallback(&st, &[(100, 200)]), Some(100));
        for w in st.stats.walks.iter_mut().skip(1) {
            *w = vec![(105, 115), (160, 170)];
        }
        assert_eq!(max_ped_red_under_fallback(&st, &[(100, 200)]), Some(58));
    }
}
