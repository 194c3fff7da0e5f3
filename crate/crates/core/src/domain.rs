//! Shared vocabulary: slots, windows, containers, requests, costs, scenarios
//! and solutions, plus structural validation of scenarios and requests.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Duration, NaiveDate, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::choice::{ChoiceModelParams, TourAttributes};
use crate::optimizer::GaConfig;
use crate::traffic::NetworkConfig;

/// Current version written into scenario and solution files.
pub const SCHEMA_VERSION: u32 = 1;

/// Hours in one operation day; slots are hourly by default.
pub const SLOTS_PER_DAY: usize = 24;

/// Minimum lead between planning time and the requested slot start.
pub const MIN_LEAD_HOURS: i64 = 3;

/// One gate time slot of an operation day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeSlot {
    pub index: usize,
    pub start: DateTime<Utc>,
    pub width_minutes: u32,
}

impl TimeSlot {
    /// Hourly slot `index` of the operation day starting at midnight UTC of `day`.
    pub fn hourly(day: NaiveDate, index: usize) -> Self {
        let midnight = day.and_hms_opt(0, 0, 0).unwrap().and_utc();
        Self {
            index,
            start: midnight + Duration::hours(index as i64),
            width_minutes: 60,
        }
    }

    pub fn end(&self) -> DateTime<Utc> {
        self.start + Duration::minutes(self.width_minutes as i64)
    }

    pub fn hour(&self) -> u32 {
        self.start.hour()
    }
}

/// The whole day as contiguous hourly slots.
pub fn day_slots(day: NaiveDate) -> Vec<TimeSlot> {
    (0..SLOTS_PER_DAY).map(|i| TimeSlot::hourly(day, i)).collect()
}

/// Aggregated pickup time-of-day alternatives of the carrier choice model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TimeWindow {
    Morning,
    Midday,
    Afternoon,
    Night,
}

impl TimeWindow {
    pub const ALL: [TimeWindow; 4] = [
        TimeWindow::Morning,
        TimeWindow::Midday,
        TimeWindow::Afternoon,
        TimeWindow::Night,
    ];

    /// Base alternative of the choice model; its utility is pinned at zero.
    pub const BASE: TimeWindow = TimeWindow::Night;

    pub fn index(self) -> usize {
        self as usize
    }

    /// `[start, end)` in hours. Night wraps through midnight, so its end is
    /// smaller than its start. Afternoon is extended to 21:00 so the four
    /// windows cover the day.
    pub fn bounds(self) -> (u32, u32) {
        match self {
            TimeWindow::Morning => (5, 10),
            TimeWindow::Midday => (10, 15),
            TimeWindow::Afternoon => (15, 21),
            TimeWindow::Night => (21, 5),
        }
    }

    pub fn from_hour(hour: u32) -> TimeWindow {
        match hour % 24 {
            5..=9 => TimeWindow::Morning,
            10..=14 => TimeWindow::Midday,
            15..=20 => TimeWindow::Afternoon,
            _ => TimeWindow::Night,
        }
    }

    pub fn short_label(self) -> &'static str {
        match self {
            TimeWindow::Morning => "Mor",
            TimeWindow::Midday => "Mid",
            TimeWindow::Afternoon => "Aft",
            TimeWindow::Night => "Night",
        }
    }
}

impl fmt::Display for TimeWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_label())
    }
}

pub fn slot_to_window(slot: &TimeSlot) -> TimeWindow {
    TimeWindow::from_hour(slot.hour())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ContainerType {
    GP,
    RE,
    CC,
    TC,
}

impl ContainerType {
    pub const ALL: [ContainerType; 4] = [
        ContainerType::GP,
        ContainerType::RE,
        ContainerType::CC,
        ContainerType::TC,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ContainerLength {
    #[serde(rename = "20ft")]
    Ft20,
    #[serde(rename = "40ft")]
    Ft40,
}

impl ContainerLength {
    pub const ALL: [ContainerLength; 2] = [ContainerLength::Ft20, ContainerLength::Ft40];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum WeightClass {
    Heavy,
    Light,
    Empty,
}

impl WeightClass {
    pub const ALL: [WeightClass; 3] = [WeightClass::Heavy, WeightClass::Light, WeightClass::Empty];

    /// Gross weight in kg to class: Empty below 2 t, Light up to 15 t, Heavy up to 35 t.
    pub fn from_kg(kg: f64) -> Option<WeightClass> {
        if !kg.is_finite() || kg < 0.0 {
            None
        } else if kg < 2000.0 {
            Some(WeightClass::Empty)
        } else if kg < 15000.0 {
            Some(WeightClass::Light)
        } else if kg <= 35000.0 {
            Some(WeightClass::Heavy)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Commodity {
    AGR,
    Chem,
    Food,
    Fert,
    Pet,
    RawMin,
    SolMin,
    Ores,
    Iron,
    Miss,
}

impl Commodity {
    pub const ALL: [Commodity; 10] = [
        Commodity::AGR,
        Commodity::Chem,
        Commodity::Food,
        Commodity::Fert,
        Commodity::Pet,
        Commodity::RawMin,
        Commodity::SolMin,
        Commodity::Ores,
        Commodity::Iron,
        Commodity::Miss,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VesselSize {
    Large,
    Small,
}

impl VesselSize {
    pub fn from_call_size(containers: u32) -> VesselSize {
        if containers > 1250 {
            VesselSize::Large
        } else {
            VesselSize::Small
        }
    }
}

/// One import container as recorded by the port community system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerRecord {
    pub container_id: String,
    pub vessel_arrival: DateTime<Utc>,
    pub pickup: DateTime<Utc>,
    pub container_type: ContainerType,
    pub length: ContainerLength,
    pub weight_class: WeightClass,
    pub commodity: Commodity,
    pub vessel_size: VesselSize,
}

impl ContainerRecord {
    /// Pickup latency in minutes.
    pub fn latency_minutes(&self) -> f64 {
        (self.pickup - self.vessel_arrival).num_seconds() as f64 / 60.0
    }
}

pub type RequestId = u64;

/// A carrier's request for a pickup slot, made at `planning_time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRequest {
    pub request_id: RequestId,
    pub terminal: usize,
    pub container: ContainerRecord,
    pub requested_slot: TimeSlot,
    pub planning_time: DateTime<Utc>,
    pub attributes: TourAttributes,
}

impl SlotRequest {
    pub fn lead_time(&self) -> Duration {
        self.requested_slot.start - self.planning_time
    }
}

/// The four objective values. `z1` is a unitless carrier disutility and is
/// never added to the euro-valued components.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostVector {
    pub z1_disutility: f64,
    pub z2_waiting_eur: f64,
    pub z3_crane_eur: f64,
    pub z4_traffic_eur: f64,
}

impl CostVector {
    pub fn as_array(&self) -> [f64; 4] {
        [
            self.z1_disutility,
            self.z2_waiting_eur,
            self.z3_crane_eur,
            self.z4_traffic_eur,
        ]
    }

    pub fn from_array(z: [f64; 4]) -> Self {
        Self {
            z1_disutility: z[0],
            z2_waiting_eur: z[1],
            z3_crane_eur: z[2],
            z4_traffic_eur: z[3],
        }
    }

    /// Sum of the euro components z2 + z3 + z4.
    pub fn euro_total(&self) -> f64 {
        self.z2_waiting_eur + self.z3_crane_eur + self.z4_traffic_eur
    }
}

/// Per-terminal gate and demand configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalConfig {
    pub name: String,
    /// Service rate per lane, trucks per hour.
    pub service_rate: f64,
    /// Calibrated number of active lanes at the peak hour.
    pub calibrated_lanes: u32,
    /// Expected truck arrivals per hourly slot of the operation day.
    pub demand_profile: Vec<f64>,
    /// Demand centroid of the road network this terminal feeds.
    pub centroid: usize,
}

/// Euro constants of the cost model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostConstants {
    /// Truck idling cost, €/h.
    pub idle_cost: f64,
    /// Gate labor cost, €/h per person.
    pub labor_cost: f64,
    pub persons_per_lane: f64,
    /// Container transport cost used for productivity hours, €/h.
    pub transport_cost: f64,
    pub vot_passenger: f64,
    pub vot_truck: f64,
    /// Crane-priority factor of the crane shadow cost.
    pub alpha: f64,
    /// Waiting-cost benefit of one extra crane at the peak. When absent it is
    /// evaluated from the gate model of the first terminal.
    pub crane_benefit: Option<f64>,
}

impl Default for CostConstants {
    fn default() -> Self {
        Self {
            idle_cost: 38.0,
            labor_cost: 50.0,
            persons_per_lane: 2.5,
            transport_cost: 62.0,
            vot_passenger: 10.0,
            vot_truck: 45.0,
            alpha: 1.0,
            crane_benefit: Some(80.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calendar {
    pub operation_day: NaiveDate,
    /// Forecast lookup scenario: 1 = same day, 2 = one day ahead, 3 = two days ahead.
    pub lookup_scenario: u8,
    /// Planning windows open at these hours, `[start, end)`.
    pub working_hours: (u32, u32),
}

impl Default for Calendar {
    fn default() -> Self {
        Self {
            operation_day: NaiveDate::from_ymd_opt(2017, 11, 15).unwrap(),
            lookup_scenario: 1,
            working_hours: (7, 17),
        }
    }
}

/// A complete simulation scenario as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    pub terminals: Vec<TerminalConfig>,
    #[serde(default)]
    pub calendar: Calendar,
    #[serde(default)]
    pub costs: CostConstants,
    /// Scale of the planning cost.
    #[serde(default = "default_eta_scale")]
    pub eta_scale: f64,
    /// Exclusive upper bound on active lanes per terminal and slot.
    #[serde(default = "default_s_max")]
    pub s_max: u32,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub choice_model: ChoiceModelParams,
    #[serde(default)]
    pub ga: GaConfig,
    /// Lanes per terminal used by the base case; derived from the cost-optimal
    /// staffing of the base demand when absent.
    #[serde(default)]
    pub base_lanes: Option<Vec<Vec<u32>>>,
}

fn default_eta_scale() -> f64 {
    100.0
}

fn default_s_max() -> u32 {
    8
}

impl Scenario {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Crane cost per lane-hour: labor plus α times the peak waiting benefit.
    pub fn crane_cost_with_benefit(&self, benefit: f64) -> f64 {
        self.costs.persons_per_lane * self.costs.labor_cost + self.costs.alpha * benefit
    }
}

/// A slot assignment for every request plus lanes per terminal and slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoSolution {
    pub assignment: BTreeMap<RequestId, usize>,
    /// `cranes[terminal][slot]`.
    pub cranes: Vec<Vec<u32>>,
    pub objectives: CostVector,
    pub feasible: bool,
}

/// One structural problem found during validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            path: path.into(),
            message: message.into(),
        });
    }

    fn positive(&mut self, path: &str, value: f64) {
        if !(value.is_finite() && value > 0.0) {
            self.push(path, format!("must be a positive finite number, got {value}"));
        }
    }
}

pub fn validate_scenario(s: &Scenario) -> ValidationReport {
    let mut report = ValidationReport::default();
    if s.schema_version != SCHEMA_VERSION {
        report.push(
            "schema_version",
            format!("unsupported version {}, expected {SCHEMA_VERSION}", s.schema_version),
        );
    }
    if s.terminals.is_empty() {
        report.push("terminals", "at least one terminal is required");
    }
    for (i, t) in s.terminals.iter().enumerate() {
        let base = format!("terminals[{i}]");
        report.positive(&format!("{base}.service_rate"), t.service_rate);
        if t.calibrated_lanes == 0 || t.calibrated_lanes >= s.s_max {
            report.push(
                format!("{base}.calibrated_lanes"),
                format!("must satisfy 0 < S < {}", s.s_max),
            );
        }
        if t.demand_profile.len() != SLOTS_PER_DAY {
            report.push(
                format!("{base}.demand_profile"),
                format!("expected {SLOTS_PER_DAY} hourly values, got {}", t.demand_profile.len()),
            );
        }
        for (h, v) in t.demand_profile.iter().enumerate() {
            if !(v.is_finite() && *v >= 0.0) {
                report.push(format!("{base}.demand_profile[{h}]"), "must be >= 0");
            }
        }
        if t.centroid >= s.network.graph.centroids.len().max(1) {
            report.push(format!("{base}.centroid"), "unknown centroid");
        }
    }
    let c = &s.costs;
    report.positive("costs.idle_cost", c.idle_cost);
    report.positive("costs.labor_cost", c.labor_cost);
    report.positive("costs.persons_per_lane", c.persons_per_lane);
    report.positive("costs.transport_cost", c.transport_cost);
    report.positive("costs.vot_passenger", c.vot_passenger);
    report.positive("costs.vot_truck", c.vot_truck);
    if !(c.alpha.is_finite() && c.alpha >= 0.0) {
        report.push("costs.alpha", format!("must be >= 0, got {}", c.alpha));
    }
    if let Some(b) = c.crane_benefit {
        if !(b.is_finite() && b >= 0.0) {
            report.push("costs.crane_benefit", "must be >= 0");
        }
    }
    report.positive("eta_scale", s.eta_scale);
    if s.s_max < 2 {
        report.push("s_max", "must be at least 2 so that one lane is allowed");
    }
    if !(1..=3).contains(&s.calendar.lookup_scenario) {
        report.push("calendar.lookup_scenario", "must be 1, 2 or 3");
    }
    let (open, close) = s.calendar.working_hours;
    if open >= close || close > 24 {
        report.push("calendar.working_hours", "must satisfy start < end <= 24");
    }
    if let Some(base) = &s.base_lanes {
        if base.len() != s.terminals.len() {
            report.push("base_lanes", "one lane vector per terminal required");
        }
        for (i, lanes) in base.iter().enumerate() {
            if lanes.len() != SLOTS_PER_DAY {
                report.push(format!("base_lanes[{i}]"), "expected 24 values");
            }
            if lanes.iter().any(|&v| v == 0 || v >= s.s_max) {
                report.push(format!("base_lanes[{i}]"), format!("must satisfy 0 < S < {}", s.s_max));
            }
        }
    }
    for v in s.network.validate() {
        report.push(format!("network.{}", v.path), v.message);
    }
    for v in s.ga.validate() {
        report.push(format!("ga.{}", v.path), v.message);
    }
    report
}

/// Checks one request against the container and lead-time rules.
pub fn validate_request(r: &SlotRequest) -> ValidationReport {
    let mut report = ValidationReport::default();
    let base = format!("requests[{}]", r.request_id);
    if r.container.pickup < r.container.vessel_arrival {
        report.push(
            format!("{base}.container.pickup"),
            "pickup precedes vessel arrival",
        );
    }
    if r.lead_time() < Duration::hours(MIN_LEAD_HOURS) {
        report.push(
            format!("{base}.planning_time"),
            format!(
                "planning time must be at least {MIN_LEAD_HOURS} hours before the requested slot (lead is {} min)",
                r.lead_time().num_minutes()
            ),
        );
    }
    if r.requested_slot.width_minutes == 0 {
        report.push(format!("{base}.requested_slot.width_minutes"), "must be > 0");
    }
    report
}

impl ParetoSolution {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("solution serializes")
    }
}
