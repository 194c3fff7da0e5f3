//! Road network, state propagation and the vehicle-loss-hours cost chain.

mod day_model;
mod graph;
mod loss;
mod propagator;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Violation;

pub use day_model::{DayModel, Deviation, SparseResponse};
pub use graph::{Centroid, Edge, LinkGraph, Node, NormalizedAdjacency};
pub use loss::{
    inject_truck_departures, mape, monetary_loss, traffic_cost, vlh, FreeFlowSpeeds, LinkState, MapeReport,
    StateGrid, ValueOfTime, VehicleClass, INTERVALS_PER_SLOT,
};
pub use propagator::{
    fit_propagator, propagate, propagate_linear, FitReport, PropagatorParams, TrafficDay, MIN_FIT_DAYS,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrafficError {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("speed must be > 0, got {0}")]
    NonPositiveSpeed(f64),
    #[error("loss matrix does not cover slot {slot} ({intervals} intervals available)")]
    CoverageGap { slot: usize, intervals: usize },
    #[error("negative truck departures {value} in slot {slot}")]
    NegativeDemand { slot: usize, value: f64 },
    #[error("all observations are zero")]
    AllZeroObservations,
    #[error("need at least {needed} days of history, got {got}")]
    InsufficientHistory { needed: usize, got: usize },
    #[error("demand {flow:.1} veh/h exceeds capacity {capacity:.1} veh/h on link {link}")]
    OverCapacity { link: String, flow: f64, capacity: f64 },
    #[error("graph contains a cycle through node {0}")]
    Cyclic(usize),
}

/// Speed-flow relation of one detector segment. Speed stays at free flow up
/// to `breakpoint` veh/h, then falls linearly to `critical_speed` at
/// `capacity`. Flows are counted in passenger-car equivalents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedFlow {
    pub free_flow_speed: f64,
    pub breakpoint: f64,
    pub capacity: f64,
    pub critical_speed: f64,
    /// Passenger-car equivalents per truck.
    pub truck_pce: f64,
}

impl Default for SpeedFlow {
    fn default() -> Self {
        Self {
            free_flow_speed: 100.0,
            breakpoint: 2400.0,
            capacity: 4400.0,
            critical_speed: 50.0,
            truck_pce: 2.0,
        }
    }
}

impl SpeedFlow {
    /// Speed at an hourly PCE flow; `None` above capacity.
    pub fn speed(&self, flow_per_hour: f64) -> Option<f64> {
        if flow_per_hour > self.capacity * (1.0 + 1e-12) {
            return None;
        }
        if flow_per_hour <= self.breakpoint {
            return Some(self.free_flow_speed);
        }
        let x = (flow_per_hour - self.breakpoint) / (self.capacity - self.breakpoint);
        Some(self.free_flow_speed - x * (self.free_flow_speed - self.critical_speed))
    }

    /// Hourly PCE flow from per-interval counts.
    pub fn pce_rate(&self, q_passenger: f64, q_truck: f64, interval_hours: f64) -> f64 {
        (q_passenger + self.truck_pce * q_truck) / interval_hours
    }

    fn validate(&self, out: &mut Vec<Violation>) {
        let ok = self.free_flow_speed > self.critical_speed
            && self.critical_speed > 0.0
            && self.breakpoint >= 0.0
            && self.capacity > self.breakpoint
            && self.truck_pce >= 1.0;
        if !ok {
            out.push(Violation {
                path: "speed_flow".into(),
                message: "need ffs > critical speed > 0, capacity > breakpoint >= 0, truck_pce >= 1".into(),
            });
        }
    }
}

/// Road network and traffic-model settings of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub graph: LinkGraph,
    pub speed_flow: SpeedFlow,
    pub free_flow: FreeFlowSpeeds,
    /// Background passenger vehicles per 15-minute interval on every
    /// detector, one value per hour of the day.
    pub passenger_profile: Vec<f64>,
    /// Non-port trucks per 15-minute interval on every detector.
    pub background_trucks: Vec<f64>,
    /// Scale applied to the summed terminal departures (terminals without a
    /// calibrated gate model).
    pub departure_scale: f64,
    pub propagation_order: usize,
    /// Fitted propagator; fitted on synthetic history when absent.
    #[serde(default)]
    pub propagator: Option<PropagatorParams>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            graph: LinkGraph::rotterdam_like(1),
            speed_flow: SpeedFlow::default(),
            free_flow: FreeFlowSpeeds::default(),
            passenger_profile: default_passenger_profile(),
            background_trucks: vec![15.0; 24],
            departure_scale: 1.0,
            propagation_order: 2,
            propagator: None,
        }
    }
}

/// Weekday motorway profile with morning and evening peaks.
pub fn default_passenger_profile() -> Vec<f64> {
    vec![
        60.0, 40.0, 30.0, 30.0, 60.0, 180.0, 420.0, 640.0, 700.0, 560.0, 470.0, 460.0, 470.0, 480.0,
        520.0, 620.0, 690.0, 720.0, 600.0, 420.0, 300.0, 220.0, 150.0, 100.0,
    ]
}

impl NetworkConfig {
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = self.graph.validate();
        self.speed_flow.validate(&mut out);
        if self.passenger_profile.len() != 24 || self.passenger_profile.iter().any(|v| !(*v >= 0.0)) {
            out.push(Violation {
                path: "passenger_profile".into(),
                message: "expected 24 values >= 0".into(),
            });
        }
        if self.background_trucks.len() != 24 || self.background_trucks.iter().any(|v| !(*v >= 0.0)) {
            out.push(Violation {
                path: "background_trucks".into(),
                message: "expected 24 values >= 0".into(),
            });
        }
        if !(self.departure_scale.is_finite() && self.departure_scale > 0.0) {
            out.push(Violation {
                path: "departure_scale".into(),
                message: "must be > 0".into(),
            });
        }
        if self.propagation_order == 0 {
            out.push(Violation {
                path: "propagation_order".into(),
                message: "order must be >= 1".into(),
            });
        }
        if let Some(p) = &self.propagator {
            if p.order() != self.propagation_order || !p.is_finite() {
                out.push(Violation {
                    path: "propagator".into(),
                    message: "fitted propagator must be finite and match propagation_order".into(),
                });
            }
        }
        out
    }

    pub fn lengths_km(&self) -> Vec<f64> {
        self.graph.nodes.iter().map(|n| n.length_km).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn speed_flow_examples() {
        let sf = SpeedFlow::default();
        assert_eq!(sf.speed(0.0), Some(100.0));
        assert_eq!(sf.speed(sf.breakpoint), Some(100.0));
        assert_eq!(sf.speed(sf.capacity), Some(sf.critical_speed));
        assert_eq!(sf.speed(sf.capacity + 1.0), None);
        let mid = sf.speed((sf.breakpoint + sf.capacity) / 2.0).unwrap();
        assert!((mid - 75.0).abs() < 1e-12);
    }

    #[test]
    fn default_network_is_valid() {
        assert!(NetworkConfig::default().validate().is_empty());
    }
}
