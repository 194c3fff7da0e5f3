//! Terminal gate modelled as an M/M/S queue.
//!
//! The analytic path evaluates the stationary multi-server mean wait per slot
//! (quasi-stationary in the slot's arrival rate). The discrete-event simulator
//! is the non-stationary reference and also drives calibration of the service
//! rate and lane count against observed departure profiles.

mod analytic;
mod calibrate;
mod des;

pub use analytic::{
    mms_wait_time, queue_stats, queue_stats_or_penalty, waiting_cost, GateParams, QueueStats,
    UNSTABLE_PENALTY_WAIT_HOURS,
};
pub use calibrate::{calibrate_gate, CalibrationBounds, CalibrationConfig, CalibrationReport};
pub use des::{
    arrivals_from_profile, des_simulate, poisson_arrivals, DesOutcome, ServiceModel, TruckEvent,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GateError {
    #[error("unstable queue: traffic intensity {intensity:.4} >= {lanes} lanes")]
    Unstable { intensity: f64, lanes: u32 },
    #[error("unstable queue in slots {slots:?}")]
    UnstableSlots { slots: Vec<usize> },
    #[error("invalid gate parameter: {0}")]
    InvalidParameter(String),
    #[error("arrival events are not time-ordered at index {0}")]
    UnorderedArrivals(usize),
    #[error("profile length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("degenerate calibration data: {0}")]
    DegenerateData(String),
    #[error("empty calibration bounds")]
    EmptyBounds,
    #[error("every lane count in the calibration grid is unstable")]
    AllUnstable,
}
