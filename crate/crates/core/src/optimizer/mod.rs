//! Four-objective slot assignment and lane allocation search.

mod config;
mod context;
mod exhaustive;
mod nsga2;
mod select;
mod sorting;

use thiserror::Error;

use crate::gate::GateError;
use crate::traffic::TrafficError;

pub use config::GaConfig;
pub use context::{
    check_binary_assignment, cost_optimal_lanes, crane_unit_cost, evaluate_objectives, feasible, fewest_shifts,
    reduce_z1_keeping_counts, slot_waiting_costs,
    update_eta, FeasibilityReport, OptimizationContext, Solution, TerminalModel, TrafficEvaluator, TrafficResponses,
    WindowRequest,
};
pub use exhaustive::{exhaustive_front, front_coverage};
pub use nsga2::{nsga2_run, nsga2_run_observed, FrontMember, GenerationStats, ParetoFront};
pub use select::{select_solution, SelectionPolicy};
pub use sorting::{
    approx_eq, brute_force_fronts, crowding_distance, dominates, dominates_approx, hypervolume, nondominated_sort,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid GA configuration: {0}")]
    Config(String),
    #[error("terminal {terminal} has {requests} requests but only {expected} expected arrivals")]
    RequestsExceedForecast {
        terminal: usize,
        requests: usize,
        expected: f64,
    },
    #[error("front is empty")]
    EmptyFront,
    #[error("gate model: {0}")]
    Gate(#[from] GateError),
    #[error("traffic model: {0}")]
    Traffic(#[from] TrafficError),
}
