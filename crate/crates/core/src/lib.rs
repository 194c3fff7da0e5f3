//! Truck time-slot management simulator.
//!
//! Forecasts truck demand at container terminals, models gate queues and road
//! traffic cost, learns carriers' time-window preferences and searches slot
//! reassignments plus lane allocations with a multi-objective evolutionary
//! optimizer.

pub mod choice;
pub mod datagen;
pub mod domain;
pub mod forecast;
pub mod gate;
pub mod optimizer;
pub mod orchestrator;
pub mod scenarios;
pub mod traffic;
