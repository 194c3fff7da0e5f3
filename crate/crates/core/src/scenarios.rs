//! Built-in synthetic scenarios and the enumerable toy instance.

use crate::choice::ChoiceModelParams;
use crate::domain::{Calendar, CostConstants, Scenario, TerminalConfig, SCHEMA_VERSION};
use crate::optimizer::{GaConfig, OptimizationContext, TerminalModel, WindowRequest};
use crate::traffic::{default_passenger_profile, LinkGraph, NetworkConfig};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Names accepted by [`by_name`].
pub const NAMES: [&str; 2] = ["congested", "uncongested"];

/// The five port corridors at 3 km detector spacing (36 detectors, one zone).
pub fn compact_network() -> NetworkConfig {
    NetworkConfig {
        graph: LinkGraph::port_network(
            &[
                ("A15", 55.0),
                ("A4", 4.8),
                ("A16N", 7.1),
                ("A16S", 20.1),
                ("A29", 11.4),
            ],
            3.0,
            1,
        ),
        ..NetworkConfig::default()
    }
}

fn terminal(name: &str, profile: Vec<f64>) -> TerminalConfig {
    TerminalConfig {
        name: name.into(),
        service_rate: 12.0,
        calibrated_lanes: 7,
        demand_profile: profile,
        centroid: 0,
    }
}

fn ga() -> GaConfig {
    GaConfig {
        population: 60,
        generations: 80,
        ..GaConfig::default()
    }
}

/// A working day whose afternoon peak (15:00 to 18:00) nearly saturates both
/// gates even at the largest lane count.
pub fn congested_day() -> Scenario {
    let profile = |base: f64, peak: f64, evening: f64| -> Vec<f64> {
        (0..24)
            .map(|h| match h {
                0..=9 => 6.0,
                15..=17 => peak,
                18..=23 => evening,
                _ => base,
            })
            .collect()
    };
    Scenario {
        schema_version: SCHEMA_VERSION,
        name: "congested".into(),
        terminals: vec![
            terminal("T1", profile(40.0, 82.0, 25.0)),
            terminal("T2", profile(24.0, 66.0, 15.0)),
        ],
        calendar: Calendar::default(),
        costs: CostConstants::default(),
        eta_scale: 100.0,
        s_max: 8,
        network: compact_network(),
        choice_model: ChoiceModelParams::published(),
        ga: ga(),
        base_lanes: None,
    }
}

/// Light, flat demand on a free-flowing network; one lane per gate suffices.
pub fn uncongested_day() -> Scenario {
    let mut s = congested_day();
    s.name = "uncongested".into();
    for t in &mut s.terminals {
        t.demand_profile = vec![3.0; 24];
        t.calibrated_lanes = 1;
    }
    s.network.passenger_profile = default_passenger_profile().iter().map(|v| v * 480.0 / 720.0).collect();
    s
}

pub fn by_name(name: &str) -> Option<Scenario> {
    match name {
        "congested" => Some(congested_day()),
        "uncongested" => Some(uncongested_day()),
        _ => None,
    }
}

/// One gate, four slots, twelve requests and one to three lanes: small enough
/// to enumerate every assignment and lane plan.
pub fn toy_context(seed: u64) -> OptimizationContext {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_slots = 4;
    let mut eta = vec![1.0; n_slots];
    let requests: Vec<WindowRequest> = (0..12)
        .map(|i| {
            let requested_slot = [0, 1, 1, 2, 2, 2, 1, 2, 3, 2, 1, 0][i];
            eta[requested_slot] += 1.0;
            let planning_cost = (0..n_slots)
                .map(|t| if t == requested_slot { 0.0 } else { rng.random_range(1..=3) as f64 })
                .collect();
            WindowRequest {
                request_id: i as u64,
                terminal: 0,
                requested_slot,
                candidates: (0..n_slots).collect(),
                planning_cost,
            }
        })
        .collect();
    OptimizationContext {
        slot_hours: 1.0,
        terminals: vec![TerminalModel {
            name: "toy".into(),
            service_rate: 3.0,
            crane_cost: 4.0,
            centroid: 0,
        }],
        eta: vec![eta],
        lanes: vec![vec![2; n_slots]],
        lane_slots: (0..n_slots).collect(),
        requests,
        idle_cost: 38.0,
        s_max: 4,
        traffic: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::validate_scenario;

    #[test]
    fn built_in_scenarios_are_valid() {
        for name in NAMES {
            let s = by_name(name).unwrap();
            let report = validate_scenario(&s);
            assert!(report.is_empty(), "{name}: {report:?}");
        }
        assert!(by_name("nope").is_none());
        assert_eq!(compact_network().graph.n_nodes(), 36);
    }

    #[test]
    fn toy_is_consistent() {
        let ctx = toy_context(3);
        ctx.validate().unwrap();
        assert_eq!(ctx.requests.len(), 12);
        assert_eq!(ctx.eta[0].iter().sum::<f64>(), 16.0);
    }
}
