use serde::{Deserialize, Serialize};

use crate::domain::Violation;

/// Settings of the elitist non-dominated sorting GA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    /// Per-gene mutation probability; `None` means one expected mutation per genome.
    #[serde(default)]
    pub mutation_rate: Option<f64>,
    /// Upper share of the population kept on the first front during survival.
    pub pareto_fraction: f64,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 80,
            generations: 120,
            crossover_rate: 0.9,
            mutation_rate: None,
            pareto_fraction: 0.35,
            seed: 1,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |path: &str, message: &str| {
            out.push(Violation {
                path: path.into(),
                message: message.into(),
            })
        };
        if self.population < 8 || !self.population.is_multiple_of(2) {
            push("population", "must be even and at least 8");
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) {
            push("crossover_rate", "must lie in [0, 1]");
        }
        if let Some(m) = self.mutation_rate {
            if !(0.0..=1.0).contains(&m) {
                push("mutation_rate", "must lie in [0, 1]");
            }
        }
        if !(0.0..=1.0).contains(&self.pareto_fraction) {
            push("pareto_fraction", "must lie in [0, 1]");
        }
        out
    }

    /// Per-gene mutation probability for a genome of `len` genes.
    pub fn mutation_probability(&self, len: usize) -> f64 {
        self.mutation_rate.unwrap_or(1.0 / len.max(1) as f64)
    }
}
