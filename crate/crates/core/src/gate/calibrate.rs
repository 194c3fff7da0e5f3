use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::des::{arrivals_from_counts, des_with_draws};
use super::{GateError, ServiceModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBounds {
    pub min_lanes: u32,
    pub max_lanes: u32,
    pub min_service_rate: f64,
    pub max_service_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub slot_hours: f64,
    /// Minimum service time in hours (0 disables truncation).
    pub min_service_hours: f64,
    /// Simulated days averaged per evaluation.
    pub replications: usize,
    /// Relative width at which golden-section search stops.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            slot_hours: 1.0,
            min_service_hours: 20.0 / 60.0,
            replications: 20,
            tolerance: 1e-3,
            seed: 2017,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub service_rate: f64,
    pub lanes: u32,
    pub mse: f64,
    pub r_squared: f64,
    /// Paired two-sided t statistic of simulated minus observed departures.
    pub t_statistic: f64,
    pub p_value: f64,
    pub simulated_departures: Vec<f64>,
}

struct Simulator<'a> {
    arrivals: Vec<Vec<f64>>,
    draws: Vec<Vec<f64>>,
    cfg: &'a CalibrationConfig,
    n_slots: usize,
}

impl Simulator<'_> {
    fn departures(&self, rate: f64, lanes: u32) -> Vec<f64> {
        let service = if self.cfg.min_service_hours > 0.0 {
            ServiceModel::TruncatedExponential {
                rate,
                min_hours: self.cfg.min_service_hours,
            }
        } else {
            ServiceModel::Exponential { rate }
        };
        let mut acc = vec![0.0; self.n_slots];
        for (arr, draws) in self.arrivals.iter().zip(&self.draws) {
            let out = des_with_draws(arr, lanes, service, self.cfg.slot_hours, self.n_slots, draws)
                .expect("validated inputs");
            for (a, &d) in acc.iter_mut().zip(&out.slot_departures) {
                *a += d as f64;
            }
            // spill past the horizon is kept in the last slot
            let spill: usize = out.slot_departures[self.n_slots..].iter().sum();
            acc[self.n_slots - 1] += spill as f64;
        }
        let reps = self.arrivals.len() as f64;
        acc.iter().map(|v| v / reps).collect()
    }
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

/// Least-squares fit of service rate and lane count to an observed departure
/// profile. Integer lanes are scanned; the rate is found by golden-section
/// search for each lane count under common random numbers.
pub fn calibrate_gate(
    observed_arrivals: &[f64],
    observed_departures: &[f64],
    bounds: &CalibrationBounds,
    cfg: &CalibrationConfig,
) -> Result<CalibrationReport, GateError> {
    if observed_arrivals.len() != observed_departures.len() {
        return Err(GateError::LengthMismatch(
            observed_arrivals.len(),
            observed_departures.len(),
        ));
    }
    let n_slots = observed_arrivals.len();
    if (n_slots as f64) * cfg.slot_hours < 24.0 - 1e-9 {
        return Err(GateError::DegenerateData("profiles must cover a full day".into()));
    }
    if observed_arrivals.iter().chain(observed_departures).any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(GateError::DegenerateData("counts must be finite and >= 0".into()));
    }
    let total: f64 = observed_departures.iter().sum();
    if total <= 0.0 || observed_arrivals.iter().sum::<f64>() <= 0.0 {
        return Err(GateError::DegenerateData("all-zero observations".into()));
    }
    if bounds.min_lanes == 0
        || bounds.min_lanes > bounds.max_lanes
        || !(bounds.min_service_rate > 0.0 && bounds.min_service_rate < bounds.max_service_rate)
    {
        return Err(GateError::EmptyBounds);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let unit = Exp::new(1.0).expect("unit rate");
    let arrivals: Vec<Vec<f64>> = (0..cfg.replications.max(1))
        .map(|_| arrivals_from_counts(observed_arrivals, cfg.slot_hours, &mut rng))
        .collect();
    let draws = arrivals
        .iter()
        .map(|a| a.iter().map(|_| unit.sample(&mut rng)).collect())
        .collect();
    let sim = Simulator {
        arrivals,
        draws,
        cfg,
        n_slots,
    };

    // a lane count is usable when the mean load fits at the fastest rate
    let horizon = n_slots as f64 * cfg.slot_hours;
    let mean_rate = observed_arrivals.iter().sum::<f64>() / horizon;
    let max_rate = bounds.max_service_rate;
    let effective = |rate: f64| 1.0 / (cfg.min_service_hours + 1.0 / rate);
    let usable: Vec<u32> = (bounds.min_lanes..=bounds.max_lanes)
        .filter(|&s| mean_rate < s as f64 * effective(max_rate))
        .collect();
    if usable.is_empty() {
        return Err(GateError::AllUnstable);
    }

    let mut best: Option<(f64, f64, u32)> = None;
    for lanes in usable {
        let objective = |rate: f64| mse(&sim.departures(rate, lanes), observed_departures);
        let (rate, value) = golden_section(
            objective,
            bounds.min_service_rate,
            bounds.max_service_rate,
            cfg.tolerance,
        );
        log::debug!("calibration lanes={lanes} rate={rate:.4} mse={value:.4}");
        if best.is_none_or(|(v, _, _)| value < v) {
            best = Some((value, rate, lanes));
        }
    }
    let (mse_value, service_rate, lanes) = best.expect("non-empty grid");
    let simulated = sim.departures(service_rate, lanes);

    let mean_obs = observed_departures.iter().sum::<f64>() / n_slots as f64;
    let ss_tot: f64 = observed_departures.iter().map(|y| (y - mean_obs).powi(2)).sum();
    let ss_res: f64 = observed_departures
        .iter()
        .zip(&simulated)
        .map(|(y, f)| (y - f).powi(2))
        .sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 0.0 };
    let (t_statistic, p_value) = paired_t(&simulated, observed_departures);

    Ok(CalibrationReport {
        service_rate,
        lanes,
        mse: mse_value,
        r_squared,
        t_statistic,
        p_value,
        simulated_departures: simulated,
    })
}

fn golden_section<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, rel_tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while (hi - lo) > rel_tol * (lo.abs() + hi.abs()) / 2.0 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

fn paired_t(a: &[f64], b: &[f64]) -> (f64, f64) {
    let n = a.len() as f64;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var <= 0.0 {
        return (0.0, 1.0);
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).expect("n >= 2");
    (t, 2.0 * (1.0 - dist.cdf(t.abs())))
}
