use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::GateError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ServiceModel {
    /// Exponential service with the given rate per hour.
    Exponential { rate: f64 },
    /// Exponential service conditioned on lasting at least `min_hours`.
    TruncatedExponential { rate: f64, min_hours: f64 },
    /// Deterministic service time.
    Fixed { hours: f64 },
}

impl ServiceModel {
    /// Gate service as run in the pipeline: no service shorter than 20 minutes.
    pub fn gate(rate: f64) -> Self {
        ServiceModel::TruncatedExponential {
            rate,
            min_hours: 20.0 / 60.0,
        }
    }

    fn validate(&self) -> Result<(), GateError> {
        let ok = match *self {
            ServiceModel::Exponential { rate } => rate.is_finite() && rate > 0.0,
            ServiceModel::TruncatedExponential { rate, min_hours } => {
                rate.is_finite() && rate > 0.0 && min_hours.is_finite() && min_hours >= 0.0
            }
            ServiceModel::Fixed { hours } => hours.is_finite() && hours >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(GateError::InvalidParameter(format!("{self:?}")))
        }
    }

    /// Maps a unit-rate exponential draw to a service time. Sharing the unit
    /// draws across parameter values gives common random numbers.
    pub fn from_unit_exponential(&self, e: f64) -> f64 {
        match *self {
            ServiceModel::Exponential { rate } => e / rate,
            // Memorylessness: Exp(μ) conditioned on > m is m + Exp(μ).
            ServiceModel::TruncatedExponential { rate, min_hours } => min_hours + e / rate,
            ServiceModel::Fixed { hours } => hours,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruckEvent {
    pub arrival: f64,
    pub service_start: f64,
    pub departure: f64,
    pub lane: u32,
}

impl TruckEvent {
    pub fn wait(&self) -> f64 {
        self.service_start - self.arrival
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesOutcome {
    pub events: Vec<TruckEvent>,
    /// Mean wait (hours) of the trucks arriving in each slot; 0 for empty slots.
    pub slot_mean_wait: Vec<f64>,
    pub slot_arrivals: Vec<usize>,
    pub slot_departures: Vec<usize>,
}

impl DesOutcome {
    pub fn mean_wait(&self) -> f64 {
        if self.events.is_empty() {
            return 0.0;
        }
        self.events.iter().map(|e| e.wait()).sum::<f64>() / self.events.len() as f64
    }

    /// Time-average number of trucks in queue over `[0, horizon]`.
    pub fn time_average_queue(&self, horizon: f64) -> f64 {
        if horizon <= 0.0 {
            return 0.0;
        }
        let area: f64 = self
            .events
            .iter()
            .map(|e| (e.service_start.min(horizon) - e.arrival.min(horizon)).max(0.0))
            .sum();
        area / horizon
    }
}

/// FIFO multi-server gate. `arrivals` are hours since the start of the first
/// slot and must be non-decreasing. Slot vectors cover at least `n_slots`
/// and grow to include late departures.
pub fn des_simulate(
    arrivals: &[f64],
    lanes: u32,
    service: ServiceModel,
    slot_hours: f64,
    n_slots: usize,
    seed: u64,
) -> Result<DesOutcome, GateError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Exp::new(1.0).expect("unit rate");
    let draws: Vec<f64> = arrivals.iter().map(|_| unit.sample(&mut rng)).collect();
    des_with_draws(arrivals, lanes, service, slot_hours, n_slots, &draws)
}

pub(crate) fn des_with_draws(
    arrivals: &[f64],
    lanes: u32,
    service: ServiceModel,
    slot_hours: f64,
    n_slots: usize,
    unit_draws: &[f64],
) -> Result<DesOutcome, GateError> {
    service.validate()?;
    if lanes == 0 {
        return Err(GateError::InvalidParameter("at least one lane".into()));
    }
    if !(slot_hours > 0.0) {
        return Err(GateError::InvalidParameter("slot width must be > 0".into()));
    }
    if let Some(i) = arrivals.windows(2).position(|w| w[1] < w[0]) {
        return Err(GateError::UnorderedArrivals(i + 1));
    }
    debug_assert_eq!(arrivals.len(), unit_draws.len());

    let mut free_at = vec![0.0f64; lanes as usize];
    let mut events = Vec::with_capacity(arrivals.len());
    for (&arrival, &e) in arrivals.iter().zip(unit_draws) {
        // earliest-free lane; ties go to the lowest index
        let (lane, &free) = free_at
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("at least one lane");
        let start = arrival.max(free);
        let departure = start + service.from_unit_exponential(e);
        free_at[lane] = departure;
        events.push(TruckEvent {
            arrival,
            service_start: start,
            departure,
            lane: lane as u32,
        });
    }

    let slot_of = |t: f64| (t / slot_hours).floor().max(0.0) as usize;
    let last = events
        .iter()
        .map(|e| slot_of(e.departure) + 1)
        .max()
        .unwrap_or(0)
        .max(n_slots);
    let mut slot_arrivals = vec![0usize; last];
    let mut slot_departures = vec![0usize; last];
    let mut wait_sum = vec![0.0f64; last];
    for e in &events {
        let a = slot_of(e.arrival);
        slot_arrivals[a] += 1;
        wait_sum[a] += e.wait();
        slot_departures[slot_of(e.departure)] += 1;
    }
    let slot_mean_wait = wait_sum
        .iter()
        .zip(&slot_arrivals)
        .map(|(w, &n)| if n > 0 { w / n as f64 } else { 0.0 })
        .collect();
    Ok(DesOutcome {
        events,
        slot_mean_wait,
        slot_arrivals,
        slot_departures,
    })
}

/// Homogeneous Poisson arrivals: `count` arrival times at `rate` per hour.
pub fn poisson_arrivals(rate: f64, count: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap = Exp::new(rate).expect("positive rate");
    let mut t = 0.0;
    (0..count)
        .map(|_| {
            t += gap.sample(&mut rng);
            t
        })
        .collect()
}

/// Piecewise-constant Poisson arrivals from hourly rates per slot.
pub fn arrivals_from_profile(rates: &[f64], slot_hours: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (i, &rate) in rates.iter().enumerate() {
        if rate <= 0.0 {
            continue;
        }
        let start = i as f64 * slot_hours;
        let end = start + slot_hours;
        let gap = Exp::new(rate).expect("positive rate");
        let mut t = start + gap.sample(&mut rng);
        while t < end {
            out.push(t);
            t += gap.sample(&mut rng);
        }
    }
    out
}

/// Places `counts[i]` arrivals uniformly at random inside slot `i`.
pub(crate) fn arrivals_from_counts<R: Rng>(counts: &[f64], slot_hours: f64, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::new();
    for (i, &c) in counts.iter().enumerate() {
        let n = c.round().max(0.0) as usize;
        let start = i as f64 * slot_hours;
        let mut slot: Vec<f64> = (0..n).map(|_| start + rng.random::<f64>() * slot_hours).collect();
        slot.sort_by(f64::total_cmp);
        out.extend(slot);
    }
    out
}
