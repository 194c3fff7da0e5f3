use serde::{Deserialize, Serialize};

use super::GateError;

/// Wait assigned to an unstable slot when the optimizer needs a finite value.
pub const UNSTABLE_PENALTY_WAIT_HOURS: f64 = 24.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    /// Arrivals per hour.
    pub arrival_rate: f64,
    /// Service rate per lane, trucks per hour.
    pub service_rate: f64,
    pub lanes: u32,
}

impl GateParams {
    pub fn intensity(&self) -> f64 {
        self.arrival_rate / self.service_rate
    }

    pub fn is_stable(&self) -> bool {
        self.intensity() < self.lanes as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct QueueStats {
    /// Mean wait in queue, hours.
    pub wait_hours: f64,
    /// Mean number of trucks waiting.
    pub mean_waiting: f64,
    /// Expected departures in the slot.
    pub expected_departures: f64,
}

/// Mean queueing delay of an M/M/S system:
///
/// `T = a^S / (μ (S-1)! (S-a)^2) · [Σ_{n<S} a^n/n! + a^S / ((S-1)! (S-a))]^-1`
/// with `a = λ/μ`.
pub fn mms_wait_time(arrival_rate: f64, service_rate: f64, lanes: u32) -> Result<f64, GateError> {
    if !(service_rate.is_finite() && service_rate > 0.0) {
        return Err(GateError::InvalidParameter(format!(
            "service rate must be > 0, got {service_rate}"
        )));
    }
    if !(arrival_rate.is_finite() && arrival_rate >= 0.0) {
        return Err(GateError::InvalidParameter(format!(
            "arrival rate must be >= 0, got {arrival_rate}"
        )));
    }
    if lanes == 0 {
        return Err(GateError::InvalidParameter("at least one lane".into()));
    }
    let a = arrival_rate / service_rate;
    let s = lanes as f64;
    if a >= s {
        return Err(GateError::Unstable { intensity: a, lanes });
    }
    if a == 0.0 {
        return Ok(0.0);
    }
    // partial holds a^n / n!; the loop leaves a^(S-1)/(S-1)! in it.
    let mut partial = 1.0;
    let mut head_sum = 1.0;
    for n in 1..lanes {
        partial *= a / n as f64;
        head_sum += partial;
    }
    let tail = partial * a; // a^S / (S-1)!
    let bracket = head_sum + tail / (s - a);
    Ok(tail / (service_rate * (s - a) * (s - a)) / bracket)
}

/// Per-slot statistics under quasi-stationary evaluation. `slot_hours` converts
/// the hourly rate into departures per slot. Unstable slots are reported together.
pub fn queue_stats(
    arrival_rates: &[f64],
    service_rate: f64,
    lanes: &[u32],
    slot_hours: f64,
) -> Result<Vec<QueueStats>, GateError> {
    if arrival_rates.len() != lanes.len() {
        return Err(GateError::LengthMismatch(arrival_rates.len(), lanes.len()));
    }
    let mut unstable = Vec::new();
    let mut out = Vec::with_capacity(arrival_rates.len());
    for (t, (&lambda, &s)) in arrival_rates.iter().zip(lanes).enumerate() {
        match mms_wait_time(lambda, service_rate, s) {
            Ok(wait) => out.push(QueueStats {
                wait_hours: wait,
                mean_waiting: lambda * wait,
                expected_departures: lambda * slot_hours,
            }),
            Err(GateError::Unstable { .. }) => {
                unstable.push(t);
                out.push(QueueStats::default());
            }
            Err(e) => return Err(e),
        }
    }
    if unstable.is_empty() {
        Ok(out)
    } else {
        Err(GateError::UnstableSlots { slots: unstable })
    }
}

/// Like [`queue_stats`] but unstable slots get the finite penalty wait so that
/// an evolutionary search can still rank them.
pub fn queue_stats_or_penalty(
    arrival_rate: f64,
    service_rate: f64,
    lanes: u32,
    slot_hours: f64,
) -> QueueStats {
    let wait = match mms_wait_time(arrival_rate, service_rate, lanes) {
        Ok(w) => w.min(UNSTABLE_PENALTY_WAIT_HOURS),
        Err(_) => UNSTABLE_PENALTY_WAIT_HOURS,
    };
    QueueStats {
        wait_hours: wait,
        mean_waiting: arrival_rate * wait,
        expected_departures: arrival_rate * slot_hours,
    }
}

/// Waiting cost of a slot in euros: idle cost per truck-hour times trucks waiting.
pub fn waiting_cost(mean_waiting: f64, idle_cost: f64) -> f64 {
    idle_cost * mean_waiting
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn erlang_b_wait(lambda: f64, mu: f64, s: u32) -> f64 {
        let a = lambda / mu;
        let mut b = 1.0;
        for n in 1..=s {
            b = a * b / (n as f64 + a * b);
        }
        let c = s as f64 * b / (s as f64 - a * (1.0 - b));
        c / (s as f64 * mu - lambda)
    }

    #[test]
    fn mm1_example_is_one_hour() {
        assert_relative_eq!(mms_wait_time(0.5, 1.0, 1).unwrap(), 1.0, max_relative = 1e-14);
    }

    #[test]
    fn empty_system_has_no_wait() {
        assert_eq!(mms_wait_time(0.0, 2.0, 3).unwrap(), 0.0);
        assert!(mms_wait_time(1e-9, 2.0, 3).unwrap() < 1e-12);
    }

    #[test]
    fn saturation_is_an_error() {
        assert!(matches!(
            mms_wait_time(4.0, 1.0, 4),
            Err(GateError::Unstable { lanes: 4, .. })
        ));
        assert!(mms_wait_time(1.0, 0.0, 1).is_err());
        assert!(mms_wait_time(1.0, 1.0, 0).is_err());
    }

    #[test]
    fn matches_erlang_b_recursion() {
        for &(l, m, s) in &[(3.0, 1.0, 4), (10.0, 3.0, 4), (40.0, 6.0, 7), (0.2, 0.5, 2)] {
            assert_relative_eq!(
                mms_wait_time(l, m, s).unwrap(),
                erlang_b_wait(l, m, s),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn little_law_and_cost() {
        let stats = queue_stats(&[0.5], 1.0, &[1], 1.0).unwrap();
        assert_relative_eq!(stats[0].mean_waiting, 0.5, max_relative = 1e-14);
        assert_eq!(waiting_cost(10.0, 38.0), 380.0);
        assert_eq!(waiting_cost(0.0, 38.0), 0.0);
        assert_eq!(waiting_cost(0.5, 38.0), 19.0);
    }

    #[test]
    fn zero_day_is_all_zero() {
        let stats = queue_stats(&[0.0; 24], 2.0, &[2; 24], 1.0).unwrap();
        assert!(stats.iter().all(|s| *s == QueueStats::default()));
    }

    #[test]
    fn stationary_day_conserves_departures() {
        let stats = queue_stats(&[3.0; 24], 1.0, &[4; 24], 1.0).unwrap();
        let etd: f64 = stats.iter().map(|s| s.expected_departures).sum();
        assert_eq!(etd, 72.0);
    }

    #[test]
    fn unstable_slots_are_listed() {
        let err = queue_stats(&[1.0, 5.0, 2.0, 9.0], 1.0, &[2, 2, 3, 3], 1.0).unwrap_err();
        assert_eq!(err, GateError::UnstableSlots { slots: vec![1, 3] });
        let p = queue_stats_or_penalty(5.0, 1.0, 2, 1.0);
        assert_eq!(p.wait_hours, UNSTABLE_PENALTY_WAIT_HOURS);
        assert_eq!(p.mean_waiting, 5.0 * UNSTABLE_PENALTY_WAIT_HOURS);
    }

    proptest! {
        #[test]
        fn single_lane_equals_mm1(mu in 0.1f64..50.0, rho in 0.001f64..0.999) {
            let lambda = rho * mu;
            let t = mms_wait_time(lambda, mu, 1).unwrap();
            let closed = lambda / (mu * (mu - lambda));
            prop_assert!(((t - closed) / closed).abs() < 1e-12);
        }

        #[test]
        fn wait_decreases_in_lanes(mu in 0.5f64..10.0, a in 0.1f64..6.0) {
            let lambda = a * mu;
            let first = a.floor() as u32 + 1;
            let mut prev = f64::INFINITY;
            for s in first..first + 6 {
                let t = mms_wait_time(lambda, mu, s).unwrap();
                prop_assert!(t < prev);
                prev = t;
            }
        }

        #[test]
        fn wait_increases_in_arrivals(mu in 0.5f64..10.0, s in 1u32..8, f1 in 0.01f64..0.98, df in 0.001f64..0.01) {
            let l1 = f1 * s as f64 * mu;
            let l2 = (f1 + df).min(0.999) * s as f64 * mu;
            prop_assume!(l2 > l1);
            prop_assert!(mms_wait_time(l2, mu, s).unwrap() > mms_wait_time(l1, mu, s).unwrap());
        }
    }
}
