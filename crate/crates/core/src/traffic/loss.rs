use serde::{Deserialize, Serialize};

use super::TrafficError;

/// Intervals per hourly slot at the default 15-minute aggregation.
pub const INTERVALS_PER_SLOT: usize = 4;

/// State of one detector segment during one interval.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkState {
    /// Passenger vehicles per interval.
    pub q_passenger: f64,
    /// Trucks per interval.
    pub q_truck: f64,
    /// All-vehicle speed, km/h.
    pub speed_kmh: f64,
}

impl LinkState {
    pub fn as_array(&self) -> [f64; 3] {
        [self.q_passenger, self.q_truck, self.speed_kmh]
    }

    pub fn from_array(x: [f64; 3]) -> Self {
        Self {
            q_passenger: x[0],
            q_truck: x[1],
            speed_kmh: x[2],
        }
    }
}

/// Interval-major grid of link states: `get(t, i)` is node `i` at interval `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateGrid {
    pub n_nodes: usize,
    pub n_intervals: usize,
    pub cells: Vec<LinkState>,
}

impl StateGrid {
    pub fn filled(n_nodes: usize, n_intervals: usize, state: LinkState) -> Self {
        Self {
            n_nodes,
            n_intervals,
            cells: vec![state; n_nodes * n_intervals],
        }
    }

    pub fn get(&self, t: usize, i: usize) -> &LinkState {
        &self.cells[t * self.n_nodes + i]
    }

    pub fn get_mut(&mut self, t: usize, i: usize) -> &mut LinkState {
        &mut self.cells[t * self.n_nodes + i]
    }

    pub fn interval(&self, t: usize) -> &[LinkState] {
        &self.cells[t * self.n_nodes..(t + 1) * self.n_nodes]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VehicleClass {
    Passenger,
    Truck,
}

/// Free-flow speeds per class, km/h.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreeFlowSpeeds {
    pub passenger: f64,
    pub truck: f64,
}

impl Default for FreeFlowSpeeds {
    fn default() -> Self {
        Self {
            passenger: 100.0,
            truck: 80.0,
        }
    }
}

/// Vehicle loss hours of one class on one segment and interval:
/// `max(q·l/v - q·l/FFS, 0)`. Trucks travel at `min(v, FFS_truck)`.
pub fn vlh(
    state: &LinkState,
    length_km: f64,
    class: VehicleClass,
    ffs: &FreeFlowSpeeds,
) -> Result<f64, TrafficError> {
    if !(state.speed_kmh > 0.0) {
        return Err(TrafficError::NonPositiveSpeed(state.speed_kmh));
    }
    Ok(vlh_unchecked(state, length_km, class, ffs))
}

#[inline]
pub(crate) fn vlh_unchecked(state: &LinkState, length_km: f64, class: VehicleClass, ffs: &FreeFlowSpeeds) -> f64 {
    let (q, v, free) = match class {
        VehicleClass::Passenger => (state.q_passenger, state.speed_kmh, ffs.passenger),
        VehicleClass::Truck => (state.q_truck, state.speed_kmh.min(ffs.truck), ffs.truck),
    };
    // one rounding on the final division, so round examples come out exact
    (q * length_km * (free - v) / (v * free)).max(0.0)
}

/// Value-of-time constants, €/vehicle-hour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueOfTime {
    pub passenger: f64,
    pub truck: f64,
}

impl Default for ValueOfTime {
    fn default() -> Self {
        Self {
            passenger: 10.0,
            truck: 45.0,
        }
    }
}

#[inline]
pub(crate) fn cell_loss(state: &LinkState, length_km: f64, ffs: &FreeFlowSpeeds, vot: &ValueOfTime) -> f64 {
    vot.passenger * vlh_unchecked(state, length_km, VehicleClass::Passenger, ffs)
        + vot.truck * vlh_unchecked(state, length_km, VehicleClass::Truck, ffs)
}

/// Monetary loss matrix `loss[t][i]` in euros.
pub fn monetary_loss(
    states: &StateGrid,
    lengths_km: &[f64],
    ffs: &FreeFlowSpeeds,
    vot: &ValueOfTime,
) -> Result<Vec<Vec<f64>>, TrafficError> {
    if lengths_km.len() != states.n_nodes {
        return Err(TrafficError::ShapeMismatch(format!(
            "{} lengths for {} nodes",
            lengths_km.len(),
            states.n_nodes
        )));
    }
    if let Some(bad) = states.cells.iter().find(|s| !(s.speed_kmh > 0.0)) {
        return Err(TrafficError::NonPositiveSpeed(bad.speed_kmh));
    }
    Ok((0..states.n_intervals)
        .map(|t| {
            states
                .interval(t)
                .iter()
                .zip(lengths_km)
                .map(|(s, &l)| cell_loss(s, l, ffs, vot))
                .collect()
        })
        .collect())
}

/// Traffic cost of slot `slot`: the loss summed over nodes and the slot's intervals.
pub fn traffic_cost(loss: &[Vec<f64>], slot: usize, intervals_per_slot: usize) -> Result<f64, TrafficError> {
    let start = slot * intervals_per_slot;
    let end = start + intervals_per_slot;
    if end > loss.len() {
        return Err(TrafficError::CoverageGap { slot, intervals: loss.len() });
    }
    Ok(loss[start..end].iter().flat_map(|row| row.iter()).sum())
}

/// Aggregates hourly expected departures of all terminals per centroid,
/// applies the scale factor for terminals without a calibrated model, and
/// splits each hour evenly over its 15-minute intervals.
///
/// Returns `signal[t][c]` in trucks per interval.
pub fn inject_truck_departures(
    etd: &[Vec<f64>],
    centroid_of_terminal: &[usize],
    n_centroids: usize,
    scale: f64,
    intervals_per_slot: usize,
) -> Result<Vec<Vec<f64>>, TrafficError> {
    if etd.len() != centroid_of_terminal.len() {
        return Err(TrafficError::ShapeMismatch(format!(
            "{} ETD series for {} terminal mappings",
            etd.len(),
            centroid_of_terminal.len()
        )));
    }
    if !(scale.is_finite() && scale > 0.0) {
        return Err(TrafficError::ShapeMismatch(format!("scale must be > 0, got {scale}")));
    }
    let n_slots = etd.iter().map(|s| s.len()).max().unwrap_or(0);
    let mut hourly = vec![vec![0.0; n_centroids]; n_slots];
    for (series, &c) in etd.iter().zip(centroid_of_terminal) {
        if c >= n_centroids {
            return Err(TrafficError::ShapeMismatch(format!("centroid {c} out of range")));
        }
        for (t, &v) in series.iter().enumerate() {
            if !(v.is_finite() && v >= 0.0) {
                return Err(TrafficError::NegativeDemand { slot: t, value: v });
            }
            hourly[t][c] += v;
        }
    }
    let mut out = Vec::with_capacity(n_slots * intervals_per_slot);
    for row in hourly {
        let per: Vec<f64> = row.iter().map(|v| v * scale / intervals_per_slot as f64).collect();
        for _ in 0..intervals_per_slot {
            out.push(per.clone());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapeReport {
    pub percent: f64,
    pub used: usize,
    /// Cells skipped because the observation was zero.
    pub excluded_zero: usize,
}

/// Mean absolute percent error over cells with nonzero observations.
pub fn mape(predictions: &[f64], observations: &[f64]) -> Result<MapeReport, TrafficError> {
    if predictions.len() != observations.len() {
        return Err(TrafficError::ShapeMismatch(format!(
            "{} predictions vs {} observations",
            predictions.len(),
            observations.len()
        )));
    }
    let mut sum = 0.0;
    let mut used = 0;
    for (p, t) in predictions.iter().zip(observations) {
        if *t != 0.0 {
            sum += ((t - p) / t).abs();
            used += 1;
        }
    }
    if used == 0 {
        return Err(TrafficError::AllZeroObservations);
    }
    Ok(MapeReport {
        percent: sum / used as f64 * 100.0,
        used,
        excluded_zero: observations.len() - used,
    })
}
