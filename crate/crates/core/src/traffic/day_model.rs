use serde::{Deserialize, Serialize};

use super::loss::cell_loss;
use super::propagator::{clamp_state, step};
use super::{
    fit_propagator, FitReport, FreeFlowSpeeds, LinkGraph, LinkState, NormalizedAdjacency, PropagatorParams,
    StateGrid, TrafficDay, TrafficError, ValueOfTime,
};

/// Day-ahead traffic predictor: the mean day of the history plus a
/// propagated deviation driven by the deviation of centroid truck demand from
/// its historical mean. Deviations roll out linearly; states are clamped only
/// when read, so the response to a demand change is exactly additive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayModel {
    pub graph: LinkGraph,
    pub params: PropagatorParams,
    pub mean_states: StateGrid,
    /// `mean_demand[t][c]`, trucks per interval.
    pub mean_demand: Vec<Vec<f64>>,
    pub free_flow: FreeFlowSpeeds,
    pub vot: ValueOfTime,
    #[serde(skip)]
    adj: Option<NormalizedAdjacency>,
}

/// Deviation of one cell, `[q_passenger, q_truck, speed]`, flattened as `t * n + i`.
pub type Deviation = [f64; 3];

/// Deviation caused by one truck per hour leaving a centroid during one slot.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseResponse {
    pub cells: Vec<(usize, Deviation)>,
}

impl DayModel {
    /// Fits the deviation propagator on `history`. With `params` given, the
    /// history only supplies the mean day.
    pub fn fit(
        history: &[TrafficDay],
        graph: &LinkGraph,
        order: usize,
        params: Option<PropagatorParams>,
        free_flow: FreeFlowSpeeds,
        vot: ValueOfTime,
    ) -> Result<(Self, Option<FitReport>), TrafficError> {
        let first = history.first().ok_or(TrafficError::InsufficientHistory {
            needed: super::MIN_FIT_DAYS,
            got: 0,
        })?;
        let n = graph.n_nodes();
        let intervals = first.states.n_intervals;
        let n_c = graph.centroids.len();
        for d in history {
            if d.states.n_nodes != n || d.states.n_intervals != intervals || d.centroid_demand.len() != intervals {
                return Err(TrafficError::ShapeMismatch("history days differ in shape".into()));
            }
        }
        let days = history.len() as f64;
        let mut mean_states = StateGrid::filled(n, intervals, LinkState::default());
        let mut mean_demand = vec![vec![0.0; n_c]; intervals];
        for d in history {
            for (m, s) in mean_states.cells.iter_mut().zip(&d.states.cells) {
                m.q_passenger += s.q_passenger / days;
                m.q_truck += s.q_truck / days;
                m.speed_kmh += s.speed_kmh / days;
            }
            for (m, row) in mean_demand.iter_mut().zip(&d.centroid_demand) {
                for (a, b) in m.iter_mut().zip(row) {
                    *a += b / days;
                }
            }
        }
        let (params, report) = match params {
            Some(p) => (p, None),
            None => {
                let deviations: Vec<TrafficDay> = history
                    .iter()
                    .map(|d| {
                        let mut states = d.states.clone();
                        for (s, m) in states.cells.iter_mut().zip(&mean_states.cells) {
                            s.q_passenger -= m.q_passenger;
                            s.q_truck -= m.q_truck;
                            s.speed_kmh -= m.speed_kmh;
                        }
                        let centroid_demand = d
                            .centroid_demand
                            .iter()
                            .zip(&mean_demand)
                            .map(|(row, m)| row.iter().zip(m).map(|(a, b)| a - b).collect())
                            .collect();
                        TrafficDay { states, centroid_demand }
                    })
                    .collect();
                let (p, r) = fit_propagator(&deviations, graph, order)?;
                (p, Some(r))
            }
        };
        if params.order() != order || !params.is_finite() {
            return Err(TrafficError::ShapeMismatch("propagator does not match the requested order".into()));
        }
        Ok((
            Self {
                adj: Some(graph.normalized_adjacency()),
                graph: graph.clone(),
                params,
                mean_states,
                mean_demand,
                free_flow,
                vot,
            },
            report,
        ))
    }

    pub fn n_intervals(&self) -> usize {
        self.mean_states.n_intervals
    }

    pub fn n_nodes(&self) -> usize {
        self.mean_states.n_nodes
    }

    fn adjacency(&self) -> NormalizedAdjacency {
        self.adj.clone().unwrap_or_else(|| self.graph.normalized_adjacency())
    }

    fn check_demand(&self, demand: &[Vec<f64>]) -> Result<(), TrafficError> {
        let n_c = self.graph.centroids.len();
        if demand.len() != self.n_intervals() || demand.iter().any(|r| r.len() != n_c) {
            return Err(TrafficError::ShapeMismatch(format!(
                "demand must be {} intervals x {} centroids",
                self.n_intervals(),
                n_c
            )));
        }
        Ok(())
    }

    /// Unclamped deviations from the mean day for centroid demand `demand[t][c]`.
    pub fn deviations(&self, demand: &[Vec<f64>]) -> Result<Vec<Deviation>, TrafficError> {
        self.check_demand(demand)?;
        let n = self.n_nodes();
        let adj = self.adjacency();
        let mut out = vec![[0.0; 3]; n * self.n_intervals()];
        let mut injection = vec![0.0; n];
        for t in 0..self.n_intervals().saturating_sub(1) {
            let delta: Vec<f64> = demand[t].iter().zip(&self.mean_demand[t]).map(|(a, b)| a - b).collect();
            self.graph.centroid_injection(&delta, &mut injection);
            let next = step(&adj, &out[t * n..(t + 1) * n], &injection, &self.params, true);
            out[(t + 1) * n..(t + 2) * n].copy_from_slice(&next);
        }
        Ok(out)
    }

    /// Clamped state of cell `idx` under deviation `dev`.
    pub fn state_at(&self, idx: usize, dev: &Deviation) -> LinkState {
        let m = &self.mean_states.cells[idx];
        let mut s = LinkState {
            q_passenger: m.q_passenger + dev[0],
            q_truck: m.q_truck + dev[1],
            speed_kmh: m.speed_kmh + dev[2],
        };
        clamp_state(&mut s, self.free_flow.passenger);
        s
    }

    /// Euro loss of cell `idx` under deviation `dev`.
    pub fn cell_loss(&self, idx: usize, dev: &Deviation) -> f64 {
        let length = self.graph.nodes[idx % self.n_nodes()].length_km;
        cell_loss(&self.state_at(idx, dev), length, &self.free_flow, &self.vot)
    }

    pub fn predict(&self, demand: &[Vec<f64>]) -> Result<StateGrid, TrafficError> {
        let dev = self.deviations(demand)?;
        let mut grid = self.mean_states.clone();
        for (idx, d) in dev.iter().enumerate() {
            grid.cells[idx] = self.state_at(idx, d);
        }
        Ok(grid)
    }

    /// Loss matrix `[t][i]` in euros.
    pub fn loss(&self, demand: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, TrafficError> {
        let dev = self.deviations(demand)?;
        let n = self.n_nodes();
        Ok((0..self.n_intervals())
            .map(|t| (0..n).map(|i| self.cell_loss(t * n + i, &dev[t * n + i])).collect())
            .collect())
    }

    /// Deviation caused by `per_interval` extra trucks at `centroid` during
    /// intervals `[start, end)`. Cells below `1e-12` in every feature are dropped.
    pub fn impulse_response(&self, centroid: usize, start: usize, end: usize, per_interval: f64) -> SparseResponse {
        let n = self.n_nodes();
        let n_c = self.graph.centroids.len();
        let adj = self.adjacency();
        let mut demand = vec![0.0; n_c];
        demand[centroid] = per_interval;
        let mut injection = vec![0.0; n];
        let mut x = vec![[0.0; 3]; n];
        let mut cells = Vec::new();
        for t in start..self.n_intervals().saturating_sub(1) {
            if t < end {
                self.graph.centroid_injection(&demand, &mut injection);
            } else {
                injection.iter_mut().for_each(|v| *v = 0.0);
            }
            x = step(&adj, &x, &injection, &self.params, false);
            let mut peak = 0.0f64;
            for (i, d) in x.iter().enumerate() {
                let m = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                peak = peak.max(m);
                if m > 1e-12 {
                    cells.push(((t + 1) * n + i, *d));
                }
            }
            if t >= end && peak <= 1e-12 {
                break;
            }
        }
        SparseResponse { cells }
    }
}
