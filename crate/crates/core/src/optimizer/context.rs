use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::OptimizerError;
use crate::choice::{choice_prob, planning_cost, ChoiceModelParams};
use crate::domain::{slot_to_window, CostConstants, CostVector, RequestId, SlotRequest, TimeSlot, Violation};
use crate::gate::{mms_wait_time, queue_stats_or_penalty, waiting_cost, GateError};
use crate::traffic::{inject_truck_departures, DayModel, Deviation, SparseResponse, TrafficError, INTERVALS_PER_SLOT};

/// One request as seen by the optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRequest {
    pub request_id: RequestId,
    pub terminal: usize,
    pub requested_slot: usize,
    /// Slots the request may be moved to, ascending; includes the requested slot.
    pub candidates: Vec<usize>,
    /// Planning cost of every slot of the day.
    pub planning_cost: Vec<f64>,
}

impl WindowRequest {
    /// Candidates are the slots from `first_slot` to the end of the day.
    pub fn from_request(
        r: &SlotRequest,
        params: &ChoiceModelParams,
        eta_scale: f64,
        first_slot: usize,
        n_slots: usize,
    ) -> Self {
        let cost = planning_cost(&choice_prob(&r.attributes, params), eta_scale);
        let day = r.requested_slot.start.date_naive();
        let planning_cost = (0..n_slots)
            .map(|t| cost[slot_to_window(&TimeSlot::hourly(day, t)).index()])
            .collect();
        let requested_slot = r.requested_slot.index;
        let mut candidates: Vec<usize> = (first_slot..n_slots).collect();
        if requested_slot < first_slot {
            candidates.insert(0, requested_slot);
        }
        Self {
            request_id: r.request_id,
            terminal: r.terminal,
            requested_slot,
            candidates,
            planning_cost,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalModel {
    pub name: String,
    /// Trucks per lane-hour.
    pub service_rate: f64,
    /// Crane (lane) cost per hour.
    pub crane_cost: f64,
    pub centroid: usize,
}

/// Slot assignment per request plus lanes per terminal and slot.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Solution {
    pub slots: Vec<usize>,
    pub lanes: Vec<Vec<u32>>,
}

/// Everything needed to score solutions of one planning window.
#[derive(Debug, Clone)]
pub struct OptimizationContext {
    pub slot_hours: f64,
    pub terminals: Vec<TerminalModel>,
    /// Expected arrivals per terminal and slot with every request at its requested slot.
    pub eta: Vec<Vec<f64>>,
    /// Current lanes; the starting point of the search.
    pub lanes: Vec<Vec<u32>>,
    /// Slots whose lanes the search may change.
    pub lane_slots: Vec<usize>,
    pub requests: Vec<WindowRequest>,
    pub idle_cost: f64,
    /// Exclusive upper bound on lanes.
    pub s_max: u32,
    pub traffic: Option<TrafficEvaluator>,
}

impl OptimizationContext {
    pub fn n_slots(&self) -> usize {
        self.eta.first().map_or(0, |e| e.len())
    }

    /// Every request at its requested slot, current lanes.
    pub fn identity(&self) -> Solution {
        Solution {
            slots: self.requests.iter().map(|r| r.requested_slot).collect(),
            lanes: self.lanes.clone(),
        }
    }

    /// Shape and sub-model checks, plus the bound of requests by expected arrivals.
    pub fn validate(&self) -> Result<(), OptimizerError> {
        let k = self.terminals.len();
        let n = self.n_slots();
        if k == 0 || n == 0 {
            return Err(OptimizerError::Shape("context has no terminals or slots".into()));
        }
        if self.eta.len() != k
            || self.lanes.len() != k
            || self.eta.iter().any(|e| e.len() != n)
            || self.lanes.iter().any(|l| l.len() != n)
        {
            return Err(OptimizerError::Shape("eta and lanes must be terminals x slots".into()));
        }
        if self.lane_slots.iter().any(|&t| t >= n) {
            return Err(OptimizerError::Shape("lane slot out of range".into()));
        }
        if !(self.slot_hours > 0.0) || !(self.idle_cost >= 0.0) || self.s_max < 2 {
            return Err(OptimizerError::Shape("slot width, idle cost or lane bound invalid".into()));
        }
        for t in &self.terminals {
            if !(t.service_rate > 0.0 && t.service_rate.is_finite()) {
                return Err(OptimizerError::Gate(GateError::InvalidParameter(format!(
                    "service rate of {} must be > 0",
                    t.name
                ))));
            }
        }
        for r in &self.requests {
            if r.terminal >= k
                || r.planning_cost.len() != n
                || !r.candidates.contains(&r.requested_slot)
                || r.candidates.iter().any(|&t| t >= n)
            {
                return Err(OptimizerError::Shape(format!("request {} does not fit the context", r.request_id)));
            }
        }
        for (term, eta) in self.eta.iter().enumerate() {
            let requested = self.requests.iter().filter(|r| r.terminal == term).count() as f64;
            let expected: f64 = eta.iter().sum();
            if requested > expected + 1e-9 {
                return Err(OptimizerError::RequestsExceedForecast {
                    terminal: term,
                    requests: requested as usize,
                    expected,
                });
            }
        }
        Ok(())
    }

    /// Expected arrivals after moving requests to their assigned slots.
    pub fn adjusted_eta(&self, solution: &Solution) -> Vec<Vec<f64>> {
        let moves: Vec<(usize, usize, usize)> = self
            .requests
            .iter()
            .zip(&solution.slots)
            .map(|(r, &s)| (r.terminal, r.requested_slot, s))
            .collect();
        update_eta(&self.eta, &moves)
    }

    pub fn shifts(&self, solution: &Solution) -> usize {
        self.requests
            .iter()
            .zip(&solution.slots)
            .filter(|(r, &s)| r.requested_slot != s)
            .count()
    }
}

/// Moves `(terminal, requested slot, assigned slot)` applied to expected
/// arrivals: each slot loses its requests and gains the requests assigned to
/// it. Results below zero are clamped with a warning.
pub fn update_eta(eta: &[Vec<f64>], moves: &[(usize, usize, usize)]) -> Vec<Vec<f64>> {
    let mut delta: Vec<Vec<i64>> = eta.iter().map(|e| vec![0; e.len()]).collect();
    for &(k, from, to) in moves {
        delta[k][from] -= 1;
        delta[k][to] += 1;
    }
    eta.iter()
        .zip(&delta)
        .enumerate()
        .map(|(k, (e, d))| {
            e.iter()
                .zip(d)
                .enumerate()
                .map(|(t, (v, dv))| {
                    let x = v + *dv as f64;
                    if x < 0.0 {
                        log::warn!("expected arrivals of terminal {k} slot {t} fell to {x}; clamped at zero");
                        0.0
                    } else {
                        x
                    }
                })
                .collect()
        })
        .collect()
}

/// Lowers z1 without changing the arrivals per terminal and slot. Moving one
/// request along each edge of a slot cycle keeps every slot count, so
/// negative cycles are cancelled until none is left; z2 to z4 do not change.
/// Only requests flagged in `movable` move when it is given.
pub fn reduce_z1_keeping_counts(ctx: &OptimizationContext, s: &mut Solution, movable: Option<&[bool]>) {
    let reqs = &ctx.requests;
    let n = ctx.n_slots();
    for k in 0..ctx.terminals.len() {
        let mine: Vec<usize> = (0..reqs.len())
            .filter(|&r| reqs[r].terminal == k && movable.is_none_or(|m| m[r]))
            .collect();
        if mine.len() < 2 {
            continue;
        }
        for _ in 0..4 * mine.len() {
            // cheapest single move from slot u to slot v
            let mut edge: Vec<Vec<Option<(f64, usize)>>> = vec![vec![None; n]; n];
            for &r in &mine {
                let u = s.slots[r];
                let cost = &reqs[r].planning_cost;
                for &v in &reqs[r].candidates {
                    let d = cost[v] - cost[u];
                    if v != u && edge[u][v].is_none_or(|(best, _)| d < best) {
                        edge[u][v] = Some((d, r));
                    }
                }
            }
            let Some(cycle) = negative_cycle(&edge) else {
                break;
            };
            for (u, v) in cycle {
                let (_, r) = edge[u][v].expect("cycle uses existing edges");
                s.slots[r] = v;
            }
        }
    }
}

/// A cycle of slot moves with negative total cost, found by Bellman-Ford
/// from a virtual source linked to every slot.
fn negative_cycle(edge: &[Vec<Option<(f64, usize)>>]) -> Option<Vec<(usize, usize)>> {
    let n = edge.len();
    let mut dist = vec![0.0f64; n];
    let mut pred = vec![usize::MAX; n];
    let mut last = None;
    for _ in 0..=n {
        last = None;
        for u in 0..n {
            for v in 0..n {
                if let Some((w, _)) = edge[u][v] {
                    if dist[u] + w < dist[v] - 1e-9 {
                        dist[v] = dist[u] + w;
                        pred[v] = u;
                        last = Some(v);
                    }
                }
            }
        }
        last?;
    }
    let mut x = last?;
    for _ in 0..n {
        x = pred[x];
    }
    let mut cycle = Vec::new();
    let mut v = x;
    loop {
        let u = pred[v];
        cycle.push((u, v));
        v = u;
        if v == x {
            break;
        }
    }
    let total: f64 = cycle.iter().map(|&(u, v)| edge[u][v].map_or(0.0, |e| e.0)).sum();
    (total < -1e-9).then_some(cycle)
}

/// The same arrivals per terminal and slot as `s`, reached with as few
/// shifted requests as possible: every slot keeps as many of its own
/// requests as it still receives. Among such plans z1 is lowered greedily.
/// Returns `s` unchanged when the moved requests cannot be placed.
pub fn fewest_shifts(ctx: &OptimizationContext, s: &Solution) -> Solution {
    let reqs = &ctx.requests;
    let n = ctx.n_slots();
    let mut out = s.clone();
    let mut movable = vec![false; reqs.len()];
    for k in 0..ctx.terminals.len() {
        let mine: Vec<usize> = (0..reqs.len()).filter(|&r| reqs[r].terminal == k).collect();
        let mut assigned = vec![0usize; n];
        let mut own: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &r in &mine {
            assigned[s.slots[r]] += 1;
            own[reqs[r].requested_slot].push(r);
        }
        let mut room: Vec<usize> = (0..n).map(|t| assigned[t].saturating_sub(own[t].len())).collect();
        let allowed = |r: usize, t: usize| reqs[r].candidates.binary_search(&t).is_ok();
        let best_move = |r: usize, room: &[usize]| -> Option<(f64, usize)> {
            (0..n)
                .filter(|&t| room[t] > 0 && allowed(r, t))
                .map(|t| (reqs[r].planning_cost[t], t))
                .min_by(|a, b| a.0.total_cmp(&b.0))
        };
        let mut movers = Vec::new();
        for t in 0..n {
            let extra = own[t].len().saturating_sub(assigned[t]);
            if extra == 0 {
                for &r in &own[t] {
                    out.slots[r] = t;
                }
                continue;
            }
            // the requests that lose least by leaving go
            let mut ranked: Vec<(f64, usize)> = own[t]
                .iter()
                .map(|&r| {
                    let away = best_move(r, &room).map_or(f64::INFINITY, |m| m.0);
                    (away - reqs[r].planning_cost[t], r)
                })
                .collect();
            ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for (i, &(_, r)) in ranked.iter().enumerate() {
                if i < extra {
                    movers.push(r);
                } else {
                    out.slots[r] = t;
                }
            }
        }
        movers.sort_by(|&a, &b| {
            let ca = best_move(a, &room).map_or(f64::INFINITY, |m| m.0);
            let cb = best_move(b, &room).map_or(f64::INFINITY, |m| m.0);
            ca.total_cmp(&cb).then(a.cmp(&b))
        });
        for r in movers {
            let Some((_, t)) = best_move(r, &room) else {
                return s.clone();
            };
            room[t] -= 1;
            out.slots[r] = t;
            movable[r] = true;
        }
    }
    // cycles among moved requests keep them away from their own slots
    reduce_z1_keeping_counts(ctx, &mut out, Some(&movable));
    out
}

/// Waiting cost per slot of one terminal, euros.
pub fn slot_waiting_costs(eta: &[f64], lanes: &[u32], service_rate: f64, slot_hours: f64, idle_cost: f64) -> Vec<f64> {
    eta.iter()
        .zip(lanes)
        .map(|(&n, &s)| {
            let stats = queue_stats_or_penalty(n / slot_hours, service_rate, s.max(1), slot_hours);
            waiting_cost(stats.mean_waiting, idle_cost) * slot_hours
        })
        .collect()
}

/// Objective vector of a solution: planning cost, waiting cost, lane cost and
/// traffic cost.
pub fn evaluate_objectives(solution: &Solution, ctx: &OptimizationContext) -> Result<CostVector, OptimizerError> {
    if solution.slots.len() != ctx.requests.len()
        || solution.lanes.len() != ctx.terminals.len()
        || solution.lanes.iter().any(|l| l.len() != ctx.n_slots())
    {
        return Err(OptimizerError::Shape("solution does not match the context".into()));
    }
    let z1 = ctx
        .requests
        .iter()
        .zip(&solution.slots)
        .map(|(r, &s)| r.planning_cost.get(s).copied().unwrap_or(f64::INFINITY))
        .sum();
    let eta = ctx.adjusted_eta(solution);
    let mut z2 = 0.0;
    let mut z3 = 0.0;
    for (k, term) in ctx.terminals.iter().enumerate() {
        z2 += slot_waiting_costs(&eta[k], &solution.lanes[k], term.service_rate, ctx.slot_hours, ctx.idle_cost)
            .iter()
            .sum::<f64>();
        z3 += term.crane_cost * ctx.slot_hours * solution.lanes[k].iter().map(|&s| s as f64).sum::<f64>();
    }
    let z4 = match &ctx.traffic {
        Some(t) => t.cost(&eta)?,
        None => 0.0,
    };
    Ok(CostVector {
        z1_disutility: z1,
        z2_waiting_eur: z2,
        z3_crane_eur: z3,
        z4_traffic_eur: z4,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub violations: Vec<Violation>,
}

/// Constraint check of a solution in a planning window.
pub fn feasible(solution: &Solution, ctx: &OptimizationContext) -> FeasibilityReport {
    let mut v = Vec::new();
    if solution.slots.len() != ctx.requests.len() {
        push(
            &mut v,
            "one_slot_per_request".into(),
            format!("{} slots for {} requests", solution.slots.len(), ctx.requests.len()),
        );
    }
    for (r, &s) in ctx.requests.iter().zip(&solution.slots) {
        if !r.candidates.contains(&s) {
            push(
            &mut v,
                format!("requests.{}", r.request_id),
                format!("slot {s} is not an eligible slot"),
            );
        }
    }
    if solution.lanes.len() != ctx.terminals.len() {
        push(&mut v, "lanes".into(), "one lane vector per terminal".into());
    }
    for (k, lanes) in solution.lanes.iter().enumerate() {
        if lanes.len() != ctx.n_slots() {
            push(&mut v, format!("lanes.{k}"), "one lane count per slot".into());
        }
        for (t, &s) in lanes.iter().enumerate() {
            if s == 0 || s >= ctx.s_max {
                push(&mut v, format!("lanes.{k}.{t}"), format!("need 0 < S_t < {}, got {s}", ctx.s_max));
            }
        }
    }
    if v.is_empty() {
        let before: f64 = ctx.eta.iter().flatten().sum();
        let eta = ctx.adjusted_eta(solution);
        if eta.iter().flatten().any(|v| *v < 0.0) {
            push(&mut v, "eta".into(), "expected arrivals must stay non-negative".into());
        }
        let after: f64 = eta.iter().flatten().sum();
        if after != before {
            push(
            &mut v,
                "conservation".into(),
                format!("departures {after} differ from expected arrivals {before}"),
            );
        }
        for (k, e) in eta.iter().enumerate() {
            let requested = ctx.requests.iter().filter(|r| r.terminal == k).count() as f64;
            if requested > e.iter().sum::<f64>() + 1e-9 {
                push(
            &mut v,
                    format!("requests.terminal.{k}"),
                    "more requests than expected arrivals".into(),
                );
            }
        }
    }
    FeasibilityReport {
        feasible: v.is_empty(),
        violations: v,
    }
}

fn push(v: &mut Vec<Violation>, path: String, message: String) {
    v.push(Violation { path, message });
}

/// Checks a binary assignment matrix `x[r][t]`: entries are 0 or 1 and every
/// request has exactly one slot.
pub fn check_binary_assignment(x: &[Vec<u8>]) -> Vec<Violation> {
    let mut out = Vec::new();
    for (r, row) in x.iter().enumerate() {
        if row.iter().any(|&v| v > 1) {
            out.push(Violation {
                path: format!("x.{r}"),
                message: "assignment entries must be 0 or 1".into(),
            });
        }
        let ones = row.iter().filter(|&&v| v == 1).count();
        if ones != 1 {
            out.push(Violation {
                path: format!("x.{r}"),
                message: format!("one slot per request required, found {ones}"),
            });
        }
    }
    out
}

/// Lane cost per hour: labor of a lane crew plus `alpha` times the waiting
/// cost saved by one extra lane at the peak.
pub fn crane_unit_cost(
    costs: &CostConstants,
    alpha: f64,
    peak_rate: f64,
    service_rate: f64,
    peak_lanes: u32,
) -> Result<f64, GateError> {
    let cost_at = |s: u32| -> Result<f64, GateError> {
        let w = mms_wait_time(peak_rate, service_rate, s)?;
        Ok(waiting_cost(peak_rate * w, costs.idle_cost))
    };
    let benefit = cost_at(peak_lanes)? - cost_at(peak_lanes + 1)?;
    Ok(costs.persons_per_lane * costs.labor_cost + alpha * benefit)
}

/// Lanes per slot minimising lane cost plus waiting cost, within `1..s_max`.
pub fn cost_optimal_lanes(eta: &[f64], service_rate: f64, crane_cost: f64, idle_cost: f64, s_max: u32) -> Vec<u32> {
    eta.iter()
        .map(|&n| {
            (1..s_max)
                .map(|s| {
                    let w = slot_waiting_costs(&[n], &[s], service_rate, 1.0, idle_cost)[0];
                    (s, crane_cost * s as f64 + w)
                })
                .fold((1, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best })
                .0
        })
        .collect()
}

/// Precomputed responses of the day model to one truck per hour leaving each
/// centroid in each slot.
#[derive(Debug)]
pub struct TrafficResponses {
    pub model: DayModel,
    /// `responses[slot][centroid]`.
    pub responses: Vec<Vec<SparseResponse>>,
    pub centroid_of_terminal: Vec<usize>,
    pub departure_scale: f64,
}

impl TrafficResponses {
    pub fn new(model: DayModel, centroid_of_terminal: Vec<usize>, departure_scale: f64) -> Result<Self, TrafficError> {
        let n_c = model.graph.centroids.len();
        if centroid_of_terminal.iter().any(|&c| c >= n_c) {
            return Err(TrafficError::ShapeMismatch("terminal centroid out of range".into()));
        }
        let slots = model.n_intervals() / INTERVALS_PER_SLOT;
        let per = departure_scale / INTERVALS_PER_SLOT as f64;
        let responses = (0..slots)
            .map(|s| {
                (0..n_c)
                    .map(|c| model.impulse_response(c, s * INTERVALS_PER_SLOT, (s + 1) * INTERVALS_PER_SLOT, per))
                    .collect()
            })
            .collect();
        Ok(Self {
            model,
            responses,
            centroid_of_terminal,
            departure_scale,
        })
    }

    pub fn demand(&self, etd: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, TrafficError> {
        let mut d = inject_truck_departures(
            etd,
            &self.centroid_of_terminal,
            self.model.graph.centroids.len(),
            self.departure_scale,
            INTERVALS_PER_SLOT,
        )?;
        let n_c = self.model.graph.centroids.len();
        d.resize(self.model.n_intervals(), vec![0.0; n_c]);
        Ok(d)
    }

    /// Loss matrix `[t][i]` for departures `etd[terminal][slot]`.
    pub fn loss(&self, etd: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, TrafficError> {
        self.model.loss(&self.demand(etd)?)
    }
}

/// Traffic cost relative to a base departure profile, updated through the
/// precomputed responses so only cells reached by a change are recomputed.
#[derive(Debug, Clone)]
pub struct TrafficEvaluator {
    shared: Arc<TrafficResponses>,
    base_etd: Vec<Vec<f64>>,
    base_dev: Vec<Deviation>,
    base_loss: Vec<f64>,
    base_total: f64,
}

impl TrafficEvaluator {
    pub fn new(shared: Arc<TrafficResponses>, base_etd: Vec<Vec<f64>>) -> Result<Self, TrafficError> {
        let demand = shared.demand(&base_etd)?;
        let base_dev = shared.model.deviations(&demand)?;
        let base_loss: Vec<f64> = base_dev
            .iter()
            .enumerate()
            .map(|(idx, d)| shared.model.cell_loss(idx, d))
            .collect();
        let base_total = base_loss.iter().sum();
        Ok(Self {
            shared,
            base_etd,
            base_dev,
            base_loss,
            base_total,
        })
    }

    pub fn base_total(&self) -> f64 {
        self.base_total
    }

    /// Whole-day traffic cost for departures `etd[terminal][slot]`.
    pub fn cost(&self, etd: &[Vec<f64>]) -> Result<f64, TrafficError> {
        if etd.len() != self.base_etd.len() || etd.iter().zip(&self.base_etd).any(|(a, b)| a.len() != b.len()) {
            return Err(TrafficError::ShapeMismatch("departures do not match the base profile".into()));
        }
        let n_c = self.shared.model.graph.centroids.len();
        let slots = self.shared.responses.len();
        let mut changes: Vec<(usize, usize, f64)> = Vec::new();
        for s in 0..slots {
            let mut per_c = vec![0.0; n_c];
            for (k, (a, b)) in etd.iter().zip(&self.base_etd).enumerate() {
                if let (Some(x), Some(y)) = (a.get(s), b.get(s)) {
                    per_c[self.shared.centroid_of_terminal[k]] += x - y;
                }
            }
            for (c, d) in per_c.into_iter().enumerate() {
                if d != 0.0 {
                    changes.push((s, c, d));
                }
            }
        }
        if changes.is_empty() {
            return Ok(self.base_total);
        }
        let mut touched: std::collections::BTreeMap<usize, Deviation> = std::collections::BTreeMap::new();
        for (s, c, d) in changes {
            for (idx, r) in &self.shared.responses[s][c].cells {
                let e = touched.entry(*idx).or_insert(self.base_dev[*idx]);
                for f in 0..3 {
                    e[f] += d * r[f];
                }
            }
        }
        let mut total = self.base_total;
        for (idx, dev) in touched {
            total += self.shared.model.cell_loss(idx, &dev) - self.base_loss[idx];
        }
        Ok(total)
    }
}
