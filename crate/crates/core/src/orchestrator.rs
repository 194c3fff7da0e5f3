//! Rolling planning windows over one operation day and the stakeholder
//! accounting of the result.

use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{Duration, NaiveDate, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::datagen::{draw_requests, gen_day_pool, gen_traffic_history, AttributeWeights, DatagenError, PickupLatencyModel, RequestConfig, TrafficNoise};
use crate::domain::{validate_scenario, SlotRequest, Commodity, ContainerRecord, ContainerType, CostVector, Scenario, SLOTS_PER_DAY, MIN_LEAD_HOURS};
use crate::gate::{queue_stats_or_penalty, GateError};
use crate::optimizer::{
    cost_optimal_lanes, crane_unit_cost, evaluate_objectives, feasible, fewest_shifts, nsga2_run_observed, select_solution,
    slot_waiting_costs, update_eta, FrontMember, GenerationStats, OptimizationContext, OptimizerError, ParetoFront, SelectionPolicy,
    TerminalModel, TrafficEvaluator, TrafficResponses, WindowRequest,
};
use crate::traffic::{inject_truck_departures, DayModel, TrafficError, ValueOfTime, INTERVALS_PER_SLOT};

/// Days of synthetic traffic history the day model is fitted on.
pub const TRAFFIC_HISTORY_DAYS: usize = 35;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("planning hour {0} is outside working hours")]
    OutsideWorkingHours(u32),
    #[error("planning window {hour}:00: {source}")]
    Window { hour: u32, source: OptimizerError },
    #[error("planning window {hour}:00: {source}")]
    Requests { hour: u32, source: DatagenError },
    #[error("window {hour}:00 has {size} front members, no member {index}")]
    NoSuchMember { hour: u32, index: usize, size: usize },
    #[error("runs differ: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error(transparent)]
    Gate(#[from] GateError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
}

/// One request's committed slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommittedAssignment {
    pub request_id: u64,
    pub terminal: usize,
    pub container_id: String,
    pub commodity: Commodity,
    pub container_type: ContainerType,
    pub requested_slot: usize,
    pub assigned_slot: usize,
    pub planning_cost_requested: f64,
    pub planning_cost_assigned: f64,
}

/// What a closed planning window committed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommittedWindow {
    pub planning_hour: u32,
    pub assignments: Vec<CommittedAssignment>,
    /// Lanes per terminal and slot after the window.
    pub lanes: Vec<Vec<u32>>,
    pub objectives: CostVector,
    /// Objectives of leaving the window unchanged.
    pub identity: CostVector,
    pub front_size: usize,
    pub evaluations: usize,
}

impl CommittedWindow {
    pub fn moves(&self) -> Vec<(usize, usize, usize)> {
        self.assignments
            .iter()
            .map(|a| (a.terminal, a.requested_slot, a.assigned_slot))
            .collect()
    }
}

/// Mutable state of the day, owned by the orchestrator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanningState {
    /// Expected arrivals per terminal and slot.
    pub eta: Vec<Vec<f64>>,
    pub lanes: Vec<Vec<u32>>,
    pub committed: Vec<CommittedWindow>,
    /// Containers still to be requested, per planning hour and terminal.
    pub pending: BTreeMap<u32, Vec<Vec<ContainerRecord>>>,
    pub next_request_id: u64,
}

/// Fixed inputs of a day run.
#[derive(Debug, Clone)]
pub struct DayPlanner {
    pub scenario: Scenario,
    pub scenario_hash: String,
    pub seed: u64,
    pub policy: SelectionPolicy,
    pub terminals: Vec<TerminalModel>,
    pub crane_cost: f64,
    pub base_lanes: Vec<Vec<u32>>,
    pub traffic: Option<Arc<TrafficResponses>>,
    pub requests: RequestConfig,
}

/// splitmix64 of a seed and a tag, for independent sub-streams.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the synthetic traffic history behind a day run.
pub fn traffic_seed(seed: u64) -> u64 {
    derive_seed(seed, 0x7AFF)
}

pub fn scenario_hash(s: &Scenario) -> String {
    let digest = Sha256::digest(s.to_json().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn check_scenario(s: &Scenario) -> Result<(), OrchestratorError> {
    let report = validate_scenario(s);
    match report.violations.first() {
        Some(v) => Err(OrchestratorError::InvalidScenario(format!(
            "{}: {} ({} violations)",
            v.path,
            v.message,
            report.violations.len()
        ))),
        None => Ok(()),
    }
}

impl DayPlanner {
    /// Validates the scenario, prices lanes and fits the traffic model on
    /// synthetic history around the forecast demand.
    pub fn new(scenario: &Scenario, seed: u64, policy: SelectionPolicy) -> Result<Self, OrchestratorError> {
        check_scenario(scenario)?;
        let traffic = Some(Arc::new(fit_traffic(scenario, traffic_seed(seed))?));
        Self::with_traffic(scenario, seed, policy, traffic)
    }

    /// Like [`DayPlanner::new`] with an already fitted traffic model, e.g.
    /// one cached across runs that differ only in cost factors.
    pub fn with_traffic(
        scenario: &Scenario,
        seed: u64,
        policy: SelectionPolicy,
        traffic: Option<Arc<TrafficResponses>>,
    ) -> Result<Self, OrchestratorError> {
        check_scenario(scenario)?;
        let s = scenario;
        let crane_cost = match s.costs.crane_benefit {
            Some(b) => s.crane_cost_with_benefit(b),
            None => {
                let t = &s.terminals[0];
                let peak = t.demand_profile.iter().cloned().fold(0.0, f64::max);
                crane_unit_cost(&s.costs, s.costs.alpha, peak, t.service_rate, t.calibrated_lanes)?
            }
        };
        let terminals: Vec<TerminalModel> = s
            .terminals
            .iter()
            .map(|t| TerminalModel {
                name: t.name.clone(),
                service_rate: t.service_rate,
                crane_cost,
                centroid: t.centroid,
            })
            .collect();
        let base_lanes = match &s.base_lanes {
            Some(l) => l.clone(),
            None => s
                .terminals
                .iter()
                .map(|t| cost_optimal_lanes(&t.demand_profile, t.service_rate, crane_cost, s.costs.idle_cost, s.s_max))
                .collect(),
        };
        Ok(Self {
            scenario: s.clone(),
            scenario_hash: scenario_hash(s),
            seed,
            policy,
            terminals,
            crane_cost,
            base_lanes,
            traffic,
            requests: RequestConfig {
                working_hours: s.calendar.working_hours,
                ..RequestConfig::default()
            },
        })
    }

    pub fn initial_eta(&self) -> Vec<Vec<f64>> {
        self.scenario.terminals.iter().map(|t| t.demand_profile.clone()).collect()
    }

    fn day(&self) -> NaiveDate {
        self.scenario.calendar.operation_day
    }

    /// Start of the day: forecast arrivals, base lanes, and every container
    /// due that day assigned to one planning window at least three hours
    /// before its pickup slot.
    pub fn initial_state(&self) -> Result<PlanningState, OrchestratorError> {
        let (open, close) = self.scenario.calendar.working_hours;
        let first_hour = (open as i64 + MIN_LEAD_HOURS) as usize;
        let mut pending: BTreeMap<u32, Vec<Vec<ContainerRecord>>> = BTreeMap::new();
        let k = self.scenario.terminals.len();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, 0xB0B));
        for (i, t) in self.scenario.terminals.iter().enumerate() {
            let pool = gen_day_pool(
                &t.demand_profile,
                self.day(),
                first_hour,
                &AttributeWeights::default(),
                &PickupLatencyModel::default(),
                &format!("{}-", t.name),
                derive_seed(self.seed, 0x1000 + i as u64),
            )?;
            for c in pool {
                let slot = c.pickup.hour() as i64;
                let last = (slot - MIN_LEAD_HOURS).min(close as i64 - 1);
                if last < open as i64 {
                    continue;
                }
                let w = rng.random_range(open as i64..=last) as u32;
                pending.entry(w).or_insert_with(|| vec![Vec::new(); k])[i].push(c);
            }
        }
        Ok(PlanningState {
            eta: self.initial_eta(),
            lanes: self.base_lanes.clone(),
            committed: Vec::new(),
            pending,
            next_request_id: 1,
        })
    }
}

/// Mean port truck departures per interval implied by the forecast.
pub fn port_truck_departures(s: &Scenario) -> Result<Vec<Vec<f64>>, TrafficError> {
    let eta: Vec<Vec<f64>> = s.terminals.iter().map(|t| t.demand_profile.clone()).collect();
    let centroids: Vec<usize> = s.terminals.iter().map(|t| t.centroid).collect();
    inject_truck_departures(
        &eta,
        &centroids,
        s.network.graph.centroids.len(),
        s.network.departure_scale,
        INTERVALS_PER_SLOT,
    )
}

/// Day model fitted on synthetic history, with responses to one truck per
/// hour leaving each centroid in each slot.
pub fn fit_traffic(s: &Scenario, seed: u64) -> Result<TrafficResponses, TrafficError> {
    let net = &s.network;
    let trucks = port_truck_departures(s)?;
    let history = gen_traffic_history(net, &trucks, TRAFFIC_HISTORY_DAYS, &TrafficNoise::default(), seed)?;
    let vot = ValueOfTime {
        passenger: s.costs.vot_passenger,
        truck: s.costs.vot_truck,
    };
    let (model, _) = DayModel::fit(
        &history,
        &net.graph,
        net.propagation_order,
        net.propagator.clone(),
        net.free_flow,
        vot,
    )?;
    TrafficResponses::new(model, s.terminals.iter().map(|t| t.centroid).collect(), net.departure_scale)
}

/// A searched but not yet committed planning window.
#[derive(Debug, Clone)]
pub struct WindowPlan {
    pub hour: u32,
    pub ctx: OptimizationContext,
    pub requests: Vec<SlotRequest>,
    pub next_request_id: u64,
    pub front: ParetoFront,
}

/// Which plan of a window's front is committed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Choice {
    Policy(SelectionPolicy),
    /// Index into the front members.
    Member(usize),
}

/// Draws the window's requests, prices their slots and searches slot
/// assignments and lanes starting from the identity plan.
pub fn plan_window(state: &PlanningState, t_p: u32, planner: &DayPlanner) -> Result<WindowPlan, OrchestratorError> {
    plan_window_observed(state, t_p, planner, &mut |_| {})
}

/// [`plan_window`] reporting each finished GA generation.
pub fn plan_window_observed(
    state: &PlanningState,
    t_p: u32,
    planner: &DayPlanner,
    on_generation: &mut dyn FnMut(&GenerationStats),
) -> Result<WindowPlan, OrchestratorError> {
    let s = &planner.scenario;
    let (open, close) = s.calendar.working_hours;
    if t_p < open || t_p >= close {
        return Err(OrchestratorError::OutsideWorkingHours(t_p));
    }
    let first_slot = (t_p as i64 + MIN_LEAD_HOURS) as usize;
    let planning_time = s.calendar.operation_day.and_hms_opt(0, 0, 0).unwrap().and_utc() + Duration::hours(t_p as i64);
    let mut next_id = state.next_request_id;
    let mut drawn = Vec::new();
    if let Some(pools) = state.pending.get(&t_p) {
        for (k, pool) in pools.iter().enumerate() {
            if pool.is_empty() {
                continue;
            }
            let reqs = draw_requests(
                pool,
                k,
                planning_time,
                pool.len(),
                next_id,
                &planner.requests,
                derive_seed(planner.seed, ((t_p as u64) << 8) | k as u64),
            )
            .map_err(|source| OrchestratorError::Requests { hour: t_p, source })?;
            next_id += reqs.len() as u64;
            drawn.extend(reqs);
        }
    }
    let window = |source| OrchestratorError::Window { hour: t_p, source };
    let requests: Vec<WindowRequest> = drawn
        .iter()
        .map(|r| WindowRequest::from_request(r, &s.choice_model, s.eta_scale, first_slot, SLOTS_PER_DAY))
        .collect();
    let traffic = match &planner.traffic {
        Some(shared) => Some(TrafficEvaluator::new(shared.clone(), state.eta.clone()).map_err(|e| window(e.into()))?),
        None => None,
    };
    let ctx = OptimizationContext {
        slot_hours: 1.0,
        terminals: planner.terminals.clone(),
        eta: state.eta.clone(),
        lanes: state.lanes.clone(),
        lane_slots: (first_slot..SLOTS_PER_DAY).collect(),
        requests,
        idle_cost: s.costs.idle_cost,
        s_max: s.s_max,
        traffic,
    };
    let front = if ctx.requests.is_empty() {
        let identity = FrontMember {
            objectives: evaluate_objectives(&ctx.identity(), &ctx).map_err(window)?,
            solution: ctx.identity(),
            feasible: true,
            violations: 0,
            shifts: 0,
        };
        ParetoFront {
            members: vec![identity.clone()],
            identity,
            history: Vec::new(),
        }
    } else {
        let mut ga = s.ga.clone();
        ga.seed = derive_seed(planner.seed, 0xA000 + t_p as u64);
        nsga2_run_observed(&ctx, &ga, on_generation).map_err(window)?
    };
    Ok(WindowPlan {
        hour: t_p,
        ctx,
        requests: drawn,
        next_request_id: next_id,
        front,
    })
}

/// Commits one plan of the window and folds it into the state. A policy
/// picks among the front and the identity plan; when the policy ignores z1,
/// the realization with the fewest shifted requests is committed.
pub fn commit_window(
    state: &PlanningState,
    plan: &WindowPlan,
    choice: Choice,
) -> Result<(PlanningState, FrontMember), OrchestratorError> {
    let t_p = plan.hour;
    let ctx = &plan.ctx;
    let front = &plan.front;
    let window = |source| OrchestratorError::Window { hour: t_p, source };
    if ctx.requests.is_empty() {
        return Ok((state.clone(), front.identity.clone()));
    }
    let solution = match choice {
        Choice::Member(i) => front
            .members
            .get(i)
            .ok_or(OrchestratorError::NoSuchMember {
                hour: t_p,
                index: i,
                size: front.members.len(),
            })?
            .solution
            .clone(),
        Choice::Policy(policy) => {
            let mut pool = front.members.clone();
            pool.push(front.identity.clone());
            let picked = select_solution(&pool, &front.identity.objectives, policy).map_err(window)?;
            let ignores_z1 = match policy {
                SelectionPolicy::MinZ1 => false,
                SelectionPolicy::Weighted(w) => w[0] == 0.0,
                _ => true,
            };
            if ignores_z1 {
                fewest_shifts(ctx, &picked.solution)
            } else {
                picked.solution.clone()
            }
        }
    };
    let report = feasible(&solution, ctx);
    let selected = FrontMember {
        objectives: evaluate_objectives(&solution, ctx).map_err(window)?,
        shifts: ctx.shifts(&solution),
        feasible: report.feasible,
        violations: report.violations.len(),
        solution,
    };

    let assignments: Vec<CommittedAssignment> = plan
        .requests
        .iter()
        .zip(&ctx.requests)
        .zip(&selected.solution.slots)
        .map(|((r, w), &slot)| CommittedAssignment {
            request_id: r.request_id,
            terminal: r.terminal,
            container_id: r.container.container_id.clone(),
            commodity: r.container.commodity,
            container_type: r.container.container_type,
            requested_slot: w.requested_slot,
            assigned_slot: slot,
            planning_cost_requested: w.planning_cost[w.requested_slot],
            planning_cost_assigned: w.planning_cost[slot],
        })
        .collect();
    let committed = CommittedWindow {
        planning_hour: t_p,
        lanes: selected.solution.lanes.clone(),
        objectives: selected.objectives,
        identity: front.identity.objectives,
        front_size: front.members.len(),
        evaluations: front.history.last().map_or(0, |h| h.evaluations),
        assignments,
    };
    let mut next = state.clone();
    next.eta = update_eta(&state.eta, &committed.moves());
    next.lanes = selected.solution.lanes.clone();
    next.pending.remove(&t_p);
    next.next_request_id = plan.next_request_id;
    next.committed.push(committed);
    Ok((next, selected))
}

/// One window under the planner's policy.
pub fn run_planning_window(
    state: &PlanningState,
    t_p: u32,
    planner: &DayPlanner,
) -> Result<(PlanningState, ParetoFront, FrontMember), OrchestratorError> {
    let plan = plan_window(state, t_p, planner)?;
    let (next, selected) = commit_window(state, &plan, Choice::Policy(planner.policy))?;
    Ok((next, plan.front, selected))
}

/// Recomputes expected arrivals from the committed-assignment log.
pub fn replay_eta(initial: &[Vec<f64>], log: &[CommittedWindow]) -> Vec<Vec<f64>> {
    log.iter().fold(initial.to_vec(), |eta, w| update_eta(&eta, &w.moves()))
}

/// Per-slot costs of one version of the day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayOutcome {
    pub scenario_hash: String,
    pub seed: u64,
    pub transport_cost: f64,
    pub terminal_names: Vec<String>,
    pub eta: Vec<Vec<f64>>,
    pub lanes: Vec<Vec<u32>>,
    pub wait_hours: Vec<Vec<f64>>,
    pub waiting_eur: Vec<Vec<f64>>,
    pub crane_eur: Vec<Vec<f64>>,
    pub corridors: Vec<String>,
    pub traffic_eur: Vec<f64>,
    pub committed: Vec<CommittedWindow>,
}

impl DayOutcome {
    pub fn evaluate(
        planner: &DayPlanner,
        eta: Vec<Vec<f64>>,
        lanes: Vec<Vec<u32>>,
        committed: Vec<CommittedWindow>,
    ) -> Result<Self, OrchestratorError> {
        let s = &planner.scenario;
        let mut wait_hours = Vec::new();
        let mut waiting_eur = Vec::new();
        let mut crane_eur = Vec::new();
        for (k, t) in planner.terminals.iter().enumerate() {
            wait_hours.push(
                eta[k]
                    .iter()
                    .zip(&lanes[k])
                    .map(|(&n, &l)| queue_stats_or_penalty(n, t.service_rate, l, 1.0).wait_hours)
                    .collect(),
            );
            waiting_eur.push(slot_waiting_costs(&eta[k], &lanes[k], t.service_rate, 1.0, s.costs.idle_cost));
            crane_eur.push(lanes[k].iter().map(|&l| t.crane_cost * l as f64).collect());
        }
        let graph = &s.network.graph;
        let mut traffic_eur = vec![0.0; graph.corridors.len()];
        if let Some(shared) = &planner.traffic {
            let loss = shared.loss(&eta)?;
            for row in &loss {
                for (i, v) in row.iter().enumerate() {
                    traffic_eur[graph.nodes[i].corridor] += v;
                }
            }
        }
        Ok(Self {
            scenario_hash: planner.scenario_hash.clone(),
            seed: planner.seed,
            transport_cost: s.costs.transport_cost,
            terminal_names: planner.terminals.iter().map(|t| t.name.clone()).collect(),
            eta,
            lanes,
            wait_hours,
            waiting_eur,
            crane_eur,
            corridors: graph.corridors.clone(),
            traffic_eur,
            committed,
        })
    }

    pub fn costs(&self) -> CostVector {
        let z1 = self
            .committed
            .iter()
            .flat_map(|w| &w.assignments)
            .map(|a| a.planning_cost_assigned)
            .sum();
        CostVector {
            z1_disutility: z1,
            z2_waiting_eur: self.waiting_eur.iter().flatten().sum(),
            z3_crane_eur: self.crane_eur.iter().flatten().sum(),
            z4_traffic_eur: self.traffic_eur.iter().sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedValue {
    pub name: String,
    pub value: f64,
}

fn named(names: &[String], values: impl IntoIterator<Item = f64>) -> Vec<NamedValue> {
    names
        .iter()
        .zip(values)
        .map(|(n, v)| NamedValue {
            name: n.clone(),
            value: v,
        })
        .collect()
}

/// Before and after values of one terminal slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRow {
    pub terminal: String,
    pub slot: usize,
    pub base_arrivals: f64,
    pub optimized_arrivals: f64,
    pub base_lanes: u32,
    pub optimized_lanes: u32,
    pub base_wait_hours: f64,
    pub optimized_wait_hours: f64,
    pub base_waiting_eur: f64,
    pub optimized_waiting_eur: f64,
}

/// Shares of shifted requests in percent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ShiftBreakdown {
    pub shifted: usize,
    pub by_commodity: BTreeMap<String, f64>,
    pub by_container_type: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Computation {
    pub windows: usize,
    pub evaluations: usize,
}

/// Cost and benefit per stakeholder of the optimized day against the base day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayReport {
    pub scenario_hash: String,
    pub seed: u64,
    pub version: String,
    /// Δz3 per terminal, euros.
    pub terminal_gain_eur: Vec<NamedValue>,
    /// Δz2, euros.
    pub trucking_gain_eur: f64,
    /// Δz4 per corridor, euros.
    pub traffic_gain_eur: Vec<NamedValue>,
    pub total_gain_eur: f64,
    /// Percent of the total gain per stakeholder group.
    pub gain_share_pct: Vec<NamedValue>,
    /// Planning cost of the shifted requests at their new slots (unitless).
    pub carrier_disutility: f64,
    pub requests: usize,
    pub rescheduled: usize,
    pub rescheduled_share: f64,
    pub productivity_hours: f64,
    pub base_costs: CostVector,
    pub optimized_costs: CostVector,
    pub computation: Computation,
    pub slots: Vec<SlotRow>,
    pub shifts: ShiftBreakdown,
}

impl DayReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn assignment_map(o: &DayOutcome) -> BTreeMap<u64, &CommittedAssignment> {
    o.committed
        .iter()
        .flat_map(|w| &w.assignments)
        .map(|a| (a.request_id, a))
        .collect()
}

/// Stakeholder gains of `optimized` over `base`: terminals gain lane cost,
/// trucking companies gain waiting cost, road users gain traffic loss per
/// corridor. A request is rescheduled when its slot differs between the runs.
pub fn stakeholder_report(base: &DayOutcome, optimized: &DayOutcome) -> Result<DayReport, OrchestratorError> {
    if base.scenario_hash != optimized.scenario_hash || base.seed != optimized.seed {
        return Err(OrchestratorError::Mismatch("scenario hash or seed differ".into()));
    }
    if base.eta.len() != optimized.eta.len() || base.corridors != optimized.corridors {
        return Err(OrchestratorError::Mismatch("terminal or corridor layout differs".into()));
    }
    let mut slots = Vec::new();
    for k in 0..base.eta.len() {
        for t in 0..base.eta[k].len() {
            slots.push(SlotRow {
                terminal: base.terminal_names[k].clone(),
                slot: t,
                base_arrivals: base.eta[k][t],
                optimized_arrivals: optimized.eta[k][t],
                base_lanes: base.lanes[k][t],
                optimized_lanes: optimized.lanes[k][t],
                base_wait_hours: base.wait_hours[k][t],
                optimized_wait_hours: optimized.wait_hours[k][t],
                base_waiting_eur: base.waiting_eur[k][t],
                optimized_waiting_eur: optimized.waiting_eur[k][t],
            });
        }
    }
    let terminal_gain: Vec<f64> = (0..base.eta.len())
        .map(|k| {
            base.crane_eur[k]
                .iter()
                .zip(&optimized.crane_eur[k])
                .map(|(a, b)| a - b)
                .sum()
        })
        .collect();
    let trucking: f64 = slots.iter().map(|r| r.base_waiting_eur - r.optimized_waiting_eur).sum();
    let traffic: Vec<f64> = base
        .traffic_eur
        .iter()
        .zip(&optimized.traffic_eur)
        .map(|(a, b)| a - b)
        .collect();
    let groups = [terminal_gain.iter().sum::<f64>(), trucking, traffic.iter().sum::<f64>()];
    let total: f64 = groups.iter().sum();
    let shares = groups.map(|g| if total != 0.0 { 100.0 * g / total } else { 0.0 });

    let before = assignment_map(base);
    let mut shifted = Vec::new();
    let mut requests = 0;
    for w in &optimized.committed {
        for a in &w.assignments {
            requests += 1;
            let base_slot = before.get(&a.request_id).map_or(a.requested_slot, |b| b.assigned_slot);
            if a.assigned_slot != base_slot {
                shifted.push(a.clone());
            }
        }
    }
    let evaluations = optimized.committed.iter().map(|w| w.evaluations).sum();
    Ok(DayReport {
        scenario_hash: optimized.scenario_hash.clone(),
        seed: optimized.seed,
        version: env!("CARGO_PKG_VERSION").into(),
        terminal_gain_eur: named(&base.terminal_names, terminal_gain.iter().copied()),
        trucking_gain_eur: trucking,
        traffic_gain_eur: named(&base.corridors, traffic.iter().copied()),
        total_gain_eur: total,
        gain_share_pct: named(
            &["terminals".to_string(), "trucking".to_string(), "traffic".to_string()],
            shares,
        ),
        carrier_disutility: shifted.iter().map(|a| a.planning_cost_assigned).sum(),
        requests,
        rescheduled: shifted.len(),
        rescheduled_share: if requests > 0 { shifted.len() as f64 / requests as f64 } else { 0.0 },
        productivity_hours: trucking / optimized.transport_cost,
        base_costs: base.costs(),
        optimized_costs: optimized.costs(),
        computation: Computation {
            windows: optimized.committed.len(),
            evaluations,
        },
        slots,
        shifts: breakdown(&shifted),
    })
}

fn breakdown(shifted: &[CommittedAssignment]) -> ShiftBreakdown {
    let mut out = ShiftBreakdown {
        shifted: shifted.len(),
        ..ShiftBreakdown::default()
    };
    if shifted.is_empty() {
        return out;
    }
    let pct = 100.0 / shifted.len() as f64;
    for a in shifted {
        *out.by_commodity.entry(format!("{:?}", a.commodity)).or_default() += pct;
        *out.by_container_type.entry(format!("{:?}", a.container_type)).or_default() += pct;
    }
    out
}

/// Shares of shifted requests by commodity and container type over the
/// committed windows.
pub fn shift_breakdown(committed: &[CommittedWindow]) -> ShiftBreakdown {
    let shifted: Vec<CommittedAssignment> = committed
        .iter()
        .flat_map(|w| &w.assignments)
        .filter(|a| a.assigned_slot != a.requested_slot)
        .cloned()
        .collect();
    breakdown(&shifted)
}

/// One point of the terminal gain versus carrier disutility frontier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    /// Lane cost saved against the window's unchanged plan, euros.
    pub terminal_gain_eur: f64,
    /// Added planning cost against the unchanged plan (unitless).
    pub carrier_disutility: f64,
}

/// Front members with a positive terminal gain, reduced to the efficient
/// frontier of gain against disutility and sorted by gain.
pub fn pareto_tradeoff_curve(fronts: &[ParetoFront]) -> Vec<TradeoffPoint> {
    let mut pts: Vec<TradeoffPoint> = fronts
        .iter()
        .flat_map(|f| {
            let base = f.identity.objectives;
            f.members.iter().filter(|m| m.feasible).map(move |m| TradeoffPoint {
                terminal_gain_eur: base.z3_crane_eur - m.objectives.z3_crane_eur,
                carrier_disutility: m.objectives.z1_disutility - base.z1_disutility,
            })
        })
        .filter(|p| p.terminal_gain_eur > 0.0)
        .collect();
    pts.sort_by(|a, b| {
        b.terminal_gain_eur
            .total_cmp(&a.terminal_gain_eur)
            .then(a.carrier_disutility.total_cmp(&b.carrier_disutility))
    });
    let mut best = f64::INFINITY;
    let mut curve: Vec<TradeoffPoint> = pts
        .into_iter()
        .filter(|p| {
            let keep = p.carrier_disutility < best;
            best = best.min(p.carrier_disutility);
            keep
        })
        .collect();
    curve.reverse();
    curve
}

/// A planning window's front, kept for export.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowFront {
    pub hour: u32,
    pub front: ParetoFront,
    pub selected: FrontMember,
}

/// Everything a day run produces.
#[derive(Debug, Clone)]
pub struct DayRun {
    pub report: DayReport,
    pub base: DayOutcome,
    pub optimized: DayOutcome,
    pub initial_eta: Vec<Vec<f64>>,
    pub state: PlanningState,
    pub fronts: Vec<WindowFront>,
}

/// One simulated working day: hourly planning windows over the working
/// hours with the maximum-monetary-gain policy, compared with the base day
/// where every request keeps its slot and lanes stay at the base plan.
pub fn run_day(scenario: &Scenario, seed: u64) -> Result<DayRun, OrchestratorError> {
    run_day_with(&DayPlanner::new(scenario, seed, SelectionPolicy::MaxMonetaryGain)?)
}

pub fn run_day_with(planner: &DayPlanner) -> Result<DayRun, OrchestratorError> {
    let (open, close) = planner.scenario.calendar.working_hours;
    let mut state = planner.initial_state()?;
    let mut fronts = Vec::new();
    for hour in open..close {
        let (next, front, selected) = run_planning_window(&state, hour, planner)?;
        state = next;
        fronts.push(WindowFront { hour, front, selected });
    }
    finish_day(planner, state, fronts)
}

/// Base and optimized outcomes of a day whose windows are all committed.
pub fn finish_day(
    planner: &DayPlanner,
    state: PlanningState,
    fronts: Vec<WindowFront>,
) -> Result<DayRun, OrchestratorError> {
    let initial_eta = planner.initial_eta();
    let base_log: Vec<CommittedWindow> = state
        .committed
        .iter()
        .map(|w| CommittedWindow {
            assignments: w
                .assignments
                .iter()
                .map(|a| CommittedAssignment {
                    assigned_slot: a.requested_slot,
                    planning_cost_assigned: a.planning_cost_requested,
                    ..a.clone()
                })
                .collect(),
            lanes: planner.base_lanes.clone(),
            objectives: w.identity,
            ..w.clone()
        })
        .collect();
    let base = DayOutcome::evaluate(planner, initial_eta.clone(), planner.base_lanes.clone(), base_log)?;
    let optimized = DayOutcome::evaluate(planner, state.eta.clone(), state.lanes.clone(), state.committed.clone())?;
    let report = stakeholder_report(&base, &optimized)?;
    Ok(DayRun {
        report,
        base,
        optimized,
        initial_eta,
        state,
        fronts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios;

    fn member(z: [f64; 4]) -> FrontMember {
        FrontMember {
            solution: crate::optimizer::Solution {
                slots: vec![],
                lanes: vec![],
            },
            objectives: CostVector::from_array(z),
            feasible: true,
            violations: 0,
            shifts: 0,
        }
    }

    fn assignment(id: u64, commodity: Commodity, container_type: ContainerType, from: usize, to: usize) -> CommittedAssignment {
        CommittedAssignment {
            request_id: id,
            terminal: 0,
            container_id: format!("C{id}"),
            commodity,
            container_type,
            requested_slot: from,
            assigned_slot: to,
            planning_cost_requested: 1.0,
            planning_cost_assigned: 2.0,
        }
    }

    fn window(assignments: Vec<CommittedAssignment>) -> CommittedWindow {
        CommittedWindow {
            planning_hour: 7,
            assignments,
            lanes: vec![],
            objectives: CostVector::default(),
            identity: CostVector::default(),
            front_size: 1,
            evaluations: 0,
        }
    }

    #[test]
    fn tradeoff_examples() {
        let front = |members: Vec<FrontMember>| ParetoFront {
            members,
            identity: member([0.0, 0.0, 1000.0, 0.0]),
            history: vec![],
        };
        let one = pareto_tradeoff_curve(&[front(vec![member([5.0, 0.0, 900.0, 0.0])])]);
        assert_eq!(
            one,
            vec![TradeoffPoint {
                terminal_gain_eur: 100.0,
                carrier_disutility: 5.0
            }]
        );
        assert!(pareto_tradeoff_curve(&[front(vec![member([5.0, 0.0, 1100.0, 0.0])])]).is_empty());
        let many = pareto_tradeoff_curve(&[front(vec![
            member([5.0, 0.0, 900.0, 0.0]),
            member([9.0, 0.0, 950.0, 0.0]),
            member([7.0, 0.0, 700.0, 0.0]),
        ])]);
        assert_eq!(many.len(), 2);
        assert!(many.windows(2).all(|w| w[0].carrier_disutility <= w[1].carrier_disutility));
    }

    #[test]
    fn breakdown_examples() {
        assert_eq!(shift_breakdown(&[]), ShiftBreakdown::default());
        let b = shift_breakdown(&[window(vec![
            assignment(1, Commodity::AGR, ContainerType::GP, 12, 14),
            assignment(2, Commodity::Chem, ContainerType::RE, 12, 12),
        ])]);
        assert_eq!(b.shifted, 1);
        assert_eq!(b.by_commodity["AGR"], 100.0);
        assert_eq!(b.by_container_type["GP"], 100.0);
    }

    #[test]
    fn replay_applies_windows_in_order() {
        let initial = vec![vec![2.0, 1.0, 0.0]];
        let log = [
            window(vec![assignment(1, Commodity::AGR, ContainerType::GP, 0, 2)]),
            window(vec![assignment(2, Commodity::AGR, ContainerType::GP, 1, 2)]),
        ];
        assert_eq!(replay_eta(&initial, &log), vec![vec![1.0, 0.0, 2.0]]);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 7), derive_seed(1, 8));
        assert_ne!(derive_seed(1, 7), derive_seed(2, 7));
        assert_eq!(derive_seed(3, 4), derive_seed(3, 4));
    }

    #[test]
    fn window_without_requests_changes_nothing() {
        let s = scenarios::uncongested_day();
        let planner = DayPlanner::new(&s, 1, SelectionPolicy::MaxMonetaryGain).unwrap();
        let mut state = planner.initial_state().unwrap();
        state.pending.remove(&9);
        let (next, front, selected) = run_planning_window(&state, 9, &planner).unwrap();
        assert_eq!(next, state);
        assert_eq!(front.members.len(), 1);
        assert_eq!(selected.solution, front.identity.solution);
        assert!(run_planning_window(&state, 17, &planner).is_err());
    }

    #[test]
    fn identical_runs_give_a_zero_report() {
        let s = scenarios::uncongested_day();
        let planner = DayPlanner::new(&s, 2, SelectionPolicy::MaxMonetaryGain).unwrap();
        let o = DayOutcome::evaluate(&planner, planner.initial_eta(), planner.base_lanes.clone(), vec![]).unwrap();
        let r = stakeholder_report(&o, &o).unwrap();
        assert_eq!(r.total_gain_eur, 0.0);
        assert_eq!(r.trucking_gain_eur, 0.0);
        assert!(r.terminal_gain_eur.iter().chain(&r.traffic_gain_eur).all(|g| g.value == 0.0));
        assert_eq!(r.rescheduled, 0);
        let mut other = o.clone();
        other.seed = 3;
        assert!(matches!(stakeholder_report(&o, &other), Err(OrchestratorError::Mismatch(_))));
    }

    #[test]
    fn productivity_is_trucking_gain_over_transport_cost() {
        let s = scenarios::uncongested_day();
        let planner = DayPlanner::new(&s, 2, SelectionPolicy::MaxMonetaryGain).unwrap();
        let base = DayOutcome::evaluate(&planner, planner.initial_eta(), planner.base_lanes.clone(), vec![]).unwrap();
        let mut opt = base.clone();
        opt.waiting_eur[0][12] -= 1240.0;
        let r = stakeholder_report(&base, &opt).unwrap();
        assert!((r.trucking_gain_eur - 1240.0).abs() < 1e-9);
        assert!((r.productivity_hours - 20.0).abs() < 1e-9);
        let shares: f64 = r.gain_share_pct.iter().map(|s| s.value).sum();
        assert!((shares - 100.0).abs() < 1e-9);
    }
}
