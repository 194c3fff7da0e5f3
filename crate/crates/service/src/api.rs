//! HTTP service: asynchronous day runs, their fronts and interactive
//! selection. Jobs of one scenario run one after another in submission
//! order; different scenarios run in parallel.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use tsms_core::domain::{CostVector, Scenario};
use tsms_core::optimizer::{SelectionPolicy, TrafficResponses};
use tsms_core::orchestrator::{
    commit_window, finish_day, fit_traffic, plan_window, plan_window_observed, pareto_tradeoff_curve, scenario_hash, traffic_seed, Choice,
    CommittedWindow, DayPlanner, DayReport, DayRun, PlanningState, TradeoffPoint, WindowFront, WindowPlan,
};

use crate::artifacts::{write_day, ArtifactDir};
use crate::{check_scenario, load_scenario};

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", message)
    }

    fn not_found(id: u64) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("no run with id {id}"))
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "code": self.code, "message": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    payload.map(|Json(v)| v).map_err(|e| ApiError::invalid(e.body_text()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

/// Finished planning windows plus the GA generation inside the current one.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub windows_done: usize,
    pub windows_total: usize,
    /// GA generation of the window being searched.
    pub generation: usize,
    pub generations_total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobHandle {
    pub id: u64,
    pub scenario: String,
    pub scenario_hash: String,
    pub seed: u64,
    pub policy: String,
    pub alpha: f64,
    pub status: JobStatus,
    pub progress: Progress,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parent: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Everything needed to revisit a finished day: each window's plan and the
/// state it was planned from.
struct DayData {
    planner: DayPlanner,
    states: Vec<PlanningState>,
    plans: Vec<WindowPlan>,
    run: DayRun,
}

struct Job {
    handle: JobHandle,
    scenario: Scenario,
    data: Option<Arc<DayData>>,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    scenario_dir: Option<PathBuf>,
    data_dir: Option<PathBuf>,
    jobs: Mutex<BTreeMap<u64, Job>>,
    /// One FIFO lock per scenario hash.
    queues: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
    /// Fitted traffic models keyed by everything the fit depends on.
    traffic: Mutex<HashMap<String, Arc<TrafficResponses>>>,
}

impl AppState {
    pub fn new(scenario_dir: Option<PathBuf>, data_dir: Option<PathBuf>) -> Self {
        Self {
            inner: Arc::new(Inner {
                scenario_dir,
                data_dir,
                jobs: Mutex::new(BTreeMap::new()),
                queues: Mutex::new(HashMap::new()),
                traffic: Mutex::new(HashMap::new()),
            }),
        }
    }

    fn resolve_scenario(&self, v: &Value) -> ApiResult<(String, Scenario)> {
        match v {
            Value::String(name) => {
                if name.contains(['/', '\\']) || name.starts_with('.') {
                    return Err(ApiError::invalid(format!("bad scenario name {name:?}")));
                }
                let arg = match &self.inner.scenario_dir {
                    Some(dir) if dir.join(format!("{name}.json")).is_file() => {
                        dir.join(format!("{name}.json")).display().to_string()
                    }
                    _ => name.clone(),
                };
                let s = load_scenario(&arg).map_err(|e| ApiError::invalid(format!("{e:#}")))?;
                Ok((name.clone(), s))
            }
            Value::Object(_) => {
                let s: Scenario =
                    serde_json::from_value(v.clone()).map_err(|e| ApiError::invalid(format!("scenario: {e}")))?;
                check_scenario(&s).map_err(|e| ApiError::invalid(format!("{e:#}")))?;
                Ok((s.name.clone(), s))
            }
            _ => Err(ApiError::invalid("scenario must be a name or a scenario object")),
        }
    }

    fn handle(&self, id: u64) -> ApiResult<JobHandle> {
        let jobs = self.inner.jobs.lock().unwrap();
        jobs.get(&id).map(|j| j.handle.clone()).ok_or(ApiError::not_found(id))
    }

    fn update(&self, id: u64, f: impl FnOnce(&mut Job)) {
        if let Some(job) = self.inner.jobs.lock().unwrap().get_mut(&id) {
            f(job);
        }
    }

    fn finished(&self, id: u64) -> ApiResult<Arc<DayData>> {
        let jobs = self.inner.jobs.lock().unwrap();
        let job = jobs.get(&id).ok_or(ApiError::not_found(id))?;
        match (&job.data, job.handle.status) {
            (Some(d), JobStatus::Done) => Ok(d.clone()),
            (_, JobStatus::Failed) => Err(ApiError::new(
                StatusCode::CONFLICT,
                "run_failed",
                format!("run {id} failed: {}", job.handle.error.as_deref().unwrap_or("unknown error")),
            )),
            _ => Err(ApiError::new(
                StatusCode::CONFLICT,
                "not_finished",
                format!("run {id} is {:?}", job.handle.status).to_lowercase(),
            )),
        }
    }

    fn queue(&self, hash: &str) -> Arc<tokio::sync::Mutex<()>> {
        self.inner.queues.lock().unwrap().entry(hash.to_string()).or_default().clone()
    }

    /// Keeps jobs of a scenario queued until the guard drops. A job already
    /// running finishes first.
    pub async fn hold(&self, scenario_hash: &str) -> tokio::sync::OwnedMutexGuard<()> {
        self.queue(scenario_hash).lock_owned().await
    }

    fn traffic(&self, s: &Scenario, seed: u64) -> anyhow::Result<Arc<TrafficResponses>> {
        let key = serde_json::to_string(&(
            &s.network,
            &s.terminals,
            s.costs.vot_passenger,
            s.costs.vot_truck,
            &s.calendar,
            seed,
        ))?;
        if let Some(t) = self.inner.traffic.lock().unwrap().get(&key) {
            return Ok(t.clone());
        }
        let fitted = Arc::new(fit_traffic(s, traffic_seed(seed))?);
        self.inner.traffic.lock().unwrap().insert(key, fitted.clone());
        Ok(fitted)
    }

    fn submit(&self, name: String, scenario: Scenario, seed: u64, policy: SelectionPolicy, parent: Option<u64>) -> JobHandle {
        let hash = scenario_hash(&scenario);
        let (open, close) = scenario.calendar.working_hours;
        let mut jobs = self.inner.jobs.lock().unwrap();
        let id = jobs.keys().next_back().map_or(1, |k| k + 1);
        let handle = JobHandle {
            id,
            scenario: name,
            scenario_hash: hash.clone(),
            seed,
            policy: policy_name(policy),
            alpha: scenario.costs.alpha,
            status: JobStatus::Queued,
            progress: Progress {
                windows_done: 0,
                windows_total: close.saturating_sub(open) as usize,
                generation: 0,
                generations_total: scenario.ga.generations,
            },
            parent,
            error: None,
        };
        jobs.insert(
            id,
            Job {
                handle: handle.clone(),
                scenario: scenario.clone(),
                data: None,
            },
        );
        drop(jobs);
        let queue = self.queue(&hash);
        let state = self.clone();
        tokio::spawn(async move {
            let _turn = queue.lock_owned().await;
            state.update(id, |j| j.handle.status = JobStatus::Running);
            let worker = state.clone();
            let result = tokio::task::spawn_blocking(move || worker.compute(id, &scenario, seed, policy)).await;
            let outcome = match result {
                Ok(r) => r,
                Err(e) => Err(anyhow::anyhow!("worker panicked: {e}")),
            };
            match outcome {
                Ok(data) => {
                    if let Err(e) = state.persist(id, &data) {
                        log::warn!("run {id}: could not persist artifacts: {e:#}");
                    }
                    state.update(id, |j| {
                        j.data = Some(Arc::new(data));
                        j.handle.status = JobStatus::Done;
                    });
                }
                Err(e) => state.update(id, |j| {
                    j.handle.status = JobStatus::Failed;
                    j.handle.error = Some(format!("{e:#}"));
                }),
            }
        });
        handle
    }

    fn compute(&self, id: u64, scenario: &Scenario, seed: u64, policy: SelectionPolicy) -> anyhow::Result<DayData> {
        let traffic = self.traffic(scenario, seed)?;
        let planner = DayPlanner::with_traffic(scenario, seed, policy, Some(traffic))?;
        let (open, close) = scenario.calendar.working_hours;
        let mut state = planner.initial_state()?;
        let (mut states, mut plans, mut fronts) = (Vec::new(), Vec::new(), Vec::new());
        for hour in open..close {
            let plan = plan_window_observed(&state, hour, &planner, &mut |g| {
                self.update(id, |j| j.handle.progress.generation = g.generation)
            })?;
            let (next, selected) = commit_window(&state, &plan, Choice::Policy(policy))?;
            fronts.push(WindowFront {
                hour,
                front: plan.front.clone(),
                selected,
            });
            states.push(std::mem::replace(&mut state, next));
            plans.push(plan);
            self.update(id, |j| {
                j.handle.progress.windows_done += 1;
                j.handle.progress.generation = 0;
            });
        }
        let run = finish_day(&planner, state, fronts)?;
        Ok(DayData {
            planner,
            states,
            plans,
            run,
        })
    }

    fn persist(&self, id: u64, data: &DayData) -> anyhow::Result<()> {
        let Some(root) = &self.inner.data_dir else {
            return Ok(());
        };
        let mut out = ArtifactDir::create(&root.join("jobs").join(id.to_string()))?;
        write_day(&mut out, &data.run)?;
        out.json("scenario.json", &data.planner.scenario)?;
        out.finish("serve", Some(data.planner.scenario_hash.clone()), Some(data.planner.seed))?;
        Ok(())
    }
}

/// Unknown and malformed ids are both "not found".
fn parse_id(id: &str) -> ApiResult<u64> {
    id.parse().map_err(|_| ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("no run with id {id}")))
}

fn policy_name(p: SelectionPolicy) -> String {
    match p {
        SelectionPolicy::MaxMonetaryGain => "max_monetary_gain".into(),
        SelectionPolicy::MinZ1 => "min_z1".into(),
        SelectionPolicy::MinZ2 => "min_z2".into(),
        SelectionPolicy::MinZ3 => "min_z3".into(),
        SelectionPolicy::MinZ4 => "min_z4".into(),
        SelectionPolicy::Weighted(w) => format!("weighted{w:?}"),
    }
}

fn parse_policy(p: Option<&str>) -> ApiResult<SelectionPolicy> {
    p.unwrap_or("max_monetary_gain").parse().map_err(ApiError::invalid)
}

fn check_alpha(alpha: f64) -> ApiResult<f64> {
    if alpha.is_finite() && alpha >= 0.0 {
        Ok(alpha)
    } else {
        Err(ApiError::invalid(format!("need alpha >= 0 and finite, got {alpha}")))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRequest {
    /// Scenario name or an inline scenario object.
    pub scenario: Value,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub policy: Option<String>,
    #[serde(default)]
    pub alpha: Option<f64>,
}

async fn create_run(
    State(state): State<AppState>,
    payload: Result<Json<RunRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<JobHandle>)> {
    let req = body(payload)?;
    let (name, mut scenario) = state.resolve_scenario(&req.scenario)?;
    let policy = parse_policy(req.policy.as_deref())?;
    if let Some(a) = req.alpha {
        scenario.costs.alpha = check_alpha(a)?;
    }
    let handle = state.submit(name, scenario, req.seed.unwrap_or(1), policy, None);
    Ok((StatusCode::ACCEPTED, Json(handle)))
}

async fn list_runs(State(state): State<AppState>) -> Json<Vec<JobHandle>> {
    let jobs = state.inner.jobs.lock().unwrap();
    Json(jobs.values().map(|j| j.handle.clone()).collect())
}

async fn get_run(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<JobHandle>> {
    let id = parse_id(&id)?;
    state.handle(id).map(Json)
}

#[derive(Debug, Serialize)]
pub struct MemberView {
    pub index: usize,
    pub objectives: CostVector,
    pub shifts: usize,
    pub feasible: bool,
    pub terminal_gain_eur: f64,
    pub carrier_disutility: f64,
}

#[derive(Debug, Serialize)]
pub struct WindowView {
    pub hour: u32,
    pub requests: usize,
    pub identity: CostVector,
    /// Index of the committed member; absent when the unchanged plan or a
    /// realization with fewer shifts was committed.
    pub selected_index: Option<usize>,
    pub selected: CostVector,
    pub members: Vec<MemberView>,
}

#[derive(Debug, Serialize)]
pub struct FrontView {
    pub id: u64,
    pub crane_cost_eur: f64,
    pub windows: Vec<WindowView>,
}

fn front_view(id: u64, d: &DayData) -> FrontView {
    let windows = d
        .run
        .fronts
        .iter()
        .zip(&d.plans)
        .map(|(f, p)| {
            let base = f.front.identity.objectives;
            WindowView {
                hour: f.hour,
                requests: p.requests.len(),
                identity: base,
                selected_index: f.front.members.iter().position(|m| m.solution == f.selected.solution),
                selected: f.selected.objectives,
                members: f
                    .front
                    .members
                    .iter()
                    .enumerate()
                    .map(|(index, m)| MemberView {
                        index,
                        objectives: m.objectives,
                        shifts: m.shifts,
                        feasible: m.feasible,
                        terminal_gain_eur: base.z3_crane_eur - m.objectives.z3_crane_eur,
                        carrier_disutility: m.objectives.z1_disutility - base.z1_disutility,
                    })
                    .collect(),
            }
        })
        .collect();
    FrontView {
        id,
        crane_cost_eur: d.planner.crane_cost,
        windows,
    }
}

async fn get_front(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<FrontView>> {
    let id = parse_id(&id)?;
    let data = state.finished(id)?;
    let d = &*data;
    Ok(Json(front_view(id, d)))
}

async fn get_tradeoff(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Vec<TradeoffPoint>>> {
    let id = parse_id(&id)?;
    let data = state.finished(id)?;
    let d = &*data;
    let fronts: Vec<_> = d.run.fronts.iter().map(|f| f.front.clone()).collect();
    Ok(Json(pareto_tradeoff_curve(&fronts)))
}

async fn get_report(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<DayReport>> {
    let id = parse_id(&id)?;
    let data = state.finished(id)?;
    let d = &*data;
    Ok(Json(d.run.report.clone()))
}

async fn get_shifts(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let id = parse_id(&id)?;
    let data = state.finished(id)?;
    let d = &*data;
    let r = &d.run.report;
    Ok(Json(json!({
        "requests": r.requests,
        "rescheduled": r.rescheduled,
        "rescheduled_share": r.rescheduled_share,
        "shifts": r.shifts,
    })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectRequest {
    #[serde(default)]
    pub policy: Option<String>,
    #[serde(default)]
    pub solution_index: Option<usize>,
    /// Planning hour of the window; the last window when absent.
    #[serde(default)]
    pub hour: Option<u32>,
}

#[derive(Debug, Serialize)]
pub struct ReportDelta {
    pub total_gain_eur: f64,
    pub trucking_gain_eur: f64,
    pub terminal_gain_eur: f64,
    pub carrier_disutility: f64,
    pub rescheduled: i64,
}

#[derive(Debug, Serialize)]
pub struct SelectResponse {
    pub committed: CommittedWindow,
    pub report: DayReport,
    /// New report minus the run's own report.
    pub delta: ReportDelta,
}

fn delta(old: &DayReport, new: &DayReport) -> ReportDelta {
    let terminal = |r: &DayReport| r.terminal_gain_eur.iter().map(|v| v.value).sum::<f64>();
    ReportDelta {
        total_gain_eur: new.total_gain_eur - old.total_gain_eur,
        trucking_gain_eur: new.trucking_gain_eur - old.trucking_gain_eur,
        terminal_gain_eur: terminal(new) - terminal(old),
        carrier_disutility: new.carrier_disutility - old.carrier_disutility,
        rescheduled: new.rescheduled as i64 - old.rescheduled as i64,
    }
}

/// Commits `choice` in window `w`, then re-plans every later window with the
/// run's policy since the expected arrivals they start from have changed.
/// The finished run itself is left as it was.
fn reselect(d: &DayData, w: usize, choice: Choice) -> ApiResult<(CommittedWindow, DayReport)> {
    let fail = |e: tsms_core::orchestrator::OrchestratorError| ApiError::internal(e.to_string());
    let mut state = d.states[w].clone();
    let mut fronts = d.run.fronts[..w].to_vec();
    let plan = d.plans[w].clone();
    let (next, selected) = commit_window(&state, &plan, choice).map_err(|e| match e {
        tsms_core::orchestrator::OrchestratorError::NoSuchMember { .. } => ApiError::invalid(e.to_string()),
        e => fail(e),
    })?;
    fronts.push(WindowFront {
        hour: plan.hour,
        front: plan.front.clone(),
        selected,
    });
    state = next;
    let committed = state.committed.last().cloned();
    for later in &d.plans[w + 1..] {
        let plan = plan_window(&state, later.hour, &d.planner).map_err(fail)?;
        let (next, selected) = commit_window(&state, &plan, Choice::Policy(d.planner.policy)).map_err(fail)?;
        fronts.push(WindowFront {
            hour: plan.hour,
            front: plan.front.clone(),
            selected,
        });
        state = next;
    }
    let run = finish_day(&d.planner, state, fronts).map_err(fail)?;
    // a window without requests commits nothing
    let committed = committed
        .filter(|c| c.planning_hour == d.plans[w].hour)
        .unwrap_or_else(|| CommittedWindow {
            planning_hour: d.plans[w].hour,
            assignments: Vec::new(),
            lanes: d.states[w].lanes.clone(),
            objectives: d.plans[w].front.identity.objectives,
            identity: d.plans[w].front.identity.objectives,
            front_size: d.plans[w].front.members.len(),
            evaluations: 0,
        });
    Ok((committed, run.report))
}

async fn select(
    State(state): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<SelectRequest>, JsonRejection>,
) -> ApiResult<Json<SelectResponse>> {
    let id = parse_id(&id)?;
    let data = state.finished(id)?;
    let req = body(payload)?;
    let choice = match (&req.policy, req.solution_index) {
        (Some(_), Some(_)) => return Err(ApiError::invalid("give either policy or solution_index, not both")),
        (None, None) => return Err(ApiError::invalid("give policy or solution_index")),
        (Some(p), None) => Choice::Policy(parse_policy(Some(p))?),
        (None, Some(i)) => Choice::Member(i),
    };
    let response = tokio::task::spawn_blocking(move || {
        let d = &*data;
        let w = match req.hour {
            None => d.plans.len() - 1,
            Some(h) => d
                .plans
                .iter()
                .position(|p| p.hour == h)
                .ok_or_else(|| ApiError::invalid(format!("no planning window at hour {h}")))?,
        };
        if let Choice::Member(i) = choice {
            let size = d.plans[w].front.members.len();
            if i >= size {
                return Err(ApiError::invalid(format!(
                    "solution_index {i} out of range, the window has {size} members"
                )));
            }
        }
        let (committed, report) = reselect(d, w, choice)?;
        Ok(SelectResponse {
            committed,
            delta: delta(&d.run.report, &report),
            report,
        })
    })
    .await
    .map_err(|e| ApiError::internal(format!("selection panicked: {e}")))??;
    Ok(Json(response))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaRequest {
    pub alpha: f64,
}

/// Re-runs the day with another crane-priority factor as a new job.
async fn rerun_alpha(
    State(state): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<AlphaRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<JobHandle>)> {
    let id = parse_id(&id)?;
    let (handle, mut scenario) = {
        let jobs = state.inner.jobs.lock().unwrap();
        let job = jobs.get(&id).ok_or(ApiError::not_found(id))?;
        (job.handle.clone(), job.scenario.clone())
    };
    let req = body(payload)?;
    scenario.costs.alpha = check_alpha(req.alpha)?;
    let policy = parse_policy(Some(&handle.policy))?;
    let child = state.submit(handle.scenario, scenario, handle.seed, policy, Some(id));
    Ok((StatusCode::ACCEPTED, Json(child)))
}

async fn spec() -> Json<Value> {
    Json(crate::openapi::document())
}

async fn fallback() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

pub fn router(state: AppState, cors_origin: Option<&str>) -> anyhow::Result<Router> {
    let origin = match cors_origin {
        Some(o) => AllowOrigin::exact(HeaderValue::from_str(o).map_err(|e| crate::invalid(format!("cors origin: {e}")))?),
        None => AllowOrigin::any(),
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers(Any);
    Ok(Router::new()
        .route("/runs", get(list_runs).post(create_run))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/front", get(get_front))
        .route("/runs/{id}/tradeoff", get(get_tradeoff))
        .route("/runs/{id}/report", get(get_report))
        .route("/runs/{id}/shifts", get(get_shifts))
        .route("/runs/{id}/select", post(select))
        .route("/runs/{id}/alpha", post(rerun_alpha))
        .route("/spec", get(spec))
        .fallback(fallback)
        .layer(cors)
        .with_state(state))
}
