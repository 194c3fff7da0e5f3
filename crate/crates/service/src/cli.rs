//! Batch subcommands.

use std::fs::File;
use std::io::BufReader;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::Context;
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use tsms_core::choice::{estimate_mnl, read_observations_csv, write_observations_csv, EstimationSpec};
use tsms_core::datagen::{
    default_pickup_profile, demand_history, gen_choice_observations, gen_container_history, gen_traffic_history,
    read_containers_csv, read_profile_csv, write_containers_csv, write_profile_csv, write_traffic_csv, AttributeWeights,
    ContainerGenConfig, TrafficNoise,
};
use tsms_core::domain::Scenario;
use tsms_core::forecast::{
    build_lookup_window, eval_metrics, ha_baseline, seq2seq_forecast, train_forecaster, ForecastMetrics, TrainConfig,
};
use tsms_core::gate::{arrivals_from_profile, calibrate_gate, des_simulate, CalibrationBounds, CalibrationConfig, ServiceModel};
use tsms_core::optimizer::SelectionPolicy;
use tsms_core::orchestrator::{
    derive_seed, port_truck_departures, run_day_with, scenario_hash, stakeholder_report, traffic_seed, DayOutcome,
    DayPlanner,
};
use tsms_core::traffic::{mape, DayModel, FitReport, ValueOfTime};

use crate::artifacts::{to_json, write_day, ArtifactDir};
use crate::{invalid, load_scenario};

#[derive(Debug, Parser)]
#[command(name = "tsms", version, about = "Truck time-slot management simulator")]
pub struct Cli {
    /// Log filter, e.g. `info` or `tsms_core=debug`.
    #[arg(long, global = true, default_value = "warn")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthetic containers, demand, choices, gate counts and traffic.
    Datagen(DatagenArgs),
    /// Fits gate service rate and lanes to observed hourly counts.
    Calibrate(CalibrateArgs),
    /// Trains the seq2seq demand forecaster and compares it with HA.
    TrainForecast(TrainForecastArgs),
    /// Estimates the time-window choice model.
    EstimateChoice(EstimateChoiceArgs),
    /// Fits the traffic day model of a scenario.
    FitTraffic(FitTrafficArgs),
    /// Simulates one working day with rolling planning windows.
    RunDay(RunDayArgs),
    /// Stakeholder report of two day outcomes.
    Report(ReportArgs),
    /// HTTP service for runs, fronts and selections.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct DatagenArgs {
    /// Scenario file or built-in name; supplies network and terminals.
    #[arg(long, default_value = "congested")]
    pub scenario: String,
    #[arg(long, default_value_t = 365)]
    pub days: usize,
    #[arg(long, default_value_t = 50_000)]
    pub choices: usize,
    /// Days of traffic history.
    #[arg(long, default_value_t = 35)]
    pub traffic_days: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Hourly gate arrivals, one `hour,count` row per slot.
    #[arg(long)]
    pub arrivals: PathBuf,
    /// Hourly gate departures in the same format.
    #[arg(long)]
    pub departures: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub min_lanes: u32,
    #[arg(long, default_value_t = 12)]
    pub max_lanes: u32,
    #[arg(long, default_value_t = 1.0)]
    pub min_rate: f64,
    #[arg(long, default_value_t = 30.0)]
    pub max_rate: f64,
    #[arg(long, default_value_t = 20)]
    pub replications: usize,
    #[arg(long, default_value_t = 2017)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainForecastArgs {
    #[arg(long)]
    pub containers: PathBuf,
    /// Lookup scenario: 1 same day, 2 one day ahead, 3 two days ahead.
    #[arg(long, default_value_t = 1)]
    pub lookup: u8,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SpecKind {
    ConstantsOnly,
    Identified,
}

#[derive(Debug, Args)]
pub struct EstimateChoiceArgs {
    #[arg(long)]
    pub observations: PathBuf,
    #[arg(long, value_enum, default_value = "identified")]
    pub spec: SpecKind,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitTrafficArgs {
    #[arg(long, default_value = "congested")]
    pub scenario: String,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 35)]
    pub days: usize,
    /// Held-out days for the speed check.
    #[arg(long, default_value_t = 5)]
    pub holdout: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunDayArgs {
    #[arg(long)]
    pub scenario: String,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// max_monetary_gain, min_z1, min_z2, min_z3 or min_z4.
    #[arg(long, default_value = "max_monetary_gain")]
    pub policy: String,
    /// Overrides the crane-priority factor.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Base and optimized outcome files written by `run-day`.
    #[arg(long, num_args = 2, value_names = ["BASE", "OPTIMIZED"])]
    pub compare: Vec<PathBuf>,
    /// Writes the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Directory of `<name>.json` scenario files; built-ins are always available.
    #[arg(long)]
    pub scenarios: Option<PathBuf>,
    /// Where finished jobs are persisted, one directory per job id.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Allowed dashboard origin; any origin when absent.
    #[arg(long)]
    pub cors_origin: Option<String>,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Datagen(a) => datagen(&a),
        Command::Calibrate(a) => calibrate(&a),
        Command::TrainForecast(a) => train_forecast(&a),
        Command::EstimateChoice(a) => estimate_choice(&a),
        Command::FitTraffic(a) => fit_traffic(&a),
        Command::RunDay(a) => run_day(&a),
        Command::Report(a) => report(&a),
        Command::Serve(a) => serve(a),
    }
}

fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| invalid(format!("cannot open {}: {e}", path.display())))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    serde_json::from_reader(open(path)?).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct DemandRow {
    date: NaiveDate,
    hour: usize,
    containers: f64,
    trucks: f64,
}

/// Hourly gate counts of the first terminal's pickup pattern, simulated with
/// the gate model so `calibrate` has something to fit.
fn gate_counts(scenario: &Scenario, seed: u64) -> anyhow::Result<(Vec<f64>, Vec<f64>)> {
    let t = &scenario.terminals[0];
    let lanes = t.calibrated_lanes.max(1);
    // keep the day stable under the truncated service model
    let capacity = lanes as f64 / (20.0 / 60.0 + 1.0 / t.service_rate);
    let shape = default_pickup_profile();
    let peak = shape.iter().cloned().fold(0.0, f64::max);
    let rates: Vec<f64> = shape.iter().map(|v| 0.6 * capacity * v / peak).collect();
    let arrivals = arrivals_from_profile(&rates, 1.0, seed);
    let out = des_simulate(&arrivals, lanes, ServiceModel::gate(t.service_rate), 1.0, 24, derive_seed(seed, 1))?;
    let arr: Vec<f64> = out.slot_arrivals.iter().take(24).map(|&v| v as f64).collect();
    let mut dep: Vec<f64> = out.slot_departures.iter().take(24).map(|&v| v as f64).collect();
    let spill: usize = out.slot_departures.iter().skip(24).sum();
    dep[23] += spill as f64;
    Ok((arr, dep))
}

fn datagen(a: &DatagenArgs) -> anyhow::Result<()> {
    let scenario = load_scenario(&a.scenario)?;
    let mut out = ArtifactDir::create(&a.out)?;
    let cfg = ContainerGenConfig::default();
    let records = gen_container_history(&cfg, a.days, derive_seed(a.seed, 1))?;
    let mut buf = Vec::new();
    write_containers_csv(&records, &mut buf)?;
    out.bytes("containers.csv", &buf)?;

    let history = demand_history(&records, cfg.first_day, a.days);
    out.csv(
        "demand.csv",
        history.trucks.iter().zip(&history.containers).enumerate().flat_map(|(d, (t, c))| {
            let date = cfg.first_day + chrono::Duration::days(d as i64);
            (0..24).map(move |h| DemandRow {
                date,
                hour: h,
                containers: c[h],
                trucks: t[h],
            })
        }),
    )?;

    let obs = gen_choice_observations(
        &scenario.choice_model,
        a.choices,
        &AttributeWeights::default(),
        derive_seed(a.seed, 2),
    );
    let mut buf = Vec::new();
    write_observations_csv(&mut buf, &obs)?;
    out.bytes("choices.csv", &buf)?;

    let (arrivals, departures) = gate_counts(&scenario, derive_seed(a.seed, 3))?;
    for (name, profile) in [("gate_arrivals.csv", &arrivals), ("gate_departures.csv", &departures)] {
        let mut buf = Vec::new();
        write_profile_csv(profile, &mut buf)?;
        out.bytes(name, &buf)?;
    }

    let trucks = port_truck_departures(&scenario)?;
    let days = gen_traffic_history(&scenario.network, &trucks, a.traffic_days, &TrafficNoise::default(), traffic_seed(a.seed))?;
    let mut buf = Vec::new();
    write_traffic_csv(&scenario.network.graph, &days, scenario.calendar.operation_day, &mut buf)?;
    out.bytes("traffic.csv", &buf)?;
    out.json("scenario.json", &scenario)?;
    out.finish("datagen", Some(scenario_hash(&scenario)), Some(a.seed))?;
    println!("wrote {} containers, {} choices to {}", records.len(), obs.len(), a.out.display());
    Ok(())
}

fn calibrate(a: &CalibrateArgs) -> anyhow::Result<()> {
    let arrivals = read_profile_csv(open(&a.arrivals)?).map_err(|e| invalid(format!("{}: {e}", a.arrivals.display())))?;
    let departures =
        read_profile_csv(open(&a.departures)?).map_err(|e| invalid(format!("{}: {e}", a.departures.display())))?;
    if arrivals.len() != departures.len() {
        return Err(invalid(format!(
            "{} arrival slots but {} departure slots",
            arrivals.len(),
            departures.len()
        )));
    }
    let bounds = CalibrationBounds {
        min_lanes: a.min_lanes,
        max_lanes: a.max_lanes,
        min_service_rate: a.min_rate,
        max_service_rate: a.max_rate,
    };
    let cfg = CalibrationConfig {
        replications: a.replications,
        seed: a.seed,
        ..CalibrationConfig::default()
    };
    let report = calibrate_gate(&arrivals, &departures, &bounds, &cfg)?;
    let mut out = ArtifactDir::create(&a.out)?;
    out.json("calibration.json", &report)?;
    out.finish("calibrate", None, Some(a.seed))?;
    println!(
        "service rate {:.3}/h with {} lanes (R^2 {:.3}, p {:.3})",
        report.service_rate, report.lanes, report.r_squared, report.p_value
    );
    Ok(())
}

#[derive(Serialize)]
struct ForecastSummary {
    lookup_days: Vec<i64>,
    train_days: usize,
    validation_days: usize,
    test_days: usize,
    best_step: usize,
    seq2seq: ForecastMetrics,
    historical_average: ForecastMetrics,
}

fn train_forecast(a: &TrainForecastArgs) -> anyhow::Result<()> {
    let records = read_containers_csv(open(&a.containers)?).map_err(|e| invalid(format!("{}: {e}", a.containers.display())))?;
    let first = records.iter().map(|r| r.pickup.date_naive()).min().ok_or_else(|| invalid("no containers"))?;
    let last = records.iter().map(|r| r.pickup.date_naive()).max().unwrap_or(first);
    let days = (last - first).num_days() as usize + 1;
    let history = demand_history(&records, first, days);
    let offsets = build_lookup_window(a.lookup).map_err(|e| invalid(e.to_string()))?;
    let start = offsets.iter().map(|o| (-o) as usize).max().unwrap_or(0);
    if days < start + 20 {
        return Err(invalid(format!("{days} days of history is too short for the lookup window")));
    }
    // chronological 75/10/15 split of the usable days
    let usable = days - start;
    let train_end = start + usable * 75 / 100;
    let val_end = start + usable * 85 / 100;
    let train = history.windows(start..train_end, &offsets);
    let val = history.windows(train_end..val_end, &offsets);
    let test = history.windows(val_end..days, &offsets);
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        hidden: a.hidden.unwrap_or(defaults.hidden),
        steps: a.steps.unwrap_or(defaults.steps),
        seed: a.seed.unwrap_or(defaults.seed),
        ..defaults
    };
    let (model, log) = train_forecaster(&train, &val, &cfg)?;
    let (mut pred, mut ha, mut obs) = (Vec::new(), Vec::new(), Vec::new());
    for w in &test {
        pred.extend(seq2seq_forecast(w, &model)?);
        ha.extend(ha_baseline(&history, w.day, &offsets)?);
        obs.extend(w.target.iter().copied());
    }
    let summary = ForecastSummary {
        lookup_days: offsets,
        train_days: train.len(),
        validation_days: val.len(),
        test_days: test.len(),
        best_step: log.best_step,
        seq2seq: eval_metrics(&pred, &obs)?,
        historical_average: eval_metrics(&ha, &obs)?,
    };
    let mut out = ArtifactDir::create(&a.out)?;
    out.bytes("model.json", model.to_json().as_bytes())?;
    let mut buf = Vec::new();
    log.write_csv(&mut buf)?;
    out.bytes("training_log.csv", &buf)?;
    out.json("metrics.json", &summary)?;
    out.finish("train-forecast", None, Some(cfg.seed))?;
    println!(
        "test MAE seq2seq {:.3}, HA {:.3} over {} days",
        summary.seq2seq.mae,
        summary.historical_average.mae,
        summary.test_days
    );
    Ok(())
}

fn estimate_choice(a: &EstimateChoiceArgs) -> anyhow::Result<()> {
    let obs = read_observations_csv(open(&a.observations)?)
        .map_err(|e| invalid(format!("{}: {e}", a.observations.display())))?;
    let spec = match a.spec {
        SpecKind::ConstantsOnly => EstimationSpec::constants_only(),
        SpecKind::Identified => EstimationSpec::identified(),
    };
    let (params, report) = estimate_mnl(&obs, &spec)?;
    let mut out = ArtifactDir::create(&a.out)?;
    out.bytes("choice_model.json", params.to_json().as_bytes())?;
    out.json("estimation.json", &report)?;
    out.finish("estimate-choice", None, None)?;
    println!(
        "{} observations, log-likelihood {:.2}, rho^2 vs constants {:.4}",
        report.sample_size, report.final_log_likelihood, report.rho_squared_constants
    );
    Ok(())
}

#[derive(Serialize)]
struct TrafficFitSummary {
    scenario_hash: String,
    history_days: usize,
    fit: Option<FitReport>,
    holdout_days: usize,
    /// Day-ahead speed MAPE of the mean-day model on held-out days, percent.
    holdout_speed_mape_pct: Option<f64>,
    mean_day_loss_eur: Vec<(String, f64)>,
}

fn fit_traffic(a: &FitTrafficArgs) -> anyhow::Result<()> {
    let s = load_scenario(&a.scenario)?;
    let net = &s.network;
    let trucks = port_truck_departures(&s)?;
    let noise = TrafficNoise::default();
    let history = gen_traffic_history(net, &trucks, a.days, &noise, traffic_seed(a.seed))?;
    let vot = ValueOfTime {
        passenger: s.costs.vot_passenger,
        truck: s.costs.vot_truck,
    };
    let (model, fit) = DayModel::fit(
        &history,
        &net.graph,
        net.propagation_order,
        net.propagator.clone(),
        net.free_flow,
        vot,
    )?;
    let mape_pct = if a.holdout > 0 {
        let held = gen_traffic_history(net, &trucks, a.holdout, &noise, derive_seed(a.seed, 0x4E1D))?;
        let (mut pred, mut obs) = (Vec::new(), Vec::new());
        for day in &held {
            let grid = model.predict(&day.centroid_demand)?;
            pred.extend(grid.cells.iter().map(|c| c.speed_kmh));
            obs.extend(day.states.cells.iter().map(|c| c.speed_kmh));
        }
        Some(mape(&pred, &obs)?.percent)
    } else {
        None
    };
    let mut loss_by_corridor = vec![0.0; net.graph.corridors.len()];
    for row in model.loss(&model.mean_demand)? {
        for (i, v) in row.iter().enumerate() {
            loss_by_corridor[net.graph.nodes[i].corridor] += v;
        }
    }
    let summary = TrafficFitSummary {
        scenario_hash: scenario_hash(&s),
        history_days: a.days,
        fit,
        holdout_days: a.holdout,
        holdout_speed_mape_pct: mape_pct,
        mean_day_loss_eur: net.graph.corridors.iter().cloned().zip(loss_by_corridor).collect(),
    };
    let mut out = ArtifactDir::create(&a.out)?;
    out.json("traffic_fit.json", &summary)?;
    out.finish("fit-traffic", Some(summary.scenario_hash.clone()), Some(a.seed))?;
    match mape_pct {
        Some(m) => println!("fitted on {} days, held-out speed MAPE {m:.2}%", a.days),
        None => println!("fitted on {} days", a.days),
    }
    Ok(())
}

fn run_day(a: &RunDayArgs) -> anyhow::Result<()> {
    let mut scenario = load_scenario(&a.scenario)?;
    let policy: SelectionPolicy = a.policy.parse().map_err(invalid)?;
    if let Some(alpha) = a.alpha {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(invalid(format!("need alpha >= 0, got {alpha}")));
        }
        scenario.costs.alpha = alpha;
    }
    let planner = DayPlanner::new(&scenario, a.seed, policy)?;
    let run = run_day_with(&planner)?;
    let mut out = ArtifactDir::create(&a.out)?;
    write_day(&mut out, &run)?;
    out.json("scenario.json", &scenario)?;
    out.finish("run-day", Some(planner.scenario_hash.clone()), Some(a.seed))?;
    let r = &run.report;
    println!(
        "{}: total gain {:.2} EUR, trucking {:.2} EUR, {} of {} requests rescheduled",
        scenario.name, r.total_gain_eur, r.trucking_gain_eur, r.rescheduled, r.requests
    );
    Ok(())
}

fn report(a: &ReportArgs) -> anyhow::Result<()> {
    let [base, optimized] = a.compare.as_slice() else {
        return Err(invalid("--compare needs a base and an optimized outcome file"));
    };
    let base: DayOutcome = read_json(base)?;
    let optimized: DayOutcome = read_json(optimized)?;
    let report = stakeholder_report(&base, &optimized).map_err(|e| invalid(e.to_string()))?;
    let text = to_json(&report)?;
    match &a.out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn serve(a: ServeArgs) -> anyhow::Result<()> {
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| invalid(format!("bad listen address: {e}")))?;
    if let Some(dir) = &a.scenarios {
        if !dir.is_dir() {
            return Err(invalid(format!("scenario directory not found: {}", dir.display())));
        }
    }
    let state = crate::api::AppState::new(a.scenarios, a.data);
    let app = crate::api::router(state, a.cors_origin.as_deref())?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        log::info!("listening on {addr}");
        println!("listening on http://{addr}");
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
