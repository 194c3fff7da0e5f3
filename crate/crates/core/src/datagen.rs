//! Synthetic port-community and road-traffic data.

use std::io::Write;

use chrono::{DateTime, Duration, NaiveDate, SecondsFormat, Timelike, Utc};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::choice::{sample_choice, ChoiceModelParams, TourAttributes};
use crate::domain::{
    Commodity, ContainerLength, ContainerRecord, ContainerType, RequestId, SlotRequest, TimeSlot, TimeWindow,
    VesselSize, WeightClass, MIN_LEAD_HOURS,
};
use crate::forecast::DemandHistory;
use crate::traffic::{LinkGraph, LinkState, NetworkConfig, StateGrid, TrafficDay, TrafficError, INTERVALS_PER_SLOT};

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("container pool is empty")]
    EmptyPool,
    #[error("requested {requested} containers but only {available} are eligible")]
    PoolTooSmall { requested: usize, available: usize },
    #[error("planning time {0} is outside working hours")]
    OutsideWorkingHours(DateTime<Utc>),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Vessel calls delivering import containers that leave the terminal by road.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VesselCallProcess {
    pub calls_per_day: f64,
    pub large_share: f64,
    /// Total call size ranges (containers moved), inclusive.
    pub large_call_size: (u32, u32),
    pub small_call_size: (u32, u32),
    /// Share of a call's containers that is picked up by truck.
    pub road_share: f64,
}

impl Default for VesselCallProcess {
    fn default() -> Self {
        Self {
            calls_per_day: 1.2,
            large_share: 0.4,
            large_call_size: (1300, 3000),
            small_call_size: (300, 1250),
            road_share: 0.3,
        }
    }
}

/// Log-normal pickup latency after vessel arrival.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PickupLatencyModel {
    pub mean_minutes: f64,
    pub sigma_log: f64,
}

impl Default for PickupLatencyModel {
    fn default() -> Self {
        Self {
            mean_minutes: 4488.0,
            sigma_log: 0.9,
        }
    }
}

impl PickupLatencyModel {
    pub fn mu_log(&self) -> f64 {
        self.mean_minutes.ln() - self.sigma_log * self.sigma_log / 2.0
    }

    fn distribution(&self) -> Result<LogNormal<f64>, DatagenError> {
        if !(self.sigma_log > 0.0 && self.sigma_log.is_finite()) {
            return Err(DatagenError::InvalidParameter(format!(
                "sigma_log must be > 0, got {}",
                self.sigma_log
            )));
        }
        if !(self.mean_minutes > 0.0 && self.mean_minutes.is_finite()) {
            return Err(DatagenError::InvalidParameter("mean latency must be > 0".into()));
        }
        LogNormal::new(self.mu_log(), self.sigma_log).map_err(|e| DatagenError::InvalidParameter(e.to_string()))
    }
}

/// Category weights of the container attributes, sampled independently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeWeights {
    /// In `Commodity::ALL` order.
    pub commodity: Vec<f64>,
    /// In `ContainerType::ALL` order.
    pub container_type: Vec<f64>,
    pub length_20ft: f64,
    /// In `WeightClass::ALL` order.
    pub weight_class: Vec<f64>,
}

impl Default for AttributeWeights {
    fn default() -> Self {
        Self {
            commodity: vec![0.14, 0.18, 0.12, 0.05, 0.06, 0.05, 0.22, 0.04, 0.04, 0.10],
            container_type: vec![0.74, 0.15, 0.08, 0.03],
            length_20ft: 0.35,
            weight_class: vec![0.55, 0.35, 0.10],
        }
    }
}

/// Share of truck pickups per hour of day: busy afternoons, quiet nights.
pub fn default_pickup_profile() -> Vec<f64> {
    vec![
        0.4, 0.3, 0.3, 0.3, 0.5, 1.5, 3.0, 4.5, 5.0, 5.0, 5.0, 5.5, 5.5, 6.0, 7.0, 9.0, 9.5, 9.0, 6.5,
        4.0, 2.5, 1.5, 1.0, 0.6,
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerGenConfig {
    pub calls: VesselCallProcess,
    pub latency: PickupLatencyModel,
    pub attributes: AttributeWeights,
    /// Relative pickup intensity per hour of day.
    pub pickup_profile: Vec<f64>,
    pub first_day: NaiveDate,
}

impl Default for ContainerGenConfig {
    fn default() -> Self {
        Self {
            calls: VesselCallProcess::default(),
            latency: PickupLatencyModel::default(),
            attributes: AttributeWeights::default(),
            pickup_profile: default_pickup_profile(),
            first_day: NaiveDate::from_ymd_opt(2017, 1, 1).unwrap(),
        }
    }
}

fn weighted(weights: &[f64], what: &str) -> Result<WeightedIndex<f64>, DatagenError> {
    WeightedIndex::new(weights).map_err(|e| DatagenError::InvalidParameter(format!("{what}: {e}")))
}

fn midnight(day: NaiveDate) -> DateTime<Utc> {
    day.and_hms_opt(0, 0, 0).unwrap().and_utc()
}

/// Container history over `days` days of vessel calls. Pickups may fall after
/// the last call day.
pub fn gen_container_history(cfg: &ContainerGenConfig, days: usize, seed: u64) -> Result<Vec<ContainerRecord>, DatagenError> {
    if days == 0 {
        return Err(DatagenError::InvalidParameter("days must be >= 1".into()));
    }
    let latency = cfg.latency.distribution()?;
    let calls = &cfg.calls;
    if !(calls.calls_per_day >= 0.0 && calls.calls_per_day.is_finite()) {
        return Err(DatagenError::InvalidParameter("call rate must be >= 0".into()));
    }
    if !(0.0..=1.0).contains(&calls.large_share) || !(0.0..=1.0).contains(&calls.road_share) {
        return Err(DatagenError::InvalidParameter("shares must lie in [0, 1]".into()));
    }
    if calls.large_call_size.0 > calls.large_call_size.1 || calls.small_call_size.0 > calls.small_call_size.1 {
        return Err(DatagenError::InvalidParameter("call size ranges must be ordered".into()));
    }
    if cfg.pickup_profile.len() != 24 {
        return Err(DatagenError::InvalidParameter("pickup profile needs 24 weights".into()));
    }
    let commodity = weighted(&cfg.attributes.commodity, "commodity weights")?;
    let ctype = weighted(&cfg.attributes.container_type, "container type weights")?;
    let weight = weighted(&cfg.attributes.weight_class, "weight class weights")?;
    let hour = weighted(&cfg.pickup_profile, "pickup profile")?;
    if cfg.attributes.commodity.len() != Commodity::ALL.len()
        || cfg.attributes.container_type.len() != ContainerType::ALL.len()
        || cfg.attributes.weight_class.len() != WeightClass::ALL.len()
    {
        return Err(DatagenError::InvalidParameter("attribute weight vectors have wrong length".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    if calls.calls_per_day == 0.0 {
        return Ok(out);
    }
    let call_count = Poisson::new(calls.calls_per_day).expect("positive rate");
    for d in 0..days {
        let day_start = midnight(cfg.first_day + Duration::days(d as i64));
        let n_calls = call_count.sample(&mut rng) as usize;
        let mut arrivals: Vec<i64> = (0..n_calls).map(|_| rng.random_range(0..24 * 60)).collect();
        arrivals.sort_unstable();
        for minute in arrivals {
            let arrival = day_start + Duration::minutes(minute);
            let large = rng.random::<f64>() < calls.large_share;
            let (lo, hi) = if large { calls.large_call_size } else { calls.small_call_size };
            let size = rng.random_range(lo..=hi);
            let vessel_size = VesselSize::from_call_size(size);
            let road = (size as f64 * calls.road_share).round() as usize;
            for _ in 0..road {
                let target = arrival + Duration::seconds((latency.sample(&mut rng) * 60.0) as i64);
                let pickup_day = target.date_naive();
                let h = hour.sample(&mut rng) as i64;
                let mut pickup = midnight(pickup_day) + Duration::hours(h) + Duration::minutes(rng.random_range(0..60));
                if pickup < arrival + Duration::hours(1) {
                    pickup = arrival + Duration::hours(1) + Duration::minutes(rng.random_range(0..60));
                }
                let length = if rng.random::<f64>() < cfg.attributes.length_20ft {
                    ContainerLength::Ft20
                } else {
                    ContainerLength::Ft40
                };
                out.push(ContainerRecord {
                    container_id: format!("CNT{:07}", out.len() + 1),
                    vessel_arrival: arrival,
                    pickup,
                    container_type: ContainerType::ALL[ctype.sample(&mut rng)],
                    length,
                    weight_class: WeightClass::ALL[weight.sample(&mut rng)],
                    commodity: Commodity::ALL[commodity.sample(&mut rng)],
                    vessel_size,
                });
            }
        }
    }
    Ok(out)
}

/// Containers due for pickup on `day`: `floor(profile[h])` per hour `h` from
/// `first_hour` on, with pickup minutes spread over the hour and vessel
/// arrivals drawn back from the latency model (at least one hour earlier).
pub fn gen_day_pool(
    profile: &[f64],
    day: NaiveDate,
    first_hour: usize,
    attributes: &AttributeWeights,
    latency: &PickupLatencyModel,
    id_prefix: &str,
    seed: u64,
) -> Result<Vec<ContainerRecord>, DatagenError> {
    if profile.len() != 24 || profile.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(DatagenError::InvalidParameter("profile needs 24 values >= 0".into()));
    }
    let lat = latency.distribution()?;
    let commodity = weighted(&attributes.commodity, "commodity weights")?;
    let ctype = weighted(&attributes.container_type, "container type weights")?;
    let weight = weighted(&attributes.weight_class, "weight class weights")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (h, v) in profile.iter().enumerate().skip(first_hour) {
        for _ in 0..v.floor() as usize {
            let pickup = midnight(day) + Duration::hours(h as i64) + Duration::minutes(rng.random_range(0..60));
            let back = Duration::seconds((lat.sample(&mut rng) * 60.0) as i64).max(Duration::hours(1));
            let length = if rng.random::<f64>() < attributes.length_20ft {
                ContainerLength::Ft20
            } else {
                ContainerLength::Ft40
            };
            out.push(ContainerRecord {
                container_id: format!("{id_prefix}{:06}", out.len() + 1),
                vessel_arrival: pickup - back,
                pickup,
                container_type: ContainerType::ALL[ctype.sample(&mut rng)],
                length,
                weight_class: WeightClass::ALL[weight.sample(&mut rng)],
                commodity: Commodity::ALL[commodity.sample(&mut rng)],
                vessel_size: if rng.random::<f64>() < 0.4 {
                    VesselSize::Large
                } else {
                    VesselSize::Small
                },
            });
        }
    }
    Ok(out)
}

fn iso(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

pub fn write_containers_csv<W: Write>(records: &[ContainerRecord], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "container_id",
        "vessel_arrival",
        "pickup",
        "container_type",
        "length",
        "weight_class",
        "commodity",
        "vessel_size",
    ])?;
    for r in records {
        w.serialize((
            &r.container_id,
            iso(&r.vessel_arrival),
            iso(&r.pickup),
            r.container_type,
            r.length,
            r.weight_class,
            r.commodity,
            r.vessel_size,
        ))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_containers_csv<R: std::io::Read>(input: R) -> Result<Vec<ContainerRecord>, csv::Error> {
    csv::Reader::from_reader(input).deserialize().collect()
}

/// Writes a `slot_index,count` profile.
pub fn write_profile_csv<W: Write>(profile: &[f64], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["slot_index", "count"])?;
    for (i, v) in profile.iter().enumerate() {
        w.write_record([i.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_profile_csv<R: std::io::Read>(input: R) -> Result<Vec<f64>, csv::Error> {
    #[derive(Deserialize)]
    struct Row {
        slot_index: usize,
        count: f64,
    }
    let mut rows: Vec<Row> = csv::Reader::from_reader(input).deserialize().collect::<Result<_, _>>()?;
    rows.sort_by_key(|r| r.slot_index);
    Ok(rows.into_iter().map(|r| r.count).collect())
}

/// Hourly container arrivals (at vessel arrival) and truck pickups per day,
/// for `days` days starting at `first_day`.
pub fn demand_history(records: &[ContainerRecord], first_day: NaiveDate, days: usize) -> DemandHistory {
    let mut h = DemandHistory {
        containers: vec![[0.0; 24]; days],
        trucks: vec![[0.0; 24]; days],
    };
    let index = |t: &DateTime<Utc>| {
        let d = (t.date_naive() - first_day).num_days();
        (d >= 0 && (d as usize) < days).then_some((d as usize, t.hour() as usize))
    };
    for r in records {
        if let Some((d, hr)) = index(&r.vessel_arrival) {
            h.containers[d][hr] += 1.0;
        }
        if let Some((d, hr)) = index(&r.pickup) {
            h.trucks[d][hr] += 1.0;
        }
    }
    h
}

/// Containers picked up on `day`.
pub fn containers_due(records: &[ContainerRecord], day: NaiveDate) -> Vec<ContainerRecord> {
    records.iter().filter(|r| r.pickup.date_naive() == day).cloned().collect()
}

/// Hourly delay indicators toward the port and the hinterland, hours per km.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayProfile {
    pub port: Vec<f64>,
    pub hint: Vec<f64>,
}

impl Default for DelayProfile {
    fn default() -> Self {
        let mut port = vec![0.0; 24];
        let mut hint = vec![0.0; 24];
        for h in [7, 8, 16, 17] {
            port[h] = 0.004;
            hint[h] = 0.006;
        }
        for h in [9, 15, 18] {
            port[h] = 0.002;
            hint[h] = 0.003;
        }
        Self { port, hint }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestConfig {
    /// Requests are issued at planning times within `[start, end)` hours.
    pub working_hours: (u32, u32),
    pub delays: DelayProfile,
}

impl Default for RequestConfig {
    fn default() -> Self {
        Self {
            working_hours: (7, 17),
            delays: DelayProfile::default(),
        }
    }
}

/// Monte Carlo slot requests issued at `planning_time`: `count` containers
/// drawn without replacement from the eligible part of the pool, each
/// requesting the hourly slot of its observed pickup. Eligible containers are
/// picked up at least three hours after the planning time.
pub fn draw_requests(
    pool: &[ContainerRecord],
    terminal: usize,
    planning_time: DateTime<Utc>,
    count: usize,
    first_id: RequestId,
    cfg: &RequestConfig,
    seed: u64,
) -> Result<Vec<SlotRequest>, DatagenError> {
    if pool.is_empty() {
        return Err(DatagenError::EmptyPool);
    }
    let (open, close) = cfg.working_hours;
    let h = planning_time.hour();
    if h < open || h >= close {
        return Err(DatagenError::OutsideWorkingHours(planning_time));
    }
    let slot_of = |r: &ContainerRecord| {
        let day = r.pickup.date_naive();
        TimeSlot::hourly(day, r.pickup.hour() as usize)
    };
    let eligible: Vec<&ContainerRecord> = pool
        .iter()
        .filter(|r| slot_of(r).start - planning_time >= Duration::hours(MIN_LEAD_HOURS))
        .collect();
    if count > eligible.len() {
        return Err(DatagenError::PoolTooSmall {
            requested: count,
            available: eligible.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = sample(&mut rng, eligible.len(), count).into_vec();
    picked.sort_unstable();
    Ok(picked
        .into_iter()
        .enumerate()
        .map(|(k, i)| {
            let container = eligible[i].clone();
            let slot = slot_of(&container);
            let hour = slot.hour() as usize;
            let attributes = TourAttributes::from_container(&container, cfg.delays.port[hour], cfg.delays.hint[hour]);
            SlotRequest {
                request_id: first_id + k as RequestId,
                terminal,
                container,
                requested_slot: slot,
                planning_time,
                attributes,
            }
        })
        .collect())
}

/// Random tour attributes with the configured marginals and a random pickup hour.
pub fn random_attributes<R: Rng>(weights: &AttributeWeights, delays: &DelayProfile, rng: &mut R) -> TourAttributes {
    let commodity = WeightedIndex::new(&weights.commodity).expect("valid weights");
    let ctype = WeightedIndex::new(&weights.container_type).expect("valid weights");
    let wclass = WeightedIndex::new(&weights.weight_class).expect("valid weights");
    let hour = rng.random_range(0..24);
    let same_day = rng.random::<f64>() < 0.25;
    let vessel_window = if same_day {
        [None, Some(TimeWindow::Morning), Some(TimeWindow::Midday), Some(TimeWindow::Afternoon)][rng.random_range(0..4)]
    } else {
        None
    };
    TourAttributes {
        commodity: Commodity::ALL[commodity.sample(rng)],
        container_type: ContainerType::ALL[ctype.sample(rng)],
        length: if rng.random::<f64>() < weights.length_20ft {
            ContainerLength::Ft20
        } else {
            ContainerLength::Ft40
        },
        weight_class: WeightClass::ALL[wclass.sample(rng)],
        vessel_window,
        same_day,
        delay_port: delays.port[hour] * rng.random_range(0.5..1.5),
        delay_hint: delays.hint[hour] * rng.random_range(0.5..1.5),
    }
}

/// Choice observations simulated from a known choice model.
pub fn gen_choice_observations(
    params: &ChoiceModelParams,
    n: usize,
    weights: &AttributeWeights,
    seed: u64,
) -> Vec<(TourAttributes, TimeWindow)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let delays = DelayProfile::default();
    (0..n)
        .map(|_| {
            let a = random_attributes(weights, &delays, &mut rng);
            let w = sample_choice(&a, params, &mut rng);
            (a, w)
        })
        .collect()
}

/// Downstream flow of unit injections: node flow equals its injection plus
/// the weighted share of every upstream node's flow.
pub fn route_flows(graph: &LinkGraph, injection: &[f64]) -> Result<Vec<f64>, TrafficError> {
    let n = graph.n_nodes();
    let mut out_weight = vec![0.0; n];
    let mut indegree = vec![0usize; n];
    for e in graph.edges.iter().filter(|e| e.weight > 0.0) {
        out_weight[e.from] += e.weight;
        indegree[e.to] += 1;
    }
    let mut flow = injection.to_vec();
    let mut ready: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut done = 0;
    while let Some(u) = ready.pop() {
        done += 1;
        for e in graph.edges.iter().filter(|e| e.from == u && e.weight > 0.0) {
            flow[e.to] += flow[u] * e.weight / out_weight[u];
            indegree[e.to] -= 1;
            if indegree[e.to] == 0 {
                ready.push(e.to);
            }
        }
    }
    if done < n {
        let stuck = (0..n).find(|&i| indegree[i] > 0).unwrap_or(0);
        return Err(TrafficError::Cyclic(stuck));
    }
    Ok(flow)
}

/// Day-to-day variation of the traffic history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficNoise {
    /// Log-sd of the daily passenger level.
    pub passenger_day: f64,
    /// Log-sd of the daily port truck level.
    pub truck_day: f64,
    /// Relative sd of each interval's flows.
    pub interval: f64,
}

impl Default for TrafficNoise {
    fn default() -> Self {
        Self {
            passenger_day: 0.05,
            truck_day: 0.2,
            interval: 0.05,
        }
    }
}

impl TrafficNoise {
    pub fn none() -> Self {
        Self {
            passenger_day: 0.0,
            truck_day: 0.0,
            interval: 0.0,
        }
    }
}

/// States of one day from the speed-flow relation. `port_trucks[t][c]` is
/// centroid truck demand per 15-minute interval; it reaches the network one
/// interval later. Passenger and background truck flows enter every node.
pub fn traffic_day(
    network: &NetworkConfig,
    port_trucks: &[Vec<f64>],
    passenger_scale: &[f64],
) -> Result<TrafficDay, TrafficError> {
    let graph = &network.graph;
    let n = graph.n_nodes();
    let intervals = port_trucks.len();
    let mut grid = StateGrid::filled(n, intervals, LinkState::default());
    let mut injection = vec![0.0; n];
    for t in 0..intervals {
        let hour = (t / INTERVALS_PER_SLOT).min(23);
        let port = if t == 0 {
            vec![0.0; n]
        } else {
            graph.centroid_injection(&port_trucks[t - 1], &mut injection);
            route_flows(graph, &injection)?
        };
        let qp = network.passenger_profile[hour] * passenger_scale[t];
        for i in 0..n {
            let qt = network.background_trucks[hour] + port[i];
            let rate = network.speed_flow.pce_rate(qp, qt, 0.25);
            let speed = network.speed_flow.speed(rate).ok_or_else(|| TrafficError::OverCapacity {
                link: graph.nodes[i].id.clone(),
                flow: rate,
                capacity: network.speed_flow.capacity,
            })?;
            *grid.get_mut(t, i) = LinkState {
                q_passenger: qp,
                q_truck: qt,
                speed_kmh: speed,
            };
        }
    }
    Ok(TrafficDay {
        states: grid,
        centroid_demand: port_trucks.to_vec(),
    })
}

/// `days` days of synthetic loop-detector states around a mean port truck
/// demand `port_trucks[t][c]` (trucks per 15-minute interval).
pub fn gen_traffic_history(
    network: &NetworkConfig,
    port_trucks: &[Vec<f64>],
    days: usize,
    noise: &TrafficNoise,
    seed: u64,
) -> Result<Vec<TrafficDay>, TrafficError> {
    network.graph.check()?;
    if port_trucks.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(TrafficError::NegativeDemand { slot: 0, value: -1.0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let intervals = port_trucks.len();
    (0..days)
        .map(|_| {
            let p_day = (noise.passenger_day * unit.sample(&mut rng)).exp();
            let t_day = (noise.truck_day * unit.sample(&mut rng)).exp();
            let scale: Vec<f64> = (0..intervals)
                .map(|_| (p_day * (1.0 + noise.interval * unit.sample(&mut rng))).max(0.0))
                .collect();
            let trucks: Vec<Vec<f64>> = port_trucks
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|v| (v * t_day * (1.0 + noise.interval * unit.sample(&mut rng))).max(0.0))
                        .collect()
                })
                .collect();
            traffic_day(network, &trucks, &scale)
        })
        .collect()
}

/// Writes states as `node_id,timestamp,flow_passenger,flow_truck,speed_kmh`.
pub fn write_traffic_csv<W: Write>(
    graph: &LinkGraph,
    days: &[TrafficDay],
    first_day: NaiveDate,
    out: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["node_id", "timestamp", "flow_passenger", "flow_truck", "speed_kmh"])?;
    for (d, day) in days.iter().enumerate() {
        let start = midnight(first_day + Duration::days(d as i64));
        for t in 0..day.states.n_intervals {
            let ts = iso(&(start + Duration::minutes(15 * t as i64)));
            for (i, node) in graph.nodes.iter().enumerate() {
                let s = day.states.get(t, i);
                w.write_record([
                    node.id.clone(),
                    ts.clone(),
                    format!("{:.3}", s.q_passenger),
                    format!("{:.3}", s.q_truck),
                    format!("{:.3}", s.speed_kmh),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
