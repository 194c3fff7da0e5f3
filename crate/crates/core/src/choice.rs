//! Multinomial logit model of carriers' pickup time-window preferences.
//!
//! Night is the base alternative: its systematic utility is fixed at zero and
//! every coefficient belongs to one of the three other windows, except the
//! generic delay coefficients which enter all non-base utilities alike.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    Commodity, ContainerLength, ContainerRecord, ContainerType, TimeWindow, WeightClass,
};

#[derive(Debug, Error)]
pub enum ChoiceError {
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("coefficient `{feature}` is attached to the base alternative")]
    BaseCoefficient { feature: String },
    #[error("no observation chose {0}")]
    MissingAlternative(TimeWindow),
    #[error("attribute `{feature}` perfectly separates {window}")]
    PerfectSeparation { feature: String, window: TimeWindow },
    #[error("no convergence after {0} iterations")]
    NoConvergence(usize),
    #[error("non-finite log-likelihood")]
    NonFinite,
    #[error("no observations")]
    Empty,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Names of the binary and continuous features, following the coefficient
/// labels of the published estimation table.
pub mod feature {
    pub const AGR: &str = "Agr";
    pub const CHEM: &str = "Chem";
    pub const FERT: &str = "Fert";
    pub const FOOD: &str = "Food";
    pub const IRON: &str = "Iron";
    pub const MISS: &str = "Miss";
    pub const ORES: &str = "Ores";
    pub const PETRO: &str = "Petro";
    pub const RAWMIN: &str = "RawMin";
    pub const SOLMIN: &str = "SolMinFu";
    pub const GP: &str = "GP";
    pub const RE: &str = "RE";
    pub const CC: &str = "CC";
    pub const TC: &str = "TC";
    pub const VESSEL_MOR: &str = "Vessel_Mor";
    pub const VESSEL_MID: &str = "Vessel_Mid";
    pub const VESSEL_AFT: &str = "Vessel_Aft";
    pub const EMPTY: &str = "Empty";
    pub const HEAVY: &str = "HeavyWeight";
    pub const LIGHT: &str = "LightWeight";
    pub const LEN_20: &str = "Lenght_20ft";
    pub const LEN_40: &str = "Lenght_40ft";
    pub const DELAY_PORT: &str = "Delay_Port";
    pub const DELAY_HINT: &str = "Delay_Hint";

    pub const ALL: [&str; 24] = [
        AGR, CHEM, FERT, FOOD, IRON, MISS, ORES, PETRO, RAWMIN, SOLMIN, GP, RE, CC, TC,
        VESSEL_MOR, VESSEL_MID, VESSEL_AFT, EMPTY, HEAVY, LIGHT, LEN_20, LEN_40, DELAY_PORT,
        DELAY_HINT,
    ];

    pub fn is_known(name: &str) -> bool {
        ALL.contains(&name)
    }
}

/// Observable attributes of a pickup tour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TourAttributes {
    pub commodity: Commodity,
    pub container_type: ContainerType,
    pub length: ContainerLength,
    pub weight_class: WeightClass,
    /// Vessel arrival window, set only for same-day pickups of vessels
    /// arriving in the morning, midday or afternoon.
    pub vessel_window: Option<TimeWindow>,
    pub same_day: bool,
    /// Delay toward the port at the pickup hour, hours per km.
    pub delay_port: f64,
    /// Delay toward the hinterland at the pickup hour, hours per km.
    pub delay_hint: f64,
}

impl TourAttributes {
    pub fn from_container(c: &ContainerRecord, delay_port: f64, delay_hint: f64) -> Self {
        use chrono::Timelike;
        let same_day = c.vessel_arrival.date_naive() == c.pickup.date_naive();
        let vessel_window = if same_day {
            match TimeWindow::from_hour(c.vessel_arrival.hour()) {
                TimeWindow::Night => None,
                w => Some(w),
            }
        } else {
            None
        };
        Self {
            commodity: c.commodity,
            container_type: c.container_type,
            length: c.length,
            weight_class: c.weight_class,
            vessel_window,
            same_day,
            delay_port,
            delay_hint,
        }
    }

    /// Active features with their values; inactive indicators are omitted.
    pub fn features(&self) -> [(&'static str, f64); 7] {
        use feature::*;
        let commodity = match self.commodity {
            Commodity::AGR => AGR,
            Commodity::Chem => CHEM,
            Commodity::Food => FOOD,
            Commodity::Fert => FERT,
            Commodity::Pet => PETRO,
            Commodity::RawMin => RAWMIN,
            Commodity::SolMin => SOLMIN,
            Commodity::Ores => ORES,
            Commodity::Iron => IRON,
            Commodity::Miss => MISS,
        };
        let ctype = match self.container_type {
            ContainerType::GP => GP,
            ContainerType::RE => RE,
            ContainerType::CC => CC,
            ContainerType::TC => TC,
        };
        let length = match self.length {
            ContainerLength::Ft20 => LEN_20,
            ContainerLength::Ft40 => LEN_40,
        };
        let weight = match self.weight_class {
            WeightClass::Heavy => HEAVY,
            WeightClass::Light => LIGHT,
            WeightClass::Empty => EMPTY,
        };
        let vessel = match self.vessel_window {
            Some(TimeWindow::Morning) => (VESSEL_MOR, 1.0),
            Some(TimeWindow::Midday) => (VESSEL_MID, 1.0),
            Some(TimeWindow::Afternoon) => (VESSEL_AFT, 1.0),
            _ => (VESSEL_MOR, 0.0),
        };
        [
            (commodity, 1.0),
            (ctype, 1.0),
            (length, 1.0),
            (weight, 1.0),
            vessel,
            (DELAY_PORT, self.delay_port),
            (DELAY_HINT, self.delay_hint),
        ]
    }

    pub fn value(&self, name: &str) -> f64 {
        self.features()
            .iter()
            .filter(|(n, _)| *n == name)
            .map(|(_, v)| *v)
            .sum()
    }
}

/// Coefficients of the logit model with Night as base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceModelParams {
    pub asc: BTreeMap<TimeWindow, f64>,
    /// Alternative-specific coefficients; a missing entry is fixed at zero.
    pub specific: BTreeMap<String, BTreeMap<TimeWindow, f64>>,
    /// Coefficients shared by every non-base alternative.
    pub generic: BTreeMap<String, f64>,
}

impl Default for ChoiceModelParams {
    fn default() -> Self {
        Self::published()
    }
}

impl ChoiceModelParams {
    pub fn zero() -> Self {
        Self {
            asc: BTreeMap::new(),
            specific: BTreeMap::new(),
            generic: BTreeMap::new(),
        }
    }

    /// The pooled all-terminal estimates as published. The constant printed
    /// under the morning and midday columns is used for those two windows.
    pub fn published() -> Self {
        use feature::*;
        use TimeWindow::*;
        let rows: &[(&str, [Option<f64>; 3])] = &[
            (AGR, [Some(0.321), Some(-0.128), Some(-0.147)]),
            (CHEM, [Some(-0.101), Some(0.111), None]),
            (FERT, [None, Some(0.295), Some(0.232)]),
            (FOOD, [None, Some(0.411), Some(0.275)]),
            (IRON, [None, Some(0.278), Some(0.356)]),
            (MISS, [None, Some(0.2), Some(0.161)]),
            (ORES, [Some(0.144), Some(0.263), Some(-0.166)]),
            (PETRO, [None, Some(0.197), Some(0.089)]),
            (RAWMIN, [Some(0.0891), Some(0.0935), None]),
            (SOLMIN, [Some(-0.0838), Some(0.2), None]),
            (GP, [Some(-0.292), Some(0.312), Some(-0.0808)]),
            (RE, [Some(-0.211), Some(0.194), Some(-0.104)]),
            (CC, [Some(-0.352), Some(0.425), None]),
            (TC, [Some(-0.336), Some(0.277), None]),
            (VESSEL_MOR, [Some(-0.233), Some(0.385), Some(0.53)]),
            (VESSEL_MID, [None, Some(0.425), Some(0.771)]),
            (VESSEL_AFT, [None, None, Some(0.619)]),
            (EMPTY, [Some(0.156), Some(0.138), Some(0.0979)]),
            (HEAVY, [Some(0.0638), Some(0.359), Some(0.0826)]),
            (LIGHT, [Some(-0.109), Some(0.151), Some(-0.0374)]),
            (LEN_20, [Some(-0.0563), Some(0.425), Some(0.0758)]),
            (LEN_40, [Some(-0.204), Some(0.205), Some(-0.132)]),
        ];
        let mut specific = BTreeMap::new();
        for (name, cells) in rows {
            let mut per = BTreeMap::new();
            for (w, v) in [Morning, Midday, Afternoon].into_iter().zip(cells) {
                if let Some(v) = v {
                    per.insert(w, *v);
                }
            }
            specific.insert(name.to_string(), per);
        }
        Self {
            asc: BTreeMap::from([(Morning, -0.251), (Midday, -0.251)]),
            specific,
            generic: BTreeMap::from([(DELAY_PORT.to_string(), -0.483), (DELAY_HINT.to_string(), -1.14)]),
        }
    }

    pub fn validate(&self) -> Result<(), ChoiceError> {
        for (name, per) in &self.specific {
            if !feature::is_known(name) {
                return Err(ChoiceError::UnknownAttribute(name.clone()));
            }
            if per.contains_key(&TimeWindow::BASE) {
                return Err(ChoiceError::BaseCoefficient { feature: name.clone() });
            }
        }
        for name in self.generic.keys() {
            if !feature::is_known(name) {
                return Err(ChoiceError::UnknownAttribute(name.clone()));
            }
        }
        if self.asc.contains_key(&TimeWindow::BASE) {
            return Err(ChoiceError::BaseCoefficient { feature: "ASC".into() });
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("params serialize")
    }
}

/// Systematic utility `V = Σ β·χ + ASC` of one window.
pub fn utility(
    attrs: &TourAttributes,
    window: TimeWindow,
    params: &ChoiceModelParams,
) -> Result<f64, ChoiceError> {
    params.validate()?;
    Ok(utility_unchecked(attrs, window, params))
}

pub(crate) fn utility_unchecked(
    attrs: &TourAttributes,
    window: TimeWindow,
    params: &ChoiceModelParams,
) -> f64 {
    if window == TimeWindow::BASE {
        return 0.0;
    }
    let mut v = params.asc.get(&window).copied().unwrap_or(0.0);
    for (name, x) in attrs.features() {
        if x == 0.0 {
            continue;
        }
        if let Some(b) = params.specific.get(name).and_then(|per| per.get(&window)) {
            v += b * x;
        }
        if let Some(b) = params.generic.get(name) {
            v += b * x;
        }
    }
    v
}

/// Logit probabilities from utilities, stabilised by subtracting the maximum.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Probability of each window, indexed by [`TimeWindow::index`].
pub fn choice_prob(attrs: &TourAttributes, params: &ChoiceModelParams) -> [f64; 4] {
    let v: Vec<f64> = TimeWindow::ALL
        .iter()
        .map(|&w| utility_unchecked(attrs, w, params))
        .collect();
    let p = softmax(&v);
    [p[0], p[1], p[2], p[3]]
}

/// Planning cost `η (1 - P)` for each alternative.
pub fn planning_cost(probabilities: &[f64], scale: f64) -> Vec<f64> {
    probabilities.iter().map(|p| scale * (1.0 - p)).collect()
}

/// Draws a window from the model's probabilities.
pub fn sample_choice<R: Rng>(attrs: &TourAttributes, params: &ChoiceModelParams, rng: &mut R) -> TimeWindow {
    let p = choice_prob(attrs, params);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for w in TimeWindow::ALL {
        acc += p[w.index()];
        if u < acc {
            return w;
        }
    }
    TimeWindow::BASE
}

/// Which coefficients are free during estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationSpec {
    /// Estimate one constant per non-base window.
    pub asc: bool,
    pub specific: Vec<(String, Vec<TimeWindow>)>,
    pub generic: Vec<String>,
    pub max_iterations: usize,
    /// Convergence threshold on the largest absolute score component per observation.
    pub gradient_tolerance: f64,
}

impl EstimationSpec {
    pub fn constants_only() -> Self {
        Self {
            asc: true,
            specific: Vec::new(),
            generic: Vec::new(),
            max_iterations: 100,
            gradient_tolerance: 1e-9,
        }
    }

    /// An identified dummy-coded specification: per categorical group one
    /// level is left out as reference.
    pub fn identified() -> Self {
        use feature::*;
        use TimeWindow::*;
        let non_base = vec![Morning, Midday, Afternoon];
        let specific = [AGR, CHEM, FOOD, SOLMIN, RE, CC, VESSEL_MOR, VESSEL_MID, EMPTY, HEAVY, LEN_20]
            .iter()
            .map(|n| (n.to_string(), non_base.clone()))
            .collect();
        Self {
            asc: true,
            specific,
            generic: vec![DELAY_PORT.into(), DELAY_HINT.into()],
            max_iterations: 100,
            gradient_tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientEstimate {
    pub name: String,
    /// `None` for generic coefficients.
    pub window: Option<TimeWindow>,
    pub estimate: f64,
    pub std_error: f64,
    pub t_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub final_log_likelihood: f64,
    pub constants_log_likelihood: f64,
    pub rho_squared_constants: f64,
    pub coefficients: Vec<CoefficientEstimate>,
    pub sample_size: usize,
    pub iterations: usize,
    pub hessian_singular: bool,
    /// Log-likelihood after each accepted step, starting at the zero vector.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
enum Slot {
    Asc(TimeWindow),
    Specific(String, TimeWindow),
    Generic(String),
}

/// Log-likelihood, score and Hessian of an MNL specification on a sample.
pub struct MnlProblem {
    slots: Vec<Slot>,
    /// design[n][alt] is the sparse list of (parameter index, value).
    design: Vec<[Vec<(usize, f64)>; 4]>,
    chosen: Vec<usize>,
}

impl MnlProblem {
    pub fn new(observations: &[(TourAttributes, TimeWindow)], spec: &EstimationSpec) -> Result<Self, ChoiceError> {
        let mut slots = Vec::new();
        if spec.asc {
            for w in TimeWindow::ALL.into_iter().filter(|w| *w != TimeWindow::BASE) {
                slots.push(Slot::Asc(w));
            }
        }
        for (name, windows) in &spec.specific {
            if !feature::is_known(name) {
                return Err(ChoiceError::UnknownAttribute(name.clone()));
            }
            for &w in windows {
                if w == TimeWindow::BASE {
                    return Err(ChoiceError::BaseCoefficient { feature: name.clone() });
                }
                slots.push(Slot::Specific(name.clone(), w));
            }
        }
        for name in &spec.generic {
            if !feature::is_known(name) {
                return Err(ChoiceError::UnknownAttribute(name.clone()));
            }
            slots.push(Slot::Generic(name.clone()));
        }
        let design = observations
            .iter()
            .map(|(attrs, _)| {
                let mut rows: [Vec<(usize, f64)>; 4] = Default::default();
                for w in TimeWindow::ALL {
                    if w == TimeWindow::BASE {
                        continue;
                    }
                    for (k, slot) in slots.iter().enumerate() {
                        let x = match slot {
                            Slot::Asc(a) if *a == w => 1.0,
                            Slot::Specific(name, a) if *a == w => attrs.value(name),
                            Slot::Generic(name) => attrs.value(name),
                            _ => 0.0,
                        };
                        if x != 0.0 {
                            rows[w.index()].push((k, x));
                        }
                    }
                }
                rows
            })
            .collect();
        Ok(Self {
            slots,
            design,
            chosen: observations.iter().map(|(_, w)| w.index()).collect(),
        })
    }

    pub fn n_params(&self) -> usize {
        self.slots.len()
    }

    fn utilities(&self, n: usize, theta: &[f64]) -> [f64; 4] {
        let mut v = [0.0; 4];
        for (a, row) in self.design[n].iter().enumerate() {
            v[a] = row.iter().map(|(k, x)| theta[*k] * x).sum();
        }
        v
    }

    pub fn log_likelihood(&self, theta: &[f64]) -> f64 {
        (0..self.design.len())
            .map(|n| {
                let v = self.utilities(n, theta);
                let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
                v[self.chosen[n]] - lse
            })
            .sum()
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        self.gradient_and_hessian(theta, false).0
    }

    fn gradient_and_hessian(&self, theta: &[f64], with_hessian: bool) -> (Vec<f64>, DMatrix<f64>) {
        let k = self.n_params();
        let mut g = vec![0.0; k];
        let mut h = DMatrix::zeros(if with_hessian { k } else { 0 }, if with_hessian { k } else { 0 });
        let mut zbar = vec![0.0; k];
        for n in 0..self.design.len() {
            let p = softmax(&self.utilities(n, theta));
            zbar.iter_mut().for_each(|z| *z = 0.0);
            for (a, row) in self.design[n].iter().enumerate() {
                for &(i, x) in row {
                    zbar[i] += p[a] * x;
                }
            }
            for &(i, x) in &self.design[n][self.chosen[n]] {
                g[i] += x;
            }
            for i in 0..k {
                g[i] -= zbar[i];
            }
            if with_hessian {
                // -H = Σ_a p_a z_a z_aᵀ - z̄ z̄ᵀ
                for (a, row) in self.design[n].iter().enumerate() {
                    for &(i, xi) in row {
                        for &(j, xj) in row {
                            h[(i, j)] -= p[a] * xi * xj;
                        }
                    }
                }
                let nz: Vec<usize> = (0..k).filter(|&i| zbar[i] != 0.0).collect();
                for &i in &nz {
                    for &j in &nz {
                        h[(i, j)] += zbar[i] * zbar[j];
                    }
                }
            }
        }
        (g, h)
    }

    fn name(&self, k: usize) -> (String, Option<TimeWindow>) {
        match &self.slots[k] {
            Slot::Asc(w) => (format!("ASC_{}", w.short_label()), Some(*w)),
            Slot::Specific(n, w) => (n.clone(), Some(*w)),
            Slot::Generic(n) => (n.clone(), None),
        }
    }
}

/// Maximum-likelihood estimation by Newton ascent with backtracking line
/// search; falls back to the plain gradient when the Hessian is not negative
/// definite. Standard errors come from the inverse observed information.
pub fn estimate_mnl(
    observations: &[(TourAttributes, TimeWindow)],
    spec: &EstimationSpec,
) -> Result<(ChoiceModelParams, EstimationReport), ChoiceError> {
    if observations.is_empty() {
        return Err(ChoiceError::Empty);
    }
    let mut counts = [0usize; 4];
    for (_, w) in observations {
        counts[w.index()] += 1;
    }
    if let Some(w) = TimeWindow::ALL.iter().find(|w| counts[w.index()] == 0) {
        return Err(ChoiceError::MissingAlternative(*w));
    }
    check_separation(observations, spec)?;

    let problem = MnlProblem::new(observations, spec)?;
    let k = problem.n_params();
    let n_obs = observations.len() as f64;
    let mut theta = vec![0.0; k];
    let mut ll = problem.log_likelihood(&theta);
    let mut trace = vec![ll];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < spec.max_iterations {
        let (g, h) = problem.gradient_and_hessian(&theta, true);
        let gmax = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if gmax / n_obs < spec.gradient_tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let neg_h = -h;
        let gv = DVector::from_vec(g.clone());
        let direction = match neg_h.clone().cholesky() {
            Some(ch) => ch.solve(&gv),
            None => gv.clone(),
        };
        let slope = gv.dot(&direction);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = theta
                .iter()
                .zip(direction.iter())
                .map(|(t, d)| t + step * d)
                .collect();
            let cand_ll = problem.log_likelihood(&cand);
            if cand_ll.is_finite() && cand_ll >= ll + 1e-4 * step * slope {
                theta = cand;
                ll = cand_ll;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !ll.is_finite() {
            return Err(ChoiceError::NonFinite);
        }
        if !accepted {
            // no ascent possible at machine precision: treat as converged
            converged = true;
            break;
        }
        trace.push(ll);
    }
    if !converged {
        return Err(ChoiceError::NoConvergence(spec.max_iterations));
    }

    let (_, h) = problem.gradient_and_hessian(&theta, true);
    let info = -h;
    let (cov, singular) = match info.clone().try_inverse() {
        Some(inv) if inv.diagonal().iter().all(|d| d.is_finite() && *d > 0.0) => (Some(inv), false),
        _ => (None, true),
    };
    if singular {
        log::warn!("observed information matrix is singular; standard errors unavailable");
    }

    let constants_ll: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| c as f64 * (c as f64 / n_obs).ln())
        .sum();
    let rho = if constants_ll < 0.0 {
        (1.0 - ll / constants_ll).clamp(0.0, 1.0)
    } else {
        0.0
    };

    let mut params = ChoiceModelParams::zero();
    let mut coefficients = Vec::with_capacity(k);
    for i in 0..k {
        let (name, window) = problem.name(i);
        let se = cov.as_ref().map_or(f64::NAN, |c| c[(i, i)].sqrt());
        coefficients.push(CoefficientEstimate {
            name: name.clone(),
            window,
            estimate: theta[i],
            std_error: se,
            t_value: theta[i] / se,
        });
        match &problem.slots[i] {
            Slot::Asc(w) => {
                params.asc.insert(*w, theta[i]);
            }
            Slot::Specific(n, w) => {
                params.specific.entry(n.clone()).or_default().insert(*w, theta[i]);
            }
            Slot::Generic(n) => {
                params.generic.insert(n.clone(), theta[i]);
            }
        }
    }
    Ok((
        params,
        EstimationReport {
            final_log_likelihood: ll,
            constants_log_likelihood: constants_ll,
            rho_squared_constants: rho,
            coefficients,
            sample_size: observations.len(),
            iterations,
            hessian_singular: singular,
            trace,
        },
    ))
}

fn check_separation(
    observations: &[(TourAttributes, TimeWindow)],
    spec: &EstimationSpec,
) -> Result<(), ChoiceError> {
    for (name, windows) in &spec.specific {
        let with: Vec<TimeWindow> = observations
            .iter()
            .filter(|(a, _)| a.value(name) != 0.0)
            .map(|(_, w)| *w)
            .collect();
        if with.is_empty() {
            continue;
        }
        for &w in windows {
            let hits = with.iter().filter(|c| **c == w).count();
            if hits == 0 || hits == with.len() {
                return Err(ChoiceError::PerfectSeparation {
                    feature: name.clone(),
                    window: w,
                });
            }
        }
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct ObservationRow {
    commodity: Commodity,
    container_type: ContainerType,
    length: ContainerLength,
    weight_class: WeightClass,
    vessel_window: Option<TimeWindow>,
    same_day: bool,
    delay_port: f64,
    delay_hint: f64,
    chosen_window: TimeWindow,
}

pub fn write_observations_csv<W: Write>(
    out: W,
    observations: &[(TourAttributes, TimeWindow)],
) -> Result<(), ChoiceError> {
    let mut w = csv::Writer::from_writer(out);
    for (a, chosen) in observations {
        w.serialize(ObservationRow {
            commodity: a.commodity,
            container_type: a.container_type,
            length: a.length,
            weight_class: a.weight_class,
            vessel_window: a.vessel_window,
            same_day: a.same_day,
            delay_port: a.delay_port,
            delay_hint: a.delay_hint,
            chosen_window: *chosen,
        })?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_observations_csv<R: Read>(input: R) -> Result<Vec<(TourAttributes, TimeWindow)>, ChoiceError> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize::<ObservationRow>()
        .map(|row| {
            let row = row?;
            Ok((
                TourAttributes {
                    commodity: row.commodity,
                    container_type: row.container_type,
                    length: row.length,
                    weight_class: row.weight_class,
                    vessel_window: row.vessel_window,
                    same_day: row.same_day,
                    delay_port: row.delay_port,
                    delay_hint: row.delay_hint,
                },
                row.chosen_window,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn attrs(commodity: Commodity) -> TourAttributes {
        TourAttributes {
            commodity,
            container_type: ContainerType::GP,
            length: ContainerLength::Ft40,
            weight_class: WeightClass::Heavy,
            vessel_window: None,
            same_day: false,
            delay_port: 0.0,
            delay_hint: 0.0,
        }
    }

    #[test]
    fn zero_params_give_zero_utility() {
        let p = ChoiceModelParams::zero();
        for w in TimeWindow::ALL {
            assert_eq!(utility(&attrs(Commodity::Chem), w, &p).unwrap(), 0.0);
        }
    }

    #[test]
    fn agr_morning_utility() {
        let published = ChoiceModelParams::published();
        let mut p = ChoiceModelParams::zero();
        p.specific.insert(
            feature::AGR.into(),
            BTreeMap::from([(TimeWindow::Morning, published.specific[feature::AGR][&TimeWindow::Morning])]),
        );
        assert_relative_eq!(utility(&attrs(Commodity::AGR), TimeWindow::Morning, &p).unwrap(), 0.321);
    }

    #[test]
    fn delay_hint_is_generic() {
        let mut p = ChoiceModelParams::zero();
        p.generic.insert(feature::DELAY_HINT.into(), -1.14);
        let mut a = attrs(Commodity::Miss);
        a.delay_hint = 0.1;
        for w in [TimeWindow::Morning, TimeWindow::Midday, TimeWindow::Afternoon] {
            assert_relative_eq!(utility(&a, w, &p).unwrap(), -0.114, max_relative = 1e-12);
        }
        assert_eq!(utility(&a, TimeWindow::Night, &p).unwrap(), 0.0);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let mut p = ChoiceModelParams::zero();
        p.generic.insert("Delay_Moon".into(), 1.0);
        assert!(matches!(
            utility(&attrs(Commodity::AGR), TimeWindow::Morning, &p),
            Err(ChoiceError::UnknownAttribute(_))
        ));
        let mut base = ChoiceModelParams::zero();
        base.specific.insert(feature::GP.into(), BTreeMap::from([(TimeWindow::Night, 1.0)]));
        assert!(base.validate().is_err());
    }

    #[test]
    fn probability_examples() {
        let p = choice_prob(&attrs(Commodity::AGR), &ChoiceModelParams::zero());
        assert_eq!(p, [0.25; 4]);
        let e = std::f64::consts::E;
        let q = softmax(&[1.0, 0.0, 0.0, 0.0]);
        assert_relative_eq!(q[0], e / (e + 3.0), max_relative = 1e-14);
        assert!((q[0] - 0.4754).abs() < 1e-4);
    }

    #[test]
    fn planning_cost_examples() {
        assert_eq!(planning_cost(&[1.0, 0.0], 5.0)[0], 0.0);
        assert_eq!(planning_cost(&[0.25; 4], 100.0), vec![75.0; 4]);
        let c = planning_cost(&[0.7311, 0.2689], 1.0);
        assert_relative_eq!(c[0], 0.2689, max_relative = 1e-12);
        assert_relative_eq!(c[1], 0.7311, max_relative = 1e-12);
    }

    #[test]
    fn published_params_are_valid_and_round_trip() {
        let p = ChoiceModelParams::published();
        p.validate().unwrap();
        let back: ChoiceModelParams = serde_json::from_str(&p.to_json()).unwrap();
        assert_eq!(p, back);
        assert!(p.to_json().contains("Lenght_20ft"));
    }

    #[test]
    fn missing_alternative_and_separation() {
        let obs = vec![(attrs(Commodity::AGR), TimeWindow::Morning)];
        assert!(matches!(
            estimate_mnl(&obs, &EstimationSpec::constants_only()),
            Err(ChoiceError::MissingAlternative(_))
        ));
        let mut obs = Vec::new();
        for w in TimeWindow::ALL {
            obs.push((attrs(Commodity::Chem), w));
        }
        obs.push((attrs(Commodity::AGR), TimeWindow::Morning));
        let spec = EstimationSpec {
            specific: vec![(feature::AGR.into(), vec![TimeWindow::Morning])],
            ..EstimationSpec::constants_only()
        };
        assert!(matches!(
            estimate_mnl(&obs, &spec),
            Err(ChoiceError::PerfectSeparation { .. })
        ));
    }

    #[test]
    fn constants_only_on_uniform_choices() {
        let mut obs = Vec::new();
        for i in 0..400 {
            obs.push((attrs(Commodity::Food), TimeWindow::ALL[i % 4]));
        }
        let (params, report) = estimate_mnl(&obs, &EstimationSpec::constants_only()).unwrap();
        for v in params.asc.values() {
            assert!(v.abs() < 1e-8);
        }
        assert!(report.rho_squared_constants.abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let mut a = attrs(Commodity::Ores);
        a.vessel_window = Some(TimeWindow::Midday);
        a.same_day = true;
        a.delay_hint = 0.25;
        let obs = vec![(a, TimeWindow::Afternoon), (attrs(Commodity::Iron), TimeWindow::Night)];
        let mut buf = Vec::new();
        write_observations_csv(&mut buf, &obs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("commodity,container_type,length,weight_class,vessel_window,same_day,delay_port,delay_hint,chosen_window"));
        assert_eq!(read_observations_csv(&buf[..]).unwrap(), obs);
    }

    proptest! {
        #[test]
        fn shift_invariance(v in proptest::collection::vec(-20.0f64..20.0, 4), c in -100.0f64..100.0) {
            let p = softmax(&v);
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let q = softmax(&shifted);
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            let argmax_v = (0..4).max_by(|&i, &j| v[i].total_cmp(&v[j])).unwrap();
            let argmax_p = (0..4).max_by(|&i, &j| p[i].total_cmp(&p[j])).unwrap();
            prop_assert_eq!(argmax_v, argmax_p);
        }

        #[test]
        fn planning_cost_reverses_order(p1 in 0.0f64..1.0, p2 in 0.0f64..1.0, eta in 0.1f64..500.0) {
            prop_assume!(p1 > p2);
            let c = planning_cost(&[p1, p2], eta);
            prop_assert!(c[0] < c[1]);
        }
    }
}
