//! Hourly truck-arrival forecasting for the operation day.

mod lstm;
mod seq2seq;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use lstm::{lstm_cell_step, LstmParams};
pub use seq2seq::{seq2seq_forecast, Normalization, Seq2SeqModel, CHECKPOINT_VERSION};
pub use train::{
    clip_global_norm, gradient_check, train_forecaster, GradientCheck, TrainConfig, TrainingLog, TrainingRow,
};

/// Forecast horizon: one operation day of hourly slots.
pub const HORIZON: usize = 24;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForecastError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("model horizon {got} does not match target length {expected}")]
    HorizonMismatch { expected: usize, got: usize },
    #[error("unknown lookup scenario {0}; expected 1, 2 or 3")]
    UnknownScenario(u8),
    #[error("history lacks day offsets {0:?}")]
    MissingDays(Vec<i64>),
    #[error("dataset has no usable samples")]
    EmptyDataset,
    #[error("non-finite training loss at step {0}")]
    NonFiniteLoss(usize),
    #[error("length mismatch: {0} predictions vs {1} observations")]
    LengthMismatch(usize, usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Input sequence of `[container arrivals, truck arrivals]` per lookup hour,
/// lookup days in chronological order, plus the operation day's hourly trucks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesWindow {
    pub inputs: Vec<[f64; 2]>,
    pub target: Vec<f64>,
    /// Index of the operation day in the source history.
    pub day: usize,
}

impl SeriesWindow {
    pub fn target_len(&self) -> usize {
        self.target.len()
    }
}

/// Day offsets of the lookup days for a forecasting scenario: same-day
/// planning (1), one day ahead (2) or two days ahead (3).
pub fn build_lookup_window(scenario: u8) -> Result<Vec<i64>, ForecastError> {
    match scenario {
        1 => Ok(vec![-1, -2, -7, -14, -21]),
        2 => Ok(vec![-2, -3, -7, -14, -21]),
        3 => Ok(vec![-3, -4, -7, -14, -21]),
        other => Err(ForecastError::UnknownScenario(other)),
    }
}

/// Hourly container and truck arrival counts per day.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DemandHistory {
    pub containers: Vec<[f64; 24]>,
    pub trucks: Vec<[f64; 24]>,
}

impl DemandHistory {
    pub fn days(&self) -> usize {
        self.trucks.len()
    }

    fn check_days(&self, day: usize, offsets: &[i64]) -> Result<(), ForecastError> {
        let missing: Vec<i64> = offsets
            .iter()
            .copied()
            .filter(|&o| {
                let d = day as i64 + o;
                d < 0 || d as usize >= self.days().min(self.containers.len())
            })
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(ForecastError::MissingDays(missing))
        }
    }

    /// Builds the input window for operation day `day`. The target is empty
    /// when the day lies beyond the recorded history.
    pub fn window(&self, day: usize, offsets: &[i64]) -> Result<SeriesWindow, ForecastError> {
        self.check_days(day, offsets)?;
        let mut sorted = offsets.to_vec();
        sorted.sort_unstable();
        let mut inputs = Vec::with_capacity(sorted.len() * 24);
        for o in sorted {
            let d = (day as i64 + o) as usize;
            for h in 0..24 {
                inputs.push([self.containers[d][h], self.trucks[d][h]]);
            }
        }
        let target = self.trucks.get(day).map(|t| t.to_vec()).unwrap_or_default();
        Ok(SeriesWindow { inputs, target, day })
    }

    /// All windows whose lookup days and target fall inside `days`.
    pub fn windows(&self, days: std::ops::Range<usize>, offsets: &[i64]) -> Vec<SeriesWindow> {
        days.filter(|&d| d < self.days())
            .filter_map(|d| self.window(d, offsets).ok())
            .collect()
    }
}

/// Per-hour mean of the truck arrivals on the lookup days.
pub fn ha_baseline(history: &DemandHistory, day: usize, offsets: &[i64]) -> Result<Vec<f64>, ForecastError> {
    if offsets.is_empty() {
        return Err(ForecastError::MissingDays(Vec::new()));
    }
    history.check_days(day, offsets)?;
    let n = offsets.len() as f64;
    Ok((0..24)
        .map(|h| {
            offsets
                .iter()
                .map(|&o| history.trucks[(day as i64 + o) as usize][h])
                .sum::<f64>()
                / n
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastMetrics {
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
}

pub fn eval_metrics(predictions: &[f64], observations: &[f64]) -> Result<ForecastMetrics, ForecastError> {
    if predictions.len() != observations.len() || predictions.is_empty() {
        return Err(ForecastError::LengthMismatch(predictions.len(), observations.len()));
    }
    let n = predictions.len() as f64;
    let mut se = 0.0;
    let mut ae = 0.0;
    for (p, o) in predictions.iter().zip(observations) {
        se += (p - o).powi(2);
        ae += (p - o).abs();
    }
    let mse = se / n;
    Ok(ForecastMetrics {
        mse,
        rmse: mse.sqrt(),
        mae: ae / n,
    })
}
