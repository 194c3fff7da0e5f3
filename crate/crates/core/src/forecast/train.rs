use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::seq2seq::{DecoderFeed, Normalization, Seq2SeqModel};
use super::{ForecastError, SeriesWindow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Dropout rate on decoder hidden activations feeding the readout.
    pub dropout: f64,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub validate_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 40,
            learning_rate: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            dropout: 0.2,
            clip_norm: 1.0,
            batch_size: 16,
            steps: 600,
            validate_every: 20,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub step: usize,
    /// Mean teacher-forced batch loss since the previous row (normalised units).
    pub train_mse: f64,
    /// Mean autoregressive loss on the validation windows (normalised units).
    pub val_mse: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub rows: Vec<TrainingRow>,
    /// Step whose parameters were kept.
    pub best_step: usize,
}

impl TrainingLog {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "train_mse", "val_mse"])?;
        for r in &self.rows {
            w.write_record([r.step.to_string(), r.train_mse.to_string(), r.val_mse.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Scales `grad` in place so its Euclidean norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn update(&mut self, theta: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            theta[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

fn validation_mse(model: &Seq2SeqModel, windows: &[SeriesWindow]) -> f64 {
    let total: f64 = windows
        .iter()
        .map(|w| {
            let (x, y) = model.normalized(w);
            let out = model.forward(&x, None, DecoderFeed::Autoregressive, None).outputs;
            out.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64
        })
        .sum();
    total / windows.len() as f64
}

/// Trains the encoder-decoder on `train`, validating on `val` every
/// `validate_every` steps and keeping the parameters with the lowest
/// validation loss.
pub fn train_forecaster(
    train: &[SeriesWindow],
    val: &[SeriesWindow],
    cfg: &TrainConfig,
) -> Result<(Seq2SeqModel, TrainingLog), ForecastError> {
    if train.is_empty() {
        return Err(ForecastError::EmptyDataset);
    }
    let horizon = train[0].target.len();
    if horizon == 0 || train.iter().chain(val).any(|w| w.target.len() != horizon) {
        return Err(ForecastError::ShapeMismatch("windows need equal, non-empty targets".into()));
    }
    if !(0.0..1.0).contains(&cfg.dropout) || cfg.batch_size == 0 || cfg.hidden == 0 {
        return Err(ForecastError::ShapeMismatch("invalid training configuration".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Seq2SeqModel::random(cfg.hidden, &mut rng);
    model.horizon = horizon;
    model.normalization = Normalization::fit(train);
    let val_set = if val.is_empty() { train } else { val };

    let mut theta = model.flatten();
    let mut adam = Adam::new(theta.len());
    let mut log = TrainingLog::default();
    let mut best = (validation_mse(&model, val_set), theta.clone(), 0usize);
    let mut running = 0.0;
    let mut running_n = 0usize;
    let every = cfg.validate_every.max(1);

    for step in 1..=cfg.steps {
        let mut grad = model.zeros_like();
        let mut batch_loss = 0.0;
        for _ in 0..cfg.batch_size {
            let w = &train[rng.random_range(0..train.len())];
            let (x, y) = model.normalized(w);
            let pass = if cfg.dropout > 0.0 {
                let mut draw = || rng.random::<f64>();
                model.forward(&x, Some(&y), DecoderFeed::TeacherForcing, Some((cfg.dropout, &mut draw)))
            } else {
                model.forward(&x, Some(&y), DecoderFeed::TeacherForcing, None)
            };
            batch_loss += model.backward(&pass, &y, &mut grad);
        }
        batch_loss /= cfg.batch_size as f64;
        if !batch_loss.is_finite() {
            return Err(ForecastError::NonFiniteLoss(step));
        }
        let mut g = grad.flatten();
        let inv = 1.0 / cfg.batch_size as f64;
        g.iter_mut().for_each(|v| *v *= inv);
        clip_global_norm(&mut g, cfg.clip_norm);
        adam.update(&mut theta, &g, cfg);
        model.set_flat(&theta);
        running += batch_loss;
        running_n += 1;

        if step % every == 0 || step == cfg.steps {
            let val_mse = validation_mse(&model, val_set);
            if !val_mse.is_finite() {
                return Err(ForecastError::NonFiniteLoss(step));
            }
            log.rows.push(TrainingRow {
                step,
                train_mse: running / running_n as f64,
                val_mse,
            });
            log::debug!("step {step} train {:.4} val {val_mse:.4}", running / running_n as f64);
            running = 0.0;
            running_n = 0;
            if val_mse < best.0 {
                best = (val_mse, theta.clone(), step);
            }
        }
    }
    model.set_flat(&best.1);
    log.best_step = best.2;
    Ok((model, log))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    /// Relative error `‖g_analytic − g_fd‖ / max(‖g_analytic‖, ‖g_fd‖)` per tensor.
    pub per_tensor: Vec<(String, f64)>,
}

impl GradientCheck {
    pub fn max_relative_error(&self) -> f64 {
        self.per_tensor.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }
}

/// Compares the analytic loss gradient with central finite differences.
pub fn gradient_check(model: &Seq2SeqModel, window: &SeriesWindow, step: f64) -> GradientCheck {
    let analytic = model.loss_gradient(window);
    let theta = model.flatten();
    let mut probe = model.clone();
    let mut t = theta.clone();
    let numeric: Vec<f64> = (0..theta.len())
        .map(|i| {
            t[i] = theta[i] + step;
            probe.set_flat(&t);
            let up = probe.loss(window);
            t[i] = theta[i] - step;
            probe.set_flat(&t);
            let down = probe.loss(window);
            t[i] = theta[i];
            (up - down) / (2.0 * step)
        })
        .collect();
    let mut at = 0;
    let per_tensor = model
        .tensor_layout()
        .into_iter()
        .map(|(name, n)| {
            let a = &analytic[at..at + n];
            let b = &numeric[at..at + n];
            at += n;
            let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            let scale = na.max(nb);
            (name.to_string(), if scale > 0.0 { diff / scale } else { 0.0 })
        })
        .collect();
    GradientCheck { per_tensor }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_window(value: f64, day: usize) -> SeriesWindow {
        SeriesWindow {
            inputs: vec![[value, value]; 12],
            target: vec![value; 6],
            day,
        }
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = vec![3e6, -4e6, 1e5];
        let before = clip_global_norm(&mut g, 1.0);
        assert!(before > 1e6);
        let after = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(after <= 1.0 + 1e-12);
        let mut small = vec![0.1, 0.2];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small, vec![0.1, 0.2]);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert_eq!(
            train_forecaster(&[], &[], &TrainConfig::default()).unwrap_err(),
            ForecastError::EmptyDataset
        );
    }

    #[test]
    fn overfits_a_single_sample() {
        let mut w = constant_window(0.0, 0);
        w.inputs = (0..12).map(|i| [(i % 3) as f64, (i % 4) as f64]).collect();
        w.target = vec![1.0, 3.0, 2.0, 0.0, 4.0, 1.0];
        let cfg = TrainConfig {
            hidden: 8,
            dropout: 0.0,
            batch_size: 1,
            steps: 400,
            ..TrainConfig::default()
        };
        let (model, _) = train_forecaster(std::slice::from_ref(&w), &[], &cfg).unwrap();
        assert!(model.loss(&w) < 1e-2, "loss {}", model.loss(&w));
    }

    #[test]
    fn training_is_deterministic() {
        let data: Vec<SeriesWindow> = (0..5).map(|d| constant_window(d as f64, d)).collect();
        let cfg = TrainConfig {
            hidden: 4,
            steps: 30,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let a = train_forecaster(&data, &[], &cfg).unwrap();
        let b = train_forecaster(&data, &[], &cfg).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn log_csv_header() {
        let log = TrainingLog {
            rows: vec![TrainingRow {
                step: 20,
                train_mse: 0.5,
                val_mse: 0.25,
            }],
            best_step: 20,
        };
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "step,train_mse,val_mse\n20,0.5,0.25\n");
    }
}
