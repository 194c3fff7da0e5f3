use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lstm::{backward_step, forward_step, LstmParams, StepCache};
use super::{ForecastError, SeriesWindow, HORIZON};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Per-signal z-score parameters: index 0 is container arrivals, 1 is truck
/// arrivals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            mean: [0.0; 2],
            std: [1.0; 2],
        }
    }
}

impl Normalization {
    pub fn fit(windows: &[SeriesWindow]) -> Self {
        let mut sum = [0.0; 2];
        let mut sq = [0.0; 2];
        let mut n = 0.0;
        for w in windows {
            for x in &w.inputs {
                for s in 0..2 {
                    sum[s] += x[s];
                    sq[s] += x[s] * x[s];
                }
                n += 1.0;
            }
        }
        if n == 0.0 {
            return Self::default();
        }
        let mut out = Self::default();
        for s in 0..2 {
            out.mean[s] = sum[s] / n;
            let var = (sq[s] / n - out.mean[s] * out.mean[s]).max(0.0);
            out.std[s] = if var > 1e-12 { var.sqrt() } else { 1.0 };
        }
        out
    }

    pub(crate) fn input(&self, x: &[f64; 2]) -> [f64; 2] {
        [
            (x[0] - self.mean[0]) / self.std[0],
            (x[1] - self.mean[1]) / self.std[1],
        ]
    }

    pub(crate) fn truck(&self, y: f64) -> f64 {
        (y - self.mean[1]) / self.std[1]
    }

    pub(crate) fn truck_inverse(&self, z: f64) -> f64 {
        z * self.std[1] + self.mean[1]
    }
}

/// Encoder-decoder LSTM with a dense scalar readout per decoder step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seq2SeqModel {
    pub version: u32,
    pub encoder: LstmParams,
    pub decoder: LstmParams,
    pub readout_w: Vec<f64>,
    pub readout_b: f64,
    pub horizon: usize,
    pub normalization: Normalization,
}

/// Teacher forcing feeds the observed previous value to the decoder;
/// otherwise the decoder consumes its own previous output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum DecoderFeed {
    TeacherForcing,
    Autoregressive,
}

pub(crate) struct ForwardPass {
    enc: Vec<StepCache>,
    dec: Vec<StepCache>,
    masks: Option<Vec<Vec<f64>>>,
    pub outputs: Vec<f64>,
}

impl Seq2SeqModel {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            encoder: LstmParams::zeros(2, hidden),
            decoder: LstmParams::zeros(1, hidden),
            readout_w: vec![0.0; hidden],
            readout_b: 0.0,
            horizon: HORIZON,
            normalization: Normalization::default(),
        }
    }

    pub fn random<R: Rng>(hidden: usize, rng: &mut R) -> Self {
        let r = 1.0 / (hidden as f64).sqrt();
        Self {
            encoder: LstmParams::random(2, hidden, rng),
            decoder: LstmParams::random(1, hidden, rng),
            readout_w: (0..hidden).map(|_| rng.random_range(-r..r)).collect(),
            ..Self::zeros(hidden)
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.encoder.hidden_size
    }

    /// Names and lengths of the trainable tensors, in flattening order.
    pub fn tensor_layout(&self) -> Vec<(&'static str, usize)> {
        vec![
            ("encoder.w", self.encoder.w.len()),
            ("encoder.u", self.encoder.u.len()),
            ("encoder.b", self.encoder.b.len()),
            ("decoder.w", self.decoder.w.len()),
            ("decoder.u", self.decoder.u.len()),
            ("decoder.b", self.decoder.b.len()),
            ("readout.w", self.readout_w.len()),
            ("readout.b", 1),
        ]
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        out.extend(&self.encoder.w);
        out.extend(&self.encoder.u);
        out.extend(&self.encoder.b);
        out.extend(&self.decoder.w);
        out.extend(&self.decoder.u);
        out.extend(&self.decoder.b);
        out.extend(&self.readout_w);
        out.push(self.readout_b);
        out
    }

    pub fn set_flat(&mut self, theta: &[f64]) {
        let mut at = 0;
        for v in [
            &mut self.encoder.w,
            &mut self.encoder.u,
            &mut self.encoder.b,
            &mut self.decoder.w,
            &mut self.decoder.u,
            &mut self.decoder.b,
            &mut self.readout_w,
        ] {
            let n = v.len();
            v.copy_from_slice(&theta[at..at + n]);
            at += n;
        }
        self.readout_b = theta[at];
    }

    pub fn n_params(&self) -> usize {
        self.encoder.n_params() + self.decoder.n_params() + self.readout_w.len() + 1
    }

    pub(crate) fn check(&self) -> Result<(), ForecastError> {
        self.encoder.check()?;
        self.decoder.check()?;
        let h = self.hidden_size();
        if self.encoder.input_size != 2
            || self.decoder.input_size != 1
            || self.decoder.hidden_size != h
            || self.readout_w.len() != h
        {
            return Err(ForecastError::ShapeMismatch("encoder/decoder/readout sizes disagree".into()));
        }
        Ok(())
    }

    /// Forward pass in normalised space. `inputs` and `targets` are already
    /// normalised; `targets` is required for teacher forcing.
    pub(crate) fn forward(
        &self,
        inputs: &[[f64; 2]],
        targets: Option<&[f64]>,
        feed: DecoderFeed,
        dropout: Option<(f64, &mut dyn FnMut() -> f64)>,
    ) -> ForwardPass {
        let nh = self.hidden_size();
        let mut h = vec![0.0; nh];
        let mut c = vec![0.0; nh];
        let mut enc = Vec::with_capacity(inputs.len());
        for x in inputs {
            let step = forward_step(&self.encoder, x, &h, &c);
            h.clone_from(&step.h);
            c.clone_from(&step.c);
            enc.push(step);
        }
        let mut dec = Vec::with_capacity(self.horizon);
        let mut outputs = Vec::with_capacity(self.horizon);
        let mut masks = dropout.as_ref().map(|_| Vec::with_capacity(self.horizon));
        let mut dropout = dropout;
        let mut prev = 0.0;
        for s in 0..self.horizon {
            let x = [prev];
            let step = forward_step(&self.decoder, &x, &h, &c);
            h.clone_from(&step.h);
            c.clone_from(&step.c);
            let y = match (&mut dropout, &mut masks) {
                (Some((rate, draw)), Some(ms)) => {
                    let keep = 1.0 - *rate;
                    let mask: Vec<f64> = (0..nh)
                        .map(|_| if draw() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    let y = self.readout_b
                        + (0..nh).map(|k| self.readout_w[k] * step.h[k] * mask[k]).sum::<f64>();
                    ms.push(mask);
                    y
                }
                _ => self.readout_b + self.readout_w.iter().zip(&step.h).map(|(a, b)| a * b).sum::<f64>(),
            };
            dec.push(step);
            outputs.push(y);
            prev = match feed {
                DecoderFeed::TeacherForcing => targets.expect("teacher forcing needs targets")[s],
                DecoderFeed::Autoregressive => y,
            };
        }
        ForwardPass {
            enc,
            dec,
            masks,
            outputs,
        }
    }

    /// Gradient of the mean squared error of a teacher-forced pass, added to `grad`.
    pub(crate) fn backward(&self, pass: &ForwardPass, targets: &[f64], grad: &mut Seq2SeqModel) -> f64 {
        let nh = self.hidden_size();
        let k = self.horizon as f64;
        let mut loss = 0.0;
        let mut dh_next = vec![0.0; nh];
        let mut dc_next = vec![0.0; nh];
        for s in (0..self.horizon).rev() {
            let err = pass.outputs[s] - targets[s];
            loss += err * err / k;
            let dy = 2.0 * err / k;
            let step = &pass.dec[s];
            grad.readout_b += dy;
            let mut dh = dh_next.clone();
            for j in 0..nh {
                let m = pass.masks.as_ref().map_or(1.0, |ms| ms[s][j]);
                grad.readout_w[j] += dy * step.h[j] * m;
                dh[j] += dy * self.readout_w[j] * m;
            }
            let (dh_prev, dc_prev, _) = backward_step(&self.decoder, step, &dh, &dc_next, &mut grad.decoder);
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        for step in pass.enc.iter().rev() {
            let (dh_prev, dc_prev, _) = backward_step(&self.encoder, step, &dh_next, &dc_next, &mut grad.encoder);
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        loss
    }

    /// Teacher-forced training loss (normalised units) without dropout.
    pub fn loss(&self, window: &SeriesWindow) -> f64 {
        let (x, y) = self.normalized(window);
        let pass = self.forward(&x, Some(&y), DecoderFeed::TeacherForcing, None);
        pass.outputs.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / self.horizon as f64
    }

    /// Analytic gradient of [`Seq2SeqModel::loss`], flattened.
    pub fn loss_gradient(&self, window: &SeriesWindow) -> Vec<f64> {
        let (x, y) = self.normalized(window);
        let pass = self.forward(&x, Some(&y), DecoderFeed::TeacherForcing, None);
        let mut grad = self.zeros_like();
        self.backward(&pass, &y, &mut grad);
        grad.flatten()
    }

    pub(crate) fn zeros_like(&self) -> Seq2SeqModel {
        let mut g = Seq2SeqModel::zeros(self.hidden_size());
        g.horizon = self.horizon;
        g
    }

    pub(crate) fn normalized(&self, window: &SeriesWindow) -> (Vec<[f64; 2]>, Vec<f64>) {
        let x = window.inputs.iter().map(|v| self.normalization.input(v)).collect();
        let y = window.target.iter().map(|&v| self.normalization.truck(v)).collect();
        (x, y)
    }

    /// Autoregressive forecast in original units, clamped at zero.
    pub fn predict(&self, window: &SeriesWindow) -> Vec<f64> {
        let x: Vec<[f64; 2]> = window.inputs.iter().map(|v| self.normalization.input(v)).collect();
        self.forward(&x, None, DecoderFeed::Autoregressive, None)
            .outputs
            .into_iter()
            .map(|z| self.normalization.truck_inverse(z).max(0.0))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ForecastError> {
        let m: Seq2SeqModel = serde_json::from_str(text).map_err(|e| ForecastError::Checkpoint(e.to_string()))?;
        if m.version != CHECKPOINT_VERSION {
            return Err(ForecastError::Checkpoint(format!("unsupported checkpoint version {}", m.version)));
        }
        m.check()?;
        Ok(m)
    }
}

/// Multi-step forecast of the operation day's hourly truck arrivals.
pub fn seq2seq_forecast(window: &SeriesWindow, model: &Seq2SeqModel) -> Result<Vec<f64>, ForecastError> {
    model.check()?;
    if model.horizon != window.target_len() {
        return Err(ForecastError::HorizonMismatch {
            expected: window.target_len(),
            got: model.horizon,
        });
    }
    if window.inputs.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(ForecastError::ShapeMismatch("inputs must be finite and >= 0".into()));
    }
    Ok(model.predict(window))
}
