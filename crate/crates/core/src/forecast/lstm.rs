use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ForecastError;

/// One LSTM layer with a forget gate. Gate blocks are stacked in the order
/// input, forget, output, candidate; `w` is `4H × I` and `u` is `4H × H`,
/// both row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub input_size: usize,
    pub hidden_size: usize,
    pub w: Vec<f64>,
    pub u: Vec<f64>,
    pub b: Vec<f64>,
}

const GATE_I: usize = 0;
const GATE_F: usize = 1;
const GATE_O: usize = 2;
const GATE_C: usize = 3;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl LstmParams {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        Self {
            input_size,
            hidden_size,
            w: vec![0.0; 4 * hidden_size * input_size],
            u: vec![0.0; 4 * hidden_size * hidden_size],
            b: vec![0.0; 4 * hidden_size],
        }
    }

    /// Uniform(±1/√H) weights, forget bias 1.
    pub fn random<R: Rng>(input_size: usize, hidden_size: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(input_size, hidden_size);
        let r = 1.0 / (hidden_size as f64).sqrt();
        p.w.iter_mut().chain(p.u.iter_mut()).for_each(|v| *v = rng.random_range(-r..r));
        for k in 0..hidden_size {
            p.b[GATE_F * hidden_size + k] = 1.0;
        }
        p
    }

    pub fn n_params(&self) -> usize {
        self.w.len() + self.u.len() + self.b.len()
    }

    pub(crate) fn check(&self) -> Result<(), ForecastError> {
        let (i, h) = (self.input_size, self.hidden_size);
        if self.w.len() != 4 * h * i || self.u.len() != 4 * h * h || self.b.len() != 4 * h {
            return Err(ForecastError::ShapeMismatch(format!(
                "LSTM tensors do not match input {i}, hidden {h}"
            )));
        }
        Ok(())
    }
}

/// Activations of one step, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct StepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Post-activation gates, same block order as the parameters.
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

pub(crate) fn forward_step(p: &LstmParams, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> StepCache {
    let (ni, nh) = (p.input_size, p.hidden_size);
    let mut gates = p.b.clone();
    for (r, g) in gates.iter_mut().enumerate() {
        let wr = &p.w[r * ni..(r + 1) * ni];
        let ur = &p.u[r * nh..(r + 1) * nh];
        *g += wr.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        *g += ur.iter().zip(h_prev).map(|(a, b)| a * b).sum::<f64>();
    }
    for (r, g) in gates.iter_mut().enumerate() {
        *g = if r / nh == GATE_C { g.tanh() } else { sigmoid(*g) };
    }
    let mut c = vec![0.0; nh];
    let mut tanh_c = vec![0.0; nh];
    let mut h = vec![0.0; nh];
    for k in 0..nh {
        let i = gates[GATE_I * nh + k];
        let f = gates[GATE_F * nh + k];
        let o = gates[GATE_O * nh + k];
        let g = gates[GATE_C * nh + k];
        c[k] = f * c_prev[k] + i * g;
        tanh_c[k] = c[k].tanh();
        h[k] = o * tanh_c[k];
    }
    StepCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        gates,
        c,
        tanh_c,
        h,
    }
}

/// Accumulates parameter gradients of one step and returns
/// `(dh_prev, dc_prev, dx)`.
pub(crate) fn backward_step(
    p: &LstmParams,
    cache: &StepCache,
    dh: &[f64],
    dc: &[f64],
    grad: &mut LstmParams,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (ni, nh) = (p.input_size, p.hidden_size);
    let mut da = vec![0.0; 4 * nh];
    let mut dc_prev = vec![0.0; nh];
    for k in 0..nh {
        let i = cache.gates[GATE_I * nh + k];
        let f = cache.gates[GATE_F * nh + k];
        let o = cache.gates[GATE_O * nh + k];
        let g = cache.gates[GATE_C * nh + k];
        let t = cache.tanh_c[k];
        let d_o = dh[k] * t;
        let dct = dc[k] + dh[k] * o * (1.0 - t * t);
        da[GATE_I * nh + k] = dct * g * i * (1.0 - i);
        da[GATE_F * nh + k] = dct * cache.c_prev[k] * f * (1.0 - f);
        da[GATE_O * nh + k] = d_o * o * (1.0 - o);
        da[GATE_C * nh + k] = dct * i * (1.0 - g * g);
        dc_prev[k] = dct * f;
    }
    let mut dx = vec![0.0; ni];
    let mut dh_prev = vec![0.0; nh];
    for (r, &d) in da.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        grad.b[r] += d;
        let w_row = r * ni;
        for j in 0..ni {
            grad.w[w_row + j] += d * cache.x[j];
            dx[j] += d * p.w[w_row + j];
        }
        let u_row = r * nh;
        for j in 0..nh {
            grad.u[u_row + j] += d * cache.h_prev[j];
            dh_prev[j] += d * p.u[u_row + j];
        }
    }
    (dh_prev, dc_prev, dx)
}

/// One LSTM step: returns `(h_t, c_t)`.
pub fn lstm_cell_step(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    p: &LstmParams,
) -> Result<(Vec<f64>, Vec<f64>), ForecastError> {
    p.check()?;
    if x.len() != p.input_size || h_prev.len() != p.hidden_size || c_prev.len() != p.hidden_size {
        return Err(ForecastError::ShapeMismatch(format!(
            "step inputs x={}, h={}, c={} for input {} hidden {}",
            x.len(),
            h_prev.len(),
            c_prev.len(),
            p.input_size,
            p.hidden_size
        )));
    }
    let cache = forward_step(p, x, h_prev, c_prev);
    Ok((cache.h, cache.c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_params_zero_state() {
        let p = LstmParams::zeros(2, 3);
        let (h, c) = lstm_cell_step(&[5.0, -1.0], &[0.0; 3], &[0.0; 3], &p).unwrap();
        assert_eq!(h, vec![0.0; 3]);
        assert_eq!(c, vec![0.0; 3]);
    }

    #[test]
    fn zero_params_unit_cell() {
        let p = LstmParams::zeros(1, 1);
        let (h, c) = lstm_cell_step(&[0.7], &[0.0], &[1.0], &p).unwrap();
        assert!((c[0] - 0.5).abs() < 1e-15);
        assert!((h[0] - 0.5 * 0.5f64.tanh()).abs() < 1e-15);
        assert!((h[0] - 0.2311).abs() < 1e-4);
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        for (bias, tol) in [(20.0, 1e-8), (30.0, 1e-6)] {
            let mut p = LstmParams::zeros(1, 2);
            p.b[GATE_F * 2] = bias;
            p.b[GATE_F * 2 + 1] = bias;
            let (_, c) = lstm_cell_step(&[1.0], &[0.0, 0.0], &[0.8, -0.3], &p).unwrap();
            assert!((c[0] - 0.8).abs() < tol);
            assert!((c[1] + 0.3).abs() < tol);
        }
    }

    #[test]
    fn shape_mismatch() {
        let p = LstmParams::zeros(2, 3);
        assert!(lstm_cell_step(&[1.0], &[0.0; 3], &[0.0; 3], &p).is_err());
    }

    proptest! {
        #[test]
        fn hidden_state_is_bounded(seed in 0u64..1000, x in -50.0f64..50.0, c0 in -100.0f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut p = LstmParams::random(1, 4, &mut rng);
            p.w.iter_mut().for_each(|v| *v *= 10.0);
            let (h, _) = lstm_cell_step(&[x], &[0.9; 4], &[c0; 4], &p).unwrap();
            // tanh and the output gate saturate to exactly 1.0 in floating point
            prop_assert!(h.iter().all(|v| v.abs() <= 1.0));
        }
    }
}
