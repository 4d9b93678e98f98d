//! LSTM and bidirectional LSTM regressors trained with backpropagation
//! through time and Adam.
//!
//! Cell update, with σ the logistic function:
//!
//! ```text
//! i_t = σ(W_i x_t + U_i h_{t−1} + b_i)
//! f_t = σ(W_f x_t + U_f h_{t−1} + b_f)
//! o_t = σ(W_o x_t + U_o h_{t−1} + b_o)
//! C̃_t = tanh(W_C x_t + U_C h_{t−1} + b_C)
//! C_t = f_t ⊙ C_{t−1} + i_t ⊙ C̃_t
//! h_t = o_t ⊙ tanh(C_t)
//! ```
//!
//! The four gates are stacked into one `4H × D` input matrix, one `4H × H`
//! recurrent matrix and one `4H` bias, in the order i, f, o, C.
//! The linear head reads the final state of each direction: `h→_T`, and for
//! the bidirectional model also `h←_1`, the backward pass's last state.

use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::features::FeatureMatrix;

const GATES: usize = 4;
const GATE_I: usize = 0;
const GATE_F: usize = 1;
const GATE_O: usize = 2;
const GATE_C: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Bidirectional,
}

/// A flat row-major array with its shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    fn uniform(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut t = Tensor::zeros(shape);
        for v in &mut t.data {
            *v = rng.gen_range(-bound..=bound);
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellWeights {
    /// `4H × D`.
    pub w: Tensor,
    /// `4H × H`.
    pub u: Tensor,
    /// `4H`.
    pub b: Tensor,
}

impl CellWeights {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        CellWeights {
            w: Tensor::zeros(&[GATES * hidden, input]),
            u: Tensor::zeros(&[GATES * hidden, hidden]),
            b: Tensor::zeros(&[GATES * hidden]),
        }
    }

    fn init(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut cell = CellWeights {
            w: Tensor::uniform(&[GATES * hidden, input], bound, rng),
            u: Tensor::uniform(&[GATES * hidden, hidden], bound, rng),
            b: Tensor::uniform(&[GATES * hidden], bound, rng),
        };
        for k in 0..hidden {
            cell.b.data[GATE_F * hidden + k] += 1.0;
        }
        cell
    }

    fn for_each_mut(&mut self, f: &mut impl FnMut(&mut f64)) {
        self.w.data.iter_mut().chain(&mut self.u.data).chain(&mut self.b.data).for_each(f);
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.w.data.iter().chain(&self.u.data).chain(&self.b.data)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmWeights {
    pub input_size: usize,
    pub hidden: usize,
    pub direction: Direction,
    pub forward: CellWeights,
    pub backward: Option<CellWeights>,
    /// `H` or `2H` wide.
    pub head_w: Tensor,
    pub head_b: f64,
}

impl LstmWeights {
    pub fn zeros(input_size: usize, hidden: usize, direction: Direction) -> Self {
        let width = match direction {
            Direction::Forward => hidden,
            Direction::Bidirectional => 2 * hidden,
        };
        LstmWeights {
            input_size,
            hidden,
            direction,
            forward: CellWeights::zeros(input_size, hidden),
            backward: (direction == Direction::Bidirectional).then(|| CellWeights::zeros(input_size, hidden)),
            head_w: Tensor::zeros(&[width]),
            head_b: 0.0,
        }
    }

    /// Uniform(±1/√H) gates, forget bias shifted by +1, zero head.
    pub fn init(input_size: usize, hidden: usize, direction: Direction, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = LstmWeights::zeros(input_size, hidden, direction);
        w.forward = CellWeights::init(input_size, hidden, &mut rng);
        if direction == Direction::Bidirectional {
            w.backward = Some(CellWeights::init(input_size, hidden, &mut rng));
        }
        w
    }

    pub fn n_params(&self) -> usize {
        self.flatten().len()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.forward.values().copied().collect();
        if let Some(b) = &self.backward {
            out.extend(b.values());
        }
        out.extend(&self.head_w.data);
        out.push(self.head_b);
        out
    }

    pub fn unflatten(&mut self, flat: &[f64]) {
        let mut it = flat.iter();
        let mut take = |v: &mut f64| *v = *it.next().expect("flat parameter vector too short");
        self.forward.for_each_mut(&mut take);
        if let Some(b) = &mut self.backward {
            b.for_each_mut(&mut take);
        }
        self.head_w.data.iter_mut().for_each(&mut take);
        take(&mut self.head_b);
    }

    fn check(&self) -> Result<(), ModelError> {
        let (d, h) = (self.input_size, self.hidden);
        let cell_ok = |c: &CellWeights| {
            c.w.shape == [GATES * h, d]
                && c.u.shape == [GATES * h, h]
                && c.b.shape == [GATES * h]
                && c.w.data.len() == GATES * h * d
                && c.u.data.len() == GATES * h * h
                && c.b.data.len() == GATES * h
        };
        let width = if self.backward.is_some() { 2 * h } else { h };
        let ok = cell_ok(&self.forward)
            && self.backward.as_ref().map_or(true, cell_ok)
            && (self.backward.is_some() == (self.direction == Direction::Bidirectional))
            && self.head_w.data.len() == width;
        if ok {
            Ok(())
        } else {
            Err(ModelError::DimensionMismatch("LSTM weight shapes disagree with D and H".into()))
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activations of one direction over a sequence.
#[derive(Debug, Clone)]
struct CellTrace {
    /// `h[0]` is the zero initial state; `h[s + 1]` follows step `s`.
    h: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    /// Activated gates per step, stacked i, f, o, C̃.
    gates: Vec<Vec<f64>>,
}

fn run_cell(cell: &CellWeights, hidden: usize, steps: &[&[f64]]) -> CellTrace {
    let d = cell.w.shape[1];
    let mut trace = CellTrace {
        h: vec![vec![0.0; hidden]],
        c: vec![vec![0.0; hidden]],
        gates: Vec::with_capacity(steps.len()),
    };
    let mut z = vec![0.0; GATES * hidden];
    for x in steps {
        let h_prev = trace.h.last().expect("initial state");
        for (r, zr) in z.iter_mut().enumerate() {
            let wrow = &cell.w.data[r * d..(r + 1) * d];
            let urow = &cell.u.data[r * hidden..(r + 1) * hidden];
            let mut s = cell.b.data[r];
            for (a, b) in wrow.iter().zip(x.iter()) {
                s += a * b;
            }
            for (a, b) in urow.iter().zip(h_prev) {
                s += a * b;
            }
            *zr = s;
        }
        let mut gates = vec![0.0; GATES * hidden];
        let mut c = vec![0.0; hidden];
        let mut h = vec![0.0; hidden];
        let c_prev = trace.c.last().expect("initial state");
        for k in 0..hidden {
            let i = sigmoid(z[GATE_I * hidden + k]);
            let f = sigmoid(z[GATE_F * hidden + k]);
            let o = sigmoid(z[GATE_O * hidden + k]);
            let g = z[GATE_C * hidden + k].tanh();
            c[k] = f * c_prev[k] + i * g;
            h[k] = o * c[k].tanh();
            gates[GATE_I * hidden + k] = i;
            gates[GATE_F * hidden + k] = f;
            gates[GATE_O * hidden + k] = o;
            gates[GATE_C * hidden + k] = g;
        }
        trace.gates.push(gates);
        trace.c.push(c);
        trace.h.push(h);
    }
    trace
}

/// Accumulates parameter gradients for one direction given the loss
/// gradient on its final hidden state.
fn cell_backward(cell: &CellWeights, hidden: usize, steps: &[&[f64]], trace: &CellTrace, dh_final: &[f64], grad: &mut CellWeights) {
    let d = cell.w.shape[1];
    let mut dh = dh_final.to_vec();
    let mut dc = vec![0.0; hidden];
    let mut dz = vec![0.0; GATES * hidden];
    for s in (0..steps.len()).rev() {
        let gates = &trace.gates[s];
        let c_prev = &trace.c[s];
        let c_cur = &trace.c[s + 1];
        let h_prev = &trace.h[s];
        for k in 0..hidden {
            let i = gates[GATE_I * hidden + k];
            let f = gates[GATE_F * hidden + k];
            let o = gates[GATE_O * hidden + k];
            let g = gates[GATE_C * hidden + k];
            let tc = c_cur[k].tanh();
            dz[GATE_O * hidden + k] = dh[k] * tc * o * (1.0 - o);
            dc[k] += dh[k] * o * (1.0 - tc * tc);
            dz[GATE_I * hidden + k] = dc[k] * g * i * (1.0 - i);
            dz[GATE_C * hidden + k] = dc[k] * i * (1.0 - g * g);
            dz[GATE_F * hidden + k] = dc[k] * c_prev[k] * f * (1.0 - f);
        }
        let x = steps[s];
        let mut dh_prev = vec![0.0; hidden];
        for (r, &dzr) in dz.iter().enumerate() {
            if dzr == 0.0 {
                continue;
            }
            let gw = &mut grad.w.data[r * d..(r + 1) * d];
            for (g, xv) in gw.iter_mut().zip(x.iter()) {
                *g += dzr * xv;
            }
            let urow = &cell.u.data[r * hidden..(r + 1) * hidden];
            let gu = &mut grad.u.data[r * hidden..(r + 1) * hidden];
            for j in 0..hidden {
                gu[j] += dzr * h_prev[j];
                dh_prev[j] += urow[j] * dzr;
            }
            grad.b.data[r] += dzr;
        }
        for k in 0..hidden {
            dc[k] *= gates[GATE_F * hidden + k];
        }
        dh = dh_prev;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmOutput {
    /// Per step `h→_t`, concatenated with `h←_t` when bidirectional.
    pub hidden: Vec<Vec<f64>>,
    pub forward: Vec<Vec<f64>>,
    /// Backward states indexed by original position.
    pub backward: Option<Vec<Vec<f64>>>,
    pub cells: Vec<Vec<f64>>,
    pub prediction: f64,
}

struct Traces {
    fwd: CellTrace,
    bwd: Option<CellTrace>,
    head_input: Vec<f64>,
    prediction: f64,
}

fn forward_traces(w: &LstmWeights, steps: &[&[f64]]) -> Traces {
    let fwd = run_cell(&w.forward, w.hidden, steps);
    let bwd = w.backward.as_ref().map(|cell| {
        let rev: Vec<&[f64]> = steps.iter().rev().copied().collect();
        run_cell(cell, w.hidden, &rev)
    });
    let mut head_input = fwd.h.last().expect("state").clone();
    if let Some(b) = &bwd {
        head_input.extend(b.h.last().expect("state"));
    }
    let prediction = w.head_b + head_input.iter().zip(&w.head_w.data).map(|(a, b)| a * b).sum::<f64>();
    Traces { fwd, bwd, head_input, prediction }
}

pub fn lstm_forward(w: &LstmWeights, sequence: &[Vec<f64>]) -> Result<LstmOutput, ModelError> {
    w.check()?;
    if sequence.is_empty() {
        return Err(ModelError::DimensionMismatch("sequence must have at least one step".into()));
    }
    if let Some(bad) = sequence.iter().find(|x| x.len() != w.input_size) {
        return Err(ModelError::DimensionMismatch(format!(
            "step has {} inputs, model expects {}",
            bad.len(),
            w.input_size
        )));
    }
    let steps: Vec<&[f64]> = sequence.iter().map(|v| v.as_slice()).collect();
    let t = steps.len();
    let tr = forward_traces(w, &steps);
    let forward: Vec<Vec<f64>> = tr.fwd.h[1..].to_vec();
    let backward: Option<Vec<Vec<f64>>> = tr.bwd.as_ref().map(|b| (0..t).map(|pos| b.h[t - pos].clone()).collect());
    let hidden = (0..t)
        .map(|pos| {
            let mut v = forward[pos].clone();
            if let Some(b) = &backward {
                v.extend(&b[pos]);
            }
            v
        })
        .collect();
    Ok(LstmOutput { hidden, forward, backward, cells: tr.fwd.c[1..].to_vec(), prediction: tr.prediction })
}

/// Squared error of each sequence, averaged, and its gradient in the same
/// flat layout as [`LstmWeights::flatten`].
pub fn loss_and_gradient(w: &LstmWeights, batch: &[(Vec<&[f64]>, f64)]) -> (f64, Vec<f64>) {
    let mut grad = LstmWeights::zeros(w.input_size, w.hidden, w.direction);
    let scale = 1.0 / batch.len() as f64;
    let h = w.hidden;
    let mut loss = 0.0;
    for (steps, target) in batch {
        let tr = forward_traces(w, steps);
        let err = tr.prediction - target;
        loss += err * err * scale;
        let dy = 2.0 * err * scale;
        for (g, a) in grad.head_w.data.iter_mut().zip(&tr.head_input) {
            *g += dy * a;
        }
        grad.head_b += dy;
        let dh_fwd: Vec<f64> = w.head_w.data[..h].iter().map(|v| v * dy).collect();
        cell_backward(&w.forward, h, steps, &tr.fwd, &dh_fwd, &mut grad.forward);
        if let (Some(cell), Some(trace), Some(g)) = (&w.backward, &tr.bwd, &mut grad.backward) {
            let rev: Vec<&[f64]> = steps.iter().rev().copied().collect();
            let dh_bwd: Vec<f64> = w.head_w.data[h..].iter().map(|v| v * dy).collect();
            cell_backward(cell, h, &rev, trace, &dh_bwd, g);
        }
    }
    (loss, grad.flatten())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LstmParams {
    pub hidden: usize,
    /// Sequence length in hours.
    pub window: usize,
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub direction: Direction,
}

impl Default for LstmParams {
    fn default() -> Self {
        LstmParams {
            hidden: 32,
            window: 168,
            epochs: 20,
            batch: 64,
            learning_rate: 1e-3,
            seed: 0,
            direction: Direction::Forward,
        }
    }
}

/// Trained recurrent model with its input and target scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmModel {
    pub weights: LstmWeights,
    pub window: usize,
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
    /// Mean squared error (standardized target) per epoch.
    pub loss_history: Vec<f64>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    // Constant columns are only centred.
    (mean, if std > 0.0 && std.is_finite() { std } else { 1.0 })
}

impl LstmModel {
    fn standardize(&self, x: &FeatureMatrix) -> Vec<Vec<f64>> {
        (0..x.n_rows())
            .map(|r| {
                (0..x.n_features())
                    .map(|j| (x.columns[j][r] - self.input_mean[j]) / self.input_std[j])
                    .collect()
            })
            .collect()
    }

    /// One prediction per row from the `window` rows ending at it. Rows
    /// without a full history repeat the matrix's first row as padding.
    pub fn predict_matrix(&self, x: &FeatureMatrix) -> Vec<f64> {
        let rows = self.standardize(x);
        (0..rows.len())
            .into_par_iter()
            .map(|t| {
                let steps = window_steps(&rows, t, self.window);
                forward_traces(&self.weights, &steps).prediction * self.target_std + self.target_mean
            })
            .collect()
    }
}

fn window_steps(rows: &[Vec<f64>], end: usize, window: usize) -> Vec<&[f64]> {
    (0..window).map(|k| rows[(end + k + 1).saturating_sub(window)].as_slice()).collect()
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0, lr }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

pub fn fit_lstm(x: &FeatureMatrix, params: &LstmParams) -> Result<LstmModel, ModelError> {
    if params.hidden == 0 || params.window == 0 || params.batch == 0 || params.epochs == 0 {
        return Err(ModelError::InvalidParams("hidden, window, batch and epochs must be positive".into()));
    }
    if !(params.learning_rate > 0.0) {
        return Err(ModelError::InvalidParams(format!("learning_rate {} must be positive", params.learning_rate)));
    }
    let n = x.n_rows();
    if n == 0 {
        return Err(ModelError::EmptyMatrix);
    }
    if n < params.window {
        return Err(ModelError::TooFewRows { window: params.window, rows: n });
    }
    let (input_mean, input_std): (Vec<f64>, Vec<f64>) = x.columns.iter().map(|c| mean_std(c)).unzip();
    let (target_mean, target_std) = mean_std(&x.target);
    let mut model = LstmModel {
        weights: LstmWeights::init(x.n_features(), params.hidden, params.direction, params.seed),
        window: params.window,
        input_mean,
        input_std,
        target_mean,
        target_std,
        loss_history: Vec::with_capacity(params.epochs),
    };
    let rows = model.standardize(x);
    let targets: Vec<f64> = x.target.iter().map(|y| (y - target_mean) / target_std).collect();
    let mut ends: Vec<usize> = (params.window - 1..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed.wrapping_add(1));
    let mut flat = model.weights.flatten();
    let mut adam = Adam::new(flat.len(), params.learning_rate);

    for epoch in 0..params.epochs {
        ends.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_idx, chunk) in ends.chunks(params.batch).enumerate() {
            let batch: Vec<(Vec<&[f64]>, f64)> =
                chunk.iter().map(|&t| (window_steps(&rows, t, params.window), targets[t])).collect();
            let (loss, grad) = loss_and_gradient(&model.weights, &batch);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(ModelError::NonfiniteLoss { epoch, batch: batch_idx });
            }
            epoch_loss += loss * chunk.len() as f64;
            adam.step(&mut flat, &grad);
            model.weights.unflatten(&flat);
        }
        model.loss_history.push(epoch_loss / ends.len() as f64);
    }
    Ok(model)
}
