//! Single-layer GRU with a linear head, trained by backpropagation through
//! time with RMSProp on one-step-ahead mean squared error.
//!
//!   z_t = σ(W_z x_t + U_z h_{t-1} + b_z)
//!   r_t = σ(W_r x_t + U_r h_{t-1} + b_r)
//!   h̃_t = tanh(W_h x_t + U_h (r_t ⊙ h_{t-1}) + b_h)
//!   h_t = (1 − z_t) ⊙ h_{t-1} + z_t ⊙ h̃_t
//!   ŷ_t = V h_t + b_o          (prediction of x_{t+1})
//!
//! Inputs are robust-scaled per series (median / IQR) before training.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FittedModel, ForecastSpec, ModelInfo, Strategy, StrategyKind};
use crate::error::{Error, Result};
use crate::series::RobustScaleParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GruOptions {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    /// Sequences per RMSProp step.
    pub batch_size: usize,
    /// Stop when the best epoch loss improved by less than `min_improvement`
    /// over the last `patience` epochs.
    pub patience: usize,
    pub min_improvement: f64,
}

impl Default for GruOptions {
    fn default() -> Self {
        GruOptions {
            hidden: 32,
            epochs: 200,
            learning_rate: 1e-3,
            decay: 0.9,
            epsilon: 1e-8,
            batch_size: 4,
            patience: 10,
            min_improvement: 1e-6,
        }
    }
}

/// One training example: `inputs[t]` and `targets[t]` are k-vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

/// All weights in one flat buffer so optimizers and gradient checks can
/// treat them uniformly.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    data: Vec<f64>,
}

#[derive(Clone, Copy)]
struct Layout {
    k: usize,
    h: usize,
}

// Block order: W_z W_r W_h (h×k), U_z U_r U_h (h×h), b_z b_r b_h (h), V (k×h), b_o (k).
impl Layout {
    fn w(&self, gate: usize) -> usize {
        gate * self.h * self.k
    }
    fn u(&self, gate: usize) -> usize {
        3 * self.h * self.k + gate * self.h * self.h
    }
    fn b(&self, gate: usize) -> usize {
        3 * self.h * self.k + 3 * self.h * self.h + gate * self.h
    }
    fn v(&self) -> usize {
        3 * self.h * self.k + 3 * self.h * self.h + 3 * self.h
    }
    fn bo(&self) -> usize {
        self.v() + self.k * self.h
    }
    fn len(&self) -> usize {
        self.bo() + self.k
    }
}

const Z: usize = 0;
const R: usize = 1;
const H: usize = 2;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// out += M · v, M rows×cols row-major.
fn matvec_add(m: &[f64], rows: usize, cols: usize, v: &[f64], out: &mut [f64]) {
    for i in 0..rows {
        let row = &m[i * cols..(i + 1) * cols];
        out[i] += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// out += Mᵀ · v
fn matvec_t_add(m: &[f64], rows: usize, cols: usize, v: &[f64], out: &mut [f64]) {
    for i in 0..rows {
        let vi = v[i];
        if vi == 0.0 {
            continue;
        }
        let row = &m[i * cols..(i + 1) * cols];
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * vi;
        }
    }
}

/// G += a · bᵀ
fn outer_add(g: &mut [f64], a: &[f64], b: &[f64]) {
    let cols = b.len();
    for (i, ai) in a.iter().enumerate() {
        if *ai == 0.0 {
            continue;
        }
        let row = &mut g[i * cols..(i + 1) * cols];
        for (r, bj) in row.iter_mut().zip(b) {
            *r += ai * bj;
        }
    }
}

struct StepCache {
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    h_tilde: Vec<f64>,
    h: Vec<f64>,
}

impl GruParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let len = Layout { k: input_dim, h: hidden_dim }.len();
        GruParams {
            input_dim,
            hidden_dim,
            data: vec![0.0; len],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(input_dim, hidden_dim);
        let l = p.layout();
        let (k, h) = (input_dim, hidden_dim);
        let mut fill = |from: usize, count: usize, fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in &mut p.data[from..from + count] {
                *v = rng.random_range(-limit..limit);
            }
        };
        for g in 0..3 {
            fill(l.w(g), h * k, k, h);
            fill(l.u(g), h * h, h, h);
        }
        fill(l.v(), k * h, h, k);
        p
    }

    fn layout(&self) -> Layout {
        Layout {
            k: self.input_dim,
            h: self.hidden_dim,
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Output bias b_o.
    pub fn output_bias_mut(&mut self) -> &mut [f64] {
        let l = self.layout();
        &mut self.data[l.bo()..l.bo() + l.k]
    }

    fn step(&self, x: &[f64], h_prev: &[f64]) -> StepCache {
        let l = self.layout();
        let (k, h) = (l.k, l.h);
        let d = &self.data;
        let gate = |g: usize, hin: &[f64]| {
            let mut a = d[l.b(g)..l.b(g) + h].to_vec();
            matvec_add(&d[l.w(g)..l.w(g) + h * k], h, k, x, &mut a);
            matvec_add(&d[l.u(g)..l.u(g) + h * h], h, h, hin, &mut a);
            a
        };
        let z: Vec<f64> = gate(Z, h_prev).into_iter().map(sigmoid).collect();
        let r: Vec<f64> = gate(R, h_prev).into_iter().map(sigmoid).collect();
        let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
        let h_tilde: Vec<f64> = gate(H, &rh).into_iter().map(f64::tanh).collect();
        let h_new: Vec<f64> = (0..h).map(|i| (1.0 - z[i]) * h_prev[i] + z[i] * h_tilde[i]).collect();
        StepCache {
            h_prev: h_prev.to_vec(),
            z,
            r,
            h_tilde,
            h: h_new,
        }
    }

    fn output(&self, h: &[f64]) -> Vec<f64> {
        let l = self.layout();
        let mut y = self.data[l.bo()..l.bo() + l.k].to_vec();
        matvec_add(&self.data[l.v()..l.v() + l.k * l.h], l.k, l.h, h, &mut y);
        y
    }

    /// Runs the sequence from h_0 = 0 and returns the per-step outputs.
    pub fn run(&self, inputs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut h = vec![0.0; self.hidden_dim];
        inputs
            .iter()
            .map(|x| {
                h = self.step(x, &h).h;
                self.output(&h)
            })
            .collect()
    }

    /// Mean squared error averaged over steps and outputs of one sequence.
    pub fn sequence_loss(&self, seq: &Sequence) -> f64 {
        let out = self.run(&seq.inputs);
        let count = (seq.targets.len() * self.input_dim) as f64;
        out.iter()
            .zip(&seq.targets)
            .flat_map(|(y, t)| y.iter().zip(t).map(|(a, b)| (a - b) * (a - b)))
            .sum::<f64>()
            / count
    }

    /// Mean sequence loss over `batch` and its exact gradient (BPTT).
    pub fn loss_and_gradient(&self, batch: &[Sequence]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.data.len()];
        let mut total = 0.0;
        for seq in batch {
            total += self.accumulate(seq, &mut grad);
        }
        let m = batch.len().max(1) as f64;
        for g in &mut grad {
            *g /= m;
        }
        (total / m, grad)
    }

    fn accumulate(&self, seq: &Sequence, grad: &mut [f64]) -> f64 {
        let l = self.layout();
        let (k, h) = (l.k, l.h);
        let d = &self.data;
        let steps = seq.inputs.len();
        let scale = 1.0 / (steps * k) as f64;

        let mut caches = Vec::with_capacity(steps);
        let mut hs = vec![0.0; h];
        let mut loss = 0.0;
        let mut dys = Vec::with_capacity(steps);
        for (x, target) in seq.inputs.iter().zip(&seq.targets) {
            let c = self.step(x, &hs);
            let y = self.output(&c.h);
            let dy: Vec<f64> = y.iter().zip(target).map(|(a, b)| 2.0 * (a - b) * scale).collect();
            loss += y.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() * scale;
            hs = c.h.clone();
            caches.push(c);
            dys.push(dy);
        }

        let mut dh_next = vec![0.0; h];
        for t in (0..steps).rev() {
            let c = &caches[t];
            let x = &seq.inputs[t];
            let dy = &dys[t];
            outer_add(&mut grad[l.v()..l.v() + k * h], dy, &c.h);
            for (g, v) in grad[l.bo()..l.bo() + k].iter_mut().zip(dy) {
                *g += v;
            }
            let mut dh = dh_next.clone();
            matvec_t_add(&d[l.v()..l.v() + k * h], k, h, dy, &mut dh);

            let da_z: Vec<f64> = (0..h)
                .map(|i| dh[i] * (c.h_tilde[i] - c.h_prev[i]) * c.z[i] * (1.0 - c.z[i]))
                .collect();
            let da_h: Vec<f64> = (0..h)
                .map(|i| dh[i] * c.z[i] * (1.0 - c.h_tilde[i] * c.h_tilde[i]))
                .collect();
            let rh: Vec<f64> = (0..h).map(|i| c.r[i] * c.h_prev[i]).collect();
            let mut drh = vec![0.0; h];
            matvec_t_add(&d[l.u(H)..l.u(H) + h * h], h, h, &da_h, &mut drh);
            let da_r: Vec<f64> = (0..h)
                .map(|i| drh[i] * c.h_prev[i] * c.r[i] * (1.0 - c.r[i]))
                .collect();

            for (g, da) in [(Z, &da_z), (R, &da_r), (H, &da_h)] {
                outer_add(&mut grad[l.w(g)..l.w(g) + h * k], da, x);
                let hin = if g == H { &rh } else { &c.h_prev };
                outer_add(&mut grad[l.u(g)..l.u(g) + h * h], da, hin);
                for (gb, v) in grad[l.b(g)..l.b(g) + h].iter_mut().zip(da.iter()) {
                    *gb += v;
                }
            }

            let mut dprev: Vec<f64> = (0..h).map(|i| dh[i] * (1.0 - c.z[i]) + drh[i] * c.r[i]).collect();
            matvec_t_add(&d[l.u(Z)..l.u(Z) + h * h], h, h, &da_z, &mut dprev);
            matvec_t_add(&d[l.u(R)..l.u(R) + h * h], h, h, &da_r, &mut dprev);
            dh_next = dprev;
        }
        loss
    }
}

struct RmsProp {
    cache: Vec<f64>,
    lr: f64,
    decay: f64,
    eps: f64,
}

impl RmsProp {
    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        for ((p, g), c) in params.iter_mut().zip(grad).zip(self.cache.iter_mut()) {
            *c = self.decay * *c + (1.0 - self.decay) * g * g;
            *p -= self.lr * g / (c.sqrt() + self.eps);
        }
    }
}

/// Training record kept with the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruTraining {
    pub loss_curve: Vec<f64>,
    pub epochs_run: usize,
    pub sequence_len: usize,
    pub n_sequences: usize,
}

#[derive(Debug, Clone)]
pub struct GruModel {
    pub params: GruParams,
    pub scaling: Vec<RobustScaleParams>,
    pub training: GruTraining,
    /// Normalized context fed before the first forecast step.
    context: Vec<Vec<f64>>,
}

/// Normalized one-step-ahead windows over the history.
fn build_sequences(z: &[Vec<f64>], seq_len: usize) -> Vec<Sequence> {
    let n = z[0].len();
    let row = |t: usize| -> Vec<f64> { z.iter().map(|s| s[t]).collect() };
    (0..n - seq_len)
        .map(|i| Sequence {
            inputs: (i..i + seq_len).map(row).collect(),
            targets: (i + 1..i + seq_len + 1).map(row).collect(),
        })
        .collect()
}

/// Trains on the whole history. Input sequences are `train_days` long, or
/// one shorter when the history has no room for a target beyond them.
pub fn fit_gru(history: &[&[f64]], train_days: usize, opts: &GruOptions, seed: u64) -> Result<GruModel> {
    let k = history.len();
    if k == 0 {
        return Err(Error::insufficient("fit_gru_forecast", "no series"));
    }
    let n = history[0].len();
    if history.iter().any(|s| s.len() != n) {
        return Err(Error::LengthMismatch {
            op: "fit_gru_forecast",
            left: n,
            right: history.iter().map(|s| s.len()).find(|&l| l != n).unwrap_or(n),
        });
    }
    if n < train_days || n < 2 {
        return Err(Error::insufficient(
            "fit_gru_forecast",
            format!("{n} days of history for train_days {train_days}"),
        ));
    }
    let seq_len = train_days.min(n - 1).max(1);
    let scaling: Vec<RobustScaleParams> = history.iter().map(|s| RobustScaleParams::from_values(s)).collect();
    let z: Vec<Vec<f64>> = history
        .iter()
        .zip(&scaling)
        .map(|(s, p)| s.iter().map(|v| p.normalize(*v)).collect())
        .collect();
    let sequences = build_sequences(&z, seq_len);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = GruParams::init(k, opts.hidden.max(1), &mut rng);
    let mut opt = RmsProp {
        cache: vec![0.0; params.data.len()],
        lr: opts.learning_rate,
        decay: opts.decay,
        eps: opts.epsilon,
    };
    let batch = opts.batch_size.max(1);
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    let mut curve: Vec<f64> = Vec::with_capacity(opts.epochs);
    let mut best_so_far: Vec<f64> = Vec::with_capacity(opts.epochs);

    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let seqs: Vec<Sequence> = chunk.iter().map(|&i| sequences[i].clone()).collect();
            let (loss, grad) = params.loss_and_gradient(&seqs);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite {
                    op: "fit_gru_forecast",
                    reason: format!(
                        "epoch {epoch}: loss {loss}; last finite epoch loss {:?}",
                        curve.last()
                    ),
                });
            }
            epoch_loss += loss * chunk.len() as f64;
            opt.step(&mut params.data, &grad);
        }
        epoch_loss /= sequences.len() as f64;
        curve.push(epoch_loss);
        let best = best_so_far.last().map_or(epoch_loss, |b: &f64| b.min(epoch_loss));
        best_so_far.push(best);
        if epoch >= opts.patience && best_so_far[epoch - opts.patience] - best < opts.min_improvement {
            break;
        }
    }

    let context: Vec<Vec<f64>> = (n - seq_len..n).map(|t| z.iter().map(|s| s[t]).collect()).collect();
    Ok(GruModel {
        params,
        scaling,
        training: GruTraining {
            epochs_run: curve.len(),
            loss_curve: curve,
            sequence_len: seq_len,
            n_sequences: sequences.len(),
        },
        context,
    })
}

impl GruModel {
    /// Recursive multi-step forecast in original units, one Vec per series.
    pub fn forecast(&self, horizon: usize) -> Vec<Vec<f64>> {
        let k = self.params.input_dim;
        let mut h = vec![0.0; self.params.hidden_dim];
        let mut y = vec![0.0; k];
        for x in &self.context {
            h = self.params.step(x, &h).h;
            y = self.params.output(&h);
        }
        let mut out = vec![Vec::with_capacity(horizon); k];
        for step in 0..horizon {
            for i in 0..k {
                out[i].push(self.scaling[i].denormalize(y[i]));
            }
            if step + 1 < horizon {
                h = self.params.step(&y, &h).h;
                y = self.params.output(&h);
            }
        }
        out
    }
}

pub(super) struct GruStrategy;

impl FittedModel for GruModel {
    fn predict(&self, horizon: usize) -> Result<Vec<Vec<f64>>> {
        Ok(self.forecast(horizon))
    }

    fn describe(&self, _names: &[String]) -> Vec<ModelInfo> {
        vec![ModelInfo::Gru {
            epochs_run: self.training.epochs_run,
            final_loss: self.training.loss_curve.last().copied().unwrap_or(f64::NAN),
            loss_curve: self.training.loss_curve.clone(),
        }]
    }
}

impl Strategy for GruStrategy {
    fn kind(&self) -> StrategyKind {
        StrategyKind::Gru
    }

    fn fit(&self, history: &[&[f64]], spec: &ForecastSpec, seed: u64) -> Result<Box<dyn FittedModel>> {
        Ok(Box::new(fit_gru(history, spec.train_days, &spec.gru, seed)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_parameters_predict_output_bias() {
        let mut p = GruParams::zeros(3, 4);
        p.output_bias_mut().copy_from_slice(&[0.5, -1.0, 2.0]);
        let inputs = vec![vec![1.0, 2.0, 3.0]; 5];
        for y in p.run(&inputs) {
            assert_eq!(y, vec![0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = GruParams::init(3, 5, &mut rng);
        for v in params.as_mut_slice() {
            *v += rng.random_range(-0.1..0.1);
        }
        let seq = Sequence {
            inputs: (0..6).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
            targets: (0..6).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
        };
        let (_, grad) = params.loss_and_gradient(std::slice::from_ref(&seq));
        let step = 1e-5;
        for i in 0..params.as_slice().len() {
            let mut plus = params.clone();
            plus.as_mut_slice()[i] += step;
            let mut minus = params.clone();
            minus.as_mut_slice()[i] -= step;
            let fd = (plus.sequence_loss(&seq) - minus.sequence_loss(&seq)) / (2.0 * step);
            let denom = fd.abs().max(grad[i].abs()).max(1e-8);
            assert!((fd - grad[i]).abs() / denom < 1e-4 || (fd - grad[i]).abs() < 1e-10, "param {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let x: Vec<f64> = (0..40).map(|t| ((t % 7) as f64) + 10.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 30.0 - v).collect();
        let opts = GruOptions {
            hidden: 8,
            epochs: 40,
            ..Default::default()
        };
        let a = fit_gru(&[&x, &y], 7, &opts, 42).unwrap();
        let b = fit_gru(&[&x, &y], 7, &opts, 42).unwrap();
        assert_eq!(a.training.loss_curve, b.training.loss_curve);
        assert_eq!(a.forecast(7), b.forecast(7));
        let curve = &a.training.loss_curve;
        assert!(curve.last().unwrap() < &curve[0]);
    }

    #[test]
    fn short_history_uses_shorter_sequences() {
        let x: Vec<f64> = (0..7).map(f64::from).collect();
        let m = fit_gru(&[&x], 7, &GruOptions { epochs: 2, hidden: 4, ..Default::default() }, 1).unwrap();
        assert_eq!(m.training.sequence_len, 6);
        assert_eq!(m.training.n_sequences, 1);
        assert!(fit_gru(&[&x[..5]], 7, &GruOptions::default(), 1).is_err());
    }
}
